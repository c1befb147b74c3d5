//! Dense displacement fields and the warping algebra built on them.
//!
//! Flows use the backward convention: the value stored at output pixel `p`
//! is the offset at which the input is sampled, so `out(p) = in(p + flow(p))`.
//! Pixel `(x, y)` sits at the continuous coordinate `(x, y)`; sampling
//! positions are valid inside `[0, w-1] x [0, h-1]`.

use rayon::prelude::*;

use crate::error::{check_dims, Error, Result};
use crate::raster::{Image, Mask};
use crate::scalar::Real;

/// Per-pixel 2D displacement with a validity bit.
///
/// Invalid pixels always carry `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T> {
    width: usize,
    height: usize,
    dx: Vec<T>,
    dy: Vec<T>,
    valid: Vec<bool>,
}

impl<T: Real> FlowField<T> {
    /// All-zero flow, valid everywhere.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, T::zero(), T::zero())
    }

    pub fn constant(width: usize, height: usize, dx: T, dy: T) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            dx: vec![dx; n],
            dy: vec![dy; n],
            valid: vec![true; n],
        }
    }

    /// Flow with no valid pixel.
    pub fn invalid(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            dx: vec![T::zero(); n],
            dy: vec![T::zero(); n],
            valid: vec![false; n],
        }
    }

    /// Builds a flow from `f(x, y)`; `None` marks the pixel invalid.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<(T, T)>,
    ) -> Self {
        let mut out = Self::invalid(width, height);
        for y in 0..height {
            for x in 0..width {
                out.set(x, y, f(x, y));
            }
        }
        out
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (T, T) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// `Some(d)` at valid pixels.
    #[inline]
    pub fn lookup(&self, x: usize, y: usize) -> Option<(T, T)> {
        let i = y * self.width + x;
        self.valid[i].then(|| (self.dx[i], self.dy[i]))
    }

    /// Stores a displacement; non-finite values are rejected as invalid.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Option<(T, T)>) {
        let i = y * self.width + x;
        match v {
            Some((dx, dy)) if dx.is_finite() && dy.is_finite() => {
                self.dx[i] = dx;
                self.dy[i] = dy;
                self.valid[i] = true;
            }
            _ => {
                self.dx[i] = T::zero();
                self.dy[i] = T::zero();
                self.valid[i] = false;
            }
        }
    }

    pub fn valid_slice(&self) -> &[bool] {
        &self.valid
    }

    pub fn validity_mask(&self) -> Mask<T> {
        Mask::from_bools(self.width, self.height, &self.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Keeps only pixels where `mask >= 0.5`.
    pub fn restrict(&self, mask: &Mask<T>) -> Result<Self> {
        check_dims("restriction mask", self.dims(), mask.dims())?;
        let half = T::lit(0.5);
        Ok(Self::from_fn(self.width, self.height, |x, y| {
            if mask.get(x, y) >= half {
                self.lookup(x, y)
            } else {
                None
            }
        }))
    }

    /// Adds a constant to every valid displacement.
    pub fn offset(&self, dx: T, dy: T) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.lookup(x, y).map(|(u, v)| (u + dx, v + dy))
        })
    }

    pub fn cast<U: Real>(&self) -> FlowField<U> {
        FlowField {
            width: self.width,
            height: self.height,
            dx: self.dx.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            dy: self.dy.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            valid: self.valid.clone(),
        }
    }
}

/// Mean endpoint error over pixels valid in both flows and selected by
/// `region` (when given). `None` when no pixel qualifies.
pub fn mean_endpoint_error<T: Real>(
    estimate: &FlowField<T>,
    truth: &FlowField<T>,
    region: Option<&Mask<T>>,
) -> Result<Option<T>> {
    check_dims("endpoint error", truth.dims(), estimate.dims())?;
    if let Some(r) = region {
        check_dims("endpoint error region", truth.dims(), r.dims())?;
    }
    let mut sum = T::zero();
    let mut n = 0usize;
    for y in 0..truth.height() {
        for x in 0..truth.width() {
            if region.is_some_and(|r| r.get(x, y) < T::lit(0.5)) {
                continue;
            }
            if let (Some(a), Some(b)) = (estimate.lookup(x, y), truth.lookup(x, y)) {
                sum += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                n += 1;
            }
        }
    }
    Ok((n > 0).then(|| sum / T::lit(n as f64)))
}

/// Gradient of a scalar loss with respect to each pixel's displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGradient<T> {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<T>,
    pub gy: Vec<T>,
}

impl<T: Real> FlowGradient<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            gx: vec![T::zero(); width * height],
            gy: vec![T::zero(); width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (T, T) {
        let i = y * self.width + x;
        (self.gx[i], self.gy[i])
    }

    pub fn max_abs(&self) -> T {
        self.gx
            .iter()
            .chain(self.gy.iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Bilinear footprint of a sampling position.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell<T> {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub fx: T,
    pub fy: T,
}

impl<T: Real> Cell<T> {
    /// Locates `(sx, sy)` in a `w x h` grid; `None` outside `[0,w-1]x[0,h-1]`.
    #[inline]
    pub fn locate(sx: T, sy: T, w: usize, h: usize) -> Option<Self> {
        if w == 0 || h == 0 || !(sx >= T::zero() && sy >= T::zero()) {
            return None;
        }
        let (wm, hm) = (T::lit((w - 1) as f64), T::lit((h - 1) as f64));
        if sx > wm || sy > hm {
            return None;
        }
        let (x0, x1, fx) = axis(sx, w);
        let (y0, y1, fy) = axis(sy, h);
        Some(Self {
            x0,
            y0,
            x1,
            y1,
            fx,
            fy,
        })
    }

    /// Corner weights in the order 00, 10, 01, 11.
    #[inline]
    pub fn weights(&self) -> [T; 4] {
        let one = T::one();
        [
            (one - self.fx) * (one - self.fy),
            self.fx * (one - self.fy),
            (one - self.fx) * self.fy,
            self.fx * self.fy,
        ]
    }
}

#[inline]
fn axis<T: Real>(s: T, n: usize) -> (usize, usize, T) {
    if n == 1 {
        return (0, 0, T::zero());
    }
    let i0 = s.floor().to_usize().unwrap_or(0).min(n - 2);
    (i0, i0 + 1, s - T::lit(i0 as f64))
}

/// Bilinear sample of channel `c`, clamped to the range of the four corners.
#[inline]
pub(crate) fn sample_channel<T: Real>(image: &Image<T>, cell: &Cell<T>, c: usize) -> T {
    let p = [
        image.get(cell.x0, cell.y0, c),
        image.get(cell.x1, cell.y0, c),
        image.get(cell.x0, cell.y1, c),
        image.get(cell.x1, cell.y1, c),
    ];
    let w = cell.weights();
    let v = w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + w[3] * p[3];
    let lo = p[0].min(p[1]).min(p[2].min(p[3]));
    let hi = p[0].max(p[1]).max(p[2].max(p[3]));
    v.max(lo).min(hi)
}

/// Flow mixing per `M·Fv + (1 - M)·Fp`.
///
/// `mv` must be binary. Validity follows whichever flow the mask selects;
/// a pixel where the selected flow is invalid stays invalid.
pub fn blend_wflow<T: Real>(
    vertex_flow: &FlowField<T>,
    mv: &Mask<T>,
    pixel_flow: &FlowField<T>,
) -> Result<FlowField<T>> {
    check_dims("mask", vertex_flow.dims(), mv.dims())?;
    check_dims("pixel flow", vertex_flow.dims(), pixel_flow.dims())?;
    if !mv.is_binary() {
        return Err(Error::Precondition(
            "vertex-flow mask must be binary".into(),
        ));
    }
    let (w, h) = vertex_flow.dims();
    let one = T::one();
    let mut out = FlowField::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let m = mv.get(x, y);
            let valid = if m == one {
                vertex_flow.is_valid(x, y)
            } else {
                pixel_flow.is_valid(x, y)
            };
            if !valid {
                continue;
            }
            let (vx, vy) = vertex_flow.get(x, y);
            let (px, py) = pixel_flow.get(x, y);
            out.set(
                x,
                y,
                Some((m * vx + (one - m) * px, m * vy + (one - m) * py)),
            );
        }
    }
    Ok(out)
}

/// Gathers `image` at `p + flow(p)`. Out-of-range samples and invalid flow
/// pixels produce `fill` in every channel.
pub fn warp_bilinear<T: Real>(image: &Image<T>, flow: &FlowField<T>, fill: T) -> Result<Image<T>> {
    check_dims("warp flow", image.dims(), flow.dims())?;
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let mut out = Image::filled(w, h, c, fill);
    out.as_mut_slice()
        .par_chunks_mut(w * c)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let Some((dx, dy)) = flow.lookup(x, y) else {
                    continue;
                };
                let sx = T::lit(x as f64) + dx;
                let sy = T::lit(y as f64) + dy;
                if let Some(cell) = Cell::locate(sx, sy, w, h) {
                    for k in 0..c {
                        row[x * c + k] = sample_channel(image, &cell, k);
                    }
                }
            }
        });
    Ok(out)
}

/// Derivative of `sum(upstream * warp_bilinear(image, flow))` with respect
/// to every displacement.
pub fn warp_gradient<T: Real>(
    image: &Image<T>,
    flow: &FlowField<T>,
    upstream: &Image<T>,
) -> Result<FlowGradient<T>> {
    check_dims("warp flow", image.dims(), flow.dims())?;
    check_dims("upstream gradient", image.dims(), upstream.dims())?;
    if upstream.channels() != image.channels() {
        return Err(Error::InvalidParameter(format!(
            "upstream has {} channels, image has {}",
            upstream.channels(),
            image.channels()
        )));
    }
    let (w, h) = image.dims();
    let mut grad = FlowGradient::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let Some((dx, dy)) = flow.lookup(x, y) else {
                continue;
            };
            let sx = T::lit(x as f64) + dx;
            let sy = T::lit(y as f64) + dy;
            let Some(cell) = Cell::locate(sx, sy, w, h) else {
                continue;
            };
            let (gx, gy) = sample_derivative(image, &cell, upstream.pixel(x, y));
            let i = y * w + x;
            grad.gx[i] = gx;
            grad.gy[i] = gy;
        }
    }
    Ok(grad)
}

/// `sum_c g_c * d(sample_c)/d(sx, sy)` for one bilinear footprint.
#[inline]
pub(crate) fn sample_derivative<T: Real>(image: &Image<T>, cell: &Cell<T>, g: &[T]) -> (T, T) {
    let one = T::one();
    let (mut gx, mut gy) = (T::zero(), T::zero());
    for (k, &gk) in g.iter().enumerate() {
        if gk == T::zero() {
            continue;
        }
        let p00 = image.get(cell.x0, cell.y0, k);
        let p10 = image.get(cell.x1, cell.y0, k);
        let p01 = image.get(cell.x0, cell.y1, k);
        let p11 = image.get(cell.x1, cell.y1, k);
        // degenerate single-pixel axes have zero extent
        if cell.x1 != cell.x0 {
            gx += gk * ((one - cell.fy) * (p10 - p00) + cell.fy * (p11 - p01));
        }
        if cell.y1 != cell.y0 {
            gy += gk * ((one - cell.fx) * (p01 - p00) + cell.fx * (p11 - p10));
        }
    }
    (gx, gy)
}

/// Derivative of `sum(upstream * warp_bilinear(image, flow))` with respect
/// to the image intensities: the transpose of the bilinear gather.
pub fn warp_adjoint<T: Real>(upstream: &Image<T>, flow: &FlowField<T>) -> Result<Image<T>> {
    check_dims("warp flow", upstream.dims(), flow.dims())?;
    let (w, h, c) = (upstream.width(), upstream.height(), upstream.channels());
    let mut out = Image::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            let Some((dx, dy)) = flow.lookup(x, y) else {
                continue;
            };
            let sx = T::lit(x as f64) + dx;
            let sy = T::lit(y as f64) + dy;
            let Some(cell) = Cell::locate(sx, sy, w, h) else {
                continue;
            };
            let wts = cell.weights();
            let corners = [
                (cell.x0, cell.y0),
                (cell.x1, cell.y0),
                (cell.x0, cell.y1),
                (cell.x1, cell.y1),
            ];
            for k in 0..c {
                let g = upstream.get(x, y, k);
                if g == T::zero() {
                    continue;
                }
                for (wt, &(cx, cy)) in wts.iter().zip(&corners) {
                    let v = out.get(cx, cy, k) + *wt * g;
                    out.set(cx, cy, k, v);
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear upsampling by an integer factor; displacements scale with it.
pub fn upsample_flow<T: Real>(flow: &FlowField<T>, factor: usize) -> Result<FlowField<T>> {
    if factor < 1 {
        return Err(Error::InvalidParameter("upsampling factor must be >= 1".into()));
    }
    resize_flow(flow, factor, flow.width() * factor, flow.height() * factor)
}

/// Upsamples to an explicit `width x height` grid.
///
/// Output pixel `X` reads the input at `(X + 0.5) / factor - 0.5`, the
/// position of its center under box downsampling, clamped to the edges.
/// A pixel is valid only if every input pixel with nonzero weight is.
pub fn resize_flow<T: Real>(
    flow: &FlowField<T>,
    factor: usize,
    width: usize,
    height: usize,
) -> Result<FlowField<T>> {
    if factor < 1 {
        return Err(Error::InvalidParameter("upsampling factor must be >= 1".into()));
    }
    if factor == 1 && (width, height) == flow.dims() {
        return Ok(flow.clone());
    }
    let (w, h) = flow.dims();
    if w == 0 || h == 0 {
        return Err(Error::InvalidParameter("cannot resize an empty flow".into()));
    }
    let f = T::lit(factor as f64);
    let half = T::lit(0.5);
    let wm = T::lit((w - 1) as f64);
    let hm = T::lit((h - 1) as f64);
    let mut out = FlowField::invalid(width, height);
    for y in 0..height {
        let sy = ((T::lit(y as f64) + half) / f - half).max(T::zero()).min(hm);
        for x in 0..width {
            let sx = ((T::lit(x as f64) + half) / f - half).max(T::zero()).min(wm);
            let cell = Cell::locate(sx, sy, w, h).expect("clamped position is in range");
            out.set(x, y, sample_flow(flow, &cell).map(|(u, v)| (u * f, v * f)));
        }
    }
    Ok(out)
}

/// Bilinear flow sample; `None` if a corner with nonzero weight is invalid.
#[inline]
pub(crate) fn sample_flow<T: Real>(flow: &FlowField<T>, cell: &Cell<T>) -> Option<(T, T)> {
    let wts = cell.weights();
    let corners = [
        (cell.x0, cell.y0),
        (cell.x1, cell.y0),
        (cell.x0, cell.y1),
        (cell.x1, cell.y1),
    ];
    let (mut u, mut v) = (T::zero(), T::zero());
    for (wt, &(cx, cy)) in wts.iter().zip(&corners) {
        if *wt == T::zero() {
            continue;
        }
        let (a, b) = flow.lookup(cx, cy)?;
        u += *wt * a;
        v += *wt * b;
    }
    Some((u, v))
}

/// `outer(p) + inner(p + outer(p))`, the flow of applying `outer` then `inner`.
pub fn compose_flows<T: Real>(outer: &FlowField<T>, inner: &FlowField<T>) -> Result<FlowField<T>> {
    check_dims("composed flows", outer.dims(), inner.dims())?;
    let (w, h) = outer.dims();
    Ok(FlowField::from_fn(w, h, |x, y| {
        let (ox, oy) = outer.lookup(x, y)?;
        let cell = Cell::locate(T::lit(x as f64) + ox, T::lit(y as f64) + oy, w, h)?;
        let (ix, iy) = sample_flow(inner, &cell)?;
        Some((ox + ix, oy + iy))
    }))
}
