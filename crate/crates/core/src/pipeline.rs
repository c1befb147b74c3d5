//! End-to-end garment transfer: flow construction, warping, background
//! inpainting and fusion compositing.

use serde::{Deserialize, Serialize};

use crate::cycleopt::{cycle_refine, CycleConfig, CycleState};
use crate::error::{check_dims, Error, Result};
use crate::flowfield::{blend_wflow, warp_bilinear, FlowField};
use crate::geometry::{rasterize, vertex_flow, Mesh2D};
use crate::labels::seg;
use crate::pixelflow::{estimate_flow, FlowParams};
use crate::raster::{Image, Mask, PartMap};
use crate::scalar::Real;

/// Inpainting sweeps stop early once no pixel changes by more than this.
pub const INPAINT_TOLERANCE: f64 = 1e-5;

/// A named 2D skeleton joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint<T> {
    pub name: String,
    pub x: T,
    pub y: T,
    pub visible: bool,
}

/// Everything known about one frame of a person.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonBundle<T> {
    pub image: Image<T>,
    pub part_map: PartMap,
    /// Garment-level labels, see [`crate::labels::seg`].
    pub segmentation: PartMap,
    pub skeleton: Vec<Joint<T>>,
    pub foreground: Mask<T>,
}

impl<T: Real> PersonBundle<T> {
    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.image.dims();
        check_dims("part map", d, self.part_map.dims())?;
        check_dims("segmentation", d, self.segmentation.dims())?;
        check_dims("foreground", d, self.foreground.dims())?;
        let half = T::lit(0.5);
        for (i, &p) in self.part_map.as_slice().iter().enumerate() {
            if p != 0 && self.foreground.as_slice()[i] < half {
                return Err(Error::Precondition(format!(
                    "part map covers pixel {} outside the foreground",
                    i
                )));
            }
        }
        Ok(())
    }

    pub fn visible_joints(&self) -> usize {
        self.skeleton.iter().filter(|j| j.visible).count()
    }
}

/// Which flows feed the warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMode {
    /// Vertex flow where the body mesh covers the query, pixel flow elsewhere.
    #[default]
    Wflow,
    VertexOnly,
    PixelOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub flow: FlowParams,
    pub mode: FlowMode,
    pub refine: Option<CycleConfig>,
    /// Query segmentation labels passed through unchanged.
    pub protected_labels: Vec<u32>,
    /// Source segmentation labels carried along by the warp.
    pub garment_labels: Vec<u32>,
    /// Foreground dilation radius of the inpainting hole, in pixels.
    pub dilation: usize,
    pub inpaint_iterations: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            flow: FlowParams::default(),
            mode: FlowMode::Wflow,
            refine: None,
            protected_labels: seg::PROTECTED.to_vec(),
            garment_labels: seg::GARMENT.to_vec(),
            dilation: 5,
            inpaint_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferResult<T> {
    /// Source image warped into the query pose.
    pub warped: Image<T>,
    /// Warped source garment region.
    pub garment: Mask<T>,
    pub fusion_mask: Mask<T>,
    /// Warped garment with the query's protected parts pasted in.
    pub coarse: Image<T>,
    pub composite: Image<T>,
    pub wflow: FlowField<T>,
    pub inpainted_background: Image<T>,
    /// Present when cycle refinement ran.
    pub refinement: Option<CycleState<T>>,
}

/// Fills `hole` by Jacobi diffusion from the surrounding pixels.
///
/// Hole pixels start from the mean of horizontal and vertical linear
/// interpolation between the nearest known pixels, then are relaxed towards
/// the average of their in-image 4-neighbours. Pixels outside the hole are
/// returned untouched.
pub fn inpaint_background<T: Real>(image: &Image<T>, hole: &Mask<T>, iterations: usize) -> Result<Image<T>> {
    check_dims("inpainting hole", image.dims(), hole.dims())?;
    if !hole.is_binary() {
        return Err(Error::Precondition("inpainting hole must be binary".into()));
    }
    if iterations == 0 {
        return Err(Error::InvalidParameter("inpainting needs at least one iteration".into()));
    }
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let inside = hole.binarize(T::lit(0.5));
    if inside.iter().all(|&b| b) {
        return Err(Error::NoBoundaryData);
    }
    let mut out = image.clone();
    if !inside.iter().any(|&b| b) {
        return Ok(out);
    }
    initial_fill(&mut out, &inside);

    let tol = T::lit(INPAINT_TOLERANCE);
    let holes: Vec<usize> = (0..w * h).filter(|&i| inside[i]).collect();
    let mut next = out.clone();
    for _ in 0..iterations {
        let mut max_update = T::zero();
        for &i in &holes {
            let (x, y) = (i % w, i / w);
            let mut nb = [(0usize, 0usize); 4];
            let mut n = 0;
            if x > 0 {
                nb[n] = (x - 1, y);
                n += 1;
            }
            if x + 1 < w {
                nb[n] = (x + 1, y);
                n += 1;
            }
            if y > 0 {
                nb[n] = (x, y - 1);
                n += 1;
            }
            if y + 1 < h {
                nb[n] = (x, y + 1);
                n += 1;
            }
            let inv = T::one() / T::lit(n as f64);
            for k in 0..c {
                let s = nb[..n].iter().fold(T::zero(), |acc, &(xx, yy)| acc + out.get(xx, yy, k));
                let v = s * inv;
                max_update = max_update.max((v - out.get(x, y, k)).abs());
                next.set(x, y, k, v);
            }
        }
        std::mem::swap(&mut out, &mut next);
        if max_update < tol {
            break;
        }
    }
    Ok(out)
}

fn initial_fill<T: Real>(img: &mut Image<T>, inside: &[bool]) {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let known = inside.iter().filter(|&&b| !b).count();
    let mut mean = vec![T::zero(); c];
    for i in 0..w * h {
        if !inside[i] {
            for (k, m) in mean.iter_mut().enumerate() {
                *m += img.as_slice()[i * c + k];
            }
        }
    }
    for m in &mut mean {
        *m /= T::lit(known as f64);
    }
    // nearest known pixel along a line, if any
    let scan = |len: usize, at: &dyn Fn(usize) -> usize, i: usize| -> (Option<usize>, Option<usize>) {
        let lo = (0..i).rev().find(|&j| !inside[at(j)]);
        let hi = (i + 1..len).find(|&j| !inside[at(j)]);
        (lo, hi)
    };
    let src = img.clone();
    for y in 0..h {
        for x in 0..w {
            if !inside[y * w + x] {
                continue;
            }
            let horiz = scan(w, &|j| y * w + j, x);
            let vert = scan(h, &|j| j * w + x, y);
            for k in 0..c {
                let interp = |(lo, hi): (Option<usize>, Option<usize>), pos: usize, get: &dyn Fn(usize) -> T| match (lo, hi) {
                    (Some(a), Some(b)) => {
                        let t = T::lit((pos - a) as f64 / (b - a) as f64);
                        Some(get(a) * (T::one() - t) + get(b) * t)
                    }
                    (Some(a), None) => Some(get(a)),
                    (None, Some(b)) => Some(get(b)),
                    (None, None) => None,
                };
                let hv = interp(horiz, x, &|j| src.get(j, y, k));
                let vv = interp(vert, y, &|j| src.get(x, j, k));
                let v = match (hv, vv) {
                    (Some(a), Some(b)) => (a + b) * T::lit(0.5),
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => mean[k],
                };
                img.set(x, y, k, v);
            }
        }
    }
}

/// `coarse·m + background·(1 − m)` per pixel and channel.
pub fn fuse_composite<T: Real>(coarse: &Image<T>, fusion_mask: &Mask<T>, background: &Image<T>) -> Result<Image<T>> {
    check_dims("fusion mask", coarse.dims(), fusion_mask.dims())?;
    check_dims("background", coarse.dims(), background.dims())?;
    if coarse.channels() != background.channels() {
        return Err(Error::InvalidParameter("coarse and background channel counts differ".into()));
    }
    let c = coarse.channels();
    let mut out = coarse.clone();
    for (i, px) in out.as_mut_slice().chunks_mut(c).enumerate() {
        let m = fusion_mask.as_slice()[i];
        let bg = &background.as_slice()[i * c..(i + 1) * c];
        for (v, &b) in px.iter_mut().zip(bg) {
            *v = *v * m + b * (T::one() - m);
        }
    }
    Ok(out)
}

/// Frame subsampling and ordered training pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSampling {
    /// Indices of the subsampled frames.
    pub frames: Vec<usize>,
    /// Unordered pairs among the subsampled frames.
    pub candidates: usize,
    /// `(source, target)` pairs; the source never shows fewer joints.
    pub pairs: Vec<(usize, usize)>,
}

pub fn sample_pairs<T: Real>(frames: &[PersonBundle<T>], per_video: usize) -> Result<PairSampling> {
    let counts: Vec<usize> = frames.iter().map(|f| f.visible_joints()).collect();
    sample_pairs_by_counts(&counts, per_video)
}

/// [`sample_pairs`] from visible-joint counts alone. Pairs with equal counts
/// are kept in both orientations.
pub fn sample_pairs_by_counts(visible_joints: &[usize], per_video: usize) -> Result<PairSampling> {
    let n = visible_joints.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("pair sampling needs at least 2 frames, got {n}")));
    }
    if per_video < 2 || per_video > n {
        return Err(Error::InvalidParameter(format!(
            "per-video count {per_video} must lie in 2..={n}"
        )));
    }
    let frames: Vec<usize> = (0..per_video)
        .map(|i| (i as f64 * (n - 1) as f64 / (per_video - 1) as f64).round() as usize)
        .collect();
    let mut pairs = Vec::new();
    let mut candidates = 0;
    for (a, &i) in frames.iter().enumerate() {
        for &j in &frames[a + 1..] {
            candidates += 1;
            let (ci, cj) = (visible_joints[i], visible_joints[j]);
            if ci >= cj {
                pairs.push((i, j));
            }
            if cj >= ci {
                pairs.push((j, i));
            }
        }
    }
    Ok(PairSampling {
        frames,
        candidates,
        pairs,
    })
}

/// Binary mask of pixels whose warped label lies in `labels`: the label
/// indicator is warped bilinearly and thresholded at one half.
pub fn warp_label_mask<T: Real>(segmentation: &PartMap, labels: &[u32], flow: &FlowField<T>) -> Result<Mask<T>> {
    check_dims("label warp flow", segmentation.dims(), flow.dims())?;
    let indicator = segmentation.mask_of::<T>(labels).to_image();
    let warped = warp_bilinear(&indicator, flow, T::zero())?;
    let (w, h) = flow.dims();
    let half = T::lit(0.5);
    Ok(Mask::from_fn(w, h, |x, y| {
        if warped.get(x, y, 0) >= half {
            T::one()
        } else {
            T::zero()
        }
    }))
}

/// Backward flow from `query` into `source` under `mode`.
pub fn correspondence<T: Real>(
    source: &PersonBundle<T>,
    query: &PersonBundle<T>,
    source_mesh: &Mesh2D<T>,
    query_mesh: &Mesh2D<T>,
    params: &FlowParams,
    mode: FlowMode,
) -> Result<FlowField<T>> {
    if !source_mesh.topology_compatible(query_mesh) {
        return Err(Error::Topology("source and query meshes differ in topology".into()));
    }
    let (w, h) = query.dims();
    let vertex = || -> Result<(FlowField<T>, Mask<T>)> {
        let corr = rasterize(query_mesh, w, h)?;
        vertex_flow(source_mesh, query_mesh, &corr)
    };
    match mode {
        FlowMode::VertexOnly => Ok(vertex()?.0),
        FlowMode::PixelOnly => estimate_flow(source, query, params),
        FlowMode::Wflow => {
            let (fv, mv) = vertex()?;
            let fp = estimate_flow(source, query, params)?;
            blend_wflow(&fv, &mv, &fp)
        }
    }
}

/// Transfers the source garment onto the query pose.
pub fn transfer<T: Real>(
    source: &PersonBundle<T>,
    query: &PersonBundle<T>,
    source_mesh: &Mesh2D<T>,
    query_mesh: &Mesh2D<T>,
    config: &TransferConfig,
) -> Result<TransferResult<T>> {
    check_inputs(source, query, config)?;
    let wflow = correspondence(source, query, source_mesh, query_mesh, &config.flow, config.mode)?;
    let bwd = match config.refine {
        Some(_) => Some(correspondence(query, source, query_mesh, source_mesh, &config.flow, config.mode)?),
        None => None,
    };
    transfer_with_flow(source, query, wflow, bwd.as_ref(), config)
}

/// [`transfer`] from a precomputed query-to-source flow. Refinement also
/// needs the source-to-query flow `bwd`; `config.flow` and `config.mode`
/// are ignored.
pub fn transfer_with_flow<T: Real>(
    source: &PersonBundle<T>,
    query: &PersonBundle<T>,
    wflow: FlowField<T>,
    bwd: Option<&FlowField<T>>,
    config: &TransferConfig,
) -> Result<TransferResult<T>> {
    check_inputs(source, query, config)?;
    check_dims("transfer flow", query.dims(), wflow.dims())?;
    let background = inpaint_background(
        &query.image,
        &binary(&query.foreground.dilate(config.dilation)),
        config.inpaint_iterations,
    )?;
    let mut result = compose(source, query, wflow, background, config)?;

    if let Some(cycle) = &config.refine {
        let bwd = bwd.ok_or_else(|| Error::Precondition("refinement needs the source-to-query flow".into()))?;
        check_dims("backward flow", source.dims(), bwd.dims())?;
        let state = cycle_refine(source, query, &result.wflow, bwd, cycle)?;
        let refined_flow = state.flow_fwd.clone();
        let mut refined = compose(source, query, refined_flow, result.inpainted_background.clone(), config)?;
        // the optimized mask replaces the geometric one
        let m = mask_logits_to_mask(&state.mask_logits_fwd);
        refined.composite = fuse_composite(&refined.coarse, &m, &refined.inpainted_background)?;
        refined.fusion_mask = m;
        refined.refinement = Some(state);
        result = refined;
    }
    Ok(result)
}

fn check_inputs<T: Real>(source: &PersonBundle<T>, query: &PersonBundle<T>, config: &TransferConfig) -> Result<()> {
    source.validate()?;
    query.validate()?;
    check_dims("query bundle", source.dims(), query.dims())?;
    if source.image.channels() != query.image.channels() {
        return Err(Error::InvalidParameter("source and query channel counts differ".into()));
    }
    let garment_pixels = source
        .segmentation
        .as_slice()
        .iter()
        .filter(|l| config.garment_labels.contains(l))
        .count();
    if garment_pixels == 0 {
        return Err(Error::EmptyGarment);
    }
    Ok(())
}

fn mask_logits_to_mask<T: Real>(logits: &Image<T>) -> Mask<T> {
    Mask::from_fn(logits.width(), logits.height(), |x, y| logits.get(x, y, 0).sigmoid())
}

fn binary<T: Real>(m: &Mask<T>) -> Mask<T> {
    let half = T::lit(0.5);
    Mask::from_fn(m.width(), m.height(), |x, y| if m.get(x, y) >= half { T::one() } else { T::zero() })
}

fn compose<T: Real>(
    source: &PersonBundle<T>,
    query: &PersonBundle<T>,
    wflow: FlowField<T>,
    background: Image<T>,
    config: &TransferConfig,
) -> Result<TransferResult<T>> {
    let (w, h) = query.dims();
    let c = query.image.channels();
    let warped = warp_bilinear(&source.image, &wflow, T::zero())?;
    let garment = warp_label_mask(&source.segmentation, &config.garment_labels, &wflow)?;
    let protected: Vec<bool> = query
        .segmentation
        .as_slice()
        .iter()
        .map(|l| config.protected_labels.contains(l))
        .collect();
    let fusion_mask = Mask::from_fn(w, h, |x, y| {
        if protected[y * w + x] || garment.get(x, y) == T::one() {
            T::one()
        } else {
            T::zero()
        }
    });
    let coarse = Image::from_fn(w, h, c, |x, y, k| {
        if protected[y * w + x] {
            query.image.get(x, y, k)
        } else {
            warped.get(x, y, k)
        }
    });
    let composite = fuse_composite(&coarse, &fusion_mask, &background)?;
    Ok(TransferResult {
        warped,
        garment,
        fusion_mask,
        coarse,
        composite,
        wflow,
        inpainted_background: background,
        refinement: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inpaint_single_hole_is_midpoint() {
        let img = Image::<f64>::from_vec(3, 1, 1, vec![0.0, 0.7, 1.0]).unwrap();
        let hole = Mask::from_bools(3, 1, &[false, true, false]);
        let out = inpaint_background(&img, &hole, 50).unwrap();
        assert!((out.get(1, 0, 0) - 0.5).abs() < 1e-12);
        assert_eq!(out.get(0, 0, 0), 0.0);
        assert_eq!(out.get(2, 0, 0), 1.0);
    }

    #[test]
    fn inpaint_constant_stays_constant() {
        let img = Image::<f64>::filled(9, 7, 3, 0.3);
        let hole = Mask::from_fn(9, 7, |x, y| if (2..6).contains(&x) && y > 0 { 1.0 } else { 0.0 });
        let out = inpaint_background(&img, &hole, 10).unwrap();
        assert!(out.as_slice().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn inpaint_ramp_is_harmonic() {
        let img = Image::<f64>::from_fn(32, 32, 1, |x, _, _| x as f64 / 31.0);
        let hole = Mask::from_fn(32, 32, |x, y| if (10..22).contains(&x) && (10..22).contains(&y) { 1.0 } else { 0.0 });
        let mut damaged = img.clone();
        for y in 10..22 {
            for x in 10..22 {
                damaged.set(x, y, 0, 0.9);
            }
        }
        let out = inpaint_background(&damaged, &hole, 5000).unwrap();
        for (a, b) in out.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn inpaint_rejects_full_hole() {
        let img = Image::<f64>::filled(4, 4, 1, 0.0);
        let hole = Mask::ones(4, 4);
        assert!(matches!(inpaint_background(&img, &hole, 5), Err(Error::NoBoundaryData)));
    }

    #[test]
    fn fuse_examples() {
        let one = Image::<f64>::filled(3, 2, 3, 1.0);
        let zero = Image::<f64>::filled(3, 2, 3, 0.0);
        assert_eq!(fuse_composite(&one, &Mask::ones(3, 2), &zero).unwrap(), one);
        assert_eq!(fuse_composite(&one, &Mask::zeros(3, 2), &zero).unwrap(), zero);
        let half = fuse_composite(&one, &Mask::filled(3, 2, 0.5), &zero).unwrap();
        assert!(half.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn pairs_ten_frames() {
        let s = sample_pairs_by_counts(&[15; 10], 10).unwrap();
        assert_eq!(s.candidates, 45);
        assert_eq!(s.pairs.len(), 90);
    }

    #[test]
    fn pairs_oriented_by_joint_count() {
        let s = sample_pairs_by_counts(&[17, 12], 2).unwrap();
        assert_eq!(s.pairs, vec![(0, 1)]);
        let s = sample_pairs_by_counts(&[12, 17], 2).unwrap();
        assert_eq!(s.pairs, vec![(1, 0)]);
    }

    #[test]
    fn pairs_need_two_frames() {
        assert!(sample_pairs_by_counts(&[3], 1).is_err());
    }

    #[test]
    fn subsampling_spans_the_video() {
        let s = sample_pairs_by_counts(&[1; 30], 4).unwrap();
        assert_eq!(s.frames, vec![0, 10, 19, 29]);
        assert_eq!(s.candidates, 6);
    }
}
