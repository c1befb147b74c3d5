//! Coarse-to-fine dense flow from normalized patch features and a local
//! correlation search, refined level by level.
//!
//! The returned flow is indexed by the target image and points into the
//! source, like every flow in this crate.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::flowfield::{resize_flow, FlowField};
use crate::pipeline::PersonBundle;
use crate::raster::{Image, Mask, PartMap};
use crate::scalar::Real;

/// Relative weight of the part-label block in the matching features.
pub const PART_CHANNEL_WEIGHT: f64 = 0.25;

/// Patches whose per-entry standard deviation falls below this are flat.
const FLAT_STD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    pub levels: usize,
    /// Search radius in pixels at every level.
    pub max_disp: usize,
    pub patch_radius: usize,
    pub median_filter: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 4,
            max_disp: 4,
            patch_radius: 3,
            median_filter: true,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.max_disp < 1 || self.patch_radius < 1 {
            return Err(Error::InvalidParameter(format!(
                "levels, max_disp and patch_radius must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Largest displacement reachable at full resolution.
    pub fn search_range(&self) -> usize {
        self.max_disp * ((1 << self.levels) - 1)
    }
}

/// Unit-norm (or zero, for flat patches) feature vector per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
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
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn feature(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn is_flat(&self, x: usize, y: usize) -> bool {
        self.feature(x, y).iter().all(|&v| v == T::zero())
    }

    /// Cosine score against `other` at `(x + dx, y + dy)`, or `-1` when
    /// that position leaves the grid.
    #[inline]
    fn score_at(&self, x: usize, y: usize, other: &FeatureMap<T>, qx: isize, qy: isize) -> T {
        if qx < 0 || qy < 0 || qx >= other.width as isize || qy >= other.height as isize {
            return -T::one();
        }
        dot(self.feature(x, y), other.feature(qx as usize, qy as usize))
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&u, &v) in a.iter().zip(b) {
        acc += u * v;
    }
    acc
}

/// Box-downsampled pyramid; level 0 is the input.
pub fn build_pyramid<T: Real>(image: &Image<T>, levels: usize) -> Result<Vec<Image<T>>> {
    if levels < 1 {
        return Err(Error::InvalidParameter("pyramid needs at least one level".into()));
    }
    let need = 1usize << (levels - 1);
    let (w, h) = image.dims();
    if w < need || h < need {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            reason: format!("{levels} pyramid levels need at least {need}px per side"),
        });
    }
    let mut out = vec![image.clone()];
    for _ in 1..levels {
        let prev = out.last().unwrap();
        out.push(downsample2(prev));
    }
    Ok(out)
}

fn downsample2<T: Real>(img: &Image<T>) -> Image<T> {
    let quarter = T::lit(0.25);
    Image::from_fn(img.width() / 2, img.height() / 2, img.channels(), |x, y, c| {
        let (sx, sy) = (2 * x, 2 * y);
        (img.get(sx, sy, c) + img.get(sx + 1, sy, c) + img.get(sx, sy + 1, c) + img.get(sx + 1, sy + 1, c))
            * quarter
    })
}

/// Mean-subtracted, L2-normalized `(2r+1)^2 x channels` patches with
/// replicate padding. Each channel is centered on its own mean.
pub fn patch_features<T: Real>(image: &Image<T>, radius: usize) -> FeatureMap<T> {
    let all = 0..image.channels();
    block_features(image, radius, &[(all, T::one())])
}

/// Features built from weighted channel groups. Each group is centered and
/// normalized on its own, scaled by its weight, and the concatenation is
/// renormalized.
fn block_features<T: Real>(image: &Image<T>, radius: usize, blocks: &[(Range<usize>, T)]) -> FeatureMap<T> {
    let (w, h) = image.dims();
    let side = 2 * radius + 1;
    let area = side * side;
    let dim: usize = blocks.iter().map(|(r, _)| r.len() * area).sum();
    let mut data = vec![T::zero(); w * h * dim];
    let n = T::lit(area as f64);
    let r = radius as isize;
    let flat2 = {
        // squared norm of the centered-and-scaled vector n*x - S for an
        // entry-wise standard deviation of FLAT_STD
        let s = FLAT_STD * area as f64;
        s * s
    };

    data.par_chunks_mut(w * dim).enumerate().for_each(|(y, row)| {
        let mut clamp = Vec::with_capacity(area);
        for x in 0..w {
            clamp.clear();
            for dy in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    clamp.push((xx, yy));
                }
            }
            let feat = &mut row[x * dim..(x + 1) * dim];
            let mut off = 0;
            let mut nonzero_blocks = 0;
            for (range, weight) in blocks {
                let len = range.len() * area;
                let block = &mut feat[off..off + len];
                let mut sumsq = T::zero();
                for (ci, c) in range.clone().enumerate() {
                    let mut s = T::zero();
                    for &(xx, yy) in clamp.iter() {
                        s += image.get(xx, yy, c);
                    }
                    for (k, &(xx, yy)) in clamp.iter().enumerate() {
                        // n*x - sum keeps the centering exact for dyadic data
                        let v = n * image.get(xx, yy, c) - s;
                        block[ci * area + k] = v;
                        sumsq += v * v;
                    }
                }
                let per_entry = T::lit(flat2 * range.len() as f64);
                if sumsq <= per_entry {
                    block.iter_mut().for_each(|v| *v = T::zero());
                } else {
                    let scale = *weight / sumsq.sqrt();
                    block.iter_mut().for_each(|v| *v *= scale);
                    nonzero_blocks += 1;
                }
                off += len;
            }
            if blocks.len() > 1 && nonzero_blocks > 0 {
                let norm = feat.iter().map(|&v| v * v).sum::<T>().sqrt();
                feat.iter_mut().for_each(|v| *v /= norm);
            }
        }
    });
    FeatureMap {
        width: w,
        height: h,
        dim,
        data,
    }
}

/// Cosine scores for every displacement in `[-D, D]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume<T> {
    width: usize,
    height: usize,
    max_disp: usize,
    scores: Vec<T>,
}

impl<T: Real> CostVolume<T> {
    pub fn max_disp(&self) -> usize {
        self.max_disp
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn side(&self) -> usize {
        2 * self.max_disp + 1
    }

    pub fn score(&self, x: usize, y: usize, dx: isize, dy: isize) -> T {
        let d = self.max_disp as isize;
        assert!(dx.abs() <= d && dy.abs() <= d, "displacement outside the volume");
        let s = self.side();
        let k = (dy + d) as usize * s + (dx + d) as usize;
        self.scores[(y * self.width + x) * s * s + k]
    }

    pub fn scores_at(&self, x: usize, y: usize) -> &[T] {
        let s2 = self.side() * self.side();
        let i = (y * self.width + x) * s2;
        &self.scores[i..i + s2]
    }

    /// Best displacement at a pixel; equal scores resolve to the first in
    /// row-major `(dy, dx)` order.
    pub fn argmax(&self, x: usize, y: usize) -> ((isize, isize), T) {
        let s = self.side();
        let d = self.max_disp as isize;
        let (k, v) = best_index(self.scores_at(x, y));
        (((k % s) as isize - d, (k / s) as isize - d), v)
    }
}

#[inline]
fn best_index<T: Real>(scores: &[T]) -> (usize, T) {
    let mut best = (0, scores[0]);
    for (k, &v) in scores.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

/// `score(p, d) = <a(p), b(p + d)>`; lookups outside `b` score `-1`.
pub fn correlation_volume<T: Real>(a: &FeatureMap<T>, b: &FeatureMap<T>, max_disp: usize) -> Result<CostVolume<T>> {
    check_dims("correlation features", a.dims(), b.dims())?;
    if a.dim() != b.dim() {
        return Err(Error::InvalidParameter(format!(
            "feature lengths differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (w, h) = a.dims();
    let side = 2 * max_disp + 1;
    let d = max_disp as isize;
    let mut scores = vec![T::zero(); w * h * side * side];
    scores.par_chunks_mut(w * side * side).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            for (k, s) in row[x * side * side..(x + 1) * side * side].iter_mut().enumerate() {
                let dx = (k % side) as isize - d;
                let dy = (k / side) as isize - d;
                *s = a.score_at(x, y, b, x as isize + dx, y as isize + dy);
            }
        }
    });
    Ok(CostVolume {
        width: w,
        height: h,
        max_disp,
        scores,
    })
}

/// Vertex of the parabola through three equally spaced scores, clamped to
/// `[-0.5, 0.5]`.
pub fn subpixel_refine<T: Real>(c_minus: T, c_0: T, c_plus: T) -> Result<T> {
    if !(c_0 >= c_minus && c_0 >= c_plus) {
        return Err(Error::Precondition(format!(
            "center score {c_0} is not a peak ({c_minus}, {c_plus})"
        )));
    }
    let den = T::lit(2.0) * (c_minus - T::lit(2.0) * c_0 + c_plus);
    if den.abs() < T::lit(1e-12) {
        return Ok(T::zero());
    }
    let half = T::lit(0.5);
    Ok(((c_minus - c_plus) / den).max(-half).min(half))
}

/// Pixel flow between two person bundles, valid on the target foreground.
pub fn estimate_flow<T: Real>(source: &PersonBundle<T>, target: &PersonBundle<T>, params: &FlowParams) -> Result<FlowField<T>> {
    estimate_flow_images(
        &source.image,
        &source.part_map,
        &target.image,
        &target.part_map,
        &target.foreground,
        params,
    )
}

/// [`estimate_flow`] on raw rasters.
pub fn estimate_flow_images<T: Real>(
    source: &Image<T>,
    source_parts: &PartMap,
    target: &Image<T>,
    target_parts: &PartMap,
    target_foreground: &Mask<T>,
    params: &FlowParams,
) -> Result<FlowField<T>> {
    params.validate()?;
    check_dims("source image", target.dims(), source.dims())?;
    check_dims("source parts", target.dims(), source_parts.dims())?;
    check_dims("target parts", target.dims(), target_parts.dims())?;
    check_dims("target foreground", target.dims(), target_foreground.dims())?;
    if source.channels() != target.channels() {
        return Err(Error::InvalidParameter("source and target channel counts differ".into()));
    }

    let c = target.channels();
    let blocks = [(0..c, T::one()), (c..c + 1, T::lit(PART_CHANNEL_WEIGHT))];
    let src_pyr = build_pyramid(&source.stack(&source_parts.to_image())?, params.levels)?;
    let tgt_pyr = build_pyramid(&target.stack(&target_parts.to_image())?, params.levels)?;

    let coarsest = params.levels - 1;
    let (cw, ch) = tgt_pyr[coarsest].dims();
    let mut flow = FlowField::zeros(cw, ch);
    for level in (0..params.levels).rev() {
        let (w, h) = tgt_pyr[level].dims();
        if level != coarsest {
            flow = resize_flow(&flow, 2, w, h)?;
        }
        let ft = block_features(&tgt_pyr[level], params.patch_radius, &blocks);
        let fs = block_features(&src_pyr[level], params.patch_radius, &blocks);
        flow = match_level(&ft, &fs, &flow, params.max_disp);
        if params.median_filter {
            flow = median3(&flow);
        }
    }
    flow.restrict(target_foreground)
}

/// One winner-take-all pass around the current estimate.
fn match_level<T: Real>(ft: &FeatureMap<T>, fs: &FeatureMap<T>, init: &FlowField<T>, max_disp: usize) -> FlowField<T> {
    let (w, h) = ft.dims();
    let d = max_disp as isize;
    let rows: Vec<Vec<(T, T)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let (ix, iy) = init.get(x, y);
                    if ft.is_flat(x, y) {
                        return (ix, iy);
                    }
                    let bx = x as isize + ix.round().to_isize().unwrap_or(0);
                    let by = y as isize + iy.round().to_isize().unwrap_or(0);
                    let mut best = (bx - d, by - d, T::neg_infinity());
                    for qy in by - d..=by + d {
                        for qx in bx - d..=bx + d {
                            let s = ft.score_at(x, y, fs, qx, qy);
                            if s > best.2 {
                                best = (qx, qy, s);
                            }
                        }
                    }
                    let (qx, qy, c0) = best;
                    let refine = |cm: T, cp: T| subpixel_refine(cm, c0, cp).unwrap_or(T::zero());
                    let sx = refine(ft.score_at(x, y, fs, qx - 1, qy), ft.score_at(x, y, fs, qx + 1, qy));
                    let sy = refine(ft.score_at(x, y, fs, qx, qy - 1), ft.score_at(x, y, fs, qx, qy + 1));
                    (
                        T::lit((qx - x as isize) as f64) + sx,
                        T::lit((qy - y as isize) as f64) + sy,
                    )
                })
                .collect()
        })
        .collect();
    let mut out = FlowField::zeros(w, h);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, v) in row.into_iter().enumerate() {
            out.set(x, y, Some(v));
        }
    }
    out
}

/// Component-wise 3x3 median over valid neighbours (lower median on even
/// counts at the border).
pub fn median3<T: Real>(flow: &FlowField<T>) -> FlowField<T> {
    let (w, h) = flow.dims();
    FlowField::from_fn(w, h, |x, y| {
        if !flow.is_valid(x, y) {
            return None;
        }
        let mut us = Vec::with_capacity(9);
        let mut vs = Vec::with_capacity(9);
        for yy in y.saturating_sub(1)..(y + 2).min(h) {
            for xx in x.saturating_sub(1)..(x + 2).min(w) {
                if let Some((u, v)) = flow.lookup(xx, yy) {
                    us.push(u);
                    vs.push(v);
                }
            }
        }
        let mid = |v: &mut Vec<T>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[(v.len() - 1) / 2]
        };
        Some((mid(&mut us), mid(&mut vs)))
    })
}
