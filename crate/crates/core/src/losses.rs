//! Reconstruction, mask and adversarial objectives.
//!
//! Pixel and BCE losses are means; the smoothness and least-squares
//! adversarial terms are plain sums. Every reduction runs sequentially in
//! row-major order.

use crate::error::{check_dims, Error, Result};
use crate::raster::{Image, Mask};
use crate::scalar::Real;

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelLoss {
    L1,
    Mse,
}

pub fn pixel_loss<T: Real>(pred: &Image<T>, gt: &Image<T>, kind: PixelLoss) -> Result<T> {
    check_dims("pixel loss", gt.dims(), pred.dims())?;
    if pred.channels() != gt.channels() {
        return Err(Error::InvalidParameter(format!(
            "channel mismatch: {} vs {}",
            pred.channels(),
            gt.channels()
        )));
    }
    let n = pred.as_slice().len();
    if n == 0 {
        return Ok(T::zero());
    }
    let mut acc = T::zero();
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let d = p - g;
        acc += match kind {
            PixelLoss::L1 => d.abs(),
            PixelLoss::Mse => d * d,
        };
    }
    Ok(acc / T::lit(n as f64))
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn bce_loss<T: Real>(pred: &Mask<T>, gt: &Mask<T>) -> Result<T> {
    check_dims("bce loss", gt.dims(), pred.dims())?;
    let n = pred.as_slice().len();
    if n == 0 {
        return Ok(T::zero());
    }
    let eps = T::lit(BCE_EPS);
    let one = T::one();
    let mut acc = T::zero();
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let p = p.max(eps).min(one - eps);
        acc -= g * p.ln() + (one - g) * (one - p).ln();
    }
    Ok(acc / T::lit(n as f64))
}

/// Squared forward-difference penalty:
/// `sum_{i>=1,j} (m[i][j]-m[i-1][j])^2 + sum_{i,j>=1} (m[i][j]-m[i][j-1])^2`
/// with `i` the row index.
pub fn tv_loss<T: Real>(mask: &Mask<T>) -> T {
    tv_of(mask.width(), mask.height(), |x, y| mask.get(x, y))
}

pub(crate) fn tv_of<T: Real>(w: usize, h: usize, m: impl Fn(usize, usize) -> T) -> T {
    let mut acc = T::zero();
    for y in 0..h {
        for x in 0..w {
            let v = m(x, y);
            if y >= 1 {
                let d = v - m(x, y - 1);
                acc += d * d;
            }
            if x >= 1 {
                let d = v - m(x - 1, y);
                acc += d * d;
            }
        }
    }
    acc
}

/// Gradient of the [`tv_loss`] sum with respect to every entry.
pub(crate) fn tv_gradient<T: Real>(w: usize, h: usize, m: impl Fn(usize, usize) -> T) -> Vec<T> {
    let two = T::lit(2.0);
    let mut g = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let v = m(x, y);
            if y >= 1 {
                let d = two * (v - m(x, y - 1));
                g[y * w + x] += d;
                g[(y - 1) * w + x] -= d;
            }
            if x >= 1 {
                let d = two * (v - m(x - 1, y));
                g[y * w + x] += d;
                g[y * w + x - 1] -= d;
            }
        }
    }
    g
}

/// Patch-wise discriminator scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid<T> {
    pub width: usize,
    pub height: usize,
    pub scores: Vec<T>,
}

impl<T: Real> ScoreGrid<T> {
    pub fn new(width: usize, height: usize, scores: Vec<T>) -> Result<Self> {
        check_dims("score grid", (width * height, 1), (scores.len(), 1))?;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter("non-finite discriminator score".into()));
        }
        Ok(Self {
            width,
            height,
            scores,
        })
    }

    pub fn filled(width: usize, height: usize, v: T) -> Self {
        Self {
            width,
            height,
            scores: vec![v; width * height],
        }
    }

    pub fn from_slice(scores: &[T]) -> Self {
        Self {
            width: scores.len(),
            height: 1,
            scores: scores.to_vec(),
        }
    }
}

/// `sum D(fake)^2`.
pub fn lsgan_generator_loss<T: Real>(fake: &ScoreGrid<T>) -> T {
    fake.scores.iter().map(|&s| s * s).sum()
}

/// `sum (D(fake) + 1)^2 + sum (D(real) - 1)^2`.
pub fn lsgan_discriminator_loss<T: Real>(fake: &ScoreGrid<T>, real: &ScoreGrid<T>) -> T {
    let one = T::one();
    let f: T = fake.scores.iter().map(|&s| (s + one) * (s + one)).sum();
    let r: T = real.scores.iter().map(|&s| (s - one) * (s - one)).sum();
    f + r
}

/// Fusion-mask objective: BCE against the reference plus [`tv_loss`].
pub fn mask_loss<T: Real>(pred: &Mask<T>, gt: &Mask<T>) -> Result<T> {
    Ok(bce_loss(pred, gt)? + tv_loss(pred))
}

/// Weights of the generator objective terms.
///
/// The perceptual slot is kept for completeness; nothing in this crate
/// computes a perceptual distance, so its default weight is zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mask: f64,
    pub l1: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mask: 1.0,
            l1: 1.0,
            perceptual: 0.0,
            adversarial: 1.0,
        }
    }
}

/// Individual generator terms, already evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeneratorTerms<T> {
    pub mask: T,
    pub l1: T,
    pub perceptual: Option<T>,
    pub adversarial: T,
}

impl LossWeights {
    pub fn total<T: Real>(&self, t: &GeneratorTerms<T>) -> T {
        let perc = t.perceptual.unwrap_or_else(T::zero);
        T::lit(self.mask) * t.mask
            + T::lit(self.l1) * t.l1
            + T::lit(self.perceptual) * perc
            + T::lit(self.adversarial) * t.adversarial
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(w: usize, h: usize, v: &[f64]) -> Mask<f64> {
        Mask::from_fn(w, h, |x, y| v[y * w + x])
    }

    #[test]
    fn pixel_losses() {
        let a = Image::filled(3, 2, 3, 0.0);
        let b = Image::filled(3, 2, 3, 0.5);
        assert_eq!(pixel_loss(&a, &a, PixelLoss::L1).unwrap(), 0.0);
        assert_eq!(pixel_loss(&a, &a, PixelLoss::Mse).unwrap(), 0.0);
        assert_eq!(pixel_loss(&a, &b, PixelLoss::L1).unwrap(), 0.5);
        assert_eq!(pixel_loss(&a, &b, PixelLoss::Mse).unwrap(), 0.25);
        let p = Image::<f64>::filled(1, 1, 1, 0.2);
        let g = Image::filled(1, 1, 1, 0.6);
        assert!((pixel_loss(&p, &g, PixelLoss::L1).unwrap() - 0.4).abs() < 1e-15);
        assert!(pixel_loss(&a, &Image::filled(2, 2, 3, 0.0), PixelLoss::L1).is_err());
    }

    #[test]
    fn bce_values() {
        let one = Mask::<f64>::ones(2, 2);
        let zero = Mask::<f64>::zeros(2, 2);
        let half = Mask::filled(2, 2, 0.5);
        assert!(bce_loss(&one, &one).unwrap() <= 1.2e-6);
        assert!(bce_loss(&zero, &zero).unwrap() <= 1.2e-6);
        assert!((bce_loss(&half, &one).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((bce_loss(&half, &zero).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(bce_loss(&half, &Mask::ones(1, 2)).is_err());
    }

    #[test]
    fn tv_values() {
        assert_eq!(tv_loss(&Mask::<f64>::filled(4, 3, 0.7)), 0.0);
        assert_eq!(tv_loss(&mask(2, 2, &[0.0, 1.0, 0.0, 1.0])), 2.0);
        // a single row only has horizontal terms
        assert!((tv_loss(&mask(4, 1, &[0.0, 0.5, 0.5, 1.0])) - 0.5).abs() < 1e-15);
        assert!((tv_loss(&mask(1, 3, &[0.0, 0.5, 1.0])) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tv_gradient_matches_differences() {
        let v: [f64; 6] = [0.1, 0.9, 0.4, 0.3, 0.8, 0.2];
        let g = tv_gradient(3, 2, |x, y| v[y * 3 + x]);
        let h = 1e-6;
        for i in 0..6 {
            let mut up = v;
            up[i] += h;
            let mut dn = v;
            dn[i] -= h;
            let fd = (tv_of(3, 2, |x, y| up[y * 3 + x]) - tv_of(3, 2, |x, y| dn[y * 3 + x])) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn lsgan_values() {
        assert_eq!(lsgan_generator_loss(&ScoreGrid::filled(3, 3, 0.0)), 0.0);
        assert_eq!(lsgan_generator_loss(&ScoreGrid::from_slice(&[1.0, -1.0])), 2.0);
        assert_eq!(lsgan_generator_loss(&ScoreGrid::from_slice(&[0.5])), 0.25);
        let neg = ScoreGrid::filled(4, 4, -1.0);
        let pos = ScoreGrid::filled(4, 4, 1.0);
        assert_eq!(lsgan_discriminator_loss(&neg, &pos), 0.0);
        let z = ScoreGrid::from_slice(&[0.0]);
        assert_eq!(lsgan_discriminator_loss(&z, &z), 2.0);
        assert_eq!(
            lsgan_discriminator_loss(&ScoreGrid::from_slice(&[1.0]), &ScoreGrid::from_slice(&[-1.0])),
            8.0
        );
        assert!(ScoreGrid::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn mask_loss_composition() {
        let one = Mask::<f64>::ones(3, 3);
        assert!(mask_loss(&one, &one).unwrap() < 1e-6);
        let m = mask(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        assert!((mask_loss(&m, &m).unwrap() - 2.0).abs() < 1e-6);
        let half = Mask::filled(3, 3, 0.5);
        assert!((mask_loss(&half, &one).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perceptual_weight_defaults_to_zero() {
        let w = LossWeights::default();
        let t = GeneratorTerms {
            mask: 1.0,
            l1: 2.0,
            perceptual: Some(100.0),
            adversarial: 0.5,
        };
        assert_eq!(w.total(&t), 3.5);
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative(v in proptest::collection::vec(0.0f64..1.0, 12), g in proptest::collection::vec(0.0f64..1.0, 12)) {
            let p = mask(4, 3, &v);
            let q = mask(4, 3, &g);
            prop_assert!(bce_loss(&p, &q).unwrap() >= 0.0);
            prop_assert!(tv_loss(&p) >= 0.0);
            let a = Image::from_fn(4, 3, 1, |x, y, _| v[y * 4 + x]);
            let b = Image::from_fn(4, 3, 1, |x, y, _| g[y * 4 + x]);
            prop_assert!(pixel_loss(&a, &b, PixelLoss::L1).unwrap() >= 0.0);
            prop_assert!(pixel_loss(&a, &b, PixelLoss::Mse).unwrap() >= 0.0);
        }

        #[test]
        fn tv_ignores_constant_offsets(v in proptest::collection::vec(0.0f64..0.5, 12), c in 0.0f64..0.5) {
            let a = tv_loss(&mask(4, 3, &v));
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = tv_loss(&mask(4, 3, &shifted));
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
