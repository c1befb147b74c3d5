//! Image-quality metrics that need no learned model: SSIM and mask IoU.

use crate::error::{check_dims, Error, Result};
use crate::raster::{Image, Mask};
use crate::scalar::Real;

/// Gaussian window parameters and stabilizers for [`ssim`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the intensities.
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

/// Mean structural similarity over all fully contained windows.
/// Multi-channel inputs are reduced to luminance first.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    ssim_with(a, b, &SsimParams::default())
}

pub fn ssim_with<T: Real>(a: &Image<T>, b: &Image<T>, params: &SsimParams) -> Result<T> {
    check_dims("ssim", a.dims(), b.dims())?;
    let n = params.window;
    let (w, h) = a.dims();
    if w < n || h < n {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            reason: format!("SSIM needs at least {n}x{n}"),
        });
    }
    let (la, lb) = (a.to_luma(), b.to_luma());
    let kernel = gaussian_window::<T>(n, params.sigma);
    let c1 = T::lit((params.k1 * params.range).powi(2));
    let c2 = T::lit((params.k2 * params.range).powi(2));
    let two = T::lit(2.0);

    let mut total = T::zero();
    let mut count = 0usize;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) =
                (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
            for j in 0..n {
                for i in 0..n {
                    let k = kernel[j * n + i];
                    let pa = la.get(x0 + i, y0 + j, 0);
                    let pb = lb.get(x0 + i, y0 + j, 0);
                    ma += k * pa;
                    mb += k * pb;
                    saa += k * pa * pa;
                    sbb += k * pb * pb;
                    sab += k * pa * pb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (two * ma * mb + c1) * (two * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / T::lit(count as f64))
}

fn gaussian_window<T: Real>(n: usize, sigma: f64) -> Vec<T> {
    let c = (n as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64 - c, (i / n) as f64 - c);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k.into_iter().map(T::lit).collect()
}

/// Intersection over union after binarizing both masks at `threshold`.
/// Two empty masks score `1`.
pub fn iou<T: Real>(pred: &Mask<T>, gt: &Mask<T>, threshold: T) -> Result<T> {
    check_dims("iou", gt.dims(), pred.dims())?;
    if !(threshold > T::zero() && threshold < T::one()) {
        return Err(Error::InvalidParameter(format!(
            "iou threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let (p, g) = (p >= threshold, g >= threshold);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    if union == 0 {
        return Ok(T::one());
    }
    Ok(T::lit(inter as f64) / T::lit(union as f64))
}

/// One evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub image_id: String,
    pub ssim: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, image_id: impl Into<String>, ssim: f64, iou: f64) {
        self.rows.push(MetricRow {
            image_id: image_id.into(),
            ssim,
            iou,
        });
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    pub fn mean_iou(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.iou))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn self_similarity_is_one() {
        let a = Image::from_fn(16, 14, 3, |x, y, c| ((x * 7 + y * 3 + c * 5) % 13) as f64 / 13.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let g = Image::<f64>::filled(12, 12, 1, 0.5);
        assert!((ssim(&g, &g).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_images_match_closed_form() {
        let a = Image::filled(12, 12, 1, 0.25);
        let b = Image::filled(12, 12, 1, 0.75);
        let c1 = 1e-4;
        let expect = (2.0 * 0.25 * 0.75 + c1) / (0.25f64.powi(2) + 0.75f64.powi(2) + c1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_and_mismatched() {
        let a = Image::<f64>::filled(10, 20, 1, 0.0);
        assert!(matches!(ssim(&a, &a), Err(Error::ImageTooSmall { .. })));
        let b = Image::<f64>::filled(12, 12, 1, 0.0);
        let c = Image::<f64>::filled(13, 12, 1, 0.0);
        assert!(ssim(&b, &c).is_err());
    }

    #[test]
    fn iou_examples() {
        let full = Mask::<f64>::ones(4, 4);
        let left = Mask::from_fn(4, 4, |x, _| if x < 2 { 1.0 } else { 0.0 });
        let right = Mask::from_fn(4, 4, |x, _| if x >= 2 { 1.0 } else { 0.0 });
        assert_eq!(iou(&left, &left, 0.5).unwrap(), 1.0);
        assert_eq!(iou(&left, &right, 0.5).unwrap(), 0.0);
        assert_eq!(iou(&left, &full, 0.5).unwrap(), 0.5);
        let empty = Mask::<f64>::zeros(4, 4);
        assert_eq!(iou(&empty, &empty, 0.5).unwrap(), 1.0);
        assert!(iou(&left, &full, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn ssim_and_iou_are_symmetric(seed in proptest::collection::vec(0.0f64..1.0, 2 * 144)) {
            let a = Image::from_fn(12, 12, 1, |x, y, _| seed[y * 12 + x]);
            let b = Image::from_fn(12, 12, 1, |x, y, _| seed[144 + y * 12 + x]);
            let s1 = ssim(&a, &b).unwrap();
            let s2 = ssim(&b, &a).unwrap();
            prop_assert!((s1 - s2).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s1));
            let ma = Mask::from_fn(12, 12, |x, y| seed[y * 12 + x]);
            let mb = Mask::from_fn(12, 12, |x, y| seed[144 + y * 12 + x]);
            let i1 = iou(&ma, &mb, 0.5).unwrap();
            prop_assert_eq!(i1, iou(&mb, &ma, 0.5).unwrap());
            prop_assert!((0.0..=1.0).contains(&i1));
        }
    }
}
