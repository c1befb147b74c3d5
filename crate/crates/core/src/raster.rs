//! Pixel containers: multi-channel images, soft masks and integer label maps.
//!
//! All grids are row-major with `(x, y)` addressing, `x` along the width.

use crate::error::{check_dims, Result};
use crate::scalar::Real;

/// `width x height x channels` grid of intensities, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        assert!(channels > 0, "an image needs at least one channel");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds an image from `f(x, y, channel)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        check_dims(
            "image buffer length",
            (width * height * channels, 1),
            (data.len(), 1),
        )?;
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
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
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Single-channel luminance (Rec. 601 weights for three channels,
    /// channel mean otherwise).
    pub fn to_luma(&self) -> Image<T> {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
        Image::from_fn(self.width, self.height, 1, |x, y, _| {
            let p = self.pixel(x, y);
            if self.channels == 3 {
                r * p[0] + g * p[1] + b * p[2]
            } else {
                p.iter().copied().sum::<T>() / T::lit(self.channels as f64)
            }
        })
    }

    /// Appends the channels of `other` after this image's channels.
    pub fn stack(&self, other: &Image<T>) -> Result<Image<T>> {
        check_dims("stacked image", self.dims(), other.dims())?;
        let c = self.channels + other.channels;
        Ok(Image::from_fn(self.width, self.height, c, |x, y, k| {
            if k < self.channels {
                self.get(x, y, k)
            } else {
                other.get(x, y, k - self.channels)
            }
        }))
    }

    /// Converts every intensity to another scalar type.
    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }
}

/// Soft per-pixel weight in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> Mask<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![clamp01(value); width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::zero())
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::one())
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp01(f(x, y)));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_bools(width: usize, height: usize, bits: &[bool]) -> Self {
        assert_eq!(bits.len(), width * height);
        Self {
            width,
            height,
            data: bits
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        }
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
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = clamp01(v);
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == T::zero() || v == T::one())
    }

    /// `v >= threshold` per pixel.
    pub fn binarize(&self, threshold: T) -> Vec<bool> {
        self.data.iter().map(|&v| v >= threshold).collect()
    }

    pub fn count_above(&self, threshold: T) -> usize {
        self.data.iter().filter(|&&v| v >= threshold).count()
    }

    /// Binary dilation of `v >= 0.5` by a Euclidean disk of `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Mask<T> {
        let bits = self.binarize(T::lit(0.5));
        let r = radius as isize;
        let (w, h) = (self.width as isize, self.height as isize);
        let mut out = vec![false; bits.len()];
        for y in 0..h {
            for x in 0..w {
                if !bits[(y * w + x) as usize] {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy > r * r {
                            continue;
                        }
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < w && ny < h {
                            out[(ny * w + nx) as usize] = true;
                        }
                    }
                }
            }
        }
        Mask::from_bools(self.width, self.height, &out)
    }

    pub fn to_image(&self) -> Image<T> {
        Image::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y))
    }

    pub fn cast<U: Real>(&self) -> Mask<U> {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

#[inline]
fn clamp01<T: Real>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Integer label raster; `0` means "not covered".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartMap {
    width: usize,
    height: usize,
    data: Vec<u32>,
}

impl PartMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u32>) -> Result<Self> {
        check_dims("part map buffer length", (width * height, 1), (data.len(), 1))?;
        Ok(Self {
            width,
            height,
            data,
        })
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
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u32) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.data
    }

    /// Binary mask of pixels whose label is in `labels`.
    pub fn mask_of<T: Real>(&self, labels: &[u32]) -> Mask<T> {
        let bits: Vec<bool> = self.data.iter().map(|l| labels.contains(l)).collect();
        Mask::from_bools(self.width, self.height, &bits)
    }

    /// Binary mask of all nonzero labels.
    pub fn coverage<T: Real>(&self) -> Mask<T> {
        let bits: Vec<bool> = self.data.iter().map(|&l| l != 0).collect();
        Mask::from_bools(self.width, self.height, &bits)
    }

    /// Labels as a one-channel real image.
    pub fn to_image<T: Real>(&self) -> Image<T> {
        Image::from_fn(self.width, self.height, 1, |x, y, _| {
            T::lit(self.get(x, y) as f64)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_values_are_clamped() {
        let m = Mask::<f64>::from_fn(2, 1, |x, _| if x == 0 { -1.0 } else { 3.0 });
        assert_eq!(m.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn dilation_grows_by_radius() {
        let mut m = Mask::<f64>::zeros(9, 9);
        m.set(4, 4, 1.0);
        let d = m.dilate(2);
        assert_eq!(d.get(6, 4), 1.0);
        assert_eq!(d.get(4, 2), 1.0);
        assert_eq!(d.get(6, 6), 0.0);
        assert_eq!(d.count_above(0.5), 13);
    }

    #[test]
    fn luma_uses_rec601_weights() {
        let img = Image::<f64>::from_fn(1, 1, 3, |_, _, c| [1.0, 0.0, 0.0][c]);
        assert!((img.to_luma().get(0, 0, 0) - 0.299).abs() < 1e-12);
    }
}
