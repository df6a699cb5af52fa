//! Dense image and grid containers plus the seeded random source used by
//! every stochastic operation in the crate.
//!
//! Layout is row-major throughout. An [`Image`] stores interleaved channels,
//! so the value at `(row, col, ch)` lives at `(row * width + col) * channels + ch`.
//! A [`Grid`] is a single 2-D plane indexed `(row, col)`.

use std::ops::{Index, IndexMut};

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// A 2-D row-major plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDimensions(format!(
                "grid must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        assert!(rows > 0 && cols > 0, "grid must be at least 1x1");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows > 0 && cols > 0, "grid must be at least 1x1");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T> Grid<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize) -> usize {
        assert!(
            row < self.rows && col < self.cols,
            "index ({row}, {col}) out of range for {}x{} grid",
            self.rows,
            self.cols
        );
        row * self.cols + col
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;

    fn index(&self, (row, col): (usize, usize)) -> &T {
        &self.data[self.offset(row, col)]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    fn index_mut(&mut self, (row, col): (usize, usize)) -> &mut T {
        let i = self.offset(row, col);
        &mut self.data[i]
    }
}

/// Complex frequency-domain plane with DC at `(0, 0)`.
pub type Spectrum = Grid<Complex64>;

/// A raster image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::check_shape(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        Self::check_shape(height, width, channels)?;
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    fn check_shape(height: usize, width: usize, channels: usize) -> Result<()> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions(format!(
                "image must be at least 1x1, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidDimensions(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixel positions, `H * W`.
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize, ch: usize) -> usize {
        assert!(
            row < self.height && col < self.width && ch < self.channels,
            "index ({row}, {col}, {ch}) out of range for {}x{}x{} image",
            self.height,
            self.width,
            self.channels
        );
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.offset(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        let i = self.offset(row, col, ch);
        self.data[i] = value;
    }

    /// Copies one channel out as a double-precision plane.
    pub fn plane(&self, ch: usize) -> Grid<f64> {
        assert!(ch < self.channels, "channel {ch} out of range");
        let data = self
            .data
            .iter()
            .skip(ch)
            .step_by(self.channels)
            .map(|&v| v as f64)
            .collect();
        Grid {
            rows: self.height,
            cols: self.width,
            data,
        }
    }

    /// Overwrites one channel from a plane of matching size.
    pub fn set_plane(&mut self, ch: usize, plane: &Grid<f64>) -> Result<()> {
        if plane.rows() != self.height || plane.cols() != self.width {
            return Err(Error::ShapeMismatch(format!(
                "plane {}x{} does not match image {}x{}",
                plane.rows(),
                plane.cols(),
                self.height,
                self.width
            )));
        }
        assert!(ch < self.channels, "channel {ch} out of range");
        let channels = self.channels;
        for (dst, &src) in self
            .data
            .iter_mut()
            .skip(ch)
            .step_by(channels)
            .zip(plane.as_slice())
        {
            *dst = src as f32;
        }
        Ok(())
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::InvalidDimensions(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for r in top..top + height {
            let start = (r * self.width + left) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Image::new(height, width, c, data)
    }

    pub fn flip_horizontal(&self) -> Image {
        let c = self.channels;
        let mut out = self.clone();
        for r in 0..self.height {
            for col in 0..self.width {
                let src = (r * self.width + self.width - 1 - col) * c;
                let dst = (r * self.width + col) * c;
                out.data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        out
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.data.len(), other.data.len(), "image sizes differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Deterministic, cross-platform random source (ChaCha8 keyed by a 64-bit seed).
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for sub-task `stream`, derived from the seed
    /// only (not from how far this generator has advanced).
    pub fn child(&self, stream: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(1))))
    }

    /// Uniform real in `[lo, hi)`; returns `lo` when the interval is degenerate.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "uniform requires lo <= hi, got [{lo}, {hi})"
            )));
        }
        if lo == hi {
            return Ok(lo);
        }
        Ok(self.inner.random_range(lo..hi))
    }

    /// Uniform integer in the closed interval `[lo, hi]`.
    pub fn uniform_int(&mut self, lo: i64, hi: i64) -> Result<i64> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!(
                "uniform_int requires lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(self.inner.random_range(lo..=hi))
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `m` distinct indices from `0..n`, in selection order (partial Fisher-Yates).
    pub fn sample_without_replacement(&mut self, n: usize, m: usize) -> Result<Vec<usize>> {
        if m > n {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {m} distinct indices from {n}"
            )));
        }
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = self.inner.random_range(i..n);
            pool.swap(i, j);
        }
        pool.truncate(m);
        Ok(pool)
    }
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> Result<f64> {
    rng.uniform(lo, hi)
}

pub fn sample_without_replacement(rng: &mut Rng, n: usize, m: usize) -> Result<Vec<usize>> {
    rng.sample_without_replacement(n, m)
}
