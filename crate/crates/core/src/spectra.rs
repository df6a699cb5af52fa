//! Averaged Fourier spectra of image sets for spotting periodic generator
//! artifacts.
//!
//! Every channel of every image is high-passed (minus its median-filtered
//! copy), standardized, transformed, and `log(1 + |F|)` is averaged over the
//! whole set. The result is centered and min-max scaled to `[0, 1]`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{save_image_with_comment, write_atomic};
use crate::tensor::{Grid, Image};
use crate::transforms::{fft2, fftshift};

pub const DEFAULT_DENOISE_RADIUS: usize = 3;

const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Mean log-magnitude, DC at `(H/2, W/2)`, scaled to `[0, 1]`.
    pub normalized: Grid<f64>,
    /// Mean linear magnitude of the standardized residuals, same layout.
    pub magnitude: Grid<f64>,
    pub samples: usize,
    pub channels: usize,
    pub denoise_radius: usize,
}

/// Median over a `(2r+1)^2` window with edge replication.
pub fn median_filter(plane: &Grid<f64>, radius: usize) -> Grid<f64> {
    let (rows, cols) = (plane.rows(), plane.cols());
    let r = radius as isize;
    let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
    Grid::from_fn(rows, cols, |y, x| {
        window.clear();
        for dy in -r..=r {
            let yy = (y as isize + dy).clamp(0, rows as isize - 1) as usize;
            for dx in -r..=r {
                let xx = (x as isize + dx).clamp(0, cols as isize - 1) as usize;
                window.push(plane[(yy, xx)]);
            }
        }
        let mid = window.len() / 2;
        *window.select_nth_unstable_by(mid, f64::total_cmp).1
    })
}

/// High-pass residual `x - median(x)` standardized to zero mean and unit
/// variance. Radius 0 skips the median step.
pub fn preprocess(plane: &Grid<f64>, denoise_radius: usize) -> Grid<f64> {
    let residual = if denoise_radius == 0 {
        plane.clone()
    } else {
        let med = median_filter(plane, denoise_radius);
        Grid::from_fn(plane.rows(), plane.cols(), |r, c| plane[(r, c)] - med[(r, c)])
    };
    let n = residual.len() as f64;
    let mean = residual.as_slice().iter().sum::<f64>() / n;
    let var = residual.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / var.max(VARIANCE_FLOOR).sqrt();
    residual.map(|v| (v - mean) * scale)
}

pub fn analyze(images: &[Image], denoise_radius: usize) -> Result<SpectrumReport> {
    let first = images
        .first()
        .ok_or_else(|| Error::Empty("spectrum analysis needs at least one image".into()))?;
    let (rows, cols, channels) = (first.height(), first.width(), first.channels());
    if let Some(bad) = images
        .iter()
        .find(|im| (im.height(), im.width(), im.channels()) != (rows, cols, channels))
    {
        return Err(Error::ShapeMismatch(format!(
            "mixed image sizes: {rows}x{cols}x{channels} and {}x{}x{}",
            bad.height(),
            bad.width(),
            bad.channels()
        )));
    }
    let mut log_sum = vec![0.0; rows * cols];
    let mut mag_sum = vec![0.0; rows * cols];
    for image in images {
        for ch in 0..channels {
            let spec = fft2(&preprocess(&image.plane(ch), denoise_radius));
            for ((l, m), z) in log_sum.iter_mut().zip(mag_sum.iter_mut()).zip(spec.as_slice()) {
                let a = z.norm();
                *l += a.ln_1p();
                *m += a;
            }
        }
    }
    let count = (images.len() * channels) as f64;
    let mean_log = Grid::new(rows, cols, log_sum.iter().map(|v| v / count).collect())?;
    let mean_mag = Grid::new(rows, cols, mag_sum.iter().map(|v| v / count).collect())?;
    Ok(SpectrumReport {
        normalized: min_max(&fftshift(&mean_log)),
        magnitude: fftshift(&mean_mag),
        samples: images.len(),
        channels,
        denoise_radius,
    })
}

/// Scales to `[0, 1]`; a flat grid maps to all zeros.
fn min_max(grid: &Grid<f64>) -> Grid<f64> {
    let lo = grid.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span <= 1e-12 * hi.abs().max(1.0) {
        return grid.map(|_| 0.0);
    }
    grid.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
}

impl SpectrumReport {
    pub fn rows(&self) -> usize {
        self.normalized.rows()
    }

    pub fn cols(&self) -> usize {
        self.normalized.cols()
    }

    /// Position in the centered grid of frequency `(u, v)` (cycles per
    /// image along rows and columns, negative values allowed).
    pub fn centered(&self, u: i64, v: i64) -> (usize, usize) {
        let (h, w) = (self.rows() as i64, self.cols() as i64);
        (
            (u + h / 2).rem_euclid(h) as usize,
            (v + w / 2).rem_euclid(w) as usize,
        )
    }

    /// Position of the largest normalized value (first in row-major order).
    pub fn argmax(&self) -> (usize, usize) {
        let data = self.normalized.as_slice();
        let mut best = 0;
        for (i, &v) in data.iter().enumerate() {
            if v > data[best] {
                best = i;
            }
        }
        (best / self.cols(), best % self.cols())
    }

    /// Mean magnitude at frequency `(u, v)` over the median magnitude of the
    /// surrounding `(2r+1)^2` window, centre excluded.
    pub fn peak_to_background(&self, u: i64, v: i64, radius: usize) -> Result<f64> {
        if radius == 0 {
            return Err(Error::InvalidArgument("background radius must be positive".into()));
        }
        let (h, w) = (self.rows() as i64, self.cols() as i64);
        let (pr, pc) = self.centered(u, v);
        let r = radius as i64;
        let mut ring = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dy != 0 || dx != 0 {
                    let y = (pr as i64 + dy).rem_euclid(h) as usize;
                    let x = (pc as i64 + dx).rem_euclid(w) as usize;
                    ring.push(self.magnitude[(y, x)]);
                }
            }
        }
        ring.sort_by(f64::total_cmp);
        let n = ring.len();
        let median = if n % 2 == 0 {
            (ring[n / 2 - 1] + ring[n / 2]) / 2.0
        } else {
            ring[n / 2]
        };
        Ok(self.magnitude[(pr, pc)] / median.max(f64::MIN_POSITIVE))
    }

    pub fn heatmap(&self) -> Result<Image> {
        let data = self.normalized.as_slice().iter().map(|&v| v as f32).collect();
        Image::new(self.rows(), self.cols(), 1, data)
    }

    /// Grayscale heatmap; the format follows the extension (`pgm` or `png`).
    pub fn render_heatmap(&self, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
        save_image_with_comment(path, &self.heatmap()?, comment)
    }

    /// Tab-separated grid of normalized values, one line per row, preceded
    /// by `#` lines with the analysis parameters.
    pub fn to_text(&self, header: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(h) = header {
            out.push_str(h);
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "# samples={} channels={} denoise_radius={} rows={} cols={}",
            self.samples,
            self.channels,
            self.denoise_radius,
            self.rows(),
            self.cols()
        );
        for r in 0..self.rows() {
            let row: Vec<String> = (0..self.cols())
                .map(|c| format!("{:.6}", self.normalized[(r, c)]))
                .collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn save_text(&self, path: impl AsRef<Path>, header: Option<&str>) -> Result<()> {
        write_atomic(path, self.to_text(header).as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_impulse_is_flat() {
        let mut g = Grid::filled(7, 7, 0.25);
        g[(3, 3)] = 9.0;
        let m = median_filter(&g, 1);
        assert!(m.as_slice().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn median_replicates_edges() {
        let g = Grid::from_fn(1, 5, |_, c| c as f64);
        let m = median_filter(&g, 1);
        assert_eq!(m.as_slice(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_images_give_zero_report() {
        let images = vec![Image::new(8, 8, 1, vec![0.4; 64]).unwrap(); 3];
        let report = analyze(&images, 1).unwrap();
        assert!(report.normalized.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(report.samples, 3);
    }

    #[test]
    fn errors_on_empty_or_mixed() {
        assert!(analyze(&[], 1).is_err());
        let a = Image::zeros(8, 8, 1).unwrap();
        let b = Image::zeros(8, 6, 1).unwrap();
        assert!(analyze(&[a, b], 1).is_err());
    }

    #[test]
    fn centered_coordinates() {
        let images = vec![Image::zeros(64, 64, 1).unwrap()];
        let report = analyze(&images, 0).unwrap();
        assert_eq!(report.centered(0, 0), (32, 32));
        assert_eq!(report.centered(8, 0), (40, 32));
        assert_eq!(report.centered(-8, 0), (24, 32));
        assert_eq!(report.centered(0, 40), (32, 8));
    }
}
