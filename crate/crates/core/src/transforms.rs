//! 2-D frequency transforms over single-channel planes.
//!
//! * Fourier: forward unnormalized, `F(u,v) = sum_x sum_y I(x,y) e^{-2 pi i (ux/H + vy/W)}`;
//!   inverse carries the `1/(H W)` factor. Any size is supported (rustfft
//!   picks mixed-radix or Bluestein plans as needed).
//! * Cosine: orthonormal DCT-II forward, DCT-III inverse, applied separably.
//! * Wavelet: orthonormal Haar, Mallat layout (the approximation band of
//!   each level sits in the top-left quadrant of the previous one).

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Grid, Spectrum};

/// Decomposition depth used when masking in the wavelet domain.
pub const HAAR_LEVELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    #[default]
    Fourier,
    Cosine,
    Wavelet,
}

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Fourier => "fourier",
            TransformKind::Cosine => "cosine",
            TransformKind::Wavelet => "wavelet",
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fourier" | "fft" => Ok(TransformKind::Fourier),
            "cosine" | "dct" => Ok(TransformKind::Cosine),
            "wavelet" | "haar" | "dwt" => Ok(TransformKind::Wavelet),
            other => Err(Error::InvalidArgument(format!("unknown transform '{other}'"))),
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(grid: &mut Spectrum, inverse: bool) {
    let (rows, cols) = (grid.rows(), grid.cols());
    let (row_plan, col_plan) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            (p.plan_fft_inverse(cols), p.plan_fft_inverse(rows))
        } else {
            (p.plan_fft_forward(cols), p.plan_fft_forward(rows))
        }
    });
    let data = grid.as_mut_slice();
    for row in data.chunks_exact_mut(cols) {
        row_plan.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[r * cols + c];
        }
        col_plan.process(&mut column);
        for r in 0..rows {
            data[r * cols + c] = column[r];
        }
    }
}

pub fn fft2(plane: &Grid<f64>) -> Spectrum {
    let mut spec = plane.map(|&v| Complex64::new(v, 0.0));
    fft_in_place(&mut spec, false);
    spec
}

/// Full complex inverse with `1/(H W)` normalization.
pub fn ifft2_complex(spectrum: &Spectrum) -> Spectrum {
    let mut out = spectrum.clone();
    fft_in_place(&mut out, true);
    let norm = 1.0 / out.len() as f64;
    for v in out.as_mut_slice() {
        *v *= norm;
    }
    out
}

/// Real part of the normalized inverse transform.
pub fn ifft2(spectrum: &Spectrum) -> Grid<f64> {
    ifft2_complex(spectrum).map(|c| c.re)
}

/// Orthonormal DCT-II basis, `basis[k * n + i] = a_k cos(pi (2i+1) k / 2n)`.
fn dct_basis(n: usize) -> Vec<f64> {
    let mut basis = vec![0.0; n * n];
    for k in 0..n {
        let a = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            basis[k * n + i] = a * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    basis
}

fn separable(plane: &Grid<f64>, inverse: bool) -> Grid<f64> {
    let (rows, cols) = (plane.rows(), plane.cols());
    let row_basis = dct_basis(cols);
    let col_basis = dct_basis(rows);
    let src = plane.as_slice();
    let mut tmp = vec![0.0; rows * cols];
    // along each row
    for r in 0..rows {
        let line = &src[r * cols..(r + 1) * cols];
        for k in 0..cols {
            let mut acc = 0.0;
            for (i, &x) in line.iter().enumerate() {
                acc += x * if inverse {
                    row_basis[i * cols + k]
                } else {
                    row_basis[k * cols + i]
                };
            }
            tmp[r * cols + k] = acc;
        }
    }
    // along each column
    let mut out = vec![0.0; rows * cols];
    for c in 0..cols {
        for k in 0..rows {
            let mut acc = 0.0;
            for i in 0..rows {
                acc += tmp[i * cols + c]
                    * if inverse {
                        col_basis[i * rows + k]
                    } else {
                        col_basis[k * rows + i]
                    };
            }
            out[k * cols + c] = acc;
        }
    }
    Grid::new(rows, cols, out).expect("shape preserved")
}

pub fn dct2(plane: &Grid<f64>) -> Grid<f64> {
    separable(plane, false)
}

pub fn idct2(coeffs: &Grid<f64>) -> Grid<f64> {
    separable(coeffs, true)
}

fn check_haar_dims(rows: usize, cols: usize, levels: usize) -> Result<()> {
    let block = 1usize
        .checked_shl(levels as u32)
        .ok_or_else(|| Error::InvalidArgument(format!("{levels} wavelet levels")))?;
    if rows % block != 0 || cols % block != 0 {
        return Err(Error::InvalidDimensions(format!(
            "{rows}x{cols} is not divisible by 2^{levels}"
        )));
    }
    Ok(())
}

const HALF_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Multi-level orthonormal Haar decomposition.
pub fn dwt2(plane: &Grid<f64>, levels: usize) -> Result<Grid<f64>> {
    let (rows, cols) = (plane.rows(), plane.cols());
    check_haar_dims(rows, cols, levels)?;
    let mut data = plane.as_slice().to_vec();
    let (mut h, mut w) = (rows, cols);
    let mut scratch = vec![0.0; rows.max(cols)];
    for _ in 0..levels {
        for r in 0..h {
            let row = &mut data[r * cols..r * cols + w];
            for i in 0..w / 2 {
                scratch[i] = (row[2 * i] + row[2 * i + 1]) * HALF_SQRT2;
                scratch[w / 2 + i] = (row[2 * i] - row[2 * i + 1]) * HALF_SQRT2;
            }
            row.copy_from_slice(&scratch[..w]);
        }
        for c in 0..w {
            for i in 0..h / 2 {
                let a = data[2 * i * cols + c];
                let b = data[(2 * i + 1) * cols + c];
                scratch[i] = (a + b) * HALF_SQRT2;
                scratch[h / 2 + i] = (a - b) * HALF_SQRT2;
            }
            for r in 0..h {
                data[r * cols + c] = scratch[r];
            }
        }
        h /= 2;
        w /= 2;
    }
    Grid::new(rows, cols, data)
}

pub fn idwt2(coeffs: &Grid<f64>, levels: usize) -> Result<Grid<f64>> {
    let (rows, cols) = (coeffs.rows(), coeffs.cols());
    check_haar_dims(rows, cols, levels)?;
    let mut data = coeffs.as_slice().to_vec();
    let mut scratch = vec![0.0; rows.max(cols)];
    for level in (0..levels).rev() {
        let (h, w) = (rows >> level, cols >> level);
        for c in 0..w {
            for i in 0..h / 2 {
                let a = data[i * cols + c];
                let d = data[(h / 2 + i) * cols + c];
                scratch[2 * i] = (a + d) * HALF_SQRT2;
                scratch[2 * i + 1] = (a - d) * HALF_SQRT2;
            }
            for r in 0..h {
                data[r * cols + c] = scratch[r];
            }
        }
        for r in 0..h {
            let row = &mut data[r * cols..r * cols + w];
            for i in 0..w / 2 {
                scratch[2 * i] = (row[i] + row[w / 2 + i]) * HALF_SQRT2;
                scratch[2 * i + 1] = (row[i] - row[w / 2 + i]) * HALF_SQRT2;
            }
            row.copy_from_slice(&scratch[..w]);
        }
    }
    Grid::new(rows, cols, data)
}

fn roll<T: Clone>(grid: &Grid<T>, down: usize, right: usize) -> Grid<T> {
    let (rows, cols) = (grid.rows(), grid.cols());
    Grid::from_fn(rows, cols, |r, c| {
        grid[((r + rows - down % rows) % rows, (c + cols - right % cols) % cols)].clone()
    })
}

/// Moves the DC bin from `(0, 0)` to `(H/2, W/2)` (integer division).
pub fn fftshift<T: Clone>(grid: &Grid<T>) -> Grid<T> {
    roll(grid, grid.rows() / 2, grid.cols() / 2)
}

/// Exact inverse of [`fftshift`] for any size.
pub fn ifftshift<T: Clone>(grid: &Grid<T>) -> Grid<T> {
    let (rows, cols) = (grid.rows(), grid.cols());
    roll(grid, rows - rows / 2, cols - cols / 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn random_plane(rows: usize, cols: usize, seed: u64) -> Grid<f64> {
        let mut rng = Rng::new(seed);
        Grid::from_fn(rows, cols, |_, _| rng.unit())
    }

    fn max_abs(a: &Grid<f64>, b: &Grid<f64>) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_image_is_dc_only() {
        let (h, w, c) = (6, 10, 0.7);
        let spec = fft2(&Grid::filled(h, w, c));
        for r in 0..h {
            for col in 0..w {
                let v = spec[(r, col)];
                if (r, col) == (0, 0) {
                    assert!((v.re - c * (h * w) as f64).abs() < 1e-6 * (h * w) as f64);
                } else {
                    assert!(v.norm() < 1e-6 * (h * w) as f64);
                }
            }
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut g = Grid::filled(5, 4, 0.0);
        g[(0, 0)] = 1.0;
        for v in fft2(&g).as_slice() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let z = Grid::filled(4, 4, Complex64::new(0.0, 0.0));
        assert!(ifft2(&z).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fourier_round_trip_64() {
        let x = random_plane(64, 64, 1);
        assert!(max_abs(&ifft2(&fft2(&x)), &x) < 1e-4);
    }

    #[test]
    fn hermitian_spectrum_inverts_to_real() {
        // symmetrize a random spectrum: S(u,v) = (R(u,v) + conj R(-u,-v)) / 2
        let (h, w) = (9, 12);
        let mut rng = Rng::new(4);
        let raw = Grid::from_fn(h, w, |_, _| Complex64::new(rng.normal(), rng.normal()));
        let sym = Grid::from_fn(h, w, |u, v| {
            (raw[(u, v)] + raw[((h - u) % h, (w - v) % w)].conj()) * 0.5
        });
        let residual = ifft2_complex(&sym)
            .as_slice()
            .iter()
            .map(|c| c.im.abs())
            .fold(0.0, f64::max);
        assert!(residual < 1e-5, "imaginary residual {residual}");
    }

    #[test]
    fn linearity() {
        let x = random_plane(7, 11, 2);
        let y = random_plane(7, 11, 3);
        let (a, b) = (0.3, -1.7);
        let combo = Grid::from_fn(7, 11, |r, c| a * x[(r, c)] + b * y[(r, c)]);
        let (fx, fy, fc) = (fft2(&x), fft2(&y), fft2(&combo));
        for i in 0..fc.len() {
            let expect = fx.as_slice()[i] * a + fy.as_slice()[i] * b;
            assert!((fc.as_slice()[i] - expect).norm() < 1e-5);
        }
    }

    #[test]
    fn dct_of_constant_is_dc_only() {
        let d = dct2(&Grid::filled(6, 8, 0.25));
        for (i, v) in d.as_slice().iter().enumerate() {
            if i == 0 {
                assert!((v - 0.25 * (48f64).sqrt()).abs() < 1e-12);
            } else {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dct_round_trip_32() {
        let x = random_plane(32, 32, 5);
        assert!(max_abs(&idct2(&dct2(&x)), &x) < 1e-4);
    }

    #[test]
    fn haar_constant_has_no_detail() {
        let c = dwt2(&Grid::filled(8, 8, 0.5), 1).unwrap();
        for r in 0..8 {
            for col in 0..8 {
                if r >= 4 || col >= 4 {
                    assert!(c[(r, col)].abs() < 1e-12);
                } else {
                    assert!((c[(r, col)] - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn haar_round_trip_and_energy() {
        let x = random_plane(64, 64, 6);
        let c = dwt2(&x, 2).unwrap();
        assert!(max_abs(&idwt2(&c, 2).unwrap(), &x) < 1e-4);
        let e = |g: &Grid<f64>| g.as_slice().iter().map(|v| v * v).sum::<f64>();
        assert!((e(&c) - e(&x)).abs() / e(&x) < 1e-4);
    }

    #[test]
    fn haar_rejects_indivisible_sizes() {
        assert!(dwt2(&Grid::filled(6, 8, 0.0), 2).is_err());
        assert!(idwt2(&Grid::filled(8, 10, 0.0), 2).is_err());
    }

    #[test]
    fn shift_moves_dc_to_center() {
        let mut g = Grid::filled(4, 4, 0.0);
        g[(0, 0)] = 1.0;
        let s = fftshift(&g);
        assert_eq!(s[(2, 2)], 1.0);
        assert_eq!(s.as_slice().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn double_shift_even_is_identity() {
        let x = random_plane(8, 8, 8);
        assert_eq!(fftshift(&fftshift(&x)), x);
    }

    #[test]
    fn odd_double_shift_matches_index_oracle() {
        let x = random_plane(5, 5, 9);
        let twice = fftshift(&fftshift(&x));
        // two shifts by floor(5/2) = 2 move every entry down/right by 4 = -1 mod 5
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(twice[((r + 4) % 5, (c + 4) % 5)], x[(r, c)]);
            }
        }
        assert_eq!(ifftshift(&fftshift(&x)), x);
    }

    #[test]
    fn transform_names_parse() {
        for kind in [TransformKind::Fourier, TransformKind::Cosine, TransformKind::Wavelet] {
            assert_eq!(kind.name().parse::<TransformKind>().unwrap(), kind);
        }
        assert_eq!(TransformKind::default(), TransformKind::Fourier);
        assert!("zak".parse::<TransformKind>().is_err());
    }
}
