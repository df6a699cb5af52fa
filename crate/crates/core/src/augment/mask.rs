//! Spatial (pixel, patch) and transform-domain masking.

use rustfft::num_complex::Complex64;

use super::{Band, MaskDomain, MaskSpec};
use crate::error::{check_fraction, Error, Result};
use crate::tensor::{Grid, Image, Rng};
use crate::transforms::{self, TransformKind, HAAR_LEVELS};

/// What a masking call actually did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskStats {
    /// Size of the population units were drawn from: `T`, `N` or `|B|`.
    pub universe: usize,
    /// Units drawn per application (per channel for transform masking).
    pub selected: usize,
    /// Channels the mask was applied to.
    pub channels: Vec<usize>,
    /// Coefficients set to zero per channel; exceeds `selected` only when
    /// Hermitian mirrors are zeroed as well.
    pub zeroed_coefficients: Vec<usize>,
}

/// `ceil(ratio * n)`, computed so that products which are integral in exact
/// arithmetic (e.g. `0.07 * 100`) are not pushed up by binary rounding.
pub fn masked_count(ratio: f64, n: usize) -> usize {
    let exact = ratio * n as f64;
    let count = (exact - exact.abs() * 1e-12 - 1e-12).ceil();
    (count.max(0.0) as usize).min(n)
}

pub fn mask_pixels(image: &Image, ratio: f64, rng: &mut Rng) -> Result<Image> {
    mask_pixels_traced(image, ratio, rng).map(|(img, _)| img)
}

pub(crate) fn mask_pixels_traced(
    image: &Image,
    ratio: f64,
    rng: &mut Rng,
) -> Result<(Image, MaskStats)> {
    check_fraction("mask ratio", ratio)?;
    let total = image.pixel_count();
    let m = masked_count(ratio, total);
    let chosen = rng.sample_without_replacement(total, m)?;
    let mut out = image.clone();
    let c = image.channels();
    let data = out.as_mut_slice();
    for &p in &chosen {
        data[p * c..(p + 1) * c].fill(0.0);
    }
    let stats = MaskStats {
        universe: total,
        selected: m,
        channels: (0..c).collect(),
        zeroed_coefficients: vec![m; c],
    };
    Ok((out, stats))
}

pub fn mask_patches(image: &Image, ratio: f64, patch_size: usize, rng: &mut Rng) -> Result<Image> {
    mask_patches_traced(image, ratio, patch_size, rng).map(|(img, _)| img)
}

pub(crate) fn mask_patches_traced(
    image: &Image,
    ratio: f64,
    patch_size: usize,
    rng: &mut Rng,
) -> Result<(Image, MaskStats)> {
    check_fraction("mask ratio", ratio)?;
    let (h, w) = (image.height(), image.width());
    if patch_size == 0 || patch_size > h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch_size} invalid for {h}x{w} image"
        )));
    }
    // only whole patches form the grid; leftover border strips are never masked
    let grid_cols = w / patch_size;
    let total = (h / patch_size) * grid_cols;
    let m = masked_count(ratio, total);
    let chosen = rng.sample_without_replacement(total, m)?;
    let mut out = image.clone();
    let c = image.channels();
    for &patch in &chosen {
        let top = (patch / grid_cols) * patch_size;
        let left = (patch % grid_cols) * patch_size;
        for r in top..top + patch_size {
            let start = (r * w + left) * c;
            out.as_mut_slice()[start..start + patch_size * c].fill(0.0);
        }
    }
    let stats = MaskStats {
        universe: total,
        selected: m,
        channels: (0..c).collect(),
        zeroed_coefficients: vec![m * patch_size * patch_size; c],
    };
    Ok((out, stats))
}

/// Row/column ranges `[start, end)` of a band on an `h x w` coefficient grid.
pub fn band_bounds(h: usize, w: usize, band: Band) -> ((usize, usize), (usize, usize)) {
    match band {
        Band::Low => ((0, h / 4), (0, w / 4)),
        Band::Mid => ((h / 4, 3 * h / 4), (w / 4, 3 * w / 4)),
        Band::High => ((3 * h / 4, h), (3 * w / 4, w)),
        Band::All => ((0, h), (0, w)),
    }
}

/// Every `(u, v)` in the band, row-major.
pub fn band_indices(h: usize, w: usize, band: Band) -> Result<Vec<(usize, usize)>> {
    if band != Band::All && (h < 4 || w < 4) {
        return Err(Error::InvalidDimensions(format!(
            "frequency bands need at least 4x4 coefficients, got {h}x{w}"
        )));
    }
    let ((r0, r1), (c0, c1)) = band_bounds(h, w, band);
    Ok((r0..r1)
        .flat_map(|u| (c0..c1).map(move |v| (u, v)))
        .collect())
}

/// Draws `ceil(ratio * |B|)` distinct bins of `band`.
pub fn select_bins(
    h: usize,
    w: usize,
    band: Band,
    ratio: f64,
    rng: &mut Rng,
) -> Result<Vec<(usize, usize)>> {
    check_fraction("mask ratio", ratio)?;
    let bins = band_indices(h, w, band)?;
    let m = masked_count(ratio, bins.len());
    Ok(rng
        .sample_without_replacement(bins.len(), m)?
        .into_iter()
        .map(|i| bins[i])
        .collect())
}

#[inline]
fn hermitian_mirror(h: usize, w: usize, (u, v): (usize, usize)) -> (usize, usize) {
    ((h - u) % h, (w - v) % w)
}

/// Zeroes the given bins of one plane in the `kind` domain and transforms
/// back. Returns the plane and the number of coefficients zeroed.
pub fn mask_plane(
    plane: &Grid<f64>,
    kind: TransformKind,
    bins: &[(usize, usize)],
    symmetric: bool,
) -> Result<(Grid<f64>, usize)> {
    let (h, w) = (plane.rows(), plane.cols());
    match kind {
        TransformKind::Fourier => {
            let mut spec = transforms::fft2(plane);
            let zero = Complex64::new(0.0, 0.0);
            let mut touched = vec![false; h * w];
            for &bin in bins {
                touched[spec.offset(bin.0, bin.1)] = true;
                if symmetric {
                    let (mu, mv) = hermitian_mirror(h, w, bin);
                    touched[spec.offset(mu, mv)] = true;
                }
            }
            let mut zeroed = 0;
            for (coef, hit) in spec.as_mut_slice().iter_mut().zip(touched) {
                if hit {
                    *coef = zero;
                    zeroed += 1;
                }
            }
            Ok((transforms::ifft2(&spec), zeroed))
        }
        TransformKind::Cosine => {
            let mut coeffs = transforms::dct2(plane);
            for &(u, v) in bins {
                coeffs[(u, v)] = 0.0;
            }
            Ok((transforms::idct2(&coeffs), bins.len()))
        }
        TransformKind::Wavelet => {
            let mut coeffs = transforms::dwt2(plane, HAAR_LEVELS)?;
            for &(u, v) in bins {
                coeffs[(u, v)] = 0.0;
            }
            Ok((transforms::idwt2(&coeffs, HAAR_LEVELS)?, bins.len()))
        }
    }
}

pub fn mask_frequency(image: &Image, spec: &MaskSpec, rng: &mut Rng) -> Result<Image> {
    mask_frequency_traced(image, spec, rng).map(|(img, _)| img)
}

pub(crate) fn mask_frequency_traced(
    image: &Image,
    spec: &MaskSpec,
    rng: &mut Rng,
) -> Result<(Image, MaskStats)> {
    if spec.domain != MaskDomain::Frequency {
        return Err(Error::InvalidArgument(format!(
            "mask_frequency called with {:?} spec",
            spec.domain
        )));
    }
    check_fraction("mask ratio", spec.ratio)?;
    let (h, w) = (image.height(), image.width());
    let universe = band_indices(h, w, spec.band)?.len();
    let channels = spec.channels.resolve(image.channels())?;
    let mut out = image.clone();
    let mut zeroed = Vec::with_capacity(channels.len());
    let mut selected = 0;
    for &ch in &channels {
        let bins = select_bins(h, w, spec.band, spec.ratio, rng)?;
        selected = bins.len();
        if bins.is_empty() {
            zeroed.push(0);
            continue;
        }
        let (plane, count) = mask_plane(&image.plane(ch), spec.transform, &bins, spec.symmetric)?;
        out.set_plane(ch, &plane)?;
        zeroed.push(count);
    }
    if channels.is_empty() {
        selected = masked_count(spec.ratio, universe);
    }
    let stats = MaskStats {
        universe,
        selected,
        channels,
        zeroed_coefficients: zeroed,
    };
    Ok((out, stats))
}

/// Dispatches on `spec.domain`.
pub fn apply_mask(image: &Image, spec: &MaskSpec, rng: &mut Rng) -> Result<Image> {
    apply_mask_traced(image, spec, rng).map(|(img, _)| img)
}

pub fn apply_mask_traced(
    image: &Image,
    spec: &MaskSpec,
    rng: &mut Rng,
) -> Result<(Image, MaskStats)> {
    match spec.domain {
        MaskDomain::Pixel => mask_pixels_traced(image, spec.ratio, rng),
        MaskDomain::Patch => mask_patches_traced(image, spec.ratio, spec.patch_size, rng),
        MaskDomain::Frequency => mask_frequency_traced(image, spec, rng),
    }
}
