use super::PipelineSpec;
use crate::error::Result;
use crate::io::jpeg_round_trip;
use crate::tensor::{Image, Rng};

/// Normalized Gaussian taps with radius `ceil(3 sigma)`; `sigma <= 0` gives `[1]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let taps = gaussian_kernel(sigma);
    if taps.len() == 1 {
        return image.clone();
    }
    let radius = (taps.len() / 2) as i64;
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let src = image.as_slice();
    let mut tmp = vec![0.0f64; src.len()];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let sc = (col as i64 + k as i64 - radius).clamp(0, w as i64 - 1) as usize;
                    acc += t * src[(r * w + sc) * c + ch] as f64;
                }
                tmp[(r * w + col) * c + ch] = acc;
            }
        }
    }
    let mut out = image.clone();
    let dst = out.as_mut_slice();
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let sr = (r as i64 + k as i64 - radius).clamp(0, h as i64 - 1) as usize;
                    acc += t * tmp[(sr * w + col) * c + ch];
                }
                dst[(r * w + col) * c + ch] = acc as f32;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DegradeTrace {
    pub blur_sigma: Option<f64>,
    pub jpeg_quality: Option<u8>,
}

pub fn degrade(image: &Image, spec: &PipelineSpec, rng: &mut Rng) -> Result<Image> {
    degrade_traced(image, spec, rng).map(|(img, _)| img)
}

pub(crate) fn degrade_traced(
    image: &Image,
    spec: &PipelineSpec,
    rng: &mut Rng,
) -> Result<(Image, DegradeTrace)> {
    let mut trace = DegradeTrace::default();
    let mut out = image.clone();
    if rng.bernoulli(spec.blur_prob) {
        let (lo, hi) = spec.blur_sigma_range;
        let sigma = rng.uniform(lo, hi)?;
        out = gaussian_blur(&out, sigma);
        trace.blur_sigma = Some(sigma);
    }
    if rng.bernoulli(spec.jpeg_prob) {
        let (lo, hi) = spec.jpeg_quality_range;
        let quality = rng.uniform_int(lo as i64, hi as i64)? as u8;
        out = jpeg_round_trip(&out, quality)?;
        trace.jpeg_quality = Some(quality);
    }
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_are_normalized() {
        for sigma in [0.0, 0.3, 1.0, 2.5, 3.0] {
            let k = gaussian_kernel(sigma);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert_eq!(k.len() % 2, 1);
        }
        assert_eq!(gaussian_kernel(1.0).len(), 7);
    }

    #[test]
    fn constant_survives_blur() {
        let img = Image::from_fn(9, 11, 3, |_, _, _| 0.42).unwrap();
        let out = gaussian_blur(&img, 2.0);
        assert!(out.max_abs_diff(&img) < 1e-5);
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let mut rng = Rng::new(1);
        let img = Image::from_fn(8, 8, 1, |_, _, _| rng.unit() as f32).unwrap();
        let spec = PipelineSpec {
            blur_prob: 0.0,
            jpeg_prob: 0.0,
            ..PipelineSpec::default()
        };
        assert_eq!(degrade(&img, &spec, &mut rng).unwrap(), img);
    }

    #[test]
    fn certain_degradation_records_parameters() {
        let mut rng = Rng::new(2);
        let img = Image::from_fn(16, 16, 3, |_, _, _| rng.unit() as f32).unwrap();
        let spec = PipelineSpec {
            blur_prob: 1.0,
            jpeg_prob: 1.0,
            ..PipelineSpec::default()
        };
        let (out, trace) = degrade_traced(&img, &spec, &mut rng).unwrap();
        let sigma = trace.blur_sigma.unwrap();
        assert!((0.0..3.0).contains(&sigma));
        assert!((30..=100).contains(&trace.jpeg_quality.unwrap()));
        assert_ne!(out, img);
    }
}
