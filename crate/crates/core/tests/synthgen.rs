use fdmask::metrics::auroc;
use fdmask::synthgen::{gen_fake, gen_real, ArtifactFamily};
use fdmask::transforms::fft2;
use fdmask::{Image, Rng};

const SIZE: usize = 64;

fn set(family: &ArtifactFamily, n: usize, seed: u64) -> Vec<Image> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| gen_fake(SIZE, 3, family, &mut rng).unwrap()).collect()
}

/// Mean |F|^2 of the mean-removed first channel, per bin.
fn mean_power(images: &[Image]) -> Vec<f64> {
    let mut acc = vec![0.0; SIZE * SIZE];
    for image in images {
        let mut plane = image.plane(0);
        let mean = plane.as_slice().iter().sum::<f64>() / plane.len() as f64;
        plane.as_mut_slice().iter_mut().for_each(|v| *v -= mean);
        for (a, z) in acc.iter_mut().zip(fft2(&plane).as_slice()) {
            *a += z.norm_sqr() / images.len() as f64;
        }
    }
    acc
}

fn radius(u: usize, v: usize) -> f64 {
    let fu = u.min(SIZE - u) as f64;
    let fv = v.min(SIZE - v) as f64;
    (fu * fu + fv * fv).sqrt()
}

#[test]
fn real_spectrum_falls_over_octaves() {
    let mut rng = Rng::new(50);
    let images: Vec<Image> = (0..100).map(|_| gen_real(SIZE, 3, &mut rng).unwrap()).collect();
    let power = mean_power(&images);
    let octaves = [(1.0, 2.0), (2.0, 4.0), (4.0, 8.0), (8.0, 16.0), (16.0, 32.0)];
    let means: Vec<f64> = octaves
        .iter()
        .map(|&(lo, hi)| {
            let (mut sum, mut n) = (0.0, 0);
            for u in 0..SIZE {
                for v in 0..SIZE {
                    let r = radius(u, v);
                    if r >= lo && r < hi {
                        sum += power[u * SIZE + v];
                        n += 1;
                    }
                }
            }
            sum / n as f64
        })
        .collect();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

/// Mean absolute log-ratio between the averaged magnitude at `(u + H/2, v)`
/// and the value a 2x nearest-neighbour upsample predicts from `(u, v)`:
/// the box response turns `|cos(pi u / H)|` into `|sin(pi u / H)|`.
fn replica_mismatch(images: &[Image]) -> f64 {
    let power = mean_power(images);
    let mag = |u: usize, v: usize| power[u * SIZE + v].sqrt();
    let (mut total, mut n) = (0.0, 0);
    for u in 1..SIZE / 4 {
        let t = (std::f64::consts::PI * u as f64 / SIZE as f64).tan();
        for v in 0..SIZE {
            if v == 0 || v == SIZE / 2 {
                continue;
            }
            let predicted = mag(u, v) * t;
            total += (mag(u + SIZE / 2, v) / predicted).ln().abs();
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn upsample_creates_spectral_replicas() {
    let up = replica_mismatch(&set(&ArtifactFamily::Upsample { factor: 2 }, 100, 51));
    let real = replica_mismatch(&set(&ArtifactFamily::None, 100, 52));
    assert!(up < 0.1, "upsample mismatch {up}");
    assert!(real > 0.3, "real mismatch {real}");
}

#[test]
fn pixel_means_do_not_separate_classes() {
    let real = set(&ArtifactFamily::None, 200, 53);
    let families = [
        ArtifactFamily::Grid { period: 8, amplitude: 0.05 },
        ArtifactFamily::Upsample { factor: 2 },
        ArtifactFamily::Peaks { count: 4, amplitude: 0.1, seed: 1 },
    ];
    for (k, family) in families.iter().enumerate() {
        let fake = set(family, 200, 54 + k as u64);
        let scores: Vec<f64> = real.iter().chain(&fake).map(Image::mean).collect();
        let labels: Vec<u8> = (0..400).map(|i| (i >= 200) as u8).collect();
        let a = auroc(&scores, &labels).unwrap();
        assert!(a.max(1.0 - a) < 0.6, "{family}: {a}");
    }
}
