//! Deterministic synthetic "real vs. generated" image corpus.
//!
//! Real images are coloured noise with a roughly `1/f` amplitude spectrum
//! plus a random low-frequency gradient. Fakes are the same base image
//! (same random stream) with one artifact family injected, so a pair
//! differs only by the artifact.
//!
//! On-disk layout produced by [`build_dataset`]:
//!
//! ```text
//! <dir>/index.tsv                         path <TAB> label <TAB> split <TAB> family
//! <dir>/<split>/<family>/{real,fake}_NNNN.{pgm,ppm}
//! ```
//!
//! Labels are `0` for real and `1` for fake. Lines starting with `#` in the
//! index are comments.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, quantize};
use crate::tensor::{Grid, Image, Rng};
use crate::transforms::{fft2, ifft2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ArtifactFamily {
    None,
    /// Additive periodic lattice with the given period (pixels) and
    /// standard deviation.
    Grid { period: usize, amplitude: f64 },
    /// Box downsampling followed by nearest-neighbour upsampling.
    Upsample { factor: usize },
    /// `count` sinusoids at high frequencies fixed by `seed` (shared by every
    /// image of the family), random phase per image, total standard deviation
    /// `amplitude`.
    Peaks { count: usize, amplitude: f64, seed: u64 },
}

impl ArtifactFamily {
    pub fn name(&self) -> String {
        match self {
            ArtifactFamily::None => "none".into(),
            ArtifactFamily::Grid { period, .. } => format!("grid-p{period}"),
            ArtifactFamily::Upsample { factor } => format!("upsample-x{factor}"),
            ArtifactFamily::Peaks { count, seed, .. } => format!("peaks-n{count}-s{seed}"),
        }
    }

    pub fn validate(&self, size: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            ArtifactFamily::None => Ok(()),
            ArtifactFamily::Grid { period, amplitude } => {
                if period < 2 || period > size {
                    return bad(format!("grid period {period} must be in 2..={size}"));
                }
                if !(amplitude > 0.0) {
                    return bad(format!("grid amplitude must be positive, got {amplitude}"));
                }
                Ok(())
            }
            ArtifactFamily::Upsample { factor } => {
                if factor != 2 && factor != 4 {
                    return bad(format!("upsample factor must be 2 or 4, got {factor}"));
                }
                if size % factor != 0 {
                    return bad(format!("size {size} is not divisible by factor {factor}"));
                }
                Ok(())
            }
            ArtifactFamily::Peaks {
                count, amplitude, ..
            } => {
                if count == 0 {
                    return bad("peak count must be positive".into());
                }
                if !(amplitude > 0.0) {
                    return bad(format!("peak amplitude must be positive, got {amplitude}"));
                }
                if size < 8 {
                    return bad(format!("size {size} too small for high-frequency peaks"));
                }
                Ok(())
            }
        }
    }

    /// Frequencies `(u, v)` (cycles per image, `v` may be negative) of a
    /// peaks family on a `size x size` image.
    pub fn peak_frequencies(&self, size: usize) -> Vec<(i64, i64)> {
        let ArtifactFamily::Peaks { count, seed, .. } = *self else {
            return Vec::new();
        };
        let mut rng = Rng::new(seed);
        let (lo, hi) = ((size / 4) as i64, (size / 2) as i64 - 1);
        (0..count)
            .map(|_| {
                let u = rng.uniform_int(lo, hi).expect("size checked");
                let v = rng.uniform_int(lo, hi).expect("size checked");
                let sign = if rng.bernoulli(0.5) { 1 } else { -1 };
                (u, sign * v)
            })
            .collect()
    }
}

impl fmt::Display for ArtifactFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Zero-mean, unit-variance noise whose amplitude spectrum falls as `1/f`.
fn pink_plane(size: usize, rng: &mut Rng) -> Grid<f64> {
    let white = Grid::from_fn(size, size, |_, _| rng.normal());
    let mut spec = fft2(&white);
    for u in 0..size {
        let fu = u.min(size - u) as f64;
        for v in 0..size {
            let fv = v.min(size - v) as f64;
            let f = (fu * fu + fv * fv).sqrt();
            spec[(u, v)] *= if f == 0.0 { 0.0 } else { 1.0 / f };
        }
    }
    let mut plane = ifft2(&spec);
    standardize(plane.as_mut_slice());
    plane
}

fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

/// Unclipped base image as per-channel planes.
fn base_planes(size: usize, channels: usize, rng: &mut Rng) -> Vec<Grid<f64>> {
    let luminance = pink_plane(size, rng);
    let brightness = rng.uniform(0.35, 0.65).expect("ordered");
    let contrast = rng.uniform(0.08, 0.14).expect("ordered");
    let gx = rng.uniform(-0.2, 0.2).expect("ordered");
    let gy = rng.uniform(-0.2, 0.2).expect("ordered");
    (0..channels)
        .map(|_| {
            let tint = rng.uniform(-0.05, 0.05).expect("ordered");
            let own = if channels > 1 {
                Some(pink_plane(size, rng))
            } else {
                None
            };
            Grid::from_fn(size, size, |r, c| {
                let tex = luminance[(r, c)] + own.as_ref().map_or(0.0, |o| 0.35 * o[(r, c)]);
                let ramp = gx * (c as f64 / size as f64 - 0.5) + gy * (r as f64 / size as f64 - 0.5);
                brightness + tint + contrast * tex + ramp
            })
        })
        .collect()
}

fn to_image(planes: &[Grid<f64>]) -> Image {
    let size = planes[0].rows();
    Image::from_fn(size, size, planes.len(), |r, c, ch| {
        // stored at 8-bit precision so in-memory and on-disk corpora agree
        quantize(planes[ch][(r, c)] as f32) as f32 / 255.0
    })
    .expect("valid shape")
}

fn check_size(size: usize, channels: usize) -> Result<()> {
    if size < 16 {
        return Err(Error::InvalidDimensions(format!(
            "synthetic images must be at least 16x16, got {size}"
        )));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidDimensions(format!(
            "channels must be 1 or 3, got {channels}"
        )));
    }
    Ok(())
}

pub fn gen_real(size: usize, channels: usize, rng: &mut Rng) -> Result<Image> {
    gen_fake(size, channels, &ArtifactFamily::None, rng)
}

pub fn gen_fake(
    size: usize,
    channels: usize,
    family: &ArtifactFamily,
    rng: &mut Rng,
) -> Result<Image> {
    check_size(size, channels)?;
    family.validate(size)?;
    let mut planes = base_planes(size, channels, rng);
    inject(&mut planes, family, rng);
    Ok(to_image(&planes))
}

fn inject(planes: &mut [Grid<f64>], family: &ArtifactFamily, rng: &mut Rng) {
    let size = planes[0].rows();
    let tau = std::f64::consts::TAU;
    match *family {
        ArtifactFamily::None => {}
        ArtifactFamily::Grid { period, amplitude } => {
            let px = rng.uniform(0.0, tau).expect("ordered");
            let py = rng.uniform(0.0, tau).expect("ordered");
            let p = period as f64;
            // fundamental plus a half-strength second harmonic on each axis
            let axis = |t: f64, phase: f64| {
                (tau * t / p + phase).cos() + 0.5 * (2.0 * (tau * t / p + phase)).cos()
            };
            let norm = amplitude / (2.0 * (0.5 + 0.125f64)).sqrt();
            let lattice =
                Grid::from_fn(size, size, |r, c| norm * (axis(c as f64, px) + axis(r as f64, py)));
            for plane in planes.iter_mut() {
                for (v, a) in plane.as_mut_slice().iter_mut().zip(lattice.as_slice()) {
                    *v += a;
                }
            }
        }
        ArtifactFamily::Upsample { factor } => {
            for plane in planes.iter_mut() {
                let low = size / factor;
                let scale = 1.0 / (factor * factor) as f64;
                let mut coarse = vec![0.0; low * low];
                for r in 0..size {
                    for c in 0..size {
                        coarse[(r / factor) * low + c / factor] += plane[(r, c)] * scale;
                    }
                }
                *plane = Grid::from_fn(size, size, |r, c| coarse[(r / factor) * low + c / factor]);
            }
        }
        ArtifactFamily::Peaks { amplitude, .. } => {
            let freqs = family.peak_frequencies(size);
            let phases: Vec<f64> = freqs
                .iter()
                .map(|_| rng.uniform(0.0, tau).expect("ordered"))
                .collect();
            let norm = amplitude * (2.0 / freqs.len() as f64).sqrt();
            let n = size as f64;
            let pattern = Grid::from_fn(size, size, |r, c| {
                freqs
                    .iter()
                    .zip(&phases)
                    .map(|(&(u, v), &ph)| {
                        (tau * (u as f64 * r as f64 + v as f64 * c as f64) / n + ph).cos()
                    })
                    .sum::<f64>()
                    * norm
            });
            for plane in planes.iter_mut() {
                for (v, a) in plane.as_mut_slice().iter_mut().zip(pattern.as_slice()) {
                    *v += a;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// Per-split multipliers of `count_per_class`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 1.0,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    fn get(&self, split: Split) -> f64 {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub image_size: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub count_per_class: usize,
    pub train_family: ArtifactFamily,
    pub test_families: Vec<ArtifactFamily>,
    #[serde(default)]
    pub splits: SplitFractions,
}

fn default_channels() -> usize {
    3
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        check_size(self.image_size, self.channels)?;
        if self.count_per_class == 0 {
            return Err(Error::InvalidArgument("count_per_class must be >= 1".into()));
        }
        for f in [self.splits.train, self.splits.val, self.splits.test] {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "split fractions must be non-negative, got {f}"
                )));
            }
        }
        self.train_family.validate(self.image_size)?;
        self.test_families
            .iter()
            .try_for_each(|f| f.validate(self.image_size))
    }

    /// Images per class in one split/family cell (at least one).
    pub fn cell_count(&self, split: Split) -> usize {
        ((self.splits.get(split) * self.count_per_class as f64).round() as usize).max(1)
    }

    /// Families present in each split: the training family everywhere, the
    /// test families (deduplicated) in the test split only.
    pub fn cells(&self) -> Vec<(Split, ArtifactFamily)> {
        let mut cells = vec![
            (Split::Train, self.train_family),
            (Split::Val, self.train_family),
            (Split::Test, self.train_family),
        ];
        for fam in &self.test_families {
            if !cells.iter().any(|(s, f)| *s == Split::Test && f == fam) {
                cells.push((Split::Test, *fam));
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    /// 0 = real, 1 = fake.
    pub label: u8,
    pub split: Split,
    pub family: String,
    /// Path relative to the dataset root.
    pub path: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Family names of a split in first-appearance order.
    pub fn families(&self, split: Split) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for s in self.samples.iter().filter(|s| s.split == split) {
            if !names.contains(&s.family) {
                names.push(s.family.clone());
            }
        }
        names
    }

    pub fn subset(&self, split: Split, family: &str) -> Vec<&Sample> {
        self.samples
            .iter()
            .filter(|s| s.split == split && s.family == family)
            .collect()
    }

    /// Reads `index.tsv` and every image it lists.
    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let index_path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Malformed {
                path: index_path.clone(),
                reason: format!("line {}: {reason}", lineno + 1),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, label, split, family] = fields[..] else {
                return Err(bad(format!("expected 4 fields, got {}", fields.len())));
            };
            let label = match label {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(format!("label must be 0 or 1, got '{other}'"))),
            };
            let split: Split = split.parse().map_err(|e: Error| bad(e.to_string()))?;
            samples.push(Sample {
                image: io::load_image(dir.join(path))?,
                label,
                split,
                family: family.to_string(),
                path: path.to_string(),
            });
        }
        if samples.is_empty() {
            return Err(Error::Empty(format!("{} lists no images", index_path.display())));
        }
        Ok(Dataset { samples })
    }
}

pub const INDEX_FILE: &str = "index.tsv";

fn cell_stream(split: Split, family_slot: usize, pair: usize) -> u64 {
    ((split as u64) << 48) | ((family_slot as u64) << 32) | pair as u64
}

/// Generates the whole corpus in memory, exactly as [`build_dataset`] would
/// write it.
pub fn generate(manifest: &DatasetManifest) -> Result<Dataset> {
    manifest.validate()?;
    let root = Rng::new(manifest.seed);
    let ext = if manifest.channels == 1 { "pgm" } else { "ppm" };
    let mut samples = Vec::new();
    for (slot, (split, family)) in manifest.cells().into_iter().enumerate() {
        let fname = family.name();
        for pair in 0..manifest.cell_count(split) {
            let rng = root.child(cell_stream(split, slot, pair));
            let real = gen_real(manifest.image_size, manifest.channels, &mut rng.clone())?;
            let fake = gen_fake(
                manifest.image_size,
                manifest.channels,
                &family,
                &mut rng.clone(),
            )?;
            for (label, image) in [(0u8, real), (1u8, fake)] {
                let kind = if label == 0 { "real" } else { "fake" };
                samples.push(Sample {
                    image,
                    label,
                    split,
                    family: fname.clone(),
                    path: format!("{}/{fname}/{kind}_{pair:04}.{ext}", split.name()),
                });
            }
        }
    }
    Ok(Dataset { samples })
}

pub fn index_text(dataset: &Dataset, header: Option<&str>) -> String {
    let mut text = String::new();
    if let Some(h) = header {
        for line in h.lines() {
            text.push_str("# ");
            text.push_str(line);
            text.push('\n');
        }
    }
    for s in &dataset.samples {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            s.path,
            s.label,
            s.split.name(),
            s.family
        ));
    }
    text
}

/// Writes images and `index.tsv` under `dir`. `header` becomes comment lines
/// at the top of the index.
pub fn build_dataset(
    manifest: &DatasetManifest,
    dir: impl AsRef<Path>,
    header: Option<&str>,
) -> Result<Dataset> {
    let dir = dir.as_ref();
    let dataset = generate(manifest)?;
    for s in &dataset.samples {
        io::save_image(dir.join(&s.path), &s.image)?;
    }
    io::write_atomic(dir.join(INDEX_FILE), index_text(&dataset, header).as_bytes())?;
    Ok(dataset)
}

pub fn index_path(dir: impl AsRef<Path>) -> PathBuf {
    dir.as_ref().join(INDEX_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            seed: 5,
            image_size: 16,
            channels: 1,
            count_per_class: 1,
            train_family: ArtifactFamily::Grid {
                period: 4,
                amplitude: 0.02,
            },
            test_families: vec![ArtifactFamily::Upsample { factor: 2 }],
            splits: SplitFractions::default(),
        }
    }

    #[test]
    fn same_seed_same_image() {
        let a = gen_real(32, 3, &mut Rng::new(1)).unwrap();
        let b = gen_real(32, 3, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn none_family_is_the_real_path() {
        let real = gen_real(32, 1, &mut Rng::new(2)).unwrap();
        let fake = gen_fake(32, 1, &ArtifactFamily::None, &mut Rng::new(2)).unwrap();
        assert_eq!(real, fake);
    }

    #[test]
    fn parameter_validation() {
        let mut rng = Rng::new(0);
        let grid = ArtifactFamily::Grid {
            period: 40,
            amplitude: 0.1,
        };
        assert!(gen_fake(32, 1, &grid, &mut rng).is_err());
        assert!(gen_fake(32, 1, &ArtifactFamily::Upsample { factor: 3 }, &mut rng).is_err());
        assert!(gen_real(8, 1, &mut rng).is_err());
        let flat = ArtifactFamily::Grid {
            period: 8,
            amplitude: 0.0,
        };
        assert!(gen_fake(32, 1, &flat, &mut rng).is_err());
    }

    #[test]
    fn artifact_keeps_global_statistics_close() {
        let fam = ArtifactFamily::Grid {
            period: 8,
            amplitude: 0.02,
        };
        let real = gen_real(64, 3, &mut Rng::new(3)).unwrap();
        let fake = gen_fake(64, 3, &fam, &mut Rng::new(3)).unwrap();
        assert!((real.mean() - fake.mean()).abs() < 0.01 * real.mean());
    }

    #[test]
    fn one_pair_per_cell() {
        let data = generate(&manifest()).unwrap();
        // train, val, test(grid), test(upsample)
        assert_eq!(data.samples.len(), 8);
        for split in Split::ALL {
            for fam in data.families(split) {
                let cell = data.subset(split, &fam);
                assert_eq!(cell.len(), 2);
                assert_eq!(cell.iter().filter(|s| s.label == 1).count(), 1);
            }
        }
    }

    #[test]
    fn on_disk_matches_memory_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let built = build_dataset(&manifest(), dir.path(), Some("test")).unwrap();
        let first = fs::read(index_path(dir.path())).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(loaded, built);
        build_dataset(&manifest(), dir.path(), Some("test")).unwrap();
        assert_eq!(fs::read(index_path(dir.path())).unwrap(), first);
    }

    #[test]
    fn malformed_index_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(INDEX_FILE), "a.pgm\t2\ttrain\tnone\n").unwrap();
        assert!(matches!(
            Dataset::load(dir.path()),
            Err(Error::Malformed { .. })
        ));
    }
}
