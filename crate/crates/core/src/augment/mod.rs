//! Training-time augmentation: spatial and transform-domain masking,
//! rotation and translation, blur/JPEG degradation, and the flip/crop
//! pipeline that strings them together. Evaluation preprocessing lives here
//! too but takes no random source, so it cannot mask anything.

mod degrade;
mod geometric;
mod mask;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use degrade::{degrade, gaussian_blur, gaussian_kernel, DegradeTrace};
pub use geometric::{rotate, rotate_by, rotate_point, translate, translate_by, translation_bounds};
pub use mask::{
    apply_mask, apply_mask_traced, band_bounds, band_indices, mask_frequency, mask_patches,
    mask_pixels, mask_plane, masked_count, select_bins, MaskStats,
};

use crate::error::{check_fraction, Error, Result};
use crate::tensor::{Image, Rng};
use crate::transforms::TransformKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskDomain {
    Pixel,
    Patch,
    Frequency,
}

/// Rectangular coefficient region masked bins are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Low,
    Mid,
    High,
    #[default]
    All,
}

impl Band {
    pub const ALL_BANDS: [Band; 4] = [Band::Low, Band::Mid, Band::High, Band::All];

    pub fn name(self) -> &'static str {
        match self {
            Band::Low => "low",
            Band::Mid => "mid",
            Band::High => "high",
            Band::All => "all",
        }
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(Band::Low),
            "mid" => Ok(Band::Mid),
            "high" => Ok(Band::High),
            "all" => Ok(Band::All),
            other => Err(Error::InvalidArgument(format!("unknown band '{other}'"))),
        }
    }
}

/// Subset of the R, G, B channels (bit 0 = R). Written as `all` or as
/// letters, e.g. `rg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ChannelSet(u8);

impl ChannelSet {
    pub const ALL: ChannelSet = ChannelSet(0b111);

    pub fn contains(self, ch: usize) -> bool {
        ch < 3 && self.0 & (1 << ch) != 0
    }

    /// Channel indices to process for an image with `channels` channels.
    pub fn resolve(self, channels: usize) -> Result<Vec<usize>> {
        if self == ChannelSet::ALL {
            return Ok((0..channels).collect());
        }
        let picked: Vec<usize> = (0..3).filter(|&ch| self.contains(ch)).collect();
        if let Some(&bad) = picked.iter().find(|&&ch| ch >= channels) {
            return Err(Error::InvalidArgument(format!(
                "channel {} requested on a {channels}-channel image",
                ['r', 'g', 'b'][bad]
            )));
        }
        Ok(picked)
    }
}

impl Default for ChannelSet {
    fn default() -> Self {
        ChannelSet::ALL
    }
}

impl FromStr for ChannelSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "all" {
            return Ok(ChannelSet::ALL);
        }
        let mut bits = 0u8;
        for ch in s.chars().filter(|c| !matches!(c, ',' | '+' | ' ')) {
            bits |= match ch {
                'r' => 1,
                'g' => 2,
                'b' => 4,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown channel '{other}' (use r, g, b or all)"
                    )))
                }
            };
        }
        if bits == 0 {
            return Err(Error::InvalidArgument("empty channel set".into()));
        }
        Ok(ChannelSet(bits))
    }
}

impl TryFrom<String> for ChannelSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ChannelSet> for String {
    fn from(set: ChannelSet) -> String {
        set.to_string()
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == ChannelSet::ALL {
            return f.write_str("all");
        }
        for (i, name) in ["r", "g", "b"].iter().enumerate() {
            if self.contains(i) {
                f.write_str(name)?;
            }
        }
        Ok(())
    }
}

pub const DEFAULT_PATCH_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub domain: MaskDomain,
    pub ratio: f64,
    /// Patch side in pixels (patch domain only).
    pub patch_size: usize,
    /// Frequency domain only.
    pub band: Band,
    pub channels: ChannelSet,
    pub transform: TransformKind,
    /// Also zero the Hermitian mirror of each drawn Fourier bin.
    pub symmetric: bool,
}

impl MaskSpec {
    pub fn pixel(ratio: f64) -> Self {
        Self {
            domain: MaskDomain::Pixel,
            ..Self::frequency(ratio, Band::All)
        }
    }

    pub fn patch(ratio: f64, patch_size: usize) -> Self {
        Self {
            domain: MaskDomain::Patch,
            patch_size,
            ..Self::frequency(ratio, Band::All)
        }
    }

    /// Fourier masking over all channels, non-symmetric.
    pub fn frequency(ratio: f64, band: Band) -> Self {
        Self {
            domain: MaskDomain::Frequency,
            ratio,
            patch_size: DEFAULT_PATCH_SIZE,
            band,
            channels: ChannelSet::ALL,
            transform: TransformKind::Fourier,
            symmetric: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeoKind {
    Rotate,
    Translate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoSpec {
    pub kind: GeoKind,
    pub ratio: f64,
}

/// One stage of the configurable augmentation list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "AugmentationRepr", into = "AugmentationRepr")]
pub enum Augmentation {
    Mask(MaskSpec),
    Geometric(GeoSpec),
}

fn default_patch_size() -> usize {
    DEFAULT_PATCH_SIZE
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum AugmentationRepr {
    Pixel {
        ratio: f64,
    },
    Patch {
        ratio: f64,
        #[serde(default = "default_patch_size")]
        patch_size: usize,
    },
    Frequency {
        ratio: f64,
        #[serde(default)]
        band: Band,
        #[serde(default)]
        channels: ChannelSet,
        #[serde(default)]
        transform: TransformKind,
        #[serde(default)]
        symmetric: bool,
    },
    Rotate {
        ratio: f64,
    },
    Translate {
        ratio: f64,
    },
}

impl From<AugmentationRepr> for Augmentation {
    fn from(repr: AugmentationRepr) -> Self {
        match repr {
            AugmentationRepr::Pixel { ratio } => Augmentation::Mask(MaskSpec::pixel(ratio)),
            AugmentationRepr::Patch { ratio, patch_size } => {
                Augmentation::Mask(MaskSpec::patch(ratio, patch_size))
            }
            AugmentationRepr::Frequency {
                ratio,
                band,
                channels,
                transform,
                symmetric,
            } => Augmentation::Mask(MaskSpec {
                channels,
                transform,
                symmetric,
                ..MaskSpec::frequency(ratio, band)
            }),
            AugmentationRepr::Rotate { ratio } => Augmentation::Geometric(GeoSpec {
                kind: GeoKind::Rotate,
                ratio,
            }),
            AugmentationRepr::Translate { ratio } => Augmentation::Geometric(GeoSpec {
                kind: GeoKind::Translate,
                ratio,
            }),
        }
    }
}

impl From<Augmentation> for AugmentationRepr {
    fn from(aug: Augmentation) -> Self {
        match aug {
            Augmentation::Mask(m) => match m.domain {
                MaskDomain::Pixel => AugmentationRepr::Pixel { ratio: m.ratio },
                MaskDomain::Patch => AugmentationRepr::Patch {
                    ratio: m.ratio,
                    patch_size: m.patch_size,
                },
                MaskDomain::Frequency => AugmentationRepr::Frequency {
                    ratio: m.ratio,
                    band: m.band,
                    channels: m.channels,
                    transform: m.transform,
                    symmetric: m.symmetric,
                },
            },
            Augmentation::Geometric(g) => match g.kind {
                GeoKind::Rotate => AugmentationRepr::Rotate { ratio: g.ratio },
                GeoKind::Translate => AugmentationRepr::Translate { ratio: g.ratio },
            },
        }
    }
}

impl Augmentation {
    pub fn ratio(&self) -> f64 {
        match self {
            Augmentation::Mask(m) => m.ratio,
            Augmentation::Geometric(g) => g.ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_fraction("augmentation ratio", self.ratio())?;
        if let Augmentation::Mask(m) = self {
            if m.domain == MaskDomain::Patch && m.patch_size == 0 {
                return Err(Error::InvalidArgument("patch size must be positive".into()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Augmentation::Mask(m) => match m.domain {
                MaskDomain::Pixel => write!(f, "pixel(r={})", m.ratio),
                MaskDomain::Patch => write!(f, "patch(r={},p={})", m.ratio, m.patch_size),
                MaskDomain::Frequency => write!(
                    f,
                    "frequency(r={},band={},channels={},transform={},symmetric={})",
                    m.ratio,
                    m.band.name(),
                    m.channels,
                    m.transform.name(),
                    m.symmetric
                ),
            },
            Augmentation::Geometric(g) => match g.kind {
                GeoKind::Rotate => write!(f, "rotate(r={})", g.ratio),
                GeoKind::Translate => write!(f, "translate(r={})", g.ratio),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSpec {
    pub flip_prob: f64,
    /// Random crop side; `None` keeps the full frame.
    pub crop_size: Option<usize>,
    pub blur_prob: f64,
    pub jpeg_prob: f64,
    pub blur_sigma_range: (f64, f64),
    pub jpeg_quality_range: (u8, u8),
    pub augmentations: Vec<Augmentation>,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            crop_size: None,
            blur_prob: 0.1,
            jpeg_prob: 0.1,
            blur_sigma_range: (0.0, 3.0),
            jpeg_quality_range: (30, 100),
            augmentations: Vec::new(),
        }
    }
}

impl PipelineSpec {
    /// No flip, crop, degradation or augmentation.
    pub fn identity() -> Self {
        Self {
            flip_prob: 0.0,
            blur_prob: 0.0,
            jpeg_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_fraction("flip_prob", self.flip_prob)?;
        check_fraction("blur_prob", self.blur_prob)?;
        check_fraction("jpeg_prob", self.jpeg_prob)?;
        let (slo, shi) = self.blur_sigma_range;
        if !(0.0 <= slo && slo <= shi) {
            return Err(Error::InvalidArgument(format!(
                "blur_sigma_range must satisfy 0 <= lo <= hi, got ({slo}, {shi})"
            )));
        }
        let (qlo, qhi) = self.jpeg_quality_range;
        if !(1 <= qlo && qlo <= qhi && qhi <= 100) {
            return Err(Error::InvalidArgument(format!(
                "jpeg_quality_range must lie in 1..=100 with lo <= hi, got ({qlo}, {qhi})"
            )));
        }
        if self.crop_size == Some(0) {
            return Err(Error::InvalidArgument("crop_size must be positive".into()));
        }
        self.augmentations.iter().try_for_each(Augmentation::validate)
    }
}

/// Record of what one pipeline stage did.
#[derive(Debug, Clone, PartialEq)]
pub enum StageTrace {
    Flip(bool),
    Crop { top: usize, left: usize, size: usize },
    Degrade(DegradeTrace),
    Mask(MaskStats),
    Rotate { degrees: f64 },
    Translate { dx: i64, dy: i64 },
}

pub fn apply_augmentation(image: &Image, aug: &Augmentation, rng: &mut Rng) -> Result<Image> {
    apply_augmentation_traced(image, aug, rng).map(|(img, _)| img)
}

pub fn apply_augmentation_traced(
    image: &Image,
    aug: &Augmentation,
    rng: &mut Rng,
) -> Result<(Image, StageTrace)> {
    match aug {
        Augmentation::Mask(spec) => {
            let (img, stats) = mask::apply_mask_traced(image, spec, rng)?;
            Ok((img, StageTrace::Mask(stats)))
        }
        Augmentation::Geometric(g) => match g.kind {
            GeoKind::Rotate => {
                let (img, degrees) = geometric::rotate_traced(image, g.ratio, rng)?;
                Ok((img, StageTrace::Rotate { degrees }))
            }
            GeoKind::Translate => {
                let (img, (dx, dy)) = geometric::translate_traced(image, g.ratio, rng)?;
                Ok((img, StageTrace::Translate { dx, dy }))
            }
        },
    }
}

/// flip -> random crop -> degrade -> each augmentation in order.
pub fn train_pipeline(image: &Image, spec: &PipelineSpec, rng: &mut Rng) -> Result<Image> {
    train_pipeline_traced(image, spec, rng).map(|(img, _)| img)
}

pub fn train_pipeline_traced(
    image: &Image,
    spec: &PipelineSpec,
    rng: &mut Rng,
) -> Result<(Image, Vec<StageTrace>)> {
    let crop = spec.crop_size.unwrap_or(image.height().min(image.width()));
    if crop > image.height() || crop > image.width() {
        return Err(Error::InvalidDimensions(format!(
            "{}x{} image is smaller than crop size {crop}",
            image.height(),
            image.width()
        )));
    }
    let mut trace = Vec::with_capacity(3 + spec.augmentations.len());

    let flip = rng.bernoulli(spec.flip_prob);
    let mut img = if flip {
        image.flip_horizontal()
    } else {
        image.clone()
    };
    trace.push(StageTrace::Flip(flip));

    if spec.crop_size.is_some() {
        let top = rng.uniform_int(0, (img.height() - crop) as i64)? as usize;
        let left = rng.uniform_int(0, (img.width() - crop) as i64)? as usize;
        img = img.crop(top, left, crop, crop)?;
        trace.push(StageTrace::Crop {
            top,
            left,
            size: crop,
        });
    }

    let (degraded, d) = degrade::degrade_traced(&img, spec, rng)?;
    img = degraded;
    trace.push(StageTrace::Degrade(d));

    for aug in &spec.augmentations {
        let (next, t) = apply_augmentation_traced(&img, aug, rng)?;
        img = next;
        trace.push(t);
    }
    Ok((img, trace))
}

/// Deterministic center crop to `crop_size x crop_size`.
pub fn eval_preprocess(image: &Image, crop_size: usize) -> Result<Image> {
    let (h, w) = (image.height(), image.width());
    if crop_size == 0 || crop_size > h || crop_size > w {
        return Err(Error::InvalidDimensions(format!(
            "cannot center-crop {h}x{w} image to {crop_size}"
        )));
    }
    image.crop((h - crop_size) / 2, (w - crop_size) / 2, crop_size, crop_size)
}
