use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use fdmask::augment::{train_pipeline_traced, StageTrace};
use fdmask::io::{load_image, save_image_with_comment, write_atomic};
use fdmask::metrics::{EvalReport, ScoredSet};
use fdmask::nn::{load_model, predict_scores, save_model, train, Model, TrainHistory};
use fdmask::pruning::{apply_plan, count_macs, count_params, finetune, make_plan, PrunePlan, PruneSpec};
use fdmask::spectra::{analyze, SpectrumReport};
use fdmask::synthgen::{build_dataset, ArtifactFamily, Dataset, Split};
use fdmask::{Image, Rng};
use serde_json::json;

use crate::config::{resolve, ExperimentConfig};
use crate::fail;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Child stream of the experiment seed used for weight initialization.
pub const INIT_STREAM: u64 = 0;

pub const MODEL_FILE: &str = "model.fdmk";
pub const PRUNED_FILE: &str = "pruned.fdmk";
pub const FINETUNED_FILE: &str = "finetuned.fdmk";

/// A loaded configuration with its resolved locations.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    /// Directory relative config paths are resolved against.
    pub base: PathBuf,
    pub out: PathBuf,
    pub hash: String,
}

impl Context {
    pub fn new(config: ExperimentConfig, base: PathBuf, out: Option<PathBuf>) -> Self {
        let out = out.unwrap_or_else(|| resolve(&base, &config.out_dir));
        let hash = config.hash();
        Self {
            config,
            base,
            out,
            hash,
        }
    }

    /// Loads `path`, applying a `--seed` override before hashing.
    pub fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        let (mut config, base) = ExperimentConfig::load(path)?;
        if let Some(s) = seed {
            config.seed = s;
        }
        Ok(Self::new(config, base, out))
    }

    /// `fdmask <version> config=<sha256>`.
    pub fn stamp(&self) -> String {
        format!("fdmask {VERSION} config={}", self.hash)
    }

    pub fn header(&self) -> String {
        format!("# {}", self.stamp())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        resolve(&self.base, &self.config.dataset.dir)
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.out_path(name);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    fn model_metadata(&self, stage: &str) -> serde_json::Value {
        json!({
            "tool": format!("fdmask {VERSION}"),
            "config_sha256": self.hash,
            "seed": self.config.seed,
            "stage": stage,
            "train": self.config.train,
            "prune": self.config.prune,
        })
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let dir = self.dataset_dir();
        Dataset::load(&dir).with_context(|| {
            format!("dataset missing at {}; run gen-data first", dir.display())
        })
    }

    fn model_path(&self, explicit: Option<&Path>, default: &str) -> PathBuf {
        explicit.map_or_else(|| self.out_path(default), Path::to_path_buf)
    }
}

pub fn gen_data(ctx: &Context) -> Result<Dataset> {
    let dir = ctx.dataset_dir();
    let manifest = ctx.config.manifest();
    let dataset = build_dataset(&manifest, &dir, Some(&ctx.stamp()))?;
    let copy = json!({
        "tool": format!("fdmask {VERSION}"),
        "config_sha256": ctx.hash,
        "manifest": manifest,
    });
    let mut text = serde_json::to_string_pretty(&copy)?;
    text.push('\n');
    write_atomic(dir.join("manifest.json"), text.as_bytes())?;
    Ok(dataset)
}

pub fn train_split(dataset: &Dataset) -> Result<Vec<&fdmask::synthgen::Sample>> {
    let samples = dataset.split(Split::Train);
    if samples.is_empty() {
        return Err(fail("data", "dataset has no train split"));
    }
    Ok(samples)
}

/// Fresh initialization from the experiment seed, then training on the
/// train split.
pub fn train_model(config: &ExperimentConfig, dataset: &Dataset) -> Result<(Model<f32>, TrainHistory)> {
    let mut rng = Rng::new(config.seed).child(INIT_STREAM);
    let mut model = Model::<f32>::init(config.dataset.channels, &config.layers(), &mut rng)?;
    let history = train(&mut model, &train_split(dataset)?, &config.train_config())?;
    Ok((model, history))
}

pub fn loss_log(history: &TrainHistory, header: &str) -> String {
    let mut out = format!("{header}\nepoch\tloss\n");
    for (i, loss) in history.epoch_loss.iter().enumerate() {
        let _ = writeln!(out, "{}\t{loss:.6}", i + 1);
    }
    out
}

pub fn cmd_train(ctx: &Context) -> Result<(Model<f32>, TrainHistory)> {
    let dataset = ctx.load_dataset()?;
    let (model, history) = train_model(&ctx.config, &dataset)?;
    save_model(ctx.out_path(MODEL_FILE), &model, ctx.model_metadata("train"))?;
    ctx.write_text("train_log.tsv", &loss_log(&history, &ctx.header()))?;
    Ok((model, history))
}

/// AP/AUROC per family of the test split, without augmentation.
pub fn evaluate(model: &Model<f32>, dataset: &Dataset, crop: Option<usize>) -> Result<EvalReport> {
    let families = dataset.families(Split::Test);
    if families.is_empty() {
        return Err(fail("data", "dataset has no test split"));
    }
    let mut sets = Vec::with_capacity(families.len());
    for family in families {
        let samples = dataset.subset(Split::Test, &family);
        let (scores, labels) = predict_scores(model, &samples, crop)?;
        sets.push(ScoredSet::new(family, scores, labels)?);
    }
    Ok(EvalReport::from_sets(&sets)?)
}

fn load(path: &Path) -> Result<Model<f32>> {
    let (model, _) = load_model(path)
        .with_context(|| format!("cannot load model {}", path.display()))?;
    Ok(model)
}

pub fn cmd_eval(ctx: &Context, model_path: Option<&Path>) -> Result<EvalReport> {
    let model = load(&ctx.model_path(model_path, MODEL_FILE))?;
    let dataset = ctx.load_dataset()?;
    let report = evaluate(&model, &dataset, ctx.config.model.eval_crop)?;
    ctx.write_text("eval.tsv", &report.to_tsv(Some(&ctx.header()))?)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accounting {
    pub prune_ratio: f64,
    pub params_before: usize,
    pub params_after: usize,
    pub macs_before: u64,
    pub macs_after: u64,
}

pub const ACCOUNTING_COLUMNS: &str = "prune_ratio\tparams_before\tparams_after\tmacs_before\tmacs_after";

impl Accounting {
    pub fn row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.prune_ratio, self.params_before, self.params_after, self.macs_before, self.macs_after
        )
    }
}

/// Input side used for MAC accounting.
fn input_side(config: &ExperimentConfig) -> usize {
    config.model.eval_crop.unwrap_or(config.dataset.image_size)
}

pub fn prune_model(
    model: &Model<f32>,
    spec: &PruneSpec,
    side: usize,
) -> Result<(Model<f32>, PrunePlan, Accounting)> {
    let plan = make_plan(model, spec)?;
    let pruned = apply_plan(model, &plan)?;
    let accounting = Accounting {
        prune_ratio: spec.prune_ratio,
        params_before: count_params(model),
        params_after: count_params(&pruned),
        macs_before: count_macs(model, side, side)?,
        macs_after: count_macs(&pruned, side, side)?,
    };
    Ok((pruned, plan, accounting))
}

pub fn cmd_prune(ctx: &Context, model_path: Option<&Path>) -> Result<Accounting> {
    let model = load(&ctx.model_path(model_path, MODEL_FILE))?;
    let (pruned, plan, accounting) = prune_model(&model, &ctx.config.prune, input_side(&ctx.config))?;
    save_model(ctx.out_path(PRUNED_FILE), &pruned, ctx.model_metadata("prune"))?;
    ctx.write_text("prune_plan.tsv", &plan.to_tsv(Some(&ctx.header())))?;
    let text = format!("{}\n{ACCOUNTING_COLUMNS}\n{}\n", ctx.header(), accounting.row());
    ctx.write_text("prune_accounting.tsv", &text)?;
    Ok(accounting)
}

pub fn finetune_model(
    config: &ExperimentConfig,
    pruned: &Model<f32>,
    dataset: &Dataset,
) -> Result<(Model<f32>, TrainHistory)> {
    Ok(finetune(pruned, &train_split(dataset)?, &config.prune, &config.train_config())?)
}

pub fn cmd_finetune(ctx: &Context, model_path: Option<&Path>) -> Result<EvalReport> {
    let pruned = load(&ctx.model_path(model_path, PRUNED_FILE))?;
    let dataset = ctx.load_dataset()?;
    let (tuned, history) = finetune_model(&ctx.config, &pruned, &dataset)?;
    save_model(ctx.out_path(FINETUNED_FILE), &tuned, ctx.model_metadata("finetune"))?;
    ctx.write_text("finetune_log.tsv", &loss_log(&history, &ctx.header()))?;
    let report = evaluate(&tuned, &dataset, ctx.config.model.eval_crop)?;
    ctx.write_text("finetune_eval.tsv", &report.to_tsv(Some(&ctx.header()))?)?;
    Ok(report)
}

/// Frequencies `(u, v)` where a family injects energy on a `size` grid.
pub fn probe_frequencies(family: &ArtifactFamily, size: usize) -> Vec<(i64, i64)> {
    match *family {
        ArtifactFamily::Grid { period, .. } if size % period == 0 => {
            let f = (size / period) as i64;
            vec![(f, 0), (0, f)]
        }
        ArtifactFamily::Peaks { .. } => family.peak_frequencies(size),
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub set: String,
    pub probe: String,
    pub u: i64,
    pub v: i64,
    pub ratio: f64,
}

pub const SPECTRUM_COLUMNS: &str = "set\tsamples\tprobe_family\tu\tv\tpeak_to_background";

/// Background window radius for peak-to-background ratios.
pub const BACKGROUND_RADIUS: usize = 3;

/// Averaged spectra of the real images and of each fake family in a split,
/// with peak-to-background ratios at every known injected frequency.
pub fn spectrum_sets(
    config: &ExperimentConfig,
    dataset: &Dataset,
    split: Split,
) -> Result<Vec<(String, SpectrumReport)>> {
    let cap = config.spectrum.max_images.unwrap_or(usize::MAX);
    let samples = dataset.split(split);
    let mut groups: Vec<(String, Vec<Image>)> = Vec::new();
    for s in samples {
        let name = if s.label == 0 { "real".to_string() } else { s.family.clone() };
        let pos = match groups.iter().position(|(n, _)| *n == name) {
            Some(p) => p,
            None => {
                groups.push((name, Vec::new()));
                groups.len() - 1
            }
        };
        if groups[pos].1.len() < cap {
            groups[pos].1.push(s.image.clone());
        }
    }
    if groups.is_empty() {
        return Err(fail("empty", format!("split {} holds no images", split.name())));
    }
    groups
        .into_iter()
        .map(|(name, images)| Ok((name, analyze(&images, config.spectrum.denoise_radius)?)))
        .collect()
}

pub fn spectrum_rows(config: &ExperimentConfig, sets: &[(String, SpectrumReport)]) -> Result<Vec<SpectrumRow>> {
    let mut rows = Vec::new();
    for (name, report) in sets {
        for family in config.families() {
            for (u, v) in probe_frequencies(&family, report.rows()) {
                rows.push(SpectrumRow {
                    set: name.clone(),
                    probe: family.name(),
                    u,
                    v,
                    ratio: report.peak_to_background(u, v, BACKGROUND_RADIUS)?,
                });
            }
        }
    }
    Ok(rows)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm" | "png" | "jpg" | "jpeg"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_spectrum(ctx: &Context, images_dir: Option<&Path>) -> Result<Vec<SpectrumRow>> {
    let config = &ctx.config;
    let (sets, rows) = match images_dir {
        Some(dir) => {
            let files = image_files(dir)?;
            if files.is_empty() {
                return Err(fail("empty", format!("no images in {}", dir.display())));
            }
            let images = files.iter().map(load_image).collect::<fdmask::Result<Vec<_>>>()?;
            let name = dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("images")
                .to_string();
            (vec![(name, analyze(&images, config.spectrum.denoise_radius)?)], Vec::new())
        }
        None => {
            let split: Split = config.spectrum.split.parse()?;
            let dataset = ctx.load_dataset()?;
            let sets = spectrum_sets(config, &dataset, split)?;
            let rows = spectrum_rows(config, &sets)?;
            (sets, rows)
        }
    };
    let header = ctx.header();
    for (name, report) in &sets {
        report.render_heatmap(ctx.out_path(&format!("spectrum_{name}.pgm")), Some(&ctx.stamp()))?;
        ctx.write_text(&format!("spectrum_{name}.tsv"), &report.to_text(Some(&header)))?;
    }
    let mut text = format!("{header}\n{SPECTRUM_COLUMNS}\n");
    for r in &rows {
        let samples = sets.iter().find(|(n, _)| *n == r.set).map_or(0, |(_, s)| s.samples);
        let _ = writeln!(text, "{}\t{samples}\t{}\t{}\t{}\t{:.4}", r.set, r.probe, r.u, r.v, r.ratio);
    }
    ctx.write_text("spectrum_summary.tsv", &text)?;
    Ok(rows)
}

/// One line per pipeline stage.
pub fn describe_trace(trace: &[StageTrace]) -> Vec<String> {
    trace
        .iter()
        .map(|t| match t {
            StageTrace::Flip(f) => format!("flip\t{f}"),
            StageTrace::Crop { top, left, size } => format!("crop\ttop={top}\tleft={left}\tsize={size}"),
            StageTrace::Degrade(d) => {
                let sigma = d.blur_sigma.map_or("none".to_string(), |s| format!("{s:.4}"));
                let quality = d.jpeg_quality.map_or("none".to_string(), |q| q.to_string());
                format!("degrade\tblur_sigma={sigma}\tjpeg_quality={quality}")
            }
            StageTrace::Mask(m) => {
                let zeroed: Vec<String> = m.zeroed_coefficients.iter().map(|z| z.to_string()).collect();
                format!(
                    "mask\tuniverse={}\tselected={}\tzeroed={}",
                    m.universe,
                    m.selected,
                    zeroed.join(",")
                )
            }
            StageTrace::Rotate { degrees } => format!("rotate\tdegrees={degrees:.4}"),
            StageTrace::Translate { dx, dy } => format!("translate\tdx={dx}\tdy={dy}"),
        })
        .collect()
}

/// Runs the configured training pipeline on one image and writes the result.
pub fn cmd_augment(ctx: &Context, input: &Path, output: &Path) -> Result<Vec<String>> {
    let image = load_image(input)?;
    let mut rng = Rng::new(ctx.config.seed);
    let (out, trace) = train_pipeline_traced(&image, &ctx.config.train.pipeline, &mut rng)?;
    save_image_with_comment(output, &out, Some(&ctx.stamp()))?;
    Ok(describe_trace(&trace))
}
