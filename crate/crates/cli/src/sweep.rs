//! One-axis sweeps: every value of the axis is trained and evaluated under
//! every configured seed, on a dataset generated in memory per seed.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Mutex;

use anyhow::{Context as _, Result};
use fdmask::augment::{Augmentation, Band, ChannelSet, GeoKind, GeoSpec, MaskSpec, PipelineSpec};
use fdmask::metrics::EvalReport;
use fdmask::pruning::PruneSpec;
use fdmask::synthgen::{generate, Dataset};
use fdmask::transforms::TransformKind;
use fdmask::io::write_atomic;

use crate::commands::{evaluate, finetune_model, prune_model, train_model, Accounting, Context};
use crate::config::ExperimentConfig;
use crate::fail;

/// Masking ratio of the non-ratio axes when the config leaves it out.
pub const DEFAULT_SWEEP_RATIO: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Ratio,
    Band,
    Channel,
    Transform,
    Augmentation,
    PruneRatio,
}

impl Axis {
    pub const ALL: [Axis; 6] = [
        Axis::Ratio,
        Axis::Band,
        Axis::Channel,
        Axis::Transform,
        Axis::Augmentation,
        Axis::PruneRatio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Ratio => "ratio",
            Axis::Band => "band",
            Axis::Channel => "channel",
            Axis::Transform => "transform",
            Axis::Augmentation => "augmentation",
            Axis::PruneRatio => "prune_ratio",
        }
    }

    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            Axis::Ratio => &["0", "0.15", "0.3", "0.5", "0.7"],
            Axis::Band => &["low", "mid", "high", "all"],
            Axis::Channel => &["r", "g", "b", "rg", "gb", "rb", "all"],
            Axis::Transform => &["fourier", "cosine", "wavelet"],
            Axis::Augmentation => &[
                "none",
                "pixel",
                "patch",
                "frequency",
                "rotate",
                "translate",
                "translate+frequency",
            ],
            Axis::PruneRatio => &["0", "0.2", "0.5", "0.8"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

impl FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Axis::ALL.iter().map(|a| a.name()).collect();
                fail("usage", format!("unknown sweep axis '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

fn parse_ratio(value: &str) -> Result<f64> {
    let r: f64 = value
        .trim()
        .parse()
        .map_err(|_| fail("usage", format!("'{value}' is not a ratio")))?;
    if !(0.0..1.0).contains(&r) {
        return Err(fail("usage", format!("ratio {r} must be in [0, 1)")));
    }
    Ok(r)
}

/// The frequency mask the config already trains with, or a plain
/// all-band Fourier mask.
fn base_mask(pipeline: &PipelineSpec) -> MaskSpec {
    pipeline
        .augmentations
        .iter()
        .find_map(|a| match a {
            Augmentation::Mask(m) if m.domain == fdmask::augment::MaskDomain::Frequency => Some(m.clone()),
            _ => None,
        })
        .unwrap_or_else(|| MaskSpec::frequency(DEFAULT_SWEEP_RATIO, Band::All))
}

/// Training pipeline for one axis value. `ratio` applies to every axis but
/// `ratio` itself.
pub fn pipeline_for(axis: Axis, value: &str, base: &PipelineSpec, ratio: f64) -> Result<PipelineSpec> {
    let mask = MaskSpec { ratio, ..base_mask(base) };
    let augmentations = match axis {
        Axis::Ratio => {
            let r = parse_ratio(value)?;
            if r == 0.0 {
                Vec::new()
            } else {
                vec![Augmentation::Mask(MaskSpec { ratio: r, ..mask })]
            }
        }
        Axis::Band => vec![Augmentation::Mask(MaskSpec {
            band: value.parse()?,
            ..mask
        })],
        Axis::Channel => vec![Augmentation::Mask(MaskSpec {
            channels: value.parse::<ChannelSet>()?,
            ..mask
        })],
        Axis::Transform => vec![Augmentation::Mask(MaskSpec {
            transform: value.parse::<TransformKind>()?,
            ..mask
        })],
        Axis::Augmentation => {
            let mut out = Vec::new();
            for part in value.split('+').map(str::trim) {
                out.push(match part {
                    "none" => continue,
                    "pixel" => Augmentation::Mask(MaskSpec::pixel(ratio)),
                    "patch" => Augmentation::Mask(MaskSpec::patch(ratio, fdmask::augment::DEFAULT_PATCH_SIZE)),
                    "frequency" => Augmentation::Mask(mask.clone()),
                    "rotate" => Augmentation::Geometric(GeoSpec { kind: GeoKind::Rotate, ratio }),
                    "translate" => Augmentation::Geometric(GeoSpec { kind: GeoKind::Translate, ratio }),
                    other => return Err(fail("usage", format!("unknown augmentation '{other}'"))),
                });
            }
            out
        }
        Axis::PruneRatio => base.augmentations.clone(),
    };
    let spec = PipelineSpec { augmentations, ..base.clone() };
    spec.validate()?;
    Ok(spec)
}

/// Mean AUROC over test families other than the training family.
pub fn unseen_auroc(report: &EvalReport, train_family: &str) -> Option<f64> {
    let unseen: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| r.name != train_family)
        .map(|r| r.auroc)
        .collect();
    if unseen.is_empty() {
        None
    } else {
        Some(unseen.iter().sum::<f64>() / unseen.len() as f64)
    }
}

/// Median; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub value: String,
    pub seed: u64,
    pub report: EvalReport,
    pub accounting: Option<Accounting>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: Axis,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    pub train_family: String,
    /// Ordered by value, then seed.
    pub runs: Vec<Run>,
}

fn seeded(config: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut c = config.clone();
    c.seed = seed;
    c
}

fn run_one(config: &ExperimentConfig, axis: Axis, value: &str, dataset: &Dataset) -> Result<Run> {
    let ratio = config.sweep.ratio.unwrap_or(DEFAULT_SWEEP_RATIO);
    let mut c = config.clone();
    c.train.pipeline = pipeline_for(axis, value, &config.train.pipeline, ratio)?;
    let (model, _) = train_model(&c, dataset)?;
    let report = evaluate(&model, dataset, c.model.eval_crop)?;
    Ok(Run {
        value: value.to_string(),
        seed: c.seed,
        report,
        accounting: None,
    })
}

/// Baseline per seed, then prune, fine-tune and evaluate at every ratio.
fn run_prune_seed(config: &ExperimentConfig, values: &[String], dataset: &Dataset) -> Result<Vec<Run>> {
    let (model, _) = train_model(config, dataset)?;
    let side = config.model.eval_crop.unwrap_or(config.dataset.image_size);
    values
        .iter()
        .map(|value| {
            let spec = PruneSpec {
                prune_ratio: parse_ratio(value)?,
                ..config.prune
            };
            spec.validate()?;
            let (pruned, _, accounting) = prune_model(&model, &spec, side)?;
            let c = ExperimentConfig { prune: spec, ..config.clone() };
            let tuned = if spec.prune_ratio == 0.0 {
                pruned
            } else {
                finetune_model(&c, &pruned, dataset)?.0
            };
            Ok(Run {
                value: value.clone(),
                seed: config.seed,
                report: evaluate(&tuned, dataset, config.model.eval_crop)?,
                accounting: Some(accounting),
            })
        })
        .collect()
}

/// Runs `f` over `0..n` on up to `jobs` threads; results keep index order.
fn parallel_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    if jobs <= 1 || n <= 1 {
        return (0..n).map(&f).collect();
    }
    let next = Mutex::new(0usize);
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n) {
            scope.spawn(|| loop {
                let i = {
                    let mut guard = next.lock().expect("work counter");
                    let i = *guard;
                    *guard += 1;
                    i
                };
                if i >= n {
                    break;
                }
                let out = f(i);
                *slots[i].lock().expect("result slot") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot").expect("every index ran"))
        .collect()
}

pub fn run_sweep(config: &ExperimentConfig, axis: Axis, values: &[String], jobs: usize) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(fail("usage", "sweep needs at least one value"));
    }
    let seeds = if config.sweep.seeds.is_empty() {
        vec![config.seed]
    } else {
        config.sweep.seeds.clone()
    };
    let ratio = config.sweep.ratio.unwrap_or(DEFAULT_SWEEP_RATIO);
    // reject bad values before any training
    for v in values {
        match axis {
            Axis::PruneRatio => {
                parse_ratio(v)?;
            }
            _ => {
                pipeline_for(axis, v, &config.train.pipeline, ratio)
                    .with_context(|| format!("sweep value '{v}'"))?;
            }
        }
    }
    let datasets = parallel_map(seeds.len(), jobs, |i| Ok(generate(&seeded(config, seeds[i]).manifest())?))?;
    let runs = if axis == Axis::PruneRatio {
        parallel_map(seeds.len(), jobs, |i| {
            run_prune_seed(&seeded(config, seeds[i]), values, &datasets[i])
        })?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>()
    } else {
        let n = values.len() * seeds.len();
        parallel_map(n, jobs, |k| {
            let (vi, si) = (k / seeds.len(), k % seeds.len());
            run_one(&seeded(config, seeds[si]), axis, &values[vi], &datasets[si])
                .with_context(|| format!("{}={} seed={}", axis.name(), values[vi], seeds[si]))
        })?
    };
    let mut runs = runs;
    runs.sort_by_key(|r| {
        (
            values.iter().position(|v| *v == r.value).unwrap_or(usize::MAX),
            seeds.iter().position(|s| *s == r.seed).unwrap_or(usize::MAX),
        )
    });
    Ok(SweepResult {
        axis,
        values: values.to_vec(),
        seeds,
        train_family: config.dataset.train_family.name(),
        runs,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

impl SweepResult {
    pub fn runs_for(&self, value: &str) -> Vec<&Run> {
        self.runs.iter().filter(|r| r.value == value).collect()
    }

    fn families(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.runs {
            for row in &r.report.rows {
                if !names.contains(&row.name) {
                    names.push(row.name.clone());
                }
            }
        }
        names
    }

    /// Median over seeds of the per-seed unseen-family AUROC.
    pub fn median_unseen(&self, value: &str) -> Option<f64> {
        let per_seed: Vec<f64> = self
            .runs_for(value)
            .iter()
            .filter_map(|r| unseen_auroc(&r.report, &self.train_family))
            .collect();
        median(&per_seed)
    }

    fn metric_columns(&self) -> Vec<String> {
        let mut cols = vec!["map".to_string(), "mean_auroc".to_string(), "unseen_auroc".to_string()];
        for f in self.families() {
            cols.push(format!("ap_{f}"));
            cols.push(format!("auroc_{f}"));
        }
        if self.axis == Axis::PruneRatio {
            cols.extend(["params".to_string(), "macs".to_string()]);
        }
        cols
    }

    fn metrics(&self, runs: &[&Run]) -> Vec<Option<f64>> {
        let collect = |f: &dyn Fn(&Run) -> Option<f64>| median(&runs.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
        let mut out = vec![
            collect(&|r| r.report.mean_ap().ok()),
            collect(&|r| r.report.mean_auroc().ok()),
            collect(&|r| unseen_auroc(&r.report, &self.train_family)),
        ];
        for fam in self.families() {
            out.push(collect(&|r| r.report.row(&fam).map(|x| x.ap)));
            out.push(collect(&|r| r.report.row(&fam).map(|x| x.auroc)));
        }
        if self.axis == Axis::PruneRatio {
            out.push(collect(&|r| r.accounting.map(|a| a.params_after as f64)));
            out.push(collect(&|r| r.accounting.map(|a| a.macs_after as f64)));
        }
        out
    }

    fn cell(&self, col: &str, v: Option<f64>) -> String {
        match col {
            "params" | "macs" => v.map_or_else(|| "-".into(), |v| format!("{v:.0}")),
            _ => fmt_opt(v),
        }
    }

    /// Medians over seeds, one row per value.
    pub fn summary_tsv(&self, header: &str) -> String {
        let cols = self.metric_columns();
        let mut out = format!("{header}\n# axis={} train_family={}\n", self.axis.name(), self.train_family);
        let _ = writeln!(out, "value\tseeds\t{}", cols.join("\t"));
        for value in &self.values {
            let runs = self.runs_for(value);
            let cells: Vec<String> = cols
                .iter()
                .zip(self.metrics(&runs))
                .map(|(c, v)| self.cell(c, v))
                .collect();
            let _ = writeln!(out, "{value}\t{}\t{}", runs.len(), cells.join("\t"));
        }
        out
    }

    /// Every (value, seed) run.
    pub fn runs_tsv(&self, header: &str) -> String {
        let cols = self.metric_columns();
        let mut out = format!("{header}\n# axis={}\n", self.axis.name());
        let _ = writeln!(out, "value\tseed\t{}", cols.join("\t"));
        for run in &self.runs {
            let cells: Vec<String> = cols
                .iter()
                .zip(self.metrics(&[run]))
                .map(|(c, v)| self.cell(c, v))
                .collect();
            let _ = writeln!(out, "{}\t{}\t{}", run.value, run.seed, cells.join("\t"));
        }
        out
    }
}

pub fn cmd_sweep(ctx: &Context, axis: Axis, values: Option<Vec<String>>, jobs: Option<usize>) -> Result<SweepResult> {
    let values = values
        .or_else(|| (!ctx.config.sweep.values.is_empty()).then(|| ctx.config.sweep.values.clone()))
        .unwrap_or_else(|| axis.default_values());
    let jobs = jobs.or(ctx.config.sweep.jobs).unwrap_or(1).max(1);
    let result = run_sweep(&ctx.config, axis, &values, jobs)?;
    let header = ctx.header();
    let name = axis.name();
    write_atomic(ctx.out_path(&format!("sweep_{name}.tsv")), result.summary_tsv(&header).as_bytes())?;
    write_atomic(ctx.out_path(&format!("sweep_{name}_runs.tsv")), result.runs_tsv(&header).as_bytes())?;
    Ok(result)
}
