//! Subcommand arguments and implementations.
//!
//! Every argument is optional at the clap level so that a config file can
//! supply it; required values are checked after merging.

mod analyze;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sdi_core::annotator::{annotate_night, SdiNight};
use sdi_core::biomarkers::{self, features_csv, read_features_csv, BiomarkerOptions, EntropyKind, FeatureRow};
use sdi_core::edf_io::{arousal_proportion, Annotations, ChannelMap, EpochGrid};
use sdi_core::model::{load_from_path, save_to_path, ModelConfig, SdiModel};
use sdi_core::objective::{CompositionPolicy, TrainMode};
use sdi_core::subtyping::{assign_subtypes, assignments_csv, fit_gmm, impute_median, Covariance, GmmConfig};
use sdi_core::synth::{gen_cohort, write_night_files};
use sdi_core::trainer::{train as run_training, Pool, SplitSpec, TrainConfig};
use sdi_core::{par, Stage};

use crate::io::{self, SDI_SUFFIX};
use crate::svg::{self, Figure};
use crate::usage;

pub use analyze::{analyze, AnalyzeArgs};

/// Parses a kebab- or snake-case value into a serde enum.
fn snake<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.trim().replace('-', "_"))).map_err(|e| e.to_string())
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| usage(format!("--{flag} is required (flag or config file)")))
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSize {
    #[default]
    Desk,
    Full,
}

/// Label patterns for the four input channels.
#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelArgs {
    /// EEG channel label pattern (case-insensitive substring).
    #[arg(long)]
    pub eeg: Option<String>,
    #[arg(long)]
    pub eog: Option<String>,
    #[arg(long)]
    pub emg: Option<String>,
    #[arg(long)]
    pub ecg: Option<String>,
}

impl ChannelArgs {
    fn map(&self) -> ChannelMap {
        let d = ChannelMap::default();
        ChannelMap {
            eeg: self.eeg.clone().unwrap_or(d.eeg),
            eog: self.eog.clone().unwrap_or(d.eog),
            emg: self.emg.clone().unwrap_or(d.emg),
            ecg: self.ecg.clone().unwrap_or(d.ecg),
        }
    }
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of subjects [default: 20].
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Share of subjects drawn from the disturbed profile [default: 0.5].
    #[arg(long)]
    pub disturbed_fraction: Option<f64>,
    /// Epochs per night [default: 960].
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn synth(a: SynthArgs, force: bool) -> Result<()> {
    let out = required(a.out, "out")?;
    let cohort = gen_cohort(a.subjects.unwrap_or(20), a.disturbed_fraction.unwrap_or(0.5), a.seed.unwrap_or(0), a.epochs.unwrap_or(960))?;
    let subjects_csv = out.join("subjects.csv");
    let cohort_json = out.join("cohort.json");
    let mut targets = vec![subjects_csv.clone(), cohort_json.clone()];
    for s in &cohort.subjects {
        for ext in ["edf", "json", "truth.json"] {
            targets.push(out.join(format!("{}.{ext}", s.id)));
        }
    }
    for t in &targets {
        io::guard(t, force)?;
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let written = par::map_range(cohort.subjects.len(), |i| {
        let night = cohort.night(i)?;
        write_night_files(&out, &cohort.subjects[i].id, &night, &cohort.profile(i))
    });
    for (r, s) in written.into_iter().zip(&cohort.subjects) {
        r.with_context(|| format!("subject {}", s.id))?;
    }
    io::write_output(&subjects_csv, cohort.subjects_csv()?.as_bytes(), true)?;
    io::write_output(&cohort_json, serde_json::to_string_pretty(&cohort)?.as_bytes(), true)?;
    log::info!("wrote {} subjects to {}", cohort.subjects.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// Directory of `<id>.edf` recordings with stage sidecars.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint manifest path; weights go next to it with extension `.bin`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step loss trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Where to record the recording-level split (JSON).
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Optimizer steps [default: 300].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adam learning rate [default: 1e-3].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs per mini-batch [default: 16].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for initialization, sampling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// joint | classification-only
    #[arg(long, value_parser = snake::<TrainMode>)]
    pub mode: Option<TrainMode>,
    /// chain-sum | strict
    #[arg(long, value_parser = snake::<CompositionPolicy>)]
    pub margin_policy: Option<CompositionPolicy>,
    /// Weight of the REM cross-entropy term [default: 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Share of recordings used for training [default: 0.7].
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// desk | full
    #[arg(long, value_parser = snake::<ModelSize>)]
    pub model_size: Option<ModelSize>,
    /// Channel label patterns; `[<subcommand>.channels]` in the config file.
    #[command(flatten)]
    pub channels: ChannelArgs,
}

/// Recording-level split as written by `train --split`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SplitFile {
    pub train_fraction: f64,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

fn load_dir_nights(recs: &[(String, PathBuf)], idx: &[usize], map: &ChannelMap) -> Result<Vec<EpochGrid>> {
    par::map_slice(idx, |&i| {
        let (id, path) = &recs[i];
        let side = io::find_sidecar(path).ok_or_else(|| anyhow!("{id}: no stage sidecar next to {}", path.display()))?;
        io::load_night(path, Some((&side.0, side.1.as_deref())), map)
    })
    .into_iter()
    .collect()
}

pub fn train(a: TrainArgs, force: bool) -> Result<()> {
    let data = required(a.data, "data")?;
    io::require(&data, "data directory")?;
    let out = required(a.out, "out")?;
    for p in [Some(out.clone()), Some(out.with_extension("bin")), a.trace.clone(), a.split.clone()].iter().flatten() {
        io::guard(p, force)?;
    }
    let cfg = TrainConfig {
        learning_rate: a.lr.unwrap_or(1e-3),
        batch_size: a.batch_size.unwrap_or(16),
        max_steps: a.steps.unwrap_or(300),
        seed: a.seed.unwrap_or(0),
        mode: a.mode.unwrap_or_default(),
        alpha: a.alpha.unwrap_or(1.0),
        margin_policy: a.margin_policy.unwrap_or_default(),
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let spec = SplitSpec { train_fraction: a.train_fraction.unwrap_or(0.7), seed: a.split_seed.unwrap_or(0) };
    let recs = io::list_edf(&data)?;
    let (train_idx, test_idx) = spec.split(recs.len()).map_err(|e| usage(e.to_string()))?;
    if train_idx.is_empty() {
        return Err(usage("the split leaves no training recordings"));
    }
    let grids = load_dir_nights(&recs, &train_idx, &a.channels.map())?;
    let refs: Vec<&EpochGrid> = grids.iter().collect();
    let pool = Pool::from_grids(&refs)?;
    log::info!("training on {} epochs from {} recordings", pool.len(), grids.len());
    let model_cfg = match a.model_size.unwrap_or_default() {
        ModelSize::Desk => ModelConfig::desk(),
        ModelSize::Full => ModelConfig::full(),
    };
    let mut model = SdiModel::new(model_cfg, cfg.seed)?;
    let trace = run_training(&mut model, &pool, &cfg)?;
    if let Some(last) = trace.rows.last() {
        log::info!("final loss {:.5} (rank {:.5}, rem {:.5})", last.total, last.rank_loss, last.clas_loss);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_to_path(&model, &out)?;
    if let Some(p) = &a.trace {
        io::write_output(p, trace.to_csv().as_bytes(), force)?;
    }
    if let Some(p) = &a.split {
        let ids = |ix: &[usize]| ix.iter().map(|&i| recs[i].0.clone()).collect();
        let split = SplitFile { train_fraction: spec.train_fraction, seed: spec.seed, train: ids(&train_idx), test: ids(&test_idx) };
        io::write_output(p, serde_json::to_string_pretty(&split)?.as_bytes(), force)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- annotate

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateArgs {
    /// Checkpoint manifest written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// One EDF file or a directory of them.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Stage/arousal sidecar for a single input (JSON or stage CSV); found
    /// automatically next to each EDF otherwise.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Arousal CSV to pair with a stage CSV.
    #[arg(long)]
    pub arousals: Option<PathBuf>,
    /// Output CSV for a single input, or a directory of `<id>.sdi.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Channel label patterns; `[<subcommand>.channels]` in the config file.
    #[command(flatten)]
    pub channels: ChannelArgs,
}

pub fn annotate(a: AnnotateArgs, force: bool) -> Result<()> {
    let model_path = required(a.model, "model")?;
    io::require(&model_path, "model")?;
    let input = required(a.input, "input")?;
    io::require(&input, "input")?;
    let out = required(a.out, "out")?;
    let map = a.channels.map();
    let jobs: Vec<(PathBuf, Option<(PathBuf, Option<PathBuf>)>, PathBuf)> = if input.is_dir() {
        if a.annotations.is_some() {
            return Err(usage("--annotations applies to a single input file; directory inputs use sidecars"));
        }
        io::list_edf(&input)?
            .into_iter()
            .map(|(id, p)| {
                let side = io::find_sidecar(&p);
                (p, side, out.join(format!("{id}{SDI_SUFFIX}")))
            })
            .collect()
    } else {
        let side = match a.annotations {
            Some(p) => {
                io::require(&p, "annotations")?;
                if let Some(ar) = &a.arousals {
                    io::require(ar, "arousals")?;
                }
                Some((p, a.arousals))
            }
            None => io::find_sidecar(&input),
        };
        vec![(input.clone(), side, out.clone())]
    };
    for (_, _, dst) in &jobs {
        io::guard(dst, force)?;
    }
    let model = load_from_path(&model_path).with_context(|| format!("loading {}", model_path.display()))?;
    for (edf, side, dst) in &jobs {
        let grid = io::load_night(edf, side.as_ref().map(|(p, a)| (p.as_path(), a.as_deref())), &map)?;
        let night = annotate_night(&grid, &model).with_context(|| format!("annotating {}", edf.display()))?;
        let csv = night.to_csv(grid.stages.as_deref(), grid.arousal_proportion.as_deref())?;
        io::write_output(dst, csv.as_bytes(), force)?;
        log::info!("{} -> {} ({} epochs)", edf.display(), dst.display(), night.n_epochs());
    }
    Ok(())
}

// ---------------------------------------------------------------- features

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesArgs {
    /// One `<id>.sdi.csv` or a directory of them.
    #[arg(long)]
    pub sdi: Option<PathBuf>,
    /// Feature table CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// approximate | sample
    #[arg(long, value_parser = snake::<EntropyKind>)]
    pub entropy: Option<EntropyKind>,
    /// Entropy embedding dimension [default: 2].
    #[arg(long)]
    pub entropy_m: Option<usize>,
    /// Entropy tolerance as a multiple of the SD [default: 0.2].
    #[arg(long)]
    pub entropy_r: Option<f64>,
    /// Depth below which an epoch counts as shallow [default: 0.2].
    #[arg(long)]
    pub rb_threshold: Option<f64>,
}

/// `(id, night, stages, arousal)` for one input file or every `*.sdi.csv` of a directory.
type NightFile = (String, SdiNight, Option<Vec<Stage>>, Option<Vec<f64>>);

fn read_nights(path: &Path) -> Result<Vec<NightFile>> {
    let files = if path.is_dir() {
        let f = io::list_with_suffix(path, SDI_SUFFIX)?;
        if f.is_empty() {
            return Err(usage(format!("no *{SDI_SUFFIX} files in {}", path.display())));
        }
        f
    } else {
        vec![(io::id_of(path, SDI_SUFFIX), path.to_path_buf())]
    };
    par::map_slice(&files, |(id, p)| {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let (night, stages, arousal) = SdiNight::from_csv(&text).with_context(|| format!("parsing {}", p.display()))?;
        Ok((id.clone(), night, stages, arousal))
    })
    .into_iter()
    .collect()
}

pub fn features(a: FeaturesArgs, force: bool) -> Result<()> {
    let sdi = required(a.sdi, "sdi")?;
    io::require(&sdi, "sdi input")?;
    let out = required(a.out, "out")?;
    io::guard(&out, force)?;
    let d = BiomarkerOptions::default();
    let opts = BiomarkerOptions {
        rb_threshold: a.rb_threshold.unwrap_or(d.rb_threshold),
        entropy: a.entropy.unwrap_or(d.entropy),
        entropy_m: a.entropy_m.unwrap_or(d.entropy_m),
        entropy_r: a.entropy_r.unwrap_or(d.entropy_r),
    };
    let nights = read_nights(&sdi)?;
    let rows: Vec<FeatureRow> = par::map_slice(&nights, |(id, night, stages, _)| -> Result<FeatureRow> {
        let b = biomarkers::biomarkers(night, stages.as_deref(), &opts).with_context(|| format!("biomarkers of {id}"))?;
        let metrics = biomarkers::night_metrics(&night.sdi, stages.as_deref())?;
        Ok(FeatureRow { recording_id: id.clone(), biomarkers: b, metrics })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    io::write_output(&out, features_csv(&rows).as_bytes(), force)
}

// ---------------------------------------------------------------- cluster

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterArgs {
    /// Feature table written by `features`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Assignment CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// full | diagonal
    #[arg(long, value_parser = snake::<Covariance>)]
    pub covariance: Option<Covariance>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative log-likelihood change that stops EM.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Added to covariance diagonals in each M-step.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Also write the fitted mixture as JSON.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

pub fn cluster(a: ClusterArgs, force: bool) -> Result<()> {
    let features = required(a.features, "features")?;
    io::require(&features, "feature table")?;
    let out = required(a.out, "out")?;
    io::guard(&out, force)?;
    if let Some(p) = &a.model_out {
        io::guard(p, force)?;
    }
    let text = std::fs::read_to_string(&features)?;
    let (ids, cells) = read_features_csv(&text)?;
    let rows = impute_median(&cells.iter().map(|r| r.to_vec()).collect::<Vec<_>>())?;
    let d = GmmConfig::default();
    let cfg = GmmConfig {
        covariance: a.covariance.unwrap_or(d.covariance),
        tol: a.tol.unwrap_or(d.tol),
        max_iter: a.max_iter.unwrap_or(d.max_iter),
        ridge: a.ridge.unwrap_or(d.ridge),
        seed: a.seed.unwrap_or(d.seed),
        rb_index: 0,
    };
    let model = fit_gmm(&rows, &cfg)?;
    if !model.converged {
        log::warn!("EM stopped after {} iterations without converging", model.log_likelihood_trace.len());
    }
    let assigned = assign_subtypes(&model, &rows)?;
    io::write_output(&out, assignments_csv(&ids, &assigned).as_bytes(), force)?;
    if let Some(p) = &a.model_out {
        io::write_output(p, serde_json::to_string_pretty(&model)?.as_bytes(), force)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- plot

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotArgs {
    /// One `<id>.sdi.csv` or a directory of them.
    #[arg(long)]
    pub sdi: Option<PathBuf>,
    /// Stage/arousal sidecar for a single input when the CSV lacks those columns.
    #[arg(long)]
    pub stages: Option<PathBuf>,
    /// SVG file for a single input, or a directory of `<id>.svg`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Leave out the recording id heading.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub no_title: bool,
}

pub fn plot(a: PlotArgs, force: bool) -> Result<()> {
    let sdi = required(a.sdi, "sdi")?;
    io::require(&sdi, "sdi input")?;
    let out = required(a.out, "out")?;
    let dir_mode = sdi.is_dir();
    if dir_mode && a.stages.is_some() {
        return Err(usage("--stages applies to a single input file"));
    }
    let sidecar = match &a.stages {
        Some(p) => {
            io::require(p, "stages")?;
            Some(Annotations::load(p, None)?)
        }
        None => None,
    };
    let nights = read_nights(&sdi)?;
    let dst = |id: &str| if dir_mode { out.join(format!("{id}.svg")) } else { out.clone() };
    for (id, ..) in &nights {
        io::guard(&dst(id), force)?;
    }
    for (id, night, stages, arousal) in &nights {
        let n = night.n_epochs();
        let stages = stages.clone().or_else(|| {
            let s = sidecar.as_ref()?.stages.as_ref()?;
            Some(s.iter().copied().take(n).collect::<Vec<_>>())
        });
        if stages.as_ref().is_some_and(|s| s.len() != n) {
            return Err(anyhow!("{id}: {} stage labels for {n} epochs", stages.map_or(0, |s| s.len())));
        }
        let arousal = match (arousal, &sidecar) {
            (Some(a), _) => Some(a.clone()),
            (None, Some(ann)) => {
                let ev = ann.arousal_events()?;
                Some((0..n).map(|i| arousal_proportion(&ev, i)).collect())
            }
            (None, None) => None,
        };
        let metrics = biomarkers::night_metrics(&night.sdi, stages.as_deref())?;
        let ap = biomarkers::ap(&night.sdi, metrics.sleep_epochs)?;
        let fig = Figure {
            title: if a.no_title { "" } else { id },
            sdi: &night.sdi,
            stages: stages.as_deref(),
            arousal: arousal.as_deref(),
            metrics,
            ap,
        };
        io::write_output(&dst(id), svg::render(&fig).as_bytes(), force)?;
    }
    Ok(())
}
