//! Evaluation and cohort statistics in one JSON report.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use sdi_core::annotator::depth_decrease;
use sdi_core::biomarkers::{read_features_csv, BiomarkerVector};
use sdi_core::stats::{
    auroc, auroc_bootstrap_ci, chi_square_2x2, cohens_d, cox_ph, decile_arousal_analysis, km_estimate, logistic_or,
    logrank, mean, one_hot, pair_with_arousal, quantile_sorted, spearman_concordance, welch_t, BinnedCorrelation,
    ChiSquare, CoxFit, Interval, KaplanMeier, LogRank, NegativePolicy, OddsRatio, TTest, Ties,
};
use sdi_core::Stage;

use super::{read_nights, required, snake, SplitFile};
use crate::io;

#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeArgs {
    /// One `<id>.sdi.csv` or a directory of them.
    #[arg(long)]
    pub sdi: Option<PathBuf>,
    /// Split file from `train --split`; only its test recordings are evaluated.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Feature table for group comparisons.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Subtype assignments; groups come from the subject table's `disturbed` column otherwise.
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    /// Subject table (`id,disturbed,age,sex,bmi,race,outcome,time,event`).
    #[arg(long)]
    pub subjects: Option<PathBuf>,
    /// JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Bins over [0, 1] for the decrease/arousal relation [default: 10].
    #[arg(long)]
    pub n_bins: Option<usize>,
    /// Epochs between a depth decrease and the arousal it is paired with [default: 0].
    #[arg(long)]
    pub offset: Option<usize>,
    /// exclude | clamp: handling of negative decreases.
    #[arg(long, value_parser = snake::<NegativePolicy>)]
    pub negative: Option<NegativePolicy>,
    /// Bootstrap replicates for confidence intervals; 0 disables them [default: 1000].
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the binned arousal table as CSV.
    #[arg(long)]
    pub binned_csv: Option<PathBuf>,
}

impl AnalyzeArgs {
    fn resolved(mut self) -> Self {
        self.n_bins.get_or_insert(10);
        self.offset.get_or_insert(0);
        self.negative.get_or_insert(NegativePolicy::Exclude);
        self.bootstrap.get_or_insert(1000);
        self.seed.get_or_insert(0);
        self
    }
}

#[derive(Serialize)]
struct Report {
    flags: AnalyzeArgs,
    n_nights: usize,
    recordings: Vec<String>,
    concordance: Option<Concordance>,
    rem_auroc: Option<RemReport>,
    arousal: Option<BinnedCorrelation>,
    cohort: Option<CohortReport>,
}

#[derive(Serialize)]
struct Concordance {
    per_night: BTreeMap<String, f64>,
    mean_spearman: f64,
    /// Nights where concordance is undefined (e.g. a single non-REM stage).
    skipped: Vec<String>,
    median_sdi_by_stage: BTreeMap<&'static str, f64>,
}

#[derive(Serialize)]
struct RemReport {
    auroc: f64,
    /// Night-level cluster bootstrap.
    ci: Option<Interval>,
    n_epochs: usize,
    n_rem: usize,
}

#[derive(Serialize)]
struct Comparison {
    n_normal: usize,
    n_disturbed: usize,
    mean_normal: f64,
    mean_disturbed: f64,
    welch: TTest,
    cohen_d: f64,
}

#[derive(Serialize)]
struct CoxReport {
    covariates: Vec<String>,
    fit: CoxFit,
}

#[derive(Serialize)]
struct CohortReport {
    group_source: &'static str,
    n_subjects: usize,
    n_disturbed: usize,
    biomarkers: BTreeMap<&'static str, Comparison>,
    age: Comparison,
    bmi: Comparison,
    sex_chi_square: ChiSquare,
    outcome_or_unadjusted: OddsRatio,
    outcome_or_adjusted: OddsRatio,
    logrank: LogRank,
    cox_unadjusted: CoxReport,
    cox_adjusted: CoxReport,
    km_normal: KaplanMeier,
    km_disturbed: KaplanMeier,
}

#[derive(Debug, Deserialize)]
struct SubjectRow {
    id: String,
    disturbed: u8,
    age: f64,
    sex: u8,
    bmi: f64,
    race: u8,
    outcome: u8,
    time: f64,
    event: u8,
}

#[derive(Debug, Deserialize)]
struct AssignmentRow {
    recording_id: String,
    label: String,
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<Vec<T>> {
    io::require(path, "table")?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).with_context(|| format!("reading {}", path.display()))?;
    rdr.deserialize().collect::<Result<_, _>>().with_context(|| format!("parsing {}", path.display()))
}

fn compare(normal: &[f64], disturbed: &[f64]) -> Result<Comparison> {
    Ok(Comparison {
        n_normal: normal.len(),
        n_disturbed: disturbed.len(),
        mean_normal: mean(normal),
        mean_disturbed: mean(disturbed),
        welch: welch_t(normal, disturbed)?,
        cohen_d: cohens_d(normal, disturbed)?,
    })
}

pub fn analyze(a: AnalyzeArgs, force: bool) -> Result<()> {
    let a = a.resolved();
    let sdi = required(a.sdi.clone(), "sdi")?;
    io::require(&sdi, "sdi input")?;
    let out = required(a.out.clone(), "out")?;
    io::guard(&out, force)?;
    if let Some(p) = &a.binned_csv {
        io::guard(p, force)?;
    }
    let (n_bins, offset, replicates, seed) =
        (a.n_bins.unwrap_or(10), a.offset.unwrap_or(0), a.bootstrap.unwrap_or(0), a.seed.unwrap_or(0));

    let mut nights = read_nights(&sdi)?;
    if let Some(p) = &a.split {
        io::require(p, "split file")?;
        let split: SplitFile = serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?;
        nights.retain(|n| split.test.contains(&n.0));
        if nights.is_empty() {
            return Err(anyhow!("none of the split's test recordings were found under {}", sdi.display()));
        }
    }

    // concordance and REM discrimination need stage labels
    let staged: Vec<_> = nights.iter().filter_map(|(id, n, s, _)| s.as_ref().map(|s| (id, n, s))).collect();
    let concordance = if staged.is_empty() {
        None
    } else {
        let mut per_night = BTreeMap::new();
        let mut skipped = Vec::new();
        let mut by_stage: BTreeMap<Stage, Vec<f64>> = BTreeMap::new();
        for (id, n, s) in &staged {
            match spearman_concordance(&n.sdi, s) {
                Ok(r) => {
                    per_night.insert((*id).clone(), r);
                }
                Err(e) => {
                    log::warn!("{id}: {e}");
                    skipped.push((*id).clone());
                }
            }
            for (v, st) in n.sdi.iter().zip(s.iter()) {
                by_stage.entry(*st).or_default().push(*v);
            }
        }
        let vals: Vec<f64> = per_night.values().copied().collect();
        if vals.is_empty() {
            return Err(anyhow!("concordance is undefined on every night"));
        }
        let median_sdi_by_stage = by_stage
            .into_iter()
            .map(|(st, mut v)| {
                v.sort_by(f64::total_cmp);
                (st.label(), quantile_sorted(&v, 0.5))
            })
            .collect();
        Some(Concordance { per_night, mean_spearman: mean(&vals), skipped, median_sdi_by_stage })
    };
    let rem_auroc = if staged.is_empty() {
        None
    } else {
        let (mut scores, mut labels, mut clusters) = (Vec::new(), Vec::new(), Vec::new());
        for (k, (_, n, s)) in staged.iter().enumerate() {
            scores.extend_from_slice(&n.rem_prob);
            labels.extend(s.iter().map(|st| st.is_rem()));
            clusters.extend(std::iter::repeat_n(k, s.len()));
        }
        let value = auroc(&scores, &labels).context("REM AUROC")?;
        let ci = (replicates > 0).then(|| auroc_bootstrap_ci(&scores, &labels, Some(&clusters), replicates, seed)).transpose()?;
        Some(RemReport { auroc: value, ci, n_epochs: labels.len(), n_rem: labels.iter().filter(|l| **l).count() })
    };

    let aroused: Vec<_> = nights.iter().filter_map(|(id, n, _, ar)| ar.as_ref().map(|ar| (id, n, ar))).collect();
    let arousal = if aroused.is_empty() {
        None
    } else {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (id, n, ar) in &aroused {
            let d = depth_decrease(n).with_context(|| format!("depth decrease of {id}"))?;
            let (x, y) = pair_with_arousal(&d, ar, offset)?;
            xs.extend(x);
            ys.extend(y);
        }
        Some(decile_arousal_analysis(&xs, &ys, n_bins, a.negative.unwrap_or_default()).context("arousal binning")?)
    };

    let cohort = match &a.subjects {
        Some(p) => Some(cohort_report(&a, p, replicates, seed).context("cohort statistics")?),
        None => None,
    };

    if let (Some(p), Some(b)) = (&a.binned_csv, &arousal) {
        io::write_output(p, b.to_csv().as_bytes(), force)?;
    }
    let report = Report {
        recordings: nights.iter().map(|n| n.0.clone()).collect(),
        n_nights: nights.len(),
        flags: a,
        concordance,
        rem_auroc,
        arousal,
        cohort,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    io::write_output(&out, json.as_bytes(), force)
}

fn cohort_report(a: &AnalyzeArgs, subjects_path: &PathBuf, replicates: usize, seed: u64) -> Result<CohortReport> {
    let subjects: Vec<SubjectRow> = read_csv(subjects_path)?;
    let (group_source, groups): (&'static str, HashMap<String, bool>) = match &a.assignments {
        Some(p) => {
            let rows: Vec<AssignmentRow> = read_csv(p)?;
            ("assignments", rows.into_iter().map(|r| (r.recording_id, r.label == "disturbed")).collect())
        }
        None => ("subjects", subjects.iter().map(|s| (s.id.clone(), s.disturbed != 0)).collect()),
    };
    let subjects: Vec<&SubjectRow> = subjects.iter().filter(|s| groups.contains_key(&s.id)).collect();
    if subjects.len() < 4 {
        return Err(anyhow!("only {} subjects have a group label", subjects.len()));
    }
    let g: Vec<bool> = subjects.iter().map(|s| groups[&s.id]).collect();
    let split = |f: &dyn Fn(&SubjectRow) -> f64| -> (Vec<f64>, Vec<f64>) {
        let (mut n, mut d) = (Vec::new(), Vec::new());
        for (s, &dist) in subjects.iter().zip(&g) {
            if dist { d.push(f(s)) } else { n.push(f(s)) }
        }
        (n, d)
    };

    let mut biomarkers = BTreeMap::new();
    if let Some(p) = &a.features {
        io::require(p, "feature table")?;
        let (ids, rows) = read_features_csv(&std::fs::read_to_string(p)?)?;
        let by_id: HashMap<&String, &[Option<f64>; 8]> = ids.iter().zip(&rows).collect();
        for (k, name) in BiomarkerVector::NAMES.iter().enumerate() {
            let (mut n, mut d) = (Vec::new(), Vec::new());
            for (s, &dist) in subjects.iter().zip(&g) {
                if let Some(v) = by_id.get(&s.id).and_then(|r| r[k]) {
                    if dist { d.push(v) } else { n.push(v) }
                }
            }
            biomarkers.insert(*name, compare(&n, &d).with_context(|| format!("biomarker {name}"))?);
        }
    }
    let (an, ad) = split(&|s| s.age);
    let (bn, bd) = split(&|s| s.bmi);
    let mut table = [[0.0; 2]; 2];
    for (s, &dist) in subjects.iter().zip(&g) {
        table[dist as usize][(s.sex == 0) as usize] += 1.0;
    }

    let outcome: Vec<bool> = subjects.iter().map(|s| s.outcome != 0).collect();
    let age: Vec<f64> = subjects.iter().map(|s| s.age).collect();
    let sex: Vec<f64> = subjects.iter().map(|s| s.sex as f64).collect();
    let bmi: Vec<f64> = subjects.iter().map(|s| s.bmi).collect();
    let race: Vec<u8> = subjects.iter().map(|s| s.race).collect();
    let mut adjust = vec![age, sex, bmi];
    let mut adjust_names: Vec<String> = vec!["age".into(), "sex".into(), "bmi".into()];
    let race_cols = one_hot(&race, 0);
    let mut levels: Vec<u8> = race.iter().copied().filter(|&r| r != 0).collect();
    levels.sort_unstable();
    levels.dedup();
    adjust_names.extend(levels.iter().map(|l| format!("race_{l}")));
    adjust.extend(race_cols);
    let boot = (replicates > 0).then_some((replicates, seed));

    let time: Vec<f64> = subjects.iter().map(|s| s.time).collect();
    let event: Vec<bool> = subjects.iter().map(|s| s.event != 0).collect();
    let gcol: Vec<f64> = g.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
    let mut cox_cols = vec![gcol.clone()];
    cox_cols.extend(adjust.iter().cloned());
    let mut cox_names = vec!["disturbed".to_string()];
    cox_names.extend(adjust_names.iter().cloned());
    let pick = |want: bool| -> (Vec<f64>, Vec<bool>) {
        (0..g.len()).filter(|&i| g[i] == want).map(|i| (time[i], event[i])).unzip()
    };
    let (tn, en) = pick(false);
    let (td, ed) = pick(true);

    Ok(CohortReport {
        group_source,
        n_subjects: subjects.len(),
        n_disturbed: g.iter().filter(|x| **x).count(),
        biomarkers,
        age: compare(&an, &ad).context("age")?,
        bmi: compare(&bn, &bd).context("bmi")?,
        sex_chi_square: chi_square_2x2(table).context("sex")?,
        outcome_or_unadjusted: logistic_or(&outcome, &g, &[], boot).context("unadjusted odds ratio")?,
        outcome_or_adjusted: logistic_or(&outcome, &g, &adjust, boot).context("adjusted odds ratio")?,
        logrank: logrank(&time, &event, &g).context("log-rank")?,
        cox_unadjusted: CoxReport {
            covariates: vec!["disturbed".into()],
            fit: cox_ph(&time, &event, &[gcol], Ties::Breslow).context("unadjusted Cox")?,
        },
        cox_adjusted: CoxReport { covariates: cox_names, fit: cox_ph(&time, &event, &cox_cols, Ties::Breslow).context("adjusted Cox")? },
        km_normal: km_estimate(&tn, &en)?,
        km_disturbed: km_estimate(&td, &ed)?,
    })
}
