//! Acceptance gate. Prints one PASS/FAIL line per criterion and fails the run
//! on any failure not listed in `KNOWN_UNATTAINABLE`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use sdi_core::annotator::{annotate_night, depth_decrease};
use sdi_core::biomarkers::{ap, apen, cv, dfa, rb};
use sdi_core::edf_io::{parse_edf, write_edf, Channel, EpochGrid, Recording, SignalSpec};
use sdi_core::model::{load_from_path, save_to_path, ModelConfig, SdiModel};
use sdi_core::numeric::{grad_check, Coverage, ParamStore, Tape, Tensor, Var};
use sdi_core::objective::{pair_penalty, rank_loss, MarginTable, TrainMode};
use sdi_core::stats::{
    auroc, cohens_d, cox_ph, decile_arousal_analysis, km_estimate, logistic_or, mean, pair_with_arousal,
    quantile_sorted, spearman_concordance, NegativePolicy, Ties,
};
use sdi_core::subtyping::{assign_subtypes, fit_gmm, Covariance, GmmConfig, Subtype};
use sdi_core::synth::{gen_cohort, gen_night, SynthProfile};
use sdi_core::trainer::{batch_loss_on_tape, train, Pool, SplitSpec, TrainConfig};
use sdi_core::{rng, Stage};

/// Criteria that cannot be met as written; they still print FAIL.
const KNOWN_UNATTAINABLE: &[u8] = &[8];

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, format!("took {elapsed:.1?}, limit {limit:?}"))
}

// ------------------------------------------------------------------ 1

fn oracle_margin(a: u8, b: u8) -> Option<f64> {
    match (a.min(b), a.max(b)) {
        (0, 1) => Some(1.0),
        (1, 2) => Some(0.5),
        (2, 3) => Some(1.5),
        (0, 4) => Some(1.2),
        (0, 2) => Some(1.5),
        (0, 3) => Some(3.0),
        (1, 3) => Some(2.0),
        _ => None,
    }
}

fn brute_rank_loss(p: &[f64], y: &[u8]) -> (f64, usize) {
    let (mut total, mut count) = (0.0, 0);
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            if let Some(m) = oracle_margin(y[i], y[j]) {
                let s = (y[i] as f64 - y[j] as f64).signum();
                total += (m - s * (p[i] - p[j])).max(0.0);
                count += 1;
            }
        }
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (total / count as f64, count)
    }
}

fn stages(codes: &[u8]) -> Vec<Stage> {
    codes.iter().map(|&c| Stage::from_code(c).unwrap()).collect()
}

fn loss_oracle() -> Check {
    let t0 = Instant::now();
    let mut r = rng::seeded(2024);
    let table = MarginTable::default();
    let mut masked = 0;
    for b in 0..200 {
        let n = r.random_range(2..=16);
        // cycle through full mixes, REM-heavy, single-stage and two-stage batches
        let pool: Vec<u8> = match b % 4 {
            0 => vec![0, 1, 2, 3, 4],
            1 => vec![1, 2, 3, 4],
            2 => vec![r.random_range(0..5)],
            _ => vec![r.random_range(0..5), r.random_range(0..5)],
        };
        let y: Vec<u8> = (0..n).map(|_| pool[r.random_range(0..pool.len())]).collect();
        let p: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let got = rank_loss(&p, &stages(&y), &table).map_err(|e| e.to_string())?;
        let (want, pairs) = brute_rank_loss(&p, &y);
        ensure(got.value == want && got.n_pairs == pairs, format!("batch {b}: {} vs {want}", got.value))?;
        masked += (pairs < n * (n - 1) / 2) as usize;
    }
    within(t0.elapsed(), Duration::from_secs(10))?;
    Ok(format!("200 batches exact, {masked} with masked pairs, {:.2?}", t0.elapsed()))
}

// ------------------------------------------------------------------ 2

fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut r = rng::seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn op_error(inputs: &[Tensor], op: impl Fn(&mut Tape, &[Var]) -> sdi_core::Result<Var>) -> f64 {
    let mut params = ParamStore::new();
    for (i, t) in inputs.iter().enumerate() {
        params.add(format!("x{i}"), t.clone());
    }
    grad_check(
        &params,
        |p, tape| {
            let vars: Vec<Var> = p.ids().map(|id| p.place(tape, id)).collect();
            let out = op(tape, &vars)?;
            let shape = tape.value(out).shape().to_vec();
            let w = tape.constant(random_tensor(&shape, 99, -1.0, 1.0));
            let prod = tape.mul(out, w)?;
            Ok(tape.sum(prod))
        },
        1e-6,
        Coverage::All,
    )
    .unwrap()
    .max_rel_error
}

fn gradient_integrity() -> Check {
    let t0 = Instant::now();
    let a = random_tensor(&[3, 4], 1, -1.0, 1.0);
    let b = random_tensor(&[4, 5], 2, -1.0, 1.0);
    let c = random_tensor(&[3, 4], 3, -1.0, 1.0);
    let row = random_tensor(&[1, 4], 4, -1.0, 1.0);
    let pos = random_tensor(&[3, 4], 5, 0.5, 2.0);
    let kinked = Tensor::new(vec![3, 4], a.data().iter().map(|x| if x.abs() < 0.05 { x + 0.1 } else { *x }).collect()).unwrap();
    let errors = [
        op_error(&[a.clone(), b], |t, v| t.matmul(v[0], v[1])),
        op_error(&[a.clone(), c.clone()], |t, v| t.add(v[0], v[1])),
        op_error(&[a.clone(), c.clone()], |t, v| t.sub(v[0], v[1])),
        op_error(&[a.clone(), c.clone()], |t, v| t.mul(v[0], v[1])),
        op_error(&[a.clone(), row.clone()], |t, v| t.add_row(v[0], v[1])),
        op_error(std::slice::from_ref(&a), |t, v| Ok(t.scale(v[0], -2.5))),
        op_error(std::slice::from_ref(&a), |t, v| t.transpose(v[0])),
        op_error(&[a.clone(), c.clone()], |t, v| t.concat_rows(&[v[0], v[1]])),
        op_error(&[a.clone(), c], |t, v| t.concat_cols(&[v[0], v[1]])),
        op_error(std::slice::from_ref(&a), |t, v| t.softmax(v[0])),
        op_error(std::slice::from_ref(&a), |t, v| t.log_softmax(v[0])),
        op_error(&[a.clone(), row.clone(), random_tensor(&[1, 4], 6, -1.0, 1.0)], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)),
        op_error(std::slice::from_ref(&a), |t, v| Ok(t.gelu(v[0]))),
        op_error(std::slice::from_ref(&a), |t, v| Ok(t.sigmoid(v[0]))),
        op_error(&[pos], |t, v| t.log(v[0])),
        op_error(&[kinked], |t, v| Ok(t.relu(v[0]))),
        op_error(std::slice::from_ref(&a), |t, v| t.mean(v[0])),
        op_error(&[a], |t, v| Ok(t.sum(v[0]))),
    ];
    let per_op = errors.iter().copied().fold(0.0, f64::max);
    ensure(per_op < 1e-4, format!("per-op rel error {per_op:.2e}"))?;

    let night = gen_night(&SynthProfile { n_epochs: 120, seed: 5, ..SynthProfile::default() }).unwrap();
    let grid = night.to_grid().unwrap();
    let mut picked: Vec<usize> = Vec::new();
    for want in [Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::R, Stage::N2] {
        let i = (0..grid.len()).find(|&i| grid.stage(i) == Some(want) && !picked.contains(&i)).ok_or("fixture lacks a stage")?;
        picked.push(i);
    }
    let epochs: Vec<&[f32]> = picked.iter().map(|&i| grid.epoch(i)).collect();
    let labels: Vec<Stage> = picked.iter().map(|&i| grid.stage(i).unwrap()).collect();
    let model = SdiModel::new(ModelConfig::desk(), 3).unwrap();
    let cfg = TrainConfig::default();
    let report = grad_check(
        model.params(),
        |p, tape| Ok(batch_loss_on_tape(&model, p, tape, &epochs, &labels, &cfg)?.total),
        1e-5,
        Coverage::Sampled { per_tensor: 3, seed: 17 },
    )
    .map_err(|e| e.to_string())?;
    ensure(report.max_rel_error < 1e-3, format!("encoder rel error {:.2e}", report.max_rel_error))?;
    within(t0.elapsed(), Duration::from_secs(120))?;
    Ok(format!("per-op {per_op:.1e}, encoder+loss {:.1e} over {} entries, {:.1?}", report.max_rel_error, report.checked, t0.elapsed()))
}

// ------------------------------------------------------------------ 3

fn hand_values() -> Check {
    use Stage::*;
    let t = MarginTable::default();
    let got = [
        pair_penalty(0.0, 2.0, W, N1, &t).map_err(|e| e.to_string())?,
        pair_penalty(0.3, 0.3, N1, N2, &t).map_err(|e| e.to_string())?,
        pair_penalty(2.0, 0.0, N3, N2, &t).map_err(|e| e.to_string())?,
    ];
    ensure(got == [0.0, 0.5, 0.0], format!("penalties {got:?}"))?;
    let mut r = rng::seeded(77);
    for _ in 0..200 {
        let n = r.random_range(2..=16);
        // a 1/256 grid keeps every difference exact
        let p: Vec<f64> = (0..n).map(|_| r.random_range(-768..768) as f64 / 256.0).collect();
        let y: Vec<Stage> = (0..n).map(|_| Stage::from_code(r.random_range(0..5)).unwrap()).collect();
        let c = r.random_range(-1024..1024) as f64 / 256.0;
        let shifted: Vec<f64> = p.iter().map(|x| x + c).collect();
        ensure(rank_loss(&p, &y, &t).unwrap() == rank_loss(&shifted, &y, &t).unwrap(), "translation changed the loss")?;
    }
    Ok("penalties (0, 0.5, 0); translation invariance exact on 200 batches".into())
}

// ------------------------------------------------------------------ 4–6 fixture

struct Trained {
    spearman: f64,
    medians: [f64; 4],
    rem_auroc: f64,
    clas_only_auroc: f64,
    clas_only_spearman: f64,
    arousal_r: f64,
    arousal_slope: f64,
    train_time: Duration,
}

fn trained_fixture() -> Trained {
    let cohort = gen_cohort(60, 0.5, 11, 240).unwrap();
    let (train_idx, test_idx) = SplitSpec { train_fraction: 0.7, seed: 1 }.split(60).unwrap();
    let grids: Vec<EpochGrid> = train_idx.iter().map(|&i| cohort.night(i).unwrap().to_grid().unwrap()).collect();
    let refs: Vec<&EpochGrid> = grids.iter().collect();
    let pool = Pool::from_grids(&refs).unwrap();
    let cfg = TrainConfig { learning_rate: 1e-3, batch_size: 16, max_steps: 300, seed: 3, ..TrainConfig::default() };
    let t0 = Instant::now();
    let mut joint = SdiModel::new(ModelConfig::desk(), 7).unwrap();
    train(&mut joint, &pool, &cfg).unwrap();
    let train_time = t0.elapsed();
    let mut clas = SdiModel::new(ModelConfig::desk(), 7).unwrap();
    train(&mut clas, &pool, &TrainConfig { mode: TrainMode::ClassificationOnly, ..cfg }).unwrap();
    drop(refs);
    drop(grids);

    let (mut rho, mut rho_c) = (Vec::new(), Vec::new());
    let (mut sdi, mut st, mut rem, mut rem_c, mut is_rem) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut dd, mut aa) = (Vec::new(), Vec::new());
    for &i in &test_idx {
        let night = cohort.night(i).unwrap();
        let grid = night.to_grid().unwrap();
        let a = annotate_night(&grid, &joint).unwrap();
        let c = annotate_night(&grid, &clas).unwrap();
        rho.push(spearman_concordance(&a.sdi, &night.stages).unwrap());
        rho_c.push(spearman_concordance(&c.sdi, &night.stages).unwrap());
        sdi.extend_from_slice(&a.sdi);
        st.extend_from_slice(&night.stages);
        rem.extend_from_slice(&a.rem_prob);
        rem_c.extend_from_slice(&c.rem_prob);
        is_rem.extend(night.stages.iter().map(|s| s.is_rem()));
        let (d, y) = pair_with_arousal(&depth_decrease(&a).unwrap(), &night.arousal_proportions(), 0).unwrap();
        dd.extend(d);
        aa.extend(y);
    }
    let median = |s: Stage| {
        let mut v: Vec<f64> = sdi.iter().zip(&st).filter(|(_, x)| **x == s).map(|(v, _)| *v).collect();
        v.sort_by(f64::total_cmp);
        quantile_sorted(&v, 0.5)
    };
    let binned = decile_arousal_analysis(&dd, &aa, 10, NegativePolicy::Exclude).unwrap();
    Trained {
        spearman: mean(&rho),
        medians: [median(Stage::W), median(Stage::N1), median(Stage::N2), median(Stage::N3)],
        rem_auroc: auroc(&rem, &is_rem).unwrap(),
        clas_only_auroc: auroc(&rem_c, &is_rem).unwrap(),
        clas_only_spearman: mean(&rho_c),
        arousal_r: binned.pearson_r,
        arousal_slope: binned.slope,
        train_time,
    }
}

fn ordinal_recovery(f: &Trained) -> Check {
    ensure(f.spearman >= 0.80, format!("mean Spearman {:.4}", f.spearman))?;
    ensure(f.medians.windows(2).all(|w| w[0] < w[1]), format!("medians {:?}", f.medians))?;
    within(f.train_time, Duration::from_secs(15 * 60))?;
    let m = f.medians;
    Ok(format!(
        "held-out Spearman {:.4}; medians W {:.3} < N1 {:.3} < N2 {:.3} < N3 {:.3}; 300 steps in {:.0?}",
        f.spearman, m[0], m[1], m[2], m[3], f.train_time
    ))
}

fn rem_head(f: &Trained) -> Check {
    ensure(f.rem_auroc >= 0.95, format!("REM AUROC {:.4}", f.rem_auroc))?;
    Ok(format!(
        "REM AUROC {:.4}; classification-only {:.4} (delta {:+.4}; its Spearman {:.4})",
        f.rem_auroc,
        f.clas_only_auroc,
        f.clas_only_auroc - f.rem_auroc,
        f.clas_only_spearman
    ))
}

fn arousal_pipeline(f: &Trained) -> Check {
    ensure(f.arousal_r >= 0.9, format!("bin-mean r {:.4}", f.arousal_r))?;
    let mut r = rng::seeded(12);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let d: Vec<f64> = (0..50_000).map(|_| r.random::<f64>()).collect();
    let a: Vec<f64> = d.iter().map(|x| 0.8 * x + noise.sample(&mut r)).collect();
    let planted = decile_arousal_analysis(&d, &a, 10, NegativePolicy::Exclude).map_err(|e| e.to_string())?;
    ensure((planted.slope / 0.8 - 1.0).abs() <= 0.05, format!("planted slope {:.4}", planted.slope))?;
    Ok(format!("model SDI bin-mean r {:.4} (slope {:.3}); planted slope {:.4}", f.arousal_r, f.arousal_slope, planted.slope))
}

// ------------------------------------------------------------------ 7

fn biomarker_oracles() -> Check {
    ensure(apen(&[0.7; 300], 2, 0.2).unwrap() == 0.0, "ApEn of a constant")?;
    let alt: Vec<f64> = (0..512).map(|i| (i % 2) as f64).collect();
    let p2 = apen(&alt, 2, 0.2).unwrap();
    ensure(p2 < 0.05, format!("period-2 ApEn {p2}"))?;
    let (mut white, mut walk) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let mut r = rng::seeded(1000 + seed);
        let w: Vec<f64> = (0..4096).map(|_| StandardNormal.sample(&mut r)).collect();
        let cum: Vec<f64> = w.iter().scan(0.0, |acc, x| { *acc += x; Some(*acc) }).collect();
        white.push(dfa(&w).unwrap());
        walk.push(dfa(&cum).unwrap());
    }
    let (mw, mc) = (mean(&white), mean(&walk));
    ensure((0.40..=0.60).contains(&mw), format!("white-noise DFA {mw:.3}"))?;
    ensure((1.35..=1.65).contains(&mc), format!("cumulative-sum DFA {mc:.3}"))?;
    let hand = [
        (rb(&[0.1, 0.3, 0.15, 0.5], 0.2).unwrap(), 0.5),
        (ap(&[0.5; 40], 40).unwrap(), 0.5),
        (ap(&[1.0, 1.0, 0.0, 0.0], 4).unwrap(), 0.5),
        (cv(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 2.5f64.sqrt() / 3.0),
        (cv(&[0.4; 10]).unwrap(), 0.0),
    ];
    for (got, want) in hand {
        ensure((got - want).abs() < 1e-12, format!("hand value {got} vs {want}"))?;
    }
    Ok(format!("ApEn const 0, period-2 {p2:.4}; DFA white {mw:.3}, walk {mc:.3}; RB/AP/CV to 1e-12"))
}

// ------------------------------------------------------------------ 8

fn effect_size() -> Check {
    let mut r = rng::seeded(31);
    let na = Normal::new(0.32, 0.11).unwrap();
    let nb = Normal::new(0.51, 0.17).unwrap();
    let a: Vec<f64> = (0..1000).map(|_| na.sample(&mut r)).collect();
    let b: Vec<f64> = (0..1000).map(|_| nb.sample(&mut r)).collect();
    let d = cohens_d(&a, &b).map_err(|e| e.to_string())?;
    let population = 0.19 / ((0.11f64.powi(2) + 0.17f64.powi(2)) / 2.0).sqrt();
    ensure(
        (d - 1.63).abs() <= 0.15,
        format!("d {d:.3}, target 1.63 ± 0.15; the stated moments imply d = {population:.3} in the population"),
    )?;
    Ok(format!("d {d:.3}"))
}

// ------------------------------------------------------------------ 9

fn normal(r: &mut rng::Rng) -> f64 {
    StandardNormal.sample(r)
}

fn blobs(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut r = rng::seeded(seed);
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for g in [false, true] {
        let shift = if g { 6.0 } else { 0.0 };
        for _ in 0..n_per {
            rows.push((0..8).map(|j| shift * if j % 2 == 0 { 1.0 } else { -0.5 } + normal(&mut r)).collect());
            truth.push(g);
        }
    }
    (rows, truth)
}

fn gmm_checks() -> Check {
    let (rows, truth) = blobs(300, 4);
    let mut accs = Vec::new();
    for covariance in [Covariance::Full, Covariance::Diagonal] {
        let cfg = GmmConfig { covariance, seed: 1, ..GmmConfig::default() };
        let model = fit_gmm(&rows, &cfg).map_err(|e| e.to_string())?;
        let a = assign_subtypes(&model, &rows).map_err(|e| e.to_string())?;
        let hits = a.iter().zip(&truth).filter(|(x, &t)| (x.label == Subtype::Disturbed) == t).count();
        let acc = hits as f64 / rows.len() as f64;
        ensure(acc >= 0.99, format!("{covariance:?} accuracy {acc}"))?;
        accs.push(acc);
        for w in model.log_likelihood_trace.windows(2) {
            ensure(w[1] >= w[0] - 1e-9 * w[0].abs(), format!("log-likelihood fell {} -> {}", w[0], w[1]))?;
        }
    }
    let squeezed: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * 0.3).collect()).collect();
    let m = fit_gmm(&squeezed, &GmmConfig { seed: 2, ..GmmConfig::default() }).map_err(|e| e.to_string())?;
    for w in m.log_likelihood_trace.windows(2) {
        ensure(w[1] >= w[0] - 1e-9 * w[0].abs(), "log-likelihood fell on overlapping blobs")?;
    }
    let cfg = GmmConfig { seed: 77, ..GmmConfig::default() };
    ensure(fit_gmm(&rows, &cfg).unwrap() == fit_gmm(&rows, &cfg).unwrap(), "seeded fits differ")?;
    Ok(format!("accuracy full {:.3}, diagonal {:.3}; EM monotone; seeded fits identical", accs[0], accs[1]))
}

// ------------------------------------------------------------------ 10

fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn partial_ll(time: &[f64], event: &[bool], x: &[f64], beta: f64) -> f64 {
    (0..time.len())
        .filter(|&i| event[i])
        .map(|i| {
            let denom: f64 = (0..time.len()).filter(|&j| time[j] >= time[i]).map(|j| (beta * x[j]).exp()).sum();
            beta * x[i] - denom.ln()
        })
        .sum()
}

fn stats_oracles() -> Check {
    let mut r = rng::seeded(9);
    for _ in 0..200 {
        let n = r.random_range(2..=200);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..20) as f64 / 10.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.random()).collect();
        labels[0] = true;
        labels[1] = false;
        ensure(auroc(&scores, &labels).unwrap() == brute_auroc(&scores, &labels), "AUROC differs from pair counting")?;
    }
    let (mut outcome, mut group) = (Vec::new(), Vec::new());
    for (g, y, count) in [(true, true, 10), (true, false, 20), (false, true, 40), (false, false, 30)] {
        for _ in 0..count {
            group.push(g);
            outcome.push(y);
        }
    }
    let or = logistic_or(&outcome, &group, &[], None).map_err(|e| e.to_string())?.odds_ratio;
    ensure((or - 0.375).abs() < 1e-6, format!("OR {or}"))?;
    let km = km_estimate(&[1.0, 2.0], &[true, true]).unwrap();
    ensure([km.at(0.5), km.at(1.0), km.at(1.999), km.at(2.0)] == [1.0, 0.5, 0.5, 0.0], "KM hand values")?;

    let time = [2.0, 3.5, 1.0, 6.0, 4.2, 5.1, 7.3, 0.6];
    let event = [true, true, false, true, true, false, true, true];
    let x = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let fit = cox_ph(&time, &event, &[x.to_vec()], Ties::Breslow).map_err(|e| e.to_string())?;
    let grid = (-50_000..=50_000)
        .map(|k| k as f64 * 1e-4)
        .map(|b| (partial_ll(&time, &event, &x, b), b))
        .fold((f64::NEG_INFINITY, 0.0), |best, c| if c.0 > best.0 { c } else { best });
    ensure((fit.beta[0] - grid.1).abs() < 1e-3, format!("Cox β {} vs grid {}", fit.beta[0], grid.1))?;

    let cohort = gen_cohort(2000, 0.5, 17, 10).unwrap();
    let s = &cohort.subjects;
    let t: Vec<f64> = s.iter().map(|x| x.time).collect();
    let e: Vec<bool> = s.iter().map(|x| x.event).collect();
    let g: Vec<f64> = s.iter().map(|x| if x.disturbed { 1.0 } else { 0.0 }).collect();
    let hr = cox_ph(&t, &e, &[g], Ties::Breslow).map_err(|e| e.to_string())?.hazard_ratio[0];
    ensure((1.3..=1.7).contains(&hr), format!("planted HR {hr}"))?;
    Ok(format!("AUROC exact on 200 sets; OR {or:.6}; KM exact; Cox β {:.4} vs grid {:.4}; planted HR {hr:.3}", fit.beta[0], grid.1))
}

// ------------------------------------------------------------------ 11–12

fn sdi_bin() -> &'static str {
    env!("CARGO_BIN_EXE_sdi")
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(sdi_bin()).args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("sdi {} exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr).trim()),
    )
}

const CONFIG: &str = "\
[train]
steps = 150
lr = 1e-3
batch_size = 16
seed = 7
split_seed = 1

[analyze]
n_bins = 10
bootstrap = 200
seed = 5
";

/// The seven-stage pipeline on a 20-subject cohort, with relative paths under `dir`.
fn pipeline(dir: &Path) -> Result<(), String> {
    std::fs::write(dir.join("sdi.toml"), CONFIG).map_err(|e| e.to_string())?;
    let c = ["--config", "sdi.toml"];
    let steps: [&[&str]; 7] = [
        &["synth", "--out", "data", "--subjects", "20", "--epochs", "240", "--seed", "3"],
        &["train", "--data", "data", "--out", "model/sdi.json", "--trace", "model/trace.csv", "--split", "model/split.json"],
        &["annotate", "--model", "model/sdi.json", "--input", "data", "--out", "sdi"],
        &["features", "--sdi", "sdi", "--out", "features.csv"],
        &["cluster", "--features", "features.csv", "--out", "assignments.csv", "--seed", "1", "--model-out", "gmm.json"],
        &[
            "analyze", "--sdi", "sdi", "--features", "features.csv", "--assignments", "assignments.csv", "--subjects",
            "data/subjects.csv", "--out", "report.json", "--binned-csv", "binned.csv",
        ],
        &["plot", "--sdi", "sdi", "--out", "plots"],
    ];
    for s in steps {
        let args: Vec<&str> = c.iter().chain(s.iter()).copied().collect();
        run_cli(dir, &args)?;
    }
    Ok(())
}

fn all_files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

struct EndToEnd {
    elapsed: Duration,
    first: tempfile::TempDir,
    second: Result<tempfile::TempDir, String>,
}

fn end_to_end() -> Result<EndToEnd, String> {
    let first = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    pipeline(first.path())?;
    let elapsed = t0.elapsed();
    let second = tempfile::tempdir().map_err(|e| e.to_string()).and_then(|d| pipeline(d.path()).map(|_| d));
    Ok(EndToEnd { elapsed, first, second })
}

fn format_round_trips(e2e: &Result<EndToEnd, String>) -> Check {
    let mut r = rng::seeded(6);
    let start = chrono_start();
    for case in 0..20 {
        let n_records = r.random_range(1..6);
        let mut channels = Vec::new();
        let mut specs = Vec::new();
        for k in 0..r.random_range(1..4) {
            let rate = [50usize, 100, 128, 200][r.random_range(0..4)];
            let lim: f64 = r.random_range(1.0..2000.0);
            let samples: Vec<f64> = (0..rate * n_records).map(|_| r.random_range(-lim..=lim)).collect();
            specs.push(SignalSpec::new(&format!("CH{k}"), -lim, lim, rate));
            channels.push(Channel { label: format!("CH{k}"), sampling_rate: rate as f64, samples });
        }
        let rec = Recording::new(channels, start).unwrap();
        let back = parse_edf(&write_edf(&rec, &specs).unwrap()).map_err(|e| e.to_string())?;
        for ((a, b), spec) in rec.channels().iter().zip(back.channels()).zip(&specs) {
            ensure(a.samples.len() == b.samples.len(), format!("case {case}: length changed"))?;
            let half = spec.quantum() / 2.0 * (1.0 + 1e-9);
            ensure(a.samples.iter().zip(&b.samples).all(|(x, y)| (x - y).abs() <= half), format!("case {case}: beyond quantum"))?;
        }
        ensure(parse_edf(&write_edf(&back, &specs).unwrap()).unwrap() == back, "second pass not exact")?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.json");
    let mut m = SdiModel::new(ModelConfig::desk(), 12).unwrap();
    m.round_to_f32();
    save_to_path(&m, &path).map_err(|e| e.to_string())?;
    let back = load_from_path(&path).map_err(|e| e.to_string())?;
    ensure(back.params() == m.params(), "checkpoint parameters differ")?;

    let e2e = e2e.as_ref().map_err(|e| format!("pipeline failed: {e}"))?;
    let second = e2e.second.as_ref().map_err(|e| format!("second pipeline run failed: {e}"))?;
    let (fa, fb) = (all_files(e2e.first.path()), all_files(second.path()));
    ensure(fa == fb, "the two runs produced different file sets")?;
    for f in &fa {
        let same = std::fs::read(e2e.first.path().join(f)).unwrap() == std::fs::read(second.path().join(f)).unwrap();
        ensure(same, format!("{} differs between runs", f.display()))?;
    }
    Ok(format!("EDF within half a quantum on 20 recordings; checkpoint bit-exact; {} CLI outputs byte-identical across runs", fa.len()))
}

fn chrono_start() -> chrono::NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(2021, 3, 14).unwrap().and_hms_opt(22, 15, 0).unwrap()
}

fn finite_numbers(v: &serde_json::Value, path: &str, bad: &mut Vec<String>) {
    match v {
        serde_json::Value::Number(n) if !n.as_f64().is_some_and(f64::is_finite) => bad.push(path.to_string()),
        serde_json::Value::Array(a) => a.iter().enumerate().for_each(|(i, x)| finite_numbers(x, &format!("{path}[{i}]"), bad)),
        serde_json::Value::Object(o) => o.iter().for_each(|(k, x)| finite_numbers(x, &format!("{path}.{k}"), bad)),
        serde_json::Value::Null if !path.starts_with(".flags") => bad.push(path.to_string()),
        _ => {}
    }
}

fn end_to_end_check(e2e: &Result<EndToEnd, String>) -> Check {
    let e2e = e2e.as_ref().map_err(|e| format!("pipeline failed: {e}"))?;
    let root = e2e.first.path();
    within(e2e.elapsed, Duration::from_secs(20 * 60))?;
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("report.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    for key in ["concordance", "rem_auroc", "arousal", "cohort"] {
        ensure(report.get(key).is_some_and(|v| !v.is_null()), format!("report lacks {key}"))?;
    }
    let mut bad = Vec::new();
    finite_numbers(&report, "", &mut bad);
    ensure(bad.is_empty(), format!("non-finite or missing values at {bad:?}"))?;
    let svgs: Vec<_> = all_files(&root.join("plots"));
    ensure(svgs.len() == 20, format!("{} plots", svgs.len()))?;
    for s in &svgs {
        let text = std::fs::read_to_string(root.join("plots").join(s)).unwrap();
        for id in ["id=\"hypnogram\"", "id=\"sdi-curve\"", "id=\"arousal-shading\"", "id=\"metrics\""] {
            ensure(text.contains(id), format!("{} lacks {id}", s.display()))?;
        }
    }
    Ok(format!(
        "20 subjects in {:.0?}; report with finite statistics (Spearman {:.3}); {} SVGs with hypnogram, curve, shading",
        e2e.elapsed,
        report["concordance"]["mean_spearman"].as_f64().unwrap_or(f64::NAN),
        svgs.len()
    ))
}

// ------------------------------------------------------------------ gate

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

#[test]
fn acceptance() {
    let mut results: Vec<(u8, &str, Check)> = Vec::new();
    results.push((1, "loss-oracle equivalence", guarded(loss_oracle)));
    results.push((2, "gradient integrity", guarded(gradient_integrity)));
    results.push((3, "ranking-loss hand values", guarded(hand_values)));
    let fixture = catch_unwind(trained_fixture).map_err(|_| "training fixture panicked".to_string());
    let on_fixture = |f: fn(&Trained) -> Check| match &fixture {
        Ok(t) => guarded(|| f(t)),
        Err(e) => Err(e.clone()),
    };
    results.push((4, "synthetic ordinal recovery", on_fixture(ordinal_recovery)));
    results.push((5, "REM head", on_fixture(rem_head)));
    results.push((6, "arousal correlation pipeline", on_fixture(arousal_pipeline)));
    results.push((7, "biomarker oracles", guarded(biomarker_oracles)));
    results.push((8, "effect-size replication", guarded(effect_size)));
    results.push((9, "GMM", guarded(gmm_checks)));
    results.push((10, "statistics oracles", guarded(stats_oracles)));
    let e2e = catch_unwind(end_to_end).unwrap_or_else(|_| Err("pipeline panicked".into()));
    results.push((11, "format round-trips", guarded(|| format_round_trips(&e2e))));
    results.push((12, "end-to-end", guarded(|| end_to_end_check(&e2e))));

    println!();
    let mut unexpected = Vec::new();
    for (id, name, r) in &results {
        match r {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(why) => {
                let known = KNOWN_UNATTAINABLE.contains(id);
                let tag = if known { " (known, unattainable as stated)" } else { "" };
                println!("criterion {id:>2} FAIL  {name}: {why}{tag}");
                if !known {
                    unexpected.push(*id);
                }
            }
        }
    }
    let passed = results.iter().filter(|r| r.2.is_ok()).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
}
