//! Seeded synthetic polysomnography with a known latent depth.
//!
//! Stages follow a Markov chain. Each epoch gets a latent depth inside its
//! stage's range, drifting smoothly between epochs, and arousals pull it down.
//! Signals are built from unit-variance AR(2) resonators whose amplitudes
//! depend on depth and stage: delta grows and beta shrinks with depth, alpha
//! marks wake, theta marks N1 and REM, spindles mark N2. EMG tone falls with
//! depth and nearly vanishes in REM; a fixed cardiac artifact on the EMG lead
//! keeps the tone level visible after per-epoch normalisation. EOG carries
//! slow rolling movements in light sleep and saccades in REM. The ECG is a
//! jittered pulse train slowing with depth.
//!
//! All randomness comes from ChaCha8 streams, so output is identical across
//! platforms for a given seed.

use std::f64::consts::PI;
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::edf_io::{
    arousal_proportion, segment_epochs, write_edf, Annotations, ArousalEvent, ArousalEvents, Channel, EpochGrid,
    Recording, SignalSpec, EPOCH_SAMPLES, EPOCH_SECONDS,
};
use crate::error::{Error, Result};
use crate::model::write_atomic;
use crate::rng::{self, Rng};
use crate::stage::Stage;

const RATE: f64 = 100.0;

/// Generator parameters for one night.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub n_epochs: usize,
    /// Row-stochastic, indexed by stage code.
    pub transition: [[f64; 5]; 5],
    /// Latent depth range per stage code.
    pub depth_ranges: [(f64, f64); 5],
    pub arousal_rate_per_hour: f64,
    /// Latent depth lost per unit of arousal proportion in an epoch.
    pub arousal_depth_drop: f64,
    /// Chance that a move to a lighter sleep stage comes with an arousal.
    pub transition_arousal_prob: f64,
    /// White-noise amplitude relative to the default.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            n_epochs: 240,
            transition: [
                [0.85, 0.12, 0.02, 0.00, 0.01],
                [0.06, 0.72, 0.19, 0.00, 0.03],
                [0.00, 0.06, 0.84, 0.07, 0.03],
                [0.00, 0.02, 0.10, 0.88, 0.00],
                [0.01, 0.07, 0.04, 0.00, 0.88],
            ],
            depth_ranges: [(0.0, 0.1), (0.1, 0.35), (0.3, 0.7), (0.7, 1.0), (0.2, 0.6)],
            arousal_rate_per_hour: 10.0,
            arousal_depth_drop: 0.6,
            transition_arousal_prob: 1.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthProfile {
    /// Fragmented sleep: more arousals, shallower depth, less N3 and REM.
    pub fn disturbed(seed: u64) -> Self {
        let mut p = SynthProfile { seed, arousal_rate_per_hour: 30.0, ..Default::default() };
        for r in &mut p.depth_ranges[1..] {
            *r = (r.0 * 0.8, r.1 * 0.8);
        }
        p.transition[2] = [0.01, 0.10, 0.83, 0.04, 0.02];
        p.transition[3] = [0.00, 0.05, 0.15, 0.80, 0.00];
        p.transition[4] = [0.02, 0.12, 0.06, 0.00, 0.80];
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_epochs == 0 {
            return Err(Error::invalid("synthetic night needs at least one epoch"));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("transition row {i} is not a probability vector")));
            }
        }
        for (i, &(lo, hi)) in self.depth_ranges.iter().enumerate() {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::invalid(format!("depth range {i} ({lo}, {hi}) outside [0, 1]")));
            }
        }
        if self.arousal_rate_per_hour < 0.0 || self.arousal_depth_drop < 0.0 || self.noise < 0.0 {
            return Err(Error::invalid("arousal rate, depth drop and noise must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.transition_arousal_prob) {
            return Err(Error::invalid("transition arousal probability outside [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthNight {
    pub recording: Recording,
    pub stages: Vec<Stage>,
    pub arousals: ArousalEvents,
    pub latent_depth: Vec<f64>,
}

impl SynthNight {
    pub fn n_epochs(&self) -> usize {
        self.stages.len()
    }

    /// Epoch grid straight from the in-memory signals.
    pub fn to_grid(&self) -> Result<EpochGrid> {
        segment_epochs(&self.recording, Some(&self.stages), Some(&self.arousals))
    }

    pub fn annotations(&self) -> Annotations {
        Annotations { stages: Some(self.stages.clone()), arousals: self.arousals.events.clone() }
    }

    pub fn arousal_proportions(&self) -> Vec<f64> {
        (0..self.n_epochs()).map(|i| arousal_proportion(&self.arousals, i)).collect()
    }
}

/// Unit-variance AR(2) resonator centred on `freq` Hz.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    x1: f64,
    x2: f64,
}

impl Resonator {
    fn new(freq: f64, radius: f64) -> Self {
        let a1 = 2.0 * radius * (2.0 * PI * freq / RATE).cos();
        let a2 = -radius * radius;
        let var = (1.0 - a2) / ((1.0 + a2) * ((1.0 - a2).powi(2) - a1 * a1));
        Resonator { a1, a2, gain: 1.0 / var.sqrt(), x1: 0.0, x2: 0.0 }
    }

    fn next(&mut self, rng: &mut Rng) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        let x = self.a1 * self.x1 + self.a2 * self.x2 + e;
        self.x2 = self.x1;
        self.x1 = x;
        x * self.gain
    }
}

fn markov_stages(p: &SynthProfile, rng: &mut Rng) -> Vec<Stage> {
    let mut out = Vec::with_capacity(p.n_epochs);
    let mut s = 0usize;
    for _ in 0..p.n_epochs {
        out.push(Stage::ALL[s]);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let row = &p.transition[s];
        let mut next = 4;
        for (j, &pr) in row.iter().enumerate() {
            acc += pr;
            if u < acc {
                next = j;
                break;
            }
        }
        s = next;
    }
    out
}

fn range_mid(p: &SynthProfile, s: Stage) -> f64 {
    let (lo, hi) = p.depth_ranges[s.code() as usize];
    (lo + hi) / 2.0
}

fn gen_arousals(p: &SynthProfile, stages: &[Stage], rng: &mut Rng) -> Result<ArousalEvents> {
    let per_epoch = p.arousal_rate_per_hour * EPOCH_SECONDS / 3600.0;
    let mut events = Vec::new();
    for (t, &s) in stages.iter().enumerate() {
        if s == Stage::W {
            continue;
        }
        let lightened = t > 0 && stages[t - 1] != Stage::W && range_mid(p, s) < range_mid(p, stages[t - 1]);
        let chance = if lightened { p.transition_arousal_prob.max(per_epoch) } else { per_epoch };
        if rng.random::<f64>() >= chance.min(1.0) {
            continue;
        }
        let epoch_start = t as f64 * EPOCH_SECONDS;
        let duration = rng.random_range(3.0..15.0);
        // an arousal that moves sleep to a lighter stage opens the epoch
        let latest = if lightened { 5.0 } else { EPOCH_SECONDS - 3.0 };
        let offset = rng.random_range(0.0..latest);
        let start = epoch_start + offset;
        let mut end = start + duration;
        // never spill into a wake epoch or past the end of the night
        let next_ok = t + 1 < stages.len() && stages[t + 1] != Stage::W;
        if !next_ok {
            end = end.min(epoch_start + EPOCH_SECONDS);
        }
        if let Some(last) = events.last() {
            let ArousalEvent { start: ls, duration: ld } = *last;
            if start < ls + ld {
                continue;
            }
        }
        events.push(ArousalEvent { start: round_ms(start), duration: round_ms(end - start) });
    }
    ArousalEvents::new(events)
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn latent_depths(p: &SynthProfile, stages: &[Stage], arousal: &[f64], rng: &mut Rng) -> Vec<f64> {
    let mut z: f64 = StandardNormal.sample(rng);
    stages
        .iter()
        .zip(arousal)
        .map(|(s, a)| {
            let e: f64 = StandardNormal.sample(rng);
            z = 0.9 * z + 0.436 * e;
            let u = crate::numeric::sigmoid(1.2 * z);
            let (lo, hi) = p.depth_ranges[s.code() as usize];
            (lo + (hi - lo) * u - p.arousal_depth_drop * a).clamp(0.0, 1.0)
        })
        .collect()
}

/// Per-sample arousal indicator.
fn arousal_mask(events: &ArousalEvents, n: usize) -> Vec<bool> {
    let mut m = vec![false; n];
    for e in &events.events {
        let a = ((e.start * RATE).floor() as usize).min(n);
        let b = (((e.start + e.duration) * RATE).ceil() as usize).min(n);
        m[a..b].iter_mut().for_each(|v| *v = true);
    }
    m
}

pub fn gen_night(p: &SynthProfile) -> Result<SynthNight> {
    p.validate()?;
    let mut r_stage = rng::stream(p.seed, 1);
    let stages = markov_stages(p, &mut r_stage);
    let arousals = gen_arousals(p, &stages, &mut r_stage)?;
    let prop: Vec<f64> = (0..stages.len()).map(|i| arousal_proportion(&arousals, i)).collect();
    let latent = latent_depths(p, &stages, &prop, &mut r_stage);

    let n = stages.len() * EPOCH_SAMPLES;
    let mask = arousal_mask(&arousals, n);
    let noise = p.noise;

    let mut r = rng::stream(p.seed, 2);
    let mut delta = Resonator::new(1.5, 0.985);
    let mut theta = Resonator::new(6.0, 0.97);
    let mut alpha = Resonator::new(10.0, 0.98);
    let mut sigma = Resonator::new(13.0, 0.97);
    let mut beta = Resonator::new(22.0, 0.9);
    let mut eeg = Vec::with_capacity(n);
    for t in 0..n {
        let e = t / EPOCH_SAMPLES;
        let (d, s) = (latent[e], stages[e]);
        let aroused = mask[t];
        let mut a_delta = 8.0 + 70.0 * d;
        let mut a_beta = 3.0 + 14.0 * (1.0 - d);
        let mut a_alpha = if s == Stage::W { 16.0 } else { 2.0 };
        let a_theta = if matches!(s, Stage::N1 | Stage::R) { 12.0 } else { 3.0 };
        let a_sigma = if s == Stage::N2 { 8.0 } else { 1.0 };
        if aroused {
            a_delta *= 0.4;
            a_beta += 25.0;
            a_alpha += 12.0;
        }
        let white: f64 = StandardNormal.sample(&mut r);
        eeg.push(
            a_delta * delta.next(&mut r)
                + a_theta * theta.next(&mut r)
                + a_alpha * alpha.next(&mut r)
                + a_sigma * sigma.next(&mut r)
                + a_beta * beta.next(&mut r)
                + 3.0 * noise * white,
        );
    }

    let mut r = rng::stream(p.seed, 3);
    let mut drift = 0.0f64;
    let mut saccade = 0.0f64;
    let mut eog = Vec::with_capacity(n);
    for t in 0..n {
        let e = t / EPOCH_SAMPLES;
        let s = stages[e];
        let roll = match s {
            Stage::W => 30.0,
            Stage::N1 => 45.0,
            Stage::N2 => 10.0,
            _ => 4.0,
        };
        let w: f64 = StandardNormal.sample(&mut r);
        drift = 0.995 * drift + 0.0999 * w;
        if s == Stage::R && r.random::<f64>() < 0.6 / RATE {
            saccade += if r.random::<bool>() { 120.0 } else { -120.0 };
        }
        if s == Stage::W && r.random::<f64>() < 0.2 / RATE {
            saccade += if r.random::<bool>() { 60.0 } else { -60.0 };
        }
        saccade *= 0.97;
        let white: f64 = StandardNormal.sample(&mut r);
        eog.push(roll * drift + saccade + 0.15 * eeg[t] + 3.0 * noise * white);
    }

    let mut r = rng::stream(p.seed, 4);
    let jitter = Normal::new(0.0, 0.04).expect("valid std");
    let mut ecg = vec![0.0; n];
    let mut beat_times = Vec::new();
    let mut next_beat = r.random_range(0.0..1.0);
    while next_beat < n as f64 / RATE {
        beat_times.push(next_beat);
        let e = ((next_beat * RATE) as usize / EPOCH_SAMPLES).min(stages.len() - 1);
        let hr = 72.0 - 12.0 * latent[e] + if mask[(next_beat * RATE) as usize] { 8.0 } else { 0.0 };
        next_beat += (60.0 / hr + jitter.sample(&mut r)).max(0.3);
    }
    for &bt in &beat_times {
        let c = bt * RATE;
        let lo = (c - 8.0).max(0.0) as usize;
        let hi = ((c + 8.0) as usize).min(n);
        for (k, v) in ecg.iter_mut().enumerate().take(hi).skip(lo) {
            let dt = (k as f64 - c) / RATE;
            *v += 1000.0 * (-(dt / 0.012).powi(2)).exp() - 150.0 * (-((dt - 0.04) / 0.02).powi(2)).exp();
        }
    }
    for v in &mut ecg {
        let w: f64 = StandardNormal.sample(&mut r);
        *v += 10.0 * noise * w;
    }

    let mut r = rng::stream(p.seed, 5);
    let mut emg = Vec::with_capacity(n);
    for t in 0..n {
        let e = t / EPOCH_SAMPLES;
        let tone = match stages[e] {
            Stage::R => 1.0,
            _ => 2.0 + 22.0 * (1.0 - latent[e]).powi(2),
        };
        let burst = if mask[t] { 30.0 } else { 0.0 };
        let w: f64 = StandardNormal.sample(&mut r);
        let white: f64 = StandardNormal.sample(&mut r);
        emg.push((tone + burst) * w + 0.02 * ecg[t] + 0.5 * noise * white);
    }

    let clamp = |v: Vec<f64>, lim: f64| v.into_iter().map(|x| x.clamp(-lim, lim)).collect::<Vec<_>>();
    let start = NaiveDate::from_ymd_opt(2020, 1, 1)
        .and_then(|d| d.and_hms_opt(22, 0, 0))
        .expect("valid date");
    let channels = vec![
        Channel { label: "EEG C4-M1".into(), sampling_rate: RATE, samples: clamp(eeg, EEG_LIMIT) },
        Channel { label: "EOG E2-M1".into(), sampling_rate: RATE, samples: clamp(eog, EEG_LIMIT) },
        Channel { label: "EMG Chin".into(), sampling_rate: RATE, samples: clamp(emg, EMG_LIMIT) },
        Channel { label: "ECG".into(), sampling_rate: RATE, samples: clamp(ecg, ECG_LIMIT) },
    ];
    Ok(SynthNight { recording: Recording::new(channels, start)?, stages, arousals, latent_depth: latent })
}

const EEG_LIMIT: f64 = 500.0;
const EMG_LIMIT: f64 = 300.0;
const ECG_LIMIT: f64 = 3000.0;

/// EDF signal headers used for synthetic nights; 30 s data records.
pub fn signal_specs(recording: &Recording) -> Vec<SignalSpec> {
    recording
        .channels()
        .iter()
        .map(|c| {
            let lim = match c.label.as_str() {
                l if l.starts_with("EMG") => EMG_LIMIT,
                l if l.starts_with("ECG") => ECG_LIMIT,
                _ => EEG_LIMIT,
            };
            let mut s = SignalSpec::new(&c.label, -lim, lim, EPOCH_SAMPLES);
            s.physical_dimension = "uV".into();
            s
        })
        .collect()
}

/// Per-night ground truth written next to the EDF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NightTruth {
    pub latent_depth: Vec<f64>,
    pub profile: SynthProfile,
}

/// Writes `<id>.edf`, `<id>.json` (stages and arousals) and `<id>.truth.json`.
pub fn write_night_files(dir: &Path, id: &str, night: &SynthNight, profile: &SynthProfile) -> Result<()> {
    let edf = write_edf(&night.recording, &signal_specs(&night.recording))?;
    write_atomic(&dir.join(format!("{id}.edf")), &edf)?;
    write_atomic(&dir.join(format!("{id}.json")), night.annotations().to_json()?.as_bytes())?;
    let truth = NightTruth { latent_depth: night.latent_depth.clone(), profile: profile.clone() };
    write_atomic(&dir.join(format!("{id}.truth.json")), serde_json::to_string_pretty(&truth)?.as_bytes())?;
    Ok(())
}

/// One cohort member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub disturbed: bool,
    pub age: f64,
    /// 1 = male
    pub sex: u8,
    pub bmi: f64,
    /// Category code 0–3.
    pub race: u8,
    pub outcome: bool,
    /// Years of follow-up.
    pub time: f64,
    pub event: bool,
    pub night_seed: u64,
}

/// Effect sizes used to generate outcomes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffects {
    pub outcome_odds_ratio: f64,
    pub outcome_base_prob: f64,
    pub hazard_ratio: f64,
    pub base_hazard_per_year: f64,
    pub max_follow_up_years: f64,
}

impl Default for PlantedEffects {
    fn default() -> Self {
        PlantedEffects {
            outcome_odds_ratio: 1.6,
            outcome_base_prob: 0.3,
            hazard_ratio: 1.5,
            base_hazard_per_year: 0.08,
            max_follow_up_years: 15.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub subjects: Vec<Subject>,
    pub planted: PlantedEffects,
    pub n_epochs: usize,
}

/// Subject table with planted group effects; nights are generated on demand by [`Cohort::night`].
///
/// Outcomes and survival depend only on the disturbed flag, so unadjusted
/// models recover the planted effects.
pub fn gen_cohort(n_subjects: usize, disturbed_fraction: f64, seed: u64, n_epochs: usize) -> Result<Cohort> {
    if n_subjects < 2 {
        return Err(Error::invalid(format!("cohort needs at least 2 subjects, got {n_subjects}")));
    }
    if !(0.0..=1.0).contains(&disturbed_fraction) {
        return Err(Error::invalid(format!("disturbed fraction {disturbed_fraction} outside [0, 1]")));
    }
    let planted = PlantedEffects::default();
    let mut r = rng::stream(seed, 0xC0);
    let n_disturbed = (disturbed_fraction * n_subjects as f64).round() as usize;
    let mut flags: Vec<bool> = (0..n_subjects).map(|i| i < n_disturbed).collect();
    rand::seq::SliceRandom::shuffle(flags.as_mut_slice(), &mut r);
    let age = Normal::new(62.0, 10.0).expect("valid std");
    let bmi = Normal::new(28.0, 5.0).expect("valid std");
    let base_logit = (planted.outcome_base_prob / (1.0 - planted.outcome_base_prob)).ln();
    let subjects = flags
        .into_iter()
        .enumerate()
        .map(|(i, disturbed)| {
            let g = if disturbed { 1.0 } else { 0.0 };
            let logit = base_logit + planted.outcome_odds_ratio.ln() * g;
            let outcome = r.random::<f64>() < crate::numeric::sigmoid(logit);
            let hazard = planted.base_hazard_per_year * planted.hazard_ratio.powf(g);
            let event_time = -(1.0 - r.random::<f64>()).ln() / hazard;
            let censor = r.random_range(0.5 * planted.max_follow_up_years..planted.max_follow_up_years);
            let race_u: f64 = r.random();
            Subject {
                id: format!("S{:04}", i + 1),
                disturbed,
                age: (age.sample(&mut r) as f64).clamp(40.0, 90.0),
                sex: r.random_range(0..2u8),
                bmi: (bmi.sample(&mut r) as f64).clamp(16.0, 50.0),
                race: [0.7, 0.85, 0.95, 1.01].iter().position(|&c| race_u < c).unwrap_or(3) as u8,
                outcome,
                time: event_time.min(censor),
                event: event_time <= censor,
                night_seed: rng::mix(&[seed, i as u64, 0x4e]),
            }
        })
        .collect();
    Ok(Cohort { subjects, planted, n_epochs })
}

impl Cohort {
    pub fn profile(&self, i: usize) -> SynthProfile {
        let s = &self.subjects[i];
        let base = if s.disturbed { SynthProfile::disturbed(s.night_seed) } else { SynthProfile::default() };
        SynthProfile { n_epochs: self.n_epochs, seed: s.night_seed, ..base }
    }

    pub fn night(&self, i: usize) -> Result<SynthNight> {
        gen_night(&self.profile(i))
    }

    /// Subject table as CSV: `id,disturbed,age,sex,bmi,race,outcome,time,event`.
    pub fn subjects_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "disturbed", "age", "sex", "bmi", "race", "outcome", "time", "event"])
            .map_err(csv_err)?;
        for s in &self.subjects {
            w.write_record([
                s.id.clone(),
                (s.disturbed as u8).to_string(),
                format!("{:.3}", s.age),
                s.sex.to_string(),
                format!("{:.3}", s.bmi),
                s.race.to_string(),
                (s.outcome as u8).to_string(),
                format!("{:.6}", s.time),
                (s.event as u8).to_string(),
            ])
            .map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::invalid(e.to_string()))?)
            .map_err(|e| Error::invalid(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthProfile {
        SynthProfile { n_epochs: 60, seed, ..Default::default() }
    }

    #[test]
    fn resonator_unit_variance() {
        let mut res = Resonator::new(10.0, 0.95);
        let mut r = rng::seeded(3);
        let xs: Vec<f64> = (0..200_000).map(|_| res.next(&mut r)).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn deterministic() {
        let a = gen_night(&small(5)).unwrap();
        let b = gen_night(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_night(&small(6)).unwrap());
    }

    #[test]
    fn consistent_lengths_and_wake_free_arousals() {
        let n = gen_night(&SynthProfile { seed: 2, ..Default::default() }).unwrap();
        assert_eq!(n.latent_depth.len(), n.stages.len());
        for c in n.recording.channels() {
            assert_eq!(c.samples.len(), n.stages.len() * EPOCH_SAMPLES);
        }
        for (i, p) in n.arousal_proportions().iter().enumerate() {
            if *p > 0.0 {
                assert_ne!(n.stages[i], Stage::W, "arousal in wake epoch {i}");
            }
        }
        assert!(!n.arousals.events.is_empty());
        assert_eq!(n.to_grid().unwrap().len(), n.stages.len());
    }

    #[test]
    fn invalid_transition() {
        let mut p = small(1);
        p.transition[2][2] = 0.5;
        assert!(gen_night(&p).is_err());
    }

    #[test]
    fn cohort_shape() {
        let c = gen_cohort(10, 0.5, 1, 20).unwrap();
        assert_eq!(c.subjects.len(), 10);
        assert_eq!(c.subjects.iter().filter(|s| s.disturbed).count(), 5);
        assert!(gen_cohort(1, 0.5, 1, 20).is_err());
        let none = gen_cohort(10, 0.0, 1, 20).unwrap();
        assert!(none.subjects.iter().all(|s| !s.disturbed));
        assert!(c.subjects_csv().unwrap().starts_with("id,disturbed,age"));
    }
}
