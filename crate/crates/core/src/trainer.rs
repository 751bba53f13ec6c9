//! Stage-balanced mini-batch sampling, Adam updates and the recording-level split.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::edf_io::EpochGrid;
use crate::error::{Error, Result};
use crate::model::{Mode, SdiModel};
use crate::numeric::{Gradients, ParamId, ParamStore, Tape, Tensor};
use crate::objective::{combined_loss_on_tape, CompositionPolicy, LossConfig, LossVars, MarginTable, TrainMode};
use crate::rng::{self, Rng};
use crate::stage::Stage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub alpha: f64,
    pub margin_policy: CompositionPolicy,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            max_steps: 1000,
            seed: 0,
            mode: TrainMode::Joint,
            alpha: 1.0,
            margin_policy: CompositionPolicy::ChainSum,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        let min_batch = if self.mode == TrainMode::Joint { 4 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::invalid(format!(
                "batch_size {} below {min_batch} for {:?} mode",
                self.batch_size, self.mode
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::invalid(format!("alpha {} must be non-negative", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::invalid("optimizer betas must lie in [0, 1) and epsilon be positive"));
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { alpha: self.alpha }
    }

    pub fn margins(&self) -> MarginTable {
        MarginTable::with_policy(self.margin_policy)
    }
}

/// Recording-level train/test split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.7, seed: 0 }
    }
}

impl SplitSpec {
    /// Shuffles recording indices and returns `(train, test)`, each sorted.
    pub fn split(&self, n_recordings: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::invalid(format!("train fraction {} outside [0, 1]", self.train_fraction)));
        }
        let mut idx: Vec<usize> = (0..n_recordings).collect();
        idx.shuffle(&mut rng::seeded(self.seed));
        let n_train = (self.train_fraction * n_recordings as f64).round() as usize;
        let mut train = idx[..n_train].to_vec();
        let mut test = idx[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((train, test))
    }
}

/// Labelled epochs drawn from one or more nights.
pub struct Pool<'a> {
    epochs: Vec<&'a [f32]>,
    stages: Vec<Stage>,
    by_stage: [Vec<usize>; 5],
}

impl<'a> Pool<'a> {
    pub fn new(epochs: Vec<&'a [f32]>, stages: Vec<Stage>) -> Result<Self> {
        if epochs.len() != stages.len() {
            return Err(Error::shape(format!("{} epochs for {} stages", epochs.len(), stages.len())));
        }
        let mut by_stage: [Vec<usize>; 5] = Default::default();
        for (i, s) in stages.iter().enumerate() {
            by_stage[s.code() as usize].push(i);
        }
        Ok(Pool { epochs, stages, by_stage })
    }

    /// Every epoch of every grid; all grids must carry stage labels.
    pub fn from_grids(grids: &'a [&'a EpochGrid]) -> Result<Self> {
        let mut epochs = Vec::new();
        let mut stages = Vec::new();
        for g in grids {
            let s = g.stages.as_ref().ok_or_else(|| Error::invalid("training grid has no stage labels"))?;
            for (i, st) in s.iter().enumerate() {
                epochs.push(g.epoch(i));
                stages.push(*st);
            }
        }
        Self::new(epochs, stages)
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn epoch(&self, i: usize) -> &'a [f32] {
        self.epochs[i]
    }

    pub fn stage(&self, i: usize) -> Stage {
        self.stages[i]
    }

    pub fn stage_count(&self, s: Stage) -> usize {
        self.by_stage[s.code() as usize].len()
    }
}

/// Draws a batch of pool indices.
///
/// When the pool holds at least two non-REM stages, the first two slots come
/// from two distinct such stages and each remaining slot picks a present stage
/// uniformly and then an epoch of that stage, so rare stages are not starved.
/// Otherwise the batch is drawn uniformly with replacement.
pub fn stratified_batch(pool: &Pool<'_>, batch_size: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::invalid("cannot sample from an empty pool"));
    }
    let present: Vec<usize> = (0..5).filter(|&s| !pool.by_stage[s].is_empty()).collect();
    let non_rem: Vec<usize> = present.iter().copied().filter(|&s| s != Stage::R.code() as usize).collect();
    if non_rem.len() < 2 || batch_size < 2 {
        return Ok((0..batch_size).map(|_| rng.random_range(0..pool.len())).collect());
    }
    let pick = |s: usize, rng: &mut Rng| {
        let members = &pool.by_stage[s];
        members[rng.random_range(0..members.len())]
    };
    let mut out = Vec::with_capacity(batch_size);
    let first: Vec<usize> = non_rem.choose_multiple(rng, 2).copied().collect();
    for s in first {
        out.push(pick(s, rng));
    }
    while out.len() < batch_size {
        let s = present[rng.random_range(0..present.len())];
        out.push(pick(s, rng));
    }
    Ok(out)
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam { beta1, beta2, epsilon, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<ParamId, Tensor>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in params.ids().collect::<Vec<_>>() {
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let w = params.get_mut(id).data_mut();
            match grads.get(&id) {
                Some(g) => {
                    for (((w, m), v), &g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
                    }
                }
                None => {
                    for ((w, m), v) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m *= self.beta1;
                        *v *= self.beta2;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
                    }
                }
            }
        }
    }
}

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub rank_loss: f64,
    pub clas_loss: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,rank_loss,clas_loss,total\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.step, r.rank_loss, r.clas_loss, r.total).expect("string write");
        }
        s
    }
}

/// Loss values and summed parameter gradients for one batch.
pub struct BatchGradients {
    pub rank_loss: f64,
    pub clas_loss: f64,
    pub total: f64,
    pub n_pairs: usize,
    pub grads: BTreeMap<ParamId, Tensor>,
}

fn loss_values(tape: &Tape, v: &LossVars) -> Result<(f64, f64, f64)> {
    Ok((tape.value(v.rank).item()?, tape.value(v.clas).item()?, tape.value(v.total).item()?))
}

/// Gradients of the batch loss, one tape per sample.
///
/// Each sample's forward graph is built independently (in parallel when
/// enabled). The loss is evaluated on a small tape whose leaves are the batch
/// predictions, and its gradient with respect to each prediction seeds that
/// sample's backward pass. Per-sample parameter gradients are summed in batch
/// order so the result does not depend on scheduling. `dropout_seed = None`
/// evaluates without dropout.
pub fn batch_gradients(
    model: &SdiModel,
    epochs: &[&[f32]],
    stages: &[Stage],
    cfg: &TrainConfig,
    dropout_seed: Option<u64>,
) -> Result<BatchGradients> {
    if epochs.len() != stages.len() || epochs.is_empty() {
        return Err(Error::shape(format!("{} epochs for {} stages", epochs.len(), stages.len())));
    }
    let forwards: Vec<Result<(Tape, crate::model::ForwardVars)>> = crate::par::map_range(epochs.len(), |i| {
        let mut tape = Tape::new();
        let vars = match dropout_seed {
            Some(seed) => {
                let mut r = rng::stream(seed, i as u64);
                model.forward_on_tape(&mut tape, epochs[i], &mut Mode::Train(&mut r))?
            }
            None => model.forward_on_tape(&mut tape, epochs[i], &mut Mode::Eval)?,
        };
        Ok((tape, vars))
    });
    let forwards: Vec<(Tape, crate::model::ForwardVars)> = forwards.into_iter().collect::<Result<_>>()?;

    let n = epochs.len();
    let mut depth = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(2 * n);
    for (tape, v) in &forwards {
        depth.push(tape.value(v.depth).item()?);
        logits.extend_from_slice(tape.value(v.rem_logits).data());
    }
    let mut lt = Tape::new();
    let p = lt.input(Tensor::column(depth));
    let l = lt.input(Tensor::matrix(n, 2, logits)?);
    let lv = combined_loss_on_tape(&mut lt, p, stages, l, &cfg.loss(), &cfg.margins(), cfg.mode)?;
    let (rank_loss, clas_loss, total) = loss_values(&lt, &lv)?;
    let lg = lt.backward(lv.total)?;
    let dp = lg.wrt(p).cloned().unwrap_or_else(|| Tensor::zeros(&[n, 1]));
    let dl = lg.wrt(l).cloned().unwrap_or_else(|| Tensor::zeros(&[n, 2]));

    let per_sample: Vec<Result<Gradients>> = crate::par::map_range(n, |i| {
        let (tape, v) = &forwards[i];
        tape.backward_seeded(&[
            (v.depth, Tensor::scalar(dp.data()[i])),
            (v.rem_logits, Tensor::row(dl.data()[2 * i..2 * i + 2].to_vec())),
        ])
    });
    let mut grads: BTreeMap<ParamId, Tensor> = BTreeMap::new();
    for g in per_sample {
        for (id, t) in g?.into_params() {
            match grads.get_mut(&id) {
                Some(acc) => acc.add_assign(&t),
                None => {
                    grads.insert(id, t);
                }
            }
        }
    }
    Ok(BatchGradients { rank_loss, clas_loss, total, n_pairs: lv.n_pairs, grads })
}

/// Batch loss built on a single tape against an explicit parameter store,
/// without dropout. Used for finite-difference checks of the whole pipeline.
pub fn batch_loss_on_tape(
    model: &SdiModel,
    params: &ParamStore,
    tape: &mut Tape,
    epochs: &[&[f32]],
    stages: &[Stage],
    cfg: &TrainConfig,
) -> Result<LossVars> {
    let m = model.with_params(params.clone())?;
    let mut depth = Vec::with_capacity(epochs.len());
    let mut logits = Vec::with_capacity(epochs.len());
    for e in epochs {
        let v = m.forward_on_tape(tape, e, &mut Mode::Eval)?;
        depth.push(v.depth);
        logits.push(v.rem_logits);
    }
    let p = tape.concat_rows(&depth)?;
    let l = tape.concat_rows(&logits)?;
    combined_loss_on_tape(tape, p, stages, l, &cfg.loss(), &cfg.margins(), cfg.mode)
}

/// Stateful optimisation loop over a pool.
pub struct Trainer {
    cfg: TrainConfig,
    adam: Adam,
    sampler: Rng,
    step: usize,
    trace: LossTrace,
}

impl Trainer {
    pub fn new(model: &SdiModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(model.params(), cfg.beta1, cfg.beta2, cfg.epsilon);
        let sampler = rng::seeded(rng::mix(&[cfg.seed, 0x5a4d]));
        Ok(Trainer { cfg, adam, sampler, step: 0, trace: LossTrace::default() })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn trace(&self) -> &LossTrace {
        &self.trace
    }

    pub fn into_trace(self) -> LossTrace {
        self.trace
    }

    /// Samples a batch from the pool and applies one update.
    pub fn step(&mut self, model: &mut SdiModel, pool: &Pool<'_>) -> Result<TraceRow> {
        let idx = stratified_batch(pool, self.cfg.batch_size, &mut self.sampler)?;
        let epochs: Vec<&[f32]> = idx.iter().map(|&i| pool.epoch(i)).collect();
        let stages: Vec<Stage> = idx.iter().map(|&i| pool.stage(i)).collect();
        self.step_on(model, &epochs, &stages)
    }

    /// Applies one update on a given batch.
    pub fn step_on(&mut self, model: &mut SdiModel, epochs: &[&[f32]], stages: &[Stage]) -> Result<TraceRow> {
        let dropout_seed = rng::mix(&[self.cfg.seed, self.step as u64, 0xd0]);
        let bg = batch_gradients(model, epochs, stages, &self.cfg, Some(dropout_seed))?;
        let finite_grads = bg.grads.values().all(|g| g.all_finite());
        if !bg.total.is_finite() || !finite_grads {
            return Err(Error::numeric(format!(
                "training diverged at step {}: rank {} clas {} total {} (finite gradients: {finite_grads})",
                self.step, bg.rank_loss, bg.clas_loss, bg.total
            )));
        }
        self.adam.step(model.params_mut(), &bg.grads, self.cfg.learning_rate);
        let row = TraceRow { step: self.step, rank_loss: bg.rank_loss, clas_loss: bg.clas_loss, total: bg.total };
        self.trace.rows.push(row);
        self.step += 1;
        Ok(row)
    }
}

/// Runs `cfg.max_steps` updates and returns the loss trace.
pub fn train(model: &mut SdiModel, pool: &Pool<'_>, cfg: &TrainConfig) -> Result<LossTrace> {
    let mut t = Trainer::new(model, cfg.clone())?;
    for _ in 0..cfg.max_steps {
        let row = t.step(model, pool)?;
        if row.step % 100 == 0 {
            log::info!("step {} loss {:.5} (rank {:.5}, clas {:.5})", row.step, row.total, row.rank_loss, row.clas_loss);
        }
    }
    Ok(t.into_trace())
}
