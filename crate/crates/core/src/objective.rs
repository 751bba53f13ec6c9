//! Pairwise margin ranking loss over stage labels, REM cross-entropy, and
//! their weighted sum.
//!
//! For each unordered pair of samples with a defined margin `V`, the penalty is
//! `max(0, V - sgn(y_i - y_j)·(p_i - p_j))`: the deeper-labelled sample must
//! out-score the shallower one by at least `V`. REM-vs-NREM pairs are masked
//! out, and equal-label pairs carry no ordering information and are skipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};
use crate::stage::Stage;

/// How pairs of non-adjacent W/N1/N2/N3 stages are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionPolicy {
    /// Sum of adjacent margins along W→N1→N2→N3.
    #[default]
    ChainSum,
    /// Only pairs listed in the table contribute.
    Strict,
}

impl std::str::FromStr for CompositionPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "chain_sum" | "chain" => Ok(CompositionPolicy::ChainSum),
            "strict" => Ok(CompositionPolicy::Strict),
            other => Err(Error::invalid(format!("unknown margin policy {other:?}"))),
        }
    }
}

/// Stage pairs whose relative depth is treated as unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertainSet {
    pairs: Vec<(Stage, Stage)>,
}

impl Default for UncertainSet {
    /// N1, N2 and N3 against REM, both orders.
    fn default() -> Self {
        use Stage::*;
        UncertainSet { pairs: vec![(N1, R), (R, N1), (N2, R), (R, N2), (N3, R), (R, N3)] }
    }
}

impl UncertainSet {
    pub fn contains(&self, a: Stage, b: Stage) -> bool {
        self.pairs.contains(&(a, b))
    }

    pub fn pairs(&self) -> &[(Stage, Stage)] {
        &self.pairs
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairMargin {
    Margin(f64),
    Uncertain,
    Excluded,
}

/// Required depth gap per stage pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginTable {
    entries: [[Option<f64>; 5]; 5],
    pub policy: CompositionPolicy,
    pub uncertain: UncertainSet,
}

impl Default for MarginTable {
    fn default() -> Self {
        Self::with_policy(CompositionPolicy::ChainSum)
    }
}

impl MarginTable {
    /// W–N1 1.0, N1–N2 0.5, N2–N3 1.5, W–R 1.2 (symmetric).
    pub fn with_policy(policy: CompositionPolicy) -> Self {
        let mut entries = [[None; 5]; 5];
        for (a, b, v) in [(0, 1, 1.0), (1, 2, 0.5), (2, 3, 1.5), (0, 4, 1.2)] {
            entries[a][b] = Some(v);
            entries[b][a] = Some(v);
        }
        MarginTable { entries, policy, uncertain: UncertainSet::default() }
    }

    pub fn entry(&self, a: Stage, b: Stage) -> Option<f64> {
        self.entries[a.code() as usize][b.code() as usize]
    }

    pub fn margin(&self, a: Stage, b: Stage) -> PairMargin {
        if a == b {
            return PairMargin::Excluded;
        }
        if let Some(v) = self.entry(a, b) {
            return PairMargin::Margin(v);
        }
        if self.uncertain.contains(a, b) {
            return PairMargin::Uncertain;
        }
        match self.policy {
            CompositionPolicy::Strict => PairMargin::Excluded,
            CompositionPolicy::ChainSum => {
                let (lo, hi) = (a.code().min(b.code()), a.code().max(b.code()));
                if hi > 3 {
                    return PairMargin::Excluded;
                }
                let mut total = 0.0;
                for s in lo..hi {
                    match self.entries[s as usize][s as usize + 1] {
                        Some(v) => total += v,
                        None => return PairMargin::Excluded,
                    }
                }
                PairMargin::Margin(total)
            }
        }
    }
}

/// Margin lookup for stage codes.
pub fn pair_margin(y_i: u8, y_j: u8, table: &MarginTable) -> Result<PairMargin> {
    Ok(table.margin(Stage::from_code(y_i)?, Stage::from_code(y_j)?))
}

fn sgn(a: Stage, b: Stage) -> f64 {
    (a.code() as i32 - b.code() as i32).signum() as f64
}

/// Hinge penalty for one pair; errors on masked or excluded pairs.
pub fn pair_penalty(p_i: f64, p_j: f64, y_i: Stage, y_j: Stage, table: &MarginTable) -> Result<f64> {
    match table.margin(y_i, y_j) {
        PairMargin::Margin(v) => Ok((v - sgn(y_i, y_j) * (p_i - p_j)).max(0.0)),
        other => Err(Error::invalid(format!("pair ({y_i}, {y_j}) has no margin: {other:?}"))),
    }
}

/// Value of the ranking loss and the number of pairs that entered it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankLoss {
    pub value: f64,
    pub n_pairs: usize,
}

impl RankLoss {
    /// True when no pair in the batch had a margin; the loss is then zero.
    pub fn is_empty(&self) -> bool {
        self.n_pairs == 0
    }
}

/// Ranking loss on a tape over an n×1 prediction node.
///
/// Pairs `(i, j)` with `i < j` are gathered into a signed pair matrix `S` and a
/// margin column `V`, so the loss is `mean(relu(V - S·p))`.
pub fn rank_loss_on_tape(tape: &mut Tape, p: Var, y: &[Stage], table: &MarginTable) -> Result<(Var, usize)> {
    let n = y.len();
    if n < 2 {
        return Err(Error::invalid(format!("ranking loss needs at least 2 samples, got {n}")));
    }
    let (rows, cols) = tape.value(p).dims2()?;
    if rows != n || cols != 1 {
        return Err(Error::shape(format!("predictions {rows}×{cols} for {n} labels")));
    }
    let mut signs = Vec::new();
    let mut margins = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if let PairMargin::Margin(v) = table.margin(y[i], y[j]) {
                let s = sgn(y[i], y[j]);
                let mut row = vec![0.0; n];
                row[i] = s;
                row[j] = -s;
                signs.extend(row);
                margins.push(v);
            }
        }
    }
    let n_pairs = margins.len();
    if n_pairs == 0 {
        log::warn!("ranking loss: batch of {n} has no pairs with a margin; contributing 0");
        return Ok((tape.constant(Tensor::scalar(0.0)), 0));
    }
    let s = tape.constant(Tensor::matrix(n_pairs, n, signs)?);
    let v = tape.constant(Tensor::column(margins));
    let diff = tape.matmul(s, p)?;
    let slack = tape.sub(v, diff)?;
    let hinge = tape.relu(slack);
    Ok((tape.mean(hinge)?, n_pairs))
}

pub fn rank_loss(p: &[f64], y: &[Stage], table: &MarginTable) -> Result<RankLoss> {
    if p.len() != y.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", p.len(), y.len())));
    }
    let mut tape = Tape::new();
    let pv = tape.input(Tensor::column(p.to_vec()));
    let (l, n_pairs) = rank_loss_on_tape(&mut tape, pv, y, table)?;
    Ok(RankLoss { value: tape.value(l).item()?, n_pairs })
}

/// Mean negative log-probability of the true class over n×2 logits.
pub fn rem_cross_entropy_on_tape(tape: &mut Tape, logits: Var, is_rem: &[bool]) -> Result<Var> {
    let (rows, cols) = tape.value(logits).dims2()?;
    if rows == 0 || rows != is_rem.len() || cols != 2 {
        return Err(Error::shape(format!("logits {rows}×{cols} for {} labels", is_rem.len())));
    }
    let onehot: Vec<f64> = is_rem
        .iter()
        .flat_map(|&r| if r { [0.0, 1.0] } else { [1.0, 0.0] })
        .collect();
    let ls = tape.log_softmax(logits)?;
    let mask = tape.constant(Tensor::matrix(rows, 2, onehot)?);
    let picked = tape.mul(ls, mask)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / rows as f64))
}

pub fn rem_cross_entropy(logits: &[[f64; 2]], is_rem: &[bool]) -> Result<f64> {
    let mut tape = Tape::new();
    let flat = logits.iter().flat_map(|l| l.iter().copied()).collect();
    let lv = tape.input(Tensor::matrix(logits.len(), 2, flat)?);
    let l = rem_cross_entropy_on_tape(&mut tape, lv, is_rem)?;
    tape.value(l).item()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the REM classification term.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 1.0 }
    }
}

/// Whether the ranking term participates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Joint,
    ClassificationOnly,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "joint" => Ok(TrainMode::Joint),
            "classification_only" | "clas" => Ok(TrainMode::ClassificationOnly),
            other => Err(Error::invalid(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub rank: f64,
    pub clas: f64,
    pub total: f64,
    pub n_pairs: usize,
}

/// Tape handles of the combined loss.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub rank: Var,
    pub clas: Var,
    pub n_pairs: usize,
}

/// `L = L_rank + α·L_clas` in joint mode, `α·L_clas` in classification-only mode.
#[allow(clippy::too_many_arguments)]
pub fn combined_loss_on_tape(
    tape: &mut Tape,
    p: Var,
    y: &[Stage],
    logits: Var,
    cfg: &LossConfig,
    table: &MarginTable,
    mode: TrainMode,
) -> Result<LossVars> {
    if cfg.alpha < 0.0 {
        return Err(Error::invalid(format!("alpha {} must be non-negative", cfg.alpha)));
    }
    let is_rem: Vec<bool> = y.iter().map(|s| s.is_rem()).collect();
    let clas = rem_cross_entropy_on_tape(tape, logits, &is_rem)?;
    let weighted = tape.scale(clas, cfg.alpha);
    match mode {
        TrainMode::Joint => {
            let (rank, n_pairs) = rank_loss_on_tape(tape, p, y, table)?;
            let total = tape.add(rank, weighted)?;
            Ok(LossVars { total, rank, clas, n_pairs })
        }
        TrainMode::ClassificationOnly => {
            let rank = tape.constant(Tensor::scalar(0.0));
            Ok(LossVars { total: weighted, rank, clas, n_pairs: 0 })
        }
    }
}

pub fn combined_loss(
    p: &[f64],
    y: &[Stage],
    logits: &[[f64; 2]],
    cfg: &LossConfig,
    table: &MarginTable,
) -> Result<LossBreakdown> {
    if p.len() != y.len() || logits.len() != y.len() {
        return Err(Error::shape("inconsistent batch sizes"));
    }
    let mut tape = Tape::new();
    let pv = tape.input(Tensor::column(p.to_vec()));
    let flat = logits.iter().flat_map(|l| l.iter().copied()).collect();
    let lv = tape.input(Tensor::matrix(logits.len(), 2, flat)?);
    let v = combined_loss_on_tape(&mut tape, pv, y, lv, cfg, table, TrainMode::Joint)?;
    Ok(LossBreakdown {
        rank: tape.value(v.rank).item()?,
        clas: tape.value(v.clas).item()?,
        total: tape.value(v.total).item()?,
        n_pairs: v.n_pairs,
    })
}
