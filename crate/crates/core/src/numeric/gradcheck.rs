//! Central finite-difference gradient checking.

use rand::seq::index::sample;

use super::params::ParamStore;
use super::tape::{ParamId, Tape, Var};
use crate::error::Result;
use crate::rng;

/// Which parameter entries to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// Up to `per_tensor` seeded entries from every parameter tensor.
    Sampled { per_tensor: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(ParamId, usize)>,
    pub checked: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

/// Compares a hand-supplied gradient with central differences of `value` at `x`.
pub fn grad_check_fn(
    x: &[f64],
    value: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    step: f64,
) -> f64 {
    let analytic = grad(x);
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = value(&probe);
        probe[i] = x[i] - step;
        let down = value(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_error(analytic[i], (up - down) / (2.0 * step)));
    }
    worst
}

/// Checks tape gradients of the scalar built by `f` against central differences
/// over the parameters in `params`.
pub fn grad_check<F>(params: &ParamStore, f: F, step: f64, coverage: Coverage) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(params, &mut tape)?;
    let grads = tape.backward(out)?;
    drop(tape);

    let eval = |p: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = f(p, &mut t)?;
        t.value(v).item()
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    for id in params.ids() {
        let n = params.get(id).len();
        let entries: Vec<usize> = match coverage {
            Coverage::All => (0..n).collect(),
            Coverage::Sampled { per_tensor, seed } => {
                let mut r = rng::stream(seed, id.0 as u64);
                let mut v = sample(&mut r, n, per_tensor.min(n)).into_vec();
                v.sort_unstable();
                v
            }
        };
        for i in entries {
            let original = params.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = original + step;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = original - step;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = original;
            let analytic = grads.param(id).map_or(0.0, |g| g.data()[i]);
            let err = rel_error(analytic, (up - down) / (2.0 * step));
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((id, i));
            }
        }
    }
    Ok(report)
}
