use rand::Rng as _;
use sdi_core::model::{ModelConfig, SdiModel};
use sdi_core::numeric::{grad_check, Coverage, ParamStore, Tape, Tensor, Var};
use sdi_core::rng;
use sdi_core::synth::{gen_night, SynthProfile};
use sdi_core::trainer::{batch_gradients, batch_loss_on_tape, TrainConfig};
use sdi_core::{Result, Stage};

const OP_TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut r = rng::seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Reduces `out` to a scalar through fixed random weights so every output
/// entry gets a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(random(&shape, seed, -1.0, 1.0));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn check_op(name: &str, inputs: &[Tensor], op: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    let mut params = ParamStore::new();
    for (i, t) in inputs.iter().enumerate() {
        params.add(format!("x{i}"), t.clone());
    }
    let report = grad_check(
        &params,
        |p, tape| {
            let vars: Vec<Var> = p.ids().map(|id| p.place(tape, id)).collect();
            let out = op(tape, &vars)?;
            weighted_sum(tape, out, 99)
        },
        1e-6,
        Coverage::All,
    )
    .unwrap();
    assert!(report.max_rel_error < OP_TOL, "{name}: rel error {:.3e}", report.max_rel_error);
    assert!(report.checked > 0);
}

#[test]
fn per_op_gradients() {
    let a = random(&[3, 4], 1, -1.0, 1.0);
    let b = random(&[4, 5], 2, -1.0, 1.0);
    let c = random(&[3, 4], 3, -1.0, 1.0);
    let row = random(&[1, 4], 4, -1.0, 1.0);
    let pos = random(&[3, 4], 5, 0.5, 2.0);
    // away from the kink so central differences stay on one side
    let kinked = Tensor::new(vec![3, 4], a.data().iter().map(|x| if x.abs() < 0.05 { x + 0.1 } else { *x }).collect())
        .unwrap();

    check_op("matmul", &[a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1]));
    check_op("add", &[a.clone(), c.clone()], |t, v| t.add(v[0], v[1]));
    check_op("sub", &[a.clone(), c.clone()], |t, v| t.sub(v[0], v[1]));
    check_op("mul", &[a.clone(), c.clone()], |t, v| t.mul(v[0], v[1]));
    check_op("add_row", &[a.clone(), row.clone()], |t, v| t.add_row(v[0], v[1]));
    check_op("scale", std::slice::from_ref(&a), |t, v| Ok(t.scale(v[0], -2.5)));
    check_op("transpose", std::slice::from_ref(&a), |t, v| t.transpose(v[0]));
    check_op("reshape", std::slice::from_ref(&a), |t, v| t.reshape(v[0], vec![2, 6]));
    check_op("concat_rows", &[a.clone(), c.clone()], |t, v| t.concat_rows(&[v[0], v[1]]));
    check_op("concat_cols", &[a.clone(), c.clone()], |t, v| t.concat_cols(&[v[0], v[1]]));
    check_op("slice_rows", std::slice::from_ref(&a), |t, v| t.slice_rows(v[0], 1, 2));
    check_op("slice_cols", std::slice::from_ref(&a), |t, v| t.slice_cols(v[0], 1, 2));
    check_op("softmax", std::slice::from_ref(&a), |t, v| t.softmax(v[0]));
    check_op("log_softmax", std::slice::from_ref(&a), |t, v| t.log_softmax(v[0]));
    check_op("layer_norm", &[a.clone(), row.clone(), random(&[1, 4], 6, -1.0, 1.0)], |t, v| {
        t.layer_norm(v[0], v[1], v[2], 1e-5)
    });
    check_op("gelu", std::slice::from_ref(&a), |t, v| Ok(t.gelu(v[0])));
    check_op("sigmoid", std::slice::from_ref(&a), |t, v| Ok(t.sigmoid(v[0])));
    check_op("log", &[pos], |t, v| t.log(v[0]));
    check_op("relu", &[kinked], |t, v| Ok(t.relu(v[0])));
    check_op("mean", std::slice::from_ref(&a), |t, v| t.mean(v[0]));
    check_op("sum", &[a], |t, v| Ok(t.sum(v[0])));
}

fn mixed_batch() -> (Vec<Vec<f32>>, Vec<Stage>) {
    let night = gen_night(&SynthProfile { n_epochs: 120, seed: 5, ..SynthProfile::default() }).unwrap();
    let grid = night.to_grid().unwrap();
    let mut picked = Vec::new();
    for want in [Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::R, Stage::N2] {
        let i = (0..grid.len())
            .find(|&i| grid.stage(i) == Some(want) && !picked.contains(&i))
            .unwrap_or_else(|| panic!("no {want} epoch in fixture night"));
        picked.push(i);
    }
    (picked.iter().map(|&i| grid.epoch(i).to_vec()).collect(), picked.iter().map(|&i| grid.stage(i).unwrap()).collect())
}

#[test]
fn encoder_and_loss_gradients() {
    let model = SdiModel::new(ModelConfig::desk(), 3).unwrap();
    let (epochs, stages) = mixed_batch();
    let refs: Vec<&[f32]> = epochs.iter().map(|e| e.as_slice()).collect();
    let cfg = TrainConfig::default();
    let report = grad_check(
        model.params(),
        |p, tape| Ok(batch_loss_on_tape(&model, p, tape, &refs, &stages, &cfg)?.total),
        1e-5,
        Coverage::Sampled { per_tensor: 3, seed: 17 },
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "rel error {:.3e} at {:?}", report.max_rel_error, report.worst);
    assert!(report.checked >= 3 * model.params().len() / 2);
}

#[test]
fn per_sample_tapes_match_single_tape() {
    let model = SdiModel::new(ModelConfig::desk(), 4).unwrap();
    let (epochs, stages) = mixed_batch();
    let refs: Vec<&[f32]> = epochs.iter().map(|e| e.as_slice()).collect();
    let cfg = TrainConfig::default();
    let split = batch_gradients(&model, &refs, &stages, &cfg, None).unwrap();

    let mut tape = Tape::new();
    let params = model.params().clone();
    let lv = batch_loss_on_tape(&model, &params, &mut tape, &refs, &stages, &cfg).unwrap();
    assert!((tape.value(lv.total).item().unwrap() - split.total).abs() < 1e-12);
    let whole = tape.backward(lv.total).unwrap();
    // the depth-head bias gradient is zero up to rounding, so compare on the global scale
    let scale = whole.params().values().map(|g| g.max_abs()).fold(0.0, f64::max);
    for (id, g) in &split.grads {
        let w = whole.param(*id).unwrap();
        for (a, b) in g.data().iter().zip(w.data()) {
            assert!((a - b).abs() <= 1e-9 * scale, "{}: {a} vs {b}", params.name(*id));
        }
    }
    assert_eq!(split.grads.len(), whole.params().len());
}
