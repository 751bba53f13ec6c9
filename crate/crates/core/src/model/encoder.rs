//! Patch-embedding transformer encoder with a depth head and a REM head.
//!
//! Each epoch (channels × samples) is z-scored per channel, split into
//! non-overlapping patches per channel, flattened channel-major, projected to
//! `dim`, and summed with a learned channel embedding. A CLS token is prepended
//! and learned positional embeddings are added over all `N+1` token positions.
//! Encoder layers are pre-LN: `X' = MSA(LN(X)) + X`, `X = MLP(LN(X')) + X'`.
//! Both heads read only the encoded CLS token through `LN → Linear → GELU → Linear`.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::{self, Rng};

const INIT_STD: f64 = 0.02;
const ZSCORE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    qkv: ParamId,
    msa: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
}

#[derive(Clone, Debug)]
struct HeadIds {
    ln_g: ParamId,
    ln_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct Ids {
    patch_w: ParamId,
    patch_b: ParamId,
    pos: ParamId,
    chan: ParamId,
    cls: ParamId,
    layers: Vec<LayerIds>,
    depth: HeadIds,
    rem: HeadIds,
}

/// Output of the two heads for one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    /// Unbounded; the depth index is its sigmoid.
    pub raw_depth: f64,
    /// Logits for (not REM, REM).
    pub rem_logits: [f64; 2],
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// 1×1
    pub depth: Var,
    /// 1×2
    pub rem_logits: Var,
}

/// Dropout state while building a training graph.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

#[derive(Clone, Debug)]
pub struct SdiModel {
    cfg: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

impl SdiModel {
    /// Builds the parameter layout with every tensor filled by `fill(name, shape)`.
    fn build(cfg: ModelConfig, mut fill: impl FnMut(&str, &[usize]) -> Tensor) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let mut p = ParamStore::new();
        let mut add = |p: &mut ParamStore, name: String, shape: &[usize]| p.add(name.clone(), fill(&name, shape));
        let patch_w = add(&mut p, "patch.w".into(), &[cfg.patch_size, d]);
        let patch_b = add(&mut p, "patch.b".into(), &[1, d]);
        let pos = add(&mut p, "pos".into(), &[cfg.n_tokens(), d]);
        let chan = add(&mut p, "chan".into(), &[cfg.channels, d]);
        let cls = add(&mut p, "cls".into(), &[1, d]);
        let mut layers = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            layers.push(LayerIds {
                ln1_g: add(&mut p, format!("layer{l}.ln1.g"), &[1, d]),
                ln1_b: add(&mut p, format!("layer{l}.ln1.b"), &[1, d]),
                qkv: add(&mut p, format!("layer{l}.qkv.w"), &[d, 3 * d]),
                msa: add(&mut p, format!("layer{l}.msa.w"), &[d, d]),
                ln2_g: add(&mut p, format!("layer{l}.ln2.g"), &[1, d]),
                ln2_b: add(&mut p, format!("layer{l}.ln2.b"), &[1, d]),
                mlp_w1: add(&mut p, format!("layer{l}.mlp.w1"), &[d, cfg.mlp_dim]),
                mlp_b1: add(&mut p, format!("layer{l}.mlp.b1"), &[1, cfg.mlp_dim]),
                mlp_w2: add(&mut p, format!("layer{l}.mlp.w2"), &[cfg.mlp_dim, d]),
                mlp_b2: add(&mut p, format!("layer{l}.mlp.b2"), &[1, d]),
            });
        }
        let mut head = |p: &mut ParamStore, name: &str, out: usize| HeadIds {
            ln_g: add(p, format!("{name}.ln.g"), &[1, d]),
            ln_b: add(p, format!("{name}.ln.b"), &[1, d]),
            w1: add(p, format!("{name}.w1"), &[d, cfg.mlp_dim]),
            b1: add(p, format!("{name}.b1"), &[1, cfg.mlp_dim]),
            w2: add(p, format!("{name}.w2"), &[cfg.mlp_dim, out]),
            b2: add(p, format!("{name}.b2"), &[1, out]),
        };
        let depth = head(&mut p, "depth", 1);
        let rem = head(&mut p, "rem", 2);
        let ids = Ids { patch_w, patch_b, pos, chan, cls, layers, depth, rem };
        Ok(SdiModel { cfg, params: p, ids })
    }

    /// Truncated-normal (σ = 0.02, cut at 2σ) weights and embeddings, zero biases, unit LN gains.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        Self::build(cfg, |name, shape| {
            let n: usize = shape.iter().product();
            let data = if is_gain(name) {
                vec![1.0; n]
            } else if is_bias(name) {
                vec![0.0; n]
            } else {
                (0..n)
                    .map(|_| loop {
                        let x: f64 = normal.sample(&mut r);
                        if x.abs() <= 2.0 * INIT_STD {
                            break x;
                        }
                    })
                    .collect()
            };
            Tensor::new(shape.to_vec(), data).expect("shape product")
        })
    }

    /// All weights, embeddings and biases zero; layer-norm gains one.
    pub fn zeroed(cfg: ModelConfig) -> Result<Self> {
        Self::build(cfg, |name, shape| {
            if is_gain(name) {
                Tensor::filled(shape, 1.0)
            } else {
                Tensor::zeros(shape)
            }
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn with_params(&self, params: ParamStore) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::shape("parameter count differs from the model layout"));
        }
        for ((_, n1, t1), (_, n2, t2)) in self.params.iter().zip(params.iter()) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(Error::shape(format!("parameter {n2} does not match layout entry {n1}")));
            }
        }
        Ok(SdiModel { cfg: self.cfg.clone(), params, ids: self.ids.clone() })
    }

    /// Rounds every parameter to single precision (the checkpoint storage precision).
    pub fn round_to_f32(&mut self) {
        for id in self.params.ids().collect::<Vec<_>>() {
            for x in self.params.get_mut(id).data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    /// Z-scored patch matrix (N × P), rows ordered channel-major.
    pub fn patches(&self, epoch: &[f32]) -> Result<Tensor> {
        let cfg = &self.cfg;
        if epoch.len() != cfg.input_len() {
            return Err(Error::shape(format!(
                "epoch holds {} values, model expects {}×{}",
                epoch.len(),
                cfg.channels,
                cfg.epoch_len
            )));
        }
        let mut out = Vec::with_capacity(epoch.len());
        for ch in epoch.chunks(cfg.epoch_len) {
            let n = ch.len() as f64;
            let mean = ch.iter().map(|&x| x as f64).sum::<f64>() / n;
            let var = ch.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / var.sqrt().max(ZSCORE_FLOOR);
            out.extend(ch.iter().map(|&x| (x as f64 - mean) * inv));
        }
        Tensor::matrix(cfg.n_patches(), cfg.patch_size, out)
    }

    fn place(&self, tape: &mut Tape, id: ParamId) -> Var {
        self.params.place(tape, id)
    }

    fn dropout(&self, tape: &mut Tape, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let p = self.cfg.dropout;
        match mode {
            Mode::Train(r) if p > 0.0 => {
                let keep = 1.0 - p;
                let shape = tape.value(x).shape().to_vec();
                let n = tape.value(x).len();
                let mask: Vec<f64> = (0..n).map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                let m = tape.constant(Tensor::new(shape, mask)?);
                tape.mul(x, m)
            }
            _ => Ok(x),
        }
    }

    /// Token matrix ((N+1) × D) from a z-scored patch matrix.
    pub fn embed_patches(&self, tape: &mut Tape, patches: Tensor) -> Result<Var> {
        let cfg = &self.cfg;
        let (n, p) = patches.dims2()?;
        if n != cfg.n_patches() || p != cfg.patch_size {
            return Err(Error::shape(format!("patch matrix {n}×{p}, expected {}×{}", cfg.n_patches(), cfg.patch_size)));
        }
        let x = tape.constant(patches);
        let w = self.place(tape, self.ids.patch_w);
        let b = self.place(tape, self.ids.patch_b);
        let proj = tape.matmul(x, w)?;
        let proj = tape.add_row(proj, b)?;
        let npc = cfg.patches_per_channel();
        let mut sel = vec![0.0; n * cfg.channels];
        for r in 0..n {
            sel[r * cfg.channels + r / npc] = 1.0;
        }
        let sel = tape.constant(Tensor::matrix(n, cfg.channels, sel)?);
        let chan = self.place(tape, self.ids.chan);
        let chan_rows = tape.matmul(sel, chan)?;
        let patches = tape.add(proj, chan_rows)?;
        let cls = self.place(tape, self.ids.cls);
        let tokens = tape.concat_rows(&[cls, patches])?;
        let pos = self.place(tape, self.ids.pos);
        tape.add(tokens, pos)
    }

    pub fn embed(&self, tape: &mut Tape, epoch: &[f32]) -> Result<Var> {
        let patches = self.patches(epoch)?;
        self.embed_patches(tape, patches)
    }

    fn layer_norm(&self, tape: &mut Tape, x: Var, g: ParamId, b: ParamId) -> Result<Var> {
        let g = self.place(tape, g);
        let b = self.place(tape, b);
        tape.layer_norm(x, g, b, self.cfg.ln_eps)
    }

    /// Multi-head self-attention; returns the output and the per-head attention matrices.
    fn attention(&self, tape: &mut Tape, x: Var, layer: &LayerIds) -> Result<(Var, Vec<Var>)> {
        let d = self.cfg.dim;
        let dh = self.cfg.head_dim();
        let wqkv = self.place(tape, layer.qkv);
        let qkv = tape.matmul(x, wqkv)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.cfg.heads);
        let mut maps = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let q = tape.slice_cols(qkv, h * dh, dh)?;
            let k = tape.slice_cols(qkv, d + h * dh, dh)?;
            let v = tape.slice_cols(qkv, 2 * d + h * dh, dh)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale);
            let a = tape.softmax(scores)?;
            maps.push(a);
            outs.push(tape.matmul(a, v)?);
        }
        let cat = tape.concat_cols(&outs)?;
        let wo = self.place(tape, layer.msa);
        Ok((tape.matmul(cat, wo)?, maps))
    }

    fn mlp(&self, tape: &mut Tape, x: Var, w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId) -> Result<Var> {
        let w1 = self.place(tape, w1);
        let b1 = self.place(tape, b1);
        let w2 = self.place(tape, w2);
        let b2 = self.place(tape, b2);
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.gelu(h);
        let o = tape.matmul(h, w2)?;
        tape.add_row(o, b2)
    }

    fn encode_inner(&self, tape: &mut Tape, tokens: Var, mode: &mut Mode<'_>, maps: &mut Vec<Vec<Var>>) -> Result<Var> {
        let mut x = tokens;
        for layer in &self.ids.layers {
            let h = self.layer_norm(tape, x, layer.ln1_g, layer.ln1_b)?;
            let (att, m) = self.attention(tape, h, layer)?;
            maps.push(m);
            let x1 = tape.add(att, x)?;
            let h = self.layer_norm(tape, x1, layer.ln2_g, layer.ln2_b)?;
            let f = self.mlp(tape, h, layer.mlp_w1, layer.mlp_b1, layer.mlp_w2, layer.mlp_b2)?;
            let f = self.dropout(tape, f, mode)?;
            x = tape.add(f, x1)?;
        }
        Ok(x)
    }

    /// Runs the encoder stack over a token matrix.
    pub fn encode(&self, tape: &mut Tape, tokens: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let mut maps = Vec::new();
        self.encode_inner(tape, tokens, mode, &mut maps)
    }

    /// Encoder output plus attention matrices indexed `[layer][head]`.
    pub fn encode_with_attention(&self, tape: &mut Tape, tokens: Var) -> Result<(Var, Vec<Vec<Var>>)> {
        let mut maps = Vec::new();
        let out = self.encode_inner(tape, tokens, &mut Mode::Eval, &mut maps)?;
        Ok((out, maps))
    }

    fn head(&self, tape: &mut Tape, cls: Var, ids: &HeadIds) -> Result<Var> {
        let h = self.layer_norm(tape, cls, ids.ln_g, ids.ln_b)?;
        self.mlp(tape, h, ids.w1, ids.b1, ids.w2, ids.b2)
    }

    /// Builds the full forward graph for one epoch.
    pub fn forward_on_tape(&self, tape: &mut Tape, epoch: &[f32], mode: &mut Mode<'_>) -> Result<ForwardVars> {
        let tokens = self.embed(tape, epoch)?;
        let tokens = self.dropout(tape, tokens, mode)?;
        let encoded = self.encode(tape, tokens, mode)?;
        let cls = tape.slice_rows(encoded, 0, 1)?;
        let depth = self.head(tape, cls, &self.ids.depth)?;
        let rem_logits = self.head(tape, cls, &self.ids.rem)?;
        Ok(ForwardVars { depth, rem_logits })
    }

    /// Inference on one epoch (dropout off).
    pub fn predict(&self, epoch: &[f32]) -> Result<Prediction> {
        let mut tape = Tape::new();
        let v = self.forward_on_tape(&mut tape, epoch, &mut Mode::Eval)?;
        let raw_depth = tape.value(v.depth).item()?;
        let l = tape.value(v.rem_logits).data();
        let p = Prediction { raw_depth, rem_logits: [l[0], l[1]] };
        if !(p.raw_depth.is_finite() && p.rem_logits.iter().all(|x| x.is_finite())) {
            return Err(Error::numeric("non-finite model output"));
        }
        Ok(p)
    }

    /// Inference on many epochs; order of results matches the input.
    pub fn predict_batch(&self, epochs: &[&[f32]]) -> Result<Vec<Prediction>> {
        crate::par::map_slice(epochs, |e| self.predict(e)).into_iter().collect()
    }
}

fn is_gain(name: &str) -> bool {
    name.ends_with(".g")
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2")
}
