//! Dense predictive coding: a per-cell GRU aggregates context block features
//! and recurrently predicts the features of future blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clip::FloatClip;
use crate::encoder::{clips_to_tensor, Encoder};
use crate::error::{Error, Result};
use crate::nn::{ParamLayout, ParamStore, PoolKind, Tape, Tensor, Var};

use super::objectives::{dpc_batch, info_nce_eps};

/// Norm softening for cell scoring; post-ReLU cells can be exactly zero.
pub const CELL_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpcConfig {
    /// Blocks per sample `B`.
    pub blocks: usize,
    /// Context blocks `B_c`; the remaining `B - B_c` are predicted.
    pub context: usize,
    pub temperature: f64,
}

impl Default for DpcConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            context: 3,
            temperature: 0.1,
        }
    }
}

impl DpcConfig {
    pub fn horizon(&self) -> usize {
        self.blocks.saturating_sub(self.context)
    }

    pub fn validate(&self) -> Result<()> {
        if self.context < 1 || self.blocks <= self.context {
            return Err(Error::config(format!(
                "dpc needs at least one context and one future block (blocks {}, context {})",
                self.blocks, self.context
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("dpc temperature must be positive"));
        }
        Ok(())
    }
}

/// Aggregator and predictor acting on `C`-channel cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpcHead {
    pub channels: usize,
}

impl DpcHead {
    pub fn layout(&self) -> ParamLayout {
        let c = self.channels;
        let mut l = ParamLayout::new();
        for gate in ["z", "r", "n"] {
            l.add_linear(&format!("dpc.gru.x{gate}"), c, c);
            l.add_linear(&format!("dpc.gru.h{gate}"), c, c);
        }
        l.add_linear("dpc.pred.fc1", c, c);
        l.add_linear("dpc.pred.fc2", c, c);
        l
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        ParamStore::he_normal(self.layout(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn lin(&self, tape: &mut Tape, s: &ParamStore, g: Option<usize>, name: &str, x: Var) -> Var {
        let w = tape.param(s, &format!("{name}.weight"), g);
        let b = tape.param(s, &format!("{name}.bias"), g);
        tape.linear(x, w, Some(b))
    }

    /// One gated recurrent step on `[rows, C]`.
    pub fn gru(&self, tape: &mut Tape, s: &ParamStore, g: Option<usize>, x: Var, h: Var) -> Var {
        let xz = self.lin(tape, s, g, "dpc.gru.xz", x);
        let hz = self.lin(tape, s, g, "dpc.gru.hz", h);
        let zs = tape.add(xz, hz);
        let z = tape.sigmoid(zs);
        let xr = self.lin(tape, s, g, "dpc.gru.xr", x);
        let hr = self.lin(tape, s, g, "dpc.gru.hr", h);
        let rs = tape.add(xr, hr);
        let r = tape.sigmoid(rs);
        let xn = self.lin(tape, s, g, "dpc.gru.xn", x);
        let hn = self.lin(tape, s, g, "dpc.gru.hn", h);
        let rhn = tape.mul(r, hn);
        let ns = tape.add(xn, rhn);
        let n = tape.tanh(ns);
        // (1 - z) n + z h = n + z (h - n)
        let diff = tape.sub(h, n);
        let zd = tape.mul(z, diff);
        tape.add(n, zd)
    }

    pub fn predict(&self, tape: &mut Tape, s: &ParamStore, g: Option<usize>, h: Var) -> Var {
        let a = self.lin(tape, s, g, "dpc.pred.fc1", h);
        let a = tape.relu(a);
        self.lin(tape, s, g, "dpc.pred.fc2", a)
    }
}

/// Splits a `B * T`-frame clip into `B` consecutive `T`-frame blocks.
pub fn split_blocks(clip: &FloatClip, blocks: usize) -> Result<Vec<FloatClip>> {
    if blocks == 0 || clip.frames % blocks != 0 {
        return Err(Error::contract(format!(
            "{} frames cannot be split into {blocks} equal blocks",
            clip.frames
        )));
    }
    let t = clip.frames / blocks;
    let step = t * clip.frame_len();
    Ok((0..blocks)
        .map(|b| FloatClip {
            frames: t,
            height: clip.height,
            width: clip.width,
            data: clip.data[b * step..(b + 1) * step].to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpcStep {
    pub loss: f64,
    pub encoder_grad: Vec<f64>,
    pub head_grad: Vec<f64>,
    /// Spatially pooled features of the first block, `[N, C]`.
    pub pooled: Tensor,
}

/// Cells of a backbone output as rows: `[N, C, T', H', W'] -> [N * H' * W', C]`.
fn cells(tape: &mut Tape, f: Var) -> Var {
    let pooled = tape.mean_pool(f, PoolKind::Temporal);
    let s = tape.value(pooled).shape.clone();
    let t = tape.swap_last(pooled);
    tape.reshape(t, vec![s[0] * s[2] * s[3], s[1]])
}

/// Forward and backward pass of the DPC objective on `clips`, each holding
/// `config.blocks` blocks of the encoder's input length.
pub fn dpc_step(
    config: &DpcConfig,
    encoder: &Encoder,
    enc_params: &ParamStore,
    head: &DpcHead,
    head_params: &ParamStore,
    clips: &[FloatClip],
) -> Result<DpcStep> {
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::Degenerate("empty dpc batch".into()));
    }
    let per_clip: Vec<Vec<FloatClip>> = clips
        .iter()
        .map(|c| split_blocks(c, config.blocks))
        .collect::<Result<_>>()?;
    const ENC: usize = 0;
    const HEAD: usize = 1;
    let mut tape = Tape::new();
    let mut block_cells = Vec::with_capacity(config.blocks);
    let mut first_features = None;
    for b in 0..config.blocks {
        let batch: Vec<FloatClip> = per_clip.iter().map(|v| v[b].clone()).collect();
        let x = clips_to_tensor(&batch);
        let expect = [3, encoder.config().frames, encoder.config().height, encoder.config().width];
        if x.shape[1..] != expect {
            return Err(Error::contract(format!(
                "dpc block shape {:?} does not match encoder input",
                &x.shape[1..]
            )));
        }
        let xv = tape.constant(x);
        let f = encoder.features(&mut tape, enc_params, Some(ENC), xv);
        if b == 0 {
            first_features = Some(f);
        }
        block_cells.push(cells(&mut tape, f));
    }
    let rows = tape.value(block_cells[0]).shape[0];
    let mut h = tape.constant(Tensor::zeros(vec![rows, head.channels]));
    for &c in &block_cells[..config.context] {
        h = head.gru(&mut tape, head_params, Some(HEAD), c, h);
    }
    let mut preds = Vec::with_capacity(config.horizon());
    for j in 0..config.horizon() {
        let p = head.predict(&mut tape, head_params, Some(HEAD), h);
        preds.push(p);
        if j + 1 < config.horizon() {
            h = head.gru(&mut tape, head_params, Some(HEAD), p, h);
        }
    }
    let futures = &block_cells[config.context..];
    let stack = |tape: &Tape, vars: &[Var]| -> Tensor {
        let mut data = Vec::new();
        for v in vars {
            data.extend_from_slice(&tape.value(*v).data);
        }
        Tensor::new(vec![rows * vars.len(), head.channels], data)
    };
    let batch = dpc_batch(stack(&tape, &preds), stack(&tape, futures), config.temperature)?;
    let out = info_nce_eps(&batch, CELL_NORM_EPS)?;
    let chunk = rows * head.channels;
    let mut seeds: Vec<(Var, &[f64])> = Vec::new();
    for (j, p) in preds.iter().enumerate() {
        seeds.push((*p, &out.d_queries[j * chunk..(j + 1) * chunk]));
    }
    for (j, f) in futures.iter().enumerate() {
        seeds.push((*f, &out.d_keys[j * chunk..(j + 1) * chunk]));
    }
    tape.backward(&seeds);
    let mut encoder_grad = vec![0.0; enc_params.len()];
    tape.param_grads(ENC, &mut encoder_grad);
    let mut head_grad = vec![0.0; head_params.len()];
    tape.param_grads(HEAD, &mut head_grad);
    let f0 = first_features.expect("at least one block");
    let pooled_var = tape.mean_pool(f0, PoolKind::SpatioTemporal);
    Ok(DpcStep {
        loss: out.loss,
        encoder_grad,
        head_grad,
        pooled: tape.value(pooled_var).clone(),
    })
}
