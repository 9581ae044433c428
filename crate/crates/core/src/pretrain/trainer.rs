use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::clip::FloatClip;
use crate::encoder::{
    clips_to_tensor, load_checkpoint, momentum_update, save_checkpoint, Encoder, EncoderCheckpoint,
    EncoderConfig, Predictor, SchemeTag,
};
use crate::error::{Error, Result};
use crate::nn::adam::l2_norm;
use crate::nn::{Adam, ParamStore, Tape, Tensor};
use crate::ssl::{
    byol_loss, dpc_step, info_nce, temporal_persistency_pairs, vae_loss, DpcConfig, DpcHead,
    MocoQueue, PositiveMode,
};

use super::augment::{sample_clip, sample_clip_pair, AugmentationParams};
use super::dataset::ClipDataset;
use super::vae::VaeModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Moco,
    Byol,
    Dpc,
    Vae,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Moco, Scheme::Byol, Scheme::Dpc, Scheme::Vae];

    pub fn tag(self) -> SchemeTag {
        match self {
            Scheme::Moco => SchemeTag::Moco,
            Scheme::Byol => SchemeTag::Byol,
            Scheme::Dpc => SchemeTag::Dpc,
            Scheme::Vae => SchemeTag::Vae,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.tag().fmt(f)
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<SchemeTag>()? {
            SchemeTag::Moco => Ok(Scheme::Moco),
            SchemeTag::Byol => Ok(Scheme::Byol),
            SchemeTag::Dpc => Ok(Scheme::Dpc),
            SchemeTag::Vae => Ok(Scheme::Vae),
            SchemeTag::External => Err(Error::config("'external' is not a pretraining scheme")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub scheme: Scheme,
    pub encoder: EncoderConfig,
    pub aug: AugmentationParams,
    /// Videos per step; contrastive schemes take two clips from each.
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub queue_size: usize,
    pub temperature: f64,
    pub kl_weight: f64,
    /// BYOL: sum the loss over both view orders.
    pub symmetric: bool,
    pub positive_mode: PositiveMode,
    pub dpc: DpcConfig,
    /// Learning-rate multiplier for the BYOL predictor.
    pub predictor_lr_scale: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Byol,
            encoder: EncoderConfig::default(),
            aug: AugmentationParams::default(),
            batch_size: 8,
            steps: 200,
            lr: 1e-3,
            queue_size: 1024,
            temperature: 0.1,
            kl_weight: 1.0,
            symmetric: true,
            positive_mode: PositiveMode::OtherClip,
            dpc: DpcConfig::default(),
            predictor_lr_scale: 10.0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.aug.validate()?;
        if self.steps == 0 {
            return Err(Error::config("pretraining needs a positive step count"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if matches!(self.scheme, Scheme::Moco) && self.batch_size < 2 {
            return Err(Error::config("moco needs at least two videos per batch"));
        }
        if !(self.lr >= 0.0) || !(self.temperature > 0.0) || !(self.kl_weight >= 0.0) {
            return Err(Error::config("lr, temperature and kl_weight must be non-negative"));
        }
        if matches!(self.scheme, Scheme::Dpc) {
            self.dpc.validate()?;
        }
        Ok(())
    }

    /// Frames per sampled clip.
    pub fn clip_len(&self) -> usize {
        match self.scheme {
            Scheme::Dpc => self.encoder.frames * self.dpc.blocks,
            _ => self.encoder.frames,
        }
    }
}

/// Clips for one step. Two-view schemes interleave `(v0 a, v0 b, v1 a, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainBatch {
    pub ids: Vec<String>,
    pub views: Vec<FloatClip>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub queue_fill: usize,
    pub embedding_std: f64,
    pub reconstruction: Option<f64>,
    pub kl: Option<f64>,
}

impl StepMetrics {
    /// Embeddings no longer vary across the batch.
    pub fn collapsed(&self) -> bool {
        self.embedding_std < 1e-6
    }
}

/// Per-dimension standard deviation of the L2-normalised rows of `[N, D]`,
/// averaged over dimensions. Zero-norm rows count as the zero vector.
pub fn embedding_std(t: &Tensor) -> f64 {
    let (n, d) = (t.batch(), t.row_len());
    if n < 2 {
        return 0.0;
    }
    let rows: Vec<Vec<f64>> = t
        .rows()
        .map(|r| {
            let norm = l2_norm(r);
            if norm > 0.0 {
                r.iter().map(|v| v / norm).collect()
            } else {
                vec![0.0; d]
            }
        })
        .collect();
    let mut total = 0.0;
    for c in 0..d {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n as f64;
        total += var.sqrt();
    }
    total / d as f64
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Predictor(Predictor),
    Dpc(DpcHead),
    Vae(VaeModel),
}

/// Training state for one scheme.
#[derive(Debug, Clone)]
pub struct Pretrainer {
    config: PretrainConfig,
    encoder: Encoder,
    online: ParamStore,
    opt: Adam,
    target: Option<ParamStore>,
    aux: Aux,
    aux_params: Option<ParamStore>,
    aux_opt: Option<Adam>,
    queue: Option<MocoQueue>,
    rng: ChaCha8Rng,
    step: usize,
}

const ENC: usize = 0;
const AUX: usize = 1;

impl Pretrainer {
    pub fn new(config: PretrainConfig) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(config.encoder.clone())?;
        let online = encoder.init(config.seed);
        let opt = Adam::new(&online, config.lr)?;
        let d = config.encoder.projection_dim;
        let aux_seed = config.seed.wrapping_add(0x9e37_79b9);
        let (aux, aux_params) = match config.scheme {
            Scheme::Moco => (Aux::None, None),
            Scheme::Byol => {
                let p = Predictor {
                    dim: d,
                    hidden: config.encoder.predictor_hidden,
                };
                (Aux::Predictor(p), Some(p.init(aux_seed)))
            }
            Scheme::Dpc => {
                let h = DpcHead {
                    channels: encoder.feature_shape()[0],
                };
                (Aux::Dpc(h), Some(h.init(aux_seed)))
            }
            Scheme::Vae => {
                let v = VaeModel::new(&encoder)?;
                let p = v.init(aux_seed);
                (Aux::Vae(v), Some(p))
            }
        };
        let aux_opt = match &aux_params {
            Some(p) if matches!(config.scheme, Scheme::Byol) => {
                Some(Adam::new(p, config.lr * config.predictor_lr_scale)?)
            }
            Some(p) => Some(Adam::new(p, config.lr)?),
            None => None,
        };
        let target = matches!(config.scheme, Scheme::Moco | Scheme::Byol).then(|| online.clone());
        let queue = matches!(config.scheme, Scheme::Moco).then(|| {
            MocoQueue::random_unit(config.queue_size, d, &mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37))
        });
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a),
            config,
            encoder,
            online,
            opt,
            target,
            aux,
            aux_params,
            aux_opt,
            queue,
            step: 0,
        })
    }

    pub fn config(&self) -> &PretrainConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn online(&self) -> &ParamStore {
        &self.online
    }

    pub fn target(&self) -> Option<&ParamStore> {
        self.target.as_ref()
    }

    pub fn queue(&self) -> Option<&MocoQueue> {
        self.queue.as_ref()
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Draws distinct videos and their (augmented) clips from `ds`.
    pub fn sample_batch(&mut self, ds: &ClipDataset) -> Result<PretrainBatch> {
        let v = self.config.batch_size;
        if ds.len() < v {
            return Err(Error::Dataset(format!(
                "batch of {v} distinct videos requested from a corpus of {}",
                ds.len()
            )));
        }
        let (h, w) = ds.frame_size();
        if (h, w) != (self.config.encoder.height, self.config.encoder.width) {
            return Err(Error::contract(format!(
                "corpus frames are {h}x{w}, encoder expects {}x{}",
                self.config.encoder.height, self.config.encoder.width
            )));
        }
        let picks = sample(&mut self.rng, ds.len(), v).into_vec();
        let len = self.config.clip_len();
        let mut ids = Vec::with_capacity(v);
        let mut views = Vec::with_capacity(2 * v);
        for i in picks {
            let video = &ds.videos[i];
            ids.push(video.id.clone());
            match self.config.scheme {
                Scheme::Moco | Scheme::Byol => {
                    let (a, b) = sample_clip_pair(video, len, &self.config.aug, &mut self.rng)?;
                    views.push(a);
                    views.push(b);
                }
                Scheme::Dpc | Scheme::Vae => {
                    views.push(sample_clip(video, len, &self.config.aug, &mut self.rng)?);
                }
            }
        }
        Ok(PretrainBatch { ids, views })
    }

    fn apply(&mut self, enc_grad: &[f64], aux_grad: Option<&[f64]>) -> Result<f64> {
        let mut sq = enc_grad.iter().map(|g| g * g).sum::<f64>();
        self.opt.step(&mut self.online, enc_grad)?;
        if let (Some(g), Some(p), Some(o)) = (aux_grad, self.aux_params.as_mut(), self.aux_opt.as_mut()) {
            sq += g.iter().map(|v| v * v).sum::<f64>();
            o.step(p, g)?;
        }
        if let Some(t) = self.target.as_mut() {
            momentum_update(&self.online, t, self.config.encoder.momentum)?;
        }
        Ok(sq.sqrt())
    }

    /// One optimiser step on the scheme's loss.
    pub fn step(&mut self, batch: &PretrainBatch) -> Result<StepMetrics> {
        let m = match self.config.scheme {
            Scheme::Moco => self.moco_step(batch),
            Scheme::Byol => self.byol_step(batch),
            Scheme::Dpc => self.dpc_step(batch),
            Scheme::Vae => self.vae_step(batch),
        }?;
        if !m.loss.is_finite() || !m.grad_norm.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} loss {} (grad norm {}) at step {}",
                self.config.scheme, m.loss, m.grad_norm, m.step
            )));
        }
        Ok(m)
    }

    fn moco_step(&mut self, batch: &PretrainBatch) -> Result<StepMetrics> {
        let x = clips_to_tensor(&batch.views);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let f = self.encoder.features(&mut tape, &self.online, Some(ENC), xv);
        let q = self.encoder.projection(&mut tape, &self.online, Some(ENC), f);
        let target = self.target.as_ref().expect("moco keeps a target");
        let (_, k) = self.encoder.forward_batch(&batch.views, target)?;
        let queue = self.queue.as_ref().expect("moco keeps a queue");
        let pairs = temporal_persistency_pairs(
            &batch.ids,
            tape.value(q),
            &k,
            queue,
            self.config.temperature,
            self.config.positive_mode,
        )?;
        let out = info_nce(&pairs)?;
        tape.backward(&[(q, &out.d_queries)]);
        let mut g = vec![0.0; self.online.len()];
        tape.param_grads(ENC, &mut g);
        let std = embedding_std(tape.value(q));
        let grad_norm = self.apply(&g, None)?;
        let queue = self.queue.as_mut().expect("moco keeps a queue");
        for v in 0..batch.ids.len() {
            queue.push_tagged(k.row(2 * v), Some(&batch.ids[v]))?;
        }
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            loss: out.loss,
            grad_norm,
            queue_fill: queue.len(),
            embedding_std: std,
            reconstruction: None,
            kl: None,
        })
    }

    fn byol_step(&mut self, batch: &PretrainBatch) -> Result<StepMetrics> {
        let Aux::Predictor(pred) = self.aux.clone() else {
            unreachable!("byol owns a predictor")
        };
        let aux_params = self.aux_params.as_ref().expect("predictor params");
        let x = clips_to_tensor(&batch.views);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let f = self.encoder.features(&mut tape, &self.online, Some(ENC), xv);
        let z = self.encoder.projection(&mut tape, &self.online, Some(ENC), f);
        let p = pred.forward(&mut tape, aux_params, Some(AUX), z);
        let target = self.target.as_ref().expect("byol keeps a target");
        let (_, k) = self.encoder.forward_batch(&batch.views, target)?;
        let d = k.row_len();
        let n = batch.ids.len();
        // row (v, a) is paired with the target of (v, b) and vice versa
        let mut swapped = Tensor::zeros(k.shape.clone());
        for r in 0..2 * n {
            swapped.data[r * d..(r + 1) * d].copy_from_slice(k.row(r ^ 1));
        }
        let pv = tape.value(p).clone();
        let (loss, grad) = if self.config.symmetric {
            let out = byol_loss(&pv, &swapped)?;
            (2.0 * out.loss, out.d_online.iter().map(|g| 2.0 * g).collect::<Vec<_>>())
        } else {
            let rows_a: Vec<Vec<f64>> = (0..n).map(|v| pv.row(2 * v).to_vec()).collect();
            let tgt_b: Vec<Vec<f64>> = (0..n).map(|v| k.row(2 * v + 1).to_vec()).collect();
            let out = byol_loss(&Tensor::from_rows(&rows_a), &Tensor::from_rows(&tgt_b))?;
            let mut g = vec![0.0; pv.len()];
            for v in 0..n {
                g[2 * v * d..(2 * v + 1) * d].copy_from_slice(&out.d_online[v * d..(v + 1) * d]);
            }
            (out.loss, g)
        };
        tape.backward(&[(p, &grad)]);
        let mut ge = vec![0.0; self.online.len()];
        tape.param_grads(ENC, &mut ge);
        let mut ga = vec![0.0; aux_params.len()];
        tape.param_grads(AUX, &mut ga);
        let std = embedding_std(tape.value(z));
        let grad_norm = self.apply(&ge, Some(&ga))?;
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            loss,
            grad_norm,
            queue_fill: 0,
            embedding_std: std,
            reconstruction: None,
            kl: None,
        })
    }

    fn dpc_step(&mut self, batch: &PretrainBatch) -> Result<StepMetrics> {
        let Aux::Dpc(head) = self.aux.clone() else {
            unreachable!("dpc owns an aggregator")
        };
        let out = dpc_step(
            &self.config.dpc,
            &self.encoder,
            &self.online,
            &head,
            self.aux_params.as_ref().expect("dpc params"),
            &batch.views,
        )?;
        let grad_norm = self.apply(&out.encoder_grad, Some(&out.head_grad))?;
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            loss: out.loss,
            grad_norm,
            queue_fill: 0,
            embedding_std: embedding_std(&out.pooled),
            reconstruction: None,
            kl: None,
        })
    }

    fn vae_step(&mut self, batch: &PretrainBatch) -> Result<StepMetrics> {
        let Aux::Vae(vae) = self.aux.clone() else {
            unreachable!("vae owns a decoder")
        };
        let aux_params = self.aux_params.as_ref().expect("decoder params");
        let x = clips_to_tensor(&batch.views);
        let n = x.batch();
        let d = self.config.encoder.projection_dim;
        let noise: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = vae.forward(
            &mut tape,
            &self.encoder,
            &self.online,
            Some(ENC),
            aux_params,
            Some(AUX),
            xv,
            Tensor::new(vec![n, d], noise),
        );
        let loss = vae_loss(
            &x,
            tape.value(out.reconstruction),
            tape.value(out.mu),
            tape.value(out.logvar),
            self.config.kl_weight,
        )?;
        tape.backward(&[
            (out.reconstruction, &loss.d_reconstruction),
            (out.mu, &loss.d_mu),
            (out.logvar, &loss.d_logvar),
        ]);
        let mut ge = vec![0.0; self.online.len()];
        tape.param_grads(ENC, &mut ge);
        let mut ga = vec![0.0; aux_params.len()];
        tape.param_grads(AUX, &mut ga);
        let std = embedding_std(tape.value(out.mu));
        let grad_norm = self.apply(&ge, Some(&ga))?;
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            loss: loss.total,
            grad_norm,
            queue_fill: 0,
            embedding_std: std,
            reconstruction: Some(loss.reconstruction),
            kl: Some(loss.kl),
        })
    }

    /// Writes the online backbone and projection with the scheme tag and
    /// returns the reloaded, frozen checkpoint. Targets, queues, predictors
    /// and decoders stay behind.
    pub fn freeze_and_export(&self, path: &Path) -> Result<EncoderCheckpoint> {
        save_checkpoint(path, &self.online, &self.config.encoder, self.config.scheme.tag())?;
        load_checkpoint(path)
    }
}

pub fn write_metrics_csv(path: &Path, scheme: Scheme, metrics: &[StepMetrics]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let vae = matches!(scheme, Scheme::Vae);
    let mut header = vec!["step", "loss", "grad_norm", "queue_fill", "embedding_std"];
    if vae {
        header.extend(["reconstruction", "kl"]);
    }
    w.write_record(&header)?;
    for m in metrics {
        let mut row = vec![
            m.step.to_string(),
            m.loss.to_string(),
            m.grad_norm.to_string(),
            m.queue_fill.to_string(),
            m.embedding_std.to_string(),
        ];
        if vae {
            row.push(m.reconstruction.unwrap_or(f64::NAN).to_string());
            row.push(m.kl.unwrap_or(f64::NAN).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs `config.steps` steps, warning once if the collapse sentinel fires.
pub fn run_pretrain(config: PretrainConfig, ds: &ClipDataset) -> Result<(Pretrainer, Vec<StepMetrics>)> {
    ds.validate(config.clip_len(), config.aug.frame_stride)?;
    let mut t = Pretrainer::new(config)?;
    let mut metrics = Vec::with_capacity(t.config.steps);
    let mut warned = false;
    for _ in 0..t.config.steps {
        let batch = t.sample_batch(ds)?;
        let m = t.step(&batch)?;
        if m.collapsed() && !warned {
            log::warn!(
                "{}: embeddings collapsed at step {} (std {:.2e})",
                t.config.scheme,
                m.step,
                m.embedding_std
            );
            warned = true;
        }
        log::debug!("{} step {} loss {:.5}", t.config.scheme, m.step, m.loss);
        metrics.push(m);
    }
    Ok((t, metrics))
}
