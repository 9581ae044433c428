//! Self-supervised losses. Each returns its value together with analytic
//! gradients with respect to the raw (unnormalised) inputs.

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Queries scored against a shared key pool. `positives[i]` and
/// `negatives[i]` index rows of `keys`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub queries: Tensor,
    pub keys: Tensor,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    pub loss: f64,
    pub d_queries: Vec<f64>,
    pub d_keys: Vec<f64>,
}

fn norms(t: &Tensor, what: &str) -> Result<Vec<f64>> {
    soft_norms(t, what, 0.0)
}

/// Row norms `sqrt(|x|^2 + eps^2)`; zero only when `eps = 0`.
fn soft_norms(t: &Tensor, what: &str, eps: f64) -> Result<Vec<f64>> {
    t.rows()
        .enumerate()
        .map(|(i, r)| {
            let n = (r.iter().map(|v| v * v).sum::<f64>() + eps * eps).sqrt();
            if !n.is_finite() {
                Err(Error::NonFinite(format!("{what} row {i}")))
            } else if n == 0.0 {
                Err(Error::Degenerate(format!("{what} row {i} has zero norm")))
            } else {
                Ok(n)
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl ContrastiveBatch {
    fn validate(&self) -> Result<()> {
        let n = self.queries.batch();
        if self.queries.shape.len() != 2 || self.keys.shape.len() != 2 {
            return Err(Error::contract("queries and keys must be [rows, D]"));
        }
        if self.queries.shape[1] != self.keys.shape[1] {
            return Err(Error::contract("queries and keys differ in dimension"));
        }
        if self.positives.len() != n || self.negatives.len() != n {
            return Err(Error::contract("one positive and one negative set per query"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        let k = self.keys.batch();
        for (p, q) in self.positives.iter().zip(&self.negatives) {
            if p.is_empty() || q.is_empty() {
                return Err(Error::Degenerate(
                    "every query needs at least one positive and one negative".into(),
                ));
            }
            if p.iter().chain(q).any(|&i| i >= k) {
                return Err(Error::contract("key index out of range"));
            }
        }
        Ok(())
    }
}

/// InfoNCE with cosine similarity, averaged over queries.
pub fn info_nce(batch: &ContrastiveBatch) -> Result<ContrastiveLoss> {
    info_nce_eps(batch, 0.0)
}

/// [`info_nce`] with norms softened to `sqrt(|x|^2 + eps^2)`, so all-zero
/// rows score zero similarity instead of failing.
pub fn info_nce_eps(batch: &ContrastiveBatch, eps: f64) -> Result<ContrastiveLoss> {
    batch.validate()?;
    let (n, d) = (batch.queries.batch(), batch.queries.shape[1]);
    let qn = soft_norms(&batch.queries, "query", eps)?;
    let kn = soft_norms(&batch.keys, "key", eps)?;
    let alpha = batch.temperature;
    let mut loss = 0.0;
    let mut dq = vec![0.0; batch.queries.len()];
    let mut dk = vec![0.0; batch.keys.len()];
    for i in 0..n {
        let q = batch.queries.row(i);
        let pos = &batch.positives[i];
        let all: Vec<usize> = pos.iter().chain(&batch.negatives[i]).copied().collect();
        let sims: Vec<f64> = all
            .iter()
            .map(|&j| dot(q, batch.keys.row(j)) / (qn[i] * kn[j]))
            .collect();
        let logits: Vec<f64> = sims.iter().map(|s| s / alpha).collect();
        let lse_all = log_sum_exp(&logits);
        let lse_pos = log_sum_exp(&logits[..pos.len()]);
        loss += lse_all - lse_pos;

        // dL/ds for each listed key: (softmax_all - softmax_pos) / alpha
        for (slot, &j) in all.iter().enumerate() {
            let mut g = (logits[slot] - lse_all).exp();
            if slot < pos.len() {
                g -= (logits[slot] - lse_pos).exp();
            }
            let g = g / alpha / n as f64;
            if g == 0.0 {
                continue;
            }
            let k = batch.keys.row(j);
            let s = sims[slot];
            for c in 0..d {
                dq[i * d + c] += g * (k[c] / (qn[i] * kn[j]) - s * q[c] / (qn[i] * qn[i]));
                dk[j * d + c] += g * (q[c] / (qn[i] * kn[j]) - s * k[c] / (kn[j] * kn[j]));
            }
        }
    }
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("info_nce loss".into()));
    }
    Ok(ContrastiveLoss {
        loss,
        d_queries: dq,
        d_keys: dk,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ByolLoss {
    pub loss: f64,
    pub d_online: Vec<f64>,
    /// Always zero: the target branch is gradient-blocked.
    pub d_target: Vec<f64>,
}

/// Mean over rows of `|normalize(online) - normalize(target)|^2`.
pub fn byol_loss(online: &Tensor, target: &Tensor) -> Result<ByolLoss> {
    if online.shape != target.shape || online.shape.len() != 2 {
        return Err(Error::contract(format!(
            "byol expects equal [N, D] inputs, got {:?} and {:?}",
            online.shape, target.shape
        )));
    }
    let (n, d) = (online.shape[0], online.shape[1]);
    let on = norms(online, "online prediction")?;
    let tn = norms(target, "target projection")?;
    let mut loss = 0.0;
    let mut g = vec![0.0; online.len()];
    for i in 0..n {
        let q = online.row(i);
        let z = target.row(i);
        let cos = dot(q, z) / (on[i] * tn[i]);
        loss += 2.0 - 2.0 * cos;
        for c in 0..d {
            let zbar = z[c] / tn[i];
            let qbar = q[c] / on[i];
            g[i * d + c] = -2.0 * (zbar - cos * qbar) / on[i] / n as f64;
        }
    }
    Ok(ByolLoss {
        loss: loss / n as f64,
        d_online: g,
        d_target: vec![0.0; target.len()],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub d_reconstruction: Vec<f64>,
    pub d_mu: Vec<f64>,
    pub d_logvar: Vec<f64>,
}

/// Pixel MSE plus `kl_weight` times the batch-mean Gaussian KL to N(0, I).
pub fn vae_loss(
    x: &Tensor,
    x_hat: &Tensor,
    mu: &Tensor,
    logvar: &Tensor,
    kl_weight: f64,
) -> Result<VaeLoss> {
    if x.shape != x_hat.shape {
        return Err(Error::contract("input and reconstruction differ in shape"));
    }
    if mu.shape != logvar.shape || mu.shape.len() != 2 || mu.shape[0] != x.batch() {
        return Err(Error::contract("mu and logvar must both be [N, L]"));
    }
    if !logvar.all_finite() || !mu.all_finite() {
        return Err(Error::NonFinite("latent mean or log-variance".into()));
    }
    let m = x.len() as f64;
    let n = mu.batch() as f64;
    let mut recon = 0.0;
    let mut d_rec = Vec::with_capacity(x.len());
    for (a, b) in x.data.iter().zip(&x_hat.data) {
        recon += (b - a) * (b - a);
        d_rec.push(2.0 * (b - a) / m);
    }
    recon /= m;
    let mut kl = 0.0;
    let mut d_mu = Vec::with_capacity(mu.len());
    let mut d_lv = Vec::with_capacity(mu.len());
    for (u, lv) in mu.data.iter().zip(&logvar.data) {
        let var = lv.exp();
        kl += 0.5 * (u * u + var - 1.0 - lv);
        d_mu.push(kl_weight * u / n);
        d_lv.push(kl_weight * 0.5 * (var - 1.0) / n);
    }
    kl /= n;
    let total = recon + kl_weight * kl;
    if !total.is_finite() {
        return Err(Error::NonFinite("vae loss".into()));
    }
    Ok(VaeLoss {
        total,
        reconstruction: recon,
        kl,
        d_reconstruction: d_rec,
        d_mu,
        d_logvar: d_lv,
    })
}

/// Contrastive scoring of predicted against true future cells.
///
/// `predicted` and `actual` are `[N * B_p * cells, C]` with rows ordered by
/// sample, future block, then cell. Each prediction's positive is the row at
/// the same index in `actual`; every other row of `actual` is a negative.
pub fn dpc_batch(predicted: Tensor, actual: Tensor, temperature: f64) -> Result<ContrastiveBatch> {
    if predicted.shape != actual.shape {
        return Err(Error::contract("predicted and true features differ in shape"));
    }
    let m = actual.batch();
    if m < 2 {
        return Err(Error::Degenerate("dpc needs at least two candidate cells".into()));
    }
    Ok(ContrastiveBatch {
        queries: predicted,
        keys: actual,
        positives: (0..m).map(|i| vec![i]).collect(),
        negatives: (0..m).map(|i| (0..m).filter(|&j| j != i).collect()).collect(),
        temperature,
    })
}
