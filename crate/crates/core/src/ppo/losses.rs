//! Scalar pieces of the PPO objective, each returning its value together
//! with the gradient with respect to the network outputs it consumes.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Diagonal Gaussian log density, summed over action dimensions.
pub fn gaussian_logp(action: &[f64], mean: &[f64], variance: &[f64]) -> Result<f64> {
    if action.len() != mean.len() || mean.len() != variance.len() {
        return Err(Error::contract("action, mean and variance lengths differ"));
    }
    let mut lp = 0.0;
    for ((&a, &m), &v) in action.iter().zip(mean).zip(variance) {
        if !(v > 0.0) {
            return Err(Error::Degenerate(format!("variance {v} is not positive")));
        }
        lp += -0.5 * (2.0 * PI * v).ln() - (a - m) * (a - m) / (2.0 * v);
    }
    Ok(lp)
}

/// `d logp / d mean` and `d logp / d variance` for one dimension.
pub fn gaussian_logp_grads(a: f64, m: f64, v: f64) -> (f64, f64) {
    let d = a - m;
    (d / v, -0.5 / v + d * d / (2.0 * v * v))
}

/// `KL(old || new)` between diagonal Gaussians, summed over dimensions.
pub fn gaussian_kl(mean_old: &[f64], var_old: &[f64], mean_new: &[f64], var_new: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..mean_old.len() {
        let d = mean_old[i] - mean_new[i];
        kl += 0.5 * ((var_new[i] / var_old[i]).ln() + (var_old[i] + d * d) / var_new[i] - 1.0);
    }
    kl
}

/// Gradient of [`gaussian_kl`] for one dimension with respect to the new
/// mean and variance.
pub fn gaussian_kl_grads(m_old: f64, v_old: f64, m_new: f64, v_new: f64) -> (f64, f64) {
    let d = m_new - m_old;
    (d / v_new, 0.5 * (1.0 / v_new - (v_old + d * d) / (v_new * v_new)))
}

/// Differential entropy of a diagonal Gaussian.
pub fn gaussian_entropy(variance: &[f64]) -> f64 {
    variance
        .iter()
        .map(|v| 0.5 * (2.0 * PI * std::f64::consts::E * v).ln())
        .sum()
}

/// Generalised advantage estimation over one fragment.
///
/// `values` holds one entry per reward plus the bootstrap value of the state
/// following the last step (ignored when that step is terminal).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::contract(format!(
            "gae needs n rewards, n dones and n + 1 values (got {}, {}, {})",
            n,
            dones.len(),
            values.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateLoss {
    /// Negated mean clipped surrogate.
    pub loss: f64,
    /// `d loss / d logp_new` per sample.
    pub d_logp: Vec<f64>,
    pub clip_fraction: f64,
}

/// `-mean(min(r A, clip(r, 1 - eps, 1 + eps) A))` with `r = exp(logp - logp_old)`.
pub fn ppo_surrogate(logp: &[f64], logp_old: &[f64], advantages: &[f64], eps: f64) -> Result<SurrogateLoss> {
    let n = logp.len();
    if logp_old.len() != n || advantages.len() != n || n == 0 {
        return Err(Error::contract("surrogate inputs must be aligned and non-empty"));
    }
    let mut total = 0.0;
    let mut d_logp = vec![0.0; n];
    let mut clipped = 0usize;
    for i in 0..n {
        let r = (logp[i] - logp_old[i]).exp();
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("probability ratio at sample {i}")));
        }
        let a = advantages[i];
        let unclipped = r * a;
        let c = r.clamp(1.0 - eps, 1.0 + eps) * a;
        if unclipped <= c {
            total += unclipped;
            d_logp[i] = -unclipped / n as f64;
        } else {
            total += c;
            clipped += 1;
        }
    }
    Ok(SurrogateLoss {
        loss: -total / n as f64,
        d_logp,
        clip_fraction: clipped as f64 / n as f64,
    })
}

/// Mean over samples of `max((v - R)^2, (v_old + clip(v - v_old, +-c) - R)^2)`
/// and its gradient with respect to `v`.
pub fn value_loss(values: &[f64], values_old: &[f64], returns: &[f64], vf_clip: f64) -> Result<(f64, Vec<f64>)> {
    let n = values.len();
    if values_old.len() != n || returns.len() != n || n == 0 {
        return Err(Error::contract("value-loss inputs must be aligned and non-empty"));
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let (v, r) = (values[i], returns[i]);
        let vc = values_old[i] + (v - values_old[i]).clamp(-vf_clip, vf_clip);
        let (a, b) = ((v - r).powi(2), (vc - r).powi(2));
        if a >= b {
            total += a;
            grad[i] = 2.0 * (v - r) / n as f64;
        } else {
            total += b;
            let inside = (v - values_old[i]).abs() < vf_clip;
            grad[i] = if inside { 2.0 * (vc - r) / n as f64 } else { 0.0 };
        }
    }
    Ok((total / n as f64, grad))
}

/// Multiplies the coefficient by 1.5 above twice the target, divides it by
/// 1.5 below half the target.
pub fn adaptive_kl_update(kl: f64, coef: f64, target: f64) -> f64 {
    if kl > 2.0 * target {
        coef * 1.5
    } else if kl < target / 2.0 {
        coef / 1.5
    } else {
        coef
    }
}

/// Zero mean, unit standard deviation.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in values {
        *v = (*v - mean) / (std + 1e-8);
    }
}
