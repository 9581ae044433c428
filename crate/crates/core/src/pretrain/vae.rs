//! Variational autoencoder around the backbone: the projection output is the
//! latent mean, a linear layer on pooled features gives the log-variance, and
//! a mirrored upsample + conv decoder reconstructs the clip.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::{ConvGeometry, ParamLayout, ParamStore, PoolKind, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    latent: usize,
    feature_shape: [usize; 4],
    /// Decoder stages in application order with their upsampling factors.
    stages: Vec<([usize; 3], ConvGeometry)>,
}

pub struct VaeForward {
    pub reconstruction: Var,
    pub mu: Var,
    pub logvar: Var,
}

impl VaeModel {
    pub fn new(encoder: &Encoder) -> Result<Self> {
        let mut stages = Vec::new();
        for (i, g) in encoder.stages().iter().enumerate().rev() {
            let out = g.output();
            let mut f = [0; 3];
            for a in 0..3 {
                if g.input[a] % out[a] != 0 {
                    return Err(Error::config(format!(
                        "vae decoder cannot invert stage {i}: extent {} is not a multiple of {}",
                        g.input[a], out[a]
                    )));
                }
                f[a] = g.input[a] / out[a];
            }
            stages.push((
                f,
                ConvGeometry {
                    in_channels: g.out_channels,
                    out_channels: g.in_channels,
                    input: g.input,
                    kernel: [3, 3, 3],
                    stride: [1, 1, 1],
                    padding: [1, 1, 1],
                },
            ));
        }
        Ok(Self {
            latent: encoder.config().projection_dim,
            feature_shape: encoder.feature_shape(),
            stages,
        })
    }

    pub fn layout(&self) -> ParamLayout {
        let mut l = ParamLayout::new();
        let fm: usize = self.feature_shape.iter().product();
        l.add_linear("vae.logvar", self.feature_shape[0], self.latent);
        l.add_linear("vae.fc", self.latent, fm);
        for (i, (_, g)) in self.stages.iter().enumerate() {
            l.add_weight(
                format!("vae.dec.{i}.weight"),
                vec![g.out_channels, g.in_channels, 3, 3, 3],
                g.fan_in(),
            );
            l.add_bias(format!("vae.dec.{i}.bias"), g.out_channels);
        }
        l
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        let mut s = ParamStore::he_normal(self.layout(), &mut ChaCha8Rng::seed_from_u64(seed));
        // start from unit variance
        let n = s.get("vae.logvar.weight").expect("declared").len();
        s.set("vae.logvar.weight", &vec![0.0; n]).expect("trainable");
        s
    }

    /// Encodes `x`, samples `z = mu + exp(logvar / 2) * noise` and decodes.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        encoder: &Encoder,
        enc_params: &ParamStore,
        enc_group: Option<usize>,
        params: &ParamStore,
        group: Option<usize>,
        x: Var,
        noise: Tensor,
    ) -> VaeForward {
        let f = encoder.features(tape, enc_params, enc_group, x);
        let pooled = tape.mean_pool(f, PoolKind::SpatioTemporal);
        let mu = encoder.projection_from_pooled(tape, enc_params, enc_group, pooled);
        let lw = tape.param(params, "vae.logvar.weight", group);
        let lb = tape.param(params, "vae.logvar.bias", group);
        let logvar = tape.linear(pooled, lw, Some(lb));
        let half = tape.affine(logvar, 0.5, 0.0);
        let sigma = tape.exp(half);
        let eps = tape.constant(noise);
        let spread = tape.mul(sigma, eps);
        let z = tape.add(mu, spread);
        let fw = tape.param(params, "vae.fc.weight", group);
        let fb = tape.param(params, "vae.fc.bias", group);
        let h = tape.linear(z, fw, Some(fb));
        let n = tape.value(h).batch();
        let [c, t, hh, ww] = self.feature_shape;
        let mut h = tape.reshape(h, vec![n, c, t, hh, ww]);
        h = tape.relu(h);
        let last = self.stages.len() - 1;
        for (i, (factors, g)) in self.stages.iter().enumerate() {
            if factors.iter().any(|&f| f != 1) {
                h = tape.upsample(h, *factors);
            }
            let w = tape.param(params, &format!("vae.dec.{i}.weight"), group);
            let b = tape.param(params, &format!("vae.dec.{i}.bias"), group);
            h = tape.conv3d(h, w, b, *g);
            h = if i == last { tape.sigmoid(h) } else { tape.relu(h) };
        }
        VaeForward {
            reconstruction: h,
            mu,
            logvar,
        }
    }
}
