use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clip::FloatClip;
use crate::error::{Error, Result};
use crate::nn::{ConvGeometry, ParamLayout, ParamStore, PoolKind, Tape, Tensor, Var};

/// Spatiotemporal encoder architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Input frames `T`.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Output channels of each 3x3x3 conv stage.
    pub channels: Vec<usize>,
    /// Temporal stride of each stage (spatial stride is always 2).
    pub temporal_strides: Vec<usize>,
    /// Projection width `D`.
    pub projection_dim: usize,
    pub projection_hidden: usize,
    pub predictor_hidden: usize,
    /// Momentum of the target copy, in `[0, 1)`.
    pub momentum: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            frames: 4,
            height: 64,
            width: 64,
            channels: vec![32, 64, 128, 256],
            temporal_strides: vec![1, 1, 2, 2],
            projection_dim: 128,
            projection_hidden: 256,
            predictor_hidden: 256,
            momentum: 0.99,
        }
    }
}

impl EncoderConfig {
    /// Three narrow stages for single-core training runs.
    pub fn tiny(frame_size: usize) -> Self {
        Self {
            frames: 4,
            height: frame_size,
            width: frame_size,
            channels: vec![8, 16, 16],
            temporal_strides: vec![1, 2, 2],
            projection_dim: 32,
            projection_hidden: 64,
            predictor_hidden: 64,
            momentum: 0.996,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::config("encoder needs at least one stage"));
        }
        if self.channels.len() != self.temporal_strides.len() {
            return Err(Error::config(
                "encoder channels and temporal_strides must have equal length",
            ));
        }
        if self.temporal_strides.iter().any(|s| *s == 0) || self.channels.iter().any(|c| *c == 0) {
            return Err(Error::config("encoder strides and channels must be positive"));
        }
        if self.projection_dim < 2 {
            return Err(Error::config("projection_dim must be at least 2"));
        }
        if self.projection_hidden == 0 || self.predictor_hidden == 0 {
            return Err(Error::config("hidden widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::config("input extent must be positive"));
        }
        Ok(())
    }
}

/// Output of the last convolutional stage, `C' x T' x H' x W'`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.frames, self.height, self.width]
    }

    pub fn constant(shape: [usize; 4], value: f64) -> Self {
        Self {
            channels: shape[0],
            frames: shape[1],
            height: shape[2],
            width: shape[3],
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, self.channels, self.frames, self.height, self.width],
            self.data.clone(),
        )
    }
}

/// D-dimensional projection vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Embedding> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Degenerate("cannot normalise a zero-norm embedding".into()));
        }
        Ok(Embedding(self.0.iter().map(|v| v / n).collect()))
    }
}

/// Stacks clips into the channels-first batch tensor `[N, 3, T, H, W]`.
pub fn clips_to_tensor(clips: &[FloatClip]) -> Tensor {
    assert!(!clips.is_empty());
    let (t, h, w) = (clips[0].frames, clips[0].height, clips[0].width);
    let mut data = Vec::with_capacity(clips.len() * 3 * t * h * w);
    for c in clips {
        assert_eq!((c.frames, c.height, c.width), (t, h, w), "mixed clip shapes");
        data.extend(c.to_channels_first());
    }
    Tensor::new(vec![clips.len(), 3, t, h, w], data)
}

/// Stacked 3D conv stages with a projection MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    stages: Vec<ConvGeometry>,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(config.channels.len());
        let mut extent = [config.frames, config.height, config.width];
        let mut cin = 3;
        for (&cout, &st) in config.channels.iter().zip(&config.temporal_strides) {
            let g = ConvGeometry {
                in_channels: cin,
                out_channels: cout,
                input: extent,
                kernel: [3, 3, 3],
                stride: [st, 2, 2],
                padding: [1, 1, 1],
            };
            extent = g.output();
            cin = cout;
            stages.push(g);
        }
        Ok(Self { config, stages })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn stages(&self) -> &[ConvGeometry] {
        &self.stages
    }

    /// `[C', T', H', W']` of the last stage.
    pub fn feature_shape(&self) -> [usize; 4] {
        let last = self.stages.last().expect("at least one stage");
        let [t, h, w] = last.output();
        [last.out_channels, t, h, w]
    }

    pub fn input_len(&self) -> usize {
        3 * self.config.frames * self.config.height * self.config.width
    }

    pub fn layout(&self) -> ParamLayout {
        let mut l = ParamLayout::new();
        for (i, g) in self.stages.iter().enumerate() {
            l.add_weight(
                format!("backbone.{i}.weight"),
                vec![g.out_channels, g.in_channels, 3, 3, 3],
                g.fan_in(),
            );
            l.add_bias(format!("backbone.{i}.bias"), g.out_channels);
        }
        let c = self.feature_shape()[0];
        l.add_linear("projection.fc1", c, self.config.projection_hidden);
        l.add_linear("projection.fc2", self.config.projection_hidden, self.config.projection_dim);
        l
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        ParamStore::he_normal(self.layout(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let expect = [3, self.config.frames, self.config.height, self.config.width];
        if x.shape.len() != 5 || x.shape[1..] != expect {
            return Err(Error::contract(format!(
                "encoder expects [N, 3, {}, {}, {}], got {:?}",
                expect[1], expect[2], expect[3], x.shape
            )));
        }
        Ok(())
    }

    /// Backbone on the tape: `[N, 3, T, H, W] -> [N, C', T', H', W']`.
    pub fn features(&self, tape: &mut Tape, store: &ParamStore, group: Option<usize>, x: Var) -> Var {
        let mut h = tape.affine(x, 4.0, -2.0);
        for (i, g) in self.stages.iter().enumerate() {
            let w = tape.param(store, &format!("backbone.{i}.weight"), group);
            let b = tape.param(store, &format!("backbone.{i}.bias"), group);
            h = tape.conv3d(h, w, b, *g);
            h = tape.relu(h);
        }
        h
    }

    /// Projection MLP on the tape: pooled features `[N, C'] -> [N, D]`.
    pub fn projection_from_pooled(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        group: Option<usize>,
        pooled: Var,
    ) -> Var {
        let w1 = tape.param(store, "projection.fc1.weight", group);
        let b1 = tape.param(store, "projection.fc1.bias", group);
        let w2 = tape.param(store, "projection.fc2.weight", group);
        let b2 = tape.param(store, "projection.fc2.bias", group);
        let h = tape.linear(pooled, w1, Some(b1));
        let h = tape.relu(h);
        tape.linear(h, w2, Some(b2))
    }

    /// Global average pool over `(T', H', W')` followed by the projection MLP.
    pub fn projection(&self, tape: &mut Tape, store: &ParamStore, group: Option<usize>, features: Var) -> Var {
        let pooled = tape.mean_pool(features, PoolKind::SpatioTemporal);
        self.projection_from_pooled(tape, store, group, pooled)
    }

    /// Inference: one clip to its feature map.
    pub fn encode(&self, clip: &FloatClip, store: &ParamStore) -> Result<FeatureMap> {
        let x = clips_to_tensor(std::slice::from_ref(clip));
        self.check_input(&x)?;
        self.check_store(store)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let f = self.features(&mut tape, store, None, xv);
        let [c, t, h, w] = self.feature_shape();
        Ok(FeatureMap {
            channels: c,
            frames: t,
            height: h,
            width: w,
            data: tape.value(f).data.clone(),
        })
    }

    /// Inference: feature map to projection embedding.
    pub fn project(&self, features: &FeatureMap, store: &ParamStore) -> Result<Embedding> {
        if features.shape() != self.feature_shape() {
            return Err(Error::contract(format!(
                "feature map {:?} does not match encoder output {:?}",
                features.shape(),
                self.feature_shape()
            )));
        }
        self.check_store(store)?;
        let mut tape = Tape::new();
        let f = tape.constant(features.to_tensor());
        let z = self.projection(&mut tape, store, None, f);
        Ok(Embedding(tape.value(z).data.clone()))
    }

    /// Batched inference returning feature maps and projections.
    pub fn forward_batch(&self, clips: &[FloatClip], store: &ParamStore) -> Result<(Tensor, Tensor)> {
        let x = clips_to_tensor(clips);
        self.check_input(&x)?;
        self.check_store(store)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let f = self.features(&mut tape, store, None, xv);
        let z = self.projection(&mut tape, store, None, f);
        Ok((tape.value(f).clone(), tape.value(z).clone()))
    }

    pub fn check_store(&self, store: &ParamStore) -> Result<()> {
        if store.layout() != &self.layout() {
            return Err(Error::contract(
                "parameter layout does not match the encoder architecture",
            ));
        }
        Ok(())
    }
}

/// BYOL prediction MLP `D -> hidden -> D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Predictor {
    pub dim: usize,
    pub hidden: usize,
}

impl Predictor {
    pub fn layout(&self) -> ParamLayout {
        let mut l = ParamLayout::new();
        l.add_linear("predictor.fc1", self.dim, self.hidden);
        l.add_linear("predictor.fc2", self.hidden, self.dim);
        l
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        ParamStore::he_normal(self.layout(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, group: Option<usize>, z: Var) -> Var {
        let w1 = tape.param(store, "predictor.fc1.weight", group);
        let b1 = tape.param(store, "predictor.fc1.bias", group);
        let w2 = tape.param(store, "predictor.fc2.weight", group);
        let b2 = tape.param(store, "predictor.fc2.bias", group);
        let h = tape.linear(z, w1, Some(b1));
        let h = tape.relu(h);
        tape.linear(h, w2, Some(b2))
    }

    pub fn predict(&self, z: &Embedding, store: &ParamStore) -> Result<Embedding> {
        if z.dim() != self.dim {
            return Err(Error::contract(format!(
                "predictor expects dimension {}, got {}",
                self.dim,
                z.dim()
            )));
        }
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::new(vec![1, self.dim], z.0.clone()));
        let p = self.forward(&mut tape, store, None, zv);
        Ok(Embedding(tape.value(p).data.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_grad_close, numeric_grad};

    fn clip(cfg: &EncoderConfig, seed: u64) -> FloatClip {
        let n = 3 * cfg.frames * cfg.height * cfg.width;
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        FloatClip {
            frames: cfg.frames,
            height: cfg.height,
            width: cfg.width,
            data,
        }
    }

    #[test]
    fn default_desk_shape_contract() {
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        assert_eq!(enc.feature_shape(), [256, 1, 4, 4]);
        let store = enc.init(0);
        let f = enc.encode(&clip(enc.config(), 1), &store).unwrap();
        assert_eq!(f.shape(), [256, 1, 4, 4]);
        assert!(f.data.iter().all(|v| v.is_finite()));
        let z = enc.project(&f, &store).unwrap();
        assert_eq!(z.dim(), 128);
    }

    #[test]
    fn mid_grey_input_with_zero_biases_gives_zero_features() {
        let enc = Encoder::new(EncoderConfig::tiny(16)).unwrap();
        let store = enc.init(4);
        let mut c = clip(enc.config(), 0);
        // mid grey maps to zero after input centering
        c.data.fill(0.5);
        let f = enc.encode(&c, &store).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distinct_clips_give_distinct_features_and_forward_is_deterministic() {
        let enc = Encoder::new(EncoderConfig::tiny(16)).unwrap();
        let store = enc.init(9);
        let a = enc.encode(&clip(enc.config(), 1), &store).unwrap();
        let b = enc.encode(&clip(enc.config(), 2), &store).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, enc.encode(&clip(enc.config(), 1), &store).unwrap());
    }

    #[test]
    fn wrong_input_shape_is_a_contract_error() {
        let enc = Encoder::new(EncoderConfig::tiny(16)).unwrap();
        let store = enc.init(0);
        let bad = clip(&EncoderConfig::tiny(20), 0);
        assert!(matches!(enc.encode(&bad, &store), Err(Error::Contract(_))));
    }

    #[test]
    fn pooling_matches_explicit_loops() {
        let enc = Encoder::new(EncoderConfig::tiny(32)).unwrap();
        let store = enc.init(2);
        let f = enc.encode(&clip(enc.config(), 5), &store).unwrap();
        let mut tape = Tape::new();
        let fv = tape.constant(f.to_tensor());
        let pooled = tape.mean_pool(fv, PoolKind::SpatioTemporal);
        let fast = tape.value(pooled).data.clone();
        for c in 0..f.channels {
            let mut acc = 0.0;
            for t in 0..f.frames {
                for h in 0..f.height {
                    for w in 0..f.width {
                        acc += f.data[((c * f.frames + t) * f.height + h) * f.width + w];
                    }
                }
            }
            let mean = acc / (f.frames * f.height * f.width) as f64;
            assert!((fast[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_feature_map_projects_deterministically() {
        let enc = Encoder::new(EncoderConfig::tiny(16)).unwrap();
        let store = enc.init(3);
        let f = FeatureMap::constant(enc.feature_shape(), 0.7);
        let a = enc.project(&f, &store).unwrap();
        assert_eq!(a, enc.project(&f, &store).unwrap());
        assert_eq!(a.dim(), enc.config().projection_dim);
    }

    #[test]
    fn identity_linear_predictor_passes_input_through() {
        let p = Predictor { dim: 4, hidden: 4 };
        let mut store = ParamStore::zeros(p.layout());
        let eye: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
        store.set("predictor.fc1.weight", &eye).unwrap();
        store.set("predictor.fc2.weight", &eye).unwrap();
        // positive input so the hidden ReLU is the identity
        let z = Embedding(vec![0.5, 1.0, 2.0, 0.25]);
        assert_eq!(p.predict(&z, &store).unwrap(), z);
    }

    #[test]
    fn predictor_input_gradient_matches_finite_differences() {
        let p = Predictor { dim: 5, hidden: 7 };
        let store = p.init(1);
        let z0: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.4).collect();
        let w: Vec<f64> = (0..5).map(|i| 1.0 - 0.35 * i as f64).collect();
        let mut tape = Tape::new();
        let z = tape.variable(Tensor::new(vec![1, 5], z0.clone()));
        let out = p.forward(&mut tape, &store, None, z);
        tape.backward(&[(out, &w)]);
        let analytic = tape.grad(z).unwrap().to_vec();
        let numeric = numeric_grad(&z0, 1e-6, |zs| {
            let e = p.predict(&Embedding(zs.to_vec()), &store).unwrap();
            e.0.iter().zip(&w).map(|(a, b)| a * b).sum()
        });
        assert_grad_close(&analytic, &numeric, 1e-4);
    }
}
