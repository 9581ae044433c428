use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::tape::softplus;
use crate::nn::{ConvGeometry, ParamLayout, ParamStore, Tape, Tensor, Var};

use super::variant::{HeadKind, HeadSize, HeadVariant};

/// Layer widths of one actor or critic network.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    /// Output channels of the two 2x2 convolutions (avg2D only).
    pub conv: [usize; 2],
    pub fc: [usize; 2],
    pub l1: f64,
    pub l2: f64,
}

impl HeadConfig {
    /// Full-size widths: xl is conv 1024/512, FC 400/100; s is conv 256/128,
    /// FC 128/64.
    pub fn full(size: HeadSize) -> Self {
        let (conv, fc) = match size {
            HeadSize::Xl => ([1024, 512], [400, 100]),
            HeadSize::S => ([256, 128], [128, 64]),
        };
        Self {
            conv,
            fc,
            l1: 1e-5,
            l2: 1e-5,
        }
    }

    /// Full widths with conv channels divided by 8 and FC units by 4.
    pub fn desk(size: HeadSize) -> Self {
        let f = Self::full(size);
        Self {
            conv: [f.conv[0] / 8, f.conv[1] / 8],
            fc: [f.fc[0] / 4, f.fc[1] / 4],
            ..f
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv.contains(&0) || self.fc.contains(&0) {
            return Err(Error::config("head layer widths must be positive"));
        }
        if self.l1 < 0.0 || self.l2 < 0.0 {
            return Err(Error::config("regularisation coefficients must be non-negative"));
        }
        Ok(())
    }
}

/// Mean and variance per controlled action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorOutput {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl ActorOutput {
    /// Splits a raw actor row `[mu_0, v_0, mu_1, v_1, ...]`; the variance is
    /// `softplus(v)`.
    pub fn from_raw(raw: &[f64]) -> Self {
        let mut mean = Vec::with_capacity(raw.len() / 2);
        let mut variance = Vec::with_capacity(raw.len() / 2);
        for pair in raw.chunks(2) {
            mean.push(pair[0]);
            variance.push(softplus(pair[1]).max(f64::MIN_POSITIVE));
        }
        Self { mean, variance }
    }
}

/// Actor or critic: the variant's trunk followed by a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadNet {
    kind: HeadKind,
    config: HeadConfig,
    input_shape: Vec<usize>,
    outputs: usize,
    convs: Vec<ConvGeometry>,
}

impl HeadNet {
    pub fn new(kind: HeadKind, config: HeadConfig, input_shape: &[usize], outputs: usize) -> Result<Self> {
        config.validate()?;
        let want = if kind == HeadKind::Avg2D { 3 } else { 1 };
        if input_shape.len() != want || input_shape.contains(&0) {
            return Err(Error::contract(format!(
                "{kind} heads take a rank-{want} input, got {input_shape:?}"
            )));
        }
        if outputs == 0 {
            return Err(Error::config("a head needs at least one output"));
        }
        let mut convs = Vec::new();
        if kind == HeadKind::Avg2D {
            let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
            if h < 3 || w < 3 {
                return Err(Error::contract(format!(
                    "avg2D heads need at least a 3x3 map for two 2x2 convolutions, got {h}x{w}"
                )));
            }
            let mut g = ConvGeometry {
                in_channels: c,
                out_channels: config.conv[0],
                input: [1, h, w],
                kernel: [1, 2, 2],
                stride: [1, 1, 1],
                padding: [0, 0, 0],
            };
            convs.push(g);
            g = ConvGeometry {
                in_channels: config.conv[0],
                out_channels: config.conv[1],
                input: g.output(),
                ..g
            };
            convs.push(g);
        }
        Ok(Self {
            kind,
            config,
            input_shape: input_shape.to_vec(),
            outputs,
            convs,
        })
    }

    /// Actor with `2 * actions` outputs.
    pub fn actor(variant: HeadVariant, config: HeadConfig, input_shape: &[usize], actions: usize) -> Result<Self> {
        Self::new(variant.kind, config, input_shape, 2 * actions)
    }

    pub fn critic(variant: HeadVariant, config: HeadConfig, input_shape: &[usize]) -> Result<Self> {
        Self::new(variant.kind, config, input_shape, 1)
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    fn flat_width(&self) -> usize {
        match self.convs.last() {
            Some(g) => g.out_len(),
            None => self.input_len(),
        }
    }

    /// Trunk tensors only (everything except the output layer).
    pub fn trunk_layout(&self) -> ParamLayout {
        let mut l = ParamLayout::new();
        for (i, g) in self.convs.iter().enumerate() {
            l.add_weight(
                format!("conv{}.weight", i + 1),
                vec![g.out_channels, g.in_channels, 1, 2, 2],
                g.fan_in(),
            );
            l.add_bias(format!("conv{}.bias", i + 1), g.out_channels);
        }
        l.add_linear("fc1", self.flat_width(), self.config.fc[0]);
        l.add_linear("fc2", self.config.fc[0], self.config.fc[1]);
        l
    }

    pub fn layout(&self) -> ParamLayout {
        let mut l = self.trunk_layout();
        l.add_linear("out", self.config.fc[1], self.outputs);
        l
    }

    /// He-normal weights, zero biases.
    pub fn init(&self, seed: u64) -> ParamStore {
        ParamStore::he_normal(self.layout(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Raw outputs `[N, outputs]` for head inputs `x: [N, ...input_shape]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, group: Option<usize>, x: Var) -> Var {
        let n = tape.value(x).batch();
        let mut h = x;
        if !self.convs.is_empty() {
            let s = &self.input_shape;
            h = tape.reshape(h, vec![n, s[0], 1, s[1], s[2]]);
            for (i, g) in self.convs.iter().enumerate() {
                let w = tape.param(store, &format!("conv{}.weight", i + 1), group);
                let b = tape.param(store, &format!("conv{}.bias", i + 1), group);
                h = tape.conv3d(h, w, b, *g);
                h = tape.relu(h);
            }
        }
        for name in ["fc1", "fc2"] {
            let w = tape.param(store, &format!("{name}.weight"), group);
            let b = tape.param(store, &format!("{name}.bias"), group);
            h = tape.linear(h, w, Some(b));
            h = tape.relu(h);
        }
        let w = tape.param(store, "out.weight", group);
        let b = tape.param(store, "out.bias", group);
        tape.linear(h, w, Some(b))
    }

    /// Raw outputs for a batch of flattened inputs, no gradients.
    pub fn forward_rows(&self, store: &ParamStore, inputs: &Tensor) -> Result<Tensor> {
        if inputs.row_len() != self.input_len() {
            return Err(Error::contract(format!(
                "head expects {} input values per sample, got {}",
                self.input_len(),
                inputs.row_len()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let y = self.forward(&mut tape, store, None, x);
        Ok(tape.value(y).clone())
    }

    pub fn check_store(&self, store: &ParamStore) -> Result<()> {
        if store.layout() != &self.layout() {
            return Err(Error::contract("head parameters do not match the head architecture"));
        }
        Ok(())
    }
}
