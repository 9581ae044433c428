use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Fan-in used for He-normal initialisation; `0` marks a bias (zero init).
    pub fan_in: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_bias(&self) -> bool {
        self.fan_in == 0
    }
}

/// Ordered list of named tensors packed into one flat buffer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_weight(&mut self, name: impl Into<String>, shape: Vec<usize>, fan_in: usize) {
        assert!(fan_in > 0, "weights need a positive fan-in");
        self.push(name.into(), shape, fan_in);
    }

    pub fn add_bias(&mut self, name: impl Into<String>, len: usize) {
        self.push(name.into(), vec![len], 0);
    }

    /// Adds a `[out, in]` weight and `[out]` bias under `prefix.weight` / `prefix.bias`.
    pub fn add_linear(&mut self, prefix: &str, d_in: usize, d_out: usize) {
        self.add_weight(format!("{prefix}.weight"), vec![d_out, d_in], d_in);
        self.add_bias(format!("{prefix}.bias"), d_out);
    }

    fn push(&mut self, name: String, shape: Vec<usize>, fan_in: usize) {
        assert!(
            self.specs.iter().all(|s| s.name != name),
            "duplicate parameter {name}"
        );
        let spec = ParamSpec {
            name,
            shape,
            offset: self.total,
            fan_in,
        };
        self.total += spec.len();
        self.specs.push(spec);
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Sub-layout of every tensor whose name starts with `prefix`, repacked.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> ParamLayout {
        let mut out = ParamLayout::new();
        for s in self.specs.iter().filter(|s| keep(&s.name)) {
            out.push(s.name.clone(), s.shape.clone(), s.fan_in);
        }
        out
    }
}

/// A parameter buffer with its layout. Frozen stores refuse optimizer updates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    layout: ParamLayout,
    data: Vec<f64>,
    frozen: bool,
}

impl ParamStore {
    pub fn zeros(layout: ParamLayout) -> Self {
        let data = vec![0.0; layout.total()];
        Self {
            layout,
            data,
            frozen: false,
        }
    }

    pub fn from_data(layout: ParamLayout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(Error::contract(format!(
                "parameter count {} does not match layout ({})",
                data.len(),
                layout.total()
            )));
        }
        Ok(Self {
            layout,
            data,
            frozen: false,
        })
    }

    /// He-normal (fan-in) weights, zero biases.
    pub fn he_normal(layout: ParamLayout, rng: &mut impl Rng) -> Self {
        let mut store = Self::zeros(layout);
        for spec in store.layout.specs.clone() {
            if spec.is_bias() {
                continue;
            }
            let std = (2.0 / spec.fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut store.data[spec.offset..spec.offset + spec.len()] {
                *v = normal.sample(rng);
            }
        }
        store
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.layout.spec(name)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Trainable copy; the original keeps its frozen flag.
    pub fn thawed(&self) -> ParamStore {
        ParamStore {
            frozen: false,
            ..self.clone()
        }
    }

    /// Mutable access for trainable stores only.
    pub fn data_mut(&mut self) -> Result<&mut [f64]> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        Ok(&mut self.data)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.spec(name)
            .map(|s| &self.data[s.offset..s.offset + s.len()])
    }

    pub fn set(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let spec = self
            .spec(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))?
            .clone();
        if values.len() != spec.len() {
            return Err(Error::contract(format!(
                "parameter {name} expects {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        self.data_mut()?[spec.offset..spec.offset + spec.len()].copy_from_slice(values);
        Ok(())
    }

    /// Copies every tensor whose name exists in `self` out of `other`.
    pub fn copy_matching(&mut self, other: &ParamStore) -> Result<()> {
        for spec in self.layout.specs.clone() {
            if let Some(src) = other.get(&spec.name) {
                self.set(&spec.name, src)?;
            }
        }
        Ok(())
    }

    /// Repacks the tensors selected by `keep` into a new store.
    pub fn subset(&self, keep: impl Fn(&str) -> bool) -> ParamStore {
        let layout = self.layout.filtered(keep);
        let mut data = Vec::with_capacity(layout.total());
        for s in layout.specs() {
            data.extend_from_slice(self.get(&s.name).expect("filtered from self"));
        }
        ParamStore {
            layout,
            data,
            frozen: self.frozen,
        }
    }

    /// L1 and L2 penalty over weight tensors (biases excluded); returns the
    /// penalty and adds its gradient into `grad`.
    pub fn weight_penalty(&self, l1: f64, l2: f64, grad: &mut [f64]) -> f64 {
        let mut penalty = 0.0;
        if l1 == 0.0 && l2 == 0.0 {
            return 0.0;
        }
        for s in self.layout.specs.iter().filter(|s| !s.is_bias()) {
            for i in s.offset..s.offset + s.len() {
                let w = self.data[i];
                penalty += l1 * w.abs() + l2 * w * w;
                grad[i] += l1 * w.signum() * (w != 0.0) as u8 as f64 + 2.0 * l2 * w;
            }
        }
        penalty
    }
}

/// `target' = m * target + (1 - m) * online`, elementwise.
pub fn momentum_update(online: &ParamStore, target: &mut ParamStore, m: f64) -> Result<()> {
    if online.layout != target.layout {
        return Err(Error::contract(
            "momentum update requires identical parameter layouts",
        ));
    }
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::config(format!("momentum {m} outside [0, 1]")));
    }
    // The target is updated only here, never by an optimizer.
    for (t, o) in target.data.iter_mut().zip(&online.data) {
        *t = m * *t + (1.0 - m) * o;
    }
    Ok(())
}
