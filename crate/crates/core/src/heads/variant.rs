use std::fmt;
use std::str::FromStr;

use crate::encoder::{Embedding, Encoder, FeatureMap, ShapeContract};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, PoolKind, Tape, Tensor, Var};

/// How encoder outputs are reduced before the actor and critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// Projection-layer embedding used as is.
    Pro1D,
    /// Mean over time and space of the backbone feature map.
    Avg1D,
    /// Mean over time only; a small conv stack runs on the `C x H x W` map.
    Avg2D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadSize {
    S,
    Xl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HeadVariant {
    pub kind: HeadKind,
    pub size: HeadSize,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Pro1D, HeadKind::Avg1D, HeadKind::Avg2D];
}

impl HeadSize {
    pub const ALL: [HeadSize; 2] = [HeadSize::S, HeadSize::Xl];
}

impl HeadVariant {
    pub fn new(kind: HeadKind, size: HeadSize) -> Self {
        Self { kind, size }
    }

    /// The six cells of the ablation grid, in row order.
    pub fn all() -> Vec<HeadVariant> {
        HeadKind::ALL
            .iter()
            .flat_map(|&k| HeadSize::ALL.iter().map(move |&s| HeadVariant::new(k, s)))
            .collect()
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Pro1D => "Pro1D",
            HeadKind::Avg1D => "avg1D",
            HeadKind::Avg2D => "avg2D",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pro1d" | "direct_projection_1d" => Ok(HeadKind::Pro1D),
            "avg1d" | "conv_avg_3d" => Ok(HeadKind::Avg1D),
            "avg2d" | "temporal_axis_reduction" => Ok(HeadKind::Avg2D),
            other => Err(Error::config(format!(
                "unknown head variant '{other}' (expected Pro1D, avg1D or avg2D)"
            ))),
        }
    }
}

impl fmt::Display for HeadSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadSize::S => "s",
            HeadSize::Xl => "xl",
        })
    }
}

impl FromStr for HeadSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s" => Ok(HeadSize::S),
            "xl" => Ok(HeadSize::Xl),
            other => Err(Error::config(format!("unknown head size '{other}' (expected s or xl)"))),
        }
    }
}

impl fmt::Display for HeadVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.kind, self.size)
    }
}

impl FromStr for HeadVariant {
    type Err = Error;

    /// `Pro1D_s`, `avg2D_xl`, ...
    fn from_str(s: &str) -> Result<Self> {
        let (k, z) = s
            .trim()
            .rsplit_once('_')
            .ok_or_else(|| Error::config(format!("head variant '{s}' is not of the form <kind>_<size>")))?;
        Ok(HeadVariant::new(k.parse()?, z.parse()?))
    }
}

/// Per-sample shape of the head input for `kind` under `contract`.
pub fn head_input_shape(kind: HeadKind, contract: &ShapeContract) -> Vec<usize> {
    let [c, _, h, w] = contract.feature_map;
    match kind {
        HeadKind::Pro1D => vec![contract.projection_dim],
        HeadKind::Avg1D => vec![c],
        HeadKind::Avg2D => vec![c, h, w],
    }
}

/// Reduces one clip's encoder outputs to the head input (flattened).
/// `projection` is only consulted by [`HeadKind::Pro1D`].
pub fn adapt_features(
    kind: HeadKind,
    features: &FeatureMap,
    projection: Option<&Embedding>,
    contract: &ShapeContract,
) -> Result<Vec<f64>> {
    if features.shape() != contract.feature_map {
        return Err(Error::contract(format!(
            "feature map {:?} does not match the checkpoint's {:?}",
            features.shape(),
            contract.feature_map
        )));
    }
    let [c, t, h, w] = features.shape();
    match kind {
        HeadKind::Pro1D => {
            let z = projection
                .ok_or_else(|| Error::contract("Pro1D heads need the projection embedding"))?;
            if z.dim() != contract.projection_dim {
                return Err(Error::contract(format!(
                    "projection width {} does not match the checkpoint's {}",
                    z.dim(),
                    contract.projection_dim
                )));
            }
            Ok(z.0.clone())
        }
        HeadKind::Avg1D => Ok(features
            .data
            .chunks(t * h * w)
            .map(|cell| cell.iter().sum::<f64>() / (t * h * w) as f64)
            .collect()),
        HeadKind::Avg2D => {
            let plane = h * w;
            let mut out = vec![0.0; c * plane];
            for ch in 0..c {
                for ts in 0..t {
                    let src = &features.data[(ch * t + ts) * plane..(ch * t + ts + 1) * plane];
                    for (o, v) in out[ch * plane..(ch + 1) * plane].iter_mut().zip(src) {
                        *o += v;
                    }
                }
            }
            for o in &mut out {
                *o /= t as f64;
            }
            Ok(out)
        }
    }
}

/// Taped version over a batch of backbone feature maps `[N, C, T, H, W]`.
pub fn adapt_on_tape(
    kind: HeadKind,
    tape: &mut Tape,
    encoder: &Encoder,
    enc_params: &ParamStore,
    group: Option<usize>,
    features: Var,
) -> Var {
    match kind {
        HeadKind::Pro1D => encoder.projection(tape, enc_params, group, features),
        HeadKind::Avg1D => tape.mean_pool(features, PoolKind::SpatioTemporal),
        HeadKind::Avg2D => tape.mean_pool(features, PoolKind::Temporal),
    }
}

/// Head inputs for a batch of feature maps, without gradients.
pub fn adapt_batch(
    kind: HeadKind,
    encoder: &Encoder,
    enc_params: &ParamStore,
    features: Tensor,
) -> Tensor {
    let mut tape = Tape::new();
    let f = tape.constant(features);
    let out = adapt_on_tape(kind, &mut tape, encoder, enc_params, None, f);
    tape.value(out).clone()
}
