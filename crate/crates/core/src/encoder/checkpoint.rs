//! Frozen encoder checkpoints.
//!
//! Header keys written next to the parameter sections (all under the
//! container format in [`crate::nn::container`]):
//!
//! ```text
//! kind = encoder
//! scheme = moco | byol | dpc | vae | external
//! encoder.frames, encoder.height, encoder.width
//! encoder.channels = 32,64,128,256
//! encoder.temporal_strides = 1,1,2,2
//! encoder.projection_dim, encoder.projection_hidden, encoder.predictor_hidden
//! encoder.momentum
//! contract.feature_map = C,T,H,W
//! contract.projection_dim = D
//! ```
//!
//! Parameter sections are named `encoder.<tensor>`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::clip::FloatClip;
use crate::error::{Error, Result};
use crate::nn::container::Container;
use crate::nn::ParamStore;

use super::backbone::{Encoder, EncoderConfig};

const PREFIX: &str = "encoder.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeTag {
    Moco,
    Byol,
    Dpc,
    Vae,
    /// Not produced by a pretraining scheme (random init, RL-trained).
    External,
}

impl fmt::Display for SchemeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeTag::Moco => "moco",
            SchemeTag::Byol => "byol",
            SchemeTag::Dpc => "dpc",
            SchemeTag::Vae => "vae",
            SchemeTag::External => "external",
        })
    }
}

impl FromStr for SchemeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "moco" => SchemeTag::Moco,
            "byol" => SchemeTag::Byol,
            "dpc" => SchemeTag::Dpc,
            "vae" => SchemeTag::Vae,
            "external" => SchemeTag::External,
            other => return Err(Error::config(format!("unknown scheme '{other}'"))),
        })
    }
}

/// Output shapes a checkpoint promises to its consumers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeContract {
    pub feature_map: [usize; 4],
    pub projection_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCheckpoint {
    pub config: EncoderConfig,
    pub scheme: SchemeTag,
    pub contract: ShapeContract,
    pub params: ParamStore,
}

impl EncoderCheckpoint {
    pub fn encoder(&self) -> Result<Encoder> {
        Encoder::new(self.config.clone())
    }
}

pub(crate) fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn split(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::contract(format!("header {key}: bad integer list '{v}'")))
        })
        .collect()
}

pub(crate) fn write_config_header(c: &mut Container, cfg: &EncoderConfig) {
    c.set_header("encoder.frames", cfg.frames);
    c.set_header("encoder.height", cfg.height);
    c.set_header("encoder.width", cfg.width);
    c.set_header("encoder.channels", join(&cfg.channels));
    c.set_header("encoder.temporal_strides", join(&cfg.temporal_strides));
    c.set_header("encoder.projection_dim", cfg.projection_dim);
    c.set_header("encoder.projection_hidden", cfg.projection_hidden);
    c.set_header("encoder.predictor_hidden", cfg.predictor_hidden);
    c.set_header("encoder.momentum", cfg.momentum);
}

pub(crate) fn header<'a>(c: &'a Container, key: &str) -> Result<&'a str> {
    c.header_value(key)
        .ok_or_else(|| Error::contract(format!("checkpoint header lacks '{key}'")))
}

pub(crate) fn header_num<T: FromStr>(c: &Container, key: &str) -> Result<T> {
    let v = header(c, key)?;
    v.trim()
        .parse()
        .map_err(|_| Error::contract(format!("header {key}: cannot parse '{v}'")))
}

pub(crate) fn read_config_header(c: &Container) -> Result<EncoderConfig> {
    Ok(EncoderConfig {
        frames: header_num(c, "encoder.frames")?,
        height: header_num(c, "encoder.height")?,
        width: header_num(c, "encoder.width")?,
        channels: split("encoder.channels", header(c, "encoder.channels")?)?,
        temporal_strides: split(
            "encoder.temporal_strides",
            header(c, "encoder.temporal_strides")?,
        )?,
        projection_dim: header_num(c, "encoder.projection_dim")?,
        projection_hidden: header_num(c, "encoder.projection_hidden")?,
        predictor_hidden: header_num(c, "encoder.predictor_hidden")?,
        momentum: header_num(c, "encoder.momentum")?,
    })
}

/// Builds the container for an encoder. Only backbone and projection tensors
/// are written; anything else in `params` is rejected.
pub fn checkpoint_container(
    params: &ParamStore,
    config: &EncoderConfig,
    scheme: SchemeTag,
) -> Result<Container> {
    let enc = Encoder::new(config.clone())?;
    enc.check_store(params)?;
    let mut c = Container::new();
    c.set_header("kind", "encoder");
    c.set_header("scheme", scheme);
    write_config_header(&mut c, config);
    c.set_header("contract.feature_map", join(&enc.feature_shape()));
    c.set_header("contract.projection_dim", config.projection_dim);
    c.push_store(PREFIX, params);
    Ok(c)
}

pub fn save_checkpoint(
    path: &Path,
    params: &ParamStore,
    config: &EncoderConfig,
    scheme: SchemeTag,
) -> Result<()> {
    checkpoint_container(params, config, scheme)?.write(path)
}

/// Reads a checkpoint, verifies its declared shapes with a dry forward pass
/// and returns frozen parameters.
pub fn load_checkpoint(path: &Path) -> Result<EncoderCheckpoint> {
    let c = Container::read(path)?;
    checkpoint_from_container(&c)
}

pub fn checkpoint_from_container(c: &Container) -> Result<EncoderCheckpoint> {
    if c.header_value("kind") != Some("encoder") {
        return Err(Error::contract("container is not an encoder checkpoint"));
    }
    encoder_from_container(c)
}

/// Reads the encoder header keys and `encoder.*` sections of any container
/// kind that embeds an encoder.
pub(crate) fn encoder_from_container(c: &Container) -> Result<EncoderCheckpoint> {
    let scheme: SchemeTag = header(c, "scheme")?
        .parse()
        .map_err(|_| Error::contract("checkpoint carries an unknown scheme tag"))?;
    let config = read_config_header(c)?;
    let enc = Encoder::new(config.clone()).map_err(|e| Error::contract(e.to_string()))?;
    let fm = split("contract.feature_map", header(c, "contract.feature_map")?)?;
    let feature_map: [usize; 4] = fm
        .try_into()
        .map_err(|_| Error::contract("contract.feature_map must have four entries"))?;
    let contract = ShapeContract {
        feature_map,
        projection_dim: header_num(c, "contract.projection_dim")?,
    };
    let mut params = c.load_store(PREFIX, enc.layout())?;

    let probe = FloatClip {
        frames: config.frames,
        height: config.height,
        width: config.width,
        data: vec![0.5; enc.input_len()],
    };
    let (f, z) = enc.forward_batch(std::slice::from_ref(&probe), &params)?;
    let got_fm = [f.shape[1], f.shape[2], f.shape[3], f.shape[4]];
    if got_fm != contract.feature_map {
        return Err(Error::contract(format!(
            "declared feature map {:?}, forward pass produced {:?}",
            contract.feature_map, got_fm
        )));
    }
    if z.shape[1] != contract.projection_dim {
        return Err(Error::contract(format!(
            "declared projection_dim {}, forward pass produced {}",
            contract.projection_dim, z.shape[1]
        )));
    }
    params.freeze();
    Ok(EncoderCheckpoint {
        config,
        scheme,
        contract,
        params,
    })
}
