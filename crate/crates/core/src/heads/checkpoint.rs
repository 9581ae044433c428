//! Policy checkpoints: the encoder the heads were trained on plus the actor
//! and critic, in the encoder container format.
//!
//! Extra header keys:
//!
//! ```text
//! kind = policy
//! head.variant = avg2D_s
//! head.conv = 32,16
//! head.fc = 32,16
//! head.l1, head.l2
//! head.actions = 1
//! head.input_shape = 16,4,4
//! encoder.training = frozen | end-to-end
//! ```
//!
//! Sections: `encoder.*`, `actor.*`, `critic.*`.

use std::path::Path;

use crate::encoder::checkpoint::{
    checkpoint_container, encoder_from_container, header, header_num, join, split,
};
use crate::encoder::EncoderCheckpoint;
use crate::error::{Error, Result};
use crate::nn::container::Container;
use crate::nn::ParamStore;

use super::net::{HeadConfig, HeadNet};
use super::variant::{head_input_shape, HeadVariant};

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCheckpoint {
    pub variant: HeadVariant,
    pub head: HeadConfig,
    pub actions: usize,
    pub encoder: EncoderCheckpoint,
    pub end_to_end: bool,
    pub actor: ParamStore,
    pub critic: ParamStore,
}

impl PolicyCheckpoint {
    pub fn input_shape(&self) -> Vec<usize> {
        head_input_shape(self.variant.kind, &self.encoder.contract)
    }

    pub fn actor_net(&self) -> Result<HeadNet> {
        HeadNet::actor(self.variant, self.head.clone(), &self.input_shape(), self.actions)
    }

    pub fn critic_net(&self) -> Result<HeadNet> {
        HeadNet::critic(self.variant, self.head.clone(), &self.input_shape())
    }

    pub fn to_container(&self) -> Result<Container> {
        let e = &self.encoder;
        let mut c = checkpoint_container(&e.params, &e.config, e.scheme)?;
        c.set_header("kind", "policy");
        c.set_header("head.variant", self.variant);
        c.set_header("head.conv", join(&self.head.conv));
        c.set_header("head.fc", join(&self.head.fc));
        c.set_header("head.l1", self.head.l1);
        c.set_header("head.l2", self.head.l2);
        c.set_header("head.actions", self.actions);
        c.set_header("head.input_shape", join(&self.input_shape()));
        c.set_header(
            "encoder.training",
            if self.end_to_end { "end-to-end" } else { "frozen" },
        );
        self.actor_net()?.check_store(&self.actor)?;
        self.critic_net()?.check_store(&self.critic)?;
        c.push_store("actor.", &self.actor);
        c.push_store("critic.", &self.critic);
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.header_value("kind") != Some("policy") {
            return Err(Error::contract("container is not a policy checkpoint"));
        }
        let encoder = encoder_from_container(c)?;
        let variant: HeadVariant = header(c, "head.variant")?
            .parse()
            .map_err(|e: Error| Error::contract(e.to_string()))?;
        let pair = |key: &str| -> Result<[usize; 2]> {
            split(key, header(c, key)?)?
                .try_into()
                .map_err(|_| Error::contract(format!("header {key} must list two widths")))
        };
        let head = HeadConfig {
            conv: pair("head.conv")?,
            fc: pair("head.fc")?,
            l1: header_num(c, "head.l1")?,
            l2: header_num(c, "head.l2")?,
        };
        let end_to_end = match header(c, "encoder.training")? {
            "frozen" => false,
            "end-to-end" => true,
            other => return Err(Error::contract(format!("unknown encoder.training '{other}'"))),
        };
        let mut ck = PolicyCheckpoint {
            variant,
            head,
            actions: header_num(c, "head.actions")?,
            encoder,
            end_to_end,
            actor: ParamStore::zeros(Default::default()),
            critic: ParamStore::zeros(Default::default()),
        };
        let declared = split("head.input_shape", header(c, "head.input_shape")?)?;
        if declared != ck.input_shape() {
            return Err(Error::contract(format!(
                "head input shape {declared:?} does not follow from the encoder contract ({:?})",
                ck.input_shape()
            )));
        }
        ck.actor = c.load_store("actor.", ck.actor_net()?.layout())?;
        ck.critic = c.load_store("critic.", ck.critic_net()?.layout())?;
        Ok(ck)
    }
}
