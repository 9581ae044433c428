use crate::clip::{FloatClip, VideoClip};
use crate::encoder::{clips_to_tensor, Encoder, EncoderCheckpoint, SchemeTag, ShapeContract};
use crate::error::{Error, Result};
use crate::heads::{
    adapt_on_tape, head_input_shape, ActorOutput, HeadConfig, HeadNet, HeadVariant, PolicyCheckpoint,
};
use crate::nn::{ParamStore, Tape, Tensor};

/// Encoder plus actor and critic heads.
#[derive(Debug, Clone)]
pub struct Policy {
    pub encoder: Encoder,
    pub enc_params: ParamStore,
    pub scheme: SchemeTag,
    pub contract: ShapeContract,
    pub variant: HeadVariant,
    pub head: HeadConfig,
    pub actions: usize,
    pub actor_net: HeadNet,
    pub critic_net: HeadNet,
    pub actor: ParamStore,
    pub critic: ParamStore,
}

/// One forward evaluation for a single observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub input: Vec<f64>,
    pub output: ActorOutput,
    pub value: f64,
}

impl Policy {
    /// Fresh heads (seeded) on top of `encoder`.
    pub fn new(
        encoder: &EncoderCheckpoint,
        variant: HeadVariant,
        head: HeadConfig,
        actions: usize,
        seed: u64,
    ) -> Result<Self> {
        let shape = head_input_shape(variant.kind, &encoder.contract);
        let actor_net = HeadNet::actor(variant, head.clone(), &shape, actions)?;
        let critic_net = HeadNet::critic(variant, head.clone(), &shape)?;
        let actor = actor_net.init(seed);
        let critic = critic_net.init(seed.wrapping_add(0x5eed));
        Ok(Self {
            encoder: encoder.encoder()?,
            enc_params: encoder.params.clone(),
            scheme: encoder.scheme,
            contract: encoder.contract,
            variant,
            head,
            actions,
            actor_net,
            critic_net,
            actor,
            critic,
        })
    }

    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        Ok(Self {
            encoder: ck.encoder.encoder()?,
            enc_params: ck.encoder.params.clone(),
            scheme: ck.encoder.scheme,
            contract: ck.encoder.contract,
            variant: ck.variant,
            head: ck.head.clone(),
            actions: ck.actions,
            actor_net: ck.actor_net()?,
            critic_net: ck.critic_net()?,
            actor: ck.actor.clone(),
            critic: ck.critic.clone(),
        })
    }

    pub fn to_checkpoint(&self, end_to_end: bool) -> PolicyCheckpoint {
        let mut enc = self.enc_params.clone();
        enc.freeze();
        PolicyCheckpoint {
            variant: self.variant,
            head: self.head.clone(),
            actions: self.actions,
            encoder: EncoderCheckpoint {
                config: self.encoder.config().clone(),
                scheme: self.scheme,
                contract: self.contract,
                params: enc,
            },
            end_to_end,
            actor: self.actor.clone(),
            critic: self.critic.clone(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.actor_net.input_len()
    }

    /// Head inputs `[N, input_len]` for a batch of clips, no gradients.
    pub fn head_inputs(&self, clips: &[FloatClip]) -> Result<Tensor> {
        let cfg = self.encoder.config();
        for c in clips {
            if (c.frames, c.height, c.width) != (cfg.frames, cfg.height, cfg.width) {
                return Err(Error::contract(format!(
                    "observation is {}x{}x{}, the encoder expects {}x{}x{}",
                    c.frames, c.height, c.width, cfg.frames, cfg.height, cfg.width
                )));
            }
        }
        let mut tape = Tape::new();
        let x = tape.constant(clips_to_tensor(clips));
        let f = self.encoder.features(&mut tape, &self.enc_params, None, x);
        let h = adapt_on_tape(self.variant.kind, &mut tape, &self.encoder, &self.enc_params, None, f);
        let v = tape.value(h);
        Ok(Tensor::new(vec![clips.len(), self.input_len()], v.data.clone()))
    }

    /// Actor outputs and values for precomputed head inputs.
    pub fn heads(&self, inputs: &Tensor) -> Result<(Vec<ActorOutput>, Vec<f64>)> {
        let raw = self.actor_net.forward_rows(&self.actor, inputs)?;
        let values = self.critic_net.forward_rows(&self.critic, inputs)?;
        Ok((raw.rows().map(ActorOutput::from_raw).collect(), values.data))
    }

    pub fn step(&self, obs: &VideoClip) -> Result<PolicyStep> {
        let inputs = self.head_inputs(std::slice::from_ref(&obs.to_float()))?;
        let (mut out, values) = self.heads(&inputs)?;
        Ok(PolicyStep {
            input: inputs.data,
            output: out.remove(0),
            value: values[0],
        })
    }

    /// Deterministic action: the mean.
    pub fn mean_action(&self, obs: &VideoClip) -> Result<Vec<f64>> {
        Ok(self.step(obs)?.output.mean)
    }
}
