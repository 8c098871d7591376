//! Sigmoid-gated channel and spatial attention.

use rand_chacha::ChaCha8Rng;

use super::params::{Bound, Conv, ConvSpec, Init, ParamStore};
use crate::autograd::{Tape, Var};
use crate::error::Result;

/// Squeeze-and-excitation gate: global average pool, bottleneck of
/// `channels / reduction`, sigmoid.
#[derive(Clone, Debug)]
pub struct ChannelGate {
    squeeze: Conv,
    excite: Conv,
}

impl ChannelGate {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Self {
        let hidden = (channels / reduction.max(1)).max(1);
        ChannelGate {
            squeeze: Conv::new(
                store,
                rng,
                &format!("{name}.squeeze"),
                ConvSpec::new(channels, hidden, 1),
            ),
            excite: Conv::new(
                store,
                rng,
                &format!("{name}.excite"),
                ConvSpec::new(hidden, channels, 1).init(Init::Default),
            ),
        }
    }

    /// The `[N, C, 1, 1]` gate, values in (0, 1).
    pub fn gate(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let pooled = tape.global_avg_pool(x);
        let hidden = self.squeeze.forward_relu(tape, bound, pooled)?;
        let logits = self.excite.forward(tape, bound, hidden)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let g = self.gate(tape, bound, x)?;
        tape.mul(x, g)
    }
}

/// Spatial gate over the channel-wise mean and max maps.
#[derive(Clone, Debug)]
pub struct SpatialGate {
    conv: Conv,
}

impl SpatialGate {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, kernel: usize) -> Self {
        SpatialGate {
            conv: Conv::new(
                store,
                rng,
                &format!("{name}.conv"),
                ConvSpec::new(2, 1, kernel).init(Init::Default),
            ),
        }
    }

    /// The `[N, 1, H, W]` gate, values in (0, 1).
    pub fn gate(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mean = tape.channel_mean(x);
        let max = tape.channel_max(x);
        let stacked = tape.concat(&[mean, max])?;
        let logits = self.conv.forward(tape, bound, stacked)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let g = self.gate(tape, bound, x)?;
        tape.mul(x, g)
    }
}
