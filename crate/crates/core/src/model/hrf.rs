//! High-resolution fusion: inject level-2 detail into a deep level, then
//! gate the result by channel and spatial attention.

use rand_chacha::ChaCha8Rng;

use super::attention::{ChannelGate, SpatialGate};
use super::params::{Bound, Conv, ConvSpec, Init, ParamStore};
use crate::autograd::{Tape, Var};
use crate::error::{Result, TvnetError};

#[derive(Clone, Copy, Debug)]
pub struct AttentionConfig {
    pub reduction: usize,
    pub spatial_kernel: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            reduction: 16,
            spatial_kernel: 7,
        }
    }
}

/// 3x3 edge predictor on f2.
#[derive(Clone, Debug)]
pub struct EdgeHead {
    pub conv: Conv,
}

impl EdgeHead {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, f2_channels: usize) -> Self {
        EdgeHead {
            conv: Conv::new(
                store,
                rng,
                "edge_head",
                ConvSpec::new(f2_channels, 1, 3).init(Init::Default),
            ),
        }
    }

    /// Single-channel edge logits at the resolution of `f2`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, f2: Var) -> Result<Var> {
        self.conv.forward(tape, bound, f2)
    }
}

#[derive(Clone, Debug)]
pub struct Hrf {
    /// 3x3 convolution on the resized f2.
    pub detail: Conv,
    /// 3x3 convolution over `[f_i; detail]`, back to f_i's width.
    pub fuse: Conv,
    pub channel: ChannelGate,
    pub spatial: SpatialGate,
    /// 1x1 projection to the shared decoder width.
    pub project: Conv,
    pub level: usize,
}

/// Intermediate and final maps of one fusion block.
#[derive(Clone, Copy, Debug)]
pub struct HrfOutput {
    /// `f_i + G([f_i; G(resize(f2))])`.
    pub fused: Var,
    /// After channel gating.
    pub channel_gated: Var,
    /// After spatial gating, before the 1x1 projection.
    pub gated: Var,
    /// Refined feature with `out_channels` channels.
    pub refined: Var,
}

impl Hrf {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        level: usize,
        f2_channels: usize,
        level_channels: usize,
        out_channels: usize,
        attention: AttentionConfig,
    ) -> Self {
        let name = format!("hrf{level}");
        Hrf {
            detail: Conv::new(
                store,
                rng,
                &format!("{name}.detail"),
                ConvSpec::new(f2_channels, out_channels, 3),
            ),
            fuse: Conv::new(
                store,
                rng,
                &format!("{name}.fuse"),
                ConvSpec::new(level_channels + out_channels, level_channels, 3).init(Init::Default),
            ),
            channel: ChannelGate::new(
                store,
                rng,
                &format!("{name}.channel"),
                level_channels,
                attention.reduction,
            ),
            spatial: SpatialGate::new(
                store,
                rng,
                &format!("{name}.spatial"),
                attention.spatial_kernel,
            ),
            project: Conv::new(
                store,
                rng,
                &format!("{name}.project"),
                ConvSpec::new(level_channels, out_channels, 1),
            ),
            level,
        }
    }

    /// The residual fusion step alone: `f_i + G([f_i; G(resize(f2))])`,
    /// with f2 resized to f_i's exact spatial size.
    pub fn fuse(&self, tape: &mut Tape, bound: &Bound, f2: Var, fi: Var) -> Result<Var> {
        let [n2, _, _, _] = tape.shape(f2);
        let [ni, _, h, w] = tape.shape(fi);
        if n2 != ni {
            return Err(TvnetError::Shape(format!(
                "f2 batch {n2} does not match level-{} batch {ni}",
                self.level
            )));
        }
        let down = tape.resize(f2, h, w)?;
        let detail = self.detail.forward(tape, bound, down)?;
        let cat = tape.concat(&[fi, detail])?;
        let update = self.fuse.forward(tape, bound, cat)?;
        tape.add(fi, update)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, f2: Var, fi: Var) -> Result<HrfOutput> {
        let fused = self.fuse(tape, bound, f2, fi)?;
        let channel_gated = self.channel.forward(tape, bound, fused)?;
        let gated = self.spatial.forward(tape, bound, channel_gated)?;
        let refined = self.project.forward(tape, bound, gated)?;
        Ok(HrfOutput {
            fused,
            channel_gated,
            gated,
            refined,
        })
    }
}
