//! Neighbor connection decoder producing the coarse location map.

use rand_chacha::ChaCha8Rng;

use super::params::{Bound, Conv, ConvSpec, Init, ParamStore};
use crate::autograd::{Tape, Var};
use crate::error::{Result, TvnetError};

#[derive(Clone, Debug)]
pub struct Ncd {
    up1: Conv,
    up2: Conv,
    up3: Conv,
    up4: Conv,
    up5: Conv,
    concat2: Conv,
    concat3: Conv,
    conv4: Conv,
    conv5: Conv,
    channels: usize,
}

impl Ncd {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, channels: usize) -> Self {
        let c = channels;
        let mut conv = |name: &str, cin: usize, cout: usize| {
            Conv::new(
                store,
                rng,
                &format!("ncd.{name}"),
                ConvSpec::new(cin, cout, 3),
            )
        };
        let up1 = conv("up1", c, c);
        let up2 = conv("up2", c, c);
        let up3 = conv("up3", c, c);
        let up4 = conv("up4", c, c);
        let up5 = conv("up5", 2 * c, 2 * c);
        let concat2 = conv("concat2", 2 * c, 2 * c);
        let concat3 = conv("concat3", 3 * c, 3 * c);
        let conv4 = conv("conv4", 3 * c, 3 * c);
        let conv5 = Conv::new(
            store,
            rng,
            "ncd.conv5",
            ConvSpec::new(3 * c, 1, 1).init(Init::Default),
        );
        Ncd {
            up1,
            up2,
            up3,
            up4,
            up5,
            concat2,
            concat3,
            conv4,
            conv5,
            channels,
        }
    }

    /// Aggregates refined levels 3, 4, 5 into single-channel logits at the
    /// level-5 resolution.
    ///
    /// Deeper maps are upsampled and multiplied into their shallower
    /// neighbours, the products are concatenated with upsampled context,
    /// and the stack is reduced to one channel at level-3 resolution
    /// before being resampled to level 5.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        f3: Var,
        f4: Var,
        f5: Var,
    ) -> Result<Var> {
        for (lvl, v) in [(3, f3), (4, f4), (5, f5)] {
            let c = tape.shape(v)[1];
            if c != self.channels {
                return Err(TvnetError::Shape(format!(
                    "decoder expects {} channels on every level, level {lvl} has {c}",
                    self.channels
                )));
            }
        }
        let [_, _, h3, w3] = tape.shape(f3);
        let [_, _, h4, w4] = tape.shape(f4);
        let [_, _, h5, w5] = tape.shape(f5);

        let f5_at4 = tape.resize(f5, h4, w4)?;
        let a = self.up1.forward_relu(tape, bound, f5_at4)?;
        let x4 = tape.mul(a, f4)?;

        let x4_at3 = tape.resize(x4, h3, w3)?;
        let b = self.up2.forward_relu(tape, bound, x4_at3)?;
        let f4_at3 = tape.resize(f4, h3, w3)?;
        let c = self.up3.forward_relu(tape, bound, f4_at3)?;
        let bc = tape.mul(b, c)?;
        let x3 = tape.mul(bc, f3)?;

        let d = self.up4.forward_relu(tape, bound, f5_at4)?;
        let y4 = tape.concat(&[x4, d])?;
        let y4 = self.concat2.forward_relu(tape, bound, y4)?;

        let y4_at3 = tape.resize(y4, h3, w3)?;
        let e = self.up5.forward_relu(tape, bound, y4_at3)?;
        let y3 = tape.concat(&[x3, e])?;
        let y3 = self.concat3.forward_relu(tape, bound, y3)?;
        let y3 = self.conv4.forward_relu(tape, bound, y3)?;
        let logits = self.conv5.forward(tape, bound, y3)?;
        tape.resize(logits, h5, w5)
    }
}
