//! Five-level feature extractors.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bound, Conv, ConvSpec, ParamStore};
use crate::autograd::{Tape, Var};
use crate::error::{Result, TvnetError};

/// Which feature extractor produces the pyramid, and at what width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackboneSpec {
    /// Five stages of two 3x3 convolutions, the first with stride 2.
    Toy { channels: [usize; 5] },
    /// Res2Net bottleneck stages: a 7x7 stride-2 stem followed by four
    /// stages of multi-scale residual blocks.
    Res2Net {
        planes: usize,
        base_width: usize,
        scale: usize,
        blocks: [usize; 4],
    },
}

impl BackboneSpec {
    pub fn toy(width: usize) -> Self {
        BackboneSpec::Toy {
            channels: [width, 2 * width, 2 * width, 4 * width, 4 * width],
        }
    }

    pub fn res2net50() -> Self {
        BackboneSpec::Res2Net {
            planes: 64,
            base_width: 26,
            scale: 4,
            blocks: [3, 4, 6, 3],
        }
    }

    /// Channel count of f1..f5.
    pub fn channels(&self) -> [usize; 5] {
        match *self {
            BackboneSpec::Toy { channels } => channels,
            BackboneSpec::Res2Net { planes, .. } => {
                [planes, 4 * planes, 8 * planes, 16 * planes, 32 * planes]
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BackboneSpec::Toy { channels } => {
                if channels.contains(&0) {
                    return Err(TvnetError::Config(
                        "toy backbone channels must be positive".into(),
                    ));
                }
            }
            BackboneSpec::Res2Net {
                planes,
                base_width,
                scale,
                blocks,
            } => {
                if *planes == 0 || *base_width == 0 || *scale == 0 || blocks.contains(&0) {
                    return Err(TvnetError::Config(
                        "res2net parameters must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for BackboneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackboneSpec::Toy { channels } => {
                let c: Vec<String> = channels.iter().map(|c| c.to_string()).collect();
                write!(f, "toy:{}", c.join(","))
            }
            BackboneSpec::Res2Net {
                planes,
                base_width,
                scale,
                blocks,
            } => write!(
                f,
                "res2net:{planes},{base_width},{scale},{},{},{},{}",
                blocks[0], blocks[1], blocks[2], blocks[3]
            ),
        }
    }
}

impl FromStr for BackboneSpec {
    type Err = TvnetError;

    /// Accepts `toy`, `toy:<width>`, `toy:c1,c2,c3,c4,c5`, `res2net50` and
    /// `res2net:planes,base_width,scale,b1,b2,b3,b4`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || TvnetError::Config(format!("unrecognised backbone spec `{s}`"));
        let s = s.trim();
        let (kind, args) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let nums = |a: &str| -> Result<Vec<usize>> {
            a.split(',')
                .map(|v| v.trim().parse::<usize>().map_err(|_| bad()))
                .collect()
        };
        let spec = match (kind, args) {
            ("toy", None) => BackboneSpec::toy(8),
            ("toy", Some(a)) => {
                let v = nums(a)?;
                match v.len() {
                    1 => BackboneSpec::toy(v[0]),
                    5 => BackboneSpec::Toy {
                        channels: [v[0], v[1], v[2], v[3], v[4]],
                    },
                    _ => return Err(bad()),
                }
            }
            ("res2net50", None) => BackboneSpec::res2net50(),
            ("res2net", Some(a)) => {
                let v = nums(a)?;
                if v.len() != 7 {
                    return Err(bad());
                }
                BackboneSpec::Res2Net {
                    planes: v[0],
                    base_width: v[1],
                    scale: v[2],
                    blocks: [v[3], v[4], v[5], v[6]],
                }
            }
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Five multi-resolution feature maps; level `i` (1-based) has stride `2^i`.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub levels: [Var; 5],
}

impl FeaturePyramid {
    /// Level `i` for `i` in 1..=5.
    pub fn level(&self, i: usize) -> Var {
        self.levels[i - 1]
    }
}

#[derive(Clone, Debug)]
struct ToyStage {
    down: Conv,
    conv: Conv,
}

#[derive(Clone, Debug)]
struct Res2Block {
    conv1: Conv,
    splits: Vec<Conv>,
    conv3: Conv,
    downsample: Option<Conv>,
    width: usize,
    scale: usize,
    stride: usize,
    first: bool,
}

impl Res2Block {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        inplanes: usize,
        planes: usize,
        base_width: usize,
        scale: usize,
        stride: usize,
        first: bool,
    ) -> Self {
        let width = (planes * base_width / 64).max(1);
        let out = planes * 4;
        let conv1 = Conv::new(
            store,
            rng,
            &format!("{name}.conv1"),
            ConvSpec::new(inplanes, width * scale, 1),
        );
        let nums = if scale == 1 { 1 } else { scale - 1 };
        let splits = (0..nums)
            .map(|i| {
                Conv::new(
                    store,
                    rng,
                    &format!("{name}.split{i}"),
                    ConvSpec::new(width, width, 3).stride(stride),
                )
            })
            .collect();
        let conv3 = Conv::new(
            store,
            rng,
            &format!("{name}.conv3"),
            ConvSpec::new(width * scale, out, 1),
        );
        let downsample = (stride != 1 || inplanes != out).then(|| {
            Conv::new(
                store,
                rng,
                &format!("{name}.downsample"),
                ConvSpec::new(inplanes, out, 1).stride(stride),
            )
        });
        Res2Block {
            conv1,
            splits,
            conv3,
            downsample,
            width,
            scale,
            stride,
            first,
        }
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let out = self.conv1.forward_relu(tape, bound, x)?;
        let mut pieces = Vec::with_capacity(self.scale);
        let mut prev: Option<Var> = None;
        for (i, conv) in self.splits.iter().enumerate() {
            let chunk = tape.slice_channels(out, i * self.width, self.width)?;
            let input = match prev {
                Some(p) if !self.first => tape.add(chunk, p)?,
                _ => chunk,
            };
            let y = conv.forward_relu(tape, bound, input)?;
            pieces.push(y);
            prev = Some(y);
        }
        if self.scale != 1 {
            let last = tape.slice_channels(out, self.splits.len() * self.width, self.width)?;
            let last = if self.first {
                tape.avg_pool(last, 3, self.stride, 1)?
            } else {
                last
            };
            pieces.push(last);
        }
        let merged = tape.concat(&pieces)?;
        let y = self.conv3.forward(tape, bound, merged)?;
        let residual = match &self.downsample {
            Some(d) => d.forward(tape, bound, x)?,
            None => x,
        };
        let sum = tape.add(y, residual)?;
        Ok(tape.relu(sum))
    }
}

#[derive(Clone, Debug)]
enum Stages {
    Toy(Vec<ToyStage>),
    Res2Net {
        stem: Conv,
        layers: Vec<Vec<Res2Block>>,
    },
}

#[derive(Clone, Debug)]
pub struct Backbone {
    spec: BackboneSpec,
    stages: Stages,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, spec: &BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let stages = match *spec {
            BackboneSpec::Toy { channels } => {
                let mut stages = Vec::with_capacity(5);
                let mut cin = 3;
                for (i, &c) in channels.iter().enumerate() {
                    let name = format!("backbone.stage{}", i + 1);
                    let down = Conv::new(
                        store,
                        rng,
                        &format!("{name}.down"),
                        ConvSpec::new(cin, c, 3).stride(2),
                    );
                    let conv =
                        Conv::new(store, rng, &format!("{name}.conv"), ConvSpec::new(c, c, 3));
                    stages.push(ToyStage { down, conv });
                    cin = c;
                }
                Stages::Toy(stages)
            }
            BackboneSpec::Res2Net {
                planes,
                base_width,
                scale,
                blocks,
            } => {
                let stem = Conv::new(
                    store,
                    rng,
                    "backbone.stem",
                    ConvSpec::new(3, planes, 7).stride(2),
                );
                let mut layers = Vec::with_capacity(4);
                let mut inplanes = planes;
                for (l, &count) in blocks.iter().enumerate() {
                    let layer_planes = planes << l;
                    let mut layer = Vec::with_capacity(count);
                    for b in 0..count {
                        let first = b == 0;
                        layer.push(Res2Block::new(
                            store,
                            rng,
                            &format!("backbone.layer{}.block{b}", l + 1),
                            inplanes,
                            layer_planes,
                            base_width,
                            scale,
                            if first { 2 } else { 1 },
                            first,
                        ));
                        inplanes = layer_planes * 4;
                    }
                    layers.push(layer);
                }
                Stages::Res2Net { stem, layers }
            }
        };
        Ok(Backbone {
            spec: spec.clone(),
            stages,
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    /// Runs the extractor on a `[N, 3, H, W]` image batch. `H` and `W` must
    /// be at least 64 and divisible by 32.
    pub fn extract_pyramid(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        image: Var,
    ) -> Result<FeaturePyramid> {
        let [_, c, h, w] = tape.shape(image);
        check_input_size(h, w)?;
        if c != 3 {
            return Err(TvnetError::Shape(format!(
                "expected a 3-channel image, got {c} channels"
            )));
        }
        let mut levels = Vec::with_capacity(5);
        match &self.stages {
            Stages::Toy(stages) => {
                let mut x = image;
                for stage in stages {
                    x = stage.down.forward_relu(tape, bound, x)?;
                    x = stage.conv.forward_relu(tape, bound, x)?;
                    levels.push(x);
                }
            }
            Stages::Res2Net { stem, layers } => {
                let mut x = stem.forward_relu(tape, bound, image)?;
                levels.push(x);
                for layer in layers {
                    for block in layer {
                        x = block.forward(tape, bound, x)?;
                    }
                    levels.push(x);
                }
            }
        }
        let levels: [Var; 5] = levels.try_into().expect("five stages");
        Ok(FeaturePyramid { levels })
    }
}

pub fn check_input_size(h: usize, w: usize) -> Result<()> {
    if h < 64 || w < 64 || !h.is_multiple_of(32) || !w.is_multiple_of(32) {
        return Err(TvnetError::InvalidInput(format!(
            "input {h}x{w} must be at least 64x64 with both sides divisible by 32; pad or resize first"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_strings_round_trip() {
        for spec in [
            BackboneSpec::toy(8),
            BackboneSpec::res2net50(),
            BackboneSpec::Toy {
                channels: [1, 2, 3, 4, 5],
            },
        ] {
            let s = spec.to_string();
            assert_eq!(s.parse::<BackboneSpec>().unwrap(), spec);
        }
        assert_eq!("toy".parse::<BackboneSpec>().unwrap(), BackboneSpec::toy(8));
        assert!("toy:1,2".parse::<BackboneSpec>().is_err());
        assert!("vgg".parse::<BackboneSpec>().is_err());
        assert!("toy:0".parse::<BackboneSpec>().is_err());
    }

    #[test]
    fn res2net50_channels() {
        assert_eq!(
            BackboneSpec::res2net50().channels(),
            [64, 256, 512, 1024, 2048]
        );
    }

    #[test]
    fn size_contract() {
        assert!(check_input_size(352, 352).is_ok());
        assert!(check_input_size(64, 96).is_ok());
        assert!(check_input_size(350, 352).is_err());
        assert!(check_input_size(32, 32).is_err());
    }
}
