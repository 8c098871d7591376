use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backbone::{Backbone, BackboneSpec, FeaturePyramid};
use super::fba::Fba;
use super::hrf::{AttentionConfig, EdgeHead, Hrf};
use super::ncd::Ncd;
use super::params::{Bound, Conv, ConvSpec, ParamStore};
use crate::autograd::{Tape, Var};
use crate::error::{Result, TvnetError};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneSpec,
    /// Shared width of the refined features and decoder.
    pub channels: usize,
    /// Number of chained refinement steps per attention stage (1..=4).
    pub cascades: usize,
    pub use_hrf: bool,
    pub use_fba: bool,
    pub attention_reduction: usize,
    pub spatial_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneSpec::toy(8),
            channels: 32,
            cascades: 2,
            use_hrf: true,
            use_fba: true,
            attention_reduction: 16,
            spatial_kernel: 7,
        }
    }
}

impl ModelConfig {
    pub fn full_scale() -> Self {
        ModelConfig {
            backbone: BackboneSpec::res2net50(),
            channels: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.channels == 0 {
            return Err(TvnetError::Config("channels must be positive".into()));
        }
        if !(1..=4).contains(&self.cascades) {
            return Err(TvnetError::Config(format!(
                "cascades must be in 1..=4, got {}",
                self.cascades
            )));
        }
        if self.spatial_kernel.is_multiple_of(2) || self.attention_reduction == 0 {
            return Err(TvnetError::Config(
                "spatial_kernel must be odd and attention_reduction positive".into(),
            ));
        }
        Ok(())
    }
}

/// Tape handles for every output of a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PredictionVars {
    pub edge_logits: Option<Var>,
    pub p6: Var,
    pub p5: Option<Var>,
    pub p4: Option<Var>,
    pub p3: Option<Var>,
    /// Logits of the finest available prediction, resized to input size.
    pub final_logits: Var,
    pub final_prob: Var,
}

impl PredictionVars {
    /// Coarse-to-fine predictions present in this model, labelled by level.
    pub fn levels(&self) -> Vec<(u8, Var)> {
        let mut out = vec![(6, self.p6)];
        for (lvl, v) in [(5, self.p5), (4, self.p4), (3, self.p3)] {
            if let Some(v) = v {
                out.push((lvl, v));
            }
        }
        out
    }
}

/// Values of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub edge_logits: Option<Tensor>,
    pub p6: Tensor,
    pub p5: Option<Tensor>,
    pub p4: Option<Tensor>,
    pub p3: Option<Tensor>,
    pub final_prob: Tensor,
}

impl PredictionSet {
    pub fn from_tape(tape: &Tape, vars: &PredictionVars) -> Self {
        let get = |v: Option<Var>| v.map(|v| tape.value(v).clone());
        PredictionSet {
            edge_logits: get(vars.edge_logits),
            p6: tape.value(vars.p6).clone(),
            p5: get(vars.p5),
            p4: get(vars.p4),
            p3: get(vars.p3),
            final_prob: tape.value(vars.final_prob).clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TvNet {
    config: ModelConfig,
    backbone: Backbone,
    edge_head: Option<EdgeHead>,
    hrf: Option<[Hrf; 3]>,
    reduce: Option<[Conv; 3]>,
    ncd: Ncd,
    /// Attention stages at levels 5, 4, 3.
    fba: Option<[Fba; 3]>,
}

impl TvNet {
    /// Builds the network and its freshly initialised parameters.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, &mut rng, &config.backbone)?;
        let ch = config.backbone.channels();
        let c = config.channels;
        let attention = AttentionConfig {
            reduction: config.attention_reduction,
            spatial_kernel: config.spatial_kernel,
        };

        let (edge_head, hrf, reduce) = if config.use_hrf {
            let edge = EdgeHead::new(&mut store, &mut rng, ch[1]);
            let hrf = [3, 4, 5]
                .map(|lvl| Hrf::new(&mut store, &mut rng, lvl, ch[1], ch[lvl - 1], c, attention));
            (Some(edge), Some(hrf), None)
        } else {
            let reduce = [3, 4, 5].map(|lvl| {
                Conv::new(
                    &mut store,
                    &mut rng,
                    &format!("reduce{lvl}"),
                    ConvSpec::new(ch[lvl - 1], c, 1),
                )
            });
            (None, None, Some(reduce))
        };
        let ncd = Ncd::new(&mut store, &mut rng, c);
        let fba = config
            .use_fba
            .then(|| [5, 4, 3].map(|lvl| Fba::new(&mut store, &mut rng, lvl, c, config.cascades)));

        Ok((
            TvNet {
                config: config.clone(),
                backbone,
                edge_head,
                hrf,
                reduce,
                ncd,
                fba,
            },
            store,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn edge_head(&self) -> Option<&EdgeHead> {
        self.edge_head.as_ref()
    }

    pub fn hrf(&self, level: usize) -> Option<&Hrf> {
        self.hrf.as_ref().map(|h| &h[level - 3])
    }

    pub fn ncd(&self) -> &Ncd {
        &self.ncd
    }

    pub fn fba(&self, level: usize) -> Option<&Fba> {
        self.fba.as_ref().map(|f| &f[5 - level])
    }

    /// Refined features for levels 3, 4, 5 plus optional edge logits.
    fn refine(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        pyramid: &FeaturePyramid,
    ) -> Result<([Var; 3], Option<Var>)> {
        let f2 = pyramid.level(2);
        let mut refined = Vec::with_capacity(3);
        let edge = match (&self.hrf, &self.reduce, &self.edge_head) {
            (Some(hrf), _, Some(head)) => {
                for block in hrf {
                    refined.push(
                        block
                            .forward(tape, bound, f2, pyramid.level(block.level))?
                            .refined,
                    );
                }
                Some(head.forward(tape, bound, f2)?)
            }
            (None, Some(reduce), _) => {
                for (i, conv) in reduce.iter().enumerate() {
                    refined.push(conv.forward(tape, bound, pyramid.level(i + 3))?);
                }
                None
            }
            _ => unreachable!("either fusion or reduction is built"),
        };
        Ok((refined.try_into().expect("three levels"), edge))
    }

    /// Full forward pass on a `[N, 3, H, W]` batch.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, image: Var) -> Result<PredictionVars> {
        let [_, _, h, w] = tape.shape(image);
        let pyramid = self.backbone.extract_pyramid(tape, bound, image)?;
        let ([f3, f4, f5], edge_logits) = self.refine(tape, bound, &pyramid)?;
        let p6 = self.ncd.forward(tape, bound, f3, f4, f5)?;

        let (p5, p4, p3) = match &self.fba {
            Some([fba5, fba4, fba3]) => {
                let p5 = fba5.forward(tape, bound, f5, p6)?.prediction;
                let p4 = fba4.forward(tape, bound, f4, p5)?.prediction;
                let p3 = fba3.forward(tape, bound, f3, p4)?.prediction;
                (Some(p5), Some(p4), Some(p3))
            }
            None => (None, None, None),
        };
        let finest = p3.unwrap_or(p6);
        let final_logits = tape.resize(finest, h, w)?;
        let final_prob = tape.sigmoid(final_logits);
        Ok(PredictionVars {
            edge_logits,
            p6,
            p5,
            p4,
            p3,
            final_logits,
            final_prob,
        })
    }

    /// Forward pass without keeping the tape.
    pub fn predict(&self, params: &ParamStore, image: &Tensor) -> Result<PredictionSet> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.leaf(image.clone());
        let vars = self.forward(&mut tape, &bound, x)?;
        Ok(PredictionSet::from_tape(&tape, &vars))
    }
}

/// Plain-text per-module parameter summary.
pub fn architecture_summary(config: &ModelConfig, params: &ParamStore) -> String {
    let mut out = String::new();
    out.push_str(&format!("backbone: {}\n", config.backbone));
    out.push_str(&format!(
        "channels: {}\ncascades: {}\nuse_hrf: {}\nuse_fba: {}\n",
        config.channels, config.cascades, config.use_hrf, config.use_fba
    ));
    out.push_str("module\tparameters\n");
    for (module, count) in params.counts_by_module() {
        out.push_str(&format!("{module}\t{count}\n"));
    }
    out.push_str(&format!("total\t{}\n", params.num_scalars()));
    out
}
