//! Foreground-background attention: split a coarser prediction into
//! strong-foreground, weak-foreground and background maps, use each to
//! select features, and refine the prediction residually.

use rand_chacha::ChaCha8Rng;

use super::params::{Bound, Conv, ConvSpec, Init, ParamStore};
use crate::autograd::{Tape, Var};
use crate::error::{Result, TvnetError};
use crate::tensor::Tensor;

/// Strong-foreground, weak-foreground and background maps.
#[derive(Clone, Copy, Debug)]
pub struct RegionVars {
    pub strong: Var,
    pub weak: Var,
    pub background: Var,
}

impl RegionVars {
    pub fn as_array(&self) -> [Var; 3] {
        [self.strong, self.weak, self.background]
    }
}

/// With `s = sigmoid(p)`: strong = max(2s-1, 0), background =
/// max(1-2s, 0), weak = 1 - strong - background. The three sum to one.
pub fn decompose_regions(tape: &mut Tape, logits: Var) -> Result<RegionVars> {
    let s = tape.sigmoid(logits);
    let centered = tape.affine(s, 2.0, -1.0);
    let strong = tape.relu(centered);
    let flipped = tape.affine(centered, -1.0, 0.0);
    let background = tape.relu(flipped);
    let certain = tape.add(strong, background)?;
    let weak = tape.affine(certain, -1.0, 1.0);
    Ok(RegionVars {
        strong,
        weak,
        background,
    })
}

/// Value-level region maps of a logits tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSensitiveMaps {
    pub strong: Tensor,
    pub weak: Tensor,
    pub background: Tensor,
}

pub fn region_maps(logits: &Tensor) -> RegionSensitiveMaps {
    let mut tape = Tape::new();
    let p = tape.leaf(logits.clone());
    let r = decompose_regions(&mut tape, p).expect("shapes agree by construction");
    RegionSensitiveMaps {
        strong: tape.value(r.strong).clone(),
        weak: tape.value(r.weak).clone(),
        background: tape.value(r.background).clone(),
    }
}

/// One refinement step: three region convolutions and a 1x1 predictor.
#[derive(Clone, Debug)]
pub struct FbaStep {
    pub regions: [Conv; 3],
    pub predict: Conv,
}

#[derive(Clone, Debug)]
pub struct Fba {
    pub steps: Vec<FbaStep>,
    pub level: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct FbaOutput {
    pub feature: Var,
    pub prediction: Var,
}

impl Fba {
    /// `cascades` chained steps at pyramid `level`.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        level: usize,
        channels: usize,
        cascades: usize,
    ) -> Self {
        let steps = (0..cascades)
            .map(|k| {
                let name = format!("fba{level}.step{k}");
                let region = |store: &mut ParamStore, rng: &mut ChaCha8Rng, r: &str| {
                    Conv::new(
                        store,
                        rng,
                        &format!("{name}.{r}"),
                        ConvSpec::new(channels, channels, 3).init(Init::Default),
                    )
                };
                let regions = [
                    region(store, rng, "strong"),
                    region(store, rng, "weak"),
                    region(store, rng, "background"),
                ];
                let predict = Conv::new(
                    store,
                    rng,
                    &format!("{name}.predict"),
                    ConvSpec::new(channels, 1, 1).init(Init::Default),
                );
                FbaStep { regions, predict }
            })
            .collect();
        Fba { steps, level }
    }

    /// Refines `prediction` (logits from the next-deeper stage) using
    /// `feature`. Region maps are resized to the feature's size; the output
    /// prediction is `conv1x1(f_out) + resize(prediction)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        feature: Var,
        prediction: Var,
    ) -> Result<FbaOutput> {
        let mut f = feature;
        let mut p = prediction;
        for step in &self.steps {
            let out = step.forward(tape, bound, f, p)?;
            f = out.feature;
            p = out.prediction;
        }
        Ok(FbaOutput {
            feature: f,
            prediction: p,
        })
    }
}

impl FbaStep {
    /// `f_out = sum_k G_k(resize(R_k) * f) + f`.
    pub fn attend(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        feature: Var,
        regions: RegionVars,
    ) -> Result<Var> {
        let [_, _, h, w] = tape.shape(feature);
        let mut out = feature;
        let mut summed: Option<Var> = None;
        for (conv, region) in self.regions.iter().zip(regions.as_array()) {
            let r = tape.resize(region, h, w)?;
            if tape.shape(r)[2..] != [h, w] {
                return Err(TvnetError::Shape(
                    "region map does not match feature size".into(),
                ));
            }
            let selected = tape.mul(feature, r)?;
            let g = conv.forward(tape, bound, selected)?;
            summed = Some(match summed {
                Some(s) => tape.add(s, g)?,
                None => g,
            });
        }
        if let Some(s) = summed {
            out = tape.add(s, out)?;
        }
        Ok(out)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        feature: Var,
        prediction: Var,
    ) -> Result<FbaOutput> {
        let [nf, _, h, w] = tape.shape(feature);
        let [np, cp, _, _] = tape.shape(prediction);
        if nf != np || cp != 1 {
            return Err(TvnetError::Shape(format!(
                "prediction {:?} is not a single-channel map for feature {:?}",
                tape.shape(prediction),
                tape.shape(feature)
            )));
        }
        let regions = decompose_regions(tape, prediction)?;
        let f_out = self.attend(tape, bound, feature, regions)?;
        let delta = self.predict.forward(tape, bound, f_out)?;
        let prior = tape.resize(prediction, h, w)?;
        let refined = tape.add(delta, prior)?;
        Ok(FbaOutput {
            feature: f_out,
            prediction: refined,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_cases_are_unit_basis() {
        let logits = Tensor::from_vec([1, 1, 1, 3], vec![800.0, 0.0, -800.0]).unwrap();
        let r = region_maps(&logits);
        assert_eq!(r.strong.data(), &[1.0, 0.0, 0.0]);
        assert_eq!(r.weak.data(), &[0.0, 1.0, 0.0]);
        assert_eq!(r.background.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn quarter_probability_splits_between_weak_and_background() {
        // s = 0.25 -> 2s-1 = -0.5
        let logits = Tensor::from_vec([1, 1, 1, 1], vec![(0.25f64 / 0.75).ln()]).unwrap();
        let r = region_maps(&logits);
        assert_eq!(r.strong.data()[0], 0.0);
        assert!((r.background.data()[0] - 0.5).abs() < 1e-12);
        assert!((r.weak.data()[0] - 0.5).abs() < 1e-12);
    }
}
