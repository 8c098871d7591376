//! Named parameter storage and the convolution layer built on it.

use std::collections::BTreeMap;
use std::ops::Index;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Result, TvnetError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Flat, ordered parameter list. Names are dotted module paths such as
/// `hrf3.fuse.weight`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.value)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Scalar counts grouped by the first path component of each name.
    pub fn counts_by_module(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for p in &self.params {
            let module = p.name.split('.').next().unwrap_or("").to_string();
            *out.entry(module).or_insert(0) += p.value.len();
        }
        out
    }

    /// Copies values from `other` by name. Every parameter of `self` must
    /// be present in `other` with the same shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(TvnetError::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                other.len(),
                self.len()
            )));
        }
        for p in &mut self.params {
            let src = other
                .by_name(&p.name)
                .ok_or_else(|| TvnetError::Checkpoint(format!("missing parameter {}", p.name)))?;
            if src.shape() != p.value.shape() {
                return Err(TvnetError::Checkpoint(format!(
                    "parameter {} has shape {:?}, model expects {:?}",
                    p.name,
                    src.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.clone();
        }
        Ok(())
    }

    /// Registers every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone()))
                .collect(),
        }
    }
}

/// Tape variables for each parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform with variance 2 / fan_in, for layers feeding a ReLU.
    He,
    /// Uniform in +-1/sqrt(fan_in).
    Default,
}

fn init_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], init: Init) -> Tensor {
    let fan_in = (shape[1] * shape[2] * shape[3]).max(1) as f64;
    let bound = match init {
        Init::He => (6.0 / fan_in).sqrt(),
        Init::Default => 1.0 / fan_in.sqrt(),
    };
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bias: bool,
    pub init: Init,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            bias: true,
            init: Init::He,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }
}

impl Conv {
    /// Registers `<name>.weight` (and `<name>.bias`) with "same" padding.
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, spec: ConvSpec) -> Self {
        let shape = [
            spec.out_channels,
            spec.in_channels,
            spec.kernel,
            spec.kernel,
        ];
        let weight = store.add(format!("{name}.weight"), init_tensor(rng, shape, spec.init));
        let bias = spec.bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Tensor::zeros([1, spec.out_channels, 1, 1]),
            )
        });
        Conv {
            weight,
            bias,
            stride: spec.stride,
            padding: spec.kernel / 2,
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let bias = self.bias.map(|b| bound[b]);
        tape.conv2d(x, bound[self.weight], bias, self.stride, self.padding)
    }

    /// Convolution followed by ReLU.
    pub fn forward_relu(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(tape, bound, x)?;
        Ok(tape.relu(y))
    }
}
