//! Reverse-mode differentiation over a linear tape of tensor operations.

use crate::error::{Result, TvnetError};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Affine {
        input: Var,
        scale: f64,
    },
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>),
    SliceChannels {
        input: Var,
        start: usize,
    },
    Resize(Var),
    AvgPool {
        input: Var,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool(Var),
    ChannelMean(Var),
    ChannelMax {
        input: Var,
        argmax: Vec<usize>,
    },
    /// Scalar-valued function whose local gradient was computed with the
    /// forward value.
    ScalarFn {
        input: Var,
        local_grad: Tensor,
    },
    LinearCombination(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations in evaluation order so gradients can be pulled back
/// through them in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Broadcast strides of `small` against `big`: dimensions of size 1 in
/// `small` get stride 0.
fn broadcast_strides(big: [usize; 4], small: [usize; 4]) -> Option<[usize; 4]> {
    let mut strides = [0; 4];
    let mut acc = 1;
    for d in (0..4).rev() {
        if small[d] == big[d] {
            strides[d] = acc;
        } else if small[d] == 1 {
            strides[d] = 0;
        } else {
            return None;
        }
        acc *= small[d];
    }
    Some(strides)
}

fn for_each_broadcast(big: [usize; 4], strides: [usize; 4], mut f: impl FnMut(usize, usize)) {
    let mut i = 0;
    for n in 0..big[0] {
        for c in 0..big[1] {
            for y in 0..big[2] {
                let base = n * strides[0] + c * strides[1] + y * strides[2];
                for x in 0..big[3] {
                    f(i, base + x * strides[3]);
                    i += 1;
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = tensor::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }

    fn broadcast_binary(&self, a: Var, b: Var, what: &str) -> Result<[usize; 4]> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        broadcast_strides(sa, sb)
            .ok_or_else(|| TvnetError::Shape(format!("cannot {what} {sb:?} onto {sa:?}")))
    }

    /// `a + b`, with `b` broadcast over its unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let strides = self.broadcast_binary(a, b, "add")?;
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = va.clone();
        let (od, bd) = (out.data_mut(), vb.data());
        for_each_broadcast(va.shape(), strides, |i, j| od[i] += bd[j]);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `a * b` elementwise, with `b` broadcast over its unit dimensions.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let strides = self.broadcast_binary(a, b, "multiply")?;
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = va.clone();
        let (od, bd) = (out.data_mut(), vb.data());
        for_each_broadcast(va.shape(), strides, |i, j| od[i] *= bd[j]);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(input).map(|v| scale * v + shift);
        self.push(out, Op::Affine { input, scale })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).map(sigmoid);
        self.push(out, Op::Sigmoid(input))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v.max(0.0));
        self.push(out, Op::Relu(input))
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| TvnetError::Shape("concat of nothing".into()))?;
        let [n, _, h, w] = self.shape(first);
        let mut channels = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = self.shape(v);
            if (vn, vh, vw) != (n, h, w) {
                return Err(TvnetError::Shape(format!(
                    "concat operands {:?} and {:?} disagree outside the channel axis",
                    self.shape(first),
                    self.shape(v)
                )));
            }
            channels += vc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * channels * hw);
        for b in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let per = t.channels() * hw;
                data.extend_from_slice(&t.data()[b * per..(b + 1) * per]);
            }
        }
        let out = Tensor::from_vec([n, channels, h, w], data)?;
        Ok(self.push(out, Op::Concat(inputs.to_vec())))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.shape(input);
        if start + len > c || len == 0 {
            return Err(TvnetError::Shape(format!(
                "channel slice {start}..{} out of {c}",
                start + len
            )));
        }
        let src = self.value(input).data();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            data.extend_from_slice(&src[(b * c + start) * hw..(b * c + start + len) * hw]);
        }
        let out = Tensor::from_vec([n, len, h, w], data)?;
        Ok(self.push(out, Op::SliceChannels { input, start }))
    }

    /// Bilinear resize to `(height, width)`; identity when sizes match.
    pub fn resize(&mut self, input: Var, height: usize, width: usize) -> Result<Var> {
        if self.value(input).spatial() == (height, width) {
            return Ok(input);
        }
        let out = tensor::resize_bilinear(self.value(input), height, width)?;
        Ok(self.push(out, Op::Resize(input)))
    }

    pub fn avg_pool(
        &mut self,
        input: Var,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = tensor::avg_pool(self.value(input), kernel, stride, padding)?;
        Ok(self.push(
            out,
            Op::AvgPool {
                input,
                kernel,
                stride,
                padding,
            },
        ))
    }

    /// Mean over the spatial axes, giving `[N, C, 1, 1]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let [n, c, h, w] = t.shape();
        let norm = 1.0 / (h * w) as f64;
        let mut out = Tensor::zeros([n, c, 1, 1]);
        for b in 0..n {
            for ch in 0..c {
                out.data_mut()[b * c + ch] = t.plane(b, ch).iter().sum::<f64>() * norm;
            }
        }
        self.push(out, Op::GlobalAvgPool(input))
    }

    /// Mean over channels, giving `[N, 1, H, W]`.
    pub fn channel_mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let [n, c, h, w] = t.shape();
        let hw = h * w;
        let norm = 1.0 / c as f64;
        let mut out = Tensor::zeros([n, 1, h, w]);
        for b in 0..n {
            let dst = &mut out.data_mut()[b * hw..(b + 1) * hw];
            for ch in 0..c {
                for (d, s) in dst.iter_mut().zip(t.plane(b, ch)) {
                    *d += s;
                }
            }
            for d in dst.iter_mut() {
                *d *= norm;
            }
        }
        self.push(out, Op::ChannelMean(input))
    }

    /// Max over channels, giving `[N, 1, H, W]`. Ties go to the lowest
    /// channel.
    pub fn channel_max(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let [n, c, h, w] = t.shape();
        let hw = h * w;
        let mut out = Tensor::full([n, 1, h, w], f64::NEG_INFINITY);
        let mut argmax = vec![0usize; n * hw];
        for b in 0..n {
            for ch in 0..c {
                let plane = t.plane(b, ch);
                for (p, &v) in plane.iter().enumerate() {
                    let slot = b * hw + p;
                    if v > out.data()[slot] {
                        out.data_mut()[slot] = v;
                        argmax[slot] = ch;
                    }
                }
            }
        }
        self.push(out, Op::ChannelMax { input, argmax })
    }

    /// Records a scalar produced by an external function together with its
    /// gradient with respect to `input`.
    pub fn scalar_fn(&mut self, input: Var, value: f64, local_grad: Tensor) -> Result<Var> {
        if local_grad.shape() != self.shape(input) {
            return Err(TvnetError::Shape(format!(
                "local gradient {:?} does not match input {:?}",
                local_grad.shape(),
                self.shape(input)
            )));
        }
        Ok(self.push(Tensor::scalar(value), Op::ScalarFn { input, local_grad }))
    }

    /// `sum_k w_k * (sum of all elements of x_k)`.
    pub fn dot(&mut self, input: Var, weights: &Tensor) -> Result<Var> {
        let value = self
            .value(input)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        self.scalar_fn(input, value, weights.clone())
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = self.value(input).sum();
        let grad = Tensor::full(self.shape(input), 1.0);
        self.push(
            Tensor::scalar(value),
            Op::ScalarFn {
                input,
                local_grad: grad,
            },
        )
    }

    /// Weighted sum of scalar nodes.
    pub fn linear_combination(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(TvnetError::Shape(format!(
                    "linear combination expects scalars, got {:?}",
                    t.shape()
                )));
            }
            total += w * t.data()[0];
        }
        Ok(self.push(Tensor::scalar(total), Op::LinearCombination(terms.to_vec())))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(TvnetError::Shape(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(self.shape(output), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let (gi, gw, gb) = tensor::conv2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        &g,
                        *stride,
                        *padding,
                    )?;
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *weight, gw);
                    if let Some(b) = bias {
                        let gb = Tensor::from_vec(self.shape(*b), gb.into_data())?;
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    let sb = self.shape(*b);
                    let strides =
                        broadcast_strides(node.value.shape(), sb).expect("checked in forward");
                    let mut gb = Tensor::zeros(sb);
                    {
                        let (gd, gbd) = (g.data(), gb.data_mut());
                        for_each_broadcast(node.value.shape(), strides, |i, j| gbd[j] += gd[i]);
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let strides =
                        broadcast_strides(va.shape(), vb.shape()).expect("checked in forward");
                    let mut ga = g.clone();
                    let mut gb = Tensor::zeros(vb.shape());
                    {
                        let (gd, gad, gbd) = (g.data(), ga.data_mut(), gb.data_mut());
                        let (ad, bd) = (va.data(), vb.data());
                        for_each_broadcast(va.shape(), strides, |i, j| {
                            gad[i] = gd[i] * bd[j];
                            gbd[j] += gd[i] * ad[i];
                        });
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Affine { input, scale } => {
                    let mut gi = g;
                    gi.scale(*scale);
                    accumulate(&mut grads, *input, gi);
                }
                Op::Sigmoid(input) => {
                    let mut gi = g;
                    for (d, y) in gi.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Relu(input) => {
                    let mut gi = g;
                    for (d, x) in gi.data_mut().iter_mut().zip(self.value(*input).data()) {
                        if *x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Concat(inputs) => {
                    let [n, _, h, w] = node.value.shape();
                    let hw = h * w;
                    let total_c = node.value.channels();
                    let mut offset = 0;
                    for &v in inputs {
                        let c = self.shape(v)[1];
                        let mut part = Vec::with_capacity(n * c * hw);
                        for b in 0..n {
                            let start = (b * total_c + offset) * hw;
                            part.extend_from_slice(&g.data()[start..start + c * hw]);
                        }
                        accumulate(&mut grads, v, Tensor::from_vec([n, c, h, w], part)?);
                        offset += c;
                    }
                }
                Op::SliceChannels { input, start } => {
                    let [n, c, h, w] = self.shape(*input);
                    let len = node.value.channels();
                    let hw = h * w;
                    let mut gi = Tensor::zeros([n, c, h, w]);
                    for b in 0..n {
                        let dst = (b * c + start) * hw;
                        gi.data_mut()[dst..dst + len * hw]
                            .copy_from_slice(&g.data()[b * len * hw..(b + 1) * len * hw]);
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Resize(input) => {
                    let (h, w) = self.value(*input).spatial();
                    accumulate(
                        &mut grads,
                        *input,
                        tensor::resize_bilinear_backward(&g, h, w)?,
                    );
                }
                Op::AvgPool {
                    input,
                    kernel,
                    stride,
                    padding,
                } => {
                    let gi = tensor::avg_pool_backward(
                        &g,
                        self.shape(*input),
                        *kernel,
                        *stride,
                        *padding,
                    )?;
                    accumulate(&mut grads, *input, gi);
                }
                Op::GlobalAvgPool(input) => {
                    let [n, c, h, w] = self.shape(*input);
                    let norm = 1.0 / (h * w) as f64;
                    let gi = Tensor::from_fn([n, c, h, w], |i| g.data()[i / (h * w)] * norm);
                    accumulate(&mut grads, *input, gi);
                }
                Op::ChannelMean(input) => {
                    let [n, c, h, w] = self.shape(*input);
                    let hw = h * w;
                    let norm = 1.0 / c as f64;
                    let gi = Tensor::from_fn([n, c, h, w], |i| {
                        let b = i / (c * hw);
                        g.data()[b * hw + i % hw] * norm
                    });
                    accumulate(&mut grads, *input, gi);
                }
                Op::ChannelMax { input, argmax } => {
                    let [n, c, h, w] = self.shape(*input);
                    let hw = h * w;
                    let mut gi = Tensor::zeros([n, c, h, w]);
                    for b in 0..n {
                        for p in 0..hw {
                            let slot = b * hw + p;
                            let ch = argmax[slot];
                            gi.data_mut()[(b * c + ch) * hw + p] += g.data()[slot];
                        }
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::ScalarFn { input, local_grad } => {
                    let mut gi = local_grad.clone();
                    gi.scale(g.data()[0]);
                    accumulate(&mut grads, *input, gi);
                }
                Op::LinearCombination(terms) => {
                    for &(v, w) in terms {
                        accumulate(&mut grads, v, Tensor::scalar(w * g.data()[0]));
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients of leaf nodes produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 4], scale: f64, offset: f64) -> Tensor {
        Tensor::from_fn(shape, |i| ((i as f64 * 0.7919).sin() * scale) + offset)
    }

    /// Central-difference check of d(dot(f(x), r))/dx for a single-input
    /// graph builder `f`.
    fn check(shape: [usize; 4], build: impl Fn(&mut Tape, Var) -> Var) {
        let x0 = ramp(shape, 1.0, 0.1);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = build(&mut tape, x);
        let r = ramp(tape.shape(y), 0.5, 0.3);
        let out = tape.dot(y, &r).unwrap();
        let grads = tape.backward(out).unwrap();
        let analytic = grads.get(x).unwrap().clone();

        let eval = |input: Tensor| {
            let mut t = Tape::new();
            let x = t.leaf(input);
            let y = build(&mut t, x);
            let o = t.dot(y, &r).unwrap();
            t.value(o).data()[0]
        };
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut plus = x0.clone();
            plus.data_mut()[i] += h;
            let mut minus = x0.clone();
            minus.data_mut()[i] -= h;
            let numeric = (eval(plus) - eval(minus)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + a.abs()),
                "element {i}: analytic {a} numeric {numeric}"
            );
        }
    }

    #[test]
    fn elementwise_ops_gradients() {
        check([1, 2, 3, 3], |t, x| t.sigmoid(x));
        check([1, 2, 3, 3], |t, x| t.relu(x));
        check([1, 2, 3, 3], |t, x| t.affine(x, -2.0, 1.0));
        check([1, 2, 3, 3], |t, x| t.mul(x, x).unwrap());
    }

    #[test]
    fn broadcast_ops_gradients() {
        check([2, 3, 4, 4], |t, x| {
            let g = t.global_avg_pool(x);
            let g = t.sigmoid(g);
            t.mul(x, g).unwrap()
        });
        check([2, 3, 4, 4], |t, x| {
            let m = t.channel_mean(x);
            t.add(x, m).unwrap()
        });
        check([1, 3, 4, 5], |t, x| {
            let m = t.channel_max(x);
            t.mul(x, m).unwrap()
        });
    }

    #[test]
    fn structural_ops_gradients() {
        check([2, 4, 3, 3], |t, x| {
            let a = t.slice_channels(x, 1, 2).unwrap();
            let b = t.sigmoid(x);
            t.concat(&[a, b]).unwrap()
        });
        check([1, 2, 3, 5], |t, x| t.resize(x, 7, 4).unwrap());
        check([1, 2, 6, 5], |t, x| t.avg_pool(x, 3, 2, 1).unwrap());
    }

    #[test]
    fn conv_gradient_wrt_input() {
        let w = ramp([3, 2, 3, 3], 0.4, 0.0);
        check([2, 2, 5, 5], move |t, x| {
            let wv = t.leaf(w.clone());
            t.conv2d(x, wv, None, 2, 1).unwrap()
        });
    }

    #[test]
    fn linear_combination_backprop() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full([1, 1, 2, 2], 2.0));
        let s = tape.sum(x);
        let d = tape.dot(x, &Tensor::full([1, 1, 2, 2], 3.0)).unwrap();
        let total = tape.linear_combination(&[(s, 2.0), (d, 0.5)]).unwrap();
        assert_eq!(tape.value(total).data()[0], 2.0 * 8.0 + 0.5 * 24.0);
        let g = tape.backward(total).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 2.0 + 1.5));
    }

    #[test]
    fn bad_broadcast_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros([1, 3, 4, 4]));
        let b = tape.leaf(Tensor::zeros([1, 2, 4, 4]));
        assert!(tape.add(a, b).is_err());
        let c = tape.leaf(Tensor::zeros([1, 1, 3, 4]));
        assert!(tape.concat(&[a, c]).is_err());
    }
}
