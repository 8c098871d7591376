//! Dense NCHW tensors in 64-bit floating point and the convolution /
//! resampling kernels the model is built from.
//!
//! Every kernel writes each output element from a single, fixed-order
//! accumulation, so results are bitwise identical whether planes are
//! processed on one thread or many.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::error::{Result, TvnetError};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enables or disables multi-threaded kernels. Outputs do not depend on
/// this setting.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

fn for_each_chunk<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    if parallel_enabled() {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    } else {
        data.chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 4], value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TvnetError::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize) -> f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: (0..len).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Spatial size as `(height, width)`.
    #[inline]
    pub fn spatial(&self) -> (usize, usize) {
        (self.shape[2], self.shape[3])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies batch item `n` out as a `[1, C, H, W]` tensor.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        Tensor {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Stacks same-shaped `[1, C, H, W]` tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| TvnetError::Shape("cannot stack an empty list".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        let mut batch = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(TvnetError::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape, first.shape
                )));
            }
            batch += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: [batch, c, h, w],
            data,
        })
    }
}

/// Output spatial size of a convolution along one axis.
pub fn conv_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Range of output positions `o` for which `o * stride + k - padding`
/// lands inside `[0, input)`.
#[inline]
fn valid_range(
    out_len: usize,
    input: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> (usize, usize) {
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    let hi_num = input + padding;
    let hi = if hi_num > k {
        ((hi_num - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

fn conv_geometry(
    input: [usize; 4],
    weight: [usize; 4],
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let [batch, cin, h, w] = input;
    let [cout, wcin, kh, kw] = weight;
    if cin != wcin {
        return Err(TvnetError::Shape(format!(
            "convolution expects {wcin} input channels, got {cin}"
        )));
    }
    let oh = conv_output_len(h, kh, stride, padding);
    let ow = conv_output_len(w, kw, stride, padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok(ConvGeometry {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh,
            ow,
            stride,
            padding,
        }),
        _ => Err(TvnetError::Shape(format!(
            "kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}"
        ))),
    }
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = conv_geometry(input.shape, weight.shape, stride, padding)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(TvnetError::Shape(format!(
                "bias has {} entries for {} output channels",
                b.len(),
                g.cout
            )));
        }
    }
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.batch * g.cout * plane];
    let inp = input.data();
    let wt = weight.data();
    let bias = bias.map(|b| b.data());
    for_each_chunk(&mut out, plane, |idx, dst| {
        let n = idx / g.cout;
        let oc = idx % g.cout;
        if let Some(b) = bias {
            dst.fill(b[oc]);
        }
        for ic in 0..g.cin {
            let src = &inp[(n * g.cin + ic) * g.h * g.w..][..g.h * g.w];
            for ky in 0..g.kh {
                let (y0, y1) = valid_range(g.oh, g.h, ky, g.stride, g.padding);
                for kx in 0..g.kw {
                    let wv = wt[((oc * g.cin + ic) * g.kh + ky) * g.kw + kx];
                    let (x0, x1) = valid_range(g.ow, g.w, kx, g.stride, g.padding);
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let row = &src[iy * g.w..(iy + 1) * g.w];
                        let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        if g.stride == 1 {
                            let off = kx as isize - g.padding as isize;
                            for ox in x0..x1 {
                                out_row[ox] += wv * row[(ox as isize + off) as usize];
                            }
                        } else {
                            for ox in x0..x1 {
                                out_row[ox] += wv * row[ox * g.stride + kx - g.padding];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec([g.batch, g.cout, g.oh, g.ow], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = conv_geometry(input.shape, weight.shape, stride, padding)?;
    if grad_out.shape != [g.batch, g.cout, g.oh, g.ow] {
        return Err(TvnetError::Shape(format!(
            "gradient shape {:?} does not match convolution output",
            grad_out.shape
        )));
    }
    let inp = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let hw = g.h * g.w;
    let ohw = g.oh * g.ow;

    let mut grad_in = vec![0.0; input.len()];
    for_each_chunk(&mut grad_in, hw, |idx, dst| {
        let n = idx / g.cin;
        let ic = idx % g.cin;
        for oc in 0..g.cout {
            let gplane = &go[(n * g.cout + oc) * ohw..][..ohw];
            for ky in 0..g.kh {
                let (y0, y1) = valid_range(g.oh, g.h, ky, g.stride, g.padding);
                for kx in 0..g.kw {
                    let wv = wt[((oc * g.cin + ic) * g.kh + ky) * g.kw + kx];
                    let (x0, x1) = valid_range(g.ow, g.w, kx, g.stride, g.padding);
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let grow = &gplane[oy * g.ow..(oy + 1) * g.ow];
                        let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
                        for ox in x0..x1 {
                            drow[ox * g.stride + kx - g.padding] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    });

    let ksize = g.cin * g.kh * g.kw;
    let mut grad_w = vec![0.0; weight.len()];
    for_each_chunk(&mut grad_w, ksize, |oc, dst| {
        for n in 0..g.batch {
            let gplane = &go[(n * g.cout + oc) * ohw..][..ohw];
            for ic in 0..g.cin {
                let src = &inp[(n * g.cin + ic) * hw..][..hw];
                for ky in 0..g.kh {
                    let (y0, y1) = valid_range(g.oh, g.h, ky, g.stride, g.padding);
                    for kx in 0..g.kw {
                        let (x0, x1) = valid_range(g.ow, g.w, kx, g.stride, g.padding);
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ky - g.padding;
                            let row = &src[iy * g.w..(iy + 1) * g.w];
                            let grow = &gplane[oy * g.ow..(oy + 1) * g.ow];
                            for ox in x0..x1 {
                                acc += grow[ox] * row[ox * g.stride + kx - g.padding];
                            }
                        }
                        dst[(ic * g.kh + ky) * g.kw + kx] += acc;
                    }
                }
            }
        }
    });

    let mut grad_b = vec![0.0; g.cout];
    for n in 0..g.batch {
        for (oc, b) in grad_b.iter_mut().enumerate() {
            *b += go[(n * g.cout + oc) * ohw..][..ohw].iter().sum::<f64>();
        }
    }

    Ok((
        Tensor::from_vec(input.shape, grad_in)?,
        Tensor::from_vec(weight.shape, grad_w)?,
        Tensor::from_vec([1, g.cout, 1, 1], grad_b)?,
    ))
}

/// Source taps for bilinear resampling along one axis, with half-pixel
/// centers and no corner alignment.
#[derive(Clone, Debug)]
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    w_lo: Vec<f64>,
    w_hi: Vec<f64>,
}

impl AxisTaps {
    fn new(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let mut taps = AxisTaps {
            lo: Vec::with_capacity(output),
            hi: Vec::with_capacity(output),
            w_lo: Vec::with_capacity(output),
            w_hi: Vec::with_capacity(output),
        };
        for d in 0..output {
            let src = (scale * (d as f64 + 0.5) - 0.5).max(0.0);
            let lo = (src as usize).min(input - 1);
            let hi = if lo < input - 1 { lo + 1 } else { lo };
            let frac = src - lo as f64;
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.w_lo.push(1.0 - frac);
            taps.w_hi.push(frac);
        }
        taps
    }
}

/// Bilinear resize of every plane to `(height, width)`. Same-size resizes
/// return an exact copy.
pub fn resize_bilinear(input: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let [n, c, h, w] = input.shape;
    if height == 0 || width == 0 || h == 0 || w == 0 {
        return Err(TvnetError::Shape(format!(
            "cannot resize {h}x{w} to {height}x{width}"
        )));
    }
    if (h, w) == (height, width) {
        return Ok(input.clone());
    }
    let ty = AxisTaps::new(h, height);
    let tx = AxisTaps::new(w, width);
    let src = input.data();
    let mut out = vec![0.0; n * c * height * width];
    for_each_chunk(&mut out, height * width, |idx, dst| {
        let plane = &src[idx * h * w..][..h * w];
        for oy in 0..height {
            let r0 = &plane[ty.lo[oy] * w..][..w];
            let r1 = &plane[ty.hi[oy] * w..][..w];
            for ox in 0..width {
                let (x0, x1) = (tx.lo[ox], tx.hi[ox]);
                let top = tx.w_lo[ox] * r0[x0] + tx.w_hi[ox] * r0[x1];
                let bottom = tx.w_lo[ox] * r1[x0] + tx.w_hi[ox] * r1[x1];
                dst[oy * width + ox] = ty.w_lo[oy] * top + ty.w_hi[oy] * bottom;
            }
        }
    });
    Tensor::from_vec([n, c, height, width], out)
}

/// Adjoint of [`resize_bilinear`]: scatters output gradients back onto
/// the `(height, width)` source grid.
pub fn resize_bilinear_backward(grad_out: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let [n, c, oh, ow] = grad_out.shape;
    if (oh, ow) == (height, width) {
        return Ok(grad_out.clone());
    }
    let ty = AxisTaps::new(height, oh);
    let tx = AxisTaps::new(width, ow);
    let go = grad_out.data();
    let mut out = vec![0.0; n * c * height * width];
    for_each_chunk(&mut out, height * width, |idx, dst| {
        let plane = &go[idx * oh * ow..][..oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = plane[oy * ow + ox];
                let top = ty.w_lo[oy] * gv;
                let bottom = ty.w_hi[oy] * gv;
                let (y0, y1) = (ty.lo[oy], ty.hi[oy]);
                let (x0, x1) = (tx.lo[ox], tx.hi[ox]);
                dst[y0 * width + x0] += tx.w_lo[ox] * top;
                dst[y0 * width + x1] += tx.w_hi[ox] * top;
                dst[y1 * width + x0] += tx.w_lo[ox] * bottom;
                dst[y1 * width + x1] += tx.w_hi[ox] * bottom;
            }
        }
    });
    Tensor::from_vec([n, c, height, width], out)
}

/// Square average pooling with zero padding counted in the divisor.
pub fn avg_pool(input: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let [n, c, h, w] = input.shape;
    let oh = conv_output_len(h, kernel, stride, padding)
        .ok_or_else(|| TvnetError::Shape(format!("pool {kernel} does not fit {h}x{w}")))?;
    let ow = conv_output_len(w, kernel, stride, padding)
        .ok_or_else(|| TvnetError::Shape(format!("pool {kernel} does not fit {h}x{w}")))?;
    let norm = 1.0 / (kernel * kernel) as f64;
    let src = input.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for_each_chunk(&mut out, oh * ow, |idx, dst| {
        let plane = &src[idx * h * w..][..h * w];
        for ky in 0..kernel {
            let (y0, y1) = valid_range(oh, h, ky, stride, padding);
            for kx in 0..kernel {
                let (x0, x1) = valid_range(ow, w, kx, stride, padding);
                for oy in y0..y1 {
                    let iy = oy * stride + ky - padding;
                    for ox in x0..x1 {
                        dst[oy * ow + ox] += plane[iy * w + ox * stride + kx - padding];
                    }
                }
            }
        }
        for v in dst.iter_mut() {
            *v *= norm;
        }
    });
    Tensor::from_vec([n, c, oh, ow], out)
}

pub fn avg_pool_backward(
    grad_out: &Tensor,
    input_shape: [usize; 4],
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [n, c, h, w] = input_shape;
    let [_, _, oh, ow] = grad_out.shape;
    let norm = 1.0 / (kernel * kernel) as f64;
    let go = grad_out.data();
    let mut out = vec![0.0; n * c * h * w];
    for_each_chunk(&mut out, h * w, |idx, dst| {
        let plane = &go[idx * oh * ow..][..oh * ow];
        for ky in 0..kernel {
            let (y0, y1) = valid_range(oh, h, ky, stride, padding);
            for kx in 0..kernel {
                let (x0, x1) = valid_range(ow, w, kx, stride, padding);
                for oy in y0..y1 {
                    let iy = oy * stride + ky - padding;
                    for ox in x0..x1 {
                        dst[iy * w + ox * stride + kx - padding] += norm * plane[oy * ow + ox];
                    }
                }
            }
        }
    });
    Tensor::from_vec(input_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(
        input: &Tensor,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Tensor {
        let [n, cin, h, w] = input.shape();
        let [cout, _, kh, kw] = weight.shape();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        for b in 0..n {
            for oc in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias.map_or(0.0, |t| t.data()[oc]);
                        for ic in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w
                                    {
                                        acc += weight.at(oc, ic, ky, kx)
                                            * input.at(b, ic, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        let i = out.index(b, oc, oy, ox);
                        out.data_mut()[i] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: [usize; 4], seed: u64) -> Tensor {
        let mut s = seed;
        Tensor::from_fn(shape, |_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn conv_matches_naive_loop() {
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 3, 7), (1, 3, 7)] {
            let x = pseudo([2, 3, 9, 11], 1);
            let w = pseudo([4, 3, k, k], 2);
            let b = pseudo([1, 4, 1, 1], 3);
            let fast = conv2d(&x, &w, Some(&b), stride, pad).unwrap();
            let slow = naive_conv(&x, &w, Some(&b), stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> == <x, conv^T(g)> and likewise for the weight.
        let x = pseudo([2, 3, 8, 7], 4);
        let w = pseudo([5, 3, 3, 3], 5);
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        let g = pseudo(y.shape(), 6);
        let (gx, gw, gb) = conv2d_backward(&x, &w, &g, 2, 1).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs_x: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        let rhs_w: f64 = w.data().iter().zip(gw.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_x).abs() < 1e-10);
        assert!((lhs - rhs_w).abs() < 1e-10);
        assert!((gb.sum() - g.sum()).abs() < 1e-10);
    }

    #[test]
    fn resize_identity_is_exact_and_constant_is_preserved() {
        let x = pseudo([1, 2, 5, 6], 7);
        assert_eq!(resize_bilinear(&x, 5, 6).unwrap(), x);
        let c = Tensor::full([1, 1, 3, 4], 0.25);
        let up = resize_bilinear(&c, 12, 7).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn resize_matches_half_pixel_reference() {
        // 2 -> 4 upsampling with half-pixel centers: [a, b] ->
        // [a, 0.75a + 0.25b, 0.25a + 0.75b, b]
        let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let y = resize_bilinear(&x, 1, 4).unwrap();
        assert_eq!(y.data(), &[1.0, 1.5, 2.5, 3.0]);
    }

    #[test]
    fn resize_backward_is_adjoint() {
        let x = pseudo([1, 2, 5, 3], 8);
        let y = resize_bilinear(&x, 11, 8).unwrap();
        let g = pseudo(y.shape(), 9);
        let gx = resize_bilinear_backward(&g, 5, 3).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn avg_pool_backward_is_adjoint() {
        let x = pseudo([1, 2, 7, 6], 10);
        let y = avg_pool(&x, 3, 2, 1).unwrap();
        let g = pseudo(y.shape(), 11);
        let gx = avg_pool_backward(&g, x.shape(), 3, 2, 1).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn parallel_and_serial_kernels_agree_bitwise() {
        let x = pseudo([2, 4, 12, 12], 12);
        let w = pseudo([6, 4, 3, 3], 13);
        set_parallel(true);
        let a = conv2d(&x, &w, None, 1, 1).unwrap();
        set_parallel(false);
        let b = conv2d(&x, &w, None, 1, 1).unwrap();
        set_parallel(true);
        assert_eq!(a, b);
    }

    #[test]
    fn kernel_too_large_is_rejected() {
        let x = Tensor::zeros([1, 1, 2, 2]);
        let w = Tensor::zeros([1, 1, 5, 5]);
        assert!(conv2d(&x, &w, None, 1, 0).is_err());
    }
}
