//! 2-D/1-D convolution and local max pooling, stride 1 / pool 2.
//!
//! `conv2d` and `max_pool2d` accept `[C, H, W]` or batched `[B, C, H, W]`
//! input; the output rank mirrors the input rank. Kernels are
//! `[C_out, C_in, kH, kW]`, zero padding, stride fixed at 1.

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

fn split_batch(shape: &[usize], op: &str) -> Result<(usize, usize, usize, usize, bool)> {
    match shape.len() {
        3 => Ok((1, shape[0], shape[1], shape[2], false)),
        4 => Ok((shape[0], shape[1], shape[2], shape[3], true)),
        r => Err(Error::Dim(format!("{op}: expected rank 3 or 4 input, got rank {r}"))),
    }
}

impl<F: Scalar> Graph<F> {
    /// 2-D convolution: each output channel is the sum over input channels
    /// of kernel * input, plus a per-channel bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        padding: (usize, usize),
    ) -> Result<Var> {
        let (b, c_in, h, w, batched) = split_batch(self.shape_of(input), "conv2d")?;
        let ks = self.shape_of(kernels).to_vec();
        if ks.len() != 4 {
            return Err(Error::Dim(format!("conv2d: kernels must be rank 4, got {ks:?}")));
        }
        let (c_out, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c_in {
            return Err(Error::Dim(format!(
                "conv2d: kernels expect {kc} input channels, input has {c_in}"
            )));
        }
        if self.shape_of(bias) != [c_out] {
            return Err(Error::Dim(format!(
                "conv2d: bias shape {:?} vs {c_out} output channels",
                self.shape_of(bias)
            )));
        }
        let (ph, pw) = padding;
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(Error::Dim(format!(
                "conv2d: kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        let oh = h + 2 * ph - kh + 1;
        let ow = w + 2 * pw - kw + 1;

        let mut data = vec![F::zero(); b * c_out * oh * ow];
        {
            let xv = self.value(input);
            let kv = self.value(kernels);
            let bv = self.value(bias);
            for bi in 0..b {
                for co in 0..c_out {
                    let out_base = (bi * c_out + co) * oh * ow;
                    for i in 0..oh * ow {
                        data[out_base + i] = bv[co];
                    }
                    for ci in 0..c_in {
                        let in_base = (bi * c_in + ci) * h * w;
                        let k_base = (co * c_in + ci) * kh * kw;
                        for y in 0..oh {
                            for x in 0..ow {
                                let mut acc = F::zero();
                                for ky in 0..kh {
                                    let iy = (y + ky).wrapping_sub(ph);
                                    if iy >= h {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (x + kx).wrapping_sub(pw);
                                        if ix >= w {
                                            continue;
                                        }
                                        acc += kv[k_base + ky * kw + kx]
                                            * xv[in_base + iy * w + ix];
                                    }
                                }
                                data[out_base + y * ow + x] += acc;
                            }
                        }
                    }
                }
            }
        }

        let out_shape =
            if batched { vec![b, c_out, oh, ow] } else { vec![c_out, oh, ow] };
        let ng = self.needs_grad(input) || self.needs_grad(kernels) || self.needs_grad(bias);
        let out = self.push_node(out_shape, data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let up = ctx.upstream().to_vec();
                if ctx.needs_grad(bias) {
                    let slot = ctx.slot(bias);
                    for bi in 0..b {
                        for co in 0..c_out {
                            let base = (bi * c_out + co) * oh * ow;
                            for i in 0..oh * ow {
                                slot[co] += up[base + i];
                            }
                        }
                    }
                }
                if ctx.needs_grad(kernels) {
                    let xv = ctx.value(input).to_vec();
                    let slot = ctx.slot(kernels);
                    for bi in 0..b {
                        for co in 0..c_out {
                            let out_base = (bi * c_out + co) * oh * ow;
                            for ci in 0..c_in {
                                let in_base = (bi * c_in + ci) * h * w;
                                let k_base = (co * c_in + ci) * kh * kw;
                                for y in 0..oh {
                                    for x in 0..ow {
                                        let u = up[out_base + y * ow + x];
                                        for ky in 0..kh {
                                            let iy = (y + ky).wrapping_sub(ph);
                                            if iy >= h {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix = (x + kx).wrapping_sub(pw);
                                                if ix >= w {
                                                    continue;
                                                }
                                                slot[k_base + ky * kw + kx] +=
                                                    u * xv[in_base + iy * w + ix];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if ctx.needs_grad(input) {
                    let kv = ctx.value(kernels).to_vec();
                    let slot = ctx.slot(input);
                    for bi in 0..b {
                        for co in 0..c_out {
                            let out_base = (bi * c_out + co) * oh * ow;
                            for ci in 0..c_in {
                                let in_base = (bi * c_in + ci) * h * w;
                                let k_base = (co * c_in + ci) * kh * kw;
                                for y in 0..oh {
                                    for x in 0..ow {
                                        let u = up[out_base + y * ow + x];
                                        for ky in 0..kh {
                                            let iy = (y + ky).wrapping_sub(ph);
                                            if iy >= h {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix = (x + kx).wrapping_sub(pw);
                                                if ix >= w {
                                                    continue;
                                                }
                                                slot[in_base + iy * w + ix] +=
                                                    u * kv[k_base + ky * kw + kx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }));
        }
        Ok(out)
    }

    /// 1-D convolution along the time axis: input `[C_in, T]`, kernels
    /// `[C_out, C_in, k]`, no padding.
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let is = self.shape_of(input).to_vec();
        if is.len() != 2 {
            return Err(Error::Dim(format!("conv1d: input must be [C, T], got {is:?}")));
        }
        let (c_in, t) = (is[0], is[1]);
        let ks = self.shape_of(kernels).to_vec();
        if ks.len() != 3 {
            return Err(Error::Dim(format!("conv1d: kernels must be rank 3, got {ks:?}")));
        }
        let (c_out, kc, k) = (ks[0], ks[1], ks[2]);
        if kc != c_in {
            return Err(Error::Dim(format!(
                "conv1d: kernels expect {kc} input channels, input has {c_in}"
            )));
        }
        if self.shape_of(bias) != [c_out] {
            return Err(Error::Dim(format!(
                "conv1d: bias shape {:?} vs {c_out} output channels",
                self.shape_of(bias)
            )));
        }
        if k > t {
            return Err(Error::Dim(format!("conv1d: kernel size {k} exceeds length {t}")));
        }
        let ot = t - k + 1;

        let mut data = vec![F::zero(); c_out * ot];
        {
            let xv = self.value(input);
            let kv = self.value(kernels);
            let bv = self.value(bias);
            for co in 0..c_out {
                for x in 0..ot {
                    let mut acc = bv[co];
                    for ci in 0..c_in {
                        for kx in 0..k {
                            acc += kv[(co * c_in + ci) * k + kx] * xv[ci * t + x + kx];
                        }
                    }
                    data[co * ot + x] = acc;
                }
            }
        }
        let ng = self.needs_grad(input) || self.needs_grad(kernels) || self.needs_grad(bias);
        let out = self.push_node(vec![c_out, ot], data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let up = ctx.upstream().to_vec();
                if ctx.needs_grad(bias) {
                    let slot = ctx.slot(bias);
                    for co in 0..c_out {
                        for x in 0..ot {
                            slot[co] += up[co * ot + x];
                        }
                    }
                }
                if ctx.needs_grad(kernels) {
                    let xv = ctx.value(input).to_vec();
                    let slot = ctx.slot(kernels);
                    for co in 0..c_out {
                        for x in 0..ot {
                            let u = up[co * ot + x];
                            for ci in 0..c_in {
                                for kx in 0..k {
                                    slot[(co * c_in + ci) * k + kx] += u * xv[ci * t + x + kx];
                                }
                            }
                        }
                    }
                }
                if ctx.needs_grad(input) {
                    let kv = ctx.value(kernels).to_vec();
                    let slot = ctx.slot(input);
                    for co in 0..c_out {
                        for x in 0..ot {
                            let u = up[co * ot + x];
                            for ci in 0..c_in {
                                for kx in 0..k {
                                    slot[ci * t + x + kx] += u * kv[(co * c_in + ci) * k + kx];
                                }
                            }
                        }
                    }
                }
            }));
        }
        Ok(out)
    }

    /// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped;
    /// gradient flows to the first maximal cell of each window in row-major
    /// order.
    pub fn max_pool2d(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w, batched) = split_batch(self.shape_of(input), "max_pool2d")?;
        if h < 2 || w < 2 {
            return Err(Error::Dim(format!("max_pool2d: input {h}x{w} smaller than 2x2")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let plane = oh * ow;
        let mut data = vec![F::zero(); b * c * plane];
        let mut argmax = vec![0usize; b * c * plane];
        {
            let xv = self.value(input);
            for bc in 0..b * c {
                let in_base = bc * h * w;
                let out_base = bc * plane;
                for y in 0..oh {
                    for x in 0..ow {
                        let mut best_idx = in_base + (2 * y) * w + 2 * x;
                        let mut best = xv[best_idx];
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = in_base + (2 * y + dy) * w + 2 * x + dx;
                            if xv[idx] > best {
                                best = xv[idx];
                                best_idx = idx;
                            }
                        }
                        data[out_base + y * ow + x] = best;
                        argmax[out_base + y * ow + x] = best_idx;
                    }
                }
            }
        }
        let out_shape = if batched { vec![b, c, oh, ow] } else { vec![c, oh, ow] };
        let ng = self.needs_grad(input);
        let out = self.push_node(out_shape, data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let up = ctx.upstream().to_vec();
                let slot = ctx.slot(input);
                for (i, &src) in argmax.iter().enumerate() {
                    slot[src] += up[i];
                }
            }));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    /// Direct six-nested-loop convolution, the independent reference.
    fn conv2d_oracle(
        x: &[f64],
        (c_in, h, w): (usize, usize, usize),
        k: &[f64],
        (c_out, kh, kw): (usize, usize, usize),
        bias: &[f64],
        (ph, pw): (usize, usize),
    ) -> Vec<f64> {
        let oh = h + 2 * ph - kh + 1;
        let ow = w + 2 * pw - kw + 1;
        let mut out = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = y as isize + ky as isize - ph as isize;
                                let ix = xo as isize + kx as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += k[((co * c_in + ci) * kh + ky) * kw + kx]
                                    * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(co * oh + y) * ow + xo] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn unit_kernel_scales_input() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&t(vec![1, 3, 3], vec![1.0; 9]));
        let k = g.leaf(&t(vec![1, 1, 1, 1], vec![2.0]));
        let b = g.leaf(&t(vec![1], vec![0.0]));
        let y = g.conv2d(x, k, b, (0, 0)).unwrap();
        assert_eq!(g.shape_of(y), &[1, 3, 3]);
        assert!(g.value(y).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn full_window_sum_plus_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&t(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let k = g.leaf(&t(vec![1, 1, 2, 2], vec![1.0; 4]));
        let b = g.leaf(&t(vec![1], vec![1.0]));
        let y = g.conv2d(x, k, b, (0, 0)).unwrap();
        assert_eq!(g.shape_of(y), &[1, 1, 1]);
        assert_eq!(g.value(y), &[11.0]);
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let x: Vec<f64> = (0..3 * 8 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..4 * 3 * 3 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expect = conv2d_oracle(&x, (3, 8, 8), &k, (4, 3, 3), &b, (1, 1));

        let mut g = Graph::<f64>::new();
        let xv = g.leaf(&t(vec![3, 8, 8], x));
        let kv = g.leaf(&t(vec![4, 3, 3, 3], k));
        let bv = g.leaf(&t(vec![4], b));
        let y = g.conv2d(xv, kv, bv, (1, 1)).unwrap();
        assert_eq!(g.shape_of(y), &[4, 8, 8]);
        for (got, want) in g.value(y).iter().zip(&expect) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn conv2d_channel_mismatch_is_dim_error() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&t(vec![2, 4, 4], vec![0.0; 32]));
        let k = g.leaf(&t(vec![1, 3, 2, 2], vec![0.0; 12]));
        let b = g.leaf(&t(vec![1], vec![0.0]));
        assert!(matches!(g.conv2d(x, k, b, (0, 0)), Err(crate::error::Error::Dim(_))));
    }

    #[test]
    fn conv1d_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&t(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]));
        let k = g.leaf(&t(vec![1, 1, 1], vec![1.0]));
        let b = g.leaf(&t(vec![1], vec![0.0]));
        let y = g.conv1d(x, k, b).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv1d_kernel1_is_per_column_affine_map() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..2 * 10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..3 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut g = Graph::<f64>::new();
        let xv = g.leaf(&t(vec![2, 10], x.clone()));
        let kv = g.leaf(&t(vec![3, 2, 1], w.clone()));
        let bv = g.leaf(&t(vec![3], b.clone()));
        let y = g.conv1d(xv, kv, bv).unwrap();

        // Column-wise matrix multiply oracle: out[:, t] = W x[:, t] + b.
        for col in 0..10 {
            for co in 0..3 {
                let want = b[co] + w[co * 2] * x[col] + w[co * 2 + 1] * x[10 + col];
                let got = g.value(y)[co * 10 + col];
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn max_pool_basic_and_shapes() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&t(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let y = g.max_pool2d(x).unwrap();
        assert_eq!(g.shape_of(y), &[1, 1, 1]);
        assert_eq!(g.value(y), &[4.0]);

        // Floor division on odd dims.
        let big = g.leaf(&Tensor::zeros(vec![1, 936, 64]));
        let pooled = g.max_pool2d(big).unwrap();
        assert_eq!(g.shape_of(pooled), &[1, 468, 32]);

        let tiny = g.leaf(&t(vec![1, 1, 4], vec![0.0; 4]));
        assert!(g.max_pool2d(tiny).is_err());
    }

    #[test]
    fn max_pool_tie_gradient_concentrates_on_first_cell() {
        let mut g = Graph::<f64>::new();
        let mut xt = t(vec![1, 2, 4], vec![7.0; 8]);
        xt.set_requires_grad(true);
        let x = g.leaf(&xt);
        let y = g.max_pool2d(x).unwrap();
        assert!(g.value(y).iter().all(|&v| v == 7.0));
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        // One cell per window carries the whole gradient; first in row-major
        // order wins ties.
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_window_gradient_sums_to_upstream() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..2 * 6 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::<f64>::new();
        let mut xt = t(vec![2, 6, 6], data);
        xt.set_requires_grad(true);
        let x = g.leaf(&xt);
        let y = g.max_pool2d(x).unwrap();
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap();
        // Each 2x2 window contributes exactly its upstream gradient of 1,
        // concentrated on one cell.
        for c in 0..2 {
            for wy in 0..3 {
                for wx in 0..3 {
                    let mut sum = 0.0;
                    let mut nonzero = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = grad[(c * 6 + 2 * wy + dy) * 6 + 2 * wx + dx];
                            sum += v;
                            if v != 0.0 {
                                nonzero += 1;
                            }
                        }
                    }
                    assert_eq!(nonzero, 1);
                    assert!((sum - 1.0).abs() < 1e-15);
                }
            }
        }
    }
}
