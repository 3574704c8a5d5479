//! Elementwise, linear-algebra, reduction, and shape ops on the tape.

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// SELU constants (standard values).
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

/// Interpret a shape as rows x cols: rank-1 is a single row, rank-2 is
/// (rows, cols), higher ranks fold all leading dims into rows.
fn as_rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

impl<F: Scalar> Graph<F> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "add")?;
        let data: Vec<F> =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let ng = self.needs_grad(a) || self.needs_grad(b);
        let out = self.push_node(self.shape_of(a).to_vec(), data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                for v in [a, b] {
                    if ctx.needs_grad(v) {
                        let up = ctx.upstream().to_vec();
                        for (s, u) in ctx.slot(v).iter_mut().zip(up) {
                            *s += u;
                        }
                    }
                }
            }));
        }
        Ok(out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "mul")?;
        let data: Vec<F> =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let ng = self.needs_grad(a) || self.needs_grad(b);
        let out = self.push_node(self.shape_of(a).to_vec(), data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                if ctx.needs_grad(a) {
                    let contrib: Vec<F> = ctx
                        .upstream()
                        .iter()
                        .zip(ctx.value(b))
                        .map(|(&u, &y)| u * y)
                        .collect();
                    for (s, c) in ctx.slot(a).iter_mut().zip(contrib) {
                        *s += c;
                    }
                }
                if ctx.needs_grad(b) {
                    let contrib: Vec<F> = ctx
                        .upstream()
                        .iter()
                        .zip(ctx.value(a))
                        .map(|(&u, &x)| u * x)
                        .collect();
                    for (s, c) in ctx.slot(b).iter_mut().zip(contrib) {
                        *s += c;
                    }
                }
            }));
        }
        Ok(out)
    }

    /// Elementwise affine by constants: `scale * x + shift`.
    pub fn scale_add(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (sc, sh) = (F::from_f64(scale), F::from_f64(shift));
        let data: Vec<F> = self.value(x).iter().map(|&v| sc * v + sh).collect();
        let ng = self.needs_grad(x);
        let out = self.push_node(self.shape_of(x).to_vec(), data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let contrib: Vec<F> = ctx.upstream().iter().map(|&u| u * sc).collect();
                for (s, c) in ctx.slot(x).iter_mut().zip(contrib) {
                    *s += c;
                }
            }));
        }
        out
    }

    /// Elementwise reciprocal.
    pub fn recip(&mut self, x: Var) -> Var {
        let data: Vec<F> = self.value(x).iter().map(|&v| F::one() / v).collect();
        let ng = self.needs_grad(x);
        let out = self.push_node(self.shape_of(x).to_vec(), data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let contrib: Vec<F> = ctx
                    .upstream()
                    .iter()
                    .zip(ctx.value(x))
                    .map(|(&u, &v)| -u / (v * v))
                    .collect();
                for (s, c) in ctx.slot(x).iter_mut().zip(contrib) {
                    *s += c;
                }
            }));
        }
        out
    }

    /// Scale row r of `x: [R x C]` by `s[r]`.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (rows, cols) = as_rows_cols(self.shape_of(x));
        if self.shape_of(s) != [rows] {
            return Err(Error::Dim(format!(
                "row_scale: {} rows but scale shape {:?}",
                rows,
                self.shape_of(s)
            )));
        }
        let mut data = self.value(x).to_vec();
        {
            let sv = self.value(s);
            for r in 0..rows {
                for c in 0..cols {
                    data[r * cols + c] = data[r * cols + c] * sv[r];
                }
            }
        }
        let ng = self.needs_grad(x) || self.needs_grad(s);
        let out = self.push_node(self.shape_of(x).to_vec(), data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                if ctx.needs_grad(x) {
                    let mut contrib = ctx.upstream().to_vec();
                    let sv = ctx.value(s).to_vec();
                    for r in 0..rows {
                        for c in 0..cols {
                            contrib[r * cols + c] = contrib[r * cols + c] * sv[r];
                        }
                    }
                    for (sl, c) in ctx.slot(x).iter_mut().zip(contrib) {
                        *sl += c;
                    }
                }
                if ctx.needs_grad(s) {
                    let xv = ctx.value(x).to_vec();
                    let up = ctx.upstream().to_vec();
                    let slot = ctx.slot(s);
                    for r in 0..rows {
                        let mut acc = F::zero();
                        for c in 0..cols {
                            acc += up[r * cols + c] * xv[r * cols + c];
                        }
                        slot[r] += acc;
                    }
                }
            }));
        }
        Ok(out)
    }

    // ── Activations ──────────────────────────────────────────────────

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<F> =
            self.value(x).iter().map(|&v| if v > F::zero() { v } else { F::zero() }).collect();
        let ng = self.needs_grad(x);
        let out = self.push_node(self.shape_of(x).to_vec(), data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let contrib: Vec<F> = ctx
                    .upstream()
                    .iter()
                    .zip(ctx.value(x))
                    .map(|(&u, &v)| if v > F::zero() { u } else { F::zero() })
                    .collect();
                for (s, c) in ctx.slot(x).iter_mut().zip(contrib) {
                    *s += c;
                }
            }));
        }
        out
    }

    pub fn selu(&mut self, x: Var) -> Var {
        let alpha = F::from_f64(SELU_ALPHA);
        let lambda = F::from_f64(SELU_LAMBDA);
        let data: Vec<F> = self
            .value(x)
            .iter()
            .map(|&v| {
                if v > F::zero() {
                    lambda * v
                } else {
                    lambda * alpha * (v.exp() - F::one())
                }
            })
            .collect();
        let ng = self.needs_grad(x);
        let out = self.push_node(self.shape_of(x).to_vec(), data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let contrib: Vec<F> = ctx
                    .upstream()
                    .iter()
                    .zip(ctx.value(x))
                    .map(|(&u, &v)| {
                        if v > F::zero() {
                            u * lambda
                        } else {
                            u * lambda * alpha * v.exp()
                        }
                    })
                    .collect();
                for (s, c) in ctx.slot(x).iter_mut().zip(contrib) {
                    *s += c;
                }
            }));
        }
        out
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data: Vec<F> =
            self.value(x).iter().map(|&v| F::one() / (F::one() + (-v).exp())).collect();
        let ng = self.needs_grad(x);
        let out = self.push_node(self.shape_of(x).to_vec(), data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let contrib: Vec<F> = ctx
                    .upstream()
                    .iter()
                    .zip(ctx.value(out))
                    .map(|(&u, &y)| u * y * (F::one() - y))
                    .collect();
                for (s, c) in ctx.slot(x).iter_mut().zip(contrib) {
                    *s += c;
                }
            }));
        }
        out
    }

    pub fn tanh_act(&mut self, x: Var) -> Var {
        let data: Vec<F> = self.value(x).iter().map(|&v| v.tanh()).collect();
        let ng = self.needs_grad(x);
        let out = self.push_node(self.shape_of(x).to_vec(), data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let contrib: Vec<F> = ctx
                    .upstream()
                    .iter()
                    .zip(ctx.value(out))
                    .map(|(&u, &y)| u * (F::one() - y * y))
                    .collect();
                for (s, c) in ctx.slot(x).iter_mut().zip(contrib) {
                    *s += c;
                }
            }));
        }
        out
    }

    // ── Softmax family ───────────────────────────────────────────────

    /// Softmax along the last axis (per row), computed with max-subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (rows, cols) = as_rows_cols(self.shape_of(x));
        let mut data = vec![F::zero(); rows * cols];
        {
            let xv = self.value(x);
            for r in 0..rows {
                let row = &xv[r * cols..(r + 1) * cols];
                let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
                let mut sum = F::zero();
                for c in 0..cols {
                    let e = (row[c] - m).exp();
                    data[r * cols + c] = e;
                    sum += e;
                }
                for c in 0..cols {
                    data[r * cols + c] = data[r * cols + c] / sum;
                }
            }
        }
        let ng = self.needs_grad(x);
        let out = self.push_node(self.shape_of(x).to_vec(), data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let y = ctx.value(out).to_vec();
                let up = ctx.upstream().to_vec();
                let slot = ctx.slot(x);
                for r in 0..rows {
                    let mut dot = F::zero();
                    for c in 0..cols {
                        dot += up[r * cols + c] * y[r * cols + c];
                    }
                    for c in 0..cols {
                        let i = r * cols + c;
                        slot[i] += y[i] * (up[i] - dot);
                    }
                }
            }));
        }
        out
    }

    /// Log-softmax along the last axis, max-subtracted for stability.
    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let (rows, cols) = as_rows_cols(self.shape_of(x));
        let mut data = vec![F::zero(); rows * cols];
        {
            let xv = self.value(x);
            for r in 0..rows {
                let row = &xv[r * cols..(r + 1) * cols];
                let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
                let mut sum = F::zero();
                for c in 0..cols {
                    sum += (row[c] - m).exp();
                }
                let lse = m + sum.ln();
                for c in 0..cols {
                    data[r * cols + c] = row[c] - lse;
                }
            }
        }
        let ng = self.needs_grad(x);
        let out = self.push_node(self.shape_of(x).to_vec(), data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let y = ctx.value(out).to_vec();
                let up = ctx.upstream().to_vec();
                let slot = ctx.slot(x);
                for r in 0..rows {
                    let mut sum_up = F::zero();
                    for c in 0..cols {
                        sum_up += up[r * cols + c];
                    }
                    for c in 0..cols {
                        let i = r * cols + c;
                        slot[i] += up[i] - y[i].exp() * sum_up;
                    }
                }
            }));
        }
        out
    }

    /// Softmax along `axis` (0 or 1) of a rank-1 or rank-2 tensor.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.along_axis(x, axis, Self::softmax_rows)
    }

    /// Log-softmax along `axis` (0 or 1) of a rank-1 or rank-2 tensor.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.along_axis(x, axis, Self::log_softmax_rows)
    }

    fn along_axis(
        &mut self,
        x: Var,
        axis: usize,
        rows_op: fn(&mut Self, Var) -> Var,
    ) -> Result<Var> {
        let rank = self.shape_of(x).len();
        match (rank, axis) {
            (1, 0) => Ok(rows_op(self, x)),
            (2, 1) => Ok(rows_op(self, x)),
            (2, 0) => {
                let t = self.transpose2d(x)?;
                let y = rows_op(self, t);
                self.transpose2d(y)
            }
            _ => Err(Error::Dim(format!(
                "axis {axis} invalid for rank-{rank} tensor"
            ))),
        }
    }

    // ── Linear algebra ───────────────────────────────────────────────

    /// `[m x k] . [k x n] -> [m x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a).to_vec(), self.shape_of(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dim(format!("matmul: {sa:?} . {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![F::zero(); m * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    for j in 0..n {
                        data[i * n + j] += aip * bv[p * n + j];
                    }
                }
            }
        }
        let ng = self.needs_grad(a) || self.needs_grad(b);
        let out = self.push_node(vec![m, n], data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                if ctx.needs_grad(a) {
                    // dA = dC . B^T
                    let mut contrib = vec![F::zero(); m * k];
                    let bv = ctx.value(b).to_vec();
                    for i in 0..m {
                        for j in 0..n {
                            let u = ctx.upstream()[i * n + j];
                            for p in 0..k {
                                contrib[i * k + p] += u * bv[p * n + j];
                            }
                        }
                    }
                    for (s, c) in ctx.slot(a).iter_mut().zip(contrib) {
                        *s += c;
                    }
                }
                if ctx.needs_grad(b) {
                    // dB = A^T . dC
                    let mut contrib = vec![F::zero(); k * n];
                    let av = ctx.value(a).to_vec();
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            for j in 0..n {
                                contrib[p * n + j] += aip * ctx.upstream()[i * n + j];
                            }
                        }
                    }
                    for (s, c) in ctx.slot(b).iter_mut().zip(contrib) {
                        *s += c;
                    }
                }
            }));
        }
        Ok(out)
    }

    /// `[m x k] . [k] -> [m]`.
    pub fn matvec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (sa, sv) = (self.shape_of(a).to_vec(), self.shape_of(v).to_vec());
        if sa.len() != 2 || sv.len() != 1 || sa[1] != sv[0] {
            return Err(Error::Dim(format!("matvec: {sa:?} . {sv:?}")));
        }
        let (m, k) = (sa[0], sa[1]);
        let mut data = vec![F::zero(); m];
        {
            let (av, vv) = (self.value(a), self.value(v));
            for i in 0..m {
                let mut acc = F::zero();
                for p in 0..k {
                    acc += av[i * k + p] * vv[p];
                }
                data[i] = acc;
            }
        }
        let ng = self.needs_grad(a) || self.needs_grad(v);
        let out = self.push_node(vec![m], data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                if ctx.needs_grad(a) {
                    let vv = ctx.value(v).to_vec();
                    let up = ctx.upstream().to_vec();
                    let slot = ctx.slot(a);
                    for i in 0..m {
                        for p in 0..k {
                            slot[i * k + p] += up[i] * vv[p];
                        }
                    }
                }
                if ctx.needs_grad(v) {
                    let av = ctx.value(a).to_vec();
                    let up = ctx.upstream().to_vec();
                    let slot = ctx.slot(v);
                    for i in 0..m {
                        for p in 0..k {
                            slot[p] += av[i * k + p] * up[i];
                        }
                    }
                }
            }));
        }
        Ok(out)
    }

    /// `[R x C] + [C]`, bias added to every row.
    pub fn add_bias_rows(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = as_rows_cols(self.shape_of(x));
        if self.shape_of(bias) != [cols] {
            return Err(Error::Dim(format!(
                "add_bias_rows: {cols} cols but bias shape {:?}",
                self.shape_of(bias)
            )));
        }
        let mut data = self.value(x).to_vec();
        {
            let bv = self.value(bias);
            for r in 0..rows {
                for c in 0..cols {
                    data[r * cols + c] += bv[c];
                }
            }
        }
        let ng = self.needs_grad(x) || self.needs_grad(bias);
        let out = self.push_node(self.shape_of(x).to_vec(), data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                if ctx.needs_grad(x) {
                    let up = ctx.upstream().to_vec();
                    for (s, u) in ctx.slot(x).iter_mut().zip(up) {
                        *s += u;
                    }
                }
                if ctx.needs_grad(bias) {
                    let up = ctx.upstream().to_vec();
                    let slot = ctx.slot(bias);
                    for r in 0..rows {
                        for c in 0..cols {
                            slot[c] += up[r * cols + c];
                        }
                    }
                }
            }));
        }
        Ok(out)
    }

    // ── Reductions ───────────────────────────────────────────────────

    /// Sum of all elements, returned as a `[1]` scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().fold(F::zero(), |a, &b| a + b);
        let ng = self.needs_grad(x);
        let out = self.push_node(vec![1], vec![total], ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let u = ctx.upstream()[0];
                for s in ctx.slot(x).iter_mut() {
                    *s += u;
                }
            }));
        }
        out
    }

    /// Row sums: `[R x C] -> [R]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (rows, cols) = as_rows_cols(self.shape_of(x));
        let mut data = vec![F::zero(); rows];
        {
            let xv = self.value(x);
            for r in 0..rows {
                let mut acc = F::zero();
                for c in 0..cols {
                    acc += xv[r * cols + c];
                }
                data[r] = acc;
            }
        }
        let ng = self.needs_grad(x);
        let out = self.push_node(vec![rows], data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let up = ctx.upstream().to_vec();
                let slot = ctx.slot(x);
                for r in 0..rows {
                    for c in 0..cols {
                        slot[r * cols + c] += up[r];
                    }
                }
            }));
        }
        out
    }

    /// Row maxima: `[R x C] -> [R]`. Gradient flows to the first maximal
    /// element of each row (row-major tie rule).
    pub fn max_rows(&mut self, x: Var) -> Var {
        let (rows, cols) = as_rows_cols(self.shape_of(x));
        let mut data = vec![F::zero(); rows];
        let mut argmax = vec![0usize; rows];
        {
            let xv = self.value(x);
            for r in 0..rows {
                let mut best = xv[r * cols];
                let mut best_c = 0;
                for c in 1..cols {
                    if xv[r * cols + c] > best {
                        best = xv[r * cols + c];
                        best_c = c;
                    }
                }
                data[r] = best;
                argmax[r] = best_c;
            }
        }
        let ng = self.needs_grad(x);
        let out = self.push_node(vec![rows], data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let up = ctx.upstream().to_vec();
                let slot = ctx.slot(x);
                for r in 0..rows {
                    slot[r * cols + argmax[r]] += up[r];
                }
            }));
        }
        out
    }

    // ── Shape ops ────────────────────────────────────────────────────

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if crate::tensor::numel(&shape) != self.value(x).len() {
            return Err(Error::Dim(format!(
                "reshape: {} elements into {shape:?}",
                self.value(x).len()
            )));
        }
        let data = self.value(x).to_vec();
        let ng = self.needs_grad(x);
        let out = self.push_node(shape, data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let up = ctx.upstream().to_vec();
                for (s, u) in ctx.slot(x).iter_mut().zip(up) {
                    *s += u;
                }
            }));
        }
        Ok(out)
    }

    pub fn flatten(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        self.reshape(x, vec![n]).expect("flatten preserves numel")
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape_of(x).to_vec();
        if s.len() != 2 {
            return Err(Error::Dim(format!("transpose2d on rank-{} tensor", s.len())));
        }
        let (r, c) = (s[0], s[1]);
        let xv = self.value(x);
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = xv[i * c + j];
            }
        }
        let ng = self.needs_grad(x);
        let out = self.push_node(vec![c, r], data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let up = ctx.upstream().to_vec();
                let slot = ctx.slot(x);
                for i in 0..r {
                    for j in 0..c {
                        slot[i * c + j] += up[j * r + i];
                    }
                }
            }));
        }
        Ok(out)
    }

    /// Extract row `i` of `[R x C]` as `[C]`.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let (rows, cols) = as_rows_cols(self.shape_of(x));
        if i >= rows {
            return Err(Error::Dim(format!("row {i} out of {rows}")));
        }
        let data = self.value(x)[i * cols..(i + 1) * cols].to_vec();
        let ng = self.needs_grad(x);
        let out = self.push_node(vec![cols], data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let up = ctx.upstream().to_vec();
                let slot = ctx.slot(x);
                for c in 0..cols {
                    slot[i * cols + c] += up[c];
                }
            }));
        }
        Ok(out)
    }

    /// Stack equal-length rank-1 vars into `[N x C]`.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Dim("stack_rows: empty input".into()));
        }
        let cols = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if self.value(r).len() != cols {
                return Err(Error::Dim("stack_rows: ragged rows".into()));
            }
            data.extend_from_slice(self.value(r));
        }
        let ng = rows.iter().any(|&r| self.needs_grad(r));
        let out = self.push_node(vec![rows.len(), cols], data, ng);
        if ng {
            let rows = rows.to_vec();
            self.push_op(out, Box::new(move |ctx| {
                for (i, &r) in rows.iter().enumerate() {
                    if ctx.needs_grad(r) {
                        let up = ctx.upstream()[i * cols..(i + 1) * cols].to_vec();
                        for (s, u) in ctx.slot(r).iter_mut().zip(up) {
                            *s += u;
                        }
                    }
                }
            }));
        }
        Ok(out)
    }

    // ── Loss ─────────────────────────────────────────────────────────

    /// Mean negative log-likelihood: `-(1/B) sum_i log_probs[i, labels[i]]`.
    pub fn gather_nll(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape_of(log_probs).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::Dim(format!(
                "gather_nll: log-probs {shape:?} vs {} labels",
                labels.len()
            )));
        }
        let classes = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} out of range 0..{classes}")));
        }
        let batch = labels.len();
        let inv_b = F::from_f64(1.0 / batch as f64);
        let mut total = F::zero();
        {
            let lp = self.value(log_probs);
            for (i, &y) in labels.iter().enumerate() {
                total -= lp[i * classes + y];
            }
        }
        let ng = self.needs_grad(log_probs);
        let out = self.push_node(vec![1], vec![total * inv_b], ng);
        if ng {
            let labels = labels.to_vec();
            self.push_op(out, Box::new(move |ctx| {
                let u = ctx.upstream()[0];
                let slot = ctx.slot(log_probs);
                for (i, &y) in labels.iter().enumerate() {
                    slot[i * classes + y] -= u * inv_b;
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

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn activation_definitional_points() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&t(vec![3], vec![-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r), &[0.0, 0.0, 2.0]);
        let s = g.sigmoid(x);
        assert!((g.value(s)[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn selu_fixed_points() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&t(vec![2], vec![0.0, 1.0]));
        let y = g.selu(x);
        assert_eq!(g.value(y)[0], 0.0);
        assert!((g.value(y)[1] - SELU_LAMBDA).abs() < 1e-15);
    }

    #[test]
    fn softmax_uniform_and_normalized() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&t(vec![3], vec![0.0, 0.0, 0.0]));
        let y = g.softmax_rows(x);
        for &v in g.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x2 = g.leaf(&t(vec![2, 3], vec![1.0, -2.0, 0.5, 10.0, 10.0, 9.0]));
        let y2 = g.softmax_rows(x2);
        for r in 0..2 {
            let sum: f64 = g.value(y2)[r * 3..(r + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&t(vec![4], vec![0.3, -1.2, 5.0, 2.2]));
        let soft = g.softmax_rows(x);
        let logsoft = g.log_softmax_rows(x);
        for (a, b) in g.value(soft).iter().zip(g.value(logsoft)) {
            assert!((a.ln() - b).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_large_logits_stable() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&t(vec![2], vec![1000.0, 999.0]));
        let y = g.softmax_rows(x);
        assert!(g.value(y).iter().all(|v| v.is_finite()));
        let sum: f64 = g.value(y).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_matmul_returns_input() {
        let mut g = Graph::<f64>::new();
        let eye = g.leaf(&t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let x = g.leaf(&t(vec![2, 2], vec![3.0, -1.0, 0.5, 7.0]));
        let y = g.matmul(eye, x).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn matmul_shape_mismatch_is_dim_error() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(&t(vec![2, 3], vec![0.0; 6]));
        let b = g.leaf(&t(vec![2, 2], vec![0.0; 4]));
        assert!(matches!(g.matmul(a, b), Err(crate::error::Error::Dim(_))));
    }

    #[test]
    fn sum_of_softmax_is_one() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&t(vec![5], vec![0.1, 0.9, -3.0, 2.0, 0.0]));
        let s = g.softmax_rows(x);
        let total = g.sum_all(s);
        assert!((g.value(total)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut g = Graph::<f64>::new();
        let mut xt = t(vec![3], vec![1.0, 2.0, 3.0]);
        xt.set_requires_grad(true);
        let x = g.leaf(&xt);
        let loss = g.sum_all(x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic() {
        let mut g = Graph::<f64>::new();
        let mut xt = t(vec![2], vec![1.0, 2.0]);
        xt.set_requires_grad(true);
        let x = g.leaf(&xt);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_all(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let mut xt = t(vec![2], vec![1.0, 2.0]);
        xt.set_requires_grad(true);
        let x = g.leaf(&xt);
        assert!(matches!(g.backward(x), Err(crate::error::Error::Contract(_))));
    }

    #[test]
    fn max_rows_tie_goes_to_first() {
        let mut g = Graph::<f64>::new();
        let mut xt = t(vec![1, 4], vec![5.0, 5.0, 5.0, 5.0]);
        xt.set_requires_grad(true);
        let x = g.leaf(&xt);
        let m = g.max_rows(x);
        let loss = g.sum_all(m);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn nll_of_perfect_and_uniform_predictions() {
        let mut g = Graph::<f64>::new();
        // log-prob 0 at the true class.
        let perfect = g.leaf(&t(vec![1, 3], vec![0.0, -50.0, -50.0]));
        let loss = g.gather_nll(perfect, &[0]).unwrap();
        assert!(g.value(loss)[0].abs() < 1e-12);

        let third = (1.0f64 / 3.0).ln();
        let uniform = g.leaf(&t(vec![2, 3], vec![third; 6]));
        let loss = g.gather_nll(uniform, &[0, 2]).unwrap();
        assert!((g.value(loss)[0] - 3.0f64.ln()) < 1e-12);
    }

    #[test]
    fn nll_rejects_out_of_range_label() {
        let mut g = Graph::<f64>::new();
        let lp = g.leaf(&t(vec![1, 3], vec![0.0; 3]));
        assert!(matches!(g.gather_nll(lp, &[3]), Err(crate::error::Error::Input(_))));
    }

    #[test]
    fn forward_is_bitwise_deterministic_for_same_seed() {
        use rand::{Rng, SeedableRng};
        let run = || {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
            let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut g = Graph::<f64>::new();
            let x = g.leaf(&t(vec![3, 4], data));
            let s = g.softmax_rows(x);
            let h = g.tanh_act(s);
            let out = g.sum_all(h);
            g.value(out)[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
