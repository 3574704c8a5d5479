//! Batch normalization (per channel, over batch + spatial positions) and
//! layer normalization (per time row).

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Documented normalization constants. The variance epsilon guards
/// zero-variance channels; running statistics blend with momentum 0.1
/// (`new = 0.9 * old + 0.1 * batch`), using biased batch variance.
pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPSILON: f64 = 1e-5;

/// Running-statistics access for [`Graph::batch_norm`]. Train mode computes
/// batch statistics and folds them into the running buffers; eval mode
/// normalizes with the running values as constants.
pub enum BnMode<'a, F> {
    Train { running_mean: &'a mut [F], running_var: &'a mut [F] },
    Eval { running_mean: &'a [F], running_var: &'a [F] },
}

impl<F: Scalar> Graph<F> {
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, F>,
    ) -> Result<Var> {
        let shape = self.shape_of(x).to_vec();
        let (batch, channels, spatial) = match shape.len() {
            3 => (1, shape[0], shape[1] * shape[2]),
            4 => (shape[0], shape[1], shape[2] * shape[3]),
            r => {
                return Err(Error::Dim(format!(
                    "batch_norm: expected rank 3 or 4 input, got rank {r}"
                )))
            }
        };
        if self.shape_of(gamma) != [channels] || self.shape_of(beta) != [channels] {
            return Err(Error::Dim(format!(
                "batch_norm: gamma/beta must have shape [{channels}]"
            )));
        }
        let m = batch * spatial;
        let eps = F::from_f64(BN_EPSILON);

        // Statistics used for this forward pass, and whether they were
        // computed from the batch (which makes them functions of x).
        let train = matches!(mode, BnMode::Train { .. });
        let (mean, var) = match &mode {
            BnMode::Train { .. } => {
                let xv = self.value(x);
                let mut mean = vec![F::zero(); channels];
                let mut var = vec![F::zero(); channels];
                for c in 0..channels {
                    let mut sum = F::zero();
                    for b in 0..batch {
                        let base = (b * channels + c) * spatial;
                        for i in 0..spatial {
                            sum += xv[base + i];
                        }
                    }
                    let mu = sum / F::from_f64(m as f64);
                    let mut acc = F::zero();
                    for b in 0..batch {
                        let base = (b * channels + c) * spatial;
                        for i in 0..spatial {
                            let d = xv[base + i] - mu;
                            acc += d * d;
                        }
                    }
                    mean[c] = mu;
                    var[c] = acc / F::from_f64(m as f64);
                }
                (mean, var)
            }
            BnMode::Eval { running_mean, running_var } => {
                if running_mean.len() != channels || running_var.len() != channels {
                    return Err(Error::Dim(format!(
                        "batch_norm: running stats must have length {channels}"
                    )));
                }
                (running_mean.to_vec(), running_var.to_vec())
            }
        };

        if let BnMode::Train { running_mean, running_var } = mode {
            if running_mean.len() != channels || running_var.len() != channels {
                return Err(Error::Dim(format!(
                    "batch_norm: running stats must have length {channels}"
                )));
            }
            let mom = F::from_f64(BN_MOMENTUM);
            let keep = F::one() - mom;
            for c in 0..channels {
                running_mean[c] = keep * running_mean[c] + mom * mean[c];
                running_var[c] = keep * running_var[c] + mom * var[c];
            }
        }

        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let n = self.value(x).len();
        let mut xhat = vec![F::zero(); n];
        let mut data = vec![F::zero(); n];
        {
            let xv = self.value(x);
            let gv = self.value(gamma);
            let bv = self.value(beta);
            for b in 0..batch {
                for c in 0..channels {
                    let base = (b * channels + c) * spatial;
                    for i in 0..spatial {
                        let h = (xv[base + i] - mean[c]) * inv_std[c];
                        xhat[base + i] = h;
                        data[base + i] = gv[c] * h + bv[c];
                    }
                }
            }
        }

        let ng = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        let out = self.push_node(shape, data, ng);
        if ng {
            let mf = F::from_f64(m as f64);
            self.push_op(out, Box::new(move |ctx| {
                let up = ctx.upstream().to_vec();
                if ctx.needs_grad(beta) {
                    let slot = ctx.slot(beta);
                    for b in 0..batch {
                        for c in 0..channels {
                            let base = (b * channels + c) * spatial;
                            for i in 0..spatial {
                                slot[c] += up[base + i];
                            }
                        }
                    }
                }
                if ctx.needs_grad(gamma) {
                    let slot = ctx.slot(gamma);
                    for b in 0..batch {
                        for c in 0..channels {
                            let base = (b * channels + c) * spatial;
                            for i in 0..spatial {
                                slot[c] += up[base + i] * xhat[base + i];
                            }
                        }
                    }
                }
                if ctx.needs_grad(x) {
                    let gv = ctx.value(gamma).to_vec();
                    if train {
                        // Batch statistics depend on x:
                        // dx = gamma * inv_std
                        //      * (dy - mean(dy) - xhat * mean(dy * xhat)),
                        // means taken per channel over batch + spatial.
                        let mut sum_dy = vec![F::zero(); channels];
                        let mut sum_dy_xhat = vec![F::zero(); channels];
                        for b in 0..batch {
                            for c in 0..channels {
                                let base = (b * channels + c) * spatial;
                                for i in 0..spatial {
                                    sum_dy[c] += up[base + i];
                                    sum_dy_xhat[c] += up[base + i] * xhat[base + i];
                                }
                            }
                        }
                        let slot = ctx.slot(x);
                        for b in 0..batch {
                            for c in 0..channels {
                                let base = (b * channels + c) * spatial;
                                let k = gv[c] * inv_std[c];
                                for i in 0..spatial {
                                    let centered = up[base + i]
                                        - sum_dy[c] / mf
                                        - xhat[base + i] * sum_dy_xhat[c] / mf;
                                    slot[base + i] += k * centered;
                                }
                            }
                        }
                    } else {
                        // Running statistics are constants.
                        let slot = ctx.slot(x);
                        for b in 0..batch {
                            for c in 0..channels {
                                let base = (b * channels + c) * spatial;
                                let k = gv[c] * inv_std[c];
                                for i in 0..spatial {
                                    slot[base + i] += up[base + i] * k;
                                }
                            }
                        }
                    }
                }
            }));
        }
        Ok(out)
    }

    /// Normalize each row of `[T x Q]` to zero mean and unit variance over
    /// its Q features, then scale by gamma and shift by beta.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape_of(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::Dim(format!(
                "layer_norm: expected [T, Q] input, got {shape:?}"
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if self.shape_of(gamma) != [cols] || self.shape_of(beta) != [cols] {
            return Err(Error::Dim(format!("layer_norm: gamma/beta must have shape [{cols}]")));
        }
        let eps = F::from_f64(LN_EPSILON);
        let mf = F::from_f64(cols as f64);

        let n = rows * cols;
        let mut xhat = vec![F::zero(); n];
        let mut inv_std = vec![F::zero(); rows];
        let mut data = vec![F::zero(); n];
        {
            let xv = self.value(x);
            let gv = self.value(gamma);
            let bv = self.value(beta);
            for r in 0..rows {
                let base = r * cols;
                let mut sum = F::zero();
                for i in 0..cols {
                    sum += xv[base + i];
                }
                let mu = sum / mf;
                let mut acc = F::zero();
                for i in 0..cols {
                    let d = xv[base + i] - mu;
                    acc += d * d;
                }
                let istd = F::one() / (acc / mf + eps).sqrt();
                inv_std[r] = istd;
                for i in 0..cols {
                    let h = (xv[base + i] - mu) * istd;
                    xhat[base + i] = h;
                    data[base + i] = gv[i] * h + bv[i];
                }
            }
        }

        let ng = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        let out = self.push_node(shape, data, ng);
        if ng {
            self.push_op(out, Box::new(move |ctx| {
                let up = ctx.upstream().to_vec();
                if ctx.needs_grad(beta) {
                    let slot = ctx.slot(beta);
                    for r in 0..rows {
                        for i in 0..cols {
                            slot[i] += up[r * cols + i];
                        }
                    }
                }
                if ctx.needs_grad(gamma) {
                    let slot = ctx.slot(gamma);
                    for r in 0..rows {
                        for i in 0..cols {
                            slot[i] += up[r * cols + i] * xhat[r * cols + i];
                        }
                    }
                }
                if ctx.needs_grad(x) {
                    let gv = ctx.value(gamma).to_vec();
                    let slot = ctx.slot(x);
                    for r in 0..rows {
                        let base = r * cols;
                        let mut sum_dy = F::zero();
                        let mut sum_dy_xhat = F::zero();
                        for i in 0..cols {
                            let dyg = up[base + i] * gv[i];
                            sum_dy += dyg;
                            sum_dy_xhat += dyg * xhat[base + i];
                        }
                        for i in 0..cols {
                            let dyg = up[base + i] * gv[i];
                            slot[base + i] += inv_std[r]
                                * (dyg - sum_dy / mf - xhat[base + i] * sum_dy_xhat / mf);
                        }
                    }
                }
            }));
        }
        Ok(out)
    }
}
