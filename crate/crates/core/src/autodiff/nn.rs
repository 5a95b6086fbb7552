//! Network-level tape ops: masked softmax, dropout, convolution,
//! batch norm, LSTM step and loss heads.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Logits are clipped this far below the row max before exp; size-1 action
/// spaces otherwise produce degenerate values.
const LOGIT_CLIP: f64 = 50.0;

/// One LSTM layer's parameters. Gate order in the fused matrices is
/// (input, forget, cell, output); the forget slice of the bias is
/// initialised to one.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

/// Which axes batch-norm reduces over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnAxes {
    /// (B, F): statistics per feature.
    PerFeature,
    /// (B, C, H, W): statistics per channel.
    PerChannel,
}

impl<R: Real> Tape<R> {
    /// Softmax over the last dimension with exact masking: masked entries
    /// have probability exactly zero and receive zero gradient. Fails if a
    /// row is fully masked.
    pub fn masked_softmax(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        let v = self.value(x);
        if mask.len() != v.numel() {
            return Err(Error::shape(
                "masked_softmax",
                format!("mask length {} vs {} logits", mask.len(), v.numel()),
            ));
        }
        let rows = v.rows();
        let width = v.last_dim();
        let mut out = Tensor::zeros(v.shape());
        let clip = R::from_f64(-LOGIT_CLIP);
        for r in 0..rows {
            let row = v.row(r);
            let m = &mask[r * width..(r + 1) * width];
            let mut max = None::<R>;
            for (val, &keep) in row.iter().zip(m) {
                if keep {
                    max = Some(match max {
                        Some(cur) => cur.max(*val),
                        None => *val,
                    });
                }
            }
            let max = max.ok_or_else(|| {
                Error::shape("masked_softmax", format!("row {r} is fully masked"))
            })?;
            let orow = out.row_mut(r);
            let mut z = R::ZERO;
            for ((o, &val), &keep) in orow.iter_mut().zip(row).zip(m) {
                if keep {
                    let e = (val - max).max(clip).exp();
                    *o = e;
                    z += e;
                }
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        let mask: Vec<bool> = mask.to_vec();
        let id = self.next_id();
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let p = ctx.value(id);
                let rows = p.rows();
                let width = p.last_dim();
                let mut gx = Tensor::zeros(p.shape());
                for r in 0..rows {
                    let prow = p.row(r);
                    let grow = g.row(r);
                    let m = &mask[r * width..(r + 1) * width];
                    let mut dot = R::ZERO;
                    for ((&pv, &gv), &keep) in prow.iter().zip(grow).zip(m) {
                        if keep {
                            dot += pv * gv;
                        }
                    }
                    let gxr = gx.row_mut(r);
                    for (((slot, &pv), &gv), &keep) in
                        gxr.iter_mut().zip(prow).zip(grow).zip(m)
                    {
                        if keep {
                            *slot = pv * (gv - dot);
                        }
                    }
                }
                ctx.add_grad(x, gx);
            })),
        ))
    }

    /// Softmax with nothing masked.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let mask = vec![true; self.value(x).numel()];
        self.masked_softmax(x, &mask)
    }

    /// Inverted dropout. Identity (same node) outside training mode.
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut Rng) -> NodeId {
        if !self.training() || rate <= 0.0 {
            return x;
        }
        let keep_scale = R::from_f64(1.0 / (1.0 - rate));
        let v = self.value(x);
        let keep: Vec<bool> = (0..v.numel()).map(|_| !rng.bernoulli(rate)).collect();
        let out = Tensor::from_vec(
            v.shape(),
            v.data()
                .iter()
                .zip(keep.iter())
                .map(|(&xv, &k)| if k { xv * keep_scale } else { R::ZERO })
                .collect(),
        )
        .unwrap();
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let gx = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(keep.iter())
                        .map(|(&gv, &k)| if k { gv * keep_scale } else { R::ZERO })
                        .collect(),
                )
                .unwrap();
                ctx.add_grad(x, gx);
            })),
        )
    }

    /// Valid 2-D convolution, stride 1: (B,C,H,W) * (O,C,kh,kw) -> (B,O,H',W').
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        let (bsz, c, h, wd) = match xs {
            [b, c, h, w] => (*b, *c, *h, *w),
            _ => return Err(Error::shape("conv2d", format!("input must be 4-D, got {xs:?}"))),
        };
        let (o, c2, kh, kw) = match ws {
            [o, c2, kh, kw] => (*o, *c2, *kh, *kw),
            _ => return Err(Error::shape("conv2d", format!("filters must be 4-D, got {ws:?}"))),
        };
        if c != c2 || kh > h || kw > wd {
            return Err(Error::shape(
                "conv2d",
                format!("filters {ws:?} do not fit input {xs:?}"),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [o] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {} for {o} filters", self.value(b).shape_string()),
                ));
            }
        }
        let (oh, ow) = (h - kh + 1, wd - kw + 1);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv: Option<Vec<R>> = bias.map(|b| self.value(b).data().to_vec());
        let mut out = Tensor::zeros(&[bsz, o, oh, ow]);
        {
            let od = out.data_mut();
            for b in 0..bsz {
                for oc in 0..o {
                    let b0 = bv.as_ref().map(|v| v[oc]).unwrap_or(R::ZERO);
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut acc = b0;
                            for ic in 0..c {
                                for p in 0..kh {
                                    let xrow = ((b * c + ic) * h + i + p) * wd + j;
                                    let wrow = ((oc * c + ic) * kh + p) * kw;
                                    for q in 0..kw {
                                        acc += xv[xrow + q] * wv[wrow + q];
                                    }
                                }
                            }
                            od[((b * o + oc) * oh + i) * ow + j] = acc;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let xv = ctx.value(x).data();
                let wv = ctx.value(w).data();
                let mut gx = Tensor::zeros(&[bsz, c, h, wd]);
                let mut gw = Tensor::zeros(&[o, c, kh, kw]);
                let gd = g.data();
                {
                    let gxd = gx.data_mut();
                    for b in 0..bsz {
                        for oc in 0..o {
                            for i in 0..oh {
                                for j in 0..ow {
                                    let gv = gd[((b * o + oc) * oh + i) * ow + j];
                                    if gv == R::ZERO {
                                        continue;
                                    }
                                    for ic in 0..c {
                                        for p in 0..kh {
                                            let xrow = ((b * c + ic) * h + i + p) * wd + j;
                                            let wrow = ((oc * c + ic) * kh + p) * kw;
                                            for q in 0..kw {
                                                gxd[xrow + q] += gv * wv[wrow + q];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                {
                    let gwd = gw.data_mut();
                    for b in 0..bsz {
                        for oc in 0..o {
                            for i in 0..oh {
                                for j in 0..ow {
                                    let gv = gd[((b * o + oc) * oh + i) * ow + j];
                                    if gv == R::ZERO {
                                        continue;
                                    }
                                    for ic in 0..c {
                                        for p in 0..kh {
                                            let xrow = ((b * c + ic) * h + i + p) * wd + j;
                                            let wrow = ((oc * c + ic) * kh + p) * kw;
                                            for q in 0..kw {
                                                gwd[wrow + q] += gv * xv[xrow + q];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                ctx.add_grad(x, gx);
                ctx.add_grad(w, gw);
                if let Some(b) = bias {
                    let mut gb = Tensor::zeros(&[o]);
                    for bb in 0..bsz {
                        for oc in 0..o {
                            let mut acc = R::ZERO;
                            for i in 0..oh {
                                for j in 0..ow {
                                    acc += gd[((bb * o + oc) * oh + i) * ow + j];
                                }
                            }
                            gb.data_mut()[oc] += acc;
                        }
                    }
                    ctx.add_grad(b, gb);
                }
            })),
        ))
    }

    /// Batch normalization. In training mode normalizes with batch
    /// statistics and updates the running stats in the store; in eval mode
    /// normalizes with the stored running stats.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        store: &mut ParamStore<R>,
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
        axes: BnAxes,
        momentum: f64,
        eps: f64,
    ) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let (features, group) = match (axes, xs.as_slice()) {
            (BnAxes::PerFeature, [b, f]) => (*f, *b),
            (BnAxes::PerChannel, [b, c, h, w]) => (*c, *b * *h * *w),
            _ => {
                return Err(Error::shape(
                    "batch_norm",
                    format!("layout {axes:?} does not match input {xs:?}"),
                ))
            }
        };
        for pid in [gamma, beta, running_mean, running_var] {
            if store.value(pid).numel() != features {
                return Err(Error::shape(
                    "batch_norm",
                    format!("stat parameter does not have {features} features"),
                ));
            }
        }
        if group == 0 {
            return Err(Error::shape("batch_norm", "empty batch".into()));
        }

        let xv = self.value(x).clone();
        let (mean, var) = match axes {
            BnAxes::PerFeature => {
                let b = group;
                let mut mean = vec![R::ZERO; features];
                let mut var = vec![R::ZERO; features];
                for r in 0..b {
                    for (f, &v) in xv.row(r).iter().enumerate() {
                        mean[f] += v;
                    }
                }
                let inv = R::from_f64(1.0 / b as f64);
                mean.iter_mut().for_each(|m| *m *= inv);
                for r in 0..b {
                    for (f, &v) in xv.row(r).iter().enumerate() {
                        let d = v - mean[f];
                        var[f] += d * d;
                    }
                }
                var.iter_mut().for_each(|m| *m *= inv);
                (mean, var)
            }
            BnAxes::PerChannel => {
                let [b, c, h, w] = [xs[0], xs[1], xs[2], xs[3]];
                let hw = h * w;
                let mut mean = vec![R::ZERO; c];
                let mut var = vec![R::ZERO; c];
                for bb in 0..b {
                    for cc in 0..c {
                        let base = (bb * c + cc) * hw;
                        for i in 0..hw {
                            mean[cc] += xv.data()[base + i];
                        }
                    }
                }
                let inv = R::from_f64(1.0 / (b * hw) as f64);
                mean.iter_mut().for_each(|m| *m *= inv);
                for bb in 0..b {
                    for cc in 0..c {
                        let base = (bb * c + cc) * hw;
                        for i in 0..hw {
                            let d = xv.data()[base + i] - mean[cc];
                            var[cc] += d * d;
                        }
                    }
                }
                var.iter_mut().for_each(|m| *m *= inv);
                (mean, var)
            }
        };

        let training = self.training();
        let (use_mean, use_var) = if training {
            // Update running stats with the unbiased batch variance.
            let unbias = if group > 1 {
                group as f64 / (group - 1) as f64
            } else {
                1.0
            };
            let mom = R::from_f64(momentum);
            let one_m = R::from_f64(1.0 - momentum);
            {
                let rm = store.value_mut(running_mean);
                for (r, &m) in rm.data_mut().iter_mut().zip(mean.iter()) {
                    *r = *r * one_m + m * mom;
                }
            }
            {
                let rv = store.value_mut(running_var);
                for (r, &v) in rv.data_mut().iter_mut().zip(var.iter()) {
                    *r = *r * one_m + v * R::from_f64(unbias) * mom;
                }
            }
            (mean.clone(), var.clone())
        } else {
            (
                store.value(running_mean).data().to_vec(),
                store.value(running_var).data().to_vec(),
            )
        };

        let epsr = R::from_f64(eps);
        let inv_std: Vec<R> = use_var
            .iter()
            .map(|&v| R::ONE / (v + epsr).sqrt())
            .collect();
        let gv = store.value(gamma).data().to_vec();
        let bv = store.value(beta).data().to_vec();

        let mut xhat = Tensor::zeros(&xs);
        let mut out = Tensor::zeros(&xs);
        per_feature_apply(&xs, axes, |flat, f| {
            let xh = (xv.data()[flat] - use_mean[f]) * inv_std[f];
            xhat.data_mut()[flat] = xh;
            out.data_mut()[flat] = gv[f] * xh + bv[f];
        });

        let group_r = R::from_f64(group as f64);
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let shape = ctx.value(x).shape().to_vec();
                let mut dgamma = vec![R::ZERO; inv_std.len()];
                let mut dbeta = vec![R::ZERO; inv_std.len()];
                per_feature_apply(&shape, axes, |flat, f| {
                    dgamma[f] += g.data()[flat] * xhat.data()[flat];
                    dbeta[f] += g.data()[flat];
                });
                let mut gx = Tensor::zeros(&shape);
                if training {
                    // Batch statistics participate in the forward pass.
                    per_feature_apply(&shape, axes, |flat, f| {
                        let dxhat = g.data()[flat] * gv[f];
                        let term = group_r * dxhat
                            - dbeta[f] * gv[f]
                            - xhat.data()[flat] * dgamma[f] * gv[f];
                        gx.data_mut()[flat] = inv_std[f] / group_r * term;
                    });
                } else {
                    per_feature_apply(&shape, axes, |flat, f| {
                        gx.data_mut()[flat] = g.data()[flat] * gv[f] * inv_std[f];
                    });
                }
                ctx.add_grad(x, gx);
                ctx.add_param_grad(
                    gamma,
                    &Tensor::from_vec(&[dgamma.len()], dgamma.clone()).unwrap(),
                );
                ctx.add_param_grad(
                    beta,
                    &Tensor::from_vec(&[dbeta.len()], dbeta.clone()).unwrap(),
                );
            })),
        ))
    }

    /// One step of a stacked LSTM. `x` is (B, in); `state` holds (h, c) per
    /// layer, each (B, hidden). Returns the new states and the top hidden.
    pub fn lstm_step(
        &mut self,
        store: &ParamStore<R>,
        x: NodeId,
        state: &[(NodeId, NodeId)],
        layers: &[LstmLayer],
    ) -> Result<(Vec<(NodeId, NodeId)>, NodeId)> {
        if state.len() != layers.len() || layers.is_empty() {
            return Err(Error::shape(
                "lstm_step",
                format!("{} states for {} layers", state.len(), layers.len()),
            ));
        }
        let hidden = self.value(state[0].0).last_dim();
        let mut input = x;
        let mut next = Vec::with_capacity(layers.len());
        for (layer, &(h, c)) in layers.iter().zip(state.iter()) {
            let zi = self.linear(store, input, layer.w_ih, None)?;
            let zh = self.linear(store, h, layer.w_hh, None)?;
            let z = self.add(zi, zh)?;
            let bias = self.param(store, layer.bias);
            let z = self.add_row(z, bias)?;
            let i_gate = self.slice_last(z, 0, hidden)?;
            let f_gate = self.slice_last(z, hidden, hidden)?;
            let g_gate = self.slice_last(z, 2 * hidden, hidden)?;
            let o_gate = self.slice_last(z, 3 * hidden, hidden)?;
            let i_gate = self.sigmoid(i_gate);
            let f_gate = self.sigmoid(f_gate);
            let g_gate = self.tanh_op(g_gate);
            let o_gate = self.sigmoid(o_gate);
            let fc = self.mul(f_gate, c)?;
            let ig = self.mul(i_gate, g_gate)?;
            let c_next = self.add(fc, ig)?;
            let c_act = self.tanh_op(c_next);
            let h_next = self.mul(o_gate, c_act)?;
            next.push((h_next, c_next));
            input = h_next;
        }
        let top = next.last().unwrap().0;
        Ok((next, top))
    }

    /// Mean negative log-likelihood of target classes under a softmax of
    /// the logits.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let rows = self.value(logits).rows();
        if targets.len() != rows {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {rows} rows", targets.len()),
            ));
        }
        let probs = self.softmax(logits)?;
        let logp = self.log_guarded(probs);
        let picked = self.gather_rows(logp, targets)?;
        let total = self.sum_all(picked);
        Ok(self.scale(total, R::from_f64(-1.0 / rows as f64)))
    }

    /// Mean binary cross-entropy over logits against (possibly smoothed)
    /// targets; numerically stable formulation.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &Tensor<R>) -> Result<NodeId> {
        let v = self.value(logits);
        if v.shape() != targets.shape() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{} vs targets {}", v.shape_string(), targets.shape_string()),
            ));
        }
        let n = v.numel();
        let mut total = R::ZERO;
        for (&x, &y) in v.data().iter().zip(targets.data()) {
            // max(x,0) - x*y + ln(1 + exp(-|x|))
            total += x.max(R::ZERO) - x * y + (R::ONE + (-x.abs()).exp()).ln();
        }
        let mean = total * R::from_f64(1.0 / n as f64);
        let targets = targets.clone();
        Ok(self.push(
            Tensor::scalar(mean),
            Some(Box::new(move |g, ctx| {
                let gs = g.scalar_value() * R::from_f64(1.0 / n as f64);
                let xv = ctx.value(logits);
                let gx = Tensor::from_vec(
                    xv.shape(),
                    xv.data()
                        .iter()
                        .zip(targets.data())
                        .map(|(&x, &y)| gs * (x.sigmoid() - y))
                        .collect(),
                )
                .unwrap();
                ctx.add_grad(logits, gx);
            })),
        ))
    }

    /// Policy entropy per row: -sum p ln p over unmasked entries, averaged
    /// over rows. `probs` must come from `masked_softmax` with `mask`.
    pub fn entropy_mean(&mut self, probs: NodeId, mask: &[bool]) -> Result<NodeId> {
        let logp = self.log_guarded(probs);
        let plogp = self.mul(probs, logp)?;
        // Masked entries are exactly zero in probs, so p*ln(p) is exactly
        // zero there and the masked softmax kills their gradient.
        let _ = mask;
        let rows = self.value(plogp).rows();
        let per_row = self.sum_last(plogp);
        let total = self.sum_all(per_row);
        Ok(self.scale(total, R::from_f64(-1.0 / rows as f64)))
    }
}

/// Invoke f(flat_index, feature_index) for every element of the layout.
fn per_feature_apply(shape: &[usize], axes: BnAxes, mut f: impl FnMut(usize, usize)) {
    match (axes, shape) {
        (BnAxes::PerFeature, [b, feat]) => {
            for r in 0..*b {
                for c in 0..*feat {
                    f(r * feat + c, c);
                }
            }
        }
        (BnAxes::PerChannel, [b, c, h, w]) => {
            let hw = h * w;
            for bb in 0..*b {
                for cc in 0..*c {
                    let base = (bb * c + cc) * hw;
                    for i in 0..hw {
                        f(base + i, cc);
                    }
                }
            }
        }
        _ => unreachable!("validated at op construction"),
    }
}
