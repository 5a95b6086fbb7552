//! Elementwise and linear-algebra tape ops.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use super::{NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

impl<R: Real> Tape<R> {
    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!(
                    "{} vs {}",
                    self.value(a).shape_string(),
                    self.value(b).shape_string()
                ),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let out = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &y)| x + y)
                .collect(),
        )?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                ctx.add_grad(a, g.clone());
                ctx.add_grad(b, g.clone());
            })),
        ))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let out = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &y)| x - y)
                .collect(),
        )?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                ctx.add_grad(a, g.clone());
                ctx.add_grad(b, g.map(|x| -x));
            })),
        ))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let out = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &y)| x * y)
                .collect(),
        )?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let da = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(ctx.value(b).data())
                        .map(|(&gv, &bv)| gv * bv)
                        .collect(),
                )
                .unwrap();
                let db = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(ctx.value(a).data())
                        .map(|(&gv, &av)| gv * av)
                        .collect(),
                )
                .unwrap();
                ctx.add_grad(a, da);
                ctx.add_grad(b, db);
            })),
        ))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| -x);
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                ctx.add_grad(a, g.map(|x| -x));
            })),
        )
    }

    pub fn scale(&mut self, a: NodeId, c: R) -> NodeId {
        let out = self.value(a).map(|x| x * c);
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                ctx.add_grad(a, g.map(|x| x * c));
            })),
        )
    }

    pub fn add_scalar(&mut self, a: NodeId, c: R) -> NodeId {
        let out = self.value(a).map(|x| x + c);
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                ctx.add_grad(a, g.clone());
            })),
        )
    }

    /// Broadcast-add a vector along the last dimension: (rows, n) + (n,).
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let n = self.value(x).last_dim();
        if self.value(bias).shape() != [n] {
            return Err(Error::shape(
                "add_row",
                format!(
                    "bias {} does not match rows of {}",
                    self.value(bias).shape_string(),
                    self.value(x).shape_string()
                ),
            ));
        }
        let bv = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.iter()) {
                *o += *b;
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                ctx.add_grad(x, g.clone());
                let n = g.last_dim();
                let mut db = Tensor::zeros(&[n]);
                for r in 0..g.rows() {
                    for (s, gv) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *s += *gv;
                    }
                }
                ctx.add_grad(bias, db);
            })),
        ))
    }

    /// (M, K) @ (K, N) -> (M, N)
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (asym, bsym) = (self.value(a).shape(), self.value(b).shape());
        let (m, k, k2, n) = match (asym, bsym) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            _ => {
                return Err(Error::shape(
                    "matmul",
                    format!("{asym:?} @ {bsym:?} are not 2-D"),
                ))
            }
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims differ: {asym:?} @ {bsym:?}"),
            ));
        }
        let out = mat_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                // dA = G @ B^T, dB = A^T @ G
                let da = mat_nt(g.data(), ctx.value(b).data(), m, n, k);
                let db = mat_tn(ctx.value(a).data(), g.data(), m, k, n);
                ctx.add_grad(a, Tensor::from_vec(&[m, k], da).unwrap());
                ctx.add_grad(b, Tensor::from_vec(&[k, n], db).unwrap());
            })),
        ))
    }

    /// (M, K) @ (N, K)^T -> (M, N). Rows of `b` are dotted with rows of `a`;
    /// this is the natural layout for weight matrices and embedding tables.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (asym, bsym) = (self.value(a).shape(), self.value(b).shape());
        let (m, k, n, k2) = match (asym, bsym) {
            ([m, k], [n, k2]) => (*m, *k, *n, *k2),
            _ => {
                return Err(Error::shape(
                    "matmul_nt",
                    format!("{asym:?} @ {bsym:?}^T are not 2-D"),
                ))
            }
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("inner dims differ: {asym:?} @ {bsym:?}^T"),
            ));
        }
        let out = mat_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                // dA = G @ B, dB = G^T @ A
                let da = mat_nn(g.data(), ctx.value(b).data(), m, n, k);
                let db = mat_tn(g.data(), ctx.value(a).data(), m, n, k);
                ctx.add_grad(a, Tensor::from_vec(&[m, k], da).unwrap());
                ctx.add_grad(b, Tensor::from_vec(&[n, k], db).unwrap());
            })),
        ))
    }

    /// Linear layer y = x @ W^T (+ b) with store-backed weights.
    pub fn linear(
        &mut self,
        store: &ParamStore<R>,
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
    ) -> Result<NodeId> {
        let wn = self.param(store, w);
        let y = self.matmul_nt(x, wn)?;
        match b {
            Some(b) => {
                let bn = self.param(store, b);
                self.add_row(y, bn)
            }
            None => Ok(y),
        }
    }

    /// Gather rows of an embedding table parameter: (V, d)[indices] -> (n, d).
    /// Gradients accumulate row-sparsely into the table.
    pub fn lookup(&mut self, store: &ParamStore<R>, table: ParamId, indices: &[usize]) -> NodeId {
        let tv = store.value(table);
        let d = tv.last_dim();
        let mut out = Tensor::zeros(&[indices.len(), d]);
        for (slot, &idx) in indices.iter().enumerate() {
            out.row_mut(slot).copy_from_slice(tv.row(idx));
        }
        let owned: Vec<usize> = indices.to_vec();
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                ctx.add_param_grad_rows(table, &owned, g);
            })),
        )
    }

    /// Concatenate along the last dimension. All parts must agree on the
    /// leading dimensions.
    pub fn concat_last(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_last", "no inputs".into()));
        }
        let rows = self.value(parts[0]).rows();
        let lead = self.value(parts[0]).shape()[..self.value(parts[0]).shape().len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows || v.shape()[..v.shape().len() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat_last",
                    format!("incompatible part {}", v.shape_string()),
                ));
            }
            widths.push(v.last_dim());
        }
        let total: usize = widths.iter().sum();
        let mut shape = lead.clone();
        shape.push(total);
        let mut out = Tensor::zeros(&shape);
        for r in 0..rows {
            let dst = out.row_mut(r);
            let mut off = 0;
            for (&p, &w) in parts.iter().zip(widths.iter()) {
                dst[off..off + w].copy_from_slice(self.value(p).row(r));
                off += w;
            }
        }
        let parts: Vec<NodeId> = parts.to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let rows = g.rows();
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(widths.iter()) {
                    let mut gp = Tensor::zeros(ctx.value(p).shape());
                    for r in 0..rows {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    off += w;
                    ctx.add_grad(p, gp);
                }
            })),
        ))
    }

    /// Slice a range of the last dimension.
    pub fn slice_last(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        let width = v.last_dim();
        if start + len > width {
            return Err(Error::shape(
                "slice_last",
                format!("[{start}..{}] out of width {width}", start + len),
            ));
        }
        let rows = v.rows();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let mut out = Tensor::zeros(&shape);
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(&v.row(r)[start..start + len]);
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let mut gx = Tensor::zeros(ctx.value(x).shape());
                for r in 0..g.rows() {
                    gx.row_mut(r)[start..start + len].copy_from_slice(g.row(r));
                }
                ctx.add_grad(x, gx);
            })),
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).clone().reshaped(shape)?;
        let orig = self.value(x).shape().to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                ctx.add_grad(x, g.clone().reshaped(&orig).unwrap());
            })),
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(R::ZERO));
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let gx = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(ctx.value(x).data())
                        .map(|(&gv, &xv)| if xv > R::ZERO { gv } else { R::ZERO })
                        .collect(),
                )
                .unwrap();
                ctx.add_grad(x, gx);
            })),
        )
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.sigmoid());
        let id = self.next_id();
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let y = ctx.value(id);
                let gx = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * yv * (R::ONE - yv))
                        .collect(),
                )
                .unwrap();
                ctx.add_grad(x, gx);
            })),
        )
    }

    pub fn tanh_op(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.tanh());
        let id = self.next_id();
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let y = ctx.value(id);
                let gx = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * (R::ONE - yv * yv))
                        .collect(),
                )
                .unwrap();
                ctx.add_grad(x, gx);
            })),
        )
    }

    /// ln(max(x, tiny)): finite for any nonnegative input.
    pub fn log_guarded(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(R::tiny()).ln());
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let gx = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(ctx.value(x).data())
                        .map(|(&gv, &xv)| gv / xv.max(R::tiny()))
                        .collect(),
                )
                .unwrap();
                ctx.add_grad(x, gx);
            })),
        )
    }

    /// sqrt(max(x, tiny)); the guard keeps the gradient finite at zero.
    pub fn sqrt_guarded(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(R::tiny()).sqrt());
        let id = self.next_id();
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let y = ctx.value(id);
                let half = R::from_f64(0.5);
                let gx = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * half / yv.max(R::tiny()))
                        .collect(),
                )
                .unwrap();
                ctx.add_grad(x, gx);
            })),
        )
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v * v);
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let two = R::from_f64(2.0);
                let gx = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(ctx.value(x).data())
                        .map(|(&gv, &xv)| gv * two * xv)
                        .collect(),
                )
                .unwrap();
                ctx.add_grad(x, gx);
            })),
        )
    }

    pub fn abs_op(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.abs());
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let gx = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(ctx.value(x).data())
                        .map(|(&gv, &xv)| {
                            if xv > R::ZERO {
                                gv
                            } else if xv < R::ZERO {
                                -gv
                            } else {
                                R::ZERO
                            }
                        })
                        .collect(),
                )
                .unwrap();
                ctx.add_grad(x, gx);
            })),
        )
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: R = self.value(x).data().iter().copied().sum();
        self.push(
            Tensor::scalar(s),
            Some(Box::new(move |g, ctx| {
                let gv = g.scalar_value();
                ctx.add_grad(x, Tensor::full(ctx.value(x).shape(), gv));
            })),
        )
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel();
        let s = self.sum_all(x);
        self.scale(s, R::from_f64(1.0 / n as f64))
    }

    /// Sum over the last dimension: (..., N) -> (...).
    pub fn sum_last(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let rows = v.rows();
        let shape: Vec<usize> = if v.shape().len() <= 1 {
            alloc::vec![1]
        } else {
            v.shape()[..v.shape().len() - 1].to_vec()
        };
        let mut out = Tensor::zeros(&shape);
        for r in 0..rows {
            out.data_mut()[r] = v.row(r).iter().copied().sum();
        }
        self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let xv = ctx.value(x);
                let mut gx = Tensor::zeros(xv.shape());
                for r in 0..xv.rows() {
                    let gr = g.data()[r];
                    for slot in gx.row_mut(r) {
                        *slot = gr;
                    }
                }
                ctx.add_grad(x, gx);
            })),
        )
    }

    /// Pick one entry per row: (B, N)[b, idx[b]] -> (B,).
    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let v = self.value(x);
        let rows = v.rows();
        if indices.len() != rows {
            return Err(Error::shape(
                "gather_rows",
                format!("{} indices for {rows} rows", indices.len()),
            ));
        }
        let width = v.last_dim();
        for (&i, r) in indices.iter().zip(0..) {
            if i >= width {
                return Err(Error::shape(
                    "gather_rows",
                    format!("index {i} out of width {width} at row {r}"),
                ));
            }
        }
        let data: Vec<R> = indices
            .iter()
            .enumerate()
            .map(|(r, &i)| v.row(r)[i])
            .collect();
        let owned = indices.to_vec();
        Ok(self.push(
            Tensor::from_vec(&[rows], data)?,
            Some(Box::new(move |g, ctx| {
                let mut gx = Tensor::zeros(ctx.value(x).shape());
                for (r, &i) in owned.iter().enumerate() {
                    gx.row_mut(r)[i] += g.data()[r];
                }
                ctx.add_grad(x, gx);
            })),
        ))
    }

    /// Stack equal-shape vectors (d,) into (n, d).
    pub fn stack_rows(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::shape("stack_rows", "no inputs".into()));
        }
        let d = self.value(xs[0]).numel();
        for &x in xs {
            if self.value(x).numel() != d {
                return Err(Error::shape(
                    "stack_rows",
                    format!("ragged input {}", self.value(x).shape_string()),
                ));
            }
        }
        let mut out = Tensor::zeros(&[xs.len(), d]);
        for (r, &x) in xs.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.value(x).data());
        }
        let xs: Vec<NodeId> = xs.to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                for (r, &x) in xs.iter().enumerate() {
                    let gp = Tensor::from_vec(ctx.value(x).shape(), g.row(r).to_vec()).unwrap();
                    ctx.add_grad(x, gp);
                }
            })),
        ))
    }

    /// Batched row scores: (B, N, K) x (B, K) -> (B, N), dotting every
    /// action row with its example's state vector.
    pub fn score_rows(&mut self, actions: NodeId, state: NodeId) -> Result<NodeId> {
        let (ash, ssh) = (self.value(actions).shape(), self.value(state).shape());
        let (bsz, n, k) = match ash {
            [b, n, k] => (*b, *n, *k),
            _ => {
                return Err(Error::shape(
                    "score_rows",
                    format!("actions must be 3-D, got {ash:?}"),
                ))
            }
        };
        if ssh != [bsz, k] {
            return Err(Error::shape(
                "score_rows",
                format!("state {ssh:?} does not match actions {ash:?}"),
            ));
        }
        let av = self.value(actions).data();
        let sv = self.value(state).data();
        let mut out = Tensor::zeros(&[bsz, n]);
        for b in 0..bsz {
            for i in 0..n {
                let base = (b * n + i) * k;
                let mut acc = R::ZERO;
                for kk in 0..k {
                    acc += av[base + kk] * sv[b * k + kk];
                }
                out.data_mut()[b * n + i] = acc;
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g, ctx| {
                let av = ctx.value(actions).data();
                let sv = ctx.value(state).data();
                let mut ga = Tensor::zeros(&[bsz, n, k]);
                let mut gs = Tensor::zeros(&[bsz, k]);
                {
                    let gad = ga.data_mut();
                    for b in 0..bsz {
                        for i in 0..n {
                            let gv = g.data()[b * n + i];
                            let base = (b * n + i) * k;
                            for kk in 0..k {
                                gad[base + kk] += gv * sv[b * k + kk];
                            }
                        }
                    }
                }
                {
                    let gsd = gs.data_mut();
                    for b in 0..bsz {
                        for i in 0..n {
                            let gv = g.data()[b * n + i];
                            let base = (b * n + i) * k;
                            for kk in 0..k {
                                gsd[b * k + kk] += gv * av[base + kk];
                            }
                        }
                    }
                }
                ctx.add_grad(actions, ga);
                ctx.add_grad(state, gs);
            })),
        ))
    }
}

/// C += A(M,K) @ B(K,N), fresh output.
fn mat_nn<R: Real>(a: &[R], b: &[R], m: usize, k: usize, n: usize) -> Vec<R> {
    let mut out = alloc::vec![R::ZERO; m * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == R::ZERO {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    out
}

/// A(M,K) @ B(N,K)^T -> (M,N): row-by-row dot products.
fn mat_nt<R: Real>(a: &[R], b: &[R], m: usize, k: usize, n: usize) -> Vec<R> {
    let mut out = alloc::vec![R::ZERO; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = R::ZERO;
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// A(M,K)^T @ B(M,N) -> (K,N).
fn mat_tn<R: Real>(a: &[R], b: &[R], m: usize, k: usize, n: usize) -> Vec<R> {
    let mut out = alloc::vec![R::ZERO; k * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == R::ZERO {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    out
}
