use rand::Rng;

use crate::scalar::Scalar;

use super::{AutodiffError, Result, Tape, Tensor, Var};

/// `C (+)= op(A) * op(B)` for row-major buffers. `a` is `m x k` (stored
/// `k x m` when `a_t`), `b` is `k x n` (stored `n x k` when `b_t`).
#[allow(clippy::too_many_arguments)]
fn mm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn col_sums<T: Scalar>(g: &Tensor<T>) -> Vec<T> {
    let c = g.cols();
    let mut out = vec![T::zero(); c];
    for r in 0..g.rows() {
        for (o, &v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

fn mismatch(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::DimensionMismatch { op, detail }
}

/// Parameter handles of one LSTM direction. Gate blocks are ordered
/// input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

pub struct BiLstmOutput {
    /// `[batch, 2H]`: forward state after the last real token, then the
    /// backward state after the first token.
    pub final_state: Var,
    /// `[batch, L, 2H]` per-position outputs (zero at PAD positions), when
    /// requested.
    pub sequence: Option<Var>,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> Tape<T> {
    /// Gathers rows of `table` (`[V, d]`) for `ids` laid out as
    /// `[batch, ids.len() / batch]`; output `[batch, L, d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], batch: usize) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(mismatch("embedding", format!("table must be rank 2, got {:?}", t.shape())));
        }
        if batch == 0 || ids.is_empty() || ids.len() % batch != 0 {
            return Err(mismatch("embedding", format!("{} ids do not split into {batch} rows", ids.len())));
        }
        let (rows, d) = (t.shape()[0], t.cols());
        if let Some(&id) = ids.iter().find(|&&id| id >= rows) {
            return Err(AutodiffError::IndexOutOfRange { id, rows });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(t.row(id));
        }
        let value = Tensor::new([batch, ids.len() / batch, d], out)?;
        let ids = ids.to_vec();
        Ok(self.push("embedding", value, vec![table], move |ctx| {
            let mut g = Tensor::zeros([rows, d]);
            let gd = g.data_mut();
            for (k, &id) in ids.iter().enumerate() {
                for (dst, &src) in gd[id * d..(id + 1) * d].iter_mut().zip(ctx.grad.row(k)) {
                    *dst += src;
                }
            }
            vec![Some(g)]
        }))
    }

    /// Picks one time step per batch row from `[B, L, d]`; `None` rows are
    /// zero.
    pub fn time_gather(&mut self, seq: Var, positions: &[Option<usize>]) -> Result<Var> {
        let s = self.value(seq);
        if s.rank() != 3 || s.shape()[0] != positions.len() {
            return Err(mismatch("time_gather", format!("shape {:?} vs {} positions", s.shape(), positions.len())));
        }
        let (b, l, d) = (s.shape()[0], s.shape()[1], s.shape()[2]);
        let mut out = vec![T::zero(); b * d];
        for (row, p) in positions.iter().enumerate() {
            if let Some(p) = *p {
                if p >= l {
                    return Err(mismatch("time_gather", format!("position {p} >= {l}")));
                }
                out[row * d..(row + 1) * d].copy_from_slice(s.row(row * l + p));
            }
        }
        let positions = positions.to_vec();
        let value = Tensor::new([b, d], out)?;
        Ok(self.push("time_gather", value, vec![seq], move |ctx| {
            let mut g = Tensor::zeros([b, l, d]);
            let gd = g.data_mut();
            for (row, p) in positions.iter().enumerate() {
                if let Some(p) = *p {
                    let off = (row * l + p) * d;
                    for (dst, &src) in gd[off..off + d].iter_mut().zip(ctx.grad.row(row)) {
                        *dst += src;
                    }
                }
            }
            vec![Some(g)]
        }))
    }

    /// Places `steps[s]` (each `[B, H]`) at `positions[s][b]` of a
    /// `[B, seq_len, H]` output; unfilled cells are zero.
    pub fn assemble_sequence(
        &mut self,
        steps: &[Var],
        positions: &[Vec<Option<usize>>],
        seq_len: usize,
    ) -> Result<Var> {
        if steps.is_empty() || steps.len() != positions.len() {
            return Err(mismatch("assemble_sequence", "steps and positions differ".into()));
        }
        let first = self.value(steps[0]);
        let (b, h) = (first.rows(), first.cols());
        let mut out = vec![T::zero(); b * seq_len * h];
        for (s, step) in steps.iter().enumerate() {
            let v = self.value(*step);
            for (row, p) in positions[s].iter().enumerate() {
                if let Some(p) = *p {
                    let off = (row * seq_len + p) * h;
                    out[off..off + h].copy_from_slice(v.row(row));
                }
            }
        }
        let value = Tensor::new([b, seq_len, h], out)?;
        let positions = positions.to_vec();
        Ok(self.push("assemble_sequence", value, steps.to_vec(), move |ctx| {
            positions
                .iter()
                .zip(&ctx.needs)
                .map(|(pos, &need)| {
                    need.then(|| {
                        let mut g = Tensor::zeros([b, h]);
                        let gd = g.data_mut();
                        for (row, p) in pos.iter().enumerate() {
                            if let Some(p) = *p {
                                gd[row * h..(row + 1) * h]
                                    .copy_from_slice(ctx.grad.row(row * seq_len + p));
                            }
                        }
                        g
                    })
                })
                .collect()
        }))
    }

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        let rows = first.rows();
        let lead: Vec<usize> = first.shape()[..first.rank() - 1].to_vec();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows || v.shape()[..v.rank() - 1] != lead[..] {
                return Err(mismatch("concat_cols", format!("{:?} vs {:?}", v.shape(), first.shape())));
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let mut shape = lead.clone();
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        Ok(self.push("concat_cols", value, parts.to_vec(), move |ctx| {
            let mut offset = 0;
            widths
                .iter()
                .zip(&ctx.needs)
                .zip(&ctx.inputs)
                .map(|((&w, &need), input)| {
                    let start = offset;
                    offset += w;
                    need.then(|| {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&ctx.grad.row(r)[start..start + w]);
                        }
                        Tensor::new(input.shape().to_vec(), data).expect("slice shape")
                    })
                })
                .collect()
        }))
    }

    /// `x W^T + b` with `x: [.., in]`, `W: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 || xv.cols() != wv.cols() {
            return Err(mismatch("dense", format!("input {:?} vs weight {:?}", xv.shape(), wv.shape())));
        }
        let (n, inp, out) = (xv.rows(), xv.cols(), wv.shape()[0]);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != out {
                return Err(mismatch("dense", format!("bias {:?} vs {out} outputs", bv.shape())));
            }
        }
        let mut y = vec![T::zero(); n * out];
        mm(n, inp, out, xv.data(), false, wv.data(), true, &mut y, false);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(out) {
                for (v, &bb) in row.iter_mut().zip(bv) {
                    *v += bb;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = out;
        let value = Tensor::new(shape, y)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push("dense", value, inputs, move |ctx| {
            let (xv, wv, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); n * inp];
                mm(n, out, inp, g.data(), false, wv.data(), false, &mut dx, false);
                Tensor::new(xv.shape().to_vec(), dx).unwrap()
            });
            let dw = ctx.needs[1].then(|| {
                let mut dw = vec![T::zero(); out * inp];
                mm(out, n, inp, g.data(), true, xv.data(), false, &mut dw, false);
                Tensor::new([out, inp], dw).unwrap()
            });
            let mut grads = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                grads.push(
                    ctx.needs[2]
                        .then(|| Tensor::new(ctx.inputs[2].shape().to_vec(), col_sums(g)).unwrap()),
                );
            }
            grads
        }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push("relu", value, vec![x], |ctx| {
            let data = ctx
                .inputs[0]
                .data()
                .iter()
                .zip(ctx.grad.data())
                .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                .collect();
            vec![Some(Tensor::new(ctx.grad.shape().to_vec(), data).unwrap())]
        })
    }

    /// Inverted dropout: survivors scaled by `1 / (1 - rate)`. Identity
    /// when not training or when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        self.mark_stochastic();
        let scale = T::from_f64_lossy(1.0 / (1.0 - rate));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() >= rate { scale } else { T::zero() })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push("dropout", value, vec![x], move |ctx| {
            let data = ctx.grad.data().iter().zip(&mask).map(|(&g, &m)| g * m).collect();
            vec![Some(Tensor::new(ctx.grad.shape().to_vec(), data).unwrap())]
        }))
    }

    /// Batch normalization over the rows of `[B, F]` using the batch's own
    /// (biased) statistics. Returns the output and the statistics used.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        let xv = self.value(x);
        let (b, f) = (xv.rows(), xv.cols());
        if xv.rank() != 2 || self.value(gamma).len() != f || self.value(beta).len() != f {
            return Err(mismatch("batchnorm", format!("input {:?}", xv.shape())));
        }
        let nb = T::from_usize_lossy(b);
        let mut mean = vec![T::zero(); f];
        for r in 0..b {
            for (m, &v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nb);
        let mut var = vec![T::zero(); f];
        for r in 0..b {
            for ((s, &v), &m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= nb);
        let eps_t = T::from_f64_lossy(eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); b * f];
        let mut y = vec![T::zero(); b * f];
        for r in 0..b {
            for j in 0..f {
                let k = r * f + j;
                xhat[k] = (xv.data()[k] - mean[j]) * inv_std[j];
                y[k] = gv[j] * xhat[k] + bv[j];
            }
        }
        let value = Tensor::new([b, f], y)?;
        let stats = BatchStats {
            mean: mean.clone(),
            var: var.clone(),
        };
        let out = self.push("batchnorm_train", value, vec![x, gamma, beta], move |ctx| {
            let (g, gamma) = (ctx.grad.data(), ctx.inputs[1].data());
            let mut sum_g = vec![T::zero(); f];
            let mut sum_gx = vec![T::zero(); f];
            for r in 0..b {
                for j in 0..f {
                    let k = r * f + j;
                    sum_g[j] += g[k];
                    sum_gx[j] += g[k] * xhat[k];
                }
            }
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); b * f];
                for r in 0..b {
                    for j in 0..f {
                        let k = r * f + j;
                        dx[k] = gamma[j] * inv_std[j] / nb
                            * (nb * g[k] - sum_g[j] - xhat[k] * sum_gx[j]);
                    }
                }
                Tensor::new([b, f], dx).unwrap()
            });
            vec![
                dx,
                Some(Tensor::new(ctx.inputs[1].shape().to_vec(), sum_gx).unwrap()),
                Some(Tensor::new(ctx.inputs[2].shape().to_vec(), sum_g).unwrap()),
            ]
        });
        Ok((out, stats))
    }

    /// Batch normalization with fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (b, f) = (xv.rows(), xv.cols());
        if xv.rank() != 2 || running_mean.len() != f || running_var.len() != f {
            return Err(mismatch("batchnorm", format!("input {:?}", xv.shape())));
        }
        let eps_t = T::from_f64_lossy(eps);
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let mean = running_mean.to_vec();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); b * f];
        let mut y = vec![T::zero(); b * f];
        for r in 0..b {
            for j in 0..f {
                let k = r * f + j;
                xhat[k] = (xv.data()[k] - mean[j]) * inv_std[j];
                y[k] = gv[j] * xhat[k] + bv[j];
            }
        }
        let value = Tensor::new([b, f], y)?;
        Ok(self.push("batchnorm_eval", value, vec![x, gamma, beta], move |ctx| {
            let (g, gamma) = (ctx.grad.data(), ctx.inputs[1].data());
            let mut sum_g = vec![T::zero(); f];
            let mut sum_gx = vec![T::zero(); f];
            let mut dx = vec![T::zero(); b * f];
            for r in 0..b {
                for j in 0..f {
                    let k = r * f + j;
                    sum_g[j] += g[k];
                    sum_gx[j] += g[k] * xhat[k];
                    dx[k] = g[k] * gamma[j] * inv_std[j];
                }
            }
            vec![
                Some(Tensor::new([b, f], dx).unwrap()),
                Some(Tensor::new(ctx.inputs[1].shape().to_vec(), sum_gx).unwrap()),
                Some(Tensor::new(ctx.inputs[2].shape().to_vec(), sum_g).unwrap()),
            ]
        }))
    }

    /// Pre-activation gate block `x W_ih^T + b_ih + h W_hh^T + b_hh`,
    /// shape `[B, 4H]`.
    pub fn lstm_gates(&mut self, x: Var, h: Var, p: &LstmVars) -> Result<Var> {
        let (xv, hv) = (self.value(x), self.value(h));
        let (wi, wh) = (self.value(p.w_ih), self.value(p.w_hh));
        let (bi, bh) = (self.value(p.b_ih), self.value(p.b_hh));
        let (b, inp, hid) = (xv.rows(), xv.cols(), hv.cols());
        let g4 = 4 * hid;
        if hv.rows() != b
            || wi.shape() != [g4, inp]
            || wh.shape() != [g4, hid]
            || bi.len() != g4
            || bh.len() != g4
        {
            return Err(mismatch(
                "lstm_cell",
                format!(
                    "x {:?}, h {:?}, w_ih {:?}, w_hh {:?}, b_ih {:?}, b_hh {:?}",
                    xv.shape(),
                    hv.shape(),
                    wi.shape(),
                    wh.shape(),
                    bi.shape(),
                    bh.shape()
                ),
            ));
        }
        let mut a = vec![T::zero(); b * g4];
        mm(b, inp, g4, xv.data(), false, wi.data(), true, &mut a, false);
        mm(b, hid, g4, hv.data(), false, wh.data(), true, &mut a, true);
        for row in a.chunks_mut(g4) {
            for ((v, &x), &y) in row.iter_mut().zip(bi.data()).zip(bh.data()) {
                *v += x + y;
            }
        }
        let value = Tensor::new([b, g4], a)?;
        Ok(self.push("lstm_gates", value, vec![x, h, p.w_ih, p.w_hh, p.b_ih, p.b_hh], move |ctx| {
            let g = ctx.grad;
            let (xv, hv, wi, wh) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2], ctx.inputs[3]);
            let dx = ctx.needs[0].then(|| {
                let mut d = vec![T::zero(); b * inp];
                mm(b, g4, inp, g.data(), false, wi.data(), false, &mut d, false);
                Tensor::new([b, inp], d).unwrap()
            });
            let dh = ctx.needs[1].then(|| {
                let mut d = vec![T::zero(); b * hid];
                mm(b, g4, hid, g.data(), false, wh.data(), false, &mut d, false);
                Tensor::new([b, hid], d).unwrap()
            });
            let dwi = ctx.needs[2].then(|| {
                let mut d = vec![T::zero(); g4 * inp];
                mm(g4, b, inp, g.data(), true, xv.data(), false, &mut d, false);
                Tensor::new([g4, inp], d).unwrap()
            });
            let dwh = ctx.needs[3].then(|| {
                let mut d = vec![T::zero(); g4 * hid];
                mm(g4, b, hid, g.data(), true, hv.data(), false, &mut d, false);
                Tensor::new([g4, hid], d).unwrap()
            });
            let db = col_sums(g);
            let dbi = ctx.needs[4].then(|| Tensor::new(ctx.inputs[4].shape().to_vec(), db.clone()).unwrap());
            let dbh = ctx.needs[5].then(|| Tensor::new(ctx.inputs[5].shape().to_vec(), db).unwrap());
            vec![dx, dh, dwi, dwh, dbi, dbh]
        }))
    }

    /// `c = sigmoid(f) * c_prev + sigmoid(i) * tanh(g)` for active rows;
    /// inactive rows carry `c_prev` through.
    fn lstm_state(&mut self, gates: Var, c_prev: Var, active: Vec<bool>) -> Var {
        let (gv, cv) = (self.value(gates), self.value(c_prev));
        let (b, h) = (cv.rows(), cv.cols());
        let mut c = cv.data().to_vec();
        for r in 0..b {
            if !active[r] {
                continue;
            }
            let a = gv.row(r);
            for j in 0..h {
                let (i, f, g) = (sigmoid(a[j]), sigmoid(a[h + j]), a[2 * h + j].tanh());
                c[r * h + j] = f * cv.data()[r * h + j] + i * g;
            }
        }
        let value = Tensor::new([b, h], c).unwrap();
        self.push("lstm_state", value, vec![gates, c_prev], move |ctx| {
            let (gv, cp, dc) = (ctx.inputs[0], ctx.inputs[1].data(), ctx.grad.data());
            let mut da = vec![T::zero(); b * 4 * h];
            let mut dcp = vec![T::zero(); b * h];
            for r in 0..b {
                if !active[r] {
                    dcp[r * h..(r + 1) * h].copy_from_slice(&dc[r * h..(r + 1) * h]);
                    continue;
                }
                let a = gv.row(r);
                let dar = &mut da[r * 4 * h..(r + 1) * 4 * h];
                for j in 0..h {
                    let k = r * h + j;
                    let (i, f, g) = (sigmoid(a[j]), sigmoid(a[h + j]), a[2 * h + j].tanh());
                    dar[j] = dc[k] * g * i * (T::one() - i);
                    dar[h + j] = dc[k] * cp[k] * f * (T::one() - f);
                    dar[2 * h + j] = dc[k] * i * (T::one() - g * g);
                    dcp[k] = dc[k] * f;
                }
            }
            vec![
                Some(Tensor::new([b, 4 * h], da).unwrap()),
                Some(Tensor::new([b, h], dcp).unwrap()),
            ]
        })
    }

    /// `h = sigmoid(o) * tanh(c)` for active rows; inactive rows carry
    /// `h_prev` through.
    fn lstm_hidden(&mut self, gates: Var, c: Var, h_prev: Var, active: Vec<bool>) -> Var {
        let (gv, cv, hv) = (self.value(gates), self.value(c), self.value(h_prev));
        let (b, h) = (cv.rows(), cv.cols());
        let mut out = hv.data().to_vec();
        for r in 0..b {
            if !active[r] {
                continue;
            }
            let a = gv.row(r);
            for j in 0..h {
                out[r * h + j] = sigmoid(a[3 * h + j]) * cv.data()[r * h + j].tanh();
            }
        }
        let value = Tensor::new([b, h], out).unwrap();
        self.push("lstm_hidden", value, vec![gates, c, h_prev], move |ctx| {
            let (gv, cv, dh) = (ctx.inputs[0], ctx.inputs[1].data(), ctx.grad.data());
            let mut da = vec![T::zero(); b * 4 * h];
            let mut dc = vec![T::zero(); b * h];
            let mut dhp = vec![T::zero(); b * h];
            for r in 0..b {
                if !active[r] {
                    dhp[r * h..(r + 1) * h].copy_from_slice(&dh[r * h..(r + 1) * h]);
                    continue;
                }
                let a = gv.row(r);
                for j in 0..h {
                    let k = r * h + j;
                    let o = sigmoid(a[3 * h + j]);
                    let tc = cv[k].tanh();
                    da[r * 4 * h + 3 * h + j] = dh[k] * tc * o * (T::one() - o);
                    dc[k] = dh[k] * o * (T::one() - tc * tc);
                }
            }
            vec![
                Some(Tensor::new([b, 4 * h], da).unwrap()),
                Some(Tensor::new([b, h], dc).unwrap()),
                Some(Tensor::new([b, h], dhp).unwrap()),
            ]
        })
    }

    /// One LSTM step. Rows with `active[r] == false` keep their previous
    /// state unchanged. Returns `(h_t, c_t)`.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h_prev: Var,
        c_prev: Var,
        params: &LstmVars,
        active: Option<&[bool]>,
    ) -> Result<(Var, Var)> {
        let b = self.value(x).rows();
        if self.value(c_prev).shape() != self.value(h_prev).shape() {
            return Err(mismatch(
                "lstm_cell",
                format!("h {:?} vs c {:?}", self.value(h_prev).shape(), self.value(c_prev).shape()),
            ));
        }
        let active = match active {
            Some(a) if a.len() == b => a.to_vec(),
            Some(a) => return Err(mismatch("lstm_cell", format!("{} mask rows for batch {b}", a.len()))),
            None => vec![true; b],
        };
        let gates = self.lstm_gates(x, h_prev, params)?;
        let c = self.lstm_state(gates, c_prev, active.clone());
        let h = self.lstm_hidden(gates, c, h_prev, active);
        Ok((h, c))
    }

    /// Bidirectional LSTM over `[B, L, d]` honoring each row's true length:
    /// the forward direction reads positions `0..len`, the backward
    /// direction `len-1..=0`, and PAD positions are never read.
    pub fn bilstm(
        &mut self,
        seq: Var,
        lengths: &[usize],
        fwd: &LstmVars,
        bwd: &LstmVars,
        return_sequence: bool,
    ) -> Result<BiLstmOutput> {
        let sv = self.value(seq);
        if sv.rank() != 3 || sv.shape()[0] != lengths.len() {
            return Err(mismatch("bilstm", format!("input {:?} vs {} lengths", sv.shape(), lengths.len())));
        }
        let (b, l) = (sv.shape()[0], sv.shape()[1]);
        if let Some(row) = lengths.iter().position(|&n| n == 0) {
            return Err(AutodiffError::ZeroLength { row });
        }
        if let Some(&n) = lengths.iter().find(|&&n| n > l) {
            return Err(mismatch("bilstm", format!("length {n} exceeds padded length {l}")));
        }
        let hid = self.value(fwd.w_hh).cols();
        if self.value(bwd.w_hh).cols() != hid {
            return Err(mismatch("bilstm", "directions disagree on hidden size".into()));
        }
        let steps = *lengths.iter().max().unwrap();
        let mut finals = Vec::with_capacity(2);
        let mut sequences = Vec::with_capacity(2);
        for (params, reverse) in [(fwd, false), (bwd, true)] {
            let mut h = self.constant(Tensor::zeros([b, hid]));
            let mut c = self.constant(Tensor::zeros([b, hid]));
            let mut hs = Vec::with_capacity(steps);
            let mut all_pos = Vec::with_capacity(steps);
            for s in 0..steps {
                let pos: Vec<Option<usize>> = lengths
                    .iter()
                    .map(|&n| (s < n).then(|| if reverse { n - 1 - s } else { s }))
                    .collect();
                let active: Vec<bool> = pos.iter().map(Option::is_some).collect();
                let x = self.time_gather(seq, &pos)?;
                (h, c) = self.lstm_cell(x, h, c, params, Some(&active))?;
                hs.push(h);
                all_pos.push(pos);
            }
            finals.push(h);
            if return_sequence {
                sequences.push(self.assemble_sequence(&hs, &all_pos, l)?);
            }
        }
        let final_state = self.concat_cols(&finals)?;
        let sequence = if return_sequence {
            Some(self.concat_cols(&sequences)?)
        } else {
            None
        };
        Ok(BiLstmOutput { final_state, sequence })
    }

    /// Valid 1-D convolution over time with kernel width `k = W.cols / d`,
    /// ReLU, then global max over time. `seq: [B, L, d]`, `W: [M, k*d]`,
    /// `b: [M]`; output `[B, M]`. Ties route the gradient to the first
    /// maximal position.
    pub fn conv1d_relu_maxpool(&mut self, seq: Var, w: Var, bias: Var) -> Result<Var> {
        let (sv, wv, bv) = (self.value(seq), self.value(w), self.value(bias));
        if sv.rank() != 3 || wv.rank() != 2 {
            return Err(mismatch("conv1d", format!("input {:?}, kernel {:?}", sv.shape(), wv.shape())));
        }
        let (b, l, d) = (sv.shape()[0], sv.shape()[1], sv.shape()[2]);
        let (maps, kd) = (wv.shape()[0], wv.shape()[1]);
        if kd % d != 0 || bv.len() != maps {
            return Err(mismatch("conv1d", format!("kernel {:?} vs embedding width {d}", wv.shape())));
        }
        let k = kd / d;
        if l < k {
            return Err(AutodiffError::SequenceTooShort { len: l, kernel: k });
        }
        let windows = l - k + 1;
        let mut resp = vec![T::zero(); windows * maps];
        let mut out = vec![T::zero(); b * maps];
        let mut arg = vec![0usize; b * maps];
        for row in 0..b {
            let base = &sv.data()[row * l * d..];
            // overlapping window rows: row stride d, each k*d long
            T::gemm(
                windows, kd, maps, T::one(), base, d as isize, 1, wv.data(), 1, kd as isize,
                T::zero(), &mut resp, maps as isize, 1,
            );
            for m in 0..maps {
                let mut best = 0;
                for t in 1..windows {
                    if resp[t * maps + m] > resp[best * maps + m] {
                        best = t;
                    }
                }
                let v = resp[best * maps + m] + bv.data()[m];
                out[row * maps + m] = v.max(T::zero());
                arg[row * maps + m] = best;
            }
        }
        let value = Tensor::new([b, maps], out)?;
        Ok(self.push("conv1d_relu_maxpool", value, vec![seq, w, bias], move |ctx| {
            let (sv, wv, y, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.output.data(), ctx.grad.data());
            let mut dseq = vec![T::zero(); b * l * d];
            let mut dw = vec![T::zero(); maps * kd];
            let mut db = vec![T::zero(); maps];
            for row in 0..b {
                for m in 0..maps {
                    let idx = row * maps + m;
                    if y[idx] <= T::zero() || g[idx] == T::zero() {
                        continue;
                    }
                    let gv = g[idx];
                    let off = (row * l + arg[idx]) * d;
                    db[m] += gv;
                    for j in 0..kd {
                        dw[m * kd + j] += gv * sv[off + j];
                        dseq[off + j] += gv * wv[m * kd + j];
                    }
                }
            }
            vec![
                ctx.needs[0].then(|| Tensor::new([b, l, d], dseq).unwrap()),
                ctx.needs[1].then(|| Tensor::new([maps, kd], dw).unwrap()),
                ctx.needs[2].then(|| Tensor::new(ctx.inputs[2].shape().to_vec(), db).unwrap()),
            ]
        }))
    }

    /// Parallel convolution branches concatenated into `[B, sum(M)]`.
    pub fn conv1d_bank(&mut self, seq: Var, kernels: &[(Var, Var)]) -> Result<Var> {
        let pooled = kernels
            .iter()
            .map(|&(w, b)| self.conv1d_relu_maxpool(seq, w, b))
            .collect::<Result<Vec<_>>>()?;
        self.concat_cols(&pooled)
    }

    /// Class-weighted mean cross-entropy:
    /// `sum_i w[y_i] * -log softmax(z_i)[y_i] / sum_i w[y_i]`.
    pub fn weighted_ce(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let lv = self.value(logits);
        let (b, c) = (lv.rows(), lv.cols());
        if targets.len() != b || weights.len() != c {
            return Err(mismatch(
                "weighted_ce",
                format!("logits {:?}, {} targets, {} weights", lv.shape(), targets.len(), weights.len()),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(AutodiffError::TargetOutOfRange { target: t, classes: c });
        }
        let probs: Vec<T> = super::softmax_rows(lv).into_iter().flatten().collect();
        let wsum: T = targets.iter().map(|&t| weights[t]).sum();
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss += weights[t] * (lse - row[t]);
        }
        let value = Tensor::scalar(loss / wsum);
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        Ok(self.push("weighted_ce", value, vec![logits], move |ctx| {
            let g = ctx.grad.item();
            let mut d = probs.clone();
            for (r, &t) in targets.iter().enumerate() {
                let scale = g * weights[t] / wsum;
                d[r * c + t] -= T::one();
                d[r * c..(r + 1) * c].iter_mut().for_each(|v| *v *= scale);
            }
            vec![Some(Tensor::new([b, c], d).unwrap())]
        }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push("add", value, vec![a, b], |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
        }))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|v| v * s);
        self.push("scale", value, vec![a], move |ctx| vec![Some(ctx.grad.map(|g| g * s))])
    }

    /// `sum(x * r)` for a fixed tensor `r` of the same shape; used to reduce
    /// tensor-valued ops to a scalar in gradient checks.
    pub fn weighted_sum(&mut self, x: Var, r: Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != r.len() {
            return Err(mismatch("weighted_sum", format!("{:?} vs {:?}", xv.shape(), r.shape())));
        }
        let total: T = xv.data().iter().zip(r.data()).map(|(&a, &b)| a * b).sum();
        Ok(self.push("weighted_sum", Tensor::scalar(total), vec![x], move |ctx| {
            let g = ctx.grad.item();
            let data = r.data().iter().map(|&v| v * g).collect();
            vec![Some(Tensor::new(ctx.inputs[0].shape().to_vec(), data).unwrap())]
        }))
    }
}
