//! Layer kernels. Each layer has a forward routine that optionally records a
//! trace, and a backward routine consuming that trace. The public functions
//! here are the forward-only entry points; [`super::Tape`] records traces and
//! drives the backward routines.

use rand::Rng;

use super::tensor::{
    accumulate_vt, axpy, dot, matmul_nn_acc, matmul_nt, matmul_tn_acc, transpose, Real, Tensor,
};
use super::NnError;

/// Logistic function, evaluated with the sign-split form so that neither
/// branch exponentiates a positive argument. The result is clamped into the
/// open interval (0, 1): it never returns exactly 0 or 1.
pub fn sigmoid<T: Real>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let upper = T::one() - T::epsilon() / T::of_f64(2.0);
    s.max(T::min_positive_value()).min(upper)
}

fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> NnError {
    NnError::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

fn check_shape<T: Real>(
    op: &'static str,
    t: &Tensor<T>,
    expected: &[usize],
) -> Result<(), NnError> {
    if t.shape() != expected {
        return Err(shape_err(op, expected, t.shape()));
    }
    Ok(())
}

fn check_matrix<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize), NnError> {
    if t.shape().len() != 2 {
        return Err(NnError::ShapeMismatch {
            op,
            expected: vec![0, 0],
            got: t.shape().to_vec(),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

// ---------------------------------------------------------------------------
// Embedding

/// Looks up one row of `table` (`V×d`) per index, producing `L×d`.
pub fn embedding_forward<T: Real>(
    indices: &[usize],
    table: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let (vocab, dim) = check_matrix("embedding", table)?;
    let mut out = Vec::with_capacity(indices.len() * dim);
    for &ix in indices {
        if ix >= vocab {
            return Err(NnError::IndexOutOfRange { index: ix, vocab });
        }
        out.extend_from_slice(table.row(ix));
    }
    Tensor::from_vec(&[indices.len(), dim], out)
}

/// Scatter-add of output-row gradients into the referenced table rows.
pub(crate) fn embedding_backward<T: Real>(
    indices: &[usize],
    dim: usize,
    d_out: &[T],
    d_table: &mut [T],
) {
    for (t, &ix) in indices.iter().enumerate() {
        let src = &d_out[t * dim..(t + 1) * dim];
        let dst = &mut d_table[ix * dim..(ix + 1) * dim];
        for (a, &b) in dst.iter_mut().zip(src) {
            *a = *a + b;
        }
    }
}

// ---------------------------------------------------------------------------
// Dense

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

/// `act(W x + b)` with `W` shaped `m×n`.
pub fn dense_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<T>, NnError> {
    let (m, n) = check_matrix("dense", w)?;
    check_shape("dense", x, &[n])?;
    check_shape("dense", b, &[m])?;
    let mut out = matmul_nt(w.data(), x.data(), m, n, 1);
    for (o, &bi) in out.iter_mut().zip(b.data()) {
        *o = *o + bi;
        if activation == Activation::Relu && *o < T::zero() {
            *o = T::zero();
        }
    }
    Tensor::from_vec(&[m], out)
}

pub(crate) struct DenseGrads<T> {
    pub dx: Vec<T>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn dense_backward<T: Real>(
    x: &[T],
    w: &[T],
    out: &[T],
    activation: Activation,
    d_out: &[T],
) -> DenseGrads<T> {
    let m = out.len();
    let n = x.len();
    let g: Vec<T> = d_out
        .iter()
        .zip(out)
        .map(|(&d, &o)| {
            if activation == Activation::Relu && o <= T::zero() {
                T::zero()
            } else {
                d
            }
        })
        .collect();
    let mut dw = vec![T::zero(); m * n];
    let mut dx = vec![T::zero(); n];
    for i in 0..m {
        if g[i] != T::zero() {
            axpy(g[i], x, &mut dw[i * n..(i + 1) * n]);
            axpy(g[i], &w[i * n..(i + 1) * n], &mut dx);
        }
    }
    DenseGrads { dx, dw, db: g }
}

// ---------------------------------------------------------------------------
// GRU

/// Gated recurrent unit parameters. Gate blocks are stacked row-wise in the
/// order update (z), reset (r), candidate (h):
///
/// * `w_input` : `3H×d`, rows `[W_z; W_r; W_h]`
/// * `w_hidden`: `3H×H`, rows `[U_z; U_r; U_h]`
/// * `bias`    : `3H`,   `[b_z; b_r; b_h]`
///
/// The state update is `h = (1 - z) ⊙ h_prev + z ⊙ h̃`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<T> {
    pub w_input: Tensor<T>,
    pub w_hidden: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> GruParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_input: Tensor::zeros(&[3 * hidden, input]),
            w_hidden: Tensor::zeros(&[3 * hidden, hidden]),
            bias: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn input(&self) -> usize {
        self.w_input.cols()
    }

    pub fn validate(&self) -> Result<(usize, usize), NnError> {
        let (rows, d) = check_matrix("gru", &self.w_input)?;
        let (_, h) = check_matrix("gru", &self.w_hidden)?;
        if rows != 3 * h {
            return Err(shape_err("gru", &[3 * h, d], self.w_input.shape()));
        }
        check_shape("gru", &self.w_hidden, &[3 * h, h])?;
        check_shape("gru", &self.bias, &[3 * h])?;
        Ok((d, h))
    }
}

/// Per-timestep gate activations, indexed by sequence position.
#[derive(Clone, Debug)]
pub(crate) struct GruTrace<T> {
    z: Vec<T>,
    r: Vec<T>,
    cand: Vec<T>,
    h_prev: Vec<T>,
}

fn scan_order(len: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    }
}

pub(crate) fn gru_forward_traced<T: Real>(
    x: &Tensor<T>,
    h0: Option<&Tensor<T>>,
    p: &GruParams<T>,
    reverse: bool,
) -> Result<(Tensor<T>, GruTrace<T>), NnError> {
    let (d, h) = p.validate()?;
    let (len, xd) = check_matrix("gru", x)?;
    if xd != d {
        return Err(shape_err("gru", &[len, d], x.shape()));
    }
    let mut state = match h0 {
        Some(t) => {
            check_shape("gru", t, &[h])?;
            t.data().to_vec()
        }
        None => vec![T::zero(); h],
    };
    let mut pre = matmul_nt(x.data(), p.w_input.data(), len, d, 3 * h);
    for row in pre.chunks_mut(3 * h) {
        for (a, &b) in row.iter_mut().zip(p.bias.data()) {
            *a = *a + b;
        }
    }
    let ut = transpose(p.w_hidden.data(), 3 * h, h);
    let mut trace = GruTrace {
        z: vec![T::zero(); len * h],
        r: vec![T::zero(); len * h],
        cand: vec![T::zero(); len * h],
        h_prev: vec![T::zero(); len * h],
    };
    let mut out = vec![T::zero(); len * h];
    let mut rh = vec![T::zero(); h];
    let mut acc = vec![T::zero(); 3 * h];
    for t in scan_order(len, reverse) {
        acc.copy_from_slice(&pre[t * 3 * h..(t + 1) * 3 * h]);
        let span = t * h..(t + 1) * h;
        trace.h_prev[span.clone()].copy_from_slice(&state);
        accumulate_vt(&state, &ut, 3 * h, 0..2 * h, &mut acc[..2 * h]);
        for j in 0..h {
            let z = sigmoid(acc[j]);
            let r = sigmoid(acc[h + j]);
            trace.z[t * h + j] = z;
            trace.r[t * h + j] = r;
            rh[j] = r * state[j];
        }
        accumulate_vt(&rh, &ut, 3 * h, 2 * h..3 * h, &mut acc[2 * h..]);
        for j in 0..h {
            let c = acc[2 * h + j].tanh();
            trace.cand[t * h + j] = c;
            let z = trace.z[t * h + j];
            state[j] = (T::one() - z) * state[j] + z * c;
        }
        out[span].copy_from_slice(&state);
    }
    Ok((Tensor::from_vec(&[len, h], out)?, trace))
}

pub(crate) struct RecurrentGrads<T> {
    pub dx: Vec<T>,
    pub dh0: Vec<T>,
    pub dc0: Vec<T>,
    pub dw_input: Vec<T>,
    pub dw_hidden: Vec<T>,
    pub dbias: Vec<T>,
}

pub(crate) fn gru_backward<T: Real>(
    x: &Tensor<T>,
    p: &GruParams<T>,
    trace: &GruTrace<T>,
    reverse: bool,
    d_out: &[T],
) -> RecurrentGrads<T> {
    let d = p.input();
    let h = p.hidden();
    let len = x.rows();
    let uw = p.w_hidden.data();
    let mut d_pre = vec![T::zero(); len * 3 * h];
    let mut dw_hidden = vec![T::zero(); 3 * h * h];
    let mut carry = vec![T::zero(); h];
    let mut dh = vec![T::zero(); h];
    let mut dac = vec![T::zero(); h];
    let mut rh = vec![T::zero(); h];
    let mut d_rh = vec![T::zero(); h];
    for t in scan_order(len, reverse).into_iter().rev() {
        let span = t * h..(t + 1) * h;
        let z = &trace.z[span.clone()];
        let r = &trace.r[span.clone()];
        let c = &trace.cand[span.clone()];
        let hp = &trace.h_prev[span.clone()];
        for j in 0..h {
            dh[j] = d_out[t * h + j] + carry[j];
        }
        let dp = &mut d_pre[t * 3 * h..(t + 1) * 3 * h];
        for j in 0..h {
            let dc = dh[j] * z[j];
            let dz = dh[j] * (c[j] - hp[j]);
            carry[j] = dh[j] * (T::one() - z[j]);
            dac[j] = dc * (T::one() - c[j] * c[j]);
            dp[j] = dz * z[j] * (T::one() - z[j]);
            dp[2 * h + j] = dac[j];
            rh[j] = r[j] * hp[j];
        }
        d_rh.iter_mut().for_each(|v| *v = T::zero());
        for (j, &g) in dac.iter().enumerate() {
            let row = (2 * h + j) * h;
            axpy(g, &uw[row..row + h], &mut d_rh);
            axpy(g, &rh, &mut dw_hidden[row..row + h]);
        }
        for j in 0..h {
            let dr = d_rh[j] * hp[j];
            carry[j] = carry[j] + d_rh[j] * r[j];
            dp[h + j] = dr * r[j] * (T::one() - r[j]);
        }
        for j in 0..2 * h {
            let g = dp[j];
            if g != T::zero() {
                axpy(g, &uw[j * h..(j + 1) * h], &mut carry);
                axpy(g, hp, &mut dw_hidden[j * h..(j + 1) * h]);
            }
        }
    }
    let mut dw_input = vec![T::zero(); 3 * h * d];
    matmul_tn_acc(&d_pre, x.data(), len, 3 * h, d, &mut dw_input);
    let mut dx = vec![T::zero(); len * d];
    matmul_nn_acc(&d_pre, p.w_input.data(), len, 3 * h, d, &mut dx);
    let mut dbias = vec![T::zero(); 3 * h];
    for row in d_pre.chunks(3 * h) {
        for (a, &b) in dbias.iter_mut().zip(row) {
            *a = *a + b;
        }
    }
    RecurrentGrads {
        dx,
        dh0: carry,
        dc0: Vec::new(),
        dw_input,
        dw_hidden,
        dbias,
    }
}

/// One GRU update: `x_t` is `[d]`, `h_prev` is `[H]`; returns `h_t` `[H]`.
pub fn gru_step<T: Real>(
    x_t: &Tensor<T>,
    h_prev: &Tensor<T>,
    p: &GruParams<T>,
) -> Result<Tensor<T>, NnError> {
    let (d, h) = p.validate()?;
    check_shape("gru_step", x_t, &[d])?;
    check_shape("gru_step", h_prev, &[h])?;
    let x = Tensor::from_vec(&[1, d], x_t.data().to_vec())?;
    let (out, _) = gru_forward_traced(&x, Some(h_prev), p, false)?;
    Tensor::from_vec(&[h], out.into_data())
}

/// Runs a GRU over an `L×d` sequence, returning all hidden states `L×H`
/// aligned to sequence positions. With `reverse`, the scan runs from the last
/// position to the first.
pub fn gru_sequence<T: Real>(
    x: &Tensor<T>,
    h0: Option<&Tensor<T>>,
    p: &GruParams<T>,
    reverse: bool,
) -> Result<Tensor<T>, NnError> {
    gru_forward_traced(x, h0, p, reverse).map(|(o, _)| o)
}

/// Forward and backward GRU scans from zero initial states, concatenated per
/// position: output row `t` is `[h_fwd(t) ∥ h_bwd(t)]`, shape `L×2H`.
pub fn bidirectional_gru<T: Real>(
    x: &Tensor<T>,
    fwd: &GruParams<T>,
    bwd: &GruParams<T>,
) -> Result<Tensor<T>, NnError> {
    if fwd.hidden() != bwd.hidden() {
        return Err(shape_err(
            "bidirectional_gru",
            &[fwd.hidden()],
            &[bwd.hidden()],
        ));
    }
    let f = gru_sequence(x, None, fwd, false)?;
    let b = gru_sequence(x, None, bwd, true)?;
    concat_cols(&[&f, &b])
}

// ---------------------------------------------------------------------------
// LSTM

/// LSTM parameters, gate blocks stacked row-wise in the order input (i),
/// forget (f), candidate (g), output (o):
///
/// * `w_input` : `4H×d`
/// * `w_hidden`: `4H×H`
/// * `bias`    : `4H`
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    pub w_input: Tensor<T>,
    pub w_hidden: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LstmParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w_input: Tensor::zeros(&[4 * hidden, input]),
            w_hidden: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn input(&self) -> usize {
        self.w_input.cols()
    }

    pub fn validate(&self) -> Result<(usize, usize), NnError> {
        let (rows, d) = check_matrix("lstm", &self.w_input)?;
        let (_, h) = check_matrix("lstm", &self.w_hidden)?;
        if rows != 4 * h {
            return Err(shape_err("lstm", &[4 * h, d], self.w_input.shape()));
        }
        check_shape("lstm", &self.w_hidden, &[4 * h, h])?;
        check_shape("lstm", &self.bias, &[4 * h])?;
        Ok((d, h))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LstmTrace<T> {
    /// activated gates per position, `L×4H` in (i, f, g, o) order
    gates: Vec<T>,
    cell: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
}

type LstmOutputs<T> = (Tensor<T>, Tensor<T>, LstmTrace<T>);

/// Returns the hidden sequence `L×H` and the cell sequence `L×H`.
pub(crate) fn lstm_forward_traced<T: Real>(
    x: &Tensor<T>,
    state0: Option<(&Tensor<T>, &Tensor<T>)>,
    p: &LstmParams<T>,
    reverse: bool,
) -> Result<LstmOutputs<T>, NnError> {
    let (d, h) = p.validate()?;
    let (len, xd) = check_matrix("lstm", x)?;
    if xd != d {
        return Err(shape_err("lstm", &[len, d], x.shape()));
    }
    let (mut hs, mut cs) = match state0 {
        Some((h0, c0)) => {
            check_shape("lstm", h0, &[h])?;
            check_shape("lstm", c0, &[h])?;
            (h0.data().to_vec(), c0.data().to_vec())
        }
        None => (vec![T::zero(); h], vec![T::zero(); h]),
    };
    let mut pre = matmul_nt(x.data(), p.w_input.data(), len, d, 4 * h);
    for row in pre.chunks_mut(4 * h) {
        for (a, &b) in row.iter_mut().zip(p.bias.data()) {
            *a = *a + b;
        }
    }
    let ut = transpose(p.w_hidden.data(), 4 * h, h);
    let mut trace = LstmTrace {
        gates: vec![T::zero(); len * 4 * h],
        cell: vec![T::zero(); len * h],
        h_prev: vec![T::zero(); len * h],
        c_prev: vec![T::zero(); len * h],
    };
    let mut out_h = vec![T::zero(); len * h];
    let mut out_c = vec![T::zero(); len * h];
    for t in scan_order(len, reverse) {
        let span = t * h..(t + 1) * h;
        trace.h_prev[span.clone()].copy_from_slice(&hs);
        trace.c_prev[span.clone()].copy_from_slice(&cs);
        let g = &mut trace.gates[t * 4 * h..(t + 1) * 4 * h];
        g.copy_from_slice(&pre[t * 4 * h..(t + 1) * 4 * h]);
        accumulate_vt(&hs, &ut, 4 * h, 0..4 * h, g);
        for (j, v) in g.iter_mut().enumerate() {
            *v = if (2 * h..3 * h).contains(&j) {
                v.tanh()
            } else {
                sigmoid(*v)
            };
        }
        for j in 0..h {
            let c = g[h + j] * cs[j] + g[j] * g[2 * h + j];
            cs[j] = c;
            hs[j] = g[3 * h + j] * c.tanh();
        }
        trace.cell[span.clone()].copy_from_slice(&cs);
        out_h[span.clone()].copy_from_slice(&hs);
        out_c[span].copy_from_slice(&cs);
    }
    Ok((
        Tensor::from_vec(&[len, h], out_h)?,
        Tensor::from_vec(&[len, h], out_c)?,
        trace,
    ))
}

pub(crate) fn lstm_backward<T: Real>(
    x: &Tensor<T>,
    p: &LstmParams<T>,
    trace: &LstmTrace<T>,
    reverse: bool,
    d_h_out: &[T],
    d_c_out: Option<&[T]>,
) -> RecurrentGrads<T> {
    let d = p.input();
    let h = p.hidden();
    let len = x.rows();
    let uw = p.w_hidden.data();
    let mut d_pre = vec![T::zero(); len * 4 * h];
    let mut dw_hidden = vec![T::zero(); 4 * h * h];
    let mut carry_h = vec![T::zero(); h];
    let mut carry_c = vec![T::zero(); h];
    for t in scan_order(len, reverse).into_iter().rev() {
        let span = t * h..(t + 1) * h;
        let g = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
        let c = &trace.cell[span.clone()];
        let cp = &trace.c_prev[span.clone()];
        let hp = &trace.h_prev[span.clone()];
        let dp = &mut d_pre[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let (gi, gf, gg, go) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let dh = d_h_out[t * h + j] + carry_h[j];
            let tc = c[j].tanh();
            let mut dc = carry_c[j] + dh * go * (T::one() - tc * tc);
            if let Some(ext) = d_c_out {
                dc = dc + ext[t * h + j];
            }
            dp[j] = dc * gg * gi * (T::one() - gi);
            dp[h + j] = dc * cp[j] * gf * (T::one() - gf);
            dp[2 * h + j] = dc * gi * (T::one() - gg * gg);
            dp[3 * h + j] = dh * tc * go * (T::one() - go);
            carry_c[j] = dc * gf;
        }
        carry_h.iter_mut().for_each(|v| *v = T::zero());
        for j in 0..4 * h {
            let gj = dp[j];
            if gj != T::zero() {
                axpy(gj, &uw[j * h..(j + 1) * h], &mut carry_h);
                axpy(gj, hp, &mut dw_hidden[j * h..(j + 1) * h]);
            }
        }
    }
    let mut dw_input = vec![T::zero(); 4 * h * d];
    matmul_tn_acc(&d_pre, x.data(), len, 4 * h, d, &mut dw_input);
    let mut dx = vec![T::zero(); len * d];
    matmul_nn_acc(&d_pre, p.w_input.data(), len, 4 * h, d, &mut dx);
    let mut dbias = vec![T::zero(); 4 * h];
    for row in d_pre.chunks(4 * h) {
        for (a, &b) in dbias.iter_mut().zip(row) {
            *a = *a + b;
        }
    }
    RecurrentGrads {
        dx,
        dh0: carry_h,
        dc0: carry_c,
        dw_input,
        dw_hidden,
        dbias,
    }
}

/// One LSTM update; returns `(h_t, c_t)`.
pub fn lstm_step<T: Real>(
    x_t: &Tensor<T>,
    state: (&Tensor<T>, &Tensor<T>),
    p: &LstmParams<T>,
) -> Result<(Tensor<T>, Tensor<T>), NnError> {
    let (d, h) = p.validate()?;
    check_shape("lstm_step", x_t, &[d])?;
    let x = Tensor::from_vec(&[1, d], x_t.data().to_vec())?;
    let (hs, cs, _) = lstm_forward_traced(&x, Some(state), p, false)?;
    Ok((
        Tensor::from_vec(&[h], hs.into_data())?,
        Tensor::from_vec(&[h], cs.into_data())?,
    ))
}

/// Runs an LSTM from a zero state, returning hidden states `L×H`.
pub fn lstm_sequence<T: Real>(x: &Tensor<T>, p: &LstmParams<T>) -> Result<Tensor<T>, NnError> {
    lstm_forward_traced(x, None, p, false).map(|(h, _, _)| h)
}

// ---------------------------------------------------------------------------
// Conv1D

/// Valid, stride-1 cross-correlation along time followed by ReLU.
/// `x` is `L×d`, `kernels` is `K×k×d`, `bias` is `K`; output is `(L-k+1)×K`.
pub fn conv1d_forward<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let (len, d) = check_matrix("conv1d", x)?;
    let ks = kernels.shape();
    if ks.len() != 3 || ks[2] != d {
        return Err(shape_err(
            "conv1d",
            &[ks.first().copied().unwrap_or(0), 0, d],
            ks,
        ));
    }
    let (filters, width) = (ks[0], ks[1]);
    check_shape("conv1d", bias, &[filters])?;
    if width > len {
        return Err(NnError::KernelTooLong { kernel: width, len });
    }
    let steps = len - width + 1;
    let span = width * d;
    let mut out = vec![T::zero(); steps * filters];
    let xd = x.data();
    let kd = kernels.data();
    for t in 0..steps {
        let window = &xd[t * d..t * d + span];
        for f in 0..filters {
            let v = bias.data()[f] + dot(window, &kd[f * span..(f + 1) * span]);
            out[t * filters + f] = if v > T::zero() { v } else { T::zero() };
        }
    }
    Tensor::from_vec(&[steps, filters], out)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Vec<T>,
    pub dk: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn conv1d_backward<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    out: &Tensor<T>,
    d_out: &[T],
) -> ConvGrads<T> {
    let d = x.cols();
    let (filters, width) = (kernels.shape()[0], kernels.shape()[1]);
    let span = width * d;
    let steps = out.rows();
    let xd = x.data();
    let kd = kernels.data();
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); kernels.len()];
    let mut db = vec![T::zero(); filters];
    for t in 0..steps {
        for f in 0..filters {
            let i = t * filters + f;
            if out.data()[i] <= T::zero() {
                continue;
            }
            let g = d_out[i];
            db[f] = db[f] + g;
            axpy(
                g,
                &xd[t * d..t * d + span],
                &mut dk[f * span..(f + 1) * span],
            );
            axpy(
                g,
                &kd[f * span..(f + 1) * span],
                &mut dx[t * d..t * d + span],
            );
        }
    }
    ConvGrads { dx, dk, db }
}

// ---------------------------------------------------------------------------
// Pooling

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Non-overlapping window maxima along time; trailing rows that do not
    /// fill a window are dropped.
    MaxWindow(usize),
    GlobalAvg,
    GlobalMax,
}

#[derive(Clone, Debug)]
pub(crate) enum PoolTrace {
    /// flat input index selected for each output element
    Argmax(Vec<usize>),
    Avg {
        valid: usize,
    },
}

pub(crate) fn pool_traced<T: Real>(
    x: &Tensor<T>,
    mode: PoolMode,
    valid_length: Option<usize>,
) -> Result<(Tensor<T>, PoolTrace), NnError> {
    let (rows, cols) = check_matrix("pool", x)?;
    let xd = x.data();
    match mode {
        PoolMode::MaxWindow(w) => {
            if w == 0 || w > rows {
                return Err(NnError::WindowTooLarge {
                    window: w,
                    len: rows,
                });
            }
            let n_out = rows / w;
            let mut out = vec![T::zero(); n_out * cols];
            let mut arg = vec![0usize; n_out * cols];
            for o in 0..n_out {
                for c in 0..cols {
                    let mut best = o * w * cols + c;
                    for t in o * w + 1..(o + 1) * w {
                        let i = t * cols + c;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    out[o * cols + c] = xd[best];
                    arg[o * cols + c] = best;
                }
            }
            Ok((
                Tensor::from_vec(&[n_out, cols], out)?,
                PoolTrace::Argmax(arg),
            ))
        }
        PoolMode::GlobalAvg => {
            let valid = effective_length(rows, valid_length);
            let mut out = vec![T::zero(); cols];
            for t in 0..valid {
                for (o, &v) in out.iter_mut().zip(x.row(t)) {
                    *o = *o + v;
                }
            }
            let n = T::of_f64(valid as f64);
            out.iter_mut().for_each(|v| *v = *v / n);
            Ok((Tensor::from_vec(&[cols], out)?, PoolTrace::Avg { valid }))
        }
        PoolMode::GlobalMax => {
            let valid = effective_length(rows, valid_length);
            let mut out = vec![T::zero(); cols];
            let mut arg = vec![0usize; cols];
            for c in 0..cols {
                let mut best = c;
                for t in 1..valid {
                    let i = t * cols + c;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out[c] = xd[best];
                arg[c] = best;
            }
            Ok((Tensor::from_vec(&[cols], out)?, PoolTrace::Argmax(arg)))
        }
    }
}

/// Valid prefix length, clamped to `[1, rows]` so an all-padding input still
/// pools one row.
fn effective_length(rows: usize, valid: Option<usize>) -> usize {
    valid.unwrap_or(rows).clamp(1, rows.max(1))
}

pub(crate) fn pool_backward<T: Real>(
    input_len: usize,
    cols: usize,
    trace: &PoolTrace,
    d_out: &[T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    match trace {
        PoolTrace::Argmax(arg) => {
            for (&i, &g) in arg.iter().zip(d_out) {
                dx[i] = dx[i] + g;
            }
        }
        PoolTrace::Avg { valid } => {
            let n = T::of_f64(*valid as f64);
            for t in 0..*valid {
                for c in 0..cols {
                    dx[t * cols + c] = d_out[c] / n;
                }
            }
        }
    }
    dx
}

/// Pools a `T×C` sequence. `valid_length` restricts the global modes to the
/// leading rows (padding excluded); it is clamped to at least one row.
pub fn pool<T: Real>(
    x: &Tensor<T>,
    mode: PoolMode,
    valid_length: Option<usize>,
) -> Result<Tensor<T>, NnError> {
    pool_traced(x, mode, valid_length).map(|(o, _)| o)
}

// ---------------------------------------------------------------------------
// Dropout

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Infer,
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1/(1-rate)`.
pub(crate) fn dropout_mask<T: Real, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::of_f64(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Tensor<T> {
    assert!(
        (0.0..1.0).contains(&rate),
        "dropout rate must lie in [0, 1)"
    );
    if mode == DropoutMode::Infer || rate == 0.0 {
        return x.clone();
    }
    let mask = dropout_mask::<T, R>(x.len(), rate, rng);
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Tensor::from_vec(x.shape(), data).expect("shape preserved")
}

// ---------------------------------------------------------------------------
// Shape helpers

/// Concatenates along the last axis. All inputs must share their leading shape.
pub fn concat_cols<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>, NnError> {
    let first = parts.first().ok_or(NnError::ShapeMismatch {
        op: "concat",
        expected: vec![1],
        got: vec![0],
    })?;
    let lead = &first.shape()[..first.shape().len() - 1];
    for p in parts {
        if &p.shape()[..p.shape().len() - 1] != lead {
            return Err(shape_err("concat", first.shape(), p.shape()));
        }
    }
    let rows = first.rows();
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::from_vec(&shape, data)
}
