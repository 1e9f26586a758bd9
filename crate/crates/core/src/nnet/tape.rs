//! Reverse-mode differentiation over layer-level operations.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records every operation of one
//! forward pass in execution order. [`Tape::backward`] walks the record in
//! reverse, accumulating parameter gradients into a [`Gradients`] buffer.
//! Gradients sum across reuse of a node or parameter.

use rand_chacha::ChaCha8Rng;

use super::layers::{
    self, Activation, GruParams, GruTrace, LstmParams, LstmTrace, PoolMode, PoolTrace,
};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Parameter nodes for a recurrent layer (GRU or LSTM share the layout).
#[derive(Clone, Copy, Debug)]
pub struct RecurrentNodes {
    pub w_input: NodeId,
    pub w_hidden: NodeId,
    pub bias: NodeId,
}

enum Op<T> {
    Constant,
    Param(ParamId),
    Embedding {
        table: NodeId,
        indices: Vec<usize>,
    },
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        activation: Activation,
    },
    Gru {
        x: NodeId,
        h0: Option<NodeId>,
        p: RecurrentNodes,
        reverse: bool,
        trace: GruTrace<T>,
    },
    Lstm {
        x: NodeId,
        state0: Option<(NodeId, NodeId)>,
        p: RecurrentNodes,
        emit_cell: bool,
        trace: LstmTrace<T>,
    },
    Conv1d {
        x: NodeId,
        kernels: NodeId,
        bias: NodeId,
    },
    Pool {
        x: NodeId,
        trace: PoolTrace,
    },
    Dropout {
        x: NodeId,
        mask: Vec<T>,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    SelectRow {
        x: NodeId,
        row: usize,
    },
    Sigmoid {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Sum {
        x: NodeId,
    },
    BceWithLogit {
        logit: NodeId,
        target: T,
        prob: T,
    },
}

struct Node<T> {
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor<T>>,
    op: Op<T>,
}

/// Probability clamp used by the binary cross-entropy loss.
pub const BCE_EPSILON: f64 = 1e-7;

pub struct Tape<'a, T: Real> {
    params: &'a ParamStore<T>,
    nodes: Vec<Node<T>>,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a, T: Real> Tape<'a, T> {
    /// Inference-mode tape: dropout is the identity.
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            rng: None,
        }
    }

    /// Training-mode tape: dropout masks are drawn from `rng`.
    pub fn training(params: &'a ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.get(*p),
            _ => unreachable!("only parameter nodes are stored by reference"),
        }
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn embedding(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, NnError> {
        let out = layers::embedding_forward(indices, self.value(table))?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn dense(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        activation: Activation,
    ) -> Result<NodeId, NnError> {
        let out = layers::dense_forward(self.value(x), self.value(w), self.value(b), activation)?;
        Ok(self.push(
            out,
            Op::Dense {
                x,
                w,
                b,
                activation,
            },
        ))
    }

    fn gru_params(&self, p: RecurrentNodes) -> GruParams<T> {
        GruParams {
            w_input: self.value(p.w_input).clone(),
            w_hidden: self.value(p.w_hidden).clone(),
            bias: self.value(p.bias).clone(),
        }
    }

    fn lstm_params(&self, p: RecurrentNodes) -> LstmParams<T> {
        LstmParams {
            w_input: self.value(p.w_input).clone(),
            w_hidden: self.value(p.w_hidden).clone(),
            bias: self.value(p.bias).clone(),
        }
    }

    /// GRU over an `L×d` sequence; output `L×H` aligned to positions.
    pub fn gru(
        &mut self,
        x: NodeId,
        h0: Option<NodeId>,
        p: RecurrentNodes,
        reverse: bool,
    ) -> Result<NodeId, NnError> {
        let params = self.gru_params(p);
        let (out, trace) =
            layers::gru_forward_traced(self.value(x), h0.map(|h| self.value(h)), &params, reverse)?;
        Ok(self.push(
            out,
            Op::Gru {
                x,
                h0,
                p,
                reverse,
                trace,
            },
        ))
    }

    /// Forward and reversed GRU scans concatenated per position, `L×2H`.
    pub fn bidirectional_gru(
        &mut self,
        x: NodeId,
        fwd: RecurrentNodes,
        bwd: RecurrentNodes,
    ) -> Result<NodeId, NnError> {
        let f = self.gru(x, None, fwd, false)?;
        let b = self.gru(x, None, bwd, true)?;
        if self.value(f).cols() != self.value(b).cols() {
            return Err(NnError::ShapeMismatch {
                op: "bidirectional_gru",
                expected: self.value(f).shape().to_vec(),
                got: self.value(b).shape().to_vec(),
            });
        }
        self.concat(&[f, b])
    }

    /// LSTM over an `L×d` sequence. The output is the hidden sequence `L×H`,
    /// or `L×2H` holding `[h ∥ c]` per position when `emit_cell` is set.
    pub fn lstm(
        &mut self,
        x: NodeId,
        state0: Option<(NodeId, NodeId)>,
        p: RecurrentNodes,
        emit_cell: bool,
    ) -> Result<NodeId, NnError> {
        let params = self.lstm_params(p);
        let s0 = state0.map(|(h, c)| (self.value(h), self.value(c)));
        let (hs, cs, trace) = layers::lstm_forward_traced(self.value(x), s0, &params, false)?;
        let out = if emit_cell {
            layers::concat_cols(&[&hs, &cs])?
        } else {
            hs
        };
        Ok(self.push(
            out,
            Op::Lstm {
                x,
                state0,
                p,
                emit_cell,
                trace,
            },
        ))
    }

    pub fn conv1d(&mut self, x: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId, NnError> {
        let out = layers::conv1d_forward(self.value(x), self.value(kernels), self.value(bias))?;
        Ok(self.push(out, Op::Conv1d { x, kernels, bias }))
    }

    pub fn pool(
        &mut self,
        x: NodeId,
        mode: PoolMode,
        valid_length: Option<usize>,
    ) -> Result<NodeId, NnError> {
        let (out, trace) = layers::pool_traced(self.value(x), mode, valid_length)?;
        Ok(self.push(out, Op::Pool { x, trace }))
    }

    /// Inverted dropout in training mode; the identity otherwise.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> NodeId {
        assert!(
            (0.0..1.0).contains(&rate),
            "dropout rate must lie in [0, 1)"
        );
        let n = self.value(x).len();
        let Some(rng) = self.rng.as_deref_mut() else {
            return x;
        };
        if rate == 0.0 {
            return x;
        }
        let mask: Vec<T> = layers::dropout_mask(n, rate, rng);
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::from_vec(v.shape(), data).expect("shape preserved");
        self.push(out, Op::Dropout { x, mask })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = layers::concat_cols(&vals)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Row `row` of a `T×C` sequence as a `C` vector.
    ///
    /// # Panics
    /// If `row` is out of range.
    pub fn select_row(&mut self, x: NodeId, row: usize) -> NodeId {
        let v = self.value(x);
        let out = Tensor::vector(v.row(row).to_vec());
        self.push(out, Op::SelectRow { x, row })
    }

    /// Final row of a `T×C` sequence as a `C` vector.
    pub fn last_row(&mut self, x: NodeId) -> NodeId {
        let rows = self.value(x).rows();
        self.select_row(x, rows - 1)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(layers::sigmoid);
        self.push(out, Op::Sigmoid { x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NnError::ShapeMismatch {
                op: "add",
                expected: va.shape().to_vec(),
                got: vb.shape().to_vec(),
            });
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NnError::ShapeMismatch {
                op: "mul",
                expected: va.shape().to_vec(),
                got: vb.shape().to_vec(),
            });
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `target`, with the
    /// probability clamped to `[ε, 1-ε]`. The gradient w.r.t. the logit is
    /// `p - y`.
    pub fn bce_with_logit(&mut self, logit: NodeId, target: T) -> Result<NodeId, NnError> {
        let v = self.value(logit);
        if !v.is_scalar() {
            return Err(NnError::NonScalarLoss {
                shape: v.shape().to_vec(),
            });
        }
        let prob = layers::sigmoid(v.item());
        let loss = bce(prob, target);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogit {
                logit,
                target,
                prob,
            },
        ))
    }

    /// Fresh gradient buffers holding `∂loss/∂θ` for every parameter.
    pub fn gradients(&self, loss: NodeId) -> Result<Gradients<T>, NnError> {
        let mut grads = Gradients::zeros_like(self.params);
        self.backward(loss, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates `∂loss/∂θ` into `grads`.
    pub fn backward(&self, loss: NodeId, grads: &mut Gradients<T>) -> Result<(), NnError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NnError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut node_grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut sink = Sink {
            nodes: &self.nodes,
            node_grads: &mut node_grads,
            params: grads,
        };
        sink.add(loss, &[T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = sink.node_grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g, &mut sink);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], sink: &mut Sink<'_, T>) {
        let node = &self.nodes[i];
        let out = || node.value.as_ref().expect("non-parameter node has a value");
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Embedding { table, indices } => {
                let dim = self.value(*table).cols();
                sink.with(*table, |buf| {
                    layers::embedding_backward(indices, dim, g, buf)
                });
            }
            Op::Dense {
                x,
                w,
                b,
                activation,
            } => {
                let r = layers::dense_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    out().data(),
                    *activation,
                    g,
                );
                sink.add(*x, &r.dx);
                sink.add(*w, &r.dw);
                sink.add(*b, &r.db);
            }
            Op::Gru {
                x,
                h0,
                p,
                reverse,
                trace,
            } => {
                let params = self.gru_params(*p);
                let r = layers::gru_backward(self.value(*x), &params, trace, *reverse, g);
                sink.add(*x, &r.dx);
                if let Some(h) = h0 {
                    sink.add(*h, &r.dh0);
                }
                sink.add(p.w_input, &r.dw_input);
                sink.add(p.w_hidden, &r.dw_hidden);
                sink.add(p.bias, &r.dbias);
            }
            Op::Lstm {
                x,
                state0,
                p,
                emit_cell,
                trace,
            } => {
                let params = self.lstm_params(*p);
                let h = params.hidden();
                let (dh, dc) = if *emit_cell {
                    let rows = g.len() / (2 * h);
                    let mut dh = Vec::with_capacity(rows * h);
                    let mut dc = Vec::with_capacity(rows * h);
                    for r in g.chunks(2 * h) {
                        dh.extend_from_slice(&r[..h]);
                        dc.extend_from_slice(&r[h..]);
                    }
                    (dh, Some(dc))
                } else {
                    (g.to_vec(), None)
                };
                let r = layers::lstm_backward(
                    self.value(*x),
                    &params,
                    trace,
                    false,
                    &dh,
                    dc.as_deref(),
                );
                sink.add(*x, &r.dx);
                if let Some((h0, c0)) = state0 {
                    sink.add(*h0, &r.dh0);
                    sink.add(*c0, &r.dc0);
                }
                sink.add(p.w_input, &r.dw_input);
                sink.add(p.w_hidden, &r.dw_hidden);
                sink.add(p.bias, &r.dbias);
            }
            Op::Conv1d { x, kernels, bias } => {
                let r = layers::conv1d_backward(self.value(*x), self.value(*kernels), out(), g);
                sink.add(*x, &r.dx);
                sink.add(*kernels, &r.dk);
                sink.add(*bias, &r.db);
            }
            Op::Pool { x, trace } => {
                let xv = self.value(*x);
                let dx = layers::pool_backward(xv.len(), xv.cols(), trace, g);
                sink.add(*x, &dx);
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<T> = g.iter().zip(mask).map(|(&a, &m)| a * m).collect();
                sink.add(*x, &dx);
            }
            Op::Concat { parts } => {
                let rows = out().rows();
                let total = out().cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut dp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                    }
                    sink.add(p, &dp);
                    offset += c;
                }
            }
            Op::SelectRow { x, row } => {
                let start = row * self.value(*x).cols();
                sink.with(*x, |buf| {
                    for (a, &b) in buf[start..].iter_mut().zip(g) {
                        *a = *a + b;
                    }
                });
            }
            Op::Sigmoid { x } => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(out().data())
                    .map(|(&d, &s)| d * s * (T::one() - s))
                    .collect();
                sink.add(*x, &dx);
            }
            Op::Add { a, b } => {
                sink.add(*a, g);
                sink.add(*b, g);
            }
            Op::Mul { a, b } => {
                let da: Vec<T> = g
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(&d, &v)| d * v)
                    .collect();
                let db: Vec<T> = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(&d, &v)| d * v)
                    .collect();
                sink.add(*a, &da);
                sink.add(*b, &db);
            }
            Op::Sum { x } => {
                let n = self.value(*x).len();
                sink.add(*x, &vec![g[0]; n]);
            }
            Op::BceWithLogit {
                logit,
                target,
                prob,
            } => {
                sink.add(*logit, &[g[0] * (*prob - *target)]);
            }
        }
    }
}

/// Routes gradient contributions either to an intermediate node buffer or,
/// for parameter nodes, straight into the parameter gradient.
struct Sink<'s, T: Real> {
    nodes: &'s [Node<T>],
    node_grads: &'s mut Vec<Option<Vec<T>>>,
    params: &'s mut Gradients<T>,
}

impl<T: Real> Sink<'_, T> {
    fn with(&mut self, id: NodeId, f: impl FnOnce(&mut [T])) {
        match &self.nodes[id.0].op {
            Op::Param(p) => f(self.params.get_mut(*p).data_mut()),
            Op::Constant => {}
            _ => {
                let len = self.nodes[id.0].value.as_ref().map_or(0, |v| v.len());
                let buf = self.node_grads[id.0].get_or_insert_with(|| vec![T::zero(); len]);
                f(buf)
            }
        }
    }

    fn add(&mut self, id: NodeId, g: &[T]) {
        self.with(id, |buf| {
            for (a, &b) in buf.iter_mut().zip(g) {
                *a = *a + b;
            }
        });
    }
}

/// Binary cross-entropy with the probability clamped to `[ε, 1-ε]`.
pub fn bce<T: Real>(p: T, y: T) -> T {
    let eps = T::of_f64(BCE_EPSILON);
    let pc = p.max(eps).min(T::one() - eps);
    -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln())
}
