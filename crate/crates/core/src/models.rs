//! Declarative layer stacks for the six classifier architectures, model
//! construction, prediction and checkpoint persistence.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nnet::params::{glorot_bound, uniform};
use crate::nnet::{
    Activation, FlushDenormals, NnError, NodeId, ParamId, ParamStore, PoolMode, Real,
    RecurrentNodes, Tape, Tensor,
};
use crate::tokenizer::TokenSequence;

pub mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, FORMAT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("sequence length {got} does not match the model's {expected}")]
    SequenceLengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch (file truncated or corrupted)")]
    ChecksumMismatch,
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// The six named architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Arch {
    Bigru,
    Cnn1d,
    Lstm,
    CnnLstm,
    CnnGru,
    CnnLstmGmp,
}

impl Arch {
    pub const ALL: [Arch; 6] = [
        Arch::Bigru,
        Arch::Cnn1d,
        Arch::Lstm,
        Arch::CnnLstm,
        Arch::CnnGru,
        Arch::CnnLstmGmp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Bigru => "bigru",
            Arch::Cnn1d => "cnn1d",
            Arch::Lstm => "lstm",
            Arch::CnnLstm => "cnn_lstm",
            Arch::CnnGru => "cnn_gru",
            Arch::CnnLstmGmp => "cnn_lstm_gmp",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Size knobs shared by all architectures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub rnn_hidden: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub pool_window: usize,
    /// Hidden dense widths. The BiGRU head uses all of them; the other
    /// architectures use the first.
    pub dense_units: Vec<usize>,
    pub dropout: f64,
    /// exclude padded positions from the BiGRU's average pooling
    pub masked_pooling: bool,
}

impl Hyperparams {
    pub fn new(vocab_size: usize, seq_len: usize) -> Self {
        Hyperparams {
            vocab_size,
            seq_len,
            embed_dim: 128,
            rnn_hidden: 64,
            conv_filters: 128,
            conv_width: 5,
            pool_window: 2,
            dense_units: vec![64, 32],
            dropout: 0.3,
            masked_pooling: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Embedding {
        vocab_size: usize,
        dim: usize,
    },
    BiGru {
        input: usize,
        hidden: usize,
    },
    /// With `return_sequences == false` the layer emits the hidden state at
    /// the last non-padding position.
    Gru {
        input: usize,
        hidden: usize,
        return_sequences: bool,
    },
    Lstm {
        input: usize,
        hidden: usize,
        return_sequences: bool,
    },
    Conv1d {
        input: usize,
        filters: usize,
        width: usize,
    },
    MaxPool {
        window: usize,
    },
    GlobalAvgPool {
        masked: bool,
    },
    GlobalMaxPool,
    Dense {
        input: usize,
        units: usize,
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
    /// Runs each branch on the same input and concatenates their vector outputs.
    Parallel {
        branches: Vec<Vec<LayerSpec>>,
    },
    /// One-unit sigmoid head; the network emits its logit.
    Output {
        input: usize,
    },
}

impl LayerSpec {
    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Embedding { .. } => "embedding",
            LayerSpec::BiGru { .. } => "bigru",
            LayerSpec::Gru { .. } => "gru",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::GlobalAvgPool { .. } => "global_avg_pool",
            LayerSpec::GlobalMaxPool => "global_max_pool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Parallel { .. } => "parallel",
            LayerSpec::Output { .. } => "output",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub seq_len: usize,
    pub layers: Vec<LayerSpec>,
}

/// Shape flowing between layers during validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Flow {
    Tokens {
        len: usize,
    },
    /// `aligned` means rows still correspond one-to-one with token positions
    Seq {
        len: usize,
        dim: usize,
        aligned: bool,
    },
    Vector {
        dim: usize,
    },
    Logit,
}

impl fmt::Display for Flow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flow::Tokens { len } => write!(f, "tokens[{len}]"),
            Flow::Seq { len, dim, .. } => write!(f, "sequence[{len}x{dim}]"),
            Flow::Vector { dim } => write!(f, "vector[{dim}]"),
            Flow::Logit => write!(f, "logit"),
        }
    }
}

fn dense_head(h: &Hyperparams, input: usize, units: &[usize]) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut dim = input;
    for &u in units {
        layers.push(LayerSpec::Dense {
            input: dim,
            units: u,
            activation: Activation::Relu,
        });
        layers.push(LayerSpec::Dropout { rate: h.dropout });
        dim = u;
    }
    layers.push(LayerSpec::Output { input: dim });
    layers
}

impl ModelSpec {
    /// Expands a named architecture into its layer stack.
    pub fn named(arch: Arch, h: &Hyperparams) -> Self {
        let d = h.embed_dim;
        let hid = h.rnn_hidden;
        let emb = LayerSpec::Embedding {
            vocab_size: h.vocab_size,
            dim: d,
        };
        let first_dense = &h.dense_units[..h.dense_units.len().min(1)];
        let conv = LayerSpec::Conv1d {
            input: d,
            filters: h.conv_filters,
            width: h.conv_width,
        };
        let mut layers = vec![emb];
        match arch {
            Arch::Bigru => {
                layers.push(LayerSpec::BiGru {
                    input: d,
                    hidden: hid,
                });
                layers.push(LayerSpec::GlobalAvgPool {
                    masked: h.masked_pooling,
                });
                layers.extend(dense_head(h, 2 * hid, &h.dense_units));
            }
            Arch::Cnn1d => {
                layers.push(conv);
                layers.push(LayerSpec::MaxPool {
                    window: h.pool_window,
                });
                layers.push(LayerSpec::GlobalMaxPool);
                layers.extend(dense_head(h, h.conv_filters, first_dense));
            }
            Arch::Lstm => {
                layers.push(LayerSpec::Lstm {
                    input: d,
                    hidden: hid,
                    return_sequences: false,
                });
                layers.extend(dense_head(h, hid, first_dense));
            }
            Arch::CnnLstm | Arch::CnnGru => {
                let recurrent = if arch == Arch::CnnLstm {
                    LayerSpec::Lstm {
                        input: d,
                        hidden: hid,
                        return_sequences: false,
                    }
                } else {
                    LayerSpec::Gru {
                        input: d,
                        hidden: hid,
                        return_sequences: false,
                    }
                };
                layers.push(LayerSpec::Parallel {
                    branches: vec![vec![conv, LayerSpec::GlobalMaxPool], vec![recurrent]],
                });
                layers.extend(dense_head(h, h.conv_filters + hid, first_dense));
            }
            Arch::CnnLstmGmp => {
                layers.push(conv);
                layers.push(LayerSpec::Lstm {
                    input: h.conv_filters,
                    hidden: hid,
                    return_sequences: true,
                });
                layers.push(LayerSpec::GlobalMaxPool);
                layers.extend(dense_head(h, hid, first_dense));
            }
        }
        ModelSpec {
            arch,
            seq_len: h.seq_len,
            layers,
        }
    }

    /// Checks that adjacent layers compose and the stack ends in the output head.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.seq_len == 0 {
            return Err(ModelError::InvalidSpec("seq_len must be positive".into()));
        }
        let flow = validate_stack(&self.layers, Flow::Tokens { len: self.seq_len }, "input")?;
        if flow != Flow::Logit {
            return Err(ModelError::InvalidSpec(format!(
                "stack ends in {flow}; the final layer must be the one-unit output head"
            )));
        }
        Ok(())
    }
}

fn validate_stack(
    layers: &[LayerSpec],
    mut flow: Flow,
    mut prev: &str,
) -> Result<Flow, ModelError> {
    for layer in layers {
        flow = step_flow(layer, flow).map_err(|why| {
            ModelError::InvalidSpec(format!("`{}` cannot follow `{prev}`: {why}", layer.kind()))
        })?;
        prev = layer.kind();
    }
    Ok(flow)
}

fn step_flow(layer: &LayerSpec, flow: Flow) -> Result<Flow, String> {
    let need_seq = |input: usize| match flow {
        Flow::Seq { len, dim, aligned } if dim == input => Ok((len, aligned)),
        other => Err(format!("expects sequence[Lx{input}], got {other}")),
    };
    let positive = |name: &str, v: usize| {
        if v == 0 {
            Err(format!("{name} must be positive"))
        } else {
            Ok(())
        }
    };
    match *layer {
        LayerSpec::Embedding { vocab_size, dim } => match flow {
            Flow::Tokens { len } => {
                positive("dim", dim)?;
                if vocab_size < 3 {
                    return Err("vocab_size must be at least 3".into());
                }
                Ok(Flow::Seq {
                    len,
                    dim,
                    aligned: true,
                })
            }
            other => Err(format!("expects token indices, got {other}")),
        },
        LayerSpec::BiGru { input, hidden } => {
            positive("hidden", hidden)?;
            let (len, aligned) = need_seq(input)?;
            Ok(Flow::Seq {
                len,
                dim: 2 * hidden,
                aligned,
            })
        }
        LayerSpec::Gru {
            input,
            hidden,
            return_sequences,
        }
        | LayerSpec::Lstm {
            input,
            hidden,
            return_sequences,
        } => {
            positive("hidden", hidden)?;
            let (len, aligned) = need_seq(input)?;
            Ok(if return_sequences {
                Flow::Seq {
                    len,
                    dim: hidden,
                    aligned,
                }
            } else {
                Flow::Vector { dim: hidden }
            })
        }
        LayerSpec::Conv1d {
            input,
            filters,
            width,
        } => {
            positive("filters", filters)?;
            positive("width", width)?;
            let (len, _) = need_seq(input)?;
            if width > len {
                return Err(format!(
                    "kernel width {width} exceeds sequence length {len}"
                ));
            }
            Ok(Flow::Seq {
                len: len - width + 1,
                dim: filters,
                aligned: false,
            })
        }
        LayerSpec::MaxPool { window } => match flow {
            Flow::Seq { len, dim, .. } if window >= 1 && window <= len => Ok(Flow::Seq {
                len: len / window,
                dim,
                aligned: false,
            }),
            Flow::Seq { len, .. } => Err(format!("window {window} invalid for length {len}")),
            other => Err(format!("expects a sequence, got {other}")),
        },
        LayerSpec::GlobalAvgPool { masked } => match flow {
            Flow::Seq { dim, aligned, .. } => {
                if masked && !aligned {
                    return Err("masked pooling needs rows aligned with token positions".into());
                }
                Ok(Flow::Vector { dim })
            }
            other => Err(format!("expects a sequence, got {other}")),
        },
        LayerSpec::GlobalMaxPool => match flow {
            Flow::Seq { dim, .. } => Ok(Flow::Vector { dim }),
            other => Err(format!("expects a sequence, got {other}")),
        },
        LayerSpec::Dense { input, units, .. } => {
            positive("units", units)?;
            match flow {
                Flow::Vector { dim } if dim == input => Ok(Flow::Vector { dim: units }),
                other => Err(format!("expects vector[{input}], got {other}")),
            }
        }
        LayerSpec::Dropout { rate } => {
            if !(0.0..1.0).contains(&rate) {
                return Err(format!("dropout rate {rate} outside [0, 1)"));
            }
            match flow {
                Flow::Seq { .. } | Flow::Vector { .. } => Ok(flow),
                other => Err(format!("expects activations, got {other}")),
            }
        }
        LayerSpec::Parallel { ref branches } => {
            if branches.is_empty() {
                return Err("needs at least one branch".into());
            }
            let mut total = 0;
            for b in branches {
                match validate_stack(b, flow, "parallel").map_err(|e| e.to_string())? {
                    Flow::Vector { dim } => total += dim,
                    other => return Err(format!("branch must end in a vector, got {other}")),
                }
            }
            Ok(Flow::Vector { dim: total })
        }
        LayerSpec::Output { input } => match flow {
            Flow::Vector { dim } if dim == input => Ok(Flow::Logit),
            other => Err(format!("expects vector[{input}], got {other}")),
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
enum LayerParams {
    None,
    Embedding(ParamId),
    Recurrent {
        w_input: ParamId,
        w_hidden: ParamId,
        bias: ParamId,
    },
    BiGru {
        fwd: [ParamId; 3],
        bwd: [ParamId; 3],
    },
    Conv {
        kernels: ParamId,
        bias: ParamId,
    },
    Dense {
        w: ParamId,
        b: ParamId,
    },
    Parallel(Vec<Vec<LayerParams>>),
}

/// A built network: spec plus parameters in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real> {
    spec: ModelSpec,
    params: ParamStore<T>,
    plan: Vec<LayerParams>,
}

struct Builder<'r, T: Real> {
    store: ParamStore<T>,
    rng: &'r mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn matrix(&mut self, name: String, shape: &[usize], fan_in: usize, fan_out: usize) -> ParamId {
        let t = uniform(shape, glorot_bound(fan_in, fan_out), self.rng);
        self.store.add(name, t)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::zeros(shape))
    }

    fn recurrent(
        &mut self,
        prefix: &str,
        gates: usize,
        input: usize,
        hidden: usize,
    ) -> [ParamId; 3] {
        [
            self.matrix(
                format!("{prefix}.w_input"),
                &[gates * hidden, input],
                input,
                gates * hidden,
            ),
            self.matrix(
                format!("{prefix}.w_hidden"),
                &[gates * hidden, hidden],
                hidden,
                gates * hidden,
            ),
            self.zeros(format!("{prefix}.bias"), &[gates * hidden]),
        ]
    }

    fn layers(&mut self, prefix: &str, layers: &[LayerSpec]) -> Vec<LayerParams> {
        layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let p = format!("{prefix}{i}.{}", l.kind());
                match *l {
                    LayerSpec::Embedding { vocab_size, dim } => {
                        let t = uniform(&[vocab_size, dim], 0.05, self.rng);
                        LayerParams::Embedding(self.store.add(format!("{p}.table"), t))
                    }
                    LayerSpec::BiGru { input, hidden } => LayerParams::BiGru {
                        fwd: self.recurrent(&format!("{p}.fwd"), 3, input, hidden),
                        bwd: self.recurrent(&format!("{p}.bwd"), 3, input, hidden),
                    },
                    LayerSpec::Gru { input, hidden, .. } => {
                        let [w_input, w_hidden, bias] = self.recurrent(&p, 3, input, hidden);
                        LayerParams::Recurrent {
                            w_input,
                            w_hidden,
                            bias,
                        }
                    }
                    LayerSpec::Lstm { input, hidden, .. } => {
                        let [w_input, w_hidden, bias] = self.recurrent(&p, 4, input, hidden);
                        LayerParams::Recurrent {
                            w_input,
                            w_hidden,
                            bias,
                        }
                    }
                    LayerSpec::Conv1d {
                        input,
                        filters,
                        width,
                    } => LayerParams::Conv {
                        kernels: self.matrix(
                            format!("{p}.kernels"),
                            &[filters, width, input],
                            width * input,
                            width * filters,
                        ),
                        bias: self.zeros(format!("{p}.bias"), &[filters]),
                    },
                    LayerSpec::Dense { input, units, .. } => LayerParams::Dense {
                        w: self.matrix(format!("{p}.w"), &[units, input], input, units),
                        b: self.zeros(format!("{p}.b"), &[units]),
                    },
                    LayerSpec::Output { input } => LayerParams::Dense {
                        w: self.matrix(format!("{p}.w"), &[1, input], input, 1),
                        b: self.zeros(format!("{p}.b"), &[1]),
                    },
                    LayerSpec::Parallel { ref branches } => LayerParams::Parallel(
                        branches
                            .iter()
                            .enumerate()
                            .map(|(b, layers)| self.layers(&format!("{p}.b{b}."), layers))
                            .collect(),
                    ),
                    LayerSpec::MaxPool { .. }
                    | LayerSpec::GlobalAvgPool { .. }
                    | LayerSpec::GlobalMaxPool
                    | LayerSpec::Dropout { .. } => LayerParams::None,
                }
            })
            .collect()
    }
}

/// Builds a model with parameters drawn from a generator seeded by `seed`:
/// Glorot-uniform matrices, zero biases, embeddings uniform in ±0.05.
pub fn build_model<T: Real>(spec: &ModelSpec, seed: u64) -> Result<Model<T>, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        store: ParamStore::new(),
        rng: &mut rng,
    };
    let plan = b.layers("l", &spec.layers);
    Ok(Model {
        spec: spec.clone(),
        params: b.store,
        plan,
    })
}

#[derive(Clone, Copy)]
enum Value {
    Tokens,
    Node(NodeId),
}

impl<T: Real> Model<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn seq_len(&self) -> usize {
        self.spec.seq_len
    }

    pub fn parameter_count(&self) -> usize {
        self.params.num_elements()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            params: self.params.cast(),
            plan: self.plan.clone(),
        }
    }

    /// Records the forward pass for one sequence and returns the logit node.
    pub fn forward(
        &self,
        tape: &mut Tape<'_, T>,
        seq: &TokenSequence,
    ) -> Result<NodeId, ModelError> {
        if seq.len() != self.spec.seq_len {
            return Err(ModelError::SequenceLengthMismatch {
                expected: self.spec.seq_len,
                got: seq.len(),
            });
        }
        match run(tape, &self.spec.layers, &self.plan, Value::Tokens, seq)? {
            Value::Node(n) => Ok(n),
            Value::Tokens => Err(ModelError::InvalidSpec("empty layer stack".into())),
        }
    }

    /// Records forward pass plus binary cross-entropy against `label`.
    pub fn loss(
        &self,
        tape: &mut Tape<'_, T>,
        seq: &TokenSequence,
        label: u8,
    ) -> Result<NodeId, ModelError> {
        let logit = self.forward(tape, seq)?;
        Ok(tape.bce_with_logit(logit, T::of_f64(f64::from(label)))?)
    }

    /// Probability of the positive (authentic) class for each sequence, in
    /// input order. Dropout is inactive.
    pub fn predict(&self, batch: &[TokenSequence]) -> Result<Vec<T>, ModelError> {
        let _ftz = FlushDenormals::enable();
        batch
            .iter()
            .map(|seq| {
                let mut tape = Tape::new(&self.params);
                let logit = self.forward(&mut tape, seq)?;
                Ok(crate::nnet::sigmoid(tape.value(logit).item()))
            })
            .collect()
    }
}

fn recurrent_nodes<T: Real>(tape: &mut Tape<'_, T>, ids: [ParamId; 3]) -> RecurrentNodes {
    RecurrentNodes {
        w_input: tape.param(ids[0]),
        w_hidden: tape.param(ids[1]),
        bias: tape.param(ids[2]),
    }
}

fn run<T: Real>(
    tape: &mut Tape<'_, T>,
    layers: &[LayerSpec],
    plan: &[LayerParams],
    mut cur: Value,
    seq: &TokenSequence,
) -> Result<Value, ModelError> {
    let node = |v: Value| match v {
        Value::Node(n) => Ok(n),
        Value::Tokens => Err(ModelError::InvalidSpec(
            "layer applied to raw tokens".into(),
        )),
    };
    let last_valid = seq.valid_len.clamp(1, seq.len());
    for (layer, params) in layers.iter().zip(plan) {
        cur = match (layer, params) {
            (LayerSpec::Embedding { .. }, LayerParams::Embedding(table)) => {
                let t = tape.param(*table);
                Value::Node(tape.embedding(t, &seq.indices)?)
            }
            (LayerSpec::BiGru { .. }, LayerParams::BiGru { fwd, bwd }) => {
                let f = recurrent_nodes(tape, *fwd);
                let b = recurrent_nodes(tape, *bwd);
                Value::Node(tape.bidirectional_gru(node(cur)?, f, b)?)
            }
            (
                LayerSpec::Gru {
                    return_sequences, ..
                }
                | LayerSpec::Lstm {
                    return_sequences, ..
                },
                LayerParams::Recurrent {
                    w_input,
                    w_hidden,
                    bias,
                },
            ) => {
                let p = recurrent_nodes(tape, [*w_input, *w_hidden, *bias]);
                let x = node(cur)?;
                let aligned_rows = tape.value(x).rows() == seq.len();
                let out = if matches!(layer, LayerSpec::Gru { .. }) {
                    tape.gru(x, None, p, false)?
                } else {
                    tape.lstm(x, None, p, false)?
                };
                if *return_sequences {
                    Value::Node(out)
                } else {
                    let row = if aligned_rows {
                        last_valid - 1
                    } else {
                        tape.value(out).rows() - 1
                    };
                    Value::Node(tape.select_row(out, row))
                }
            }
            (LayerSpec::Conv1d { .. }, LayerParams::Conv { kernels, bias }) => {
                let k = tape.param(*kernels);
                let b = tape.param(*bias);
                Value::Node(tape.conv1d(node(cur)?, k, b)?)
            }
            (LayerSpec::MaxPool { window }, _) => {
                Value::Node(tape.pool(node(cur)?, PoolMode::MaxWindow(*window), None)?)
            }
            (LayerSpec::GlobalAvgPool { masked }, _) => {
                let valid = masked.then_some(seq.valid_len);
                Value::Node(tape.pool(node(cur)?, PoolMode::GlobalAvg, valid)?)
            }
            (LayerSpec::GlobalMaxPool, _) => {
                Value::Node(tape.pool(node(cur)?, PoolMode::GlobalMax, None)?)
            }
            (LayerSpec::Dense { activation, .. }, LayerParams::Dense { w, b }) => {
                let (w, b) = (tape.param(*w), tape.param(*b));
                Value::Node(tape.dense(node(cur)?, w, b, *activation)?)
            }
            (LayerSpec::Output { .. }, LayerParams::Dense { w, b }) => {
                let (w, b) = (tape.param(*w), tape.param(*b));
                Value::Node(tape.dense(node(cur)?, w, b, Activation::None)?)
            }
            (LayerSpec::Dropout { rate }, _) => Value::Node(tape.dropout(node(cur)?, *rate)),
            (LayerSpec::Parallel { branches }, LayerParams::Parallel(bplans)) => {
                let mut outs = Vec::with_capacity(branches.len());
                for (b, bp) in branches.iter().zip(bplans) {
                    outs.push(node(run(tape, b, bp, cur, seq)?)?);
                }
                Value::Node(tape.concat(&outs)?)
            }
            (l, _) => {
                return Err(ModelError::InvalidSpec(format!(
                    "parameters do not match layer `{}`",
                    l.kind()
                )))
            }
        };
    }
    Ok(cur)
}

/// Reads a model's expected token length and vocabulary size from its spec.
pub fn embedding_vocab(spec: &ModelSpec) -> Option<usize> {
    spec.layers.iter().find_map(|l| match l {
        LayerSpec::Embedding { vocab_size, .. } => Some(*vocab_size),
        _ => None,
    })
}

/// Convenience wrapper: load a checkpoint and return only the model.
pub fn load_model(path: &Path) -> Result<Model<f32>, ModelError> {
    load_checkpoint(path).map(|(m, _)| m)
}
