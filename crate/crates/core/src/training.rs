//! Training configuration, class balancing, Adam and the mini-batch loop.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::models::{Hyperparams, Model, ModelError};
use crate::nnet::{sigmoid, FlushDenormals, Gradients, NnError, ParamStore, Real, Tape};
use crate::textprep::{CleanDocument, RetentionFilter};
use crate::tokenizer::{
    encode_padded, TokenSequence, Vocabulary, DEFAULT_MAX_SIZE, DEFAULT_SEQ_LEN,
};

pub use crate::nnet::bce as bce_loss;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("balancing needs both classes in the training set")]
    SingleClassCorpus,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Every tunable of a run. The text form is `key = value` per line, `#`
/// comments allowed; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub dropout: f64,
    pub seq_len: usize,
    pub max_vocab: usize,
    pub balance: bool,
    pub threshold: f64,
    pub seed: u64,
    /// global-norm clipping bound; 0 disables clipping
    pub clip_norm: f64,
    pub embed_dim: usize,
    pub rnn_hidden: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub pool_window: usize,
    pub dense_units: Vec<usize>,
    pub masked_pooling: bool,
    pub min_words: usize,
    pub min_words_inclusive: bool,
    pub count_before_stopwords: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            dropout: 0.3,
            seq_len: DEFAULT_SEQ_LEN,
            max_vocab: DEFAULT_MAX_SIZE,
            balance: false,
            threshold: 0.5,
            seed: 42,
            clip_norm: 5.0,
            embed_dim: 128,
            rnn_hidden: 64,
            conv_filters: 128,
            conv_width: 5,
            pool_window: 2,
            dense_units: vec![64, 32],
            masked_pooling: true,
            min_words: 100,
            min_words_inclusive: true,
            count_before_stopwords: true,
        }
    }
}

fn parse_value<V: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<V, TrainError> {
    v.parse().map_err(|_| TrainError::Config {
        line,
        reason: format!("bad value `{v}` for `{key}`"),
    })
}

impl TrainConfig {
    pub const KEYS: [&'static str; 23] = [
        "epochs",
        "batch_size",
        "learning_rate",
        "beta1",
        "beta2",
        "adam_epsilon",
        "dropout",
        "seq_len",
        "max_vocab",
        "balance",
        "threshold",
        "seed",
        "clip_norm",
        "embed_dim",
        "rnn_hidden",
        "conv_filters",
        "conv_width",
        "pool_window",
        "dense_units",
        "masked_pooling",
        "min_words",
        "min_words_inclusive",
        "count_before_stopwords",
    ];

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        self.set_at(0, key, value)
    }

    fn set_at(&mut self, n: usize, key: &str, v: &str) -> Result<(), TrainError> {
        match key {
            "epochs" => self.epochs = parse_value(n, key, v)?,
            "batch_size" => self.batch_size = parse_value(n, key, v)?,
            "learning_rate" => self.learning_rate = parse_value(n, key, v)?,
            "beta1" => self.beta1 = parse_value(n, key, v)?,
            "beta2" => self.beta2 = parse_value(n, key, v)?,
            "adam_epsilon" => self.adam_epsilon = parse_value(n, key, v)?,
            "dropout" => self.dropout = parse_value(n, key, v)?,
            "seq_len" => self.seq_len = parse_value(n, key, v)?,
            "max_vocab" => self.max_vocab = parse_value(n, key, v)?,
            "balance" => self.balance = parse_value(n, key, v)?,
            "threshold" => self.threshold = parse_value(n, key, v)?,
            "seed" => self.seed = parse_value(n, key, v)?,
            "clip_norm" => self.clip_norm = parse_value(n, key, v)?,
            "embed_dim" => self.embed_dim = parse_value(n, key, v)?,
            "rnn_hidden" => self.rnn_hidden = parse_value(n, key, v)?,
            "conv_filters" => self.conv_filters = parse_value(n, key, v)?,
            "conv_width" => self.conv_width = parse_value(n, key, v)?,
            "pool_window" => self.pool_window = parse_value(n, key, v)?,
            "dense_units" => {
                self.dense_units = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|p| parse_value(n, key, p.trim()))
                        .collect::<Result<_, _>>()?
                }
            }
            "masked_pooling" => self.masked_pooling = parse_value(n, key, v)?,
            "min_words" => self.min_words = parse_value(n, key, v)?,
            "min_words_inclusive" => self.min_words_inclusive = parse_value(n, key, v)?,
            "count_before_stopwords" => self.count_before_stopwords = parse_value(n, key, v)?,
            other => {
                return Err(TrainError::Config {
                    line: n,
                    reason: format!("unknown key `{other}`"),
                })
            }
        }
        Ok(())
    }

    /// Parses config text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(TrainError::Config {
                line: i + 1,
                reason: "expected `key = value`".into(),
            })?;
            cfg.set_at(i + 1, k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return fail("threshold must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("adam betas must lie in [0, 1)");
        }
        if self.adam_epsilon <= 0.0 {
            return fail("adam_epsilon must be positive");
        }
        if self.clip_norm < 0.0 {
            return fail("clip_norm must be non-negative");
        }
        if self.seq_len < 1 {
            return fail("seq_len must be at least 1");
        }
        if self.max_vocab < 3 {
            return fail("max_vocab must be at least 3");
        }
        Ok(())
    }

    /// Canonical text form: every key in [`TrainConfig::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let units: Vec<String> = self.dense_units.iter().map(usize::to_string).collect();
        for key in Self::KEYS {
            let v = match key {
                "epochs" => self.epochs.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "learning_rate" => self.learning_rate.to_string(),
                "beta1" => self.beta1.to_string(),
                "beta2" => self.beta2.to_string(),
                "adam_epsilon" => self.adam_epsilon.to_string(),
                "dropout" => self.dropout.to_string(),
                "seq_len" => self.seq_len.to_string(),
                "max_vocab" => self.max_vocab.to_string(),
                "balance" => self.balance.to_string(),
                "threshold" => self.threshold.to_string(),
                "seed" => self.seed.to_string(),
                "clip_norm" => self.clip_norm.to_string(),
                "embed_dim" => self.embed_dim.to_string(),
                "rnn_hidden" => self.rnn_hidden.to_string(),
                "conv_filters" => self.conv_filters.to_string(),
                "conv_width" => self.conv_width.to_string(),
                "pool_window" => self.pool_window.to_string(),
                "dense_units" => units.join(","),
                "masked_pooling" => self.masked_pooling.to_string(),
                "min_words" => self.min_words.to_string(),
                "min_words_inclusive" => self.min_words_inclusive.to_string(),
                "count_before_stopwords" => self.count_before_stopwords.to_string(),
                _ => unreachable!("key list and match agree"),
            };
            let _ = writeln!(s, "{key} = {v}");
        }
        s
    }

    pub fn hyperparams(&self, vocab_size: usize) -> Hyperparams {
        Hyperparams {
            vocab_size,
            seq_len: self.seq_len,
            embed_dim: self.embed_dim,
            rnn_hidden: self.rnn_hidden,
            conv_filters: self.conv_filters,
            conv_width: self.conv_width,
            pool_window: self.pool_window,
            dense_units: self.dense_units.clone(),
            dropout: self.dropout,
            masked_pooling: self.masked_pooling,
        }
    }

    pub fn retention_filter(&self) -> RetentionFilter {
        RetentionFilter {
            threshold: self.min_words,
            inclusive: self.min_words_inclusive,
            count_before_stopwords: self.count_before_stopwords,
        }
    }
}

/// Random oversampling: minority documents are drawn with replacement
/// until both classes have the same count, then the result is shuffled.
pub fn balance_by_oversampling(
    train: &[CleanDocument],
    seed: u64,
) -> Result<Vec<CleanDocument>, TrainError> {
    let (pos, neg): (Vec<&CleanDocument>, Vec<&CleanDocument>) =
        train.iter().partition(|d| d.label == 1);
    if pos.is_empty() || neg.is_empty() {
        return Err(TrainError::SingleClassCorpus);
    }
    let (minority, deficit) = if pos.len() < neg.len() {
        (&pos, neg.len() - pos.len())
    } else {
        (&neg, pos.len() - neg.len())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = train.to_vec();
    for _ in 0..deficit {
        out.push(minority[rng.random_range(0..minority.len())].clone());
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Gradients<T>,
    v: Gradients<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &Gradients<T>,
    ) -> Result<(), NnError> {
        if grads.len() != params.len() {
            return Err(NnError::ShapeMismatch {
                op: "adam",
                expected: vec![params.len()],
                got: vec![grads.len()],
            });
        }
        for (id, p) in params.ids().zip(params.iter()) {
            if grads.get(id).shape() != p.tensor.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "adam",
                    expected: p.tensor.shape().to_vec(),
                    got: grads.get(id).shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::of_f64(self.beta1), T::of_f64(self.beta2));
        let c1 = T::of_f64(1.0 - self.beta1.powi(t));
        let c2 = T::of_f64(1.0 - self.beta2.powi(t));
        let lr = T::of_f64(self.lr);
        let eps = T::of_f64(self.epsilon);
        let one = T::one();
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id).data();
            let m = self.m.get_mut(id).data_mut();
            let v = self.v.get_mut(id).data_mut();
            let theta = params.get_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                theta[i] = theta[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// 1 (authentic) iff `p >= threshold`.
pub fn classify(p: f64, threshold: f64) -> u8 {
    u8::from(p >= threshold)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// CSV with header `epoch,loss,accuracy`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,accuracy")?;
        for e in &self.epochs {
            writeln!(w, "{},{:.6},{:.6}", e.epoch, e.loss, e.accuracy)?;
        }
        Ok(())
    }
}

/// Encodes labelled documents to fixed-length sequences.
pub fn encode_documents(
    docs: &[CleanDocument],
    vocab: &Vocabulary,
    seq_len: usize,
) -> Vec<(TokenSequence, u8)> {
    docs.iter()
        .map(|d| (encode_padded(&d.tokens, vocab, seq_len), d.label))
        .collect()
}

/// Stateful epoch runner. Accuracy is measured on the training forward
/// passes, with dropout active.
pub struct Trainer {
    model: Model<f32>,
    adam: Adam<f32>,
    rng: ChaCha8Rng,
    data: Vec<(TokenSequence, u8)>,
    config: TrainConfig,
    history: TrainHistory,
}

impl Trainer {
    /// Balances (if configured) and encodes the documents.
    pub fn new(
        model: Model<f32>,
        train_docs: &[CleanDocument],
        vocab: &Vocabulary,
        config: &TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if train_docs.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        if model.seq_len() != config.seq_len {
            return Err(ModelError::SequenceLengthMismatch {
                expected: model.seq_len(),
                got: config.seq_len,
            }
            .into());
        }
        let docs = if config.balance {
            balance_by_oversampling(train_docs, config.seed)?
        } else {
            train_docs.to_vec()
        };
        let data = encode_documents(&docs, vocab, config.seq_len);
        Ok(Self::from_sequences(model, data, config))
    }

    /// Starts from already encoded sequences; no balancing is applied.
    pub fn from_sequences(
        model: Model<f32>,
        data: Vec<(TokenSequence, u8)>,
        config: &TrainConfig,
    ) -> Self {
        let adam = Adam::new(
            model.params(),
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.adam_epsilon,
        );
        Trainer {
            model,
            adam,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e),
            data,
            config: config.clone(),
            history: TrainHistory::default(),
        }
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.adam.steps()
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats, TrainError> {
        if self.data.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        let _ftz = FlushDenormals::enable();
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut grads = Gradients::zeros_like(self.model.params());
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(self.config.batch_size) {
            grads.zero();
            for &i in batch {
                let (seq, label) = &self.data[i];
                let mut tape = Tape::training(self.model.params(), &mut self.rng);
                let logit = self.model.forward(&mut tape, seq)?;
                let p = sigmoid(tape.value(logit).item());
                let loss = tape.bce_with_logit(logit, f32::from(*label))?;
                loss_sum += f64::from(tape.value(loss).item());
                correct += usize::from(classify(f64::from(p), self.config.threshold) == *label);
                tape.backward(loss, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f32);
            if self.config.clip_norm > 0.0 {
                grads.clip_global_norm(self.config.clip_norm as f32);
            }
            self.adam.step(self.model.params_mut(), &grads)?;
        }
        let n = self.data.len() as f64;
        let stats = EpochStats {
            epoch: self.history.epochs.len() + 1,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
        };
        self.history.epochs.push(stats);
        Ok(stats)
    }

    pub fn finish(self) -> (Model<f32>, TrainHistory) {
        (self.model, self.history)
    }
}

/// Runs `config.epochs` epochs and returns the trained model and history.
pub fn train(
    model: Model<f32>,
    train_docs: &[CleanDocument],
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<(Model<f32>, TrainHistory), TrainError> {
    let mut trainer = Trainer::new(model, train_docs, vocab, config)?;
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::Tensor;

    fn doc(id: &str, label: u8) -> CleanDocument {
        CleanDocument {
            article_id: id.into(),
            tokens: vec![id.to_string()],
            label,
        }
    }

    #[test]
    fn bce_closed_forms() {
        assert!((bce_loss(0.5f64, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(0.5f64, 0.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(1.0f64, 1.0) <= 1.2e-7);
        assert!(bce_loss(0.0f64, 0.0) <= 1.2e-7);
    }

    #[test]
    fn oversampling_five_two() {
        let mut docs: Vec<_> = (0..5).map(|i| doc(&format!("p{i}"), 1)).collect();
        docs.extend([doc("n0", 0), doc("n1", 0)]);
        let out = balance_by_oversampling(&docs, 3).unwrap();
        assert_eq!(out.iter().filter(|d| d.label == 1).count(), 5);
        assert_eq!(out.iter().filter(|d| d.label == 0).count(), 5);
        for d in out.iter().filter(|d| d.label == 0) {
            assert!(d.article_id == "n0" || d.article_id == "n1");
        }
        for d in &docs {
            assert!(out.contains(d));
        }
    }

    #[test]
    fn oversampling_balanced_is_permutation() {
        let docs = vec![doc("a", 1), doc("b", 0), doc("c", 1), doc("d", 0)];
        let mut out = balance_by_oversampling(&docs, 1).unwrap();
        out.sort_by(|a, b| a.article_id.cmp(&b.article_id));
        assert_eq!(out, docs);
        assert!(matches!(
            balance_by_oversampling(&[doc("a", 1)], 0),
            Err(TrainError::SingleClassCorpus)
        ));
    }

    fn scalar_store(v: f64) -> (ParamStore<f64>, crate::nnet::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("theta", Tensor::scalar(v));
        (s, id)
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let (mut s, id) = scalar_store(1.5);
        let mut adam = Adam::new(&s, 1e-3, 0.9, 0.999, 1e-8);
        let g = Gradients::zeros_like(&s);
        adam.step(&mut s, &g).unwrap();
        assert_eq!(s.get(id).item(), 1.5);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let (mut s, id) = scalar_store(0.0);
        let mut adam = Adam::new(&s, 0.01, 0.9, 0.999, 1e-8);
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(id).data_mut()[0] = 3.0;
        adam.step(&mut s, &g).unwrap();
        assert!((s.get(id).item() + 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_square() {
        let (mut s, id) = scalar_store(1.0);
        let mut adam = Adam::new(&s, 0.1, 0.9, 0.999, 1e-8);
        for _ in 0..200 {
            let mut g = Gradients::zeros_like(&s);
            g.get_mut(id).data_mut()[0] = 2.0 * s.get(id).item();
            adam.step(&mut s, &g).unwrap();
        }
        assert!(s.get(id).item().abs() < 1e-3);
    }

    #[test]
    fn classify_boundaries() {
        assert_eq!(classify(0.7, 0.5), 1);
        assert_eq!(classify(0.5, 0.5), 1);
        assert_eq!(classify(0.0, 0.0), 1);
        assert_eq!(classify(0.49, 0.5), 0);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let cfg =
            TrainConfig::parse("# c\nepochs = 3\ndense_units = 16, 8\nbalance = true\n").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.dense_units, vec![16, 8]);
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(matches!(
            TrainConfig::parse("epoch = 3"),
            Err(TrainError::Config { line: 1, .. })
        ));
        assert!(matches!(
            TrainConfig::parse("epochs = 0"),
            Err(TrainError::InvalidConfig(_))
        ));
        assert!(matches!(
            TrainConfig::parse("threshold = 1.5"),
            Err(TrainError::InvalidConfig(_))
        ));
    }

    #[test]
    fn history_csv() {
        let h = TrainHistory {
            epochs: vec![EpochStats {
                epoch: 1,
                loss: 0.5,
                accuracy: 0.75,
            }],
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,loss,accuracy\n1,0.500000,0.750000\n"
        );
    }
}
