//! Command-line front end: `prepare`, `train`, `evaluate`, `predict`, `freq`.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{assemble_split, Article, CorpusFiles};
use crate::evaluation::evaluate;
use crate::models::{build_model, load_checkpoint, save_checkpoint, Arch, ModelSpec};
use crate::textprep::{
    clean_text, preprocess_article, remove_stopwords, tokenize_words, CleanDocument,
    FrequencyTable, Preprocessed, StopwordList, TokenStage,
};
use crate::tokenizer::{build_vocabulary, encode_padded, Vocabulary};
use crate::training::{classify, train, TrainConfig};

pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const STOPWORDS_FILE: &str = "stopwords.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Parser)]
#[command(name = "bnfake", version, about = "Bangla fake-news detection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean the four corpus files and build the vocabulary.
    Prepare(PrepareArgs),
    /// Train one architecture on a prepared corpus.
    Train(TrainArgs),
    /// Score the prepared test split with a checkpoint.
    Evaluate(EvaluateArgs),
    /// Classify free text, one input per line.
    Predict(PredictArgs),
    /// Write a word-frequency table for one prepared split.
    Freq(FreqArgs),
}

#[derive(Debug, clap::Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub train_authentic: PathBuf,
    #[arg(long)]
    pub train_fake: PathBuf,
    #[arg(long)]
    pub test_authentic: PathBuf,
    #[arg(long)]
    pub test_fake: PathBuf,
    /// Newline-delimited stopword file, or `builtin` for the bundled list.
    #[arg(long)]
    pub stopwords: PathBuf,
    #[arg(long, env = "BNFAKE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub prepared_dir: PathBuf,
    #[arg(long, value_enum)]
    pub arch: Arch,
    /// Oversample the minority class before training.
    #[arg(long)]
    pub balance: bool,
    /// Defaults to the configuration recorded by `prepare`.
    #[arg(long, env = "BNFAKE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub model_out: PathBuf,
    /// Defaults to `<model-out>.history.csv`.
    #[arg(long)]
    pub history_out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub prepared_dir: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub report_dir: PathBuf,
}

#[derive(Debug, clap::Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["text", "input_file"])))]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory written by `prepare`; supplies the vocabulary and stopwords.
    #[arg(long)]
    pub prepared_dir: PathBuf,
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long)]
    pub input_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn file(self) -> &'static str {
        match self {
            Split::Train => TRAIN_FILE,
            Split::Test => TEST_FILE,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct FreqArgs {
    #[arg(long)]
    pub prepared_dir: PathBuf,
    #[arg(long, value_enum)]
    pub split: Split,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub top_k: u64,
    /// Defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Default, Serialize)]
pub struct RetentionCount {
    pub kept: usize,
    pub filtered: usize,
}

/// Record of one invocation; written next to the artifacts it describes.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub retention: Vec<(String, RetentionCount)>,
    pub duration_secs: f64,
}

impl RunManifest {
    fn new(subcommand: &str) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            config: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            retention: Vec::new(),
            duration_secs: 0.0,
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    fn write(mut self, path: &Path, started: Instant) -> Result<()> {
        self.duration_secs = started.elapsed().as_secs_f64();
        let json = serde_json::to_string_pretty(&self)?;
        fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => cmd_prepare(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Freq(a) => cmd_freq(&a),
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("config {}", p.display())),
        None => Ok(TrainConfig::default()),
    }
}

fn write_documents(path: &Path, docs: &[CleanDocument]) -> Result<()> {
    let mut out = String::new();
    for d in docs {
        let id: String = d
            .article_id
            .chars()
            .map(|c| if c.is_whitespace() { ' ' } else { c })
            .collect();
        out.push_str(&format!("{id}\t{}\t{}\n", d.label, d.tokens.join(" ")));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Reads a prepared split written by `prepare`.
pub fn read_documents(path: &Path) -> Result<Vec<CleanDocument>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let mut parts = line.splitn(3, '\t');
            let (Some(id), Some(label), Some(tokens)) = (parts.next(), parts.next(), parts.next())
            else {
                bail!(
                    "{}:{}: expected `id<TAB>label<TAB>tokens`",
                    path.display(),
                    i + 1
                );
            };
            let label = match label {
                "0" => 0,
                "1" => 1,
                other => bail!("{}:{}: bad label `{other}`", path.display(), i + 1),
            };
            Ok(CleanDocument {
                article_id: id.to_string(),
                tokens: tokenize_words(tokens),
                label,
            })
        })
        .collect()
}

fn load_stopwords(path: &Path) -> Result<StopwordList> {
    if path.as_os_str() == "builtin" {
        return Ok(StopwordList::bengali());
    }
    StopwordList::from_file(path).with_context(|| format!("stopwords {}", path.display()))
}

fn preprocess_all(
    articles: &[Article],
    stops: &StopwordList,
    cfg: &TrainConfig,
    split: &str,
    manifest: &mut RunManifest,
) -> Vec<CleanDocument> {
    let filter = cfg.retention_filter();
    let mut counts = [RetentionCount::default(), RetentionCount::default()];
    let mut docs = Vec::new();
    for a in articles {
        let c = &mut counts[usize::from(a.label)];
        match preprocess_article(a, stops, &filter) {
            Preprocessed::Kept(d) => {
                c.kept += 1;
                docs.push(d);
            }
            Preprocessed::Filtered(_) => c.filtered += 1,
        }
    }
    let [fake, authentic] = counts;
    for (class, c) in [("authentic", authentic), ("fake", fake)] {
        println!("{split} {class}: kept {}, filtered {}", c.kept, c.filtered);
        manifest.retention.push((format!("{split}/{class}"), c));
    }
    docs
}

fn cmd_prepare(a: &PrepareArgs) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("prepare");
    let cfg = load_config(a.config.as_deref())?;
    let stops = load_stopwords(&a.stopwords)?;
    let files = CorpusFiles {
        authentic: a.train_authentic.clone(),
        fake: a.train_fake.clone(),
        labeled_authentic: a.test_authentic.clone(),
        labeled_fake: a.test_fake.clone(),
    };
    let split = assemble_split(&files)?;
    for (path, errs) in &split.row_errors {
        for e in errs {
            eprintln!("warning: {path}: row {}: {}", e.row, e.reason);
        }
    }
    for o in &split.overlaps {
        eprintln!(
            "warning: article {} appears in both {:?} files; test copy dropped",
            o.article_id, o.family
        );
    }
    for p in [
        &a.train_authentic,
        &a.train_fake,
        &a.test_authentic,
        &a.test_fake,
    ] {
        manifest.input(p)?;
    }
    if a.stopwords.as_os_str() != "builtin" {
        manifest.input(&a.stopwords)?;
    }
    if let Some(c) = &a.config {
        manifest.input(c)?;
    }

    let train_docs = preprocess_all(&split.train, &stops, &cfg, "train", &mut manifest);
    let test_docs = preprocess_all(&split.test, &stops, &cfg, "test", &mut manifest);
    let vocab = build_vocabulary(&train_docs, cfg.max_vocab)?;
    println!("vocabulary: {} indices", vocab.len());

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let out = |name: &str| a.out_dir.join(name);
    write_documents(&out(TRAIN_FILE), &train_docs)?;
    write_documents(&out(TEST_FILE), &test_docs)?;
    vocab.save(&out(VOCAB_FILE), cfg.seq_len)?;
    let stop_text: String = stops.words().map(|w| format!("{w}\n")).collect();
    fs::write(out(STOPWORDS_FILE), stop_text)?;
    fs::write(out(CONFIG_FILE), cfg.to_text())?;
    manifest.config = Some(cfg.to_text());
    manifest.seed = Some(cfg.seed);
    manifest.outputs = [
        TRAIN_FILE,
        TEST_FILE,
        VOCAB_FILE,
        STOPWORDS_FILE,
        CONFIG_FILE,
    ]
    .iter()
    .map(|f| out(f).display().to_string())
    .collect();
    manifest.write(&out(MANIFEST_FILE), started)
}

struct Prepared {
    vocab: Vocabulary,
    seq_len: usize,
    vocab_digest: String,
}

fn load_prepared(dir: &Path, manifest: &mut RunManifest) -> Result<Prepared> {
    let path = dir.join(VOCAB_FILE);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let text = String::from_utf8(bytes.clone())
        .with_context(|| format!("{} is not UTF-8", path.display()))?;
    let (vocab, seq_len) =
        Vocabulary::parse(&text).with_context(|| format!("vocabulary {}", path.display()))?;
    manifest.input(&path)?;
    Ok(Prepared {
        vocab,
        seq_len,
        vocab_digest: sha256_hex(&bytes),
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("train");
    let prepared = load_prepared(&a.prepared_dir, &mut manifest)?;
    let config_path = a
        .config
        .clone()
        .unwrap_or_else(|| a.prepared_dir.join(CONFIG_FILE));
    let mut cfg = load_config(Some(&config_path))?;
    manifest.input(&config_path)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.balance |= a.balance;
    if cfg.seq_len != prepared.seq_len {
        bail!(
            "config seq_len {} differs from the prepared vocabulary's {}",
            cfg.seq_len,
            prepared.seq_len
        );
    }
    let train_path = a.prepared_dir.join(TRAIN_FILE);
    let docs = read_documents(&train_path)?;
    manifest.input(&train_path)?;

    let spec = ModelSpec::named(a.arch, &cfg.hyperparams(prepared.vocab.len()));
    let model = build_model::<f32>(&spec, cfg.seed)?;
    println!(
        "{}: {} parameters, {} training documents",
        a.arch,
        model.parameter_count(),
        docs.len()
    );
    let (model, history) = train(model, &docs, &prepared.vocab, &cfg)?;
    for e in &history.epochs {
        println!(
            "epoch {}: loss {:.6}, accuracy {:.6}",
            e.epoch, e.loss, e.accuracy
        );
    }

    save_checkpoint(
        &model,
        &prepared.vocab_digest,
        &sha256_hex(cfg.to_text().as_bytes()),
        &a.model_out,
    )?;
    let history_path = a
        .history_out
        .clone()
        .unwrap_or_else(|| sibling(&a.model_out, ".history.csv"));
    let mut buf = Vec::new();
    history.write_csv(&mut buf)?;
    fs::write(&history_path, buf).with_context(|| format!("writing {}", history_path.display()))?;

    manifest.config = Some(cfg.to_text());
    manifest.seed = Some(cfg.seed);
    manifest.outputs = vec![
        a.model_out.display().to_string(),
        history_path.display().to_string(),
    ];
    manifest.write(&sibling(&a.model_out, ".run.json"), started)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("evaluate");
    let (model, ckpt) =
        load_checkpoint(&a.model).with_context(|| format!("checkpoint {}", a.model.display()))?;
    manifest.input(&a.model)?;
    let prepared = load_prepared(&a.prepared_dir, &mut manifest)?;
    if prepared.vocab_digest != ckpt.vocab_digest {
        bail!(
            "VocabularyMismatch: checkpoint was trained with vocabulary {}, prepared dir has {}",
            ckpt.vocab_digest,
            prepared.vocab_digest
        );
    }
    let test_path = a.prepared_dir.join(TEST_FILE);
    let docs = read_documents(&test_path)?;
    manifest.input(&test_path)?;
    let ev = evaluate(&model, &docs, &prepared.vocab, a.threshold)?;

    fs::create_dir_all(&a.report_dir)
        .with_context(|| format!("creating {}", a.report_dir.display()))?;
    let metrics_path = a.report_dir.join("metrics.txt");
    let roc_path = a.report_dir.join("roc.csv");
    let cm_path = a.report_dir.join("confusion.csv");
    let mut buf = Vec::new();
    ev.report.write_text(&mut buf)?;
    fs::write(&metrics_path, buf)?;
    let mut buf = Vec::new();
    ev.report.confusion.write_csv(&mut buf)?;
    fs::write(&cm_path, buf)?;
    let mut outputs = vec![
        metrics_path.display().to_string(),
        cm_path.display().to_string(),
    ];
    match &ev.roc {
        Some(roc) => {
            let mut buf = Vec::new();
            roc.write_csv(&mut buf)?;
            fs::write(&roc_path, buf)?;
            outputs.push(roc_path.display().to_string());
        }
        None => eprintln!("warning: test split has a single class; ROC and AUC are undefined"),
    }
    let r = &ev.report;
    println!("accuracy  {:.6}", r.accuracy);
    println!("precision {:.6}", r.precision);
    println!("recall    {:.6}", r.recall);
    println!("f1        {:.6}", r.f1);

    manifest.outputs = outputs;
    manifest.write(&a.report_dir.join(MANIFEST_FILE), started)
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("predict");
    let (model, ckpt) =
        load_checkpoint(&a.model).with_context(|| format!("checkpoint {}", a.model.display()))?;
    manifest.input(&a.model)?;
    let prepared = load_prepared(&a.prepared_dir, &mut manifest)?;
    if prepared.vocab_digest != ckpt.vocab_digest {
        bail!("VocabularyMismatch: checkpoint and prepared dir use different vocabularies");
    }
    let stops = load_stopwords(&a.prepared_dir.join(STOPWORDS_FILE))?;
    let lines: Vec<String> = match (&a.text, &a.input_file) {
        (Some(t), _) => vec![t.clone()],
        (None, Some(p)) => {
            manifest.input(p)?;
            let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            io::BufReader::new(f).lines().collect::<io::Result<_>>()?
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (i, line) in lines.iter().enumerate() {
        let tokens = remove_stopwords(&tokenize_words(&clean_text(line)), &stops);
        if tokens.is_empty() {
            eprintln!(
                "warning: input {} is empty after cleaning; scored as all padding",
                i + 1
            );
        }
        let seq = encode_padded(&tokens, &prepared.vocab, model.seq_len());
        let p = f64::from(model.predict(std::slice::from_ref(&seq))?[0]);
        writeln!(out, "{p:.6}\t{}", classify(p, a.threshold))?;
    }
    manifest.duration_secs = started.elapsed().as_secs_f64();
    eprintln!("run: {}", serde_json::to_string(&manifest)?);
    Ok(())
}

fn cmd_freq(a: &FreqArgs) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("freq");
    let path = a.prepared_dir.join(a.split.file());
    let docs = read_documents(&path)?;
    manifest.input(&path)?;
    let top_k = usize::try_from(a.top_k).unwrap_or(usize::MAX);
    let table =
        FrequencyTable::from_token_lists(docs.iter().map(|d| d.tokens.as_slice()), Some(top_k));
    let mut buf = Vec::new();
    table.write_tsv(&mut buf, a.split.name(), TokenStage::StopwordsRemoved)?;
    match &a.out {
        Some(p) => {
            fs::write(p, buf).with_context(|| format!("writing {}", p.display()))?;
            manifest.outputs.push(p.display().to_string());
            manifest.write(&sibling(p, ".run.json"), started)
        }
        None => {
            io::stdout().write_all(&buf)?;
            manifest.duration_secs = started.elapsed().as_secs_f64();
            eprintln!("run: {}", serde_json::to_string(&manifest)?);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["bnfake", "train", "--arch", "nonsense"]), 2);
        assert_eq!(
            run([
                "bnfake",
                "freq",
                "--prepared-dir",
                "x",
                "--split",
                "train",
                "--top-k",
                "0"
            ]),
            2
        );
        assert_eq!(
            run([
                "bnfake",
                "freq",
                "--prepared-dir",
                "x",
                "--split",
                "dev",
                "--top-k",
                "5"
            ]),
            2
        );
    }

    #[test]
    fn runtime_errors_exit_one() {
        assert_eq!(
            run([
                "bnfake",
                "freq",
                "--prepared-dir",
                "/nonexistent/dir",
                "--split",
                "train",
                "--top-k",
                "5"
            ]),
            1
        );
    }

    #[test]
    fn digest_is_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn prepared_documents_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        let docs = vec![CleanDocument {
            article_id: "7".into(),
            tokens: vec!["ক".into(), "খ".into()],
            label: 0,
        }];
        write_documents(&p, &docs).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "7\t0\tক খ\n");
        assert_eq!(read_documents(&p).unwrap(), docs);
    }
}
