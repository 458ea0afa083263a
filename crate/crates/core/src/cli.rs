//! `salab` command line: data generation, training, evaluation, gradient
//! checks and heatmap export.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{format_kv, parse_kv, parse_value};
use crate::data::{
    build_vocab, generate_synthetic_corpus, read_dataset, split_dataset, write_dataset, EncodedDocument,
    SyntheticCorpusConfig, Vocabulary,
};
use crate::diagnostics::run_gradcheck_suite;
use crate::error::{Error, Result};
use crate::eval::{export_heatmap, write_reliability_csv, MetricsReport, PredictionRecord};
use crate::models::{extract_attention_maps, Model, ModelConfig, ModelFamily};
use crate::nn::AdamConfig;
use crate::rng;
use crate::simplex::MappingKind;
use crate::train::{train, EpochMetrics, TrainConfig};

pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.70, 0.15, 0.15);

#[derive(Debug, Parser)]
#[command(name = "salab", version, about = "Sparse attention lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and write train/validation/test splits.
    GenData(RunArgs),
    /// Train a model; writes best and last checkpoints plus per-epoch metrics.
    Train(RunArgs),
    /// Score a split with a checkpoint and write metrics and a reliability table.
    Eval(RunArgs),
    /// Finite-difference checks over every mapping, layer and model family.
    Gradcheck(RunArgs),
    /// Export attention heatmaps for documents containing filter tokens.
    Heatmap(RunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Gradcheck(_) => "gradcheck",
            Command::Heatmap(_) => "heatmap",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::GenData(a) | Command::Train(a) | Command::Eval(a) | Command::Gradcheck(a) | Command::Heatmap(a) => a,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// key=value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    /// softmax | entmax15 | sparsemax | entmax:<alpha>
    #[arg(long)]
    pub mapping: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long = "embed-dim")]
    pub embed_dim: Option<usize>,
    #[arg(long = "max-words")]
    pub max_words: Option<usize>,
    #[arg(long = "max-sents")]
    pub max_sents: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Independent training runs with seeds seed, seed+1, ...
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long = "min-freq")]
    pub min_freq: Option<usize>,
    /// Checkpoint for eval/heatmap; model.cfg and vocab.txt are read from its directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated filter tokens for heatmaps.
    #[arg(long)]
    pub filter: Option<String>,
    /// Number of documents (gen-data corpus size, heatmap document count).
    #[arg(long)]
    pub docs: Option<usize>,
    /// Split to evaluate: train | validation | test.
    #[arg(long)]
    pub split: Option<String>,
    /// Corpus generator key=value file.
    #[arg(long = "corpus-config")]
    pub corpus_config: Option<PathBuf>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelFamily,
    pub mapping: MappingKind,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub max_words: usize,
    pub max_sents: usize,
    pub dropout: f64,
    pub seed: u64,
    pub data: PathBuf,
    pub out: PathBuf,
    pub seeds: usize,
    pub min_freq: usize,
    pub checkpoint: Option<PathBuf>,
    pub filter: Vec<String>,
    pub docs: Option<usize>,
    pub split: String,
    pub corpus: SyntheticCorpusConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelFamily::Att,
            mapping: MappingKind::Sparsemax,
            epochs: 30,
            lr: 1e-4,
            batch: 16,
            hidden: 128,
            embed_dim: 100,
            max_words: 20,
            max_sents: 40,
            dropout: 0.2,
            seed: 1,
            data: PathBuf::from("data"),
            out: PathBuf::from("runs"),
            seeds: 1,
            min_freq: 1,
            checkpoint: None,
            filter: vec!["dnr".into(), "dni".into(), "cmo".into()],
            docs: None,
            split: "test".into(),
            corpus: SyntheticCorpusConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (k, v) in parse_kv(&text, &path.display().to_string())? {
                cfg.set(&k, &v)?;
            }
        }
        if let Some(path) = &args.corpus_config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.corpus.apply_kv(&text, &path.display().to_string())?;
        }
        let a = args;
        if let Some(v) = &a.model {
            cfg.model = v.parse()?;
        }
        if let Some(v) = &a.mapping {
            cfg.mapping = v.parse()?;
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = a.$f.clone() { cfg.$f = v; } )* };
        }
        take!(epochs, lr, batch, hidden, embed_dim, max_words, max_sents, dropout, seed, data, out, seeds, min_freq);
        if a.checkpoint.is_some() {
            cfg.checkpoint = a.checkpoint.clone();
        }
        if let Some(f) = &a.filter {
            cfg.filter = split_list(f);
        }
        if a.docs.is_some() {
            cfg.docs = a.docs;
        }
        if let Some(s) = &a.split {
            cfg.split = s.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.seeds == 0 {
            return Err(Error::Config("epochs, batch and seeds must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !["train", "validation", "test"].contains(&self.split.as_str()) {
            return Err(Error::Config(format!("unknown split '{}'", self.split)));
        }
        self.model_config(2).validate()?;
        self.corpus.validate()
    }

    /// Applies one config-file entry. `corpus.<key>` entries go to the generator.
    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        match k {
            "command" => {}
            "model" => self.model = v.parse()?,
            "mapping" => self.mapping = v.parse()?,
            "epochs" => self.epochs = parse_value(k, v)?,
            "lr" => self.lr = parse_value(k, v)?,
            "batch" => self.batch = parse_value(k, v)?,
            "hidden" => self.hidden = parse_value(k, v)?,
            "embed_dim" => self.embed_dim = parse_value(k, v)?,
            "max_words" => self.max_words = parse_value(k, v)?,
            "max_sents" => self.max_sents = parse_value(k, v)?,
            "dropout" => self.dropout = parse_value(k, v)?,
            "seed" => self.seed = parse_value(k, v)?,
            "data" => self.data = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "seeds" => self.seeds = parse_value(k, v)?,
            "min_freq" => self.min_freq = parse_value(k, v)?,
            "checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "filter" => self.filter = split_list(v),
            "docs" => self.docs = if v.is_empty() { None } else { Some(parse_value(k, v)?) },
            "split" => self.split = v.to_string(),
            other => match other.strip_prefix("corpus.") {
                Some(key) => self.corpus.set(key, v)?,
                None => return Err(Error::Config(format!("unknown config key '{other}'"))),
            },
        }
        Ok(())
    }

    /// Manifest text; feeding it back through `--config` reproduces the run.
    pub fn to_kv(&self, command: &str) -> String {
        let mut pairs = vec![
            ("command".to_string(), command.to_string()),
            ("model".into(), self.model.to_string()),
            ("mapping".into(), self.mapping.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("batch".into(), self.batch.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("max_words".into(), self.max_words.to_string()),
            ("max_sents".into(), self.max_sents.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("data".into(), self.data.display().to_string()),
            ("out".into(), self.out.display().to_string()),
            ("seeds".into(), self.seeds.to_string()),
            ("min_freq".into(), self.min_freq.to_string()),
            (
                "checkpoint".into(),
                self.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("filter".into(), self.filter.join(",")),
            ("docs".into(), self.docs.map(|d| d.to_string()).unwrap_or_default()),
            ("split".into(), self.split.clone()),
        ];
        for (k, v) in parse_kv(&self.corpus.to_kv(), "corpus").expect("own output parses") {
            pairs.push((format!("corpus.{k}"), v));
        }
        format_kv(pairs)
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let mut m = ModelConfig::new(self.model, vocab_size, self.mapping);
        m.hidden = self.hidden;
        m.embed_dim = self.embed_dim;
        m.max_words = self.max_words;
        m.max_sents = self.max_sents;
        m.dropout = self.dropout;
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            calibration_bins: 10,
        }
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::to_string).collect()
}

/// Process exit code for each failure class.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Parse { .. } => 2,
        Error::Io { .. } | Error::Checkpoint(_) => 3,
        Error::PoisonedGradient(_) => 4,
        Error::UndefinedMetric(_) => 5,
        _ => 1,
    }
}

/// Exit code when a gradient check exceeds its tolerance.
pub const EXIT_GRADCHECK_FAILED: i32 = 6;

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs one parsed command; returns the process exit code on success.
pub fn run(cli: Cli) -> Result<i32> {
    let cfg = RunConfig::resolve(cli.command.args())?;
    let name = cli.command.name();
    match cli.command {
        Command::GenData(_) => cmd_gen_data(&cfg).map(|_| 0),
        Command::Train(_) => cmd_train(&cfg).map(|_| 0),
        Command::Eval(_) => cmd_eval(&cfg).map(|_| 0),
        Command::Gradcheck(_) => cmd_gradcheck(&cfg),
        Command::Heatmap(_) => cmd_heatmap(&cfg).map(|_| 0),
    }
    .inspect(|_| log::debug!("{name} finished"))
}

/// Writes `train.jsonl`, `validation.jsonl`, `test.jsonl`, `corpus.cfg` and a
/// manifest into the data directory.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    let mut corpus = cfg.corpus.clone();
    corpus.seed = cfg.seed;
    if let Some(n) = cfg.docs {
        corpus.n_documents = n;
    }
    corpus.validate()?;
    let docs = generate_synthetic_corpus(&corpus)?;
    let split = split_dataset(docs, SPLIT_FRACTIONS, cfg.seed)?;
    mkdir(&cfg.data)?;
    write_dataset(&cfg.data.join("train.jsonl"), &split.train)?;
    write_dataset(&cfg.data.join("validation.jsonl"), &split.validation)?;
    write_dataset(&cfg.data.join("test.jsonl"), &split.test)?;
    write(&cfg.data.join("corpus.cfg"), corpus.to_kv())?;
    let mut manifest = cfg.clone();
    manifest.corpus = corpus;
    write(&cfg.data.join("manifest.txt"), manifest.to_kv("gen-data"))?;
    println!(
        "wrote {} / {} / {} documents to {}",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        cfg.data.display()
    );
    Ok(())
}

fn load_split(cfg: &RunConfig, name: &str) -> Result<Vec<crate::data::PatientDocument>> {
    read_dataset(&cfg.data.join(format!("{name}.jsonl")))
}

fn encode(vocab: &Vocabulary, docs: &[crate::data::PatientDocument]) -> Vec<EncodedDocument> {
    docs.iter().map(|d| vocab.encode_document(d)).collect()
}

/// Best-epoch validation metrics of one run.
pub fn train_one(cfg: &RunConfig, out: &Path) -> Result<MetricsReport> {
    mkdir(out)?;
    write(&out.join("manifest.txt"), cfg.to_kv("train"))?;
    let train_docs = load_split(cfg, "train")?;
    let val_docs = load_split(cfg, "validation")?;
    let vocab = build_vocab(train_docs.iter().flat_map(|d| d.sentences.iter()), cfg.min_freq)?;
    vocab.save(&out.join("vocab.txt"))?;
    let (tr, va) = (encode(&vocab, &train_docs), encode(&vocab, &val_docs));

    let mut init_rng = rng::stream(cfg.seed, 0);
    let model = Model::init(cfg.model_config(vocab.len()), &mut init_rng)?;
    let mut train_rng = rng::stream(cfg.seed, 1);
    let mut tsv = String::from(EpochMetrics::TSV_HEADER);
    tsv.push('\n');
    let outcome = train(model, &tr, &va, &cfg.train_config(), &mut train_rng, |m| {
        tsv.push_str(&m.tsv_line());
        tsv.push('\n');
    })?;
    write(&out.join("epochs.tsv"), &tsv)?;
    outcome.best.save(out, "best")?;
    outcome.last.params.save(&out.join("last.ckpt"))?;
    let best = outcome.history[outcome.best_epoch - 1].validation.clone();
    best.write(out, "validation")?;
    write(&out.join("best_epoch.txt"), format!("{}\n", outcome.best_epoch))?;
    Ok(best)
}

fn thread_cap() -> usize {
    std::env::var("SALAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    if cfg.seeds == 1 {
        let m = train_one(cfg, &cfg.out)?;
        println!("best validation auc_roc={:.4} auc_pr={:.4} brier={:.4}", m.auc_roc, m.auc_pr, m.brier);
        return Ok(());
    }
    mkdir(&cfg.out)?;
    write(&cfg.out.join("manifest.txt"), cfg.to_kv("train"))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap().min(cfg.seeds))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let reports: Vec<MetricsReport> = pool.install(|| {
        (0..cfg.seeds)
            .into_par_iter()
            .map(|k| {
                let mut c = cfg.clone();
                c.seed = cfg.seed + k as u64;
                c.seeds = 1;
                c.out = cfg.out.join(format!("seed{}", c.seed));
                train_one(&c, &c.out)
            })
            .collect::<Result<_>>()
    })?;
    let mut summary = String::new();
    for (name, get) in [
        ("auc_roc", (|r: &MetricsReport| r.auc_roc) as fn(&MetricsReport) -> f64),
        ("auc_pr", |r| r.auc_pr),
        ("brier", |r| r.brier),
    ] {
        let (m, sd) = mean_sd(&reports.iter().map(get).collect::<Vec<_>>());
        summary.push_str(&format!("{name}={m:.6} ± {sd:.6}\n"));
    }
    summary.push_str(&format!("seeds={}\n", cfg.seeds));
    write(&cfg.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

struct Loaded {
    model: Model,
    vocab: Vocabulary,
}

fn load_model(cfg: &RunConfig) -> Result<Loaded> {
    let ckpt = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("best.ckpt"));
    let dir = ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
    let model = Model::load(&dir.join("model.cfg"), &ckpt)?;
    let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary holds {} tokens but the model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    Ok(Loaded { model, vocab })
}

/// Writes `metrics.{txt,json}`, `reliability.csv` and `predictions.tsv`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<MetricsReport> {
    let Loaded { model, vocab } = load_model(cfg)?;
    let docs = encode(&vocab, &load_split(cfg, &cfg.split)?);
    let preds = model.predict(&docs, cfg.batch)?;
    let report = MetricsReport::compute(&preds, 10)?;
    mkdir(&cfg.out)?;
    write(&cfg.out.join("eval_manifest.txt"), cfg.to_kv("eval"))?;
    report.write(&cfg.out, "metrics")?;
    write_reliability_csv(&report.calibration, &cfg.out.join("reliability.csv"))?;
    write_predictions(&preds, &cfg.out.join("predictions.tsv"))?;
    println!(
        "{} auc_roc={:.4} auc_pr={:.4} brier={:.4} calibration={}",
        cfg.split,
        report.auc_roc,
        report.auc_pr,
        report.brier,
        report.calibration_direction()
    );
    Ok(report)
}

pub fn write_predictions(preds: &[PredictionRecord], path: &Path) -> Result<()> {
    let mut s = String::from("doc_id\tscore\tlabel\n");
    for p in preds {
        s.push_str(&format!("{}\t{:.6}\t{}\n", p.doc_id, p.score, p.label));
    }
    write(path, s)
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<i32> {
    let results = run_gradcheck_suite(cfg.seed, 50)?;
    let mut text = String::new();
    for r in &results {
        text.push_str(&r.line());
        text.push('\n');
    }
    print!("{text}");
    mkdir(&cfg.out)?;
    write(&cfg.out.join("gradcheck.txt"), &text)?;
    let failed = results.iter().filter(|r| !r.report.passed()).count();
    if failed > 0 {
        eprintln!("error: {failed} gradient checks exceeded tolerance");
        return Ok(EXIT_GRADCHECK_FAILED);
    }
    Ok(0)
}

/// One CSV per (sentence, head) record under `<out>/heatmaps`.
pub fn cmd_heatmap(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let Loaded { model, vocab } = load_model(cfg)?;
    let raw = load_split(cfg, &cfg.split)?;
    let dir = cfg.out.join("heatmaps");
    mkdir(&dir)?;
    let filter = (!cfg.filter.is_empty()).then_some(cfg.filter.as_slice());
    let limit = cfg.docs.unwrap_or(5);
    let mut written = Vec::new();
    let mut n_docs = 0;
    for doc in &raw {
        if n_docs == limit {
            break;
        }
        if filter.is_some() && !doc.contains_any(&cfg.filter) {
            continue;
        }
        let enc = vocab.encode_document(doc);
        for rec in extract_attention_maps(&model, &enc, &vocab, filter)? {
            let name = match rec.sentence {
                Some(s) => format!("{}_{}_s{}_h{}.csv", doc.id, rec.level, s, rec.head),
                None => format!("{}_{}_h{}.csv", doc.id, rec.level, rec.head),
            };
            let path = dir.join(name);
            export_heatmap(&rec, &path)?;
            written.push(path);
        }
        n_docs += 1;
    }
    if written.is_empty() {
        return Err(Error::EmptyResult("no document matched the heatmap filter".into()));
    }
    println!("wrote {} heatmaps for {n_docs} documents to {}", written.len(), dir.display());
    Ok(written)
}
