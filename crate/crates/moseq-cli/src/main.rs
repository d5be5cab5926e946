//! `moseq` command line: train bundles, decode, evaluate, analyze errors and
//! benchmark pruning.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 data error,
//! 4 model-file error. Log verbosity comes from the `MOSEQ_LOG` env var.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use moseq::config::{parse_columns, parse_orders, RunConfig};
use moseq::corpus::{self, Sentence, TagScheme};
use moseq::decoder::{decode_corpus, MultiOrderDecoder, PruneConfig};
use moseq::error::{Error, Result};
use moseq::eval;
use moseq::tagger::{
    load_bundle, make_lattice, save_bundle, train_single_order, ModelBundle, ScoreLattice,
    SingleOrderModel,
};

#[derive(Parser)]
#[command(name = "moseq", version, about = "Multi-order sequence labeling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one single-order model per requested order and write a bundle
    Train(TrainArgs),
    /// Decode a CoNLL file, appending predicted tags as a final column
    Decode(DecodeArgs),
    /// Chunk precision/recall/F1 of predictions against gold
    Eval(EvalArgs),
    /// Error taxonomy and entity-length buckets
    Analyze(AnalyzeArgs),
    /// Decode-time benchmark across pruning widths
    Bench(BenchArgs),
}

/// Options shared by every subcommand; flags override config-file values.
#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Token and tag column indices, e.g. `0,2` for CoNLL-2000
    #[arg(long)]
    columns: Option<String>,
    /// Input tag scheme: bio, iob1 or iobes
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for decode and eval
    #[arg(long)]
    threads: Option<usize>,
    /// Pruning switch: `on` or `off`
    #[arg(long)]
    prune: Option<String>,
    /// Top-k unigram tags kept per position while decoding
    #[arg(long)]
    prune_width: Option<usize>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        if let Some(columns) = &self.columns {
            let (tok, tag) = parse_columns(columns)?;
            cfg.token_column = tok;
            cfg.tag_column = tag;
        }
        if let Some(scheme) = &self.scheme {
            cfg.scheme = TagScheme::from_str(scheme)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(threads) = self.threads {
            cfg.threads = threads;
        }
        // width first so `--prune on` keeps an explicit width
        if let Some(width) = self.prune_width {
            cfg.apply("prune_width", &width.to_string())?;
        }
        if let Some(prune) = &self.prune {
            cfg.apply("prune", prune)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Training data (CoNLL columns)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Development data for epoch selection
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Orders to train, e.g. `1,2,3`
    #[arg(long)]
    orders: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    d_emb: Option<usize>,
    #[arg(long)]
    d_hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    min_count: Option<usize>,
    /// Train the orders on parallel threads
    #[arg(long)]
    parallel_orders: bool,
    /// Where to write the bundle
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    bundle: PathBuf,
    /// Input CoNLL file; the tag column may be absent
    #[arg(long)]
    input: PathBuf,
    /// Output path (stdout when omitted)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the DP chart trace of every sentence to this file
    #[arg(long)]
    dump_chart: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    gold: PathBuf,
    /// Predictions: a decode output file, tags in the final column
    #[arg(long)]
    pred: PathBuf,
    /// Also write the scores as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Entities longer than this are "long"
    #[arg(long, default_value_t = eval::DEFAULT_LENGTH_THRESHOLD)]
    length_threshold: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    bundle: PathBuf,
    /// Gold-tagged data to decode and score
    #[arg(long)]
    input: PathBuf,
    /// Pruning widths to time, besides the unpruned run
    #[arg(long, default_value = "5")]
    widths: String,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOSEQ_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Bench(args) => cmd_bench(args),
    };
    if let Err(e) = result {
        eprintln!("{e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) => 3,
        Error::Bundle(_) => 4,
        Error::Internal(_) => 4,
    }
}

fn read_corpus(path: &Path, cfg: &RunConfig) -> Result<Vec<Sentence>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Data(format!("opening {}: {e}", path.display())))?;
    let sentences = corpus::parse_conll(file, cfg.token_column, cfg.tag_column)?;
    corpus::normalize_to_bio(sentences, cfg.scheme)
}

/// Seed for one order's model, derived so reruns and parallel training agree.
fn order_seed(base: u64, order: usize) -> u64 {
    base.wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(order as u64))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(path) = args.train {
        cfg.train = Some(path);
    }
    if let Some(path) = args.dev {
        cfg.dev = Some(path);
    }
    if let Some(orders) = &args.orders {
        cfg.orders = parse_orders(orders)?;
    }
    let hp = &mut cfg.hyperparams;
    if let Some(v) = args.epochs {
        hp.epochs = v;
    }
    if let Some(v) = args.d_emb {
        hp.d_emb = v;
    }
    if let Some(v) = args.d_hidden {
        hp.d_hidden = v;
    }
    if let Some(v) = args.dropout {
        hp.dropout = v;
    }
    if let Some(v) = args.lr {
        hp.lr = v;
    }
    if let Some(v) = args.min_count {
        cfg.min_count = v;
    }
    if args.parallel_orders {
        cfg.parallel_orders = true;
    }
    cfg.validate()?;

    let train_path = cfg
        .train
        .clone()
        .ok_or_else(|| Error::Config("no training data (set --train or `train =` in the config)".into()))?;
    let train = read_corpus(&train_path, &cfg)?;
    let dev = match &cfg.dev {
        Some(path) => read_corpus(path, &cfg)?,
        None => Vec::new(),
    };
    if dev.is_empty() {
        log::warn!("no dev data: the final epoch's parameters will be kept");
    }
    let vocab = corpus::build_token_vocab(&train, cfg.min_count)?;
    log::info!(
        "training orders {:?} on {} sentences ({} tokens, {} features)",
        cfg.orders,
        train.len(),
        vocab.token_count(),
        vocab.feature_count()
    );

    let models: Vec<SingleOrderModel> = if cfg.parallel_orders {
        let results: Vec<Result<SingleOrderModel>> = std::thread::scope(|scope| {
            let handles: Vec<_> = cfg
                .orders
                .iter()
                .map(|&order| {
                    let train = &train;
                    let dev = &dev;
                    let vocab = &vocab;
                    let hp = cfg.hyperparams.clone();
                    let seed = order_seed(cfg.seed, order);
                    scope.spawn(move || train_single_order(train, dev, vocab, order, &hp, seed))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
        });
        results.into_iter().collect::<Result<_>>()?
    } else {
        cfg.orders
            .iter()
            .map(|&order| {
                train_single_order(
                    &train,
                    &dev,
                    &vocab,
                    order,
                    &cfg.hyperparams,
                    order_seed(cfg.seed, order),
                )
            })
            .collect::<Result<_>>()?
    };

    for m in &models {
        log::info!(
            "order {}: |labels| {}, best epoch {}, dev f1 {:.2}",
            m.order,
            m.labels.len(),
            m.meta.best_epoch,
            m.meta.dev_f1
        );
    }
    let bundle = ModelBundle::new(vocab, models)?;
    save_bundle(&bundle, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let bundle = load_bundle(&args.bundle)?;
    let text = fs::read_to_string(&args.input)
        .map_err(|e| Error::Data(format!("reading {}: {e}", args.input.display())))?;

    // keep the original lines; tokens come from the configured column
    let mut sentences: Vec<Sentence> = Vec::new();
    {
        let mut tokens: Vec<corpus::Token> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                if !tokens.is_empty() {
                    let tags = vec!["O".to_string(); tokens.len()];
                    sentences.push(Sentence::new(std::mem::take(&mut tokens), tags)?);
                }
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() <= cfg.token_column {
                return Err(Error::Data(format!(
                    "line {}: no token column {}",
                    idx + 1,
                    cfg.token_column
                )));
            }
            tokens.push(corpus::Token::new(cols[cfg.token_column]));
        }
        if !tokens.is_empty() {
            let tags = vec!["O".to_string(); tokens.len()];
            sentences.push(Sentence::new(tokens, tags)?);
        }
    }

    let predictions = if let Some(chart_path) = &args.dump_chart {
        // single-threaded so the trace order matches the input order
        let decoder = MultiOrderDecoder::from_bundle(&bundle)?;
        let mut trace = String::new();
        let mut predictions = Vec::with_capacity(sentences.len());
        for (i, sent) in sentences.iter().enumerate() {
            let lattices: Vec<ScoreLattice> = bundle
                .models
                .iter()
                .map(|m| make_lattice(&bundle.vocab, m, sent))
                .collect::<Result<_>>()?;
            let refs: Vec<&ScoreLattice> = lattices.iter().collect();
            let (tags, chart) = decoder.decode_with_chart(&refs, cfg.prune)?;
            trace.push_str(&format!("# sentence {i}\n"));
            trace.push_str(&chart.trace_text());
            predictions.push(tags);
        }
        fs::write(chart_path, trace)
            .map_err(|e| Error::Data(format!("writing {}: {e}", chart_path.display())))?;
        predictions
    } else {
        decode_corpus(&bundle, &sentences, cfg.prune, cfg.threads)?
    };

    let mut out = String::with_capacity(text.len() * 2);
    let mut sent_idx = 0usize;
    let mut tok_idx = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            out.push('\n');
            continue;
        }
        out.push_str(line);
        out.push(' ');
        out.push_str(&predictions[sent_idx][tok_idx]);
        out.push('\n');
        tok_idx += 1;
        if tok_idx == predictions[sent_idx].len() {
            sent_idx += 1;
            tok_idx = 0;
        }
    }
    match &args.output {
        Some(path) => fs::write(path, out)
            .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))?,
        None => {
            std::io::stdout()
                .write_all(out.as_bytes())
                .map_err(|e| Error::Data(format!("writing stdout: {e}")))?;
        }
    }
    Ok(())
}

fn check_alignment(gold: &[Sentence], pred: &[Sentence]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "gold has {} sentences, predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Data(format!(
                "sentence {i}: gold has {} tokens, prediction has {}",
                g.len(),
                p.len()
            )));
        }
        for t in 0..g.len() {
            if g.surface(t) != p.surface(t) {
                return Err(Error::Data(format!(
                    "sentence {i}: token {t} differs ('{}' vs '{}')",
                    g.surface(t),
                    p.surface(t)
                )));
            }
        }
    }
    Ok(())
}

fn read_gold_and_pred(
    gold_path: &Path,
    pred_path: &Path,
    cfg: &RunConfig,
) -> Result<(Vec<Sentence>, Vec<Sentence>)> {
    let gold = read_corpus(gold_path, cfg)?;
    let pred_file = fs::File::open(pred_path)
        .map_err(|e| Error::Data(format!("opening {}: {e}", pred_path.display())))?;
    let pred = corpus::parse_conll_last_tag(pred_file, cfg.token_column)?;
    check_alignment(&gold, &pred)?;
    Ok((gold, pred))
}

fn write_csv(path: &Option<PathBuf>, content: &str) -> Result<()> {
    if let Some(path) = path {
        fs::write(path, content)
            .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let (gold, pred) = read_gold_and_pred(&args.gold, &args.pred, &cfg)?;
    let pred_tags: Vec<Vec<String>> = pred.iter().map(|s| s.gold_tags().to_vec()).collect();
    let scores = eval::f1(&gold, &pred_tags)?;
    print!("{}", scores.to_text());
    write_csv(&args.csv, &scores.to_csv())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let (gold, pred) = read_gold_and_pred(&args.gold, &args.pred, &cfg)?;
    let gold_chunks = gold
        .iter()
        .map(|s| eval::extract_chunks(s.gold_tags()))
        .collect::<Result<Vec<_>>>()?;
    let pred_chunks = pred
        .iter()
        .map(|s| eval::extract_chunks(s.gold_tags()))
        .collect::<Result<Vec<_>>>()?;
    let report =
        eval::classify_errors_with_threshold(&gold_chunks, &pred_chunks, args.length_threshold)?;
    print!("{}", report.to_text());
    write_csv(&args.csv, &report.to_csv())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let bundle = load_bundle(&args.bundle)?;
    let sentences = read_corpus(&args.input, &cfg)?;
    let mut configs = vec![PruneConfig::Off];
    for width in parse_orders(&args.widths)? {
        if width < 1 {
            return Err(Error::Config("bench widths must be at least 1".into()));
        }
        configs.push(PruneConfig::Width(width));
    }
    let timings = eval::bench_decode(&bundle, &sentences, &configs)?;
    print!("{}", eval::timings_to_text(&timings));
    write_csv(&args.csv, &eval::timings_to_csv(&timings))
}
