//! `wordalign`: synthesize corpora, train subword vocabularies and alignment
//! models, align, evaluate and analyze errors.
//!
//! A corpus is a directory holding `src.txt`, `tgt.txt` and, when gold
//! alignments are known, `gold.txt` (Pharaoh format), one sentence per line.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use wordalign::aligner::{align_corpus, AggregationKind, AlignOptions, SymmetrizationKind};
use wordalign::corpus::{
    parse_parallel_corpus, parse_pharaoh, render_parallel_corpus, train_subword_vocab, GoldAlignment, Link,
    SentencePair, SubwordVocabulary,
};
use wordalign::encoder::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig};
use wordalign::metrics::{evaluate_corpus, stratify};
use wordalign::synth::{generate_with_manifest, SynthSpec};
use wordalign::training::{train, TrainConfig};
use wordalign::{Error, Result};

const SRC_FILE: &str = "src.txt";
const TGT_FILE: &str = "tgt.txt";
const GOLD_FILE: &str = "gold.txt";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "wordalign", version, about = "Word alignment by per-token binary classification")]
struct Cli {
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic parallel corpus with gold alignments.
    Synth(SynthArgs),
    /// Train a subword vocabulary on a corpus (both sides).
    Vocab(VocabArgs),
    /// Train or fine-tune an alignment model.
    Train(TrainArgs),
    /// Align a corpus with a trained model.
    Align(AlignArgs),
    /// Score predicted alignments against gold alignments.
    Eval(EvalArgs),
    /// Count untranslated and one-to-many words and how many were aligned correctly.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON generator spec; missing fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output corpus directory (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the generator spec's sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the generator spec's source-language seed.
    #[arg(long)]
    dict_seed: Option<u64>,
    /// Overrides the generator spec's sentence count.
    #[arg(long)]
    n_sentences: Option<usize>,
}

#[derive(Args, Debug)]
struct VocabArgs {
    /// Corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    /// Target vocabulary size, including specials and the character alphabet.
    #[arg(long)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training corpus directory; needs gold.txt.
    #[arg(long)]
    corpus: PathBuf,
    /// Validation corpus directory; enables best-epoch selection.
    #[arg(long)]
    val: Option<PathBuf>,
    /// JSON file with optional "train" and "model" sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to fine-tune. Without it a fresh model is built over --vocab.
    #[arg(long, conflicts_with = "vocab")]
    init: Option<PathBuf>,
    /// Vocabulary for a fresh model.
    #[arg(long, required_unless_present = "init")]
    vocab: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Also write the last-epoch checkpoint here.
    #[arg(long)]
    out_final: Option<PathBuf>,
    /// Which checkpoint --out receives [default: best with --val, else final].
    #[arg(long, value_enum)]
    select: Option<Select>,
    /// Write the per-epoch JSON log here instead of stdout.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Adam learning rate [default: 0.002].
    #[arg(long)]
    lr: Option<f64>,
    /// Examples per batch [default: 8].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Epochs [default: 5; 25 is customary for few-shot runs from scratch].
    #[arg(long)]
    epochs: Option<usize>,
    /// Decision threshold for validation scoring [default: 0.5].
    #[arg(long, value_parser = parse_threshold)]
    threshold: Option<f64>,
    /// Seed for initialization, shuffling and subset sampling [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Train on a random subset of this many pairs (32 is customary).
    #[arg(long)]
    few_shot_k: Option<usize>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Select {
    Best,
    Final,
}

#[derive(Args, Debug)]
struct AlignArgs {
    /// Corpus directory; gold.txt is ignored.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Aggregation of token probabilities within a word.
    #[arg(long, default_value = "max", value_parser = parse_agg)]
    agg: AggregationKind,
    /// Symmetrization: forward, reverse, avg, intersection, union, bidi-avg.
    #[arg(long, default_value = "avg", value_parser = parse_sym)]
    sym: SymmetrizationKind,
    /// Decision threshold, strictly between 0 and 1.
    #[arg(long, default_value = "0.5", value_parser = parse_threshold)]
    threshold: f64,
    /// Pharaoh output, one line per sentence pair.
    #[arg(long)]
    out: PathBuf,
    /// Also write `i-j:score` lines with the score of every predicted link.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted alignments (Pharaoh).
    #[arg(long)]
    hyp: PathBuf,
    /// Gold alignments (Pharaoh; `p` marks possible-only links).
    #[arg(long)]
    gold: PathBuf,
    /// JSON report destination [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Corpus directory the alignments refer to.
    #[arg(long)]
    corpus: PathBuf,
    /// JSON report destination; the text table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_threshold(s: &str) -> std::result::Result<f64, String> {
    let t: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(format!("{t} is not strictly between 0 and 1"))
    }
}

fn parse_sym(s: &str) -> std::result::Result<SymmetrizationKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_agg(s: &str) -> std::result::Result<AggregationKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Model shape in a training config file; the vocabulary size comes from the
/// vocabulary itself.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelShape {
    d_model: usize,
    n_heads: usize,
    n_layers: usize,
    ffn_dim: usize,
    max_len: usize,
    dropout_rate: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        let c = ModelConfig::with_vocab_size(0);
        ModelShape {
            d_model: c.d_model,
            n_heads: c.n_heads,
            n_layers: c.n_layers,
            ffn_dim: c.ffn_dim,
            max_len: c.max_len,
            dropout_rate: c.dropout_rate,
        }
    }
}

impl ModelShape {
    fn config(self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            ffn_dim: self.ffn_dim,
            max_len: self.max_len,
            vocab_size,
            dropout_rate: self.dropout_rate,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    train: TrainConfig,
    model: ModelShape,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Writes through a temporary file in the destination directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{} is not a readable file", path.display())))
    }
}

fn require_out(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Error::InvalidArgument(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn require_corpus(dir: &Path, gold: bool) -> Result<()> {
    require_file(&dir.join(SRC_FILE))?;
    require_file(&dir.join(TGT_FILE))?;
    if gold {
        require_file(&dir.join(GOLD_FILE))?;
    }
    Ok(())
}

fn read_corpus(dir: &Path, gold: bool) -> Result<Vec<SentencePair>> {
    let g = dir.join(GOLD_FILE);
    parse_parallel_corpus(&dir.join(SRC_FILE), &dir.join(TGT_FILE), gold.then_some(g.as_path()))
}

fn read_alignments(path: &Path) -> Result<Vec<GoldAlignment>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            parse_pharaoh(line).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Hypothesis and gold files must have the same number of lines.
fn read_hyp_gold(hyp: &Path, gold: &Path) -> Result<(Vec<BTreeSet<Link>>, Vec<GoldAlignment>)> {
    let h = read_alignments(hyp)?;
    let g = read_alignments(gold)?;
    if h.len() != g.len() {
        return Err(Error::LineCountMismatch {
            left: hyp.display().to_string(),
            left_lines: h.len(),
            right: gold.display().to_string(),
            right_lines: g.len(),
        });
    }
    Ok((h.into_iter().map(|a| a.possible().clone()).collect(), g))
}

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_synth(a: SynthArgs) -> Result<()> {
    if let Some(p) = &a.spec {
        require_file(p)?;
    }
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(s) = a.dict_seed {
        spec.dict_seed = s;
    }
    if let Some(n) = a.n_sentences {
        spec.n_sentences = n;
    }
    spec.validate()?;
    let (pairs, manifest) = generate_with_manifest(&spec)?;
    fs::create_dir_all(&a.out_dir)?;
    let (src, tgt, gold) = render_parallel_corpus(&pairs);
    write_atomic(&a.out_dir.join(SRC_FILE), src.as_bytes())?;
    write_atomic(&a.out_dir.join(TGT_FILE), tgt.as_bytes())?;
    write_atomic(&a.out_dir.join(GOLD_FILE), gold.as_bytes())?;
    write_atomic(&a.out_dir.join(MANIFEST_FILE), json_line(&manifest)?.as_bytes())?;
    log::info!("wrote {} sentence pairs to {}", pairs.len(), a.out_dir.display());
    Ok(())
}

fn run_vocab(a: VocabArgs) -> Result<()> {
    require_corpus(&a.corpus, false)?;
    require_out(&a.out)?;
    let corpus = read_corpus(&a.corpus, false)?;
    let vocab = train_subword_vocab(&corpus, a.size)?;
    write_atomic(&a.out, vocab.to_text().as_bytes())
}

fn run_train(a: TrainArgs) -> Result<()> {
    require_corpus(&a.corpus, true)?;
    if let Some(v) = &a.val {
        require_corpus(v, true)?;
    }
    for p in [&a.config, &a.init, &a.vocab].into_iter().flatten() {
        require_file(p)?;
    }
    for p in [Some(&a.out), a.out_final.as_ref(), a.log.as_ref()].into_iter().flatten() {
        require_out(p)?;
    }

    let file: TrainFile = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainFile::default(),
    };
    let mut cfg = file.train;
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.threshold {
        cfg.threshold = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.few_shot_k.is_some() {
        cfg.few_shot_k = a.few_shot_k;
    }
    cfg.validate()?;

    let init = match (&a.init, &a.vocab) {
        (Some(p), _) => load_checkpoint(&fs::read(p)?)?,
        (None, Some(v)) => {
            let vocab = SubwordVocabulary::load(v)?;
            Checkpoint::fresh(file.model.config(vocab.len()), vocab, cfg.seed)?
        }
        (None, None) => unreachable!("clap requires --init or --vocab"),
    };
    let corpus = read_corpus(&a.corpus, true)?;
    let val = a.val.as_deref().map(|v| read_corpus(v, true)).transpose()?;

    let mut log_text = String::new();
    let outcome = train(&corpus, val.as_deref(), &cfg, init, |e| {
        let line = serde_json::to_string(e).expect("log entries serialize");
        log::info!("{line}");
        log_text.push_str(&line);
        log_text.push('\n');
    })?;
    if outcome.skipped > 0 {
        log::warn!("{} overlong queries were skipped", outcome.skipped);
    }
    let select = a.select.unwrap_or(if val.is_some() { Select::Best } else { Select::Final });
    let chosen = match select {
        Select::Best => &outcome.best_checkpoint,
        Select::Final => &outcome.final_checkpoint,
    };
    write_atomic(&a.out, &save_checkpoint(chosen))?;
    if let Some(p) = &a.out_final {
        write_atomic(p, &save_checkpoint(&outcome.final_checkpoint))?;
    }
    emit(a.log.as_deref(), &log_text)
}

fn run_align(a: AlignArgs) -> Result<()> {
    require_corpus(&a.corpus, false)?;
    require_file(&a.checkpoint)?;
    require_out(&a.out)?;
    if let Some(p) = &a.scores {
        require_out(p)?;
    }
    let checkpoint = load_checkpoint(&fs::read(&a.checkpoint)?)?;
    let corpus = read_corpus(&a.corpus, false)?;
    let opts = AlignOptions {
        agg: a.agg,
        kind: a.sym,
        threshold: a.threshold,
    };
    let mut out = String::new();
    let mut scores = String::new();
    for (i, hyp) in align_corpus(&corpus, &checkpoint, &opts).into_iter().enumerate() {
        let hyp = hyp.map_err(|e| Error::Parse {
            file: a.corpus.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push_str(&hyp.to_pharaoh());
        out.push('\n');
        scores.push_str(&hyp.scores_line());
        scores.push('\n');
    }
    write_atomic(&a.out, out.as_bytes())?;
    if let Some(p) = &a.scores {
        write_atomic(p, scores.as_bytes())?;
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    require_file(&a.hyp)?;
    require_file(&a.gold)?;
    if let Some(p) = &a.out {
        require_out(p)?;
    }
    let (hyps, golds) = read_hyp_gold(&a.hyp, &a.gold)?;
    let report = evaluate_corpus(&hyps, &golds)?;
    emit(a.out.as_deref(), &json_line(&report)?)
}

fn run_analyze(a: AnalyzeArgs) -> Result<()> {
    require_file(&a.hyp)?;
    require_file(&a.gold)?;
    require_corpus(&a.corpus, false)?;
    if let Some(p) = &a.out {
        require_out(p)?;
    }
    let (hyps, golds) = read_hyp_gold(&a.hyp, &a.gold)?;
    let pairs = read_corpus(&a.corpus, false)?;
    let report = stratify(&hyps, &golds, &pairs)?;
    if let Some(p) = &a.out {
        write_atomic(p, json_line(&report)?.as_bytes())?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let run = move || match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Vocab(a) => run_vocab(a),
        Command::Train(a) => run_train(a),
        Command::Align(a) => run_align(a),
        Command::Eval(a) => run_eval(a),
        Command::Analyze(a) => run_analyze(a),
    };
    match cli.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(run),
        None => run(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let next = s.to_string();
                if !msg.contains(&next) {
                    msg = format!("{msg}: {next}");
                }
                source = s.source();
            }
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
