//! `ncm` subcommands. Machine-readable lines on stdout, diagnostics on stderr.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ncm_core::checkpoint::{self, Checkpoint};
use ncm_core::decode::DecodeConfig;
use ncm_core::eval::{
    aggregate_judgments, aggregate_votes, build_comparison, from_jsonl, model_perplexity, to_jsonl,
    ComparisonTally, ExportRecord, JudgeVote, Responder,
};
use ncm_core::ngram::{
    default_grid, grid_search, ngram_perplexity, train_ngram, NGramCounts, SmoothingConfig,
};
use ncm_core::text::{
    anonymize, build_helpdesk_pairs, pair_consecutive, pairs_to_file_string, parse_dialogue_corpus,
    parse_pairs_file, split_pairs, subtitle_conversation, DocumentPairs, NameLexicon, TextPair,
    Tokenizer, Utterance, Vocabulary, DEFAULT_CONTEXT_CAP,
};
use ncm_core::train::{
    train_resume, EpochRecord, OptimizerKind, OptimizerState, TrainSchedule, DEFAULT_CLIP,
};
use ncm_core::{ModelConfig, ModelParams, TrainingPair};

use crate::engine::Engine;
use crate::responder::HttpResponder;
use crate::server::{self, AppState, ServeOptions};
use crate::session::{ChatSession, Speaker};

#[derive(Debug, Parser)]
#[command(
    name = "ncm",
    version,
    about = "Train, evaluate and serve a seq2seq conversational model"
)]
pub struct Cli {
    /// Version of the machine-readable output lines.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=1))]
    pub format_version: u32,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn raw corpus files into a context/reply pairs file.
    Ingest(IngestArgs),
    /// Build a frequency-capped vocabulary from pairs files.
    BuildVocab(BuildVocabArgs),
    /// Train the seq2seq model and write a checkpoint.
    Train(TrainArgs),
    /// Perplexity of a checkpoint on a pairs file.
    Ppl(PplArgs),
    /// Count n-grams over a pairs file.
    NgramTrain(NgramTrainArgs),
    /// Perplexity of an n-gram model on a pairs file.
    NgramPpl(NgramPplArgs),
    /// Decode replies for a single context.
    Decode(DecodeArgs),
    /// Interactive chat on the terminal.
    Chat(ChatArgs),
    /// Run the HTTP chat and evaluation service.
    Serve(ServeArgs),
    /// Answer a question list with two responders and export judging records.
    EvalExport(EvalExportArgs),
    /// Tally judge votes.
    EvalAggregate(EvalAggregateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusFormat {
    /// Blank-line separated conversations with `A:`/`B:` turns.
    Helpdesk,
    /// One subtitle file per document; consecutive sentences are paired.
    Subtitle,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub format: CorpusFormat,
    /// Input files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a document-disjoint validation split here.
    #[arg(long)]
    pub valid_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub valid_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Newline-separated person names replaced by `<name>` (helpdesk only).
    #[arg(long)]
    pub names: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CONTEXT_CAP)]
    pub context_cap: usize,
    #[arg(long)]
    pub split_digits: bool,
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    #[arg(long = "pairs", required = true)]
    pub pairs: Vec<PathBuf>,
    /// Total size including the special tokens.
    #[arg(long, default_value_t = 20_000)]
    pub cap: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adagrad,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adagrad => OptimizerKind::AdaGrad,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    /// Required unless resuming.
    #[arg(long, required_unless_present = "resume")]
    pub vocab: Option<PathBuf>,
    /// Continue from a checkpoint: its config, vocabulary, weights and
    /// optimizer state are reused.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Defaults to the hidden size.
    #[arg(long)]
    pub embedding: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    /// Projection width before the classifier; 0 disables it.
    #[arg(long, default_value_t = 0)]
    pub projection: usize,
    #[arg(long)]
    pub reverse_input: bool,
    /// Initialization seed; also the shuffle seed unless given separately.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    #[arg(long, value_enum, default_value = "adagrad")]
    pub optimizer: OptimizerArg,
    /// Defaults to 0.5 for SGD and 0.1 for AdaGrad.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_CLIP)]
    pub clip: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long)]
    pub lr_halving: bool,
    #[arg(long, default_value_t = ncm_core::train::DEFAULT_PATIENCE, conflicts_with = "no_early_stop")]
    pub patience: usize,
    /// Run every epoch regardless of validation loss.
    #[arg(long)]
    pub no_early_stop: bool,
    /// Tab-separated per-epoch log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PplArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
}

#[derive(Debug, Args)]
pub struct NgramTrainArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub order: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NgramPplArgs {
    #[arg(long)]
    pub counts: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Comma-separated interpolation weights, uniform floor first.
    #[arg(long, conflicts_with = "tune")]
    pub weights: Option<String>,
    /// Pick weights from the default grid by perplexity on these pairs.
    #[arg(long)]
    pub tune: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeOptions {
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    #[arg(long, default_value_t = 32)]
    pub max_len: usize,
    #[arg(long)]
    pub allow_unk: bool,
    #[arg(long)]
    pub length_normalize: bool,
    /// Newline-separated person names replaced by `<name>`.
    #[arg(long)]
    pub names: Option<PathBuf>,
}

impl DecodeOptions {
    fn config(&self) -> DecodeConfig {
        DecodeConfig {
            max_len: self.max_len,
            beam_width: self.beam,
            ban_unk: !self.allow_unk,
            length_normalize: self.length_normalize,
        }
    }
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub decode: DecodeOptions,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CONTEXT_CAP)]
    pub context_cap: usize,
    #[command(flatten)]
    pub decode: DecodeOptions,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, env = "NCM_BIND", default_value = server::DEFAULT_BIND)]
    pub bind: String,
    /// Append one JSON record per chat turn to this file.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long)]
    pub names: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CONTEXT_CAP)]
    pub context_cap: usize,
    #[arg(long, default_value_t = 32)]
    pub max_len: usize,
    #[arg(long, default_value_t = 20)]
    pub max_beam: usize,
    #[arg(long, default_value_t = 5)]
    pub compare_beam: usize,
    #[arg(long, default_value_t = 0)]
    pub judge_seed: u64,
    #[arg(long, default_value_t = 10)]
    pub external_timeout_secs: u64,
}

#[derive(Debug, Args)]
pub struct EvalExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One question per line.
    #[arg(long)]
    pub questions: PathBuf,
    /// Responder B; without it B is the local model with beam search.
    #[arg(long)]
    pub external_url: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long, default_value_t = 32)]
    pub max_len: usize,
    #[arg(long, default_value_t = 10)]
    pub timeout_secs: u64,
    #[arg(long)]
    pub names: Option<PathBuf>,
    /// Blind records for judges: item id, question, answer A, answer B.
    #[arg(long)]
    pub out: PathBuf,
    /// Full items including which responder produced each answer.
    #[arg(long)]
    pub items_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalAggregateArgs {
    /// JSONL votes: `{"item_id", "judge_id", "choice": "A"|"B"|"tie"}`.
    #[arg(long)]
    pub votes: PathBuf,
    /// Exported records; every listed item must then have four votes.
    #[arg(long)]
    pub items: Option<PathBuf>,
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_names(path: Option<&Path>) -> anyhow::Result<NameLexicon> {
    Ok(match path {
        Some(p) => NameLexicon::parse(&read(p)?),
        None => NameLexicon::default(),
    })
}

fn read_vocab(path: &Path) -> anyhow::Result<Vocabulary> {
    Vocabulary::parse(&read(path)?)
        .with_context(|| format!("parsing vocabulary {}", path.display()))
}

fn read_text_pairs(path: &Path) -> anyhow::Result<Vec<TextPair>> {
    parse_pairs_file(&read(path)?).with_context(|| format!("parsing pairs {}", path.display()))
}

fn read_pairs(path: &Path, vocab: &Vocabulary) -> anyhow::Result<Vec<TrainingPair>> {
    read_text_pairs(path)?
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.encode(vocab)
                .with_context(|| format!("{}: pair {}", path.display(), i + 1))
        })
        .collect()
}

fn load_engine(checkpoint: &Path, names: Option<&Path>) -> anyhow::Result<Engine> {
    Engine::load(checkpoint, names)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::BuildVocab(a) => build_vocab(a),
        Command::Train(a) => train(a),
        Command::Ppl(a) => ppl(a),
        Command::NgramTrain(a) => ngram_train(a),
        Command::NgramPpl(a) => ngram_ppl(a),
        Command::Decode(a) => decode(a),
        Command::Chat(a) => chat(a),
        Command::Serve(a) => serve(a),
        Command::EvalExport(a) => eval_export(a),
        Command::EvalAggregate(a) => eval_aggregate(a),
    }
}

fn source_name(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

fn ingest(a: IngestArgs) -> anyhow::Result<()> {
    let tokenizer = Tokenizer::new(a.split_digits);
    let names = read_names(a.names.as_deref())?;
    let mut docs: Vec<DocumentPairs<TextPair>> = Vec::new();
    for path in &a.inputs {
        let raw = read(path)?;
        match a.format {
            CorpusFormat::Helpdesk => {
                let convs = parse_dialogue_corpus(&source_name(path), &raw)
                    .with_context(|| format!("parsing {}", path.display()))?;
                for mut conv in convs {
                    conv.utterances = conv
                        .utterances
                        .iter()
                        .map(|u| Utterance::new(u.actor, anonymize(&u.text, &names, &tokenizer)))
                        .collect();
                    docs.push(DocumentPairs {
                        doc_id: conv.id.clone(),
                        pairs: build_helpdesk_pairs(&conv, &tokenizer, a.context_cap),
                    });
                }
            }
            CorpusFormat::Subtitle => {
                let (conv, stats) = subtitle_conversation(source_name(path), &raw);
                log::debug!("{}: {stats:?}", path.display());
                docs.push(DocumentPairs {
                    doc_id: conv.id.clone(),
                    pairs: pair_consecutive(&conv, &tokenizer),
                });
            }
        }
    }
    let doc_count = docs.len();
    match &a.valid_out {
        Some(valid_path) => {
            let (train, valid) = split_pairs(docs, a.valid_fraction, a.seed)?;
            write(&a.out, &pairs_to_file_string(&train))?;
            write(valid_path, &pairs_to_file_string(&valid))?;
            println!(
                "docs={doc_count} train_pairs={} valid_pairs={}",
                train.len(),
                valid.len()
            );
        }
        None => {
            let pairs: Vec<TextPair> = docs.into_iter().flat_map(|d| d.pairs).collect();
            write(&a.out, &pairs_to_file_string(&pairs))?;
            println!("docs={doc_count} pairs={}", pairs.len());
        }
    }
    Ok(())
}

fn build_vocab(a: BuildVocabArgs) -> anyhow::Result<()> {
    let mut pairs = Vec::new();
    for p in &a.pairs {
        pairs.extend(read_text_pairs(p)?);
    }
    let tokens = pairs.iter().flat_map(|p| p.context.iter().chain(&p.reply));
    let vocab = Vocabulary::build(tokens, a.cap)?;
    write(&a.out, &vocab.to_file_string())?;
    println!("vocab_size={}", vocab.len());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let (config, vocab, params, optimizer) = match &a.resume {
        Some(path) => {
            let ck = checkpoint::load(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            let optimizer = ck.optimizer.unwrap_or_default();
            (ck.config, ck.vocab, ck.params, optimizer)
        }
        None => {
            let vocab = read_vocab(
                a.vocab
                    .as_deref()
                    .expect("clap requires --vocab without --resume"),
            )?;
            let config = ModelConfig {
                vocab_size: vocab.len(),
                embedding_size: a.embedding.unwrap_or(a.hidden),
                hidden_size: a.hidden,
                num_layers: a.layers,
                projection_size: a.projection,
                seed: a.seed,
                reverse_input: a.reverse_input,
            };
            let params = ModelParams::<f32>::init(&config)?;
            (config, vocab, params, OptimizerState::default())
        }
    };
    let train_pairs = read_pairs(&a.train, &vocab)?;
    let valid_pairs = read_pairs(&a.valid, &vocab)?;
    let kind = OptimizerKind::from(a.optimizer);
    let schedule = TrainSchedule {
        optimizer: kind,
        learning_rate: a.lr.unwrap_or_else(|| kind.default_learning_rate()),
        clip_threshold: a.clip,
        epochs: a.epochs,
        batch_size: a.batch,
        shuffle_seed: a.shuffle_seed.unwrap_or(a.seed),
        lr_halving: a.lr_halving,
        patience: (!a.no_early_stop).then_some(a.patience),
    };
    let mut log_file = match &a.log {
        Some(p) => {
            let mut f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            writeln!(f, "{}", EpochRecord::LOG_HEADER)?;
            Some(f)
        }
        None => None,
    };
    eprintln!("{}", EpochRecord::LOG_HEADER);
    let outcome = train_resume(
        params,
        optimizer,
        &config,
        &train_pairs,
        &valid_pairs,
        &schedule,
        |r| {
            let line = r.log_line();
            eprintln!("{line}");
            if let Some(f) = log_file.as_mut() {
                if let Err(e) = writeln!(f, "{line}") {
                    log::warn!("epoch log write failed: {e}");
                }
            }
        },
    )?;
    let best = &outcome.history.epochs[outcome.best_epoch - 1];
    let ck = Checkpoint {
        config,
        vocab,
        params: outcome.params,
        optimizer: Some(outcome.optimizer),
        schedule: Some(schedule),
    };
    checkpoint::save(&ck, &a.out)
        .with_context(|| format!("saving checkpoint {}", a.out.display()))?;
    println!(
        "epochs={} best_epoch={} valid_perplexity={:.6} stop={:?}",
        outcome.history.epochs.len(),
        outcome.best_epoch,
        best.valid_perplexity,
        outcome.history.stop
    );
    Ok(())
}

fn ppl(a: PplArgs) -> anyhow::Result<()> {
    let ck = checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let pairs = read_pairs(&a.pairs, &ck.vocab)?;
    let report = model_perplexity(&ck.params, &ck.config, &pairs)?;
    println!(
        "perplexity={:.6} tokens={}",
        report.perplexity, report.token_count
    );
    Ok(())
}

fn ngram_train(a: NgramTrainArgs) -> anyhow::Result<()> {
    let vocab = read_vocab(&a.vocab)?;
    let pairs = read_pairs(&a.pairs, &vocab)?;
    let counts = train_ngram(&pairs, a.order, vocab.len())?;
    write(&a.out, &counts.to_text())?;
    println!("order={} tokens={}", counts.order(), counts.token_count());
    Ok(())
}

fn parse_weights(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse::<f64>()
                .with_context(|| format!("bad weight {w:?}"))
        })
        .collect()
}

fn ngram_ppl(a: NgramPplArgs) -> anyhow::Result<()> {
    let vocab = read_vocab(&a.vocab)?;
    let counts = NGramCounts::from_text(&read(&a.counts)?)
        .with_context(|| format!("parsing {}", a.counts.display()))?;
    if counts.vocab_size() != vocab.len() {
        bail!(
            "counts were built for a vocabulary of {} but {} has {}",
            counts.vocab_size(),
            a.vocab.display(),
            vocab.len()
        );
    }
    let pairs = read_pairs(&a.pairs, &vocab)?;
    let smoothing = match (&a.weights, &a.tune) {
        (Some(w), _) => SmoothingConfig::new(parse_weights(w)?)?,
        (None, Some(tune)) => {
            let tune_pairs = read_pairs(tune, &vocab)?;
            let (best, _) = grid_search(&counts, &tune_pairs, &default_grid(counts.order()))?;
            eprintln!("weights={:?}", best.weights());
            best
        }
        (None, None) => SmoothingConfig::default_for(counts.order()),
    };
    let report = ngram_perplexity(&counts, &smoothing, &pairs)?;
    println!(
        "perplexity={:.6} tokens={}",
        report.perplexity, report.token_count
    );
    Ok(())
}

fn decode(a: DecodeArgs) -> anyhow::Result<()> {
    let engine = load_engine(&a.checkpoint, a.decode.names.as_deref())?;
    let context = engine.encode(&a.text);
    let hyps = engine.decode(&context, &a.decode.config())?;
    for (rank, h) in hyps.iter().enumerate() {
        println!("{}\t{:.6}\t{}", rank + 1, h.logprob, h.text);
    }
    Ok(())
}

fn chat(a: ChatArgs) -> anyhow::Result<()> {
    let engine = load_engine(&a.checkpoint, a.decode.names.as_deref())?;
    let dconfig = a.decode.config();
    let mut session = ChatSession::new("terminal", a.context_cap);
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    eprintln!("type a message, or /quit to leave");
    for line in stdin.lock().lines() {
        let line = line?;
        let message = line.trim();
        if message == "/quit" {
            break;
        }
        if message.is_empty() {
            continue;
        }
        let ids = engine.encode(message);
        session.push_turn(Speaker::User, &ids, message, None);
        let best = engine.decode(&session.context(), &dconfig)?.swap_remove(0);
        session.push_turn(Speaker::Model, &best.tokens, &best.text, Some(best.logprob));
        writeln!(out, "{}", best.text)?;
        out.flush()?;
    }
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let engine = load_engine(&a.checkpoint, a.names.as_deref())?;
    let options = ServeOptions {
        context_cap: a.context_cap,
        max_len: a.max_len,
        max_beam: a.max_beam,
        compare_beam: a.compare_beam,
        judge_seed: a.judge_seed,
        external_timeout: Duration::from_secs(a.external_timeout_secs),
        transcript_path: a.transcript.clone(),
    };
    let state = Arc::new(AppState::new(engine, options)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(server::serve(state, &a.bind))
}

fn eval_export(a: EvalExportArgs) -> anyhow::Result<()> {
    let engine = load_engine(&a.checkpoint, a.names.as_deref())?;
    let questions: Vec<String> = read(&a.questions)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if questions.is_empty() {
        bail!("{} contains no questions", a.questions.display());
    }
    let greedy = DecodeConfig {
        max_len: a.max_len,
        ..DecodeConfig::default()
    };
    let local_a = engine.responder("local-greedy", greedy);
    let b: Box<dyn Responder + '_> = match &a.external_url {
        Some(url) => Box::new(HttpResponder::new(
            "external",
            url.clone(),
            Duration::from_secs(a.timeout_secs),
        )?),
        None => Box::new(engine.responder(
            "local-beam",
            DecodeConfig {
                beam_width: a.beam,
                ..greedy
            },
        )),
    };
    let set = build_comparison(&questions, &local_a, b.as_ref());
    let records: Vec<ExportRecord> = set.items.iter().map(ExportRecord::from).collect();
    write(&a.out, &to_jsonl(&records))?;
    if let Some(p) = &a.items_out {
        write(p, &to_jsonl(&set.items))?;
    }
    for u in &set.unavailable {
        eprintln!(
            "unavailable: question {} ({})",
            u.question_index + 1,
            u.reason
        );
    }
    println!(
        "items={} unavailable={}",
        set.items.len(),
        set.unavailable.len()
    );
    Ok(())
}

fn eval_aggregate(a: EvalAggregateArgs) -> anyhow::Result<()> {
    let votes: Vec<JudgeVote> =
        from_jsonl(&read(&a.votes)?).with_context(|| format!("parsing {}", a.votes.display()))?;
    let tally: ComparisonTally = match &a.items {
        Some(path) => {
            let records: Vec<ExportRecord> =
                from_jsonl(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
            let ids: Vec<&str> = records.iter().map(|r| r.item_id.as_str()).collect();
            aggregate_judgments(&ids, &votes)?
        }
        None => aggregate_votes(&votes)?,
    };
    let per_judge: BTreeMap<&str, usize> = votes.iter().fold(BTreeMap::new(), |mut m, v| {
        *m.entry(v.judge_id.as_str()).or_default() += 1;
        m
    });
    log::info!("{} votes from {} judges", votes.len(), per_judge.len());
    println!(
        "{} {} {} {}",
        tally.preferred_a, tally.preferred_b, tally.ties, tally.disagreements
    );
    Ok(())
}
