//! `clauseforge` command-line entry point.
//!
//! Single-step commands work inside a workspace directory (`--workspace`,
//! or `CLAUSEFORGE_DIR`, default `.`) using the same file names as the full
//! pipeline, so steps can be mixed with `run`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use clauseforge_core::corpus::{self, ClauseTypeCatalog, CorpusSplit, InputFormat, SplitPart};
use clauseforge_core::decoder::{
    generate, load_checkpoint, save_checkpoint, train, DecodeMode, DecoderModel, GenOutput,
};
use clauseforge_core::embedding::{embed_corpus, EmbeddingStore, EncoderKind, EncoderSpec};
use clauseforge_core::pipeline::{
    ablate_k, ablation_table, build_index, decoder_examples, dump_embeddings,
    evaluate_outputs, generate_outputs, load_corpus, read_json, read_jsonl, run_pipeline,
    training_texts, write_json, write_jsonl, RunConfig, CATALOG_FILE, CORPUS_FILE,
    EMBEDDINGS_FILE, INDEX_FILE, LENGTHS_CSV, LENGTHS_JSON, MODEL_DIR, OUTPUTS_FILE, REPORT_JSON,
    REPORT_TXT, REPS_DIR, SPLIT_FILE, VOCAB_FILE,
};
use clauseforge_core::representation::cache::CacheInputs;
use clauseforge_core::representation::{contract_rep, RepCache};
use clauseforge_core::simindex::{AnnIndex, HnswParams};
use clauseforge_core::strategy::ContextStrategy;
use clauseforge_core::synthetic::{synthetic_corpus, SynthConfig};
use clauseforge_core::tokenizer::{train_vocab, Vocab};

#[derive(Parser)]
#[command(name = "clauseforge", version, about = "Clause recommendation pipeline")]
struct Cli {
    /// Workspace directory for single-step commands.
    #[arg(long, global = true, env = "CLAUSEFORGE_DIR", default_value = ".")]
    workspace: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a templated synthetic corpus as contract JSON lines.
    Synth(SynthArgs),
    /// Parse and filter a corpus into the workspace.
    Ingest(IngestArgs),
    /// Split the workspace corpus by contract.
    Split(SplitArgs),
    /// Embed every clause of the workspace corpus.
    Embed(EmbedArgs),
    /// Build or query the similar-contract index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Build the representation cache.
    #[command(subcommand)]
    Reps(RepsCommand),
    /// Train the decoder on cached contexts.
    Train(TrainArgs),
    /// Generate clauses from a checkpoint.
    Generate(GenerateArgs),
    /// Score generated clauses.
    Evaluate(EvaluateArgs),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
    /// Rerun the pipeline for several neighbor counts.
    AblateK(AblateArgs),
    /// Write actual and generated clause vectors as CSV.
    DumpEmbeddings(DumpArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    contracts: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "contract")]
    format: InputFormat,
    #[arg(long, default_value_t = 5)]
    min_clauses: usize,
    #[arg(long, default_value_t = 15)]
    top_types: usize,
    /// Output directory (defaults to the workspace).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 13)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Hash,
    File,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long, value_enum, default_value_t = EncoderArg::Hash)]
    encoder: EncoderArg,
    #[arg(long, default_value_t = 768)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Precomputed CREB file for `--encoder file`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory holding the ingested corpus (defaults to the workspace).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum IndexCommand {
    Build {
        #[arg(long = "M", alias = "m", default_value_t = 16)]
        m: usize,
        #[arg(long = "efc", alias = "ef-construction", default_value_t = 200)]
        ef_construction: usize,
        #[arg(long, default_value_t = 64)]
        ef_search: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Query {
        /// Contract whose representation is the query; it is excluded from results.
        #[arg(long, alias = "exclude")]
        contract: String,
        #[arg(long, default_value_t = 6)]
        k: usize,
        #[arg(long)]
        index: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RepsCommand {
    Build {
        #[arg(long, default_value_t = 6)]
        k: usize,
        /// `all` or a comma-separated list of strategy names.
        #[arg(long, default_value = "all")]
        strategies: String,
        /// Directory holding the corpus, split, catalog and index.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    strategy: ContextStrategy,
    /// Representation cache (defaults to `<workspace>/reps`).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Run config supplying the decoder and training sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Generate a single example and print it.
    #[arg(long)]
    example_id: Option<String>,
    #[arg(long, default_value = "test")]
    part: String,
    #[arg(long, default_value = "greedy")]
    mode: DecodeMode,
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    outputs: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<ContextStrategy>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 6, 8, 10, 12])]
    k: Vec<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    outputs: Option<PathBuf>,
    #[arg(long, default_value_t = 768)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let ws = cli.workspace;
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Ingest(a) => cmd_ingest(&ws, a),
        Command::Split(a) => cmd_split(&ws, a),
        Command::Embed(a) => cmd_embed(&ws, a),
        Command::Index(c) => cmd_index(&ws, c),
        Command::Reps(c) => cmd_reps(&ws, c),
        Command::Train(a) => cmd_train(&ws, a),
        Command::Generate(a) => cmd_generate(&ws, a),
        Command::Evaluate(a) => cmd_evaluate(&ws, a),
        Command::Run(a) => cmd_run(a),
        Command::AblateK(a) => cmd_ablate(a),
        Command::DumpEmbeddings(a) => cmd_dump(&ws, a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        contracts: a.contracts,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let contracts = synthetic_corpus(&cfg)?;
    corpus::write_jsonl(&a.out, &contracts)?;
    println!("wrote {} contracts to {}", contracts.len(), a.out.display());
    Ok(())
}

fn cmd_ingest(ws: &Path, a: IngestArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| ws.to_path_buf());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let raw = corpus::ingest(&a.input, a.format)?;
    let (kept, catalog) = corpus::filter_corpus(&raw, a.min_clauses, a.top_types)?;
    corpus::write_jsonl(&out.join(CORPUS_FILE), &kept)?;
    write_json(&out.join(CATALOG_FILE), &catalog)?;
    let clauses: usize = kept.iter().map(|c| c.clauses.len()).sum();
    println!(
        "{} of {} contracts kept, {clauses} clauses, {} clause types selected",
        kept.len(),
        raw.len(),
        catalog.selected.len()
    );
    for t in &catalog.selected {
        println!("  {:<32} {:>7} clauses  mean len {:.1} (std {:.1})", t.clause_type, t.count, t.mean_len, t.std_len);
    }
    Ok(())
}

fn cmd_split(ws: &Path, a: SplitArgs) -> Result<()> {
    let [train, valid, test] = a.ratios[..] else {
        bail!("--ratios needs exactly three values");
    };
    let corpus = load_corpus(&ws.join(CORPUS_FILE))?;
    let split = corpus::split(corpus.contracts(), [train, valid, test], a.seed)?;
    write_json(&ws.join(SPLIT_FILE), &split)?;
    println!(
        "train {} / valid {} / test {} contracts",
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );
    Ok(())
}

fn cmd_embed(ws: &Path, a: EmbedArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus.as_deref().unwrap_or(ws).join(CORPUS_FILE))?;
    let out = a.out.unwrap_or_else(|| ws.join(EMBEDDINGS_FILE));
    let store = match a.encoder {
        EncoderArg::Hash => embed_corpus(&EncoderSpec::hash(a.dim, a.seed), corpus.contracts())?,
        EncoderArg::File => {
            let input = a.input.context("--encoder file needs --input F.creb")?;
            let store = EmbeddingStore::read_with_dim(&input, a.dim)?;
            for clause in corpus.contracts().iter().flat_map(|c| &c.clauses) {
                store.require(&clause.clause_id)?;
            }
            store
        }
    };
    store.write(&out)?;
    println!("{} embeddings of dim {} written to {}", store.len(), store.dim(), out.display());
    Ok(())
}

fn cmd_index(ws: &Path, c: IndexCommand) -> Result<()> {
    match c {
        IndexCommand::Build {
            m,
            ef_construction,
            ef_search,
            seed,
            out,
        } => {
            let corpus = load_corpus(&ws.join(CORPUS_FILE))?;
            let split: CorpusSplit = read_json(&ws.join(SPLIT_FILE))?;
            let store = EmbeddingStore::read(&ws.join(EMBEDDINGS_FILE))?;
            let params = HnswParams {
                m,
                ef_construction,
                ef_search,
                seed,
            };
            let index = build_index(corpus.contracts(), &split, &store, params)?;
            index.write(&out.unwrap_or_else(|| ws.join(INDEX_FILE)))?;
            println!("indexed {} training contracts", index.len());
        }
        IndexCommand::Query { contract, k, index } => {
            let corpus = load_corpus(&ws.join(CORPUS_FILE))?;
            let store = EmbeddingStore::read(&ws.join(EMBEDDINGS_FILE))?;
            let index = AnnIndex::read(&index.unwrap_or_else(|| ws.join(INDEX_FILE)))?;
            let rep = contract_rep(corpus.require(&contract)?, &store, None)?;
            let query: Vec<f32> = rep.vector.iter().map(|&v| v as f32).collect();
            for n in index.search(&query, k, Some(&contract))? {
                println!("{}\t{:.6}", n.id, n.distance);
            }
        }
    }
    Ok(())
}

fn parse_strategies(raw: &str) -> Result<Vec<ContextStrategy>> {
    if raw == "all" {
        return Ok(ContextStrategy::ALL.to_vec());
    }
    raw.split(',')
        .map(|s| s.trim().parse::<ContextStrategy>().map_err(Into::into))
        .collect()
}

fn cmd_reps(ws: &Path, c: RepsCommand) -> Result<()> {
    let RepsCommand::Build {
        k,
        strategies,
        corpus,
        embeddings,
        out,
    } = c;
    let strategies = parse_strategies(&strategies)?;
    let src = corpus.as_deref().unwrap_or(ws);
    let corpus = load_corpus(&src.join(CORPUS_FILE))?;
    let split: CorpusSplit = read_json(&src.join(SPLIT_FILE))?;
    let catalog: ClauseTypeCatalog = read_json(&src.join(CATALOG_FILE))?;
    let store = EmbeddingStore::read(&embeddings.unwrap_or_else(|| ws.join(EMBEDDINGS_FILE)))?;
    let index = AnnIndex::read(&src.join(INDEX_FILE))?;
    let inputs = CacheInputs {
        corpus: &corpus,
        store: &store,
        split: &split,
        catalog: &catalog,
        index: &index,
        k,
    };
    let cache = RepCache::build(&inputs, &strategies)?;
    cache.write(&out.unwrap_or_else(|| ws.join(REPS_DIR)))?;
    println!(
        "{} examples cached for {} strategies (fingerprint {})",
        cache.manifest.example_count,
        cache.manifest.strategies.len(),
        cache.manifest.fingerprint
    );
    for (name, n) in &cache.manifest.fallback_counts {
        if *n > 0 {
            println!("  {name}: {n} clause-similarity fallbacks");
        }
    }
    Ok(())
}

fn workspace_vocab(ws: &Path, size: usize) -> Result<Vocab> {
    let path = ws.join(VOCAB_FILE);
    if path.exists() {
        return Ok(Vocab::read(&path)?);
    }
    let corpus = load_corpus(&ws.join(CORPUS_FILE))?;
    let split: CorpusSplit = read_json(&ws.join(SPLIT_FILE))?;
    let vocab = train_vocab(&training_texts(corpus.contracts(), &split), size)?;
    vocab.write(&path)?;
    log::info!("trained a {}-token vocabulary", vocab.len());
    Ok(vocab)
}

fn cmd_train(ws: &Path, a: TrainArgs) -> Result<()> {
    let cache = RepCache::load_trusted(&a.cache.unwrap_or_else(|| ws.join(REPS_DIR)))?;
    let (decoder, train_cfg) = match &a.config {
        Some(p) => {
            let cfg = RunConfig::from_file(p)?;
            (cfg.decoder, cfg.train)
        }
        None => {
            let cfg = RunConfig::default();
            let mut d = cfg.decoder;
            d.context_dim = a.strategy.out_dim(cache.manifest.dim);
            (d, cfg.train)
        }
    };
    decoder.check_strategy(a.strategy, cache.manifest.dim)?;
    let corpus = load_corpus(&ws.join(CORPUS_FILE))?;
    let vocab = workspace_vocab(ws, decoder.vocab_size)?;
    let train_set = decoder_examples(&cache, &corpus, &vocab, a.strategy, SplitPart::Train)?;
    let valid_set = decoder_examples(&cache, &corpus, &vocab, a.strategy, SplitPart::Valid)?;
    let mut model = DecoderModel::<f32>::init(decoder)?;
    println!("{} parameters, {} training examples", model.num_params(), train_set.len());
    let report = train(&mut model, &train_set, &valid_set, &train_cfg)?;
    let out = a.out.unwrap_or_else(|| ws.join(MODEL_DIR));
    let meta = BTreeMap::from([("strategy".to_string(), a.strategy.to_string())]);
    save_checkpoint(&model, &out, meta)?;
    write_json(&out.join("train_report.json"), &report)?;
    println!(
        "best epoch {} with loss {:.4}; checkpoint in {}",
        report.best_epoch,
        report.best_loss,
        out.display()
    );
    Ok(())
}

fn parse_part(raw: &str) -> Result<SplitPart> {
    Ok(match raw {
        "train" => SplitPart::Train,
        "valid" => SplitPart::Valid,
        "test" => SplitPart::Test,
        other => bail!("unknown split part {other}"),
    })
}

fn cmd_generate(ws: &Path, a: GenerateArgs) -> Result<()> {
    let (model, manifest) = load_checkpoint(&a.ckpt.unwrap_or_else(|| ws.join(MODEL_DIR)))?;
    let strategy: ContextStrategy = manifest
        .meta
        .get("strategy")
        .context("checkpoint does not record its strategy")?
        .parse()?;
    let cache = RepCache::load_trusted(&a.cache.unwrap_or_else(|| ws.join(REPS_DIR)))?;
    let vocab = Vocab::read(&ws.join(VOCAB_FILE))?;
    if let Some(id) = a.example_id {
        let context = cache.contexts(strategy)?.require(&id)?;
        let ids = generate(&model, context, model.config().max_len, a.mode)?;
        println!("{}", vocab.decode(&ids)?);
        return Ok(());
    }
    let corpus = load_corpus(&ws.join(CORPUS_FILE))?;
    let part = parse_part(&a.part)?;
    let outputs = generate_outputs(&model, &cache, &corpus, &vocab, strategy, part, a.mode)?;
    write_jsonl(&ws.join(OUTPUTS_FILE), &outputs)?;
    println!("{} clauses generated into {}", outputs.len(), ws.join(OUTPUTS_FILE).display());
    Ok(())
}

fn cmd_evaluate(ws: &Path, a: EvaluateArgs) -> Result<()> {
    let outputs: Vec<GenOutput> = read_jsonl(&a.outputs.unwrap_or_else(|| ws.join(OUTPUTS_FILE)))?;
    let (report, stats, lengths) = evaluate_outputs(&outputs)?;
    let table = report.to_table("Evaluation");
    write_json(&ws.join(REPORT_JSON), &report)?;
    fs::write(ws.join(REPORT_TXT), &table)?;
    write_json(&ws.join(LENGTHS_JSON), &stats)?;
    fs::write(ws.join(LENGTHS_CSV), clauseforge_core::metrics::lengths_csv(&lengths))?;
    print!("{table}");
    print_lengths(&stats);
    Ok(())
}

fn print_lengths(stats: &clauseforge_core::metrics::LengthStats) {
    println!(
        "actual length    mean {:.2} std {:.2} median {:.1}",
        stats.actual.mean, stats.actual.std, stats.actual.median
    );
    println!(
        "generated length mean {:.2} std {:.2} median {:.1}",
        stats.generated.mean, stats.generated.std, stats.generated.median
    );
    match (stats.pearson_r, &stats.pearson_error) {
        (Some(r), _) => println!("pearson r {r:.4}"),
        (None, Some(e)) => println!("pearson r undefined: {e}"),
        (None, None) => {}
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg = RunConfig::from_file(&a.config)?;
    if let Some(d) = a.out_dir {
        cfg.out_dir = d;
    }
    if let Some(s) = a.strategy {
        cfg.strategy = s;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    let summary = run_pipeline(&cfg)?;
    for (stage, status) in &summary.stages {
        println!("{stage:<10} {status:?}");
    }
    print!("{}", summary.report.to_table(&format!("{} (k={})", cfg.strategy, cfg.k)));
    print_lengths(&summary.lengths);
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = RunConfig::from_file(&a.config)?;
    if let Some(d) = a.out_dir {
        cfg.out_dir = d;
    }
    let rows = ablate_k(&cfg, &a.k)?;
    let table = ablation_table(&rows);
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("ablation.txt"), &table)?;
    write_json(&cfg.out_dir.join("ablation.json"), &rows)?;
    print!("{table}");
    Ok(())
}

fn cmd_dump(ws: &Path, a: DumpArgs) -> Result<()> {
    let outputs: Vec<GenOutput> = read_jsonl(&a.outputs.unwrap_or_else(|| ws.join(OUTPUTS_FILE)))?;
    let spec = EncoderSpec {
        kind: EncoderKind::HashDeterministic,
        dim: a.dim,
        seed: a.seed,
    };
    fs::write(&a.out, dump_embeddings(&outputs, &spec)?)?;
    println!("{} rows written to {}", 2 * outputs.len(), a.out.display());
    Ok(())
}
