//! End-to-end runner over a workspace directory.
//!
//! Stages run in order `ingest -> embed -> index -> reps -> tokenizer ->
//! train -> generate -> evaluate`. Each stage records a fingerprint of its
//! inputs (upstream artifact hashes plus the config fields it reads) and the
//! sha256 of every file it wrote in `manifest.json`. A stage is skipped when
//! its fingerprint is unchanged and every recorded output is still present
//! with the recorded hash, so a deleted or edited artifact reruns its stage;
//! downstream stages rerun only if that changes their inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, ClauseTypeCatalog, Contract, Corpus, CorpusSplit, InputFormat, SplitPart, DEFAULT_RATIOS,
};
use crate::decoder::{
    generate, load_checkpoint, save_checkpoint, train, DecodeMode, DecoderConfig, DecoderModel,
    GenOutput, TrainConfig, TrainExample,
};
use crate::embedding::{embed_corpus, encode, EmbeddingStore, EncoderKind, EncoderSpec, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_report, length_stats, lengths_csv, LengthStats, MetricReport, MetricRow, ScoredPair};
use crate::representation::cache::{sha256_hex, training_contract_reps, CacheInputs};
use crate::representation::RepCache;
use crate::simindex::{AnnIndex, HnswParams, DEFAULT_K, MIN_K};
use crate::strategy::ContextStrategy;
use crate::tokenizer::{normalize, train_vocab, Vocab};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CATALOG_FILE: &str = "catalog.json";
pub const SPLIT_FILE: &str = "split.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.creb";
pub const INDEX_FILE: &str = "index.hnsw";
pub const REPS_DIR: &str = "reps";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const MODEL_DIR: &str = "model";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const OUTPUTS_FILE: &str = "outputs.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const LENGTHS_JSON: &str = "length_stats.json";
pub const LENGTHS_CSV: &str = "lengths.csv";

pub const STAGES: [&str; 8] = [
    "ingest", "embed", "index", "reps", "tokenizer", "train", "generate", "evaluate",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub format: InputFormat,
    pub min_clauses: usize,
    pub top_types: usize,
    pub encoder: EncoderSpec,
    /// Precomputed CREB file, used when the encoder kind is `external-file`.
    pub embeddings: Option<PathBuf>,
    pub k: usize,
    pub strategy: ContextStrategy,
    pub split_seed: u64,
    pub split_ratios: [f64; 3],
    pub index: HnswParams,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub decode: DecodeMode,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            format: InputFormat::Contract,
            min_clauses: 5,
            top_types: 15,
            encoder: EncoderSpec::hash(DEFAULT_DIM, 0),
            embeddings: None,
            k: DEFAULT_K,
            strategy: ContextStrategy::ContrType,
            split_seed: 13,
            split_ratios: DEFAULT_RATIOS,
            index: HnswParams::default(),
            decoder: DecoderConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeMode::Greedy,
            out_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Checks everything that can be checked without touching the corpus.
    pub fn validate(&self) -> Result<()> {
        if !self.corpus.is_file() {
            return Err(Error::Config(format!("corpus file {} does not exist", self.corpus.display())));
        }
        if self.min_clauses == 0 || self.top_types == 0 {
            return Err(Error::Config("min_clauses and top_types must be positive".into()));
        }
        if self.k < MIN_K {
            return Err(Error::Config(format!("k must be at least {MIN_K}, got {}", self.k)));
        }
        if self.encoder.dim == 0 {
            return Err(Error::Config("encoder dim must be positive".into()));
        }
        if self.encoder.kind == EncoderKind::ExternalFile {
            match &self.embeddings {
                Some(p) if p.is_file() => {}
                Some(p) => {
                    return Err(Error::Config(format!("embedding file {} does not exist", p.display())))
                }
                None => {
                    return Err(Error::Config(
                        "the external-file encoder needs an embeddings path".into(),
                    ))
                }
            }
        }
        self.decoder.validate()?;
        self.train.validate()?;
        self.decoder.check_strategy(self.strategy, self.encoder.dim)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&raw)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut body = String::new();
    for r in rows {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Every file under `root`, relative to `base`, in sorted order.
fn files_under(base: &Path, root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.is_file() {
            out.push(dir.strip_prefix(base).unwrap_or(&dir).to_path_buf());
            continue;
        }
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            stack.push(entry.map_err(|e| Error::io(&dir, e))?.path());
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: String,
    /// Output path relative to the workspace -> sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub stages: Vec<(String, StageStatus)>,
    pub report: MetricReport,
    pub lengths: LengthStats,
}

impl PipelineSummary {
    pub fn status(&self, stage: &str) -> Option<StageStatus> {
        self.stages.iter().find(|(s, _)| s == stage).map(|(_, st)| *st)
    }
}

struct Runner {
    dir: PathBuf,
    manifest: RunManifest,
    statuses: Vec<(String, StageStatus)>,
}

impl Runner {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let manifest = if path.exists() { read_json(&path)? } else { RunManifest::default() };
        Ok(Runner {
            dir: dir.to_path_buf(),
            manifest,
            statuses: Vec::new(),
        })
    }

    fn up_to_date(&self, stage: &str, inputs: &str) -> bool {
        let Some(rec) = self.manifest.stages.get(stage) else {
            return false;
        };
        rec.inputs == inputs
            && rec
                .outputs
                .iter()
                .all(|(rel, hash)| file_hash(&self.dir.join(rel)).is_ok_and(|h| &h == hash))
    }

    /// Hash of an upstream output as recorded in the manifest.
    fn output_hash(&self, stage: &str, rel: &str) -> String {
        self.manifest
            .stages
            .get(stage)
            .and_then(|r| r.outputs.get(rel))
            .cloned()
            .unwrap_or_default()
    }

    /// Combined hash of every recorded output of `stage`.
    fn stage_hash(&self, stage: &str) -> String {
        let rec = self.manifest.stages.get(stage).cloned().unwrap_or_default();
        sha256_hex(serde_json::to_string(&rec.outputs).unwrap_or_default().as_bytes())
    }

    fn stage(
        &mut self,
        name: &str,
        inputs: String,
        run: impl FnOnce(&Path) -> Result<Vec<PathBuf>>,
    ) -> Result<()> {
        if self.up_to_date(name, &inputs) {
            log::info!("{name}: up to date");
            self.statuses.push((name.to_owned(), StageStatus::UpToDate));
            return Ok(());
        }
        log::info!("{name}: running");
        let wrap = |e: Error| Error::Stage {
            stage: name.to_owned(),
            source: Box::new(e),
        };
        let written = run(&self.dir).map_err(wrap)?;
        let mut outputs = BTreeMap::new();
        for rel in written {
            for file in files_under(&self.dir, &self.dir.join(&rel)).map_err(wrap)? {
                let hash = file_hash(&self.dir.join(&file)).map_err(wrap)?;
                outputs.insert(file.to_string_lossy().replace('\\', "/"), hash);
            }
        }
        self.manifest
            .stages
            .insert(name.to_owned(), StageRecord { inputs, outputs });
        write_json(&self.dir.join(MANIFEST_FILE), &self.manifest).map_err(wrap)?;
        self.statuses.push((name.to_owned(), StageStatus::Ran));
        Ok(())
    }
}

fn fingerprint(parts: &[(&str, String)]) -> String {
    let mut body = String::new();
    for (k, v) in parts {
        let _ = writeln!(body, "{k}={v}");
    }
    sha256_hex(body.as_bytes())
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    Ok(Corpus::new(corpus::ingest(path, InputFormat::Contract)?))
}

/// HNSW index over the unexcluded representations of the training contracts.
pub fn build_index(
    contracts: &[Contract],
    split: &CorpusSplit,
    store: &EmbeddingStore,
    params: HnswParams,
) -> Result<AnnIndex> {
    let entries: Vec<(String, Vec<f32>)> = training_contract_reps(contracts, split, store)?
        .into_iter()
        .map(|r| (r.contract_id, r.vector.iter().map(|&v| v as f32).collect()))
        .collect();
    AnnIndex::build(&entries, params)
}

/// Clause texts of the training contracts, used to induce the vocabulary.
pub fn training_texts<'a>(contracts: &'a [Contract], split: &CorpusSplit) -> Vec<&'a str> {
    split
        .contracts(SplitPart::Train, contracts)
        .into_iter()
        .flat_map(|c| c.clauses.iter().map(|cl| cl.text.as_str()))
        .collect()
}

fn clause_text<'a>(corpus: &'a Corpus, contract_id: &str, clause_id: &str) -> Result<&'a str> {
    corpus
        .require(contract_id)?
        .clause(clause_id)
        .map(|c| c.text.as_str())
        .ok_or_else(|| Error::MissingEmbedding(clause_id.to_owned()))
}

/// Decoder examples of one split part under `strategy`.
pub fn decoder_examples(
    cache: &RepCache,
    corpus: &Corpus,
    vocab: &Vocab,
    strategy: ContextStrategy,
    part: SplitPart,
) -> Result<Vec<TrainExample>> {
    let contexts = cache.contexts(strategy)?;
    cache
        .examples_in(part)
        .map(|e| {
            Ok(TrainExample {
                id: e.id().to_owned(),
                context: contexts.require(e.id())?.to_vec(),
                target: vocab.encode(clause_text(corpus, &e.contract_id, &e.clause_id)?),
            })
        })
        .collect()
}

pub fn generate_outputs(
    model: &DecoderModel<f32>,
    cache: &RepCache,
    corpus: &Corpus,
    vocab: &Vocab,
    strategy: ContextStrategy,
    part: SplitPart,
    mode: DecodeMode,
) -> Result<Vec<GenOutput>> {
    let contexts = cache.contexts(strategy)?;
    let max_len = model.config().max_len;
    cache
        .examples_in(part)
        .map(|e| {
            let token_ids = generate(model, contexts.require(e.id())?, max_len, mode)?;
            Ok(GenOutput {
                example_id: e.id().to_owned(),
                clause_type: e.clause_type.clone(),
                text: vocab.decode(&token_ids)?,
                token_ids,
                target: normalize(clause_text(corpus, &e.contract_id, &e.clause_id)?),
            })
        })
        .collect()
}

/// Metric report, length statistics and the paired `(actual, generated)` lengths.
pub fn evaluate_outputs(outputs: &[GenOutput]) -> Result<(MetricReport, LengthStats, Vec<(usize, usize)>)> {
    let pairs: Vec<ScoredPair> = outputs
        .iter()
        .map(|o| ScoredPair {
            clause_type: o.clause_type.clone(),
            candidate: o.text.clone(),
            reference: o.target.clone(),
        })
        .collect();
    let report = aggregate_report(&pairs)?;
    let lengths: Vec<(usize, usize)> = outputs
        .iter()
        .map(|o| (corpus::whitespace_len(&o.target), corpus::whitespace_len(&o.text)))
        .collect();
    let stats = length_stats(&lengths)?;
    Ok((report, stats, lengths))
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineSummary> {
    cfg.validate()?;
    let mut r = Runner::open(&cfg.out_dir)?;

    let ingest_inputs = fingerprint(&[
        ("corpus", file_hash(&cfg.corpus)?),
        ("format", cfg.format.to_string()),
        ("min_clauses", cfg.min_clauses.to_string()),
        ("top_types", cfg.top_types.to_string()),
        ("split_seed", cfg.split_seed.to_string()),
        ("split_ratios", json(&cfg.split_ratios)),
    ]);
    r.stage("ingest", ingest_inputs, |dir| {
        let raw = corpus::ingest(&cfg.corpus, cfg.format)?;
        let (kept, catalog) = corpus::filter_corpus(&raw, cfg.min_clauses, cfg.top_types)?;
        let split = corpus::split(&kept, cfg.split_ratios, cfg.split_seed)?;
        corpus::write_jsonl(&dir.join(CORPUS_FILE), &kept)?;
        write_json(&dir.join(CATALOG_FILE), &catalog)?;
        write_json(&dir.join(SPLIT_FILE), &split)?;
        Ok(vec![CORPUS_FILE.into(), CATALOG_FILE.into(), SPLIT_FILE.into()])
    })?;
    let corpus_hash = r.output_hash("ingest", CORPUS_FILE);
    let split_hash = r.output_hash("ingest", SPLIT_FILE);
    let catalog_hash = r.output_hash("ingest", CATALOG_FILE);

    let external = match (&cfg.encoder.kind, &cfg.embeddings) {
        (EncoderKind::ExternalFile, Some(p)) => file_hash(p)?,
        _ => String::new(),
    };
    let embed_inputs = fingerprint(&[
        ("corpus", corpus_hash.clone()),
        ("encoder", json(&cfg.encoder)),
        ("external", external),
    ]);
    r.stage("embed", embed_inputs, |dir| {
        let corpus = load_corpus(&dir.join(CORPUS_FILE))?;
        let store = match cfg.encoder.kind {
            EncoderKind::HashDeterministic => embed_corpus(&cfg.encoder, corpus.contracts())?,
            EncoderKind::ExternalFile => {
                let path = cfg.embeddings.as_deref().unwrap_or(Path::new(""));
                let store = EmbeddingStore::read_with_dim(path, cfg.encoder.dim)?;
                for clause in corpus.contracts().iter().flat_map(|c| &c.clauses) {
                    store.require(&clause.clause_id)?;
                }
                store
            }
        };
        store.write(&dir.join(EMBEDDINGS_FILE))?;
        Ok(vec![EMBEDDINGS_FILE.into(), format!("{EMBEDDINGS_FILE}.json").into()])
    })?;
    let embed_hash = r.stage_hash("embed");

    let index_inputs = fingerprint(&[
        ("corpus", corpus_hash.clone()),
        ("split", split_hash.clone()),
        ("embeddings", embed_hash.clone()),
        ("params", json(&cfg.index)),
    ]);
    r.stage("index", index_inputs, |dir| {
        let corpus = load_corpus(&dir.join(CORPUS_FILE))?;
        let split: CorpusSplit = read_json(&dir.join(SPLIT_FILE))?;
        let store = EmbeddingStore::read(&dir.join(EMBEDDINGS_FILE))?;
        build_index(corpus.contracts(), &split, &store, cfg.index)?.write(&dir.join(INDEX_FILE))?;
        Ok(vec![INDEX_FILE.into()])
    })?;

    let reps_inputs = fingerprint(&[
        ("corpus", corpus_hash.clone()),
        ("split", split_hash.clone()),
        ("catalog", catalog_hash.clone()),
        ("embeddings", embed_hash),
        ("index", r.output_hash("index", INDEX_FILE)),
        ("k", cfg.k.to_string()),
    ]);
    r.stage("reps", reps_inputs, |dir| {
        let corpus = load_corpus(&dir.join(CORPUS_FILE))?;
        let split: CorpusSplit = read_json(&dir.join(SPLIT_FILE))?;
        let catalog: ClauseTypeCatalog = read_json(&dir.join(CATALOG_FILE))?;
        let store = EmbeddingStore::read(&dir.join(EMBEDDINGS_FILE))?;
        let index = AnnIndex::read(&dir.join(INDEX_FILE))?;
        let inputs = CacheInputs {
            corpus: &corpus,
            store: &store,
            split: &split,
            catalog: &catalog,
            index: &index,
            k: cfg.k,
        };
        let reps_dir = dir.join(REPS_DIR);
        if reps_dir.exists() {
            fs::remove_dir_all(&reps_dir).map_err(|e| Error::io(&reps_dir, e))?;
        }
        RepCache::build(&inputs, &ContextStrategy::ALL)?.write(&reps_dir)?;
        Ok(vec![REPS_DIR.into()])
    })?;

    let tok_inputs = fingerprint(&[
        ("corpus", corpus_hash),
        ("split", split_hash),
        ("vocab_size", cfg.decoder.vocab_size.to_string()),
    ]);
    r.stage("tokenizer", tok_inputs, |dir| {
        let corpus = load_corpus(&dir.join(CORPUS_FILE))?;
        let split: CorpusSplit = read_json(&dir.join(SPLIT_FILE))?;
        let vocab = train_vocab(&training_texts(corpus.contracts(), &split), cfg.decoder.vocab_size)?;
        vocab.write(&dir.join(VOCAB_FILE))?;
        Ok(vec![VOCAB_FILE.into(), format!("{VOCAB_FILE}.json").into()])
    })?;
    let vocab_hash = r.output_hash("tokenizer", VOCAB_FILE);
    let contexts_rel = format!("{REPS_DIR}/contexts/{}.creb", cfg.strategy.name());
    let contexts_hash = r.output_hash("reps", &contexts_rel);
    let examples_hash = r.output_hash("reps", &format!("{REPS_DIR}/examples.jsonl"));

    let train_inputs = fingerprint(&[
        ("contexts", contexts_hash.clone()),
        ("examples", examples_hash.clone()),
        ("vocab", vocab_hash.clone()),
        ("strategy", cfg.strategy.to_string()),
        ("decoder", json(&cfg.decoder)),
        ("train", json(&cfg.train)),
    ]);
    r.stage("train", train_inputs, |dir| {
        let corpus = load_corpus(&dir.join(CORPUS_FILE))?;
        let cache = RepCache::load_trusted(&dir.join(REPS_DIR))?;
        let vocab = Vocab::read(&dir.join(VOCAB_FILE))?;
        let train_set = decoder_examples(&cache, &corpus, &vocab, cfg.strategy, SplitPart::Train)?;
        let valid_set = decoder_examples(&cache, &corpus, &vocab, cfg.strategy, SplitPart::Valid)?;
        let mut model = DecoderModel::<f32>::init(cfg.decoder.clone())?;
        let report = train(&mut model, &train_set, &valid_set, &cfg.train)?;
        let meta = BTreeMap::from([("strategy".to_string(), cfg.strategy.to_string())]);
        save_checkpoint(&model, &dir.join(MODEL_DIR), meta)?;
        write_json(&dir.join(TRAIN_REPORT_FILE), &report)?;
        Ok(vec![MODEL_DIR.into(), TRAIN_REPORT_FILE.into()])
    })?;

    let gen_inputs = fingerprint(&[
        ("model", r.stage_hash("train")),
        ("contexts", contexts_hash),
        ("examples", examples_hash),
        ("vocab", vocab_hash),
        ("decode", cfg.decode.to_string()),
    ]);
    r.stage("generate", gen_inputs, |dir| {
        let corpus = load_corpus(&dir.join(CORPUS_FILE))?;
        let cache = RepCache::load_trusted(&dir.join(REPS_DIR))?;
        let vocab = Vocab::read(&dir.join(VOCAB_FILE))?;
        let (model, _) = load_checkpoint(&dir.join(MODEL_DIR))?;
        let outputs = generate_outputs(&model, &cache, &corpus, &vocab, cfg.strategy, SplitPart::Test, cfg.decode)?;
        write_jsonl(&dir.join(OUTPUTS_FILE), &outputs)?;
        Ok(vec![OUTPUTS_FILE.into()])
    })?;

    let eval_inputs = fingerprint(&[("outputs", r.output_hash("generate", OUTPUTS_FILE))]);
    let title = format!("{} (k={})", cfg.strategy, cfg.k);
    r.stage("evaluate", eval_inputs, |dir| {
        let outputs: Vec<GenOutput> = read_jsonl(&dir.join(OUTPUTS_FILE))?;
        let (report, stats, lengths) = evaluate_outputs(&outputs)?;
        write_json(&dir.join(REPORT_JSON), &report)?;
        fs::write(dir.join(REPORT_TXT), report.to_table(&title)).map_err(|e| Error::io(dir.join(REPORT_TXT), e))?;
        write_json(&dir.join(LENGTHS_JSON), &stats)?;
        fs::write(dir.join(LENGTHS_CSV), lengths_csv(&lengths)).map_err(|e| Error::io(dir.join(LENGTHS_CSV), e))?;
        Ok(vec![REPORT_JSON.into(), REPORT_TXT.into(), LENGTHS_JSON.into(), LENGTHS_CSV.into()])
    })?;

    Ok(PipelineSummary {
        report: read_json(&r.dir.join(REPORT_JSON))?,
        lengths: read_json(&r.dir.join(LENGTHS_JSON))?,
        stages: r.statuses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub k: usize,
    pub overall: MetricRow,
}

/// Reruns the pipeline once per distinct `k`, each in `out_dir/k<k>`.
pub fn ablate_k(cfg: &RunConfig, ks: &[usize]) -> Result<Vec<AblationRow>> {
    if ks.is_empty() {
        return Err(Error::Config("no k values given".into()));
    }
    if let Some(&bad) = ks.iter().find(|&&k| k < MIN_K) {
        return Err(Error::Config(format!("k must be at least {MIN_K}, got {bad}")));
    }
    let unique: BTreeSet<usize> = ks.iter().copied().collect();
    if unique.len() < ks.len() {
        log::warn!("duplicate k values dropped; running {unique:?}");
    }
    unique
        .into_iter()
        .map(|k| {
            let run = RunConfig {
                k,
                out_dir: cfg.out_dir.join(format!("k{k}")),
                ..cfg.clone()
            };
            Ok(AblationRow {
                k,
                overall: run_pipeline(&run)?.report.overall,
            })
        })
        .collect()
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("   k |   n | ROUGE-1 ROUGE-2 ROUGE-L |  BLEU-1  BLEU-2    BLEU\n");
    for r in rows {
        let s = &r.overall.scores;
        let _ = writeln!(
            out,
            "{:>4} | {:>3} | {:>7.2} {:>7.2} {:>7.2} | {:>7.2} {:>7.2} {:>7.2}",
            r.k, r.overall.count, s.rouge1, s.rouge2, s.rouge_l, s.bleu1, s.bleu2, s.bleu
        );
    }
    out
}

/// CSV of clause vectors for the actual and generated clause of every output.
/// Texts with nothing to encode are written as zero vectors.
pub fn dump_embeddings(outputs: &[GenOutput], spec: &EncoderSpec) -> Result<String> {
    if spec.kind != EncoderKind::HashDeterministic {
        return Err(Error::Config(
            "generated clauses can only be embedded with the hash encoder".into(),
        ));
    }
    let mut out = String::from("id,kind");
    for i in 0..spec.dim {
        let _ = write!(out, ",v{i}");
    }
    out.push('\n');
    for o in outputs {
        for (kind, text) in [("actual", &o.target), ("generated", &o.text)] {
            let vector = match encode(spec, text) {
                Ok(e) => e.into_inner(),
                Err(Error::UnencodableText) => vec![0.0; spec.dim],
                Err(e) => return Err(e),
            };
            let _ = write!(out, "{},{kind}", csv_field(&o.example_id));
            for v in vector {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
