//! Precomputed representations and per-example context vectors.
//!
//! Directory layout:
//!
//! ```text
//! manifest.json            fingerprint, k, strategies, split seed, fallback counts
//! examples.jsonl           one Example per line, train then valid then test
//! contract_reps.creb       unexcluded reps of the indexed (training) contracts
//! clause_type_reps.creb    clause-type library reps over the training split
//! contexts/<STRATEGY>.creb context vector per example id
//! ```
//!
//! The fingerprint hashes the corpus, the embeddings, the split, the index
//! snapshot and k; loading with a different expected fingerprint fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, ClauseTypeCatalog, Contract, Corpus, CorpusSplit, Example, SplitPart};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::representation::{clause_type_rep, contract_rep, ClauseTypeRep, ContractRep};
use crate::simindex::AnnIndex;
use crate::strategy::{resolve_inputs, ContextStrategy, ResolveContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub fingerprint: String,
    pub k: usize,
    pub strategies: Vec<ContextStrategy>,
    pub split_seed: u64,
    pub dim: usize,
    pub example_count: usize,
    /// Examples whose clause-similarity input fell back to the type rep.
    pub fallback_counts: BTreeMap<String, usize>,
}

pub struct CacheInputs<'a> {
    pub corpus: &'a Corpus,
    pub store: &'a EmbeddingStore,
    pub split: &'a CorpusSplit,
    pub catalog: &'a ClauseTypeCatalog,
    pub index: &'a AnnIndex,
    pub k: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl CacheInputs<'_> {
    pub fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(b"corpus\0");
        h.update(corpus::to_jsonl(self.corpus.contracts())?.as_bytes());
        h.update(b"embeddings\0");
        h.update(self.store.to_bytes()?);
        h.update(self.store.provenance.as_bytes());
        h.update(b"split\0");
        h.update(serde_json::to_vec(self.split)?);
        h.update(b"catalog\0");
        h.update(serde_json::to_vec(self.catalog)?);
        h.update(b"index\0");
        h.update(self.index.to_bytes());
        h.update(b"k\0");
        h.update((self.k as u64).to_le_bytes());
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepCache {
    pub manifest: CacheManifest,
    pub examples: Vec<Example>,
    pub contract_reps: EmbeddingStore,
    pub clause_type_reps: EmbeddingStore,
    pub contexts: BTreeMap<ContextStrategy, EmbeddingStore>,
}

/// Unexcluded reps of the training contracts, which are what the index holds.
pub fn training_contract_reps(
    contracts: &[Contract],
    split: &CorpusSplit,
    store: &EmbeddingStore,
) -> Result<Vec<ContractRep>> {
    split
        .contracts(SplitPart::Train, contracts)
        .into_iter()
        .map(|c| contract_rep(c, store, None))
        .collect()
}

/// Clause-type library reps for every catalog type, over the training split.
pub fn training_type_reps(
    contracts: &[Contract],
    split: &CorpusSplit,
    catalog: &ClauseTypeCatalog,
    store: &EmbeddingStore,
) -> Result<Vec<ClauseTypeRep>> {
    let train = split.contracts(SplitPart::Train, contracts);
    catalog
        .types()
        .map(|t| clause_type_rep(t, &train, SplitPart::Train, store))
        .collect()
}

pub fn all_examples(
    contracts: &[Contract],
    split: &CorpusSplit,
    catalog: &ClauseTypeCatalog,
) -> Vec<Example> {
    [SplitPart::Train, SplitPart::Valid, SplitPart::Test]
        .into_iter()
        .flat_map(|p| corpus::make_examples(contracts, split, p, catalog))
        .collect()
}

impl RepCache {
    pub fn build(inputs: &CacheInputs<'_>, strategies: &[ContextStrategy]) -> Result<Self> {
        let contracts = inputs.corpus.contracts();
        let store = inputs.store;
        let dim = store.dim();

        let index_reps: HashMap<String, ContractRep> =
            training_contract_reps(contracts, inputs.split, store)?
                .into_iter()
                .map(|r| (r.contract_id.clone(), r))
                .collect();
        let type_list = training_type_reps(contracts, inputs.split, inputs.catalog, store)?;

        let mut contract_reps = EmbeddingStore::new(dim, "contract reps");
        let mut sorted_ids: Vec<&String> = index_reps.keys().collect();
        sorted_ids.sort();
        for id in sorted_ids {
            contract_reps.insert_f64(id.clone(), &index_reps[id].vector)?;
        }
        let mut clause_type_reps = EmbeddingStore::new(dim, "clause type reps");
        for rep in &type_list {
            clause_type_reps.insert_f64(rep.clause_type.clone(), &rep.vector)?;
        }
        let type_reps: HashMap<String, ClauseTypeRep> = type_list
            .into_iter()
            .map(|r| (r.clause_type.clone(), r))
            .collect();

        let examples = all_examples(contracts, inputs.split, inputs.catalog);
        let ctx = ResolveContext {
            corpus: inputs.corpus,
            store,
            type_reps: &type_reps,
            index_reps: &index_reps,
            index: inputs.index,
            k: inputs.k,
        };

        let mut strategies: Vec<ContextStrategy> = strategies.to_vec();
        strategies.sort();
        strategies.dedup();
        let mut contexts = BTreeMap::new();
        let mut fallback_counts = BTreeMap::new();
        for &strategy in &strategies {
            let mut out = EmbeddingStore::new(strategy.out_dim(dim), strategy.name());
            let mut fallbacks = 0;
            for example in &examples {
                let resolved = resolve_inputs(example, strategy, &ctx)?;
                fallbacks += usize::from(resolved.fallback);
                out.insert_f64(example.id().to_owned(), &resolved.context.vector)?;
            }
            if fallbacks > 0 {
                log::warn!("{strategy}: {fallbacks} examples used the clause-type fallback");
            }
            fallback_counts.insert(strategy.name().to_owned(), fallbacks);
            contexts.insert(strategy, out);
        }

        Ok(RepCache {
            manifest: CacheManifest {
                fingerprint: inputs.fingerprint()?,
                k: inputs.k,
                strategies,
                split_seed: inputs.split.seed,
                dim,
                example_count: examples.len(),
                fallback_counts,
            },
            examples,
            contract_reps,
            clause_type_reps,
            contexts,
        })
    }

    pub fn contexts(&self, strategy: ContextStrategy) -> Result<&EmbeddingStore> {
        self.contexts.get(&strategy).ok_or_else(|| {
            Error::Config(format!("strategy {strategy} is not in the representation cache"))
        })
    }

    pub fn examples_in(&self, part: SplitPart) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.split == part)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let ctx_dir = dir.join("contexts");
        fs::create_dir_all(&ctx_dir).map_err(|e| Error::io(&ctx_dir, e))?;
        let manifest = dir.join("manifest.json");
        fs::write(&manifest, serde_json::to_string_pretty(&self.manifest)?)
            .map_err(|e| Error::io(&manifest, e))?;
        let mut lines = String::new();
        for e in &self.examples {
            lines.push_str(&serde_json::to_string(e)?);
            lines.push('\n');
        }
        let examples = dir.join("examples.jsonl");
        fs::write(&examples, lines).map_err(|e| Error::io(&examples, e))?;
        self.contract_reps.write(&dir.join("contract_reps.creb"))?;
        self.clause_type_reps.write(&dir.join("clause_type_reps.creb"))?;
        for (strategy, store) in &self.contexts {
            store.write(&ctx_dir.join(format!("{}.creb", strategy.name())))?;
        }
        Ok(())
    }

    pub fn read_manifest(dir: &Path) -> Result<CacheManifest> {
        let path = dir.join("manifest.json");
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// Loads the cache, rejecting it unless its fingerprint is `expected`.
    pub fn load(dir: &Path, expected: &str) -> Result<Self> {
        let manifest = Self::read_manifest(dir)?;
        if manifest.fingerprint != expected {
            return Err(Error::StaleCache {
                expected: expected.to_owned(),
                found: manifest.fingerprint,
            });
        }
        Self::load_unchecked(dir, manifest)
    }

    /// Loads without a fingerprint check; consumers that only read
    /// contexts (training, generation) key on the manifest instead.
    pub fn load_trusted(dir: &Path) -> Result<Self> {
        let manifest = Self::read_manifest(dir)?;
        Self::load_unchecked(dir, manifest)
    }

    fn load_unchecked(dir: &Path, manifest: CacheManifest) -> Result<Self> {
        let examples_path = dir.join("examples.jsonl");
        let raw = fs::read_to_string(&examples_path).map_err(|e| Error::io(&examples_path, e))?;
        let examples = raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<Example>, _>>()?;
        let mut contexts = BTreeMap::new();
        for &strategy in &manifest.strategies {
            let path = dir.join("contexts").join(format!("{}.creb", strategy.name()));
            let store = EmbeddingStore::read_with_dim(&path, strategy.out_dim(manifest.dim))?;
            if store.len() != examples.len() {
                return Err(Error::Format(format!(
                    "{} holds {} contexts for {} examples",
                    path.display(),
                    store.len(),
                    examples.len()
                )));
            }
            contexts.insert(strategy, store);
        }
        Ok(RepCache {
            contract_reps: EmbeddingStore::read_with_dim(&dir.join("contract_reps.creb"), manifest.dim)?,
            clause_type_reps: EmbeddingStore::read_with_dim(
                &dir.join("clause_type_reps.creb"),
                manifest.dim,
            )?,
            manifest,
            examples,
            contexts,
        })
    }
}
