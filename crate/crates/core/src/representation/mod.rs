//! Averaged clause-embedding representations.
//!
//! * contract: mean of a contract's clause embeddings, optionally holding out
//!   the clause being recommended;
//! * clause type: mean over the library of all clauses of one type;
//! * similar contracts: mean over retrieved neighbors, either of their whole
//!   contract representations or of their per-contract means restricted to
//!   one clause type.
//!
//! All accumulation is in `f64` with fixed orders: document order inside a
//! contract, ascending contract id across contracts.

pub mod cache;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Contract, Corpus, SplitPart};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};

pub use cache::{CacheManifest, RepCache};

#[derive(Debug, Clone, PartialEq)]
pub struct ContractRep {
    pub contract_id: String,
    pub vector: Vec<f64>,
    pub n_clause: usize,
    pub excluded_clause_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClauseTypeRep {
    pub clause_type: String,
    pub vector: Vec<f64>,
    pub n_members: usize,
    pub source_split: SplitPart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimKind {
    Full,
    Clause,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimContrRep {
    pub kind: SimKind,
    pub vector: Vec<f64>,
    pub k_used: usize,
    pub clause_type: Option<String>,
}

struct MeanAcc {
    sum: Vec<f64>,
    n: usize,
}

impl MeanAcc {
    fn new(dim: usize) -> Self {
        MeanAcc {
            sum: vec![0.0; dim],
            n: 0,
        }
    }

    fn add_f32(&mut self, v: &[f32]) -> Result<()> {
        self.check(v.len())?;
        for (s, x) in self.sum.iter_mut().zip(v) {
            *s += *x as f64;
        }
        self.n += 1;
        Ok(())
    }

    fn add_f64(&mut self, v: &[f64]) -> Result<()> {
        self.check(v.len())?;
        for (s, x) in self.sum.iter_mut().zip(v) {
            *s += *x;
        }
        self.n += 1;
        Ok(())
    }

    fn check(&self, got: usize) -> Result<()> {
        if got != self.sum.len() {
            return Err(Error::DimMismatch {
                expected: self.sum.len(),
                got,
            });
        }
        Ok(())
    }

    fn mean(self) -> Option<Vec<f64>> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        Some(self.sum.into_iter().map(|s| s / n).collect())
    }
}

/// Mean of the contract's clause embeddings, skipping `exclude`.
pub fn contract_rep(
    contract: &Contract,
    store: &EmbeddingStore,
    exclude: Option<&str>,
) -> Result<ContractRep> {
    let mut acc = MeanAcc::new(store.dim());
    for clause in &contract.clauses {
        if Some(clause.clause_id.as_str()) == exclude {
            continue;
        }
        acc.add_f32(store.require(&clause.clause_id)?)?;
    }
    let n_clause = acc.n;
    let vector = acc
        .mean()
        .ok_or_else(|| Error::EmptyContractRep(contract.contract_id.clone()))?;
    Ok(ContractRep {
        contract_id: contract.contract_id.clone(),
        vector,
        n_clause,
        excluded_clause_id: exclude.map(str::to_owned),
    })
}

/// Mean over every clause of `clause_type` in the given contracts.
pub fn clause_type_rep(
    clause_type: &str,
    contracts: &[&Contract],
    source_split: SplitPart,
    store: &EmbeddingStore,
) -> Result<ClauseTypeRep> {
    let mut acc = MeanAcc::new(store.dim());
    for contract in contracts {
        for clause in contract.clauses_of_type(clause_type) {
            acc.add_f32(store.require(&clause.clause_id)?)?;
        }
    }
    let n_members = acc.n;
    let vector = acc
        .mean()
        .ok_or_else(|| Error::EmptyClauseType(clause_type.to_owned()))?;
    Ok(ClauseTypeRep {
        clause_type: clause_type.to_owned(),
        vector,
        n_members,
        source_split,
    })
}

fn canonical_order(ids: &[String]) -> Vec<&String> {
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    sorted
}

/// Mean of the neighbors' (unexcluded) contract representations.
pub fn full_sim_rep(
    neighbor_ids: &[String],
    contract_reps: &HashMap<String, ContractRep>,
) -> Result<SimContrRep> {
    if neighbor_ids.is_empty() {
        return Err(Error::EmptyNeighbors);
    }
    let mut acc: Option<MeanAcc> = None;
    for id in canonical_order(neighbor_ids) {
        let rep = contract_reps
            .get(id)
            .ok_or_else(|| Error::UnknownContract(id.clone()))?;
        acc.get_or_insert_with(|| MeanAcc::new(rep.vector.len()))
            .add_f64(&rep.vector)?;
    }
    let acc = acc.ok_or(Error::EmptyNeighbors)?;
    let k_used = acc.n;
    Ok(SimContrRep {
        kind: SimKind::Full,
        vector: acc.mean().ok_or(Error::EmptyNeighbors)?,
        k_used,
        clause_type: None,
    })
}

/// Mean over neighbors of their per-contract mean of type-`t` clauses.
///
/// Neighbors without a type-`t` clause do not contribute. Returns `Ok(None)`
/// when no neighbor contributes; the caller decides the fallback.
pub fn clause_sim_rep(
    neighbor_ids: &[String],
    clause_type: &str,
    corpus: &Corpus,
    store: &EmbeddingStore,
) -> Result<Option<SimContrRep>> {
    if neighbor_ids.is_empty() {
        return Err(Error::EmptyNeighbors);
    }
    let mut outer = MeanAcc::new(store.dim());
    for id in canonical_order(neighbor_ids) {
        let contract = corpus.require(id)?;
        let mut inner = MeanAcc::new(store.dim());
        for clause in contract.clauses_of_type(clause_type) {
            inner.add_f32(store.require(&clause.clause_id)?)?;
        }
        if let Some(per_contract) = inner.mean() {
            outer.add_f64(&per_contract)?;
        }
    }
    let k_used = outer.n;
    Ok(outer.mean().map(|vector| SimContrRep {
        kind: SimKind::Clause,
        vector,
        k_used,
        clause_type: Some(clause_type.to_owned()),
    }))
}
