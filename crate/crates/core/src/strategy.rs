//! Conditioning-context assembly for the decoder.
//!
//! | strategy               | context                                   | dim |
//! |------------------------|-------------------------------------------|-----|
//! | `ONLY_CONTR`           | contract                                  | d   |
//! | `CONTR_TYPE`           | (contract + type) / 2                     | d   |
//! | `CONTR_FULLSIM`        | [contract ; full_sim]                     | 2d  |
//! | `CONTR_TYPE_FULLSIM`   | [(contract + type) / 2 ; full_sim]        | 2d  |
//! | `CONTR_TYPE_CLAUSESIM` | [(contract + type) / 2 ; clause_sim]      | 2d  |

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Corpus, Example};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::representation::{
    clause_sim_rep, contract_rep, full_sim_rep, ClauseTypeRep, ContractRep,
};
use crate::simindex::NeighborSearch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextStrategy {
    OnlyContr,
    ContrType,
    ContrFullsim,
    ContrTypeFullsim,
    ContrTypeClausesim,
}

impl ContextStrategy {
    pub const ALL: [ContextStrategy; 5] = [
        ContextStrategy::OnlyContr,
        ContextStrategy::ContrType,
        ContextStrategy::ContrFullsim,
        ContextStrategy::ContrTypeFullsim,
        ContextStrategy::ContrTypeClausesim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ContextStrategy::OnlyContr => "ONLY_CONTR",
            ContextStrategy::ContrType => "CONTR_TYPE",
            ContextStrategy::ContrFullsim => "CONTR_FULLSIM",
            ContextStrategy::ContrTypeFullsim => "CONTR_TYPE_FULLSIM",
            ContextStrategy::ContrTypeClausesim => "CONTR_TYPE_CLAUSESIM",
        }
    }

    pub fn requires_type(self) -> bool {
        matches!(
            self,
            ContextStrategy::ContrType
                | ContextStrategy::ContrTypeFullsim
                | ContextStrategy::ContrTypeClausesim
        )
    }

    pub fn requires_sim(self) -> bool {
        matches!(
            self,
            ContextStrategy::ContrFullsim
                | ContextStrategy::ContrTypeFullsim
                | ContextStrategy::ContrTypeClausesim
        )
    }

    pub fn out_dim(self, d: usize) -> usize {
        if self.requires_sim() {
            2 * d
        } else {
            d
        }
    }
}

impl fmt::Display for ContextStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ContextStrategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s}")))
    }
}

impl Serialize for ContextStrategy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ContextStrategy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    pub vector: Vec<f64>,
    pub strategy: ContextStrategy,
    pub example_id: Option<String>,
}

fn require<'a>(
    strategy: ContextStrategy,
    component: &'static str,
    value: Option<&'a [f64]>,
    d: usize,
) -> Result<&'a [f64]> {
    let v = value.ok_or(Error::MissingComponent {
        strategy: strategy.name(),
        component,
    })?;
    if v.len() != d {
        return Err(Error::DimMismatch {
            expected: d,
            got: v.len(),
        });
    }
    Ok(v)
}

fn midpoint(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect()
}

pub fn assemble(
    strategy: ContextStrategy,
    contract: &[f64],
    type_rep: Option<&[f64]>,
    full_sim: Option<&[f64]>,
    clause_sim: Option<&[f64]>,
) -> Result<ContextVector> {
    let d = contract.len();
    let vector = match strategy {
        ContextStrategy::OnlyContr => contract.to_vec(),
        ContextStrategy::ContrType => {
            midpoint(contract, require(strategy, "clause_type", type_rep, d)?)
        }
        ContextStrategy::ContrFullsim => {
            let sim = require(strategy, "full_sim_contr", full_sim, d)?;
            [contract, sim].concat()
        }
        ContextStrategy::ContrTypeFullsim => {
            let ty = require(strategy, "clause_type", type_rep, d)?;
            let sim = require(strategy, "full_sim_contr", full_sim, d)?;
            [midpoint(contract, ty).as_slice(), sim].concat()
        }
        ContextStrategy::ContrTypeClausesim => {
            let ty = require(strategy, "clause_type", type_rep, d)?;
            let sim = require(strategy, "clause_sim_contr", clause_sim, d)?;
            [midpoint(contract, ty).as_slice(), sim].concat()
        }
    };
    Ok(ContextVector {
        vector,
        strategy,
        example_id: None,
    })
}

/// Everything needed to turn an example into its context vector.
pub struct ResolveContext<'a, S: NeighborSearch + ?Sized> {
    pub corpus: &'a Corpus,
    pub store: &'a EmbeddingStore,
    /// Clause-type library representations, by type.
    pub type_reps: &'a HashMap<String, ClauseTypeRep>,
    /// Unexcluded representations of every indexed contract.
    pub index_reps: &'a HashMap<String, ContractRep>,
    pub index: &'a S,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub context: ContextVector,
    /// Set when no neighbor held the target type and the clause-type
    /// representation stood in for the clause-similarity one.
    pub fallback: bool,
    pub neighbors: Vec<String>,
}

pub fn resolve_inputs<S: NeighborSearch + ?Sized>(
    example: &Example,
    strategy: ContextStrategy,
    ctx: &ResolveContext<'_, S>,
) -> Result<Resolved> {
    let contract = ctx.corpus.require(&example.contract_id)?;
    let own = contract_rep(contract, ctx.store, Some(&example.clause_id))?;

    let type_rep = if strategy.requires_type() {
        Some(
            ctx.type_reps
                .get(&example.clause_type)
                .ok_or_else(|| Error::EmptyClauseType(example.clause_type.clone()))?,
        )
    } else {
        None
    };

    let mut neighbors = Vec::new();
    let mut full_sim = None;
    let mut clause_sim = None;
    let mut fallback = false;
    if strategy.requires_sim() {
        let query: Vec<f32> = own.vector.iter().map(|&v| v as f32).collect();
        neighbors = ctx
            .index
            .search(&query, ctx.k, Some(&example.contract_id))?
            .into_iter()
            .map(|n| n.id)
            .collect();
        match strategy {
            ContextStrategy::ContrTypeClausesim => {
                let found = if neighbors.is_empty() {
                    None
                } else {
                    clause_sim_rep(&neighbors, &example.clause_type, ctx.corpus, ctx.store)?
                };
                match found {
                    Some(rep) => clause_sim = Some(rep.vector),
                    None => {
                        fallback = true;
                        clause_sim = type_rep.map(|t| t.vector.clone());
                    }
                }
            }
            _ => full_sim = Some(full_sim_rep(&neighbors, ctx.index_reps)?.vector),
        }
    }

    let mut context = assemble(
        strategy,
        &own.vector,
        type_rep.map(|t| t.vector.as_slice()),
        full_sim.as_deref(),
        clause_sim.as_deref(),
    )?;
    context.example_id = Some(example.id().to_owned());
    Ok(Resolved {
        context,
        fallback,
        neighbors,
    })
}
