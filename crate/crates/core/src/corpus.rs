//! Contract corpus model: ingestion, filtering, splitting and example extraction.
//!
//! The canonical on-disk layout is contract-grouped JSON lines, one contract
//! per line. Provision-per-line files are regrouped on import,
//! with multi-label provisions duplicated once per label.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub clause_id: String,
    pub contract_id: String,
    pub clause_type: String,
    pub text: String,
    pub token_len: usize,
}

impl Clause {
    pub fn new(
        clause_id: impl Into<String>,
        contract_id: impl Into<String>,
        clause_type: &str,
        text: impl Into<String>,
    ) -> Self {
        let text = text.into();
        let token_len = whitespace_len(&text);
        Clause {
            clause_id: clause_id.into(),
            contract_id: contract_id.into(),
            clause_type: clause_type.trim().to_lowercase(),
            text,
            token_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contract {
    pub contract_id: String,
    pub clauses: Vec<Clause>,
}

impl Contract {
    pub fn clause(&self, clause_id: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.clause_id == clause_id)
    }

    pub fn clauses_of_type<'a>(&'a self, clause_type: &'a str) -> impl Iterator<Item = &'a Clause> {
        self.clauses
            .iter()
            .filter(move |c| c.clause_type == clause_type)
    }
}

pub fn whitespace_len(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFormat {
    /// One contract per line with its ordered clauses.
    #[default]
    Contract,
    /// One provision per line with label(s) and a contract grouping key.
    Provision,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contract" | "contract-jsonl" => Ok(InputFormat::Contract),
            "provision" | "provision-jsonl" => Ok(InputFormat::Provision),
            other => Err(Error::Config(format!("unknown corpus format {other}"))),
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputFormat::Contract => f.write_str("contract"),
            InputFormat::Provision => f.write_str("provision"),
        }
    }
}

impl Serialize for InputFormat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for InputFormat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct ClauseRecord {
    clause_id: String,
    #[serde(rename = "type")]
    clause_type: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct ContractRecord {
    contract_id: String,
    clauses: Vec<ClauseRecord>,
}

pub fn ingest(path: &Path, format: InputFormat) -> Result<Vec<Contract>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_str(&raw, format)
}

pub fn ingest_str(raw: &str, format: InputFormat) -> Result<Vec<Contract>> {
    match format {
        InputFormat::Contract => parse_contract_lines(raw),
        InputFormat::Provision => parse_provision_lines(raw),
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<Value> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })
}

fn grouping_key(value: &Value, line_no: usize) -> Result<String> {
    match value.get("contract_id") {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(Error::Schema {
            line: line_no,
            message: "missing grouping key contract_id".into(),
        }),
    }
}

fn checked_text(text: String, line_no: usize) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::Schema {
            line: line_no,
            message: "clause text is empty".into(),
        });
    }
    Ok(text)
}

fn parse_contract_lines(raw: &str) -> Result<Vec<Contract>> {
    let mut contracts = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value = parse_line(line, line_no)?;
        grouping_key(&value, line_no)?;
        let record: ContractRecord = serde_json::from_value(value).map_err(|e| Error::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(record.contract_id.clone()) {
            return Err(Error::Schema {
                line: line_no,
                message: format!("duplicate contract_id {}", record.contract_id),
            });
        }
        let mut clauses = Vec::with_capacity(record.clauses.len());
        for c in record.clauses {
            let text = checked_text(c.text, line_no)?;
            clauses.push(Clause::new(
                c.clause_id,
                record.contract_id.as_str(),
                &c.clause_type,
                text,
            ));
        }
        contracts.push(Contract {
            contract_id: record.contract_id,
            clauses,
        });
    }
    Ok(contracts)
}

fn parse_provision_lines(raw: &str) -> Result<Vec<Contract>> {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<Clause>> = HashMap::new();
    let mut provision_counter: HashMap<String, usize> = HashMap::new();

    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value = parse_line(line, line_no)?;
        let contract_id = grouping_key(&value, line_no)?;
        let text = match value.get("provision") {
            Some(Value::String(s)) => checked_text(s.clone(), line_no)?,
            _ => {
                return Err(Error::Schema {
                    line: line_no,
                    message: "missing provision text".into(),
                })
            }
        };
        let labels: Vec<String> = match value.get("label") {
            Some(Value::String(s)) => vec![s.clone()],
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str().map(str::to_owned).ok_or_else(|| Error::Schema {
                        line: line_no,
                        message: "label array must hold strings".into(),
                    })
                })
                .collect::<Result<_>>()?,
            _ => {
                return Err(Error::Schema {
                    line: line_no,
                    message: "missing label".into(),
                })
            }
        };
        if labels.is_empty() {
            return Err(Error::Schema {
                line: line_no,
                message: "empty label list".into(),
            });
        }

        let idx = provision_counter.entry(contract_id.clone()).or_insert(0);
        let provision_idx = *idx;
        *idx += 1;
        let clauses = grouped.entry(contract_id.clone()).or_insert_with(|| {
            order.push(contract_id.clone());
            Vec::new()
        });
        let multi = labels.len() > 1;
        for (j, label) in labels.iter().enumerate() {
            let clause_id = if multi {
                format!("{contract_id}/{provision_idx}#{j}")
            } else {
                format!("{contract_id}/{provision_idx}")
            };
            clauses.push(Clause::new(clause_id, contract_id.as_str(), label, text.clone()));
        }
    }

    Ok(order
        .into_iter()
        .map(|id| {
            let clauses = grouped.remove(&id).unwrap_or_default();
            Contract {
                contract_id: id,
                clauses,
            }
        })
        .collect())
}

/// Serializes contracts in the canonical contract-jsonl layout.
pub fn to_jsonl(contracts: &[Contract]) -> Result<String> {
    let mut out = String::new();
    for contract in contracts {
        let record = ContractRecord {
            contract_id: contract.contract_id.clone(),
            clauses: contract
                .clauses
                .iter()
                .map(|c| ClauseRecord {
                    clause_id: c.clause_id.clone(),
                    clause_type: c.clause_type.clone(),
                    text: c.text.clone(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, contracts: &[Contract]) -> Result<()> {
    let body = to_jsonl(contracts)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub clause_type: String,
    pub count: usize,
    pub mean_len: f64,
    pub std_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseTypeCatalog {
    pub selected: Vec<TypeStats>,
}

impl ClauseTypeCatalog {
    pub fn contains(&self, clause_type: &str) -> bool {
        self.selected.iter().any(|t| t.clause_type == clause_type)
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.selected.iter().map(|t| t.clause_type.as_str())
    }
}

/// Drops short contracts and selects the most frequent clause types.
///
/// Retained contracts keep every clause, including those whose type was not
/// selected, since those still feed the contract representations.
pub fn filter_corpus(
    contracts: &[Contract],
    min_clauses: usize,
    top_k_types: usize,
) -> Result<(Vec<Contract>, ClauseTypeCatalog)> {
    if min_clauses == 0 || top_k_types == 0 {
        return Err(Error::Config(
            "min_clauses and top_k_types must be at least 1".into(),
        ));
    }
    let kept: Vec<Contract> = contracts
        .iter()
        .filter(|c| c.clauses.len() >= min_clauses)
        .cloned()
        .collect();

    let mut lengths: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for clause in kept.iter().flat_map(|c| c.clauses.iter()) {
        lengths
            .entry(clause.clause_type.as_str())
            .or_default()
            .push(clause.token_len);
    }
    let mut ranked: Vec<(&str, Vec<usize>)> = lengths.into_iter().collect();
    // count descending, then type ascending
    ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));

    let selected = ranked
        .into_iter()
        .take(top_k_types)
        .map(|(t, lens)| {
            let n = lens.len() as f64;
            let mean = lens.iter().map(|&l| l as f64).sum::<f64>() / n;
            let var = lens.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
            TypeStats {
                clause_type: t.to_owned(),
                count: lens.len(),
                mean_len: mean,
                std_len: var.sqrt(),
            }
        })
        .collect();

    Ok((kept, ClauseTypeCatalog { selected }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Valid,
    Test,
}

impl fmt::Display for SplitPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitPart::Train => "train",
            SplitPart::Valid => "valid",
            SplitPart::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl CorpusSplit {
    pub fn part(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Valid => &self.valid,
            SplitPart::Test => &self.test,
        }
    }

    pub fn part_of(&self, contract_id: &str) -> Option<SplitPart> {
        [SplitPart::Train, SplitPart::Valid, SplitPart::Test]
            .into_iter()
            .find(|&p| self.part(p).iter().any(|id| id == contract_id))
    }

    pub fn contracts<'a>(&self, part: SplitPart, contracts: &'a [Contract]) -> Vec<&'a Contract> {
        let ids: HashSet<&str> = self.part(part).iter().map(String::as_str).collect();
        contracts
            .iter()
            .filter(|c| ids.contains(c.contract_id.as_str()))
            .collect()
    }
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Contract-level random partition, deterministic in `seed`.
///
/// Part sizes use largest-remainder rounding; every part receives at least
/// one contract.
pub fn split(contracts: &[Contract], ratios: [f64; 3], seed: u64) -> Result<CorpusSplit> {
    if ratios.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios sum to {total}, not 1")));
    }
    let n = contracts.len();
    if n < ratios.len() {
        return Err(Error::Config(format!(
            "{n} contracts cannot fill {} split parts",
            ratios.len()
        )));
    }

    let sizes = part_sizes(n, &ratios);
    let mut ids: Vec<String> = contracts.iter().map(|c| c.contract_id.clone()).collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let mut rest = ids.into_iter();
    let mut take = |k: usize| {
        let mut part: Vec<String> = rest.by_ref().take(k).collect();
        part.sort();
        part
    };
    let train = take(sizes[0]);
    let valid = take(sizes[1]);
    let test = take(sizes[2]);
    Ok(CorpusSplit {
        train,
        valid,
        test,
        seed,
        ratios,
    })
}

fn part_sizes(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        // guard against 0.8 * 10 = 7.999...
        *s = (e + 1e-9).floor() as usize;
    }
    let mut remaining = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[i] += 1;
        remaining -= 1;
    }
    for i in 0..3 {
        if sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap_or(0);
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    sizes
}

/// One generation target: add the clause `clause_id` to its contract.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub contract_id: String,
    pub clause_id: String,
    pub clause_type: String,
    pub split: SplitPart,
}

impl Example {
    /// Examples are keyed by their target clause.
    pub fn id(&self) -> &str {
        &self.clause_id
    }
}

pub fn make_examples(
    contracts: &[Contract],
    split: &CorpusSplit,
    part: SplitPart,
    catalog: &ClauseTypeCatalog,
) -> Vec<Example> {
    split
        .contracts(part, contracts)
        .into_iter()
        .flat_map(|contract| {
            contract
                .clauses
                .iter()
                .filter(|c| catalog.contains(&c.clause_type))
                .map(move |c| Example {
                    contract_id: contract.contract_id.clone(),
                    clause_id: c.clause_id.clone(),
                    clause_type: c.clause_type.clone(),
                    split: part,
                })
        })
        .collect()
}

/// Contracts with lookup by id; contract order is preserved.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    contracts: Vec<Contract>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(contracts: Vec<Contract>) -> Self {
        let by_id = contracts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.contract_id.clone(), i))
            .collect();
        Corpus { contracts, by_id }
    }

    pub fn contracts(&self) -> &[Contract] {
        &self.contracts
    }

    pub fn get(&self, contract_id: &str) -> Option<&Contract> {
        self.by_id.get(contract_id).map(|&i| &self.contracts[i])
    }

    pub fn require(&self, contract_id: &str) -> Result<&Contract> {
        self.get(contract_id)
            .ok_or_else(|| Error::UnknownContract(contract_id.to_owned()))
    }

    pub fn clause_count(&self) -> usize {
        self.contracts.iter().map(|c| c.clauses.len()).sum()
    }
}
