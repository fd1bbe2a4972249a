//! BLEU / ROUGE scoring and generated-length analysis.
//!
//! Text is lowercased and split on whitespace before scoring. All scores are
//! on a 0-100 scale. ROUGE is reported as F1 averaged over examples; BLEU is
//! corpus-level (n-gram statistics pooled before taking precisions) without
//! smoothing.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn metric_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(hits: usize, cand_total: usize, ref_total: usize) -> Self {
        if hits == 0 || cand_total == 0 || ref_total == 0 {
            return Prf::default();
        }
        let p = hits as f64 / cand_total as f64;
        let r = hits as f64 / ref_total as f64;
        Prf {
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * 2.0 * p * r / (p + r),
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Clipped overlap and totals: (matches, candidate n-grams, reference n-grams).
fn overlap(cand: &[String], reference: &[String], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let hits = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (hits, c.values().sum(), r.values().sum())
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<Prf> {
    if n == 0 {
        return Err(Error::Config("ROUGE-N needs n >= 1".into()));
    }
    let (hits, ct, rt) = overlap(&metric_tokens(candidate), &metric_tokens(reference), n);
    Ok(Prf::from_counts(hits, ct, rt))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    let c = metric_tokens(candidate);
    let r = metric_tokens(reference);
    Prf::from_counts(lcs_len(&c, &r), c.len(), r.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BleuScores {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu: f64,
}

#[derive(Default, Clone, Copy)]
struct BleuStats {
    hits: [usize; 4],
    cand_ngrams: [usize; 4],
    ref_ngrams: [usize; 4],
    cand_len: usize,
    ref_len: usize,
}

impl BleuStats {
    fn add(&mut self, cand: &[String], reference: &[String]) {
        for n in 1..=4 {
            let (h, c, r) = overlap(cand, reference, n);
            self.hits[n - 1] += h;
            self.cand_ngrams[n - 1] += c;
            self.ref_ngrams[n - 1] += r;
        }
        self.cand_len += cand.len();
        self.ref_len += reference.len();
    }

    fn score(&self, max_n: usize) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..max_n {
            let p = if self.cand_ngrams[n] == 0 {
                // nothing of this order on either side counts as a match
                if self.ref_ngrams[n] == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                self.hits[n] as f64 / self.cand_ngrams[n] as f64
            };
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        let bp = (1.0 - self.ref_len as f64 / self.cand_len as f64).min(0.0).exp();
        100.0 * bp * (log_sum / max_n as f64).exp()
    }
}

/// Corpus BLEU-1, BLEU-2 and BLEU-4 over parallel candidate/reference lists.
pub fn bleu<C: AsRef<str>, R: AsRef<str>>(candidates: &[C], references: &[R]) -> Result<BleuScores> {
    if candidates.is_empty() {
        return Err(Error::Config("BLEU over an empty corpus".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Config(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut stats = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        stats.add(&metric_tokens(c.as_ref()), &metric_tokens(r.as_ref()));
    }
    Ok(BleuScores {
        bleu1: stats.score(1),
        bleu2: stats.score(2),
        bleu: stats.score(4),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub clause_type: String,
    pub count: usize,
    pub scores: MetricScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub overall: MetricRow,
}

/// One scored generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub clause_type: String,
    pub candidate: String,
    pub reference: String,
}

/// Sum in ascending order so the result does not depend on input order.
fn order_free_mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values.into_iter().sum::<f64>() / n
}

fn score_subset(pairs: &[&ScoredPair]) -> Result<MetricScores> {
    let mut r1 = Vec::with_capacity(pairs.len());
    let mut r2 = Vec::with_capacity(pairs.len());
    let mut rl = Vec::with_capacity(pairs.len());
    for p in pairs {
        r1.push(rouge_n(&p.candidate, &p.reference, 1)?.f1);
        r2.push(rouge_n(&p.candidate, &p.reference, 2)?.f1);
        rl.push(rouge_l(&p.candidate, &p.reference).f1);
    }
    let cands: Vec<&str> = pairs.iter().map(|p| p.candidate.as_str()).collect();
    let refs: Vec<&str> = pairs.iter().map(|p| p.reference.as_str()).collect();
    let b = bleu(&cands, &refs)?;
    Ok(MetricScores {
        rouge1: order_free_mean(r1),
        rouge2: order_free_mean(r2),
        rouge_l: order_free_mean(rl),
        bleu1: b.bleu1,
        bleu2: b.bleu2,
        bleu: b.bleu,
    })
}

pub const OVERALL: &str = "Overall";

/// Per-type rows (sorted by type) plus an overall row over the union.
pub fn aggregate_report(pairs: &[ScoredPair]) -> Result<MetricReport> {
    let mut by_type: BTreeMap<&str, Vec<&ScoredPair>> = BTreeMap::new();
    for p in pairs {
        by_type.entry(p.clause_type.as_str()).or_default().push(p);
    }
    let rows = by_type
        .into_iter()
        .map(|(t, subset)| {
            Ok(MetricRow {
                clause_type: t.to_owned(),
                count: subset.len(),
                scores: score_subset(&subset)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&ScoredPair> = pairs.iter().collect();
    Ok(MetricReport {
        rows,
        overall: MetricRow {
            clause_type: OVERALL.into(),
            count: pairs.len(),
            scores: score_subset(&all)?,
        },
    })
}

impl MetricReport {
    pub fn to_table(&self, title: &str) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.clause_type.len())
            .max()
            .unwrap_or(0)
            .max(OVERALL.len())
            .max("Clause type".len());
        let mut out = String::new();
        let _ = writeln!(out, "{title}");
        let _ = writeln!(
            out,
            "{:<width$} | {:>5} | {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7}",
            "Clause type", "n", "ROUGE-1", "ROUGE-2", "ROUGE-L", "BLEU-1", "BLEU-2", "BLEU"
        );
        let _ = writeln!(out, "{}", "-".repeat(width + 59));
        for row in self.rows.iter().chain(std::iter::once(&self.overall)) {
            let s = &row.scores;
            let _ = writeln!(
                out,
                "{:<width$} | {:>5} | {:>7.2} {:>7.2} {:>7.2} | {:>7.2} {:>7.2} {:>7.2}",
                row.clause_type, row.count, s.rouge1, s.rouge2, s.rouge_l, s.bleu1, s.bleu2, s.bleu
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub pairs: usize,
    pub actual: LengthSummary,
    pub generated: LengthSummary,
    pub pearson_r: Option<f64>,
    /// Why `pearson_r` is missing, when it is.
    pub pearson_error: Option<String>,
}

fn summarize(values: &[usize]) -> LengthSummary {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    } else {
        sorted[mid] as f64
    };
    LengthSummary {
        mean,
        std: var.sqrt(),
        median,
    }
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Config("pearson needs at least two paired values".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Config("pearson undefined for zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Statistics over `(actual, generated)` whitespace-token lengths.
pub fn length_stats(pairs: &[(usize, usize)]) -> Result<LengthStats> {
    if pairs.is_empty() {
        return Err(Error::Config("length statistics need at least one pair".into()));
    }
    let actual: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let generated: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let xs: Vec<f64> = actual.iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = generated.iter().map(|&v| v as f64).collect();
    let (pearson_r, pearson_error) = match pearson(&xs, &ys) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(LengthStats {
        pairs: pairs.len(),
        actual: summarize(&actual),
        generated: summarize(&generated),
        pearson_r,
        pearson_error,
    })
}

pub fn lengths_csv(pairs: &[(usize, usize)]) -> String {
    let mut out = String::from("actual,generated\n");
    for (a, g) in pairs {
        let _ = writeln!(out, "{a},{g}");
    }
    out
}
