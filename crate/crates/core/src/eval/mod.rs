//! Retrieval quality metrics.
//!
//! Radius metrics are micro-averaged by default: counts of retrieved,
//! relevant, and relevant-retrieved items are summed over all queries before
//! forming precision and recall. Ranking metrics (mAP@R, MP@K) are averaged
//! per query.

use std::fmt::Write as _;

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::codes::TernaryCode;
use crate::data::Labels;
use crate::error::{Error, Result};
use crate::retrieval::CodeIndex;

pub mod experiment;

/// Which (query, database item) pairs count as relevant.
#[derive(Clone, Debug)]
pub enum GroundTruth {
    /// Relevant when the two items share a label.
    Labels { queries: Labels, database: Labels },
    /// Explicit relevant `(query, item)` pairs.
    Pairs {
        relevant: FxHashSet<(u32, u32)>,
        database_len: usize,
    },
}

impl GroundTruth {
    pub fn from_labels(queries: Labels, database: Labels) -> Self {
        GroundTruth::Labels { queries, database }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, u32)>, database_len: usize) -> Self {
        GroundTruth::Pairs {
            relevant: pairs.into_iter().collect(),
            database_len,
        }
    }

    pub fn is_relevant(&self, query: usize, item: usize) -> bool {
        match self {
            GroundTruth::Labels { queries, database } => queries.share(query, database, item),
            GroundTruth::Pairs { relevant, .. } => relevant.contains(&(query as u32, item as u32)),
        }
    }

    /// Number of relevant database items for `query`.
    pub fn relevant_count(&self, query: usize) -> usize {
        match self {
            GroundTruth::Labels { queries, database } => (0..database.len())
                .filter(|&j| queries.share(query, database, j))
                .count(),
            GroundTruth::Pairs {
                relevant,
                database_len,
            } => relevant
                .iter()
                .filter(|(q, d)| *q as usize == query && (*d as usize) < *database_len)
                .count(),
        }
    }

    fn relevant_counts(&self, queries: usize) -> Vec<usize> {
        match self {
            GroundTruth::Pairs {
                relevant,
                database_len,
            } => {
                let mut counts = vec![0; queries];
                for &(q, d) in relevant {
                    if (q as usize) < queries && (d as usize) < *database_len {
                        counts[q as usize] += 1;
                    }
                }
                counts
            }
            GroundTruth::Labels { .. } => (0..queries).map(|q| self.relevant_count(q)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Global counts over all queries.
    #[default]
    Micro,
    /// Mean of per-query rates; queries without relevant items are left out
    /// of the recall mean.
    Macro,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub retrieved: u64,
    pub relevant: u64,
    pub relevant_retrieved: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision > 0.0 && recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Precision, recall, and F1 of per-query retrieved sets.
pub fn pr_at_radius(results: &[Vec<u32>], gt: &GroundTruth, averaging: Averaging) -> PrecisionRecall {
    let relevant = gt.relevant_counts(results.len());
    let mut counts = Counts::default();
    let (mut p_sum, mut r_sum, mut r_queries) = (0.0, 0.0, 0usize);
    let mut empty = 0usize;
    for (q, retrieved) in results.iter().enumerate() {
        let hits = retrieved.iter().filter(|&&d| gt.is_relevant(q, d as usize)).count() as u64;
        counts.retrieved += retrieved.len() as u64;
        counts.relevant += relevant[q] as u64;
        counts.relevant_retrieved += hits;
        p_sum += ratio(hits, retrieved.len() as u64);
        if relevant[q] == 0 {
            empty += 1;
        } else {
            r_sum += ratio(hits, relevant[q] as u64);
            r_queries += 1;
        }
    }
    if empty > 0 {
        log::debug!("{empty} queries have no relevant items; excluded from recall");
    }
    let (precision, recall) = match averaging {
        Averaging::Micro => (
            ratio(counts.relevant_retrieved, counts.retrieved),
            ratio(counts.relevant_retrieved, counts.relevant),
        ),
        Averaging::Macro => (
            if results.is_empty() { 0.0 } else { p_sum / results.len() as f64 },
            if r_queries == 0 { 0.0 } else { r_sum / r_queries as f64 },
        ),
    };
    PrecisionRecall {
        precision,
        recall,
        f1: f1_score(precision, recall),
        counts,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragePrecision {
    /// Per-query sum normalized by `min(R, #relevant)`, averaged over queries
    /// that have at least one relevant item.
    pub normalized: f64,
    /// Per-query `sum_{n<=R} P(n) rel(n)` without normalization, averaged
    /// over the same queries.
    pub unnormalized: f64,
    pub queries: usize,
}

/// mAP@R over per-query rankings. Rankings shorter than `R` are padded with
/// irrelevant entries.
pub fn mean_average_precision(rankings: &[Vec<u32>], gt: &GroundTruth, r: usize) -> Result<AveragePrecision> {
    if r == 0 {
        return Err(Error::InvalidArgument("mAP cutoff R must be positive".into()));
    }
    let relevant = gt.relevant_counts(rankings.len());
    let (mut norm_sum, mut raw_sum, mut used) = (0.0, 0.0, 0usize);
    for (q, ranking) in rankings.iter().enumerate() {
        if relevant[q] == 0 {
            continue;
        }
        let mut hits = 0u64;
        let mut sum = 0.0;
        for (n, &d) in ranking.iter().take(r).enumerate() {
            if gt.is_relevant(q, d as usize) {
                hits += 1;
                sum += hits as f64 / (n + 1) as f64;
            }
        }
        norm_sum += sum / r.min(relevant[q]) as f64;
        raw_sum += sum;
        used += 1;
    }
    let mean = |s: f64| if used == 0 { 0.0 } else { s / used as f64 };
    Ok(AveragePrecision {
        normalized: mean(norm_sum),
        unnormalized: mean(raw_sum),
        queries: used,
    })
}

/// Mean over queries of the fraction of relevant items among the top `K`.
pub fn mean_precision_at_k(rankings: &[Vec<u32>], gt: &GroundTruth, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if rankings.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = rankings
        .iter()
        .enumerate()
        .map(|(q, ranking)| {
            let hits = ranking.iter().take(k).filter(|&&d| gt.is_relevant(q, d as usize)).count();
            hits as f64 / k as f64
        })
        .sum();
    Ok(total / rankings.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Hamming distance threshold of this operating point.
    pub radius: u32,
    pub precision: f64,
    pub recall: f64,
}

/// Operating points of the distance ranking restricted to the radius-`r_cap`
/// ball: one point per threshold `0..=r_cap` (items at equal distance are
/// tied, so thresholds are the only points the ranking induces).
pub fn pr_curve(index: &CodeIndex, queries: &[TernaryCode], gt: &GroundTruth, r_cap: u32) -> Result<Vec<PrPoint>> {
    let m = index.code_len() as u32;
    if r_cap > m {
        return Err(Error::InvalidArgument(format!(
            "curve radius {r_cap} exceeds code length {m}"
        )));
    }
    let relevant = gt.relevant_counts(queries.len());
    let total_relevant: u64 = relevant.iter().map(|&c| c as u64).sum();
    let cap = r_cap as usize;
    let mut retrieved_at = vec![0u64; cap + 1];
    let mut hits_at = vec![0u64; cap + 1];
    for (q, code) in queries.iter().enumerate() {
        for (item, d) in index.distances(code)?.into_iter().enumerate() {
            if (d as usize) <= cap {
                retrieved_at[d as usize] += 1;
                if gt.is_relevant(q, item) {
                    hits_at[d as usize] += 1;
                }
            }
        }
    }
    let (mut retrieved, mut hits) = (0u64, 0u64);
    Ok((0..=cap)
        .map(|d| {
            retrieved += retrieved_at[d];
            hits += hits_at[d];
            PrPoint {
                radius: d as u32,
                precision: ratio(hits, retrieved),
                recall: ratio(hits, total_relevant),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusMetrics {
    pub radius: u32,
    #[serde(flatten)]
    pub pr: PrecisionRecall,
}

/// Full metric set for one code database and query set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub averaging: Averaging,
    pub radii: Vec<RadiusMetrics>,
    pub map_cutoff: usize,
    pub map: AveragePrecision,
    pub mp_cutoff: usize,
    pub mp: f64,
}

impl MetricReport {
    /// Tab-separated per-radius table followed by the ranking metrics.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("radius\tprecision\trecall\tf1\tretrieved\trelevant\trelevant_retrieved\n");
        for r in &self.radii {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.radius,
                r.pr.precision,
                r.pr.recall,
                r.pr.f1,
                r.pr.counts.retrieved,
                r.pr.counts.relevant,
                r.pr.counts.relevant_retrieved
            );
        }
        let _ = writeln!(out, "\nmetric\tcutoff\tvalue");
        let _ = writeln!(out, "map\t{}\t{}", self.map_cutoff, self.map.normalized);
        let _ = writeln!(out, "map_unnormalized\t{}\t{}", self.map_cutoff, self.map.unnormalized);
        let _ = writeln!(out, "mp\t{}\t{}", self.mp_cutoff, self.mp);
        out
    }
}

/// Runs radius retrieval and ranking for every query and scores the results.
pub fn evaluate(
    index: &CodeIndex,
    queries: &[TernaryCode],
    gt: &GroundTruth,
    radii: &[u32],
    map_cutoff: usize,
    mp_cutoff: usize,
    averaging: Averaging,
) -> Result<MetricReport> {
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let results = queries
            .iter()
            .map(|q| index.query(q, r))
            .collect::<Result<Vec<_>>>()?;
        rows.push(RadiusMetrics {
            radius: r,
            pr: pr_at_radius(&results, gt, averaging),
        });
    }
    let depth = map_cutoff.max(mp_cutoff).min(index.len());
    let rankings = queries
        .iter()
        .map(|q| index.rank_all(q, depth))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        averaging,
        radii: rows,
        map_cutoff,
        map: mean_average_precision(&rankings, gt, map_cutoff)?,
        mp_cutoff,
        mp: mean_precision_at_k(&rankings, gt, mp_cutoff)?,
    })
}
