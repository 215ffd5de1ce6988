//! Sparse versus dense hashing comparison on synthetic clusters.
//!
//! Every method is trained on the same split and scored on the same
//! query/database sets at each code length. The database is every item not
//! used as a query; training items are drawn from the database.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{pr_at_radius, Averaging, GroundTruth};
use crate::baselines::{diffhash_fit, nnhash_train};
use crate::codes::{code_stats, TernaryCode};
use crate::data::{pairs_from_labels, synth_clusters, FeatureMatrix, Labels, SynthConfig};
use crate::encoder::{init_params, EncoderParams};
use crate::error::{Error, Result};
use crate::retrieval::{Alphabet, CodeIndex, Strategy};
use crate::trainer::{train, LossConfig, SgdConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Encoder trained with the sparsity penalty.
    Sparse,
    /// Same encoder and loss with `alpha = 0`.
    Dense,
    NnHash,
    DiffHash,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Sparse => "sparse",
            Method::Dense => "dense",
            Method::NnHash => "nnhash",
            Method::DiffHash => "diffhash",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: SynthConfig,
    pub queries_per_class: usize,
    pub train_per_class: usize,
    pub positives: usize,
    pub negatives: usize,
    pub code_lengths: Vec<usize>,
    pub methods: Vec<Method>,
    /// Loss of the sparse run; the dense ablation uses it with `alpha = 0`.
    pub loss: LossConfig,
    /// Scale the hinge margin by `m / reference_length` at each code length.
    pub margin_reference_length: Option<usize>,
    pub nnhash_margin: f64,
    pub beta: f64,
    pub iterations: usize,
    pub threshold: f64,
    pub sgd: SgdConfig,
    pub radii: Vec<u32>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: SynthConfig { center_scale: 0.2, spread: 0.2, ..SynthConfig::default() },
            queries_per_class: 20,
            train_per_class: 50,
            positives: 400,
            negatives: 1600,
            code_lengths: vec![16, 48],
            methods: vec![Method::Sparse, Method::Dense, Method::NnHash, Method::DiffHash],
            loss: LossConfig { alpha: 0.1, lambda: 0.003, margin: 48.0 },
            margin_reference_length: None,
            nnhash_margin: 2.0,
            beta: crate::encoder::DEFAULT_BETA,
            iterations: crate::encoder::DEFAULT_ITERATIONS,
            threshold: 0.0,
            sgd: SgdConfig::default(),
            radii: vec![0, 1, 2],
        }
    }
}

/// Query/train/database split over a labelled dataset.
#[derive(Clone, Debug)]
pub struct Split {
    pub queries: Vec<usize>,
    pub train: Vec<usize>,
    pub database: Vec<usize>,
}

/// First `queries_per_class` items of each class become queries; the next
/// `train_per_class` of each class form the training set.
pub fn split_by_class(labels: &Labels, queries_per_class: usize, train_per_class: usize) -> Split {
    let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
    let (mut queries, mut train, mut database) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..labels.len() {
        let class = labels.of(i).first().copied().unwrap_or(u32::MAX);
        let k = seen.entry(class).or_insert(0);
        if *k < queries_per_class {
            queries.push(i);
        } else {
            database.push(i);
            if *k < queries_per_class + train_per_class {
                train.push(i);
            }
        }
        *k += 1;
    }
    Split {
        queries,
        train,
        database,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub m: usize,
    /// Mean fraction of nonzero symbols over database codes.
    pub sparsity: f64,
    pub unique_codes: usize,
    pub avg_neighbors: BTreeMap<u32, f64>,
    pub precision: BTreeMap<u32, f64>,
    pub recall: BTreeMap<u32, f64>,
    pub f1: BTreeMap<u32, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub radii: Vec<u32>,
    pub results: Vec<MethodResult>,
}

impl ComparisonReport {
    pub fn get(&self, method: Method, m: usize) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method && r.m == m)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\tm\tsparsity\tunique_codes");
        for r in &self.radii {
            let _ = write!(out, "\tneighbors_r{r}\tprecision_r{r}\trecall_r{r}\tf1_r{r}");
        }
        out.push('\n');
        for row in &self.results {
            let _ = write!(out, "{}\t{}\t{}\t{}", row.method, row.m, row.sparsity, row.unique_codes);
            for r in &self.radii {
                let _ = write!(
                    out,
                    "\t{}\t{}\t{}\t{}",
                    row.avg_neighbors[r], row.precision[r], row.recall[r], row.f1[r]
                );
            }
            out.push('\n');
        }
        out
    }
}

fn score(
    method: Method,
    m: usize,
    db_codes: &[TernaryCode],
    query_codes: &[TernaryCode],
    gt: &GroundTruth,
    radii: &[u32],
) -> Result<MethodResult> {
    let sparsity =
        db_codes.iter().map(crate::codes::sparsity).sum::<f64>() / db_codes.len() as f64;
    let stats = code_stats(db_codes, radii)?;
    let index = CodeIndex::build(db_codes, Alphabet::Ternary)?;
    let (mut precision, mut recall, mut f1) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    for &r in radii {
        let strategy = if r == 0 { Strategy::LutExact } else { Strategy::BruteForce };
        let results = query_codes
            .iter()
            .map(|q| index.query_with(q, r, strategy))
            .collect::<Result<Vec<_>>>()?;
        let pr = pr_at_radius(&results, gt, Averaging::Micro);
        precision.insert(r, pr.precision);
        recall.insert(r, pr.recall);
        f1.insert(r, pr.f1);
    }
    Ok(MethodResult {
        method,
        m,
        sparsity,
        unique_codes: stats.unique_code_count,
        avg_neighbors: stats.avg_neighbors_at_r,
        precision,
        recall,
        f1,
    })
}

/// Trains a sparse-hash encoder with the experiment's model settings.
pub fn train_sparse(
    train_data: &FeatureMatrix,
    pairs: &[crate::data::PairSample],
    m: usize,
    loss: &LossConfig,
    cfg: &ExperimentConfig,
) -> Result<EncoderParams> {
    let init = init_params(train_data, m, cfg.iterations, cfg.beta, cfg.sgd.seed)?;
    Ok(train(train_data, pairs, loss, &cfg.sgd, init)?.params)
}

/// Runs every configured method at every code length.
pub fn sparse_vs_dense_experiment(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    if cfg.code_lengths.is_empty() || cfg.methods.is_empty() {
        return Err(Error::Config("experiment needs code lengths and methods".into()));
    }
    let (data, labels) = synth_clusters(&cfg.data)?;
    let split = split_by_class(&labels, cfg.queries_per_class, cfg.train_per_class);
    if split.queries.is_empty() || split.train.is_empty() || split.database.is_empty() {
        return Err(Error::Config("experiment split leaves an empty set".into()));
    }
    let train_data = data.select(&split.train);
    let train_labels = labels.select(&split.train);
    let local: Vec<usize> = (0..split.train.len()).collect();
    let pairs = pairs_from_labels(&train_labels, &local, cfg.positives, cfg.negatives, cfg.sgd.seed)?;
    let db_data = data.select(&split.database);
    let query_data = data.select(&split.queries);
    let gt = GroundTruth::from_labels(labels.select(&split.queries), labels.select(&split.database));

    let mut results = Vec::new();
    for &m in &cfg.code_lengths {
        let mut loss = cfg.loss;
        if let Some(reference) = cfg.margin_reference_length {
            loss.margin *= m as f64 / reference as f64;
        }
        for &method in &cfg.methods {
            let (db_codes, query_codes) = match method {
                Method::Sparse | Method::Dense => {
                    let loss = if method == Method::Dense {
                        LossConfig { alpha: 0.0, ..loss }
                    } else {
                        loss
                    };
                    let enc = train_sparse(&train_data, &pairs, m, &loss, cfg)?;
                    (enc.encode_all(&db_data, cfg.threshold)?, enc.encode_all(&query_data, cfg.threshold)?)
                }
                Method::NnHash => {
                    let fit = nnhash_train(&train_data, &pairs, m, cfg.nnhash_margin, cfg.beta, &cfg.sgd)?;
                    (fit.params.encode_all(&db_data, cfg.threshold)?, fit.params.encode_all(&query_data, cfg.threshold)?)
                }
                Method::DiffHash => {
                    if m > data.cols() {
                        log::warn!("diff-hash skipped at m = {m} > n = {}", data.cols());
                        continue;
                    }
                    let fit = diffhash_fit(&train_data, &pairs, m)?;
                    (fit.params.encode_all(&db_data, cfg.threshold)?, fit.params.encode_all(&query_data, cfg.threshold)?)
                }
            };
            results.push(score(method, m, &db_codes, &query_codes, &gt, &cfg.radii)?);
        }
    }
    Ok(ComparisonReport {
        radii: cfg.radii.clone(),
        results,
    })
}
