//! In-memory feature matrices, labels, pair lists, and the synthetic
//! Gaussian-cluster generator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Row-major matrix of feature vectors, one row per item.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::EmptyInput("feature dimension"));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            crate::error::check_len(cols, r.len())?;
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows picked by index, in the given order.
    pub fn select(&self, ids: &[usize]) -> Self {
        let mut data = Vec::with_capacity(ids.len() * self.cols);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: ids.len(),
            cols: self.cols,
            data,
        }
    }

    /// Appends a constant 1 column so a bias can ride along as an extra weight.
    pub fn with_bias_column(&self) -> Self {
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in self.iter_rows() {
            data.extend_from_slice(r);
            data.push(1.0);
        }
        Self {
            rows: self.rows,
            cols,
            data,
        }
    }
}

/// Similarity label of a pair: similar (1) or dissimilar (0).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Dissimilar,
    Similar,
}

impl Similarity {
    pub fn as_f64(self) -> f64 {
        match self {
            Similarity::Similar => 1.0,
            Similarity::Dissimilar => 0.0,
        }
    }

    pub fn is_similar(self) -> bool {
        self == Similarity::Similar
    }

    /// Accepts `{0, 1}` as well as the signed `{-1, +1}` convention.
    pub fn from_label(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Similarity::Similar),
            0 | -1 => Ok(Similarity::Dissimilar),
            other => Err(Error::Format(format!("invalid similarity label {other}"))),
        }
    }
}

/// A training pair of dataset indices with a similarity label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PairSample {
    pub a: usize,
    pub b: usize,
    pub s: Similarity,
}

impl PairSample {
    pub fn new(a: usize, b: usize, s: Similarity) -> Result<Self> {
        if a == b {
            return Err(Error::InvalidArgument(format!(
                "pair endpoints must differ (both {a})"
            )));
        }
        Ok(Self { a, b, s })
    }
}

/// Class labels per item; an item may carry several labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labels(Vec<Vec<u32>>);

impl Labels {
    pub fn new(labels: Vec<Vec<u32>>) -> Self {
        Self(labels.into_iter().map(|mut l| {
            l.sort_unstable();
            l.dedup();
            l
        }).collect())
    }

    pub fn single(labels: &[u32]) -> Self {
        Self(labels.iter().map(|&l| vec![l]).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn of(&self, i: usize) -> &[u32] {
        &self.0[i]
    }

    /// Items are similar when they share at least one label.
    pub fn share(&self, i: usize, other: &Labels, j: usize) -> bool {
        let (a, b) = (&self.0[i], &other.0[j]);
        let (mut p, mut q) = (0, 0);
        while p < a.len() && q < b.len() {
            match a[p].cmp(&b[q]) {
                std::cmp::Ordering::Equal => return true,
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
            }
        }
        false
    }

    pub fn select(&self, ids: &[usize]) -> Self {
        Self(ids.iter().map(|&i| self.0[i].clone()).collect())
    }
}

/// Draws `positives` similar and `negatives` dissimilar pairs from labelled
/// items `ids` (indices into the labelled dataset). Deterministic given seed.
pub fn pairs_from_labels(
    labels: &Labels,
    ids: &[usize],
    positives: usize,
    negatives: usize,
    seed: u64,
) -> Result<Vec<PairSample>> {
    if ids.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            have: ids.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(positives + negatives);
    for (want, similar) in [(positives, true), (negatives, false)] {
        let mut found = 0;
        let mut attempts = 0usize;
        let budget = 1000 * want.max(1);
        while found < want {
            attempts += 1;
            if attempts > budget {
                return Err(Error::InsufficientData {
                    needed: want,
                    have: found,
                });
            }
            let a = ids[rand::Rng::random_range(&mut rng, 0..ids.len())];
            let b = ids[rand::Rng::random_range(&mut rng, 0..ids.len())];
            if a == b || labels.share(a, labels, b) != similar {
                continue;
            }
            let s = if similar {
                Similarity::Similar
            } else {
                Similarity::Dissimilar
            };
            pairs.push(PairSample { a, b, s });
            found += 1;
        }
    }
    pairs.shuffle(&mut rng);
    Ok(pairs)
}

/// Gaussian-cluster generator configuration.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub clusters: usize,
    pub dim: usize,
    pub points: usize,
    /// Standard deviation of cluster centers around the origin.
    pub center_scale: f64,
    /// Isotropic within-cluster standard deviation.
    pub spread: f64,
    /// Number of random unit directions along which each cluster also varies.
    pub intrinsic_dim: usize,
    /// Standard deviation along each intrinsic direction.
    pub intrinsic_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clusters: 10,
            dim: 32,
            points: 2000,
            center_scale: 1.0,
            spread: 0.5,
            intrinsic_dim: 0,
            intrinsic_scale: 0.0,
            seed: 7,
        }
    }
}

/// Points are assigned to clusters round-robin; values are rounded to `f32`
/// so the binary feature format round-trips exactly.
pub fn synth_clusters(cfg: &SynthConfig) -> Result<(FeatureMatrix, Labels)> {
    if cfg.clusters == 0 || cfg.dim == 0 || cfg.points == 0 {
        return Err(Error::Config(
            "synthetic clusters, dim and points must be positive".into(),
        ));
    }
    if !(cfg.spread >= 0.0 && cfg.center_scale >= 0.0 && cfg.intrinsic_scale >= 0.0) {
        return Err(Error::Config("synthetic scales must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let centers: Vec<Vec<f64>> = (0..cfg.clusters)
        .map(|_| (0..cfg.dim).map(|_| cfg.center_scale * gauss()).collect())
        .collect();
    let bases: Vec<Vec<Vec<f64>>> = (0..cfg.clusters)
        .map(|_| {
            (0..cfg.intrinsic_dim)
                .map(|_| {
                    let v: Vec<f64> = (0..cfg.dim).map(|_| gauss()).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(cfg.points * cfg.dim);
    let mut labels = Vec::with_capacity(cfg.points);
    let mut point = vec![0.0; cfg.dim];
    for i in 0..cfg.points {
        let c = i % cfg.clusters;
        point.copy_from_slice(&centers[c]);
        for u in &bases[c] {
            let g = cfg.intrinsic_scale * gauss();
            point.iter_mut().zip(u).for_each(|(p, e)| *p += g * e);
        }
        for p in &point {
            data.push((p + cfg.spread * gauss()) as f32 as f64);
        }
        labels.push(c as u32);
    }
    Ok((
        FeatureMatrix::new(cfg.points, cfg.dim, data)?,
        Labels::single(&labels),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_share() {
        let l = Labels::new(vec![vec![3, 1], vec![2], vec![1, 2]]);
        assert!(l.share(0, &l, 2));
        assert!(l.share(1, &l, 2));
        assert!(!l.share(0, &l, 1));
    }

    #[test]
    fn pair_generation_respects_labels() {
        let labels = Labels::single(&[0, 0, 1, 1, 2, 2, 0]);
        let ids: Vec<usize> = (0..7).collect();
        let pairs = pairs_from_labels(&labels, &ids, 20, 30, 3).unwrap();
        assert_eq!(pairs.len(), 50);
        for p in &pairs {
            assert_ne!(p.a, p.b);
            assert_eq!(labels.share(p.a, &labels, p.b), p.s.is_similar());
        }
        assert_eq!(pairs, pairs_from_labels(&labels, &ids, 20, 30, 3).unwrap());
    }

    #[test]
    fn impossible_positives_error() {
        let labels = Labels::single(&[0, 1, 2]);
        assert!(pairs_from_labels(&labels, &[0, 1, 2], 1, 0, 0).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig {
            points: 50,
            ..SynthConfig::default()
        };
        let (a, la) = synth_clusters(&cfg).unwrap();
        let (b, lb) = synth_clusters(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(a.rows(), 50);
        assert_eq!(la.of(13), &[3]);
    }

    #[test]
    fn pair_sample_rejects_self_pair() {
        assert!(PairSample::new(2, 2, Similarity::Similar).is_err());
        assert_eq!(Similarity::from_label(-1).unwrap(), Similarity::Dissimilar);
        assert!(Similarity::from_label(2).is_err());
    }
}
