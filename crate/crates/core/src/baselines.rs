//! Dense linear hashing baselines: diff-hash (spectral) and NN-hash
//! (siamese `tanh` layer trained under an l2 hinge loss).

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};

use crate::codes::{quantize, TernaryCode};
use crate::data::{FeatureMatrix, PairSample, Similarity};
use crate::encoder::{init_params, EncoderParams};
use crate::error::{check_len, Error, Result};
use crate::trainer::{train_objective, PairObjective, SgdConfig, TrainOptions, TrainingLog};

/// `x -> sign(P x + a)`, with a `tanh(beta (P x + a))` relaxation.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHashParams {
    /// `m x n` projection.
    pub p: DMatrix<f64>,
    pub a: DVector<f64>,
    pub beta: f64,
}

impl LinearHashParams {
    pub fn new(p: DMatrix<f64>, a: DVector<f64>, beta: f64) -> Result<Self> {
        check_len(p.nrows(), a.len())?;
        if p.iter().chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("linear hash parameters must be finite".into()));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument("beta must be positive".into()));
        }
        Ok(Self { p, a, beta })
    }

    pub fn code_len(&self) -> usize {
        self.p.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.p.ncols()
    }

    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_len(self.input_dim(), x.len())?;
        Ok(&self.p * DVectorView::from_slice(x, x.len()) + &self.a)
    }

    /// Smooth output `tanh(beta (P x + a))`.
    pub fn apply(&self, x: &[f64]) -> Result<DVector<f64>> {
        let beta = self.beta;
        Ok(self.project(x)?.map(|v| (beta * v).tanh()))
    }

    pub fn encode(&self, x: &[f64], threshold: f64) -> Result<TernaryCode> {
        quantize(self.project(x)?.as_slice(), threshold)
    }

    pub fn encode_all(&self, data: &FeatureMatrix, threshold: f64) -> Result<Vec<TernaryCode>> {
        data.iter_rows().map(|x| self.encode(x, threshold)).collect()
    }

    /// The same map as a bias-augmented encoder with no shrinkage and no
    /// recurrence; it consumes inputs with a trailing constant 1.
    pub fn to_encoder(&self) -> Result<EncoderParams> {
        let (m, n) = self.p.shape();
        let mut w = DMatrix::zeros(m, n + 1);
        w.view_mut((0, 0), (m, n)).copy_from(&self.p);
        w.set_column(n, &self.a);
        EncoderParams::new(w, DMatrix::zeros(m, m), DVector::zeros(m), self.beta, 0)
    }

    pub fn from_encoder(enc: &EncoderParams) -> Result<Self> {
        let (m, cols) = enc.w.shape();
        if cols < 2 {
            return Err(Error::InvalidArgument("augmented encoder needs a bias column".into()));
        }
        let n = cols - 1;
        Self::new(enc.w.view((0, 0), (m, n)).into_owned(), enc.w.column(n).into_owned(), enc.beta)
    }
}

/// Result of a diff-hash fit.
#[derive(Clone, Debug)]
pub struct DiffHashFit {
    pub params: LinearHashParams,
    /// The `m` smallest eigenvalues of `Sigma+ - Sigma-`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Whether either scatter matrix needed the `eps I` ridge.
    pub regularized: bool,
}

/// Second-moment matrix of pair differences `x_a - x_b`.
fn difference_scatter(data: &FeatureMatrix, pairs: &[&PairSample]) -> DMatrix<f64> {
    let n = data.cols();
    let mut sigma = DMatrix::zeros(n, n);
    if pairs.is_empty() {
        return sigma;
    }
    let mut d = DVector::zeros(n);
    for p in pairs {
        for (j, (u, v)) in data.row(p.a).iter().zip(data.row(p.b)).enumerate() {
            d[j] = u - v;
        }
        sigma.ger(1.0, &d, &d, 1.0);
    }
    sigma / pairs.len() as f64
}

fn ridge_if_degenerate(sigma: &mut DMatrix<f64>, name: &str) -> bool {
    let n = sigma.nrows();
    let trace = sigma.trace();
    let smallest = sigma.clone().symmetric_eigenvalues().min();
    if smallest > 1e-12 * trace.max(f64::MIN_POSITIVE) {
        return false;
    }
    let eps = (1e-8 * trace / n as f64).max(1e-12);
    log::warn!("{name} difference covariance is rank deficient; adding {eps:e} I");
    for i in 0..n {
        sigma[(i, i)] += eps;
    }
    true
}

/// Fits `P` to the `m` smallest eigenvectors of `Sigma+ - Sigma-` and picks
/// each offset `a_i` by sweeping thresholds on the projected training data.
pub fn diffhash_fit(data: &FeatureMatrix, pairs: &[PairSample], m: usize) -> Result<DiffHashFit> {
    let n = data.cols();
    if m == 0 || m > n {
        return Err(Error::Rank { requested: m, dim: n });
    }
    crate::trainer::validate_pairs(pairs, data.rows(), data.rows())?;
    let (pos, neg): (Vec<&PairSample>, Vec<&PairSample>) = pairs.iter().partition(|p| p.s.is_similar());
    let mut sigma_pos = difference_scatter(data, &pos);
    let mut sigma_neg = difference_scatter(data, &neg);
    let mut regularized = ridge_if_degenerate(&mut sigma_pos, "positive");
    regularized |= ridge_if_degenerate(&mut sigma_neg, "negative");

    let diff = &sigma_pos - &sigma_neg;
    let eig = SymmetricEigen::new((&diff + diff.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort: ties keep the solver's index order.
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut p = DMatrix::zeros(m, n);
    for (row, &k) in order.iter().take(m).enumerate() {
        p.set_row(row, &eig.eigenvectors.column(k).transpose());
    }
    let eigenvalues = order.iter().take(m).map(|&k| eig.eigenvalues[k]).collect();

    let mut a = DVector::zeros(m);
    for i in 0..m {
        let proj = |k: usize| p.row(i).iter().zip(data.row(k)).map(|(u, v)| u * v).sum::<f64>();
        let intervals = |set: &[&PairSample]| -> (Vec<f64>, Vec<f64>) {
            let (mut lo, mut hi): (Vec<f64>, Vec<f64>) = set
                .iter()
                .map(|q| {
                    let (u, v) = (proj(q.a), proj(q.b));
                    (u.min(v), u.max(v))
                })
                .unzip();
            lo.sort_by(f64::total_cmp);
            hi.sort_by(f64::total_cmp);
            (lo, hi)
        };
        let (pos_lo, pos_hi) = intervals(&pos);
        let (neg_lo, neg_hi) = intervals(&neg);
        a[i] = -best_threshold(&pos_lo, &pos_hi, &neg_lo, &neg_hi);
    }
    Ok(DiffHashFit {
        params: LinearHashParams::new(p, a, 1.0)?,
        eigenvalues,
        regularized,
    })
}

/// Threshold `t` minimizing false positives plus false negatives of the bit
/// `p > t`, given each pair's projected interval `[lo, hi]`. A pair's bits
/// differ exactly when `lo <= t < hi`.
fn best_threshold(pos_lo: &[f64], pos_hi: &[f64], neg_lo: &[f64], neg_hi: &[f64]) -> f64 {
    let mut values: Vec<f64> = pos_lo.iter().chain(pos_hi).chain(neg_lo).chain(neg_hi).copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.is_empty() {
        return 0.0;
    }
    let split = |lo: &[f64], hi: &[f64], t: f64| {
        lo.partition_point(|&v| v <= t) - hi.partition_point(|&v| v <= t)
    };
    let mut candidates = Vec::with_capacity(values.len() + 1);
    candidates.push(values[0] - 1.0);
    candidates.extend(values.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(values[values.len() - 1] + 1.0);

    let mut best = (usize::MAX, candidates[0]);
    for t in candidates {
        let false_neg = split(pos_lo, pos_hi, t);
        let false_pos = neg_lo.len() - split(neg_lo, neg_hi, t);
        if false_neg + false_pos < best.0 {
            best = (false_neg + false_pos, t);
        }
    }
    best.1
}

/// Siamese l2 hinge loss of NN-hash.
#[derive(Clone, Copy, Debug)]
pub struct NnHashLoss {
    pub margin: f64,
}

impl PairObjective for NnHashLoss {
    fn evaluate(&self, y: &DVector<f64>, y2: &DVector<f64>, s: Similarity) -> (f64, DVector<f64>, DVector<f64>) {
        let d = y - y2;
        let dist = d.norm();
        match s {
            Similarity::Similar => (0.5 * dist * dist, d.clone(), -d),
            Similarity::Dissimilar => {
                let hinge = (self.margin - dist).max(0.0);
                if hinge == 0.0 || dist == 0.0 {
                    let zero = DVector::zeros(d.len());
                    return (0.5 * hinge * hinge, zero.clone(), zero);
                }
                let g = d * (-hinge / dist);
                (0.5 * hinge * hinge, g.clone(), -g)
            }
        }
    }

    /// Positives and negatives are averaged separately and the two means added.
    fn batch_weights(&self, labels: &[Similarity]) -> Vec<f64> {
        let pos = labels.iter().filter(|s| s.is_similar()).count();
        let neg = labels.len() - pos;
        labels
            .iter()
            .map(|s| if s.is_similar() { 1.0 / pos as f64 } else { 1.0 / neg as f64 })
            .collect()
    }
}

/// Per-pair NN-hash loss: `|y - y'|^2 / 2` for positives,
/// `max(0, M - |y - y'|)^2 / 2` for negatives.
pub fn nnhash_loss(y: &[f64], y2: &[f64], s: Similarity, margin: f64) -> Result<f64> {
    check_len(y.len(), y2.len())?;
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument("margin must be positive".into()));
    }
    Ok(NnHashLoss { margin }
        .evaluate(&DVector::from_column_slice(y), &DVector::from_column_slice(y2), s)
        .0)
}

/// Mean positive loss plus mean negative loss over a set of output pairs.
pub fn nnhash_batch_loss(outputs: &[(Vec<f64>, Vec<f64>, Similarity)], margin: f64) -> Result<f64> {
    let (mut pos, mut np, mut neg, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for (y, y2, s) in outputs {
        let l = nnhash_loss(y, y2, *s, margin)?;
        if s.is_similar() {
            pos += l;
            np += 1;
        } else {
            neg += l;
            nn += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(mean(pos, np) + mean(neg, nn))
}

#[derive(Clone, Debug)]
pub struct NnHashFit {
    pub params: LinearHashParams,
    pub log: TrainingLog,
}

/// Trains `tanh(beta (P x + a))` under the NN-hash loss with the shared SGD
/// loop. The network is the encoder without shrinkage or recurrence, fed
/// with bias-augmented inputs.
pub fn nnhash_train(
    data: &FeatureMatrix,
    pairs: &[PairSample],
    m: usize,
    margin: f64,
    beta: f64,
    sgd: &SgdConfig,
) -> Result<NnHashFit> {
    if !(margin > 0.0) {
        return Err(Error::Config("nnhash margin must be positive".into()));
    }
    let augmented = data.with_bias_column();
    let init = init_params(&augmented, m, 0, beta, sgd.seed)?;
    let init = EncoderParams::new(init.w, DMatrix::zeros(m, m), DVector::zeros(m), beta, 0)?;
    let out = train_objective(
        &NnHashLoss { margin },
        &augmented,
        pairs,
        sgd,
        init,
        TrainOptions {
            freeze_thresholds: true,
        },
        |_, _| {},
    )?;
    Ok(NnHashFit {
        params: LinearHashParams::from_encoder(&out.params)?,
        log: out.log,
    })
}
