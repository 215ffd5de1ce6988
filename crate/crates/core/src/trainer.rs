//! Siamese training of one encoder under the sparse hashing loss.
//!
//! Per pair the loss is
//! `s |y - y'|_1 + (lambda/2)(1 - s) max(0, M - |y - y'|_1)^2 + alpha (|y|_1 + |y'|_1)`
//! and a batch loss is the arithmetic mean over its pairs (unless the
//! objective supplies its own batch weights). Optimization is minibatch SGD
//! with classical momentum and a geometric learning-rate decay per epoch.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::data::{PairSample, Similarity};
use crate::data::FeatureMatrix;
use crate::encoder::{sign, EncoderParams, ForwardTrace, Gradients};
use crate::error::{check_len, Error, Result};

/// Weights of the three loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Sparsity weight on `|y|_1`.
    pub alpha: f64,
    /// Weight of the negative-pair hinge.
    pub lambda: f64,
    /// Hinge margin on the l1 distance of negatives.
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            lambda: 0.1,
            margin: 16.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Minibatch SGD settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    /// Per-epoch multiplicative decay of the learning rate.
    pub anneal: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate per-pair gradients of a batch on the rayon pool. Results are
    /// reduced in batch order, so they match the sequential path bit for bit.
    pub parallel: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            anneal: 0.98,
            momentum: 0.9,
            max_epochs: 250,
            batch_size: 32,
            seed: 0,
            parallel: false,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.anneal > 0.0 && self.anneal <= 1.0) {
            return Err(Error::Config("anneal must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.anneal.powi(epoch as i32)
    }
}

pub(crate) fn l1_distance(y: &DVector<f64>, y2: &DVector<f64>) -> f64 {
    y.iter().zip(y2.iter()).map(|(a, b)| (a - b).abs()).sum()
}

fn l1_norm(y: &DVector<f64>) -> f64 {
    y.iter().map(|v| v.abs()).sum()
}

/// Per-pair loss with gradients for both branches.
pub trait PairObjective: Sync {
    /// Returns `(loss, dL/dy, dL/dy')`.
    fn evaluate(
        &self,
        y: &DVector<f64>,
        y2: &DVector<f64>,
        s: Similarity,
    ) -> (f64, DVector<f64>, DVector<f64>);

    /// Weight of each pair's loss in the batch loss; default is the mean.
    fn batch_weights(&self, labels: &[Similarity]) -> Vec<f64> {
        vec![1.0 / labels.len() as f64; labels.len()]
    }
}

/// The sparse hashing pair loss.
#[derive(Clone, Copy, Debug)]
pub struct SparseHashLoss(pub LossConfig);

impl SparseHashLoss {
    /// Gradient of the loss with respect to the branch holding `own`.
    ///
    /// The pair terms depend on `own - other` only through `|own - other|_1`,
    /// so both branches use the same expression with roles swapped; this
    /// keeps the two branch gradients exact mirrors of each other.
    fn branch_gradient(&self, own: &DVector<f64>, other: &DVector<f64>, coeff: f64) -> DVector<f64> {
        let alpha = self.0.alpha;
        own.zip_map(other, |a, b| coeff * sign(a - b) + alpha * sign(a))
    }
}

impl PairObjective for SparseHashLoss {
    fn evaluate(
        &self,
        y: &DVector<f64>,
        y2: &DVector<f64>,
        s: Similarity,
    ) -> (f64, DVector<f64>, DVector<f64>) {
        let cfg = &self.0;
        let d1 = l1_distance(y, y2);
        let sparse = cfg.alpha * (l1_norm(y) + l1_norm(y2));
        let (loss, coeff) = match s {
            Similarity::Similar => (d1 + sparse, 1.0),
            Similarity::Dissimilar => {
                let hinge = (cfg.margin - d1).max(0.0);
                (0.5 * cfg.lambda * hinge * hinge + sparse, -cfg.lambda * hinge)
            }
        };
        (
            loss,
            self.branch_gradient(y, y2, coeff),
            self.branch_gradient(y2, y, coeff),
        )
    }
}

/// Loss of one pair of encoder outputs.
pub fn pair_loss(y: &[f64], y2: &[f64], s: Similarity, cfg: &LossConfig) -> Result<f64> {
    check_len(y.len(), y2.len())?;
    cfg.validate()?;
    let (loss, _, _) = SparseHashLoss(*cfg).evaluate(
        &DVector::from_column_slice(y),
        &DVector::from_column_slice(y2),
        s,
    );
    Ok(loss)
}

/// Subgradient of `pair_loss(forward(x), forward(x'))` with respect to the
/// shared parameters; both branches contribute.
pub fn pair_gradient(
    trace: &ForwardTrace,
    trace2: &ForwardTrace,
    s: Similarity,
    cfg: &LossConfig,
    params: &EncoderParams,
) -> Result<Gradients> {
    objective_gradient(&SparseHashLoss(*cfg), trace, trace2, s, params).map(|(_, g)| g)
}

pub(crate) fn objective_gradient(
    objective: &impl PairObjective,
    trace: &ForwardTrace,
    trace2: &ForwardTrace,
    s: Similarity,
    params: &EncoderParams,
) -> Result<(f64, Gradients)> {
    check_len(trace.y.len(), trace2.y.len())?;
    let (loss, gy, gy2) = objective.evaluate(&trace.y, &trace2.y, s);
    let mut grads = Gradients::zeros_like(params);
    params.accumulate_backward(trace, &gy, &mut grads)?;
    params.accumulate_backward(trace2, &gy2, &mut grads)?;
    Ok((loss, grads))
}

/// Momentum buffer for one encoder.
#[derive(Clone, Debug)]
pub(crate) struct Momentum {
    velocity: Gradients,
}

impl Momentum {
    pub(crate) fn new(params: &EncoderParams) -> Self {
        Self {
            velocity: Gradients::zeros_like(params),
        }
    }

    /// `v <- mu v - lr g; theta <- theta + v`, then projects thresholds onto
    /// `tau >= 0`. Frozen thresholds are left untouched.
    pub(crate) fn step(
        &mut self,
        params: &mut EncoderParams,
        grads: &Gradients,
        lr: f64,
        momentum: f64,
        freeze_thresholds: bool,
    ) {
        let v = &mut self.velocity;
        let update = |v: &mut f64, g: f64| *v = momentum * *v - lr * g;
        v.w.zip_apply(&grads.w, update);
        v.s.zip_apply(&grads.s, update);
        params.w += &v.w;
        if params.iterations > 0 {
            params.s += &v.s;
        }
        if !freeze_thresholds {
            v.tau.zip_apply(&grads.tau, update);
            params.tau += &v.tau;
            params.tau.apply(|t| *t = t.max(0.0));
        }
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean fraction of nonzero entries of the final shrinkage state.
    pub mean_sparsity: f64,
    pub mean_pos_d1: f64,
    pub mean_neg_d1: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "epoch\tmean_loss\tmean_sparsity\tmean_pos_d1\tmean_neg_d1\tlr";

    /// Tab-separated text, one line per epoch after a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.epoch, r.mean_loss, r.mean_sparsity, r.mean_pos_d1, r.mean_neg_d1, r.lr
            );
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::HEADER) {
            return Err(Error::Format("training log header mismatch".into()));
        }
        let epochs = lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 6 {
                    return Err(Error::Format(format!("bad training log line {line:?}")));
                }
                let num = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad number {s:?}")))
                };
                Ok(EpochRecord {
                    epoch: f[0]
                        .parse()
                        .map_err(|_| Error::Format(format!("bad epoch {:?}", f[0])))?,
                    mean_loss: num(f[1])?,
                    mean_sparsity: num(f[2])?,
                    mean_pos_d1: num(f[3])?,
                    mean_neg_d1: num(f[4])?,
                    lr: num(f[5])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { epochs })
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct EpochAccumulator {
    loss: f64,
    pairs: usize,
    nonzero: usize,
    units: usize,
    pos_d1: f64,
    pos: usize,
    neg_d1: f64,
    neg: usize,
}

impl EpochAccumulator {
    pub(crate) fn record(&mut self, loss: f64, t1: &ForwardTrace, t2: &ForwardTrace, s: Similarity) {
        self.loss += loss;
        self.pairs += 1;
        for t in [t1, t2] {
            let z = t.sparse_state();
            self.nonzero += z.iter().filter(|&&v| v != 0.0).count();
            self.units += z.len();
        }
        let d1 = l1_distance(&t1.y, &t2.y);
        if s.is_similar() {
            self.pos_d1 += d1;
            self.pos += 1;
        } else {
            self.neg_d1 += d1;
            self.neg += 1;
        }
    }

    pub(crate) fn finish(&self, epoch: usize, lr: f64) -> EpochRecord {
        let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
        EpochRecord {
            epoch,
            mean_loss: mean(self.loss, self.pairs),
            mean_sparsity: mean(self.nonzero as f64, self.units),
            mean_pos_d1: mean(self.pos_d1, self.pos),
            mean_neg_d1: mean(self.neg_d1, self.neg),
            lr,
        }
    }
}

/// Knobs of the generic trainer beyond plain SGD.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Keep thresholds at their initial values (linear-hash mode).
    pub freeze_thresholds: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: EncoderParams,
    pub log: TrainingLog,
}

/// Trains with the sparse hashing loss.
pub fn train(
    dataset: &FeatureMatrix,
    pairs: &[PairSample],
    loss: &LossConfig,
    sgd: &SgdConfig,
    init: EncoderParams,
) -> Result<TrainOutput> {
    loss.validate()?;
    train_objective(
        &SparseHashLoss(*loss),
        dataset,
        pairs,
        sgd,
        init,
        TrainOptions::default(),
        |_, _| {},
    )
}

pub(crate) fn validate_pairs(pairs: &[PairSample], rows_a: usize, rows_b: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("training pairs"));
    }
    for p in pairs {
        if p.a >= rows_a || p.b >= rows_b {
            return Err(Error::InvalidArgument(format!(
                "pair ({}, {}) indexes outside the dataset",
                p.a, p.b
            )));
        }
    }
    Ok(())
}

/// Generic siamese SGD loop; `observer` sees the parameters after each epoch.
pub fn train_objective(
    objective: &impl PairObjective,
    dataset: &FeatureMatrix,
    pairs: &[PairSample],
    sgd: &SgdConfig,
    init: EncoderParams,
    options: TrainOptions,
    mut observer: impl FnMut(usize, &EncoderParams),
) -> Result<TrainOutput> {
    sgd.validate()?;
    init.validate()?;
    check_len(init.input_dim(), dataset.cols())?;
    validate_pairs(pairs, dataset.rows(), dataset.rows())?;

    let mut params = init;
    let mut momentum = Momentum::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(sgd.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = TrainingLog::default();

    for epoch in 0..sgd.max_epochs {
        let lr = sgd.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut acc = EpochAccumulator::default();
        for (batch_no, batch) in order.chunks(sgd.batch_size).enumerate() {
            let eval = |&k: &usize| -> Result<(f64, Gradients, ForwardTrace, ForwardTrace)> {
                let p = &pairs[k];
                let t1 = params.forward(dataset.row(p.a))?;
                let t2 = params.forward(dataset.row(p.b))?;
                let (loss, g) = objective_gradient(objective, &t1, &t2, p.s, &params)?;
                Ok((loss, g, t1, t2))
            };
            let results: Vec<_> = if sgd.parallel {
                batch.par_iter().map(eval).collect::<Result<_>>()?
            } else {
                batch.iter().map(eval).collect::<Result<_>>()?
            };

            let labels: Vec<Similarity> = batch.iter().map(|&k| pairs[k].s).collect();
            let weights = objective.batch_weights(&labels);
            let mut grads = Gradients::zeros_like(&params);
            let mut batch_loss = 0.0;
            for ((loss, g, t1, t2), (&wk, &s)) in results.iter().zip(weights.iter().zip(&labels)) {
                grads.add_scaled(g, wk);
                batch_loss += wk * loss;
                acc.record(*loss, t1, t2, s);
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_no,
                    grad_norm: grads.norm(),
                });
            }
            momentum.step(&mut params, &grads, lr, sgd.momentum, options.freeze_thresholds);
        }
        log.epochs.push(acc.finish(epoch, lr));
        observer(epoch, &params);
    }
    Ok(TrainOutput { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use nalgebra::DMatrix;

    #[test]
    fn loss_examples() {
        let cfg = LossConfig {
            alpha: 0.1,
            lambda: 1.0,
            margin: 2.0,
        };
        let y = [0.5, -0.5];
        assert!((pair_loss(&y, &y, Similarity::Similar, &cfg).unwrap() - 0.2).abs() < 1e-15);
        let no_alpha = LossConfig { alpha: 0.0, ..cfg };
        assert_eq!(pair_loss(&y, &y, Similarity::Similar, &no_alpha).unwrap(), 0.0);
        assert_eq!(
            pair_loss(&[0.9, -0.9], &[-0.9, 0.9], Similarity::Dissimilar, &LossConfig { margin: 3.0, ..no_alpha })
                .unwrap(),
            0.0
        );
        let v = pair_loss(&y, &[0.0, 0.0], Similarity::Dissimilar, &cfg).unwrap();
        assert!((v - 0.6).abs() < 1e-15, "{v}");
    }

    #[test]
    fn loss_errors() {
        let cfg = LossConfig::default();
        assert!(pair_loss(&[0.1], &[0.1, 0.2], Similarity::Similar, &cfg).is_err());
        let bad = LossConfig { margin: 0.0, ..cfg };
        assert!(pair_loss(&[0.1], &[0.2], Similarity::Similar, &bad).is_err());
    }

    #[test]
    fn coincident_positive_has_zero_gradient() {
        let data = FeatureMatrix::from_rows(&[vec![1.0, 0.5, -0.2], vec![0.3, -1.0, 0.8]]).unwrap();
        let p = init_params(&data, 2, 1, 3.0, 1).unwrap();
        let t = p.forward(data.row(0)).unwrap();
        let cfg = LossConfig { alpha: 0.0, ..LossConfig::default() };
        let g = pair_gradient(&t, &t, Similarity::Similar, &cfg, &p).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn dead_network_has_zero_gradient() {
        let w = DMatrix::from_row_slice(2, 2, &[0.1, -0.1, 0.2, 0.05]);
        let p = EncoderParams::new(w, DMatrix::zeros(2, 2), DVector::from_element(2, 10.0), 3.0, 1).unwrap();
        let t1 = p.forward(&[1.0, 1.0]).unwrap();
        let t2 = p.forward(&[-1.0, 0.5]).unwrap();
        let cfg = LossConfig { alpha: 0.5, ..LossConfig::default() };
        for s in [Similarity::Similar, Similarity::Dissimilar] {
            let g = pair_gradient(&t1, &t2, s, &cfg, &p).unwrap();
            assert_eq!(g.w.amax(), 0.0);
            assert_eq!(g.norm(), 0.0);
        }
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let data = FeatureMatrix::from_rows(&[vec![1.0, 0.5], vec![0.3, -1.0], vec![0.2, 0.2]]).unwrap();
        let p = init_params(&data, 2, 1, 3.0, 1).unwrap();
        let q = init_params(&data, 3, 1, 3.0, 1).unwrap();
        let t = p.forward(data.row(0)).unwrap();
        let tq = q.forward(data.row(0)).unwrap();
        let cfg = LossConfig::default();
        assert!(pair_gradient(&t, &tq, Similarity::Similar, &cfg, &p).is_err());
        assert!(pair_gradient(&tq, &tq, Similarity::Similar, &cfg, &p).is_err());
    }

    #[test]
    fn sgd_config_validation() {
        assert!(SgdConfig::default().validate().is_ok());
        assert!(SgdConfig { momentum: 1.0, ..SgdConfig::default() }.validate().is_err());
        assert!(SgdConfig { batch_size: 0, ..SgdConfig::default() }.validate().is_err());
        assert!(SgdConfig { anneal: 1.5, ..SgdConfig::default() }.validate().is_err());
        let s = SgdConfig { learning_rate: 0.5, anneal: 0.5, ..SgdConfig::default() };
        assert_eq!(s.learning_rate_at(2), 0.125);
    }

    #[test]
    fn log_round_trip() {
        let log = TrainingLog {
            epochs: vec![EpochRecord {
                epoch: 0,
                mean_loss: 0.125,
                mean_sparsity: 1.0 / 3.0,
                mean_pos_d1: 2.5,
                mean_neg_d1: 1e-7,
                lr: 0.01,
            }],
        };
        let text = log.to_tsv();
        let back = TrainingLog::from_tsv(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_tsv(), text);
    }

    #[test]
    fn invalid_pairs_are_rejected() {
        let data = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = init_params(&data, 2, 1, 3.0, 0).unwrap();
        let sgd = SgdConfig::default();
        let cfg = LossConfig::default();
        assert!(matches!(train(&data, &[], &cfg, &sgd, p.clone()), Err(Error::EmptyInput(_))));
        let bad = [PairSample { a: 0, b: 5, s: Similarity::Similar }];
        assert!(train(&data, &bad, &cfg, &sgd, p).is_err());
    }
}
