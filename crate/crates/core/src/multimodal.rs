//! Joint training of two encoders, one per modality, into a shared code space.
//!
//! The aggregate loss over a batch is the mean of
//! `mu1 L(xi(x), xi(x'))` for XX pairs, `mu2 L(eta(y), eta(y'))` for YY pairs
//! and `L(xi(x), eta(y))` for XY pairs, with `L` the sparse hashing pair loss.
//! Setting `mu1 = mu2 = 0` gives the cross-modal regime, in which intra pairs
//! are skipped without being evaluated.
//!
//! Per-pair gradient contributions are summed in a canonical order keyed by
//! (intra before inter, own row, partner row, label) rather than batch order.
//! With identical modalities and a mirrored pair list the two encoders then
//! receive bitwise identical updates. Only the extension to more modalities
//! needs a new kind per modality pair; the reduction is unchanged.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, Similarity};
use crate::encoder::{EncoderParams, ForwardTrace, Gradients};
use crate::error::{Error, Result};
use crate::trainer::{
    EpochAccumulator, LossConfig, Momentum, PairObjective, SgdConfig, SparseHashLoss, TrainingLog,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    /// Both rows index the first modality.
    XX,
    /// Both rows index the second modality.
    YY,
    /// `a` indexes the first modality, `b` the second.
    XY,
}

impl std::fmt::Display for PairKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairKind::XX => "xx",
            PairKind::YY => "yy",
            PairKind::XY => "xy",
        })
    }
}

impl std::str::FromStr for PairKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xx" => Ok(PairKind::XX),
            "yy" => Ok(PairKind::YY),
            "xy" => Ok(PairKind::XY),
            _ => Err(Error::Format(format!("unknown pair kind {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultimodalPair {
    pub kind: PairKind,
    pub a: usize,
    pub b: usize,
    pub s: Similarity,
}

impl MultimodalPair {
    pub fn new(kind: PairKind, a: usize, b: usize, s: Similarity) -> Self {
        Self { kind, a, b, s }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultimodalConfig {
    /// Weight of XX pairs.
    pub mu1: f64,
    /// Weight of YY pairs.
    pub mu2: f64,
    pub loss_x: LossConfig,
    pub loss_y: LossConfig,
    /// Loss of the inter-modality term, whose weight is fixed at 1.
    pub loss_xy: LossConfig,
    pub sgd: SgdConfig,
}

impl Default for MultimodalConfig {
    fn default() -> Self {
        Self {
            mu1: 1.0,
            mu2: 1.0,
            loss_x: LossConfig::default(),
            loss_y: LossConfig::default(),
            loss_xy: LossConfig::default(),
            sgd: SgdConfig::default(),
        }
    }
}

impl MultimodalConfig {
    /// Cross-modal regime: intra-modality pairs are ignored.
    pub fn cross_modal(loss: LossConfig, sgd: SgdConfig) -> Self {
        Self {
            mu1: 0.0,
            mu2: 0.0,
            loss_x: loss,
            loss_y: loss,
            loss_xy: loss,
            sgd,
        }
    }

    pub fn is_cross_modal(&self) -> bool {
        self.mu1 == 0.0 && self.mu2 == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, mu) in [("mu1", self.mu1), ("mu2", self.mu2)] {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0")));
            }
        }
        self.loss_x.validate()?;
        self.loss_y.validate()?;
        self.loss_xy.validate()?;
        self.sgd.validate()
    }

    fn weight(&self, kind: PairKind) -> f64 {
        match kind {
            PairKind::XX => self.mu1,
            PairKind::YY => self.mu2,
            PairKind::XY => 1.0,
        }
    }

    fn loss(&self, kind: PairKind) -> &LossConfig {
        match kind {
            PairKind::XX => &self.loss_x,
            PairKind::YY => &self.loss_y,
            PairKind::XY => &self.loss_xy,
        }
    }
}

/// Both modalities with their encoders.
#[derive(Clone, Copy)]
pub struct Modalities<'a> {
    pub x: &'a FeatureMatrix,
    pub y: &'a FeatureMatrix,
    pub xi: &'a EncoderParams,
    pub eta: &'a EncoderParams,
}

impl Modalities<'_> {
    fn check(&self) -> Result<()> {
        if self.xi.code_len() != self.eta.code_len() {
            return Err(Error::Config(format!(
                "encoders disagree on code length: {} vs {}",
                self.xi.code_len(),
                self.eta.code_len()
            )));
        }
        crate::error::check_len(self.xi.input_dim(), self.x.cols())?;
        crate::error::check_len(self.eta.input_dim(), self.y.cols())
    }

    fn check_pairs(&self, pairs: &[MultimodalPair]) -> Result<()> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("multimodal pairs"));
        }
        for p in pairs {
            let (ra, rb) = match p.kind {
                PairKind::XX => (self.x.rows(), self.x.rows()),
                PairKind::YY => (self.y.rows(), self.y.rows()),
                PairKind::XY => (self.x.rows(), self.y.rows()),
            };
            if p.a >= ra || p.b >= rb {
                return Err(Error::InvalidArgument(format!(
                    "{} pair ({}, {}) indexes outside the dataset",
                    p.kind, p.a, p.b
                )));
            }
        }
        Ok(())
    }

    fn forward(&self, p: &MultimodalPair) -> Result<(ForwardTrace, ForwardTrace)> {
        Ok(match p.kind {
            PairKind::XX => (self.xi.forward(self.x.row(p.a))?, self.xi.forward(self.x.row(p.b))?),
            PairKind::YY => (self.eta.forward(self.y.row(p.a))?, self.eta.forward(self.y.row(p.b))?),
            PairKind::XY => (self.xi.forward(self.x.row(p.a))?, self.eta.forward(self.y.row(p.b))?),
        })
    }
}

/// Value and gradients of the aggregate loss on one batch.
#[derive(Clone, Debug)]
pub struct MultimodalGradient {
    pub loss: f64,
    pub xi: Gradients,
    pub eta: Gradients,
}

struct Evaluated {
    pair: MultimodalPair,
    loss: f64,
    t1: ForwardTrace,
    t2: ForwardTrace,
    g1: DVector<f64>,
    g2: DVector<f64>,
}

/// One backward pass waiting to be reduced.
struct Contribution<'e> {
    /// 0 for intra pairs, 1 for inter pairs.
    inter: u8,
    own: usize,
    partner: usize,
    s: Similarity,
    trace: &'e ForwardTrace,
    grad: DVector<f64>,
}

impl Contribution<'_> {
    fn key(&self) -> (u8, usize, usize, bool) {
        (self.inter, self.own, self.partner, self.s.is_similar())
    }
}

fn evaluate_batch(
    mods: &Modalities<'_>,
    cfg: &MultimodalConfig,
    batch: &[MultimodalPair],
    parallel: bool,
) -> Result<Vec<Evaluated>> {
    let eval = |p: &MultimodalPair| -> Result<Option<Evaluated>> {
        if cfg.weight(p.kind) == 0.0 {
            return Ok(None);
        }
        let (t1, t2) = mods.forward(p)?;
        let (loss, g1, g2) = SparseHashLoss(*cfg.loss(p.kind)).evaluate(&t1.y, &t2.y, p.s);
        Ok(Some(Evaluated {
            pair: *p,
            loss,
            t1,
            t2,
            g1,
            g2,
        }))
    };
    let out: Vec<Option<Evaluated>> = if parallel {
        batch.par_iter().map(eval).collect::<Result<_>>()?
    } else {
        batch.iter().map(eval).collect::<Result<_>>()?
    };
    Ok(out.into_iter().flatten().collect())
}

fn reduce(
    mods: &Modalities<'_>,
    cfg: &MultimodalConfig,
    evaluated: &[Evaluated],
    batch_len: usize,
) -> Result<MultimodalGradient> {
    let mut to_xi = Vec::new();
    let mut to_eta = Vec::new();
    let mut loss = 0.0;
    for e in evaluated {
        let p = e.pair;
        let w = cfg.weight(p.kind) / batch_len as f64;
        loss += w * e.loss;
        let c1 = Contribution {
            inter: u8::from(p.kind == PairKind::XY),
            own: p.a,
            partner: p.b,
            s: p.s,
            trace: &e.t1,
            grad: &e.g1 * w,
        };
        let c2 = Contribution {
            inter: c1.inter,
            own: p.b,
            partner: p.a,
            s: p.s,
            trace: &e.t2,
            grad: &e.g2 * w,
        };
        match p.kind {
            PairKind::XX => to_xi.extend([c1, c2]),
            PairKind::YY => to_eta.extend([c1, c2]),
            PairKind::XY => {
                to_xi.push(c1);
                to_eta.push(c2);
            }
        }
    }
    let mut xi = Gradients::zeros_like(mods.xi);
    let mut eta = Gradients::zeros_like(mods.eta);
    for (params, contributions, grads) in [(mods.xi, &mut to_xi, &mut xi), (mods.eta, &mut to_eta, &mut eta)] {
        contributions.sort_by_key(Contribution::key);
        for c in contributions.iter() {
            params.accumulate_backward(c.trace, &c.grad, grads)?;
        }
    }
    Ok(MultimodalGradient { loss, xi, eta })
}

/// Aggregate loss of a batch: the mean over its pairs of the weighted pair
/// losses. Pairs whose weight is zero contribute nothing but still count in
/// the mean.
pub fn mm_loss(mods: &Modalities<'_>, batch: &[MultimodalPair], cfg: &MultimodalConfig) -> Result<f64> {
    mm_gradient(mods, batch, cfg).map(|g| g.loss)
}

/// Aggregate loss of a batch together with its gradients for both encoders.
pub fn mm_gradient(
    mods: &Modalities<'_>,
    batch: &[MultimodalPair],
    cfg: &MultimodalConfig,
) -> Result<MultimodalGradient> {
    cfg.validate()?;
    mods.check()?;
    mods.check_pairs(batch)?;
    let evaluated = evaluate_batch(mods, cfg, batch, false)?;
    reduce(mods, cfg, &evaluated, batch.len())
}

#[derive(Clone, Debug)]
pub struct MultimodalOutput {
    pub xi: EncoderParams,
    pub eta: EncoderParams,
    pub log: TrainingLog,
}

/// Trains both encoders jointly. Batches mix pair kinds in proportion to
/// their frequency in `pairs`; `observer` sees both encoders after each epoch.
pub fn mm_train(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    pairs: &[MultimodalPair],
    cfg: &MultimodalConfig,
    xi_init: EncoderParams,
    eta_init: EncoderParams,
    mut observer: impl FnMut(usize, &EncoderParams, &EncoderParams),
) -> Result<MultimodalOutput> {
    cfg.validate()?;
    xi_init.validate()?;
    eta_init.validate()?;
    let (mut xi, mut eta) = (xi_init, eta_init);
    {
        let mods = Modalities { x, y, xi: &xi, eta: &eta };
        mods.check()?;
        mods.check_pairs(pairs)?;
    }
    let sgd = &cfg.sgd;
    let mut m_xi = Momentum::new(&xi);
    let mut m_eta = Momentum::new(&eta);
    let mut rng = ChaCha8Rng::seed_from_u64(sgd.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = TrainingLog::default();

    for epoch in 0..sgd.max_epochs {
        let lr = sgd.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut acc = EpochAccumulator::default();
        for (batch_no, chunk) in order.chunks(sgd.batch_size).enumerate() {
            let batch: Vec<MultimodalPair> = chunk.iter().map(|&k| pairs[k]).collect();
            let mods = Modalities { x, y, xi: &xi, eta: &eta };
            let evaluated = evaluate_batch(&mods, cfg, &batch, sgd.parallel)?;
            for e in &evaluated {
                acc.record(cfg.weight(e.pair.kind) * e.loss, &e.t1, &e.t2, e.pair.s);
            }
            let g = reduce(&mods, cfg, &evaluated, batch.len())?;
            if !g.loss.is_finite() || !g.xi.is_finite() || !g.eta.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_no,
                    grad_norm: (g.xi.norm().powi(2) + g.eta.norm().powi(2)).sqrt(),
                });
            }
            m_xi.step(&mut xi, &g.xi, lr, sgd.momentum, false);
            m_eta.step(&mut eta, &g.eta, lr, sgd.momentum, false);
        }
        log.epochs.push(acc.finish(epoch, lr));
        observer(epoch, &xi, &eta);
    }
    Ok(MultimodalOutput { xi, eta, log })
}
