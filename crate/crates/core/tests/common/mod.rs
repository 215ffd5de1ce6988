//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsehash::baselines::{nnhash_loss, LinearHashParams, NnHashLoss};
use sparsehash::codes::TernaryCode;
use sparsehash::data::{FeatureMatrix, Labels, PairSample, Similarity};
use sparsehash::encoder::{EncoderParams, Gradients};
use sparsehash::retrieval::{Alphabet, CodeIndex};
use sparsehash::eval::GroundTruth;
use sparsehash::multimodal::{mm_gradient, mm_loss, Modalities, MultimodalConfig, MultimodalPair, PairKind};
use sparsehash::trainer::{pair_gradient, pair_loss, LossConfig, PairObjective};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

// ---------------------------------------------------------------------------
// Finite differences

const STEP: f64 = 1e-6;
/// Minimum distance of every activation to a kink for an instance to count
/// as kink-free.
const KINK_GAP: f64 = 1e-3;

fn flat_len(p: &EncoderParams) -> usize {
    p.w.len() + p.s.len() + p.tau.len()
}

/// Adds `h` to the parameter at position `k` of the `[W, S, tau]` row-major
/// flattening.
fn nudge(p: &mut EncoderParams, k: usize, h: f64) {
    let (m, n) = p.w.shape();
    if k < m * n {
        p.w[(k / n, k % n)] += h;
    } else if k < m * n + m * m {
        let k = k - m * n;
        p.s[(k / m, k % m)] += h;
    } else {
        p.tau[k - m * n - m * m] += h;
    }
}

fn central_difference(params: &EncoderParams, f: &dyn Fn(&EncoderParams) -> f64) -> Vec<f64> {
    (0..flat_len(params))
        .map(|k| {
            let (mut up, mut down) = (params.clone(), params.clone());
            nudge(&mut up, k, STEP);
            nudge(&mut down, k, -STEP);
            (f(&up) - f(&down)) / (2.0 * STEP)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale_a: f64 = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = scale.max(scale_a);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

pub fn random_encoder(rng: &mut ChaCha8Rng, n: usize, m: usize, t: usize) -> EncoderParams {
    let w = DMatrix::from_vec(m, n, uniform_vec(rng, m * n, -1.0, 1.0));
    let s = DMatrix::from_vec(m, m, uniform_vec(rng, m * m, -0.3, 0.3));
    let tau = DVector::from_vec(uniform_vec(rng, m, 0.05, 0.3));
    EncoderParams::new(w, s, tau, rng.random_range(0.5..2.0), t).unwrap()
}

fn kink_free_outputs(p: &EncoderParams, x: &[f64]) -> Option<DVector<f64>> {
    let trace = p.forward(x).unwrap();
    (trace.kink_margin(&p.tau) > KINK_GAP).then_some(trace.y)
}

/// The loss terms are non-smooth where outputs coincide, vanish, or where the
/// hinge switches on.
fn loss_smooth(y: &DVector<f64>, y2: &DVector<f64>, s: Similarity, cfg: &LossConfig) -> bool {
    let apart = y.iter().zip(y2.iter()).all(|(a, b)| (a - b).abs() > KINK_GAP);
    let off_zero = y.iter().chain(y2.iter()).all(|v| *v == 0.0 || v.abs() > KINK_GAP);
    let d1: f64 = y.iter().zip(y2.iter()).map(|(a, b)| (a - b).abs()).sum();
    let hinge_ok = s.is_similar() || (cfg.margin - d1).abs() > KINK_GAP;
    apart && off_zero && hinge_ok
}

/// Relative gradient error of `pair_loss(forward(x), forward(x'))` on one
/// random instance, or `None` when the draw lands near a kink.
pub fn pair_loss_instance(seed: u64) -> Option<f64> {
    let mut rng = rng(seed);
    let n = rng.random_range(2..=6);
    let m = rng.random_range(2..=8);
    let t = rng.random_range(0..=2);
    let params = random_encoder(&mut rng, n, m, t);
    let x = uniform_vec(&mut rng, n, -1.5, 1.5);
    let x2 = uniform_vec(&mut rng, n, -1.5, 1.5);
    let s = if rng.random_bool(0.5) { Similarity::Similar } else { Similarity::Dissimilar };
    let cfg = LossConfig {
        alpha: rng.random_range(0.0..0.2),
        lambda: rng.random_range(0.05..1.0),
        margin: rng.random_range(0.5..(2.0 * m as f64)),
    };
    let y = kink_free_outputs(&params, &x)?;
    let y2 = kink_free_outputs(&params, &x2)?;
    if !loss_smooth(&y, &y2, s, &cfg) {
        return None;
    }
    let (t1, t2) = (params.forward(&x).unwrap(), params.forward(&x2).unwrap());
    let analytic = pair_gradient(&t1, &t2, s, &cfg, &params).unwrap().flatten();
    let numeric = central_difference(&params, &|p| {
        pair_loss(p.apply(&x).unwrap().as_slice(), p.apply(&x2).unwrap().as_slice(), s, &cfg).unwrap()
    });
    Some(relative_error(&analytic, &numeric))
}

/// Relative gradient error of the NN-hash loss through a linear hash layer.
pub fn nnhash_instance(seed: u64) -> Option<f64> {
    let mut rng = rng(seed);
    let n = rng.random_range(2..=6);
    let m = rng.random_range(2..=8);
    let p = DMatrix::from_vec(m, n, uniform_vec(&mut rng, m * n, -1.0, 1.0));
    let a = DVector::from_vec(uniform_vec(&mut rng, m, -0.5, 0.5));
    let lin = LinearHashParams::new(p, a, rng.random_range(0.5..2.0)).unwrap();
    let x = uniform_vec(&mut rng, n, -1.5, 1.5);
    let x2 = uniform_vec(&mut rng, n, -1.5, 1.5);
    let s = if rng.random_bool(0.5) { Similarity::Similar } else { Similarity::Dissimilar };
    let margin = rng.random_range(0.2..3.0);
    let (y, y2) = (lin.apply(&x).unwrap(), lin.apply(&x2).unwrap());
    let dist = (&y - &y2).norm();
    if dist < KINK_GAP || (!s.is_similar() && (margin - dist).abs() < KINK_GAP) {
        return None;
    }

    // Analytic: backpropagate through the equivalent augmented encoder.
    let enc = lin.to_encoder().unwrap();
    let aug = |v: &[f64]| v.iter().copied().chain([1.0]).collect::<Vec<_>>();
    let (t1, t2) = (enc.forward(&aug(&x)).unwrap(), enc.forward(&aug(&x2)).unwrap());
    let (_, g1, g2) = NnHashLoss { margin }.evaluate(&t1.y, &t2.y, s);
    let mut grads = Gradients::zeros_like(&enc);
    enc.accumulate_backward(&t1, &g1, &mut grads).unwrap();
    enc.accumulate_backward(&t2, &g2, &mut grads).unwrap();
    let analytic: Vec<f64> = grads.flatten()[..m * (n + 1)].to_vec();

    // Numeric: perturb P and a directly in the linear parameterization.
    let loss = |l: &LinearHashParams| {
        nnhash_loss(l.apply(&x).unwrap().as_slice(), l.apply(&x2).unwrap().as_slice(), s, margin).unwrap()
    };
    let mut numeric = Vec::with_capacity(m * (n + 1));
    for i in 0..m {
        for j in 0..=n {
            let (mut up, mut down) = (lin.clone(), lin.clone());
            if j < n {
                up.p[(i, j)] += STEP;
                down.p[(i, j)] -= STEP;
            } else {
                up.a[i] += STEP;
                down.a[i] -= STEP;
            }
            numeric.push((loss(&up) - loss(&down)) / (2.0 * STEP));
        }
    }
    Some(relative_error(&analytic, &numeric))
}

/// Relative gradient error of the multimodal aggregate loss over both
/// encoders.
pub fn mm_instance(seed: u64) -> Option<f64> {
    let mut rng = rng(seed);
    let (nx, ny) = (rng.random_range(2..=6), rng.random_range(2..=6));
    let m = rng.random_range(2..=8);
    let t = rng.random_range(0..=2);
    let xi = random_encoder(&mut rng, nx, m, t);
    let eta = random_encoder(&mut rng, ny, m, t);
    let rows = 4;
    let x = FeatureMatrix::new(rows, nx, uniform_vec(&mut rng, rows * nx, -1.5, 1.5)).unwrap();
    let y = FeatureMatrix::new(rows, ny, uniform_vec(&mut rng, rows * ny, -1.5, 1.5)).unwrap();
    let random_loss = |rng: &mut ChaCha8Rng| LossConfig {
        alpha: rng.random_range(0.0..0.2),
        lambda: rng.random_range(0.05..1.0),
        margin: rng.random_range(0.5..(2.0 * m as f64)),
    };
    let cfg = MultimodalConfig {
        mu1: rng.random_range(0.0..2.0),
        mu2: rng.random_range(0.0..2.0),
        loss_x: random_loss(&mut rng),
        loss_y: random_loss(&mut rng),
        loss_xy: random_loss(&mut rng),
        ..MultimodalConfig::default()
    };
    let mut batch = Vec::new();
    for kind in [PairKind::XX, PairKind::YY, PairKind::XY] {
        for _ in 0..2 {
            let a = rng.random_range(0..rows);
            let mut b = rng.random_range(0..rows);
            if kind != PairKind::XY && a == b {
                b = (a + 1) % rows;
            }
            let s = if rng.random_bool(0.5) { Similarity::Similar } else { Similarity::Dissimilar };
            batch.push(MultimodalPair::new(kind, a, b, s));
        }
    }
    for p in &batch {
        let (enc_a, xa, enc_b, xb, loss) = match p.kind {
            PairKind::XX => (&xi, x.row(p.a), &xi, x.row(p.b), &cfg.loss_x),
            PairKind::YY => (&eta, y.row(p.a), &eta, y.row(p.b), &cfg.loss_y),
            PairKind::XY => (&xi, x.row(p.a), &eta, y.row(p.b), &cfg.loss_xy),
        };
        let ya = kink_free_outputs(enc_a, xa)?;
        let yb = kink_free_outputs(enc_b, xb)?;
        if !loss_smooth(&ya, &yb, p.s, loss) {
            return None;
        }
    }

    let mods = Modalities { x: &x, y: &y, xi: &xi, eta: &eta };
    let g = mm_gradient(&mods, &batch, &cfg).unwrap();
    let mut analytic = g.xi.flatten();
    analytic.extend(g.eta.flatten());
    let mut numeric = central_difference(&xi, &|p| {
        mm_loss(&Modalities { x: &x, y: &y, xi: p, eta: &eta }, &batch, &cfg).unwrap()
    });
    numeric.extend(central_difference(&eta, &|p| {
        mm_loss(&Modalities { x: &x, y: &y, xi: &xi, eta: p }, &batch, &cfg).unwrap()
    }));
    Some(relative_error(&analytic, &numeric))
}

/// Runs `instance` on successive seeds until `count` kink-free draws have
/// been evaluated; returns their relative errors.
pub fn collect_instances(count: usize, base_seed: u64, instance: fn(u64) -> Option<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let mut seed = base_seed;
    while out.len() < count {
        if let Some(e) = instance(seed) {
            out.push(e);
        }
        seed += 1;
        assert!(seed - base_seed < 100 * count as u64, "too few kink-free instances");
    }
    out
}

// ---------------------------------------------------------------------------
// Codes and retrieval

pub fn random_code(rng: &mut ChaCha8Rng, m: usize, zero_bias: f64) -> TernaryCode {
    let symbols = (0..m)
        .map(|_| {
            if rng.random_bool(zero_bias) {
                0
            } else if rng.random_bool(0.5) {
                1
            } else {
                -1
            }
        })
        .collect();
    TernaryCode::new(symbols).unwrap()
}

/// Codes near a few prototypes, so small radii return non-trivial sets.
pub fn clustered_codes(rng: &mut ChaCha8Rng, count: usize, m: usize, prototypes: usize) -> Vec<TernaryCode> {
    let protos: Vec<TernaryCode> = (0..prototypes).map(|_| random_code(rng, m, 0.5)).collect();
    (0..count)
        .map(|_| {
            let mut symbols = protos[rng.random_range(0..prototypes)].symbols().to_vec();
            for _ in 0..rng.random_range(0..=3) {
                let i = rng.random_range(0..m);
                symbols[i] = rng.random_range(-1i8..=1);
            }
            TernaryCode::new(symbols).unwrap()
        })
        .collect()
}

/// Symbol-wise mismatch count.
pub fn naive_distance(a: &TernaryCode, b: &TernaryCode) -> u32 {
    a.symbols().iter().zip(b.symbols()).filter(|(x, y)| x != y).count() as u32
}

pub fn naive_radius_query(db: &[TernaryCode], q: &TernaryCode, r: u32) -> Vec<u32> {
    (0..db.len() as u32).filter(|&i| naive_distance(&db[i as usize], q) <= r).collect()
}

/// Binary codes use only the signs; zeros never occur.
pub fn naive_binary_distance(a: &TernaryCode, b: &TernaryCode) -> u32 {
    let bit = |v: i8| v > 0;
    a.symbols().iter().zip(b.symbols()).filter(|(x, y)| bit(**x) != bit(**y)).count() as u32
}

/// Number of codes within distance `r` of a fixed code, by enumeration of
/// the choice of positions: each changed position takes one of
/// `alternatives` other symbols.
pub fn probe_count_oracle(m: usize, r: u32, alternatives: u64) -> u128 {
    let mut total = 0u128;
    for j in 0..=r.min(m as u32) {
        // Pascal's triangle row m, entry j.
        let mut row = vec![1u128];
        for _ in 0..m {
            let mut next = vec![1u128; row.len() + 1];
            for k in 1..row.len() {
                next[k] = row[k - 1] + row[k];
            }
            row = next;
        }
        total += row[j as usize] * (alternatives as u128).pow(j);
    }
    total
}

// ---------------------------------------------------------------------------
// Metrics with exact rational arithmetic

/// Arbitrary precision, since sums of `k/n` over long rankings overflow
/// fixed-width denominators.
pub type Q = BigRational;

fn frac(numer: i64, denom: i64) -> Q {
    Q::new(numer.into(), denom.into())
}

fn zero() -> Q {
    frac(0, 1)
}

pub fn to_f64(v: Q) -> f64 {
    v.to_f64().expect("finite ratio")
}

/// Micro precision and recall from integer counts.
pub fn micro_pr(results: &[Vec<u32>], relevant: &dyn Fn(usize, usize) -> bool, db_len: usize) -> (Q, Q) {
    let (mut retrieved, mut hits, mut total_rel) = (0i64, 0i64, 0i64);
    for (q, ids) in results.iter().enumerate() {
        retrieved += ids.len() as i64;
        hits += ids.iter().filter(|&&d| relevant(q, d as usize)).count() as i64;
        total_rel += (0..db_len).filter(|&d| relevant(q, d)).count() as i64;
    }
    let ratio = |a: i64, b: i64| if b == 0 { zero() } else { frac(a, b) };
    (ratio(hits, retrieved), ratio(hits, total_rel))
}

/// Macro precision and recall: per-query ratios averaged; recall skips
/// queries with nothing relevant.
pub fn macro_pr(results: &[Vec<u32>], relevant: &dyn Fn(usize, usize) -> bool, db_len: usize) -> (Q, Q) {
    let (mut p, mut r, mut rq) = (zero(), zero(), 0i64);
    for (q, ids) in results.iter().enumerate() {
        let hits = ids.iter().filter(|&&d| relevant(q, d as usize)).count() as i64;
        if !ids.is_empty() {
            p += frac(hits, ids.len() as i64);
        }
        let rel = (0..db_len).filter(|&d| relevant(q, d)).count() as i64;
        if rel > 0 {
            r += frac(hits, rel);
            rq += 1;
        }
    }
    let p = if results.is_empty() { p } else { p / frac(results.len() as i64, 1) };
    let r = if rq == 0 { r } else { r / frac(rq, 1) };
    (p, r)
}

/// mAP@R with `sum_{n<=R} P(n) rel(n) / min(R, #relevant)`, over queries
/// that have at least one relevant item.
pub fn map_oracle(rankings: &[Vec<u32>], relevant: &dyn Fn(usize, usize) -> bool, db_len: usize, r: usize) -> Q {
    let (mut total, mut used) = (zero(), 0i64);
    for (q, ranking) in rankings.iter().enumerate() {
        let rel = (0..db_len).filter(|&d| relevant(q, d)).count();
        if rel == 0 {
            continue;
        }
        let mut sum = zero();
        for n in 1..=r {
            let Some(&d) = ranking.get(n - 1) else { break };
            if relevant(q, d as usize) {
                let hits_so_far = ranking[..n].iter().filter(|&&e| relevant(q, e as usize)).count();
                sum += frac(hits_so_far as i64, n as i64);
            }
        }
        total += sum / frac(r.min(rel) as i64, 1);
        used += 1;
    }
    if used == 0 {
        total
    } else {
        total / frac(used, 1)
    }
}

/// 50 queries against 500 labelled items.
pub struct Fixture {
    pub db: Vec<TernaryCode>,
    pub queries: Vec<TernaryCode>,
    pub query_labels: Vec<u32>,
    pub db_labels: Vec<u32>,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng(seed);
        let db = clustered_codes(&mut rng, 500, 16, 6);
        let queries = clustered_codes(&mut rng, 50, 16, 6);
        let db_labels = (0..500).map(|_| rng.random_range(0..5)).collect();
        // One query has a label no item carries.
        let query_labels = (0..50).map(|q| if q == 7 { 99 } else { rng.random_range(0..5) }).collect();
        Self { db, queries, query_labels, db_labels }
    }

    pub fn gt(&self) -> GroundTruth {
        GroundTruth::from_labels(Labels::single(&self.query_labels), Labels::single(&self.db_labels))
    }

    pub fn relevant(&self) -> impl Fn(usize, usize) -> bool + '_ {
        move |q, d| self.query_labels[q] == self.db_labels[d]
    }

    pub fn index(&self) -> CodeIndex {
        CodeIndex::build(&self.db, Alphabet::Ternary).unwrap()
    }

    pub fn rankings(&self) -> Vec<Vec<u32>> {
        self.queries.iter().map(|q| naive_ranking(&self.db, q)).collect()
    }
}

pub fn mp_oracle(rankings: &[Vec<u32>], relevant: &dyn Fn(usize, usize) -> bool, k: usize) -> Q {
    let mut total = zero();
    for (q, ranking) in rankings.iter().enumerate() {
        let hits = ranking.iter().take(k).filter(|&&d| relevant(q, d as usize)).count();
        total += frac(hits as i64, k as i64);
    }
    total / frac(rankings.len() as i64, 1)
}

/// Full ranking by (distance, id) computed with the naive distance.
pub fn naive_ranking(db: &[TernaryCode], q: &TernaryCode) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..db.len() as u32).collect();
    ids.sort_by_key(|&i| (naive_distance(&db[i as usize], q), i));
    ids
}

// ---------------------------------------------------------------------------
// Spectral instances

/// Pairs whose differences are scaled basis vectors, so both scatter
/// matrices are diagonal in `basis` with eigenvalues set by the scales.
pub fn spectral_instance(seed: u64, n: usize) -> (FeatureMatrix, Vec<PairSample>, DMatrix<f64>, Vec<f64>) {
    let mut rng = rng(seed);
    let basis = random_orthonormal(&mut rng, n);
    let anchor: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut rows = vec![anchor.clone()];
    let mut pairs = Vec::new();
    let mut spectrum = Vec::new();
    for k in 0..n {
        let pos = 0.5 + k as f64 * 0.37;
        let neg = 1.0 + ((k * 7) % n) as f64 * 0.29;
        spectrum.push((pos * pos - neg * neg) / n as f64);
        for (scale, s) in [(pos, Similarity::Similar), (neg, Similarity::Dissimilar)] {
            let row: Vec<f64> = anchor.iter().zip(basis.column(k).iter()).map(|(a, q)| a + scale * q).collect();
            rows.push(row);
            pairs.push(PairSample::new(0, rows.len() - 1, s).unwrap());
        }
    }
    (FeatureMatrix::from_rows(&rows).unwrap(), pairs, basis, spectrum)
}


/// A random orthonormal `n x n` basis from Gram-Schmidt on Gaussian columns.
pub fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        for k in 0..j {
            let c = q.column(k).dot(&v);
            v -= q.column(k) * c;
        }
        let norm = v.norm();
        q.set_column(j, &(v / norm));
    }
    q
}

/// Largest principal angle between the row spaces of `a` and `b`, both with
/// orthonormal rows, from the sine of the residual of projecting `a` onto `b`.
pub fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let at = a.transpose();
    let residual = &at - b.transpose() * (b * &at);
    let sine = residual.singular_values().iter().copied().fold(0.0, f64::max);
    sine.min(1.0).asin()
}
