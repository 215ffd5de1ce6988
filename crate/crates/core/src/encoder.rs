//! ISTA-type feed-forward encoder.
//!
//! The network computes `b = W x`, `z0 = shrink(b, tau)`, then `T` recurrent
//! steps `z_t = shrink(b + S z_{t-1}, tau)`, and emits `y = tanh(beta * z_T)`.
//! With `W^T` read as a dictionary and `S = I - W W^T / L`, a step is one ISTA
//! iteration with unit-scaled input.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::{quantize, TernaryCode};
use crate::data::FeatureMatrix;
use crate::error::{check_len, Error, Result};

pub const DEFAULT_BETA: f64 = 3.0;
pub const DEFAULT_ITERATIONS: usize = 1;

const POWER_ITERATION_TOL: f64 = 1e-6;
const POWER_ITERATION_MAX: usize = 100_000;

/// Soft threshold `max(0, |x| - tau) * sign(x)`, elementwise.
pub fn shrink(x: &[f64], tau: &[f64]) -> Result<Vec<f64>> {
    check_len(x.len(), tau.len())?;
    if let Some(t) = tau.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "shrinkage threshold must be nonnegative, got {t}"
        )));
    }
    Ok(x.iter().zip(tau).map(|(&v, &t)| soft(v, t)).collect())
}

#[inline]
fn soft(v: f64, t: f64) -> f64 {
    let mag = v.abs() - t;
    if mag > 0.0 {
        mag.copysign(v)
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Parameters of one encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `m x n` projection.
    pub w: DMatrix<f64>,
    /// `m x m` mutual inhibition.
    pub s: DMatrix<f64>,
    /// Per-unit shrinkage thresholds.
    pub tau: DVector<f64>,
    /// Steepness of the output `tanh`.
    pub beta: f64,
    /// Number of recurrent shrinkage steps after the first.
    pub iterations: usize,
}

impl EncoderParams {
    pub fn new(
        w: DMatrix<f64>,
        s: DMatrix<f64>,
        tau: DVector<f64>,
        beta: f64,
        iterations: usize,
    ) -> Result<Self> {
        let p = Self {
            w,
            s,
            tau,
            beta,
            iterations,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.code_len();
        if m == 0 || self.input_dim() == 0 {
            return Err(Error::EmptyInput("encoder dimensions"));
        }
        check_len(m, self.s.nrows())?;
        check_len(m, self.s.ncols())?;
        check_len(m, self.tau.len())?;
        let finite = self
            .w
            .iter()
            .chain(self.s.iter())
            .chain(self.tau.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("encoder parameters must be finite".into()));
        }
        if self.tau.iter().any(|&t| t < 0.0) {
            return Err(Error::InvalidArgument("thresholds must be nonnegative".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    pub fn code_len(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    /// Runs the network and keeps every intermediate for backprop.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        check_len(self.input_dim(), x.len())?;
        let b = &self.w * DVectorView::from_slice(x, x.len());
        let mut z = Vec::with_capacity(self.iterations + 1);
        z.push(b.map_with_location(|i, _, v| soft(v, self.tau[i])));
        let mut u = Vec::with_capacity(self.iterations);
        for t in 0..self.iterations {
            let mut ut = b.clone();
            ut.gemv(1.0, &self.s, &z[t], 1.0);
            z.push(ut.map_with_location(|i, _, v| soft(v, self.tau[i])));
            u.push(ut);
        }
        let beta = self.beta;
        let y = z[self.iterations].map(|v| (beta * v).tanh());
        Ok(ForwardTrace {
            input: x.to_vec(),
            b,
            u,
            z,
            y,
        })
    }

    /// Output `y` only.
    pub fn apply(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.forward(x)?.y)
    }

    pub fn encode(&self, x: &[f64], threshold: f64) -> Result<TernaryCode> {
        quantize(self.apply(x)?.as_slice(), threshold)
    }

    pub fn encode_all(&self, data: &FeatureMatrix, threshold: f64) -> Result<Vec<TernaryCode>> {
        data.iter_rows().map(|x| self.encode(x, threshold)).collect()
    }

    /// Backpropagates `grad_y = dL/dy` through `trace`, adding into `grads`.
    ///
    /// Subgradients are zero at kinks: inside the dead zone and at
    /// `|u| = tau` the shrinkage derivative is taken as zero.
    pub fn accumulate_backward(
        &self,
        trace: &ForwardTrace,
        grad_y: &DVector<f64>,
        grads: &mut Gradients,
    ) -> Result<()> {
        let m = self.code_len();
        if trace.y.len() != m
            || trace.input.len() != self.input_dim()
            || trace.z.len() != self.iterations + 1
            || trace.u.len() != self.iterations
            || grad_y.len() != m
        {
            return Err(Error::InvalidArgument(
                "forward trace does not match encoder parameters".into(),
            ));
        }
        grads.check_shape(self)?;

        let beta = self.beta;
        let mut gz = grad_y.zip_map(&trace.y, |g, y| g * beta * (1.0 - y * y));
        let mut gb = DVector::zeros(m);
        for t in (0..self.iterations).rev() {
            let ut = &trace.u[t];
            let gu = self.gate(ut, &gz, &mut grads.tau);
            grads.s.ger(1.0, &gu, &trace.z[t], 1.0);
            gb += &gu;
            gz = self.s.tr_mul(&gu);
        }
        let gu0 = self.gate(&trace.b, &gz, &mut grads.tau);
        gb += &gu0;
        grads
            .w
            .ger(1.0, &gb, &DVectorView::from_slice(&trace.input, trace.input.len()), 1.0);
        Ok(())
    }

    /// Gradient through one shrinkage block: passes `gz` where `|u| > tau`,
    /// and accumulates the threshold gradient `-sign(u) * gu`.
    fn gate(&self, u: &DVector<f64>, gz: &DVector<f64>, gtau: &mut DVector<f64>) -> DVector<f64> {
        let mut gu = DVector::zeros(u.len());
        for i in 0..u.len() {
            if u[i].abs() > self.tau[i] {
                gu[i] = gz[i];
                gtau[i] -= sign(u[i]) * gz[i];
            }
        }
        gu
    }
}

/// Intermediates of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// `W x`.
    pub b: DVector<f64>,
    /// Pre-shrinkage activations of the recurrent steps, `u_1 .. u_T`.
    pub u: Vec<DVector<f64>>,
    /// Post-shrinkage states `z_0 .. z_T`.
    pub z: Vec<DVector<f64>>,
    pub y: DVector<f64>,
}

impl ForwardTrace {
    /// Final shrinkage output `z_T`.
    pub fn sparse_state(&self) -> &DVector<f64> {
        self.z.last().expect("trace has at least z0")
    }

    /// Smallest distance of any pre-shrinkage activation to a kink `|u| = tau`.
    pub fn kink_margin(&self, tau: &DVector<f64>) -> f64 {
        std::iter::once(&self.b)
            .chain(&self.u)
            .flat_map(|v| v.iter().zip(tau.iter()).map(|(u, t)| (u.abs() - t).abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Gradient with respect to `(W, S, tau)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub tau: DVector<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &EncoderParams) -> Self {
        let (m, n) = p.w.shape();
        Self {
            w: DMatrix::zeros(m, n),
            s: DMatrix::zeros(m, m),
            tau: DVector::zeros(m),
        }
    }

    fn check_shape(&self, p: &EncoderParams) -> Result<()> {
        if self.w.shape() != p.w.shape() || self.s.shape() != p.s.shape() || self.tau.len() != p.tau.len()
        {
            return Err(Error::InvalidArgument(
                "gradient buffer shape does not match encoder".into(),
            ));
        }
        Ok(())
    }

    pub fn fill_zero(&mut self) {
        self.w.fill(0.0);
        self.s.fill(0.0);
        self.tau.fill(0.0);
    }

    pub fn add_scaled(&mut self, other: &Gradients, k: f64) {
        self.w.zip_apply(&other.w, |a, b| *a += k * b);
        self.s.zip_apply(&other.s, |a, b| *a += k * b);
        self.tau.zip_apply(&other.tau, |a, b| *a += k * b);
    }

    pub fn norm(&self) -> f64 {
        (self.w.norm_squared() + self.s.norm_squared() + self.tau.norm_squared()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.s.iter()).chain(self.tau.iter()).all(|v| v.is_finite())
    }

    /// Flattened `[W row-major, S row-major, tau]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w.len() + self.s.len() + self.tau.len());
        for r in 0..self.w.nrows() {
            out.extend(self.w.row(r).iter());
        }
        for r in 0..self.s.nrows() {
            out.extend(self.s.row(r).iter());
        }
        out.extend(self.tau.iter());
        out
    }
}

/// Initial parameters: `W` rows are a seeded random subset of the training
/// vectors scaled to unit length, `S = I - W W^T / L` with `L` the largest
/// eigenvalue of `W W^T`, and zero thresholds. Zero-norm vectors are skipped.
pub fn init_params(
    training: &FeatureMatrix,
    m: usize,
    iterations: usize,
    beta: f64,
    seed: u64,
) -> Result<EncoderParams> {
    if m == 0 {
        return Err(Error::InvalidArgument("code length must be positive".into()));
    }
    let n = training.cols();
    let mut order: Vec<usize> = (0..training.rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut w = DMatrix::zeros(m, n);
    let mut filled = 0;
    for &i in &order {
        if filled == m {
            break;
        }
        let row = training.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            continue;
        }
        for (j, v) in row.iter().enumerate() {
            w[(filled, j)] = v / norm;
        }
        filled += 1;
    }
    if filled < m {
        return Err(Error::InsufficientData {
            needed: m,
            have: filled,
        });
    }

    let gram = &w * w.transpose();
    let lipschitz = largest_eigenvalue(&gram, seed)?;
    let s = DMatrix::identity(m, m) - gram / lipschitz;
    EncoderParams::new(w, s, DVector::zeros(m), beta, iterations)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration; stops when the residual `|A v - lambda v|` falls below
/// `1e-6 * lambda`.
pub fn largest_eigenvalue(a: &DMatrix<f64>, seed: u64) -> Result<f64> {
    let m = a.nrows();
    check_len(m, a.ncols())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a57);
    let mut v = DVector::from_fn(m, |_, _| 0.5 + rand::Rng::random::<f64>(&mut rng));
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATION_MAX {
        let av = a * &v;
        lambda = v.dot(&av);
        let residual = (&av - &v * lambda).norm();
        let norm = av.norm();
        if norm == 0.0 {
            return Err(Error::InvalidArgument("matrix annihilates the start vector".into()));
        }
        if residual <= POWER_ITERATION_TOL * lambda.abs() {
            return Ok(lambda);
        }
        v = av / norm;
    }
    log::warn!("power iteration hit the iteration cap; eigenvalue estimate {lambda}");
    Ok(lambda)
}
