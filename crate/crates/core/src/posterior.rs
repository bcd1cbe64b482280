//! Spike-and-slab posterior: weights, Gibbs sampler, exact enumeration and
//! the coefficient-wise quasi-white-noise comparator.

use std::io::Write;

use gauss_quad::hermite::GaussHermite;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::RegressionDataset;
use crate::function_space::{AnisoSmoothness, CoefficientField};
use crate::gram::DesignMatrices;
use crate::wavelet::{Basis, TensorIndex};

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error("invalid prior: {0}")]
    Prior(String),
    #[error("n = {n} too small for levels at or above the base level")]
    TooSmall { n: usize },
    #[error("chain diverged at sweep {0}: non-finite residual")]
    Divergence(u64),
    #[error("exact enumeration supports at most 20 mother coefficients (got {0})")]
    TooManyCoefficients(usize),
    #[error("exact enumeration needs a Gaussian slab")]
    NonGaussianSlab,
    #[error("empty draw collection")]
    EmptyDraws,
    #[error("zero Gram diagonal at column {0}")]
    ZeroDiagonal(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Slab {
    /// Normal(0, tau^2); tau defaults to R0.
    Gaussian { tau: Option<f64> },
    Uniform,
    /// Laplace(0, scale) restricted to [-R0, R0].
    Laplace { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaPrior {
    /// Inverse-gamma on sigma^2.
    InverseGamma { shape: f64, rate: f64 },
    Fixed { sigma: f64 },
}

fn default_slab() -> Slab {
    Slab::Gaussian { tau: None }
}
fn default_r0() -> f64 {
    2.0
}
fn default_lambda() -> f64 {
    10.0
}
fn default_mu() -> Vec<f64> {
    vec![1.0]
}
fn default_sigma_prior() -> SigmaPrior {
    SigmaPrior::InverseGamma { shape: 1.0, rate: 1.0 }
}
fn default_m() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "default_slab")]
    pub slab: Slab,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_lambda")]
    pub weight_lambda: f64,
    /// One entry per axis; a single entry is broadcast.
    #[serde(default = "default_mu")]
    pub weight_mu: Vec<f64>,
    #[serde(default = "default_sigma_prior")]
    pub sigma_prior: SigmaPrior,
    #[serde(default = "default_m")]
    pub truncation_exponent: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            slab: default_slab(),
            r0: default_r0(),
            weight_lambda: default_lambda(),
            weight_mu: default_mu(),
            sigma_prior: default_sigma_prior(),
            truncation_exponent: default_m(),
        }
    }
}

impl PriorConfig {
    pub fn with_fixed_sigma(mut self, sigma: f64) -> Self {
        self.sigma_prior = SigmaPrior::Fixed { sigma };
        self
    }

    pub fn validate(&self, d: usize) -> Result<(), PosteriorError> {
        let bad = |m: String| Err(PosteriorError::Prior(m));
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return bad(format!("R0 must be positive, got {}", self.r0));
        }
        if !(self.weight_lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.weight_lambda));
        }
        if self.weight_mu.len() != 1 && self.weight_mu.len() != d {
            return bad(format!("weight_mu needs 1 or {d} entries"));
        }
        if self.weight_mu.iter().any(|m| !(*m > 0.5)) {
            return bad("every mu_l must exceed 1/2".into());
        }
        if !(self.truncation_exponent > 0.0 && self.truncation_exponent <= 1.0) {
            return bad(format!("truncation exponent must lie in (0,1], got {}", self.truncation_exponent));
        }
        match self.slab {
            Slab::Gaussian { tau: Some(t) } if !(t > 0.0) => return bad("tau must be positive".into()),
            Slab::Laplace { scale } if !(scale > 0.0) => return bad("laplace scale must be positive".into()),
            _ => {}
        }
        match self.sigma_prior {
            SigmaPrior::InverseGamma { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                bad("inverse-gamma shape and rate must be positive".into())
            }
            SigmaPrior::Fixed { sigma } if !(sigma > 0.0) => bad("fixed sigma must be positive".into()),
            _ => Ok(()),
        }
    }

    pub fn mu(&self, l: usize) -> f64 {
        if self.weight_mu.len() == 1 {
            self.weight_mu[0]
        } else {
            self.weight_mu[l]
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match self.slab {
            Slab::Gaussian { tau } => Some(tau.unwrap_or(self.r0)),
            _ => None,
        }
    }

    /// Slab density (Gaussian on the line, others restricted to [-R0, R0]).
    pub fn slab_density(&self, x: f64) -> f64 {
        match self.slab {
            Slab::Gaussian { .. } => {
                let t = self.tau().unwrap();
                (-0.5 * (x / t).powi(2)).exp() / (t * (2.0 * std::f64::consts::PI).sqrt())
            }
            Slab::Uniform => {
                if x.abs() <= self.r0 {
                    0.5 / self.r0
                } else {
                    0.0
                }
            }
            Slab::Laplace { scale } => {
                if x.abs() <= self.r0 {
                    (-x.abs() / scale).exp() / (2.0 * scale * (1.0 - (-self.r0 / scale).exp()))
                } else {
                    0.0
                }
            }
        }
    }

    /// (p_min, p_max) of the slab over [-R0, R0].
    pub fn density_bounds(&self) -> (f64, f64) {
        (self.slab_density(self.r0), self.slab_density(0.0))
    }
}

/// Largest dyadic prod 2^{J_l} <= (n / ln n)^m, split evenly with leftovers to the first axes.
pub fn default_truncation(n: usize, d: usize, m: f64, base: &[u32]) -> Result<Vec<u32>, PosteriorError> {
    if n < 8 {
        return Err(PosteriorError::TooSmall { n });
    }
    let nf = n as f64;
    let target = m * (nf / nf.ln()).log2();
    let mut total = target.floor() as i64;
    // guard against log2 landing a hair below an exact integer
    if (target - (total + 1) as f64).abs() < 1e-12 {
        total += 1;
    }
    let total = total.max(0) as u32;
    let d32 = d as u32;
    let j: Vec<u32> = (0..d32).map(|l| total / d32 + u32::from(l < total % d32)).collect();
    if j.iter().zip(base).any(|(j, n)| j < n) {
        return Err(PosteriorError::TooSmall { n });
    }
    Ok(j)
}

/// omega = clamp(2^{-sum j_l (1 + mu_l)}, n^{-lambda}, 1/2).
pub fn weight(j: &[u32], n: usize, prior: &PriorConfig) -> f64 {
    let e: f64 = j.iter().enumerate().map(|(l, j)| *j as f64 * (1.0 + prior.mu(l))).sum();
    let raw = 2f64.powf(-e);
    let floor = (n as f64).powf(-prior.weight_lambda);
    raw.max(floor).min(0.5)
}

/// Per-column weights; father columns get NaN (never used).
pub fn column_weights(m: &DesignMatrices, n: usize, prior: &PriorConfig) -> Vec<f64> {
    let mut w = vec![f64::NAN; m.q()];
    for b in m.blocks.iter().skip(1) {
        let om = weight(&b.j, n, prior);
        w[b.start..b.start + b.len].iter_mut().for_each(|v| *v = om);
    }
    w
}

const GRID: usize = 512;
const LOG_ODDS_CLAMP: f64 = 700.0;

/// One-coordinate conditional kernel of the slab.
struct Kernel {
    prior: PriorConfig,
    gh: Option<GaussHermite>,
}

impl Kernel {
    fn new(prior: &PriorConfig) -> Self {
        let gh = match prior.slab {
            Slab::Gaussian { .. } => None,
            _ => Some(GaussHermite::new(64.try_into().unwrap())),
        };
        Kernel { prior: prior.clone(), gh }
    }

    /// log of int exp(-(s x^2 - 2 b x) / (2 sigma2)) p(x) dx.
    fn log_bf(&self, s: f64, b: f64, sigma2: f64) -> f64 {
        if let Some(tau) = self.prior.tau() {
            let v = 1.0 / (s / sigma2 + 1.0 / (tau * tau));
            let mean = v * b / sigma2;
            return 0.5 * v.ln() - tau.ln() + mean * mean / (2.0 * v);
        }
        if s <= 0.0 {
            return self.grid_log_integral(s, b, sigma2);
        }
        let mu = b / s;
        let sc = (2.0 * sigma2 / s).sqrt();
        let sum = self.gh.as_ref().unwrap().integrate(|t| self.prior.slab_density(mu + sc * t));
        if sum > 0.0 && sum.is_finite() {
            b * b / (2.0 * s * sigma2) + sc.ln() + sum.ln()
        } else {
            self.grid_log_integral(s, b, sigma2)
        }
    }

    fn grid_log(&self, s: f64, b: f64, sigma2: f64) -> (Vec<f64>, Vec<f64>, f64) {
        let r0 = self.prior.r0;
        let h = 2.0 * r0 / GRID as f64;
        let xs: Vec<f64> = (0..GRID).map(|i| -r0 + (i as f64 + 0.5) * h).collect();
        let ls: Vec<f64> = xs
            .iter()
            .map(|&x| -(s * x * x - 2.0 * b * x) / (2.0 * sigma2) + self.prior.slab_density(x).ln())
            .collect();
        (xs, ls, h)
    }

    fn grid_log_integral(&self, s: f64, b: f64, sigma2: f64) -> f64 {
        let (_, ls, h) = self.grid_log(s, b, sigma2);
        let mx = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        mx + (ls.iter().map(|l| (l - mx).exp()).sum::<f64>() * h).ln()
    }

    /// Draw from the slab-only conditional.
    fn draw<G: Rng + ?Sized>(&self, s: f64, b: f64, sigma2: f64, rng: &mut G) -> f64 {
        if let Some(tau) = self.prior.tau() {
            let v = 1.0 / (s / sigma2 + 1.0 / (tau * tau));
            let z: f64 = rng.sample(StandardNormal);
            return v * b / sigma2 + v.sqrt() * z;
        }
        let (xs, ls, h) = self.grid_log(s, b, sigma2);
        let mx = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = ls.iter().map(|l| (l - mx).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (x, wi) in xs.iter().zip(&w) {
            if u < *wi {
                return x + (rng.gen::<f64>() - 0.5) * h;
            }
            u -= wi;
        }
        xs[GRID - 1]
    }

    /// Slab-only posterior mean and variance.
    fn moments(&self, s: f64, b: f64, sigma2: f64) -> (f64, f64) {
        if let Some(tau) = self.prior.tau() {
            let v = 1.0 / (s / sigma2 + 1.0 / (tau * tau));
            return (v * b / sigma2, v);
        }
        let (xs, ls, _) = self.grid_log(s, b, sigma2);
        let mx = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = ls.iter().map(|l| (l - mx).exp()).collect();
        let t: f64 = w.iter().sum();
        let m1: f64 = xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / t;
        let m2: f64 = xs.iter().zip(&w).map(|(x, w)| x * x * w).sum::<f64>() / t;
        (m1, m2 - m1 * m1)
    }
}

/// Posterior inclusion probability from prior weight and log Bayes factor (log-space, clamped).
pub fn inclusion_probability(omega: f64, log_bf: f64) -> f64 {
    if omega <= 0.0 {
        return 0.0;
    }
    let lo = (omega.ln() - (-omega).ln_1p() + log_bf).clamp(-LOG_ODDS_CLAMP, LOG_ODDS_CLAMP);
    1.0 / (1.0 + (-lo).exp())
}

/// Closed-form single-coefficient quantities for a Gaussian slab.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianConditional {
    pub v: f64,
    pub mean: f64,
    pub log_bf: f64,
    pub inclusion: f64,
}

pub fn gaussian_conditional(s: f64, b: f64, sigma2: f64, tau: f64, omega: f64) -> GaussianConditional {
    let v = 1.0 / (s / sigma2 + 1.0 / (tau * tau));
    let mean = v * b / sigma2;
    let log_bf = 0.5 * v.ln() - tau.ln() + mean * mean / (2.0 * v);
    GaussianConditional { v, mean, log_bf, inclusion: inclusion_probability(omega, log_bf) }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsConfig {
    /// Sweeps after burn-in; every `thin`-th is kept.
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_burnin")]
    pub burnin: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
}

fn default_iters() -> usize {
    2000
}
fn default_burnin() -> usize {
    500
}
fn default_thin() -> usize {
    1
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig { iters: default_iters(), burnin: default_burnin(), thin: default_thin() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub coeffs: Vec<f64>,
    pub inclusion: Vec<bool>,
    pub sigma2: f64,
    pub residual: Vec<f64>,
    pub iteration: u64,
}

/// Everything a sweep needs besides the state.
pub struct Sampler<'a> {
    pub m: &'a DesignMatrices,
    pub y: &'a [f64],
    pub weights: Vec<f64>,
    pub diag: Vec<f64>,
    pub prior: PriorConfig,
    kernel: Kernel,
}

pub const REFRESH_EVERY: u64 = 100;

impl<'a> Sampler<'a> {
    pub fn new(m: &'a DesignMatrices, y: &'a [f64], prior: &PriorConfig) -> Result<Self, PosteriorError> {
        if y.len() != m.n() {
            return Err(PosteriorError::Dimension(format!("y has {} entries, matrices {} rows", y.len(), m.n())));
        }
        prior.validate(m.base.len())?;
        Ok(Sampler {
            m,
            y,
            weights: column_weights(m, y.len(), prior),
            diag: m.diag(),
            prior: prior.clone(),
            kernel: Kernel::new(prior),
        })
    }

    pub fn initial_state(&self) -> ChainState {
        let n = self.y.len().max(1) as f64;
        let mean = self.y.iter().sum::<f64>() / n;
        let var = self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sigma2 = match self.prior.sigma_prior {
            SigmaPrior::Fixed { sigma } => sigma * sigma,
            SigmaPrior::InverseGamma { .. } => var.max(1e-8),
        };
        let q = self.m.q();
        let mut inclusion = vec![false; q];
        inclusion[..self.m.father_len()].iter_mut().for_each(|v| *v = true);
        ChainState { coeffs: vec![0.0; q], inclusion, sigma2, residual: self.y.to_vec(), iteration: 0 }
    }

    pub fn refresh(&self, state: &mut ChainState) {
        let fit = self.m.apply(&state.coeffs);
        for ((r, y), f) in state.residual.iter_mut().zip(self.y).zip(&fit) {
            *r = y - f;
        }
    }

    /// One systematic sweep over all columns followed by the variance update.
    pub fn sweep<G: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut G) -> Result<(), PosteriorError> {
        let fathers = self.m.father_len();
        let sigma2 = state.sigma2;
        for c in 0..self.m.q() {
            let col = &self.m.columns[c];
            let s = self.diag[c];
            let old = state.coeffs[c];
            let b = col.dot(&state.residual) + s * old;
            let new = if c < fathers {
                self.kernel.draw(s, b, sigma2, rng)
            } else {
                let omega = self.weights[c];
                let p = inclusion_probability(omega, self.kernel.log_bf(s, b, sigma2));
                let inc = rng.gen::<f64>() < p;
                state.inclusion[c] = inc;
                if inc {
                    self.kernel.draw(s, b, sigma2, rng)
                } else {
                    0.0
                }
            };
            if new != old {
                col.axpy(old - new, &mut state.residual);
                state.coeffs[c] = new;
            }
        }
        state.iteration += 1;
        if state.iteration % REFRESH_EVERY == 0 {
            self.refresh(state);
        }
        let rss: f64 = state.residual.iter().map(|r| r * r).sum();
        if !rss.is_finite() {
            return Err(PosteriorError::Divergence(state.iteration));
        }
        if let SigmaPrior::InverseGamma { shape, rate } = self.prior.sigma_prior {
            let g = Gamma::new(shape + 0.5 * self.y.len() as f64, 1.0).expect("positive shape");
            let draw: f64 = rng.sample(g);
            state.sigma2 = (rate + 0.5 * rss) / draw;
        }
        Ok(())
    }
}

/// Convenience wrapper over [`Sampler::sweep`].
pub fn gibbs_sweep<G: Rng + ?Sized>(state: &mut ChainState, sampler: &Sampler<'_>, rng: &mut G) -> Result<(), PosteriorError> {
    sampler.sweep(state, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iteration: u64,
    pub sigma2: f64,
    /// (column, value) for nonzero coefficients.
    pub coeffs: Vec<(u32, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Draws {
    pub base: Vec<u32>,
    pub trunc: Vec<u32>,
    pub indices: Vec<TensorIndex>,
    pub father_len: usize,
    pub draws: Vec<Draw>,
    /// Fraction of kept draws with a nonzero coefficient, per column.
    pub inclusion: Vec<f64>,
}

impl Draws {
    pub fn q(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dense(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.q()];
        for (c, x) in &self.draws[i].coeffs {
            v[*c as usize] = *x;
        }
        v
    }

    pub fn mean_coeffs(&self) -> Result<Vec<f64>, PosteriorError> {
        if self.draws.is_empty() {
            return Err(PosteriorError::EmptyDraws);
        }
        let mut acc = vec![0.0; self.q()];
        for d in &self.draws {
            for (c, x) in &d.coeffs {
                acc[*c as usize] += x;
            }
        }
        let k = self.draws.len() as f64;
        Ok(acc.into_iter().map(|v| v / k).collect())
    }

    pub fn sigma_median(&self) -> Result<f64, PosteriorError> {
        if self.draws.is_empty() {
            return Err(PosteriorError::EmptyDraws);
        }
        let mut s: Vec<f64> = self.draws.iter().map(|d| d.sigma2.sqrt()).collect();
        s.sort_by(f64::total_cmp);
        let k = s.len();
        Ok(if k % 2 == 1 { s[k / 2] } else { 0.5 * (s[k / 2 - 1] + s[k / 2]) })
    }

    /// One JSON object per kept draw with nonzero (j, k, value) triples.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), PosteriorError> {
        for d in &self.draws {
            let nz: Vec<serde_json::Value> = d
                .coeffs
                .iter()
                .map(|(c, v)| {
                    let ix = &self.indices[*c as usize];
                    serde_json::json!({ "j": ix.j, "k": ix.k, "value": v })
                })
                .collect();
            let rec = serde_json::json!({ "iteration": d.iteration, "sigma2": d.sigma2, "nonzero": nz });
            writeln!(w, "{rec}")?;
        }
        Ok(())
    }

    /// CSV (j, k, frequency) over mother columns; multi-axis indices joined by ':'.
    pub fn write_inclusion_csv<W: Write>(&self, mut w: W) -> Result<(), PosteriorError> {
        writeln!(w, "j,k,frequency")?;
        for c in self.father_len..self.q() {
            let ix = &self.indices[c];
            writeln!(w, "{},{},{}", join(&ix.j), join(&ix.k), self.inclusion[c])?;
        }
        Ok(())
    }
}

fn join(v: &[u32]) -> String {
    v.iter().map(u32::to_string).collect::<Vec<_>>().join(":")
}

/// Burn-in, then `iters` sweeps keeping every `thin`-th; deterministic given `seed`.
pub fn run_chain(
    dataset: &RegressionDataset,
    m: &DesignMatrices,
    prior: &PriorConfig,
    cfg: &GibbsConfig,
    seed: u64,
) -> Result<Draws, PosteriorError> {
    let sampler = Sampler::new(m, &dataset.y, prior)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = sampler.initial_state();
    for _ in 0..cfg.burnin {
        sampler.sweep(&mut state, &mut rng)?;
    }
    let thin = cfg.thin.max(1);
    let mut draws = Vec::with_capacity(cfg.iters / thin);
    let mut counts = vec![0usize; m.q()];
    for it in 1..=cfg.iters {
        sampler.sweep(&mut state, &mut rng)?;
        if it % thin == 0 {
            let coeffs: Vec<(u32, f64)> =
                state.coeffs.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, v)| (c as u32, *v)).collect();
            for (c, _) in &coeffs {
                counts[*c as usize] += 1;
            }
            draws.push(Draw { iteration: state.iteration, sigma2: state.sigma2, coeffs });
        }
    }
    let kept = draws.len().max(1) as f64;
    Ok(Draws {
        base: m.base.clone(),
        trunc: m.trunc.clone(),
        indices: (0..m.q()).map(|c| m.index_of(c)).collect(),
        father_len: m.father_len(),
        inclusion: counts.into_iter().map(|c| c as f64 / kept).collect(),
        draws,
    })
}

pub fn posterior_mean_field(draws: &Draws) -> Result<CoefficientField<f64>, PosteriorError> {
    Ok(CoefficientField::from_dense(&draws.base, &draws.trunc, &draws.mean_coeffs()?))
}

/// Posterior mean of D^r f, evaluable pointwise.
pub struct DerivativeMean {
    pub field: CoefficientField<f64>,
    pub r: Vec<u32>,
}

impl DerivativeMean {
    pub fn eval(&self, basis: &Basis<f64>, x: &[f64]) -> f64 {
        self.field.eval(basis, x, &self.r)
    }
}

pub fn posterior_derivative_mean(draws: &Draws, r: &[u32]) -> Result<DerivativeMean, PosteriorError> {
    if r.len() != draws.base.len() {
        return Err(PosteriorError::Dimension(format!("r has {} entries", r.len())));
    }
    Ok(DerivativeMean { field: posterior_mean_field(draws)?, r: r.to_vec() })
}

#[derive(Clone, Debug, PartialEq)]
pub enum SigmaMode {
    Fixed(f64),
    /// Integrate sigma over the supplied grid (increasing) with the prior density.
    Grid(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactSummary {
    /// Per column; fathers are 1.
    pub inclusion: Vec<f64>,
    pub mean: Vec<f64>,
    /// Posterior model probabilities indexed by the inclusion bitmask over mother columns.
    pub model_probs: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Inverse-gamma(shape, rate) prior on sigma^2 expressed as a density in sigma.
fn log_sigma_density(sigma: f64, shape: f64, rate: f64) -> f64 {
    let s2 = sigma * sigma;
    shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) - (shape + 1.0) * s2.ln() - rate / s2
        + (2.0 * sigma).ln()
}

/// Full enumeration of the 2^K mother inclusion patterns (Gaussian slab; fathers always in).
pub fn exact_posterior_small(
    y: &[f64],
    m: &DesignMatrices,
    prior: &PriorConfig,
    mode: &SigmaMode,
) -> Result<ExactSummary, PosteriorError> {
    let f = m.father_len();
    let k = m.q() - f;
    if k > 20 {
        return Err(PosteriorError::TooManyCoefficients(k));
    }
    let g = m.full_gram();
    let h = DVector::from_vec(m.apply_t(y));
    let w = column_weights(m, y.len(), prior);
    enumerate_models(&g, &h, y, f, &w[f..], prior, mode)
}

/// Exact marginals when the Gram matrix is diagonal: the likelihood factorizes over columns,
/// so enumerating fathers plus chunks of at most `chunk` mothers is exact.
pub fn exact_marginals_orthogonal(
    y: &[f64],
    m: &DesignMatrices,
    prior: &PriorConfig,
    mode: &SigmaMode,
    chunk: usize,
) -> Result<ExactSummary, PosteriorError> {
    let chunk = chunk.clamp(1, 20);
    let g = m.full_gram();
    let scale = g.diagonal().max().max(1.0);
    let off = (0..g.nrows()).flat_map(|r| (0..g.ncols()).filter(move |c| *c != r).map(move |c| (r, c))).map(|(r, c)| g[(r, c)].abs()).fold(0.0, f64::max);
    if off > 1e-9 * scale {
        return Err(PosteriorError::Dimension(format!("Gram matrix is not diagonal (max off-diagonal {off:e})")));
    }
    let h = DVector::from_vec(m.apply_t(y));
    let w = column_weights(m, y.len(), prior);
    let f = m.father_len();
    let q = m.q();
    let mut inclusion = vec![1.0; q];
    let mut mean = vec![0.0; q];
    let mut first = true;
    let mut start = f;
    while start < q || first {
        let end = (start + chunk).min(q);
        let cols: Vec<usize> = (0..f).chain(start..end).collect();
        let gs = DMatrix::from_fn(cols.len(), cols.len(), |r, c| g[(cols[r], cols[c])]);
        let hs = DVector::from_fn(cols.len(), |r, _| h[cols[r]]);
        let sub = enumerate_models(&gs, &hs, y, f, &w[start..end], prior, mode)?;
        for (i, c) in cols.iter().enumerate() {
            if *c >= f {
                inclusion[*c] = sub.inclusion[i];
                mean[*c] = sub.mean[i];
            } else if first {
                mean[*c] = sub.mean[i];
            }
        }
        first = false;
        start = end;
    }
    Ok(ExactSummary { inclusion, mean, model_probs: Vec::new() })
}

fn enumerate_models(
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    y: &[f64],
    f: usize,
    w: &[f64],
    prior: &PriorConfig,
    mode: &SigmaMode,
) -> Result<ExactSummary, PosteriorError> {
    let tau = prior.tau().ok_or(PosteriorError::NonGaussianSlab)?;
    let q = g.nrows();
    let k = q - f;
    let n = y.len();
    let yy: f64 = y.iter().map(|v| v * v).sum();

    let (sigmas, log_sw): (Vec<f64>, Vec<f64>) = match mode {
        SigmaMode::Fixed(s) => (vec![*s], vec![0.0]),
        SigmaMode::Grid(grid) => {
            let (shape, rate) = match prior.sigma_prior {
                SigmaPrior::InverseGamma { shape, rate } => (shape, rate),
                SigmaPrior::Fixed { .. } => return Err(PosteriorError::Prior("grid mode needs an inverse-gamma prior".into())),
            };
            if grid.len() < 2 || grid.windows(2).any(|p| p[1] <= p[0]) || grid[0] <= 0.0 {
                return Err(PosteriorError::Prior("sigma grid must be positive and increasing".into()));
            }
            let lw = (0..grid.len())
                .map(|i| {
                    let lo = if i == 0 { grid[0] } else { grid[i - 1] };
                    let hi = if i + 1 == grid.len() { grid[i] } else { grid[i + 1] };
                    (0.5 * (hi - lo)).ln() + log_sigma_density(grid[i], shape, rate)
                })
                .collect();
            (grid.clone(), lw)
        }
    };

    let models = 1usize << k;
    let mut logp = Vec::with_capacity(models * sigmas.len());
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(models * sigmas.len());
    for (si, sigma) in sigmas.iter().enumerate() {
        let s2 = sigma * sigma;
        let ridge = s2 / (tau * tau);
        for z in 0..models {
            let active: Vec<usize> = (0..f).chain((0..k).filter(|i| z >> i & 1 == 1).map(|i| f + i)).collect();
            let a = active.len();
            let mut prior_log = 0.0;
            for (i, om) in w.iter().enumerate() {
                prior_log += if z >> i & 1 == 1 { om.ln() } else { (-om).ln_1p() };
            }
            let mut mean = vec![0.0; q];
            let (logdet, quad) = if a == 0 {
                (0.0, 0.0)
            } else {
                let gs = DMatrix::from_fn(a, a, |r, c| g[(active[r], active[c])] + if r == c { ridge } else { 0.0 });
                let hs = DVector::from_fn(a, |r, _| h[active[r]]);
                let ch = gs.cholesky().ok_or_else(|| PosteriorError::Prior("singular ridge system".into()))?;
                let ms = ch.solve(&hs);
                for (r, c) in active.iter().enumerate() {
                    mean[*c] = ms[r];
                }
                let ld: f64 = ch.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
                (a as f64 * (tau * tau / s2).ln() + ld, hs.dot(&ms))
            };
            let ll = -0.5 * n as f64 * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * logdet - (yy - quad) / (2.0 * s2);
            logp.push(prior_log + ll + log_sw[si]);
            means.push(mean);
        }
    }
    let lz = log_sum_exp(&logp);
    let probs: Vec<f64> = logp.iter().map(|l| (l - lz).exp()).collect();
    let mut inclusion = vec![0.0; q];
    inclusion[..f].iter_mut().for_each(|v| *v = 1.0);
    let mut mean = vec![0.0; q];
    let mut model_probs = vec![0.0; models];
    for (idx, p) in probs.iter().enumerate() {
        let z = idx % models;
        model_probs[z] += p;
        for i in 0..k {
            if z >> i & 1 == 1 {
                inclusion[f + i] += p;
            }
        }
        for (acc, v) in mean.iter_mut().zip(&means[idx]) {
            *acc += p * v;
        }
    }
    Ok(ExactSummary { inclusion, mean, model_probs })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QwnCoefficient {
    pub column: usize,
    /// (Psi_j^T y)_k / (Psi_j^T Psi_j)_{kk}
    pub y_jk: f64,
    pub noise_sd: f64,
    pub inclusion: f64,
    pub slab_mean: f64,
    pub slab_var: f64,
    pub mean: f64,
}

/// Coefficient-wise spike-and-slab posterior in the sequence model
/// Y_jk = theta_jk + sigma (Psi_j^T Psi_j)_kk^{-1/2} eps_jk.
pub fn quasi_wn_posterior(y: &[f64], m: &DesignMatrices, prior: &PriorConfig, sigma: f64) -> Result<Vec<QwnCoefficient>, PosteriorError> {
    let w = column_weights(m, y.len(), prior);
    let kernel = Kernel::new(prior);
    let s2 = sigma * sigma;
    let mut out = Vec::with_capacity(m.q() - m.father_len());
    for c in m.father_len()..m.q() {
        let col = &m.columns[c];
        let s = col.norm_sq();
        if s <= 0.0 {
            return Err(PosteriorError::ZeroDiagonal(c));
        }
        let b = col.dot(y);
        let y_jk = b / s;
        let incl = inclusion_probability(w[c], kernel.log_bf(s, b, s2));
        let (mu, var) = kernel.moments(s, b, s2);
        out.push(QwnCoefficient { column: c, y_jk, noise_sd: sigma / s.sqrt(), inclusion: incl, slab_mean: mu, slab_var: var, mean: incl * mu });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QwnRow {
    pub column: usize,
    pub inclusion_gap: f64,
    pub mean_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QwnReport {
    pub rows: Vec<QwnRow>,
    pub max_inclusion_gap: f64,
    pub max_mean_gap: f64,
    pub median_inclusion_gap: f64,
    pub q90_inclusion_gap: f64,
}

fn quantile(mut v: Vec<f64>, p: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Per-index gaps between full-posterior (inclusion, mean) and the comparator.
pub fn qwn_vs_regression_report(full_inclusion: &[f64], full_mean: &[f64], qwn: &[QwnCoefficient]) -> QwnReport {
    let rows: Vec<QwnRow> = qwn
        .iter()
        .map(|c| QwnRow {
            column: c.column,
            inclusion_gap: (full_inclusion[c.column] - c.inclusion).abs(),
            mean_gap: (full_mean[c.column] - c.mean).abs(),
        })
        .collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.inclusion_gap).collect();
    QwnReport {
        max_inclusion_gap: gaps.iter().copied().fold(0.0, f64::max),
        max_mean_gap: rows.iter().map(|r| r.mean_gap).fold(0.0, f64::max),
        median_inclusion_gap: quantile(gaps.clone(), 0.5),
        q90_inclusion_gap: quantile(gaps, 0.9),
        rows,
    }
}

fn default_gamma_lo() -> f64 {
    0.5
}
fn default_gamma_hi() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_gamma_lo")]
    pub gamma_lo: f64,
    #[serde(default = "default_gamma_hi")]
    pub gamma_hi: f64,
    #[serde(default)]
    pub burnin: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig { gamma_lo: default_gamma_lo(), gamma_hi: default_gamma_hi(), burnin: 0, thin: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EventFrequencies {
    pub a_c: f64,
    pub b_c: f64,
    pub c_c: f64,
    pub draws: usize,
}

/// Membership of a mother index in the set J_n(gamma).
pub fn in_signal_set(theta0: f64, j: &[u32], alpha: &AnisoSmoothness, gamma: f64, n: usize) -> bool {
    let d = j.len() as f64;
    let nf = n as f64;
    let noise = gamma * (nf.ln() / nf).powf(1.0 / (2.0 * d));
    let a_star = alpha.alpha_star();
    let bound: f64 = j
        .iter()
        .zip(&alpha.alpha)
        .map(|(j, a)| 2f64.powf(-a * *j as f64 * (1.0 / d + 1.0 / (2.0 * a_star))).min(noise))
        .product();
    theta0.abs() > bound
}

/// Posterior frequencies of the complements of the events A, B and C.
pub fn event_diagnostics(
    draws: &Draws,
    truth: &CoefficientField<f64>,
    alpha: &AnisoSmoothness,
    cfg: &DiagnosticsConfig,
    n: usize,
) -> Result<EventFrequencies, PosteriorError> {
    if !(0.0 < cfg.gamma_lo && cfg.gamma_lo < cfg.gamma_hi) {
        return Err(PosteriorError::Prior("need 0 < gamma_lo < gamma_hi".into()));
    }
    let nf = n as f64;
    let thr = cfg.gamma_hi * (nf.ln() / nf).sqrt();
    // truth value per chain column plus truth mass outside the truncation
    let mut theta0 = vec![0.0; draws.q()];
    let mut missed_outside = false;
    let pos: std::collections::HashMap<&TensorIndex, usize> = draws.indices.iter().enumerate().map(|(c, ix)| (ix, c)).collect();
    for (ix, v) in truth.iter() {
        if ix.is_father(truth.base()) {
            continue;
        }
        match pos.get(&ix) {
            Some(c) => theta0[*c] = v,
            None => missed_outside |= v.abs() > thr,
        }
    }
    let mothers = draws.father_len..draws.q();
    let in_lo: Vec<bool> =
        (0..draws.q()).map(|c| c >= draws.father_len && in_signal_set(theta0[c], &draws.indices[c].j, alpha, cfg.gamma_lo, n)).collect();
    let kept: Vec<usize> = (cfg.burnin..draws.draws.len()).step_by(cfg.thin.max(1)).collect();
    if kept.is_empty() {
        return Err(PosteriorError::EmptyDraws);
    }
    let (mut a, mut b, mut cc) = (0usize, 0usize, 0usize);
    for &i in &kept {
        let th = draws.dense(i);
        if mothers.clone().any(|c| in_lo[c] && (th[c] - theta0[c]).abs() > thr) {
            a += 1;
        }
        if mothers.clone().any(|c| !in_lo[c] && th[c] != 0.0) {
            b += 1;
        }
        if missed_outside || mothers.clone().any(|c| th[c] == 0.0 && theta0[c].abs() > thr) {
            cc += 1;
        }
    }
    let k = kept.len() as f64;
    Ok(EventFrequencies { a_c: a as f64 / k, b_c: b as f64 / k, c_c: cc as f64 / k, draws: kept.len() })
}

/// max over a dense grid of |est - truth|.
pub fn sup_error(est: &(dyn Fn(&[f64]) -> f64 + Sync), truth: &(dyn Fn(&[f64]) -> f64 + Sync), d: usize, res: usize) -> f64 {
    use rayon::prelude::*;
    let pts = crate::function_space::grid_points(d, res);
    pts.par_iter().map(|x| (est(x) - truth(x)).abs()).reduce(|| 0.0, f64::max)
}

/// Root mean square of |est - truth| over the design points.
pub fn l2_error(est: &(dyn Fn(&[f64]) -> f64 + Sync), truth: &(dyn Fn(&[f64]) -> f64 + Sync), design: &crate::design::Design) -> f64 {
    let n = design.n();
    if n == 0 {
        return 0.0;
    }
    (design.iter().map(|x| (est(x) - truth(x)).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Sup error of D^r between two fields on a grid fine enough for both.
pub fn field_sup_error(est: &CoefficientField<f64>, truth: &CoefficientField<f64>, basis: &Basis<f64>, r: &[u32], res: usize) -> f64 {
    sup_error(&|x| est.eval(basis, x, r), &|x| truth.eval(basis, x, r), est.dim(), res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{gen_data_from_values, make_midpoint_grid};
    use crate::gram::{build_matrices, DEFAULT_CAP};
    use crate::wavelet::{build_basis, BasisSpec};

    #[test]
    fn truncation_examples() {
        assert_eq!(default_truncation(1024, 1, 0.5, &[1]).unwrap(), vec![3]);
        assert_eq!(default_truncation(1024, 1, 1.0, &[1]).unwrap(), vec![7]);
        // (n / ln n)^{1/2} just above 8 for d = 2 -> total 3 split (2, 1)
        let j = default_truncation(1024, 2, 0.5, &[1, 1]).unwrap();
        assert_eq!(j, vec![2, 1]);
        assert!(default_truncation(4, 1, 0.5, &[1]).is_err());
        assert!(default_truncation(16, 1, 0.5, &[2]).is_err());
    }

    #[test]
    fn weight_examples() {
        let p = PriorConfig::default();
        assert_eq!(weight(&[3], 1024, &p), 1.0 / 64.0);
        assert_eq!(weight(&[0], 1024, &p), 0.5);
        assert_eq!(weight(&[400], 1024, &p), 1024f64.powf(-10.0));
    }

    #[test]
    fn prior_validation() {
        let d = PriorConfig::default();
        assert!(d.validate(1).is_ok());
        assert!(PriorConfig { weight_mu: vec![0.5], ..d.clone() }.validate(1).is_err());
        assert!(PriorConfig { r0: 0.0, ..d.clone() }.validate(1).is_err());
        assert!(PriorConfig { weight_mu: vec![1.0, 1.0, 1.0], ..d.clone() }.validate(2).is_err());
        let (lo, hi) = d.density_bounds();
        assert!(lo > 0.0 && lo < hi);
        let back: PriorConfig = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<PriorConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn single_coefficient_against_quadrature() {
        let (s, b, s2, tau, om) = (100.0, 20.0, 1.0, 1.0, 0.3);
        let g = gaussian_conditional(s, b, s2, tau, om);
        assert!((g.v - 1.0 / 101.0).abs() < 1e-15);
        assert!((g.mean - 20.0 / 101.0).abs() < 1e-15);
        // midpoint quadrature of exp(-(s x^2 - 2 b x)/(2 s2)) N(x; 0, tau^2)
        let (lo, hi, cells) = (-3.0, 3.0, 600_000);
        let h = (hi - lo) / cells as f64;
        let bf: f64 = (0..cells)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * h;
                (-(s * x * x - 2.0 * b * x) / (2.0 * s2)).exp() * (-0.5 * x * x / (tau * tau)).exp()
                    / (tau * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum::<f64>()
            * h;
        assert!((g.log_bf.exp() - bf).abs() / bf < 1e-8);
        let p = om * bf / (1.0 - om + om * bf);
        assert!((g.inclusion - p).abs() < 1e-8);
    }

    #[test]
    fn inclusion_is_monotone_in_signal() {
        let mut prev = 0.0;
        for i in 0..200 {
            let b = i as f64 * 0.05;
            let p = gaussian_conditional(50.0, b, 1.0, 2.0, 0.05).inclusion;
            assert!(p > prev || p == 1.0, "b={b}");
            prev = p;
        }
        assert_eq!(inclusion_probability(0.3, 1e6), 1.0);
        assert!(inclusion_probability(0.3, -1e6) > 0.0);
    }

    #[test]
    fn numeric_slab_kernel_matches_gaussian_closed_form() {
        // a wide uniform slab against the equivalent flat-prior integral
        let p = PriorConfig { slab: Slab::Uniform, r0: 3.0, ..PriorConfig::default() };
        let k = Kernel::new(&p);
        let (s, b, s2) = (400.0, 40.0, 1.0);
        let v = s2 / s;
        let exact = (b * b / (2.0 * s * s2)) + (2.0 * std::f64::consts::PI * v).sqrt().ln() - (6.0f64).ln();
        assert!((k.log_bf(s, b, s2) - exact).abs() < 1e-6);
        let (mu, var) = k.moments(s, b, s2);
        assert!((mu - 0.1).abs() < 1e-3 && (var - v).abs() / v < 0.05);
        // the grid fallback kicks in when the likelihood sits outside the support
        assert!(k.log_bf(1e6, 1e6 * 3.5, 1.0).is_finite());
    }

    fn haar_problem(n: usize, trunc: u32, sigma0: f64, seed: u64) -> (crate::design::RegressionDataset, DesignMatrices) {
        let basis = build_basis(&BasisSpec::haar(1)).unwrap();
        let design = make_midpoint_grid(n, 1);
        let m = build_matrices(&basis, &[trunc], &design, DEFAULT_CAP).unwrap();
        let truth: Vec<f64> = (0..m.q()).map(|c| [0.4, -0.2, 0.3, 0.0, 0.15, -0.1, 0.0, 0.05][c % 8]).collect();
        let f = m.apply(&truth);
        let ds = gen_data_from_values(&f, &design, sigma0, seed, "test", &mut ChaCha8Rng::seed_from_u64(seed));
        (ds, m)
    }

    #[test]
    fn spike_only_limit_keeps_mothers_zero() {
        let (ds, m) = haar_problem(64, 3, 1.0, 3);
        let prior = PriorConfig::default().with_fixed_sigma(1.0);
        let mut s = Sampler::new(&m, &ds.y, &prior).unwrap();
        s.weights.iter_mut().skip(m.father_len()).for_each(|w| *w = 0.0);
        let mut st = s.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            gibbs_sweep(&mut st, &s, &mut rng).unwrap();
            assert!(st.coeffs[m.father_len()..].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn residual_stays_consistent() {
        let (ds, m) = haar_problem(128, 4, 0.5, 4);
        let s = Sampler::new(&m, &ds.y, &PriorConfig::default()).unwrap();
        let mut st = s.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..250 {
            s.sweep(&mut st, &mut rng).unwrap();
            let fit = m.apply(&st.coeffs);
            let worst = ds.y.iter().zip(&fit).zip(&st.residual).map(|((y, f), r)| (y - f - r).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-8);
            for (c, inc) in st.inclusion.iter().enumerate().skip(m.father_len()) {
                assert_eq!(*inc, st.coeffs[c] != 0.0);
            }
        }
    }

    #[test]
    fn zero_data_inclusion_matches_closed_form() {
        let basis = build_basis(&BasisSpec::haar(1)).unwrap();
        let design = make_midpoint_grid(32, 1);
        let m = build_matrices(&basis, &[2], &design, DEFAULT_CAP).unwrap();
        let y = vec![0.0; 32];
        let ds = gen_data_from_values(&y, &design, 1.0, 0, "zero", &mut ChaCha8Rng::seed_from_u64(0));
        let prior = PriorConfig::default().with_fixed_sigma(1.0);
        let sweeps = 10_000;
        let draws = run_chain(&ds, &m, &prior, &GibbsConfig { iters: sweeps, burnin: 0, thin: 1 }, 9).unwrap();
        let c = m.father_len();
        let om = weight(&[1], 32, &prior);
        let want = gaussian_conditional(32.0, 0.0, 1.0, 2.0, om).inclusion;
        let se = (want * (1.0 - want) / sweeps as f64).sqrt();
        // fathers move, so b is not exactly zero; the closed form at b = 0 still bounds the rate
        assert!((draws.inclusion[c] - want).abs() < 3.0 * se + 0.01, "{} vs {want}", draws.inclusion[c]);
    }

    #[test]
    fn chains_are_deterministic() {
        let (ds, m) = haar_problem(64, 3, 0.5, 5);
        let cfg = GibbsConfig { iters: 50, burnin: 10, thin: 2 };
        let a = run_chain(&ds, &m, &PriorConfig::default(), &cfg, 77).unwrap();
        let b = run_chain(&ds, &m, &PriorConfig::default(), &cfg, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.draws.len(), 25);
        let empty = run_chain(&ds, &m, &PriorConfig::default(), &GibbsConfig { iters: 0, burnin: 5, thin: 1 }, 1).unwrap();
        assert!(empty.is_empty());
        assert!(posterior_mean_field(&empty).is_err());
    }

    #[test]
    fn gibbs_agrees_with_enumeration() {
        let (ds, m) = haar_problem(128, 3, 1.0, 6);
        let prior = PriorConfig::default().with_fixed_sigma(1.0);
        let exact = exact_posterior_small(&ds.y, &m, &prior, &SigmaMode::Fixed(1.0)).unwrap();
        let draws = run_chain(&ds, &m, &prior, &GibbsConfig { iters: 20_000, burnin: 200, thin: 1 }, 11).unwrap();
        let mean = draws.mean_coeffs().unwrap();
        for c in 0..m.q() {
            let p = exact.inclusion[c];
            let se = (p * (1.0 - p) / 20_000.0).sqrt();
            assert!((draws.inclusion[c] - p).abs() <= (3.0 * se).max(0.02), "col {c}");
            assert!((mean[c] - exact.mean[c]).abs() < 0.02, "col {c}");
        }
        assert!((exact.model_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_without_mothers_is_ridge() {
        let (ds, m) = haar_problem(64, 1, 1.0, 7);
        let prior = PriorConfig::default().with_fixed_sigma(1.0);
        let ex = exact_posterior_small(&ds.y, &m, &prior, &SigmaMode::Fixed(1.0)).unwrap();
        let g = m.full_gram() + DMatrix::identity(m.q(), m.q()) * 0.25;
        let ridge = g.lu().solve(&DVector::from_vec(m.apply_t(&ds.y))).unwrap();
        for c in 0..m.q() {
            assert!((ex.mean[c] - ridge[c]).abs() < 1e-12);
        }
        let grid: Vec<f64> = (0..40).map(|i| 0.5 * 1.05f64.powi(i)).collect();
        let eg = exact_posterior_small(&ds.y, &m, &PriorConfig::default(), &SigmaMode::Grid(grid)).unwrap();
        assert!((eg.model_probs[0] - 1.0).abs() < 1e-12);
        let lap = PriorConfig { slab: Slab::Laplace { scale: 1.0 }, ..PriorConfig::default() };
        assert!(matches!(exact_posterior_small(&ds.y, &m, &lap, &SigmaMode::Fixed(1.0)), Err(PosteriorError::NonGaussianSlab)));
    }

    #[test]
    fn quasi_white_noise_is_exact_for_orthogonal_haar() {
        let (ds, m) = haar_problem(128, 3, 1.0, 8);
        let prior = PriorConfig::default().with_fixed_sigma(1.0);
        let exact = exact_posterior_small(&ds.y, &m, &prior, &SigmaMode::Fixed(1.0)).unwrap();
        let qwn = quasi_wn_posterior(&ds.y, &m, &prior, 1.0).unwrap();
        let rep = qwn_vs_regression_report(&exact.inclusion, &exact.mean, &qwn);
        assert!(rep.max_inclusion_gap < 1e-10 && rep.max_mean_gap < 1e-10, "{rep:?}");
        let zero = vec![0.0; 128];
        for c in quasi_wn_posterior(&zero, &m, &prior, 1.0).unwrap() {
            assert_eq!(c.slab_mean, 0.0);
        }
    }

    #[test]
    fn chunked_enumeration_matches_full_enumeration() {
        let (ds, m) = haar_problem(128, 4, 1.0, 12);
        let prior = PriorConfig::default().with_fixed_sigma(1.0);
        let full = exact_posterior_small(&ds.y, &m, &prior, &SigmaMode::Fixed(1.0)).unwrap();
        let chunked = exact_marginals_orthogonal(&ds.y, &m, &prior, &SigmaMode::Fixed(1.0), 5).unwrap();
        for c in 0..m.q() {
            assert!((full.inclusion[c] - chunked.inclusion[c]).abs() < 1e-10);
            assert!((full.mean[c] - chunked.mean[c]).abs() < 1e-10);
        }
        let basis = build_basis(&BasisSpec::d4(1)).unwrap();
        let design = crate::design::make_grid_design(100, 1).unwrap();
        let md = build_matrices(&basis, &[3], &design, DEFAULT_CAP).unwrap();
        assert!(exact_marginals_orthogonal(&vec![0.0; 100], &md, &prior, &SigmaMode::Fixed(1.0), 5).is_err());
    }

    #[test]
    fn events_on_trivial_cases() {
        let (ds, m) = haar_problem(128, 3, 0.1, 9);
        let draws = run_chain(&ds, &m, &PriorConfig::default(), &GibbsConfig { iters: 100, burnin: 50, thin: 1 }, 3).unwrap();
        let alpha = AnisoSmoothness::new(vec![1.0]).unwrap();
        let zero = CoefficientField::zeros(&[1], &[3]);
        let ev = event_diagnostics(&draws, &zero, &alpha, &DiagnosticsConfig::default(), 128).unwrap();
        assert_eq!(ev.c_c, 0.0);
        let huge = DiagnosticsConfig { gamma_hi: 1e9, ..DiagnosticsConfig::default() };
        assert_eq!(event_diagnostics(&draws, &zero, &alpha, &huge, 128).unwrap().a_c, 0.0);
    }

    #[test]
    fn error_metrics() {
        let basis = build_basis(&BasisSpec::haar(1)).unwrap();
        let mut a = CoefficientField::zeros(&[1], &[3]);
        a.set(&TensorIndex { j: vec![1], k: vec![1] }, 0.3).unwrap();
        assert_eq!(field_sup_error(&a, &a, &basis, &[0], 64), 0.0);
        // constant offset through the father block: phi_{1,k} = sqrt 2 on its half
        let mut b = a.clone();
        for k in 0..2 {
            let ix = TensorIndex { j: vec![0], k: vec![k] };
            b.set(&ix, a.get(&ix) + 0.25 / 2f64.sqrt()).unwrap();
        }
        assert!((field_sup_error(&a, &b, &basis, &[0], 64) - 0.25).abs() < 1e-12);
        let g = crate::design::make_grid_design(11, 1).unwrap();
        let e = l2_error(&|x| x[0], &|_| 0.0, &g);
        let naive = (g.iter().map(|x| x[0] * x[0]).sum::<f64>() / 11.0).sqrt();
        assert!((e - naive).abs() < 1e-15);
    }

    #[test]
    fn draw_files() {
        let (ds, m) = haar_problem(32, 2, 0.5, 10);
        let draws = run_chain(&ds, &m, &PriorConfig::default(), &GibbsConfig { iters: 3, burnin: 0, thin: 1 }, 3).unwrap();
        let mut buf = Vec::new();
        draws.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(first["nonzero"].is_array());
        let mut csv = Vec::new();
        draws.write_inclusion_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("j,k,frequency\n"));
        let mean = posterior_derivative_mean(&draws, &[0]).unwrap();
        assert!(mean.eval(&build_basis(&BasisSpec::haar(1)).unwrap(), &[0.3]).is_finite());
    }
}
