//! Least-squares plug-in test, likelihood-ratio test and the adversarial alternative.

use std::io::Write;

use nalgebra::{Cholesky, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::design::{gen_data_from_values, make_design, Design, DesignKind, RegressionDataset};
use crate::function_space::{besov_norm, grid_points, harmonic_mean, in_adaptation_region, rate_eps, BesovBallSpec, CoefficientField};
use crate::gram::{build_matrices, gram_eigen_range, DesignMatrices, GramError, DEFAULT_CAP};
use crate::seed::{derive_seed, stream};
use crate::wavelet::{Basis, Layer, TensorIndex};

#[derive(Debug, Error)]
pub enum TestError {
    #[error("design matrix is rank deficient (min eigenvalue {0:e})")]
    RankDeficient(f64),
    #[error("no headroom: bump would leave the Besov ball ({0:.4} > 1)")]
    Headroom(f64),
    #[error("invalid test configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gram(#[from] GramError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Least-squares projection estimator on a fixed design, reusable across responses.
pub struct LsFitter {
    pub m: DesignMatrices,
    chol: Cholesky<f64, Dyn>,
}

impl LsFitter {
    pub fn new(basis: &Basis<f64>, design: &Design, levels: &[u32]) -> Result<Self, TestError> {
        let m = build_matrices(basis, levels, design, DEFAULT_CAP)?;
        let (lo, hi) = gram_eigen_range(&m)?;
        if !(lo > 1e-10 * hi.max(1e-300)) {
            return Err(TestError::RankDeficient(lo));
        }
        let chol = m.full_gram().cholesky().ok_or(TestError::RankDeficient(lo))?;
        Ok(LsFitter { m, chol })
    }

    pub fn fit(&self, y: &[f64]) -> CoefficientField<f64> {
        let rhs = DVector::from_vec(self.m.apply_t(y));
        let theta = self.chol.solve(&rhs);
        CoefficientField::from_dense(&self.m.base, &self.m.trunc, theta.as_slice())
    }
}

/// f_hat = psi_h(x)^T (Psi^T Psi)^{-1} Psi^T y.
pub fn ls_fit(dataset: &RegressionDataset, basis: &Basis<f64>, levels: &[u32]) -> Result<CoefficientField<f64>, TestError> {
    Ok(LsFitter::new(basis, &dataset.design, levels)?.fit(&dataset.y))
}

/// Floored levels with 2^{h_l} = eps_n^{-2 alpha* / (alpha_l (2 alpha* + d))}.
pub fn plugin_levels(n: usize, alpha: &[f64]) -> Result<Vec<u32>, TestError> {
    let eps = rate_eps(n as f64, alpha).map_err(|e| TestError::Config(e.to_string()))?;
    let a = harmonic_mean(alpha).map_err(|e| TestError::Config(e.to_string()))?;
    let d = alpha.len() as f64;
    Ok(alpha
        .iter()
        .map(|al| {
            let e = -eps.log2() * 2.0 * a / (al * (2.0 * a + d));
            (e + 1e-12).floor().max(0.0) as u32
        })
        .collect())
}

/// rho_n = eps_n^{-d / (2 alpha* + d)}.
pub fn separation_rho(n: usize, alpha: &[f64]) -> Result<f64, TestError> {
    let eps = rate_eps(n as f64, alpha).map_err(|e| TestError::Config(e.to_string()))?;
    let a = harmonic_mean(alpha).map_err(|e| TestError::Config(e.to_string()))?;
    let d = alpha.len() as f64;
    Ok(eps.powf(-d / (2.0 * a + d)))
}

/// Floored levels with 2^{J_l} = (n / ln n)^{alpha* / (alpha_l (2 alpha* + d))}.
pub fn alternative_levels(n: usize, alpha: &[f64]) -> Result<Vec<u32>, TestError> {
    let a = harmonic_mean(alpha).map_err(|e| TestError::Config(e.to_string()))?;
    let d = alpha.len() as f64;
    let nf = n as f64;
    let lr = (nf / nf.ln()).log2();
    Ok(alpha.iter().map(|al| (lr * a / (al * (2.0 * a + d)) + 1e-12).floor().max(0.0) as u32).collect())
}

/// Sup of |psi_{j,k}| (tensor of mothers) from a fine midpoint scan.
pub fn mother_sup(basis: &Basis<f64>, j: &[u32], k: &[u32]) -> f64 {
    j.iter()
        .zip(k)
        .map(|(j, k)| {
            let res = (j + 12).min(22);
            let s = crate::wavelet::sample_1d(basis, Layer::Mother, *j, *k, 0, res);
            s.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        })
        .product()
}

/// Adds c psi_{j,0} to f0 so that the sup displacement equals `sup_shift`; checks the Besov radius.
pub fn add_bump(
    f0: &CoefficientField<f64>,
    basis: &Basis<f64>,
    j: &[u32],
    sup_shift: f64,
    ball: &BesovBallSpec,
) -> Result<CoefficientField<f64>, TestError> {
    let base = f0.base().to_vec();
    if j.iter().zip(&base).any(|(j, n)| j < n) {
        return Err(TestError::Config(format!("bump level {j:?} below base {base:?}")));
    }
    let trunc: Vec<u32> = f0.trunc().iter().zip(j).map(|(t, j)| (*t).max(j + 1)).collect();
    let mut g = CoefficientField::zeros(&base, &trunc);
    for (ix, v) in f0.iter() {
        g.set(&ix, v).expect("same base, wider truncation");
    }
    let ix = TensorIndex { j: j.to_vec(), k: vec![0; j.len()] };
    let mag = sup_shift / mother_sup(basis, j, &ix.k);
    let cur = g.get(&ix);
    g.set(&ix, cur + mag).expect("index inside truncation");
    let norm = besov_norm(&g, ball, false).map_err(|e| TestError::Config(e.to_string()))?;
    if norm > ball.radius * (1.0 + 1e-12) {
        return Err(TestError::Headroom(norm / ball.radius));
    }
    Ok(g)
}

/// f0 plus a single bump at levels J_n(alpha), k = 0, with sup displacement R eps_n.
pub fn adversarial_alternative(
    f0: &CoefficientField<f64>,
    basis: &Basis<f64>,
    alpha: &[f64],
    radius: f64,
    n: usize,
) -> Result<CoefficientField<f64>, TestError> {
    let eps = rate_eps(n as f64, alpha).map_err(|e| TestError::Config(e.to_string()))?;
    let j: Vec<u32> = alternative_levels(n, alpha)?.iter().zip(basis.base_level()).map(|(j, b)| (*j).max(*b)).collect();
    add_bump(f0, basis, &j, radius * eps, &BesovBallSpec::sup(alpha.to_vec(), radius))
}

fn field_values(f: &CoefficientField<f64>, basis: &Basis<f64>, design: &Design) -> Vec<f64> {
    crate::design::truth_values(f, basis, design)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrOutcome {
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
}

/// Null law of the log-likelihood ratio: Normal(-D/2, D) with D = sum (g - f0)^2 / sigma0^2.
pub fn lr_null(f0: &[f64], g: &[f64], sigma0: f64) -> (f64, f64) {
    let dd: f64 = f0.iter().zip(g).map(|(a, b)| (b - a).powi(2)).sum::<f64>() / (sigma0 * sigma0);
    (-0.5 * dd, dd)
}

/// Level-delta likelihood-ratio test of f0 against g with exact Gaussian calibration
/// (randomized when g coincides with f0 on the design).
pub fn lr_test_values<G: Rng + ?Sized>(y: &[f64], f0: &[f64], g: &[f64], sigma0: f64, delta: f64, rng: &mut G) -> LrOutcome {
    let s2 = sigma0 * sigma0;
    let stat: f64 = y.iter().zip(f0).zip(g).map(|((y, a), b)| (y - a).powi(2) - (y - b).powi(2)).sum::<f64>() / (2.0 * s2);
    let (mean, var) = lr_null(f0, g, sigma0);
    if var <= 0.0 {
        return LrOutcome { statistic: stat, threshold: f64::INFINITY, reject: rng.gen::<f64>() < delta };
    }
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - delta);
    let threshold = mean + z * var.sqrt();
    LrOutcome { statistic: stat, threshold, reject: stat > threshold }
}

pub fn lr_test<G: Rng + ?Sized>(
    dataset: &RegressionDataset,
    basis: &Basis<f64>,
    f0: &CoefficientField<f64>,
    g: &CoefficientField<f64>,
    delta: f64,
    rng: &mut G,
) -> LrOutcome {
    let a = field_values(f0, basis, &dataset.design);
    let b = field_values(g, basis, &dataset.design);
    lr_test_values(&dataset.y, &a, &b, dataset.sigma0, delta, rng)
}

/// Exact type-II error of the level-delta LR test when the data come from g.
pub fn lr_type2_exact(f0: &[f64], g: &[f64], sigma0: f64, delta: f64) -> f64 {
    let (_, var) = lr_null(f0, g, sigma0);
    let nd = Normal::new(0.0, 1.0).unwrap();
    if var <= 0.0 {
        return 1.0 - delta;
    }
    nd.cdf(nd.inverse_cdf(1.0 - delta) - var.sqrt())
}

fn default_alpha() -> Vec<f64> {
    vec![1.0]
}
fn default_radius() -> f64 {
    1.0
}
fn default_m_sep() -> f64 {
    2.0
}
fn default_sigma0() -> f64 {
    0.75
}
fn default_lr_reps() -> usize {
    10_000
}
fn default_plugin_reps() -> usize {
    200
}
fn default_calibration_reps() -> usize {
    500
}
fn default_delta() -> f64 {
    0.05
}
fn default_n_grid() -> Vec<usize> {
    (10..=16).map(|e| 1usize << e).collect()
}
fn default_design() -> DesignKind {
    DesignKind::Grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Separation constant M of the plug-in alternative.
    #[serde(default = "default_m_sep")]
    pub m_sep: f64,
    /// Threshold constant M0; calibrated by simulation under the null when absent.
    #[serde(default)]
    pub m0: Option<f64>,
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
    #[serde(default = "default_lr_reps")]
    pub lr_replicates: usize,
    #[serde(default = "default_plugin_reps")]
    pub plugin_replicates: usize,
    #[serde(default = "default_calibration_reps")]
    pub calibration_replicates: usize,
    #[serde(default = "default_delta")]
    pub level: f64,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_design")]
    pub design: DesignKind,
}

impl Default for TestConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl TestConfig {
    pub fn validate(&self, eta: f64) -> Result<(), TestError> {
        let bad = |m: String| Err(TestError::Config(m));
        if !in_adaptation_region(&self.alpha, &vec![0; self.alpha.len()], eta) {
            return bad(format!("alpha {:?} outside the adaptation region for this basis", self.alpha));
        }
        if let Some(m0) = self.m0 {
            if !(0.0 < m0 && m0 < self.m_sep) {
                return bad(format!("need 0 < M0 < M, got M0={m0}, M={}", self.m_sep));
            }
        }
        if !(self.sigma0 > 0.0 && self.radius > 0.0 && self.level > 0.0 && self.level < 1.0) {
            return bad("sigma0, R must be positive and level in (0,1)".into());
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) || self.n_grid.iter().any(|n| *n < 8) {
            return bad("n grid must be strictly increasing with n >= 8".into());
        }
        Ok(())
    }
}

/// Plug-in test machinery at one sample size.
pub struct PluginSetup {
    pub fitter: LsFitter,
    pub f0: CoefficientField<f64>,
    pub f0_values: Vec<f64>,
    pub threshold_scale: f64,
    pub grid_res: usize,
}

impl PluginSetup {
    pub fn new(basis: &Basis<f64>, design: &Design, f0: &CoefficientField<f64>, alpha: &[f64]) -> Result<Self, TestError> {
        let n = design.n();
        let base = basis.base_level();
        let h: Vec<u32> = plugin_levels(n, alpha)?.iter().zip(base).map(|(h, b)| (*h).max(b + 1)).collect();
        let fitter = LsFitter::new(basis, design, &h)?;
        let eps = rate_eps(n as f64, alpha).map_err(|e| TestError::Config(e.to_string()))?;
        let top = h.iter().copied().max().unwrap().max(f0.max_level());
        Ok(PluginSetup {
            fitter,
            f0: f0.clone(),
            f0_values: field_values(f0, basis, design),
            threshold_scale: separation_rho(n, alpha)? * eps,
            grid_res: 1usize << (top + 2),
        })
    }

    pub fn levels(&self) -> &[u32] {
        &self.fitter.m.trunc
    }

    /// ||f_hat - f0||_inf / (rho_n eps_n) on the dense grid.
    pub fn statistic(&self, basis: &Basis<f64>, y: &[f64]) -> f64 {
        let fit = self.fitter.fit(y);
        let d = fit.dim();
        let zero = vec![0u32; d];
        let pts = grid_points(d, self.grid_res);
        let sup = pts.iter().map(|x| (fit.eval(basis, x, &zero) - self.f0.eval(basis, x, &zero)).abs()).fold(0.0, f64::max);
        sup / self.threshold_scale
    }
}

/// Reject iff the dense-grid sup distance exceeds M0 rho_n eps_n.
pub fn plugin_test(setup: &PluginSetup, basis: &Basis<f64>, dataset: &RegressionDataset, m0: f64) -> bool {
    setup.statistic(basis, &dataset.y) > m0
}

/// Plug-in alternative: a bump at the finest mother level of the plug-in span with sup shift M rho_n eps_n.
pub fn plugin_alternative(setup: &PluginSetup, basis: &Basis<f64>, alpha: &[f64], radius: f64, m_sep: f64) -> Result<CoefficientField<f64>, TestError> {
    let j: Vec<u32> = setup.levels().iter().map(|h| h - 1).collect();
    add_bump(&setup.f0, basis, &j, m_sep * setup.threshold_scale, &BesovBallSpec::sup(alpha.to_vec(), radius))
}

fn noisy(values: &[f64], design: &Design, sigma0: f64, seed: u64) -> RegressionDataset {
    gen_data_from_values(values, design, sigma0, seed, "bench", &mut ChaCha8Rng::seed_from_u64(seed))
}

fn quantile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// M0 as the (1 - level/5) quantile of the null statistic over independent replicates.
pub fn calibrate_m0(setup: &PluginSetup, basis: &Basis<f64>, design: &Design, sigma0: f64, level: f64, reps: usize, master: u64) -> f64 {
    let n = design.n() as u64;
    let stats: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| setup.statistic(basis, &noisy(&setup.f0_values, design, sigma0, derive_seed(master, n, r, stream::CALIBRATION)).y))
        .collect();
    quantile(stats, 1.0 - level / 5.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Type2Row {
    pub n: usize,
    pub eps_n: f64,
    pub rho_n: f64,
    pub lr_type2: f64,
    pub lr_type2_exact: f64,
    /// NaN where no admissible M0 < M exists at this n
    pub plugin_type1: f64,
    pub plugin_type2: f64,
    pub m0: f64,
    /// n ||g - f0||_n^2 / ln n
    pub discrepancy_ratio: f64,
    /// ||g - f0||_inf / eps_n on the dense grid
    pub separation_ratio: f64,
    /// replicate r uses derive_seed(seed_master, n, r, stream)
    pub seed_master: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub rss: f64,
}

/// Ordinary least squares of y on x.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let k = x.len();
    if k < 2 || k != y.len() {
        return None;
    }
    let kf = k as f64;
    let mx = x.iter().sum::<f64>() / kf;
    let my = y.iter().sum::<f64>() / kf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_se = if k > 2 { (rss / (kf - 2.0) / sxx).sqrt() } else { f64::NAN };
    Some(LineFit { slope, intercept, slope_se, rss })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Type2Result {
    pub rows: Vec<Type2Row>,
    /// log(type II) against log n; Q_hat = -slope.
    pub polynomial: Option<LineFit>,
    /// log(type II) against n eps_n^2.
    pub exponential: Option<LineFit>,
    pub censored: Vec<usize>,
}

impl Type2Result {
    pub fn q_hat(&self) -> Option<f64> {
        self.polynomial.map(|f| -f.slope)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, spec_hash: &str) -> std::io::Result<()> {
        writeln!(w, "# spec_hash={spec_hash}")?;
        writeln!(w, "n,eps_n,rho_n,lr_type2,plugin_type1,plugin_type2,seeds")?;
        for r in &self.rows {
            writeln!(w, "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}", r.n, r.eps_n, r.rho_n, r.lr_type2, r.plugin_type1, r.plugin_type2, r.seed_master)?;
        }
        Ok(())
    }
}

/// LR type-II curve at the adversarial alternative plus plug-in error rates, per n.
pub fn type2_experiment(cfg: &TestConfig, basis: &Basis<f64>, master: u64) -> Result<Type2Result, TestError> {
    cfg.validate(basis.spec().eta())?;
    if cfg.n_grid.len() < 4 {
        return Err(TestError::Config("type-II curve needs at least 4 sample sizes".into()));
    }
    let d = cfg.alpha.len();
    if basis.dim() != d {
        return Err(TestError::Config(format!("basis has {} axes, alpha {d}", basis.dim())));
    }
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let n64 = n as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, n64, 0, stream::DESIGN));
        let design = make_design(cfg.design, n, d, master, &mut rng).map_err(|e| TestError::Config(e.to_string()))?;
        let nn = design.n();
        let eps = rate_eps(nn as f64, &cfg.alpha).map_err(|e| TestError::Config(e.to_string()))?;
        let rho = separation_rho(nn, &cfg.alpha)?;
        let f0 = CoefficientField::zeros(basis.base_level(), basis.base_level());

        // likelihood-ratio curve at the adversarial alternative
        let g = adversarial_alternative(&f0, basis, &cfg.alpha, cfg.radius, nn)?;
        let f0v = field_values(&f0, basis, &design);
        let gv = field_values(&g, basis, &design);
        let disc: f64 = f0v.iter().zip(&gv).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (nn as f64).ln();
        let sep_res = 1usize << (g.max_level() + 10).min(18);
        let sep = crate::posterior::field_sup_error(&g, &f0, basis, &vec![0; d], sep_res) / eps;
        let misses: usize = (0..cfg.lr_replicates as u64)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(master, n64, r, stream::LR);
                let ds = noisy(&gv, &design, cfg.sigma0, seed);
                let mut rr = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
                usize::from(!lr_test_values(&ds.y, &f0v, &gv, cfg.sigma0, cfg.level, &mut rr).reject)
            })
            .sum();
        let lr_type2 = misses as f64 / cfg.lr_replicates.max(1) as f64;

        // plug-in test at separation rho_n eps_n
        let setup = PluginSetup::new(basis, &design, &f0, &cfg.alpha)?;
        let m0 = match cfg.m0 {
            Some(m) => m,
            None => calibrate_m0(&setup, basis, &design, cfg.sigma0, cfg.level, cfg.calibration_replicates, master),
        };
        // at small n the calibrated threshold or the Besov headroom can rule the plug-in test out
        let alt = if m0 < cfg.m_sep { plugin_alternative(&setup, basis, &cfg.alpha, cfg.radius, cfg.m_sep).ok() } else { None };
        let (t1, t2) = match &alt {
            Some(alt) => {
                let altv = field_values(alt, basis, &design);
                (0..cfg.plugin_replicates as u64)
                    .into_par_iter()
                    .map(|r| {
                        let null = noisy(&setup.f0_values, &design, cfg.sigma0, derive_seed(master, n64, r, stream::PLUGIN_NULL));
                        let alt_ds = noisy(&altv, &design, cfg.sigma0, derive_seed(master, n64, r, stream::PLUGIN_ALT));
                        (usize::from(plugin_test(&setup, basis, &null, m0)), usize::from(!plugin_test(&setup, basis, &alt_ds, m0)))
                    })
                    .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
            }
            None => (0, 0),
        };
        let pr = cfg.plugin_replicates.max(1) as f64;
        rows.push(Type2Row {
            n: nn,
            eps_n: eps,
            rho_n: rho,
            lr_type2,
            lr_type2_exact: lr_type2_exact(&f0v, &gv, cfg.sigma0, cfg.level),
            plugin_type1: if alt.is_some() { t1 as f64 / pr } else { f64::NAN },
            plugin_type2: if alt.is_some() { t2 as f64 / pr } else { f64::NAN },
            m0,
            discrepancy_ratio: disc,
            separation_ratio: sep,
            seed_master: master,
        });
    }
    let mut censored = Vec::new();
    let (mut lx, mut ex, mut ly) = (Vec::new(), Vec::new(), Vec::new());
    for r in &rows {
        if r.lr_type2 <= 0.0 {
            censored.push(r.n);
            continue;
        }
        let nf = r.n as f64;
        lx.push(nf.ln());
        ex.push(nf * r.eps_n * r.eps_n);
        ly.push(r.lr_type2.ln());
    }
    Ok(Type2Result { polynomial: fit_line(&lx, &ly), exponential: fit_line(&ex, &ly), censored, rows })
}
