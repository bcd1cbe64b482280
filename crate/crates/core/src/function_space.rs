//! Anisotropic Besov norms, truth generation, projections and rate formulas.

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::Real;
use crate::wavelet::{Basis, Layer, TensorIndex};

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("smoothness entries must be positive")]
    Smoothness,
    #[error("sample size {0} below 3")]
    SampleSize(f64),
    #[error("index {0:?} outside the field")]
    Index(TensorIndex),
    #[error("malformed field: {0}")]
    Malformed(String),
}

/// d / sum(1/alpha_l).
pub fn harmonic_mean(alpha: &[f64]) -> Result<f64, SpaceError> {
    if alpha.is_empty() || alpha.iter().any(|a| !(*a > 0.0)) {
        return Err(SpaceError::Smoothness);
    }
    Ok(alpha.len() as f64 / alpha.iter().map(|a| 1.0 / a).sum::<f64>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnisoSmoothness {
    pub alpha: Vec<f64>,
    #[serde(skip)]
    alpha_star: f64,
}

impl AnisoSmoothness {
    pub fn new(alpha: Vec<f64>) -> Result<Self, SpaceError> {
        let alpha_star = harmonic_mean(&alpha)?;
        Ok(AnisoSmoothness { alpha, alpha_star })
    }

    pub fn alpha_star(&self) -> f64 {
        self.alpha_star
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Level-vector decay exponent sum_l alpha_l j_l (1/d + 1/(2 alpha*)).
    pub fn decay(&self, j: &[u32]) -> f64 {
        let d = self.dim() as f64;
        let c = 1.0 / d + 0.5 / self.alpha_star;
        self.alpha.iter().zip(j).map(|(a, j)| a * *j as f64 * c).sum()
    }

    /// R 2^{-decay(j)}.
    pub fn envelope(&self, radius: f64, j: &[u32]) -> f64 {
        radius * 2f64.powf(-self.decay(j))
    }
}

fn ser_exp<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_exp<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum E {
        N(f64),
        S(String),
    }
    match E::deserialize(d)? {
        E::N(v) if v >= 1.0 => Ok(v),
        E::S(s) if s == "inf" => Ok(f64::INFINITY),
        _ => Err(serde::de::Error::custom("exponent must be >= 1 or \"inf\"")),
    }
}

fn inf() -> f64 {
    f64::INFINITY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesovBallSpec {
    pub alpha: Vec<f64>,
    pub radius: f64,
    #[serde(default = "inf", serialize_with = "ser_exp", deserialize_with = "de_exp")]
    pub p: f64,
    #[serde(default = "inf", serialize_with = "ser_exp", deserialize_with = "de_exp")]
    pub q: f64,
}

impl BesovBallSpec {
    pub fn sup(alpha: Vec<f64>, radius: f64) -> Self {
        BesovBallSpec { alpha, radius, p: f64::INFINITY, q: f64::INFINITY }
    }

    pub fn smoothness(&self) -> Result<AnisoSmoothness, SpaceError> {
        AnisoSmoothness::new(self.alpha.clone())
    }
}

/// Coefficients of one level vector, k in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<R> {
    pub j: Vec<u32>,
    pub counts: Vec<u32>,
    pub values: Vec<R>,
}

/// Father block plus mother blocks over index_range(base, trunc); absent means zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField<R> {
    base: Vec<u32>,
    trunc: Vec<u32>,
    blocks: Vec<Block<R>>,
}

impl<R: Real> CoefficientField<R> {
    pub fn zeros(base: &[u32], trunc: &[u32]) -> Self {
        assert_eq!(base.len(), trunc.len());
        assert!(base.iter().zip(trunc).all(|(n, j)| j >= n && *n >= 1));
        let mut levels: Vec<Vec<u32>> = vec![vec![]];
        for l in 0..base.len() {
            levels = levels
                .into_iter()
                .flat_map(|p| {
                    ((base[l] - 1)..trunc[l]).map(move |j| {
                        let mut v = p.clone();
                        v.push(j);
                        v
                    })
                })
                .collect();
        }
        let blocks = levels
            .into_iter()
            .map(|j| {
                let counts: Vec<u32> = j.iter().zip(base).map(|(j, n)| 1u32 << (*j).max(*n)).collect();
                let size = counts.iter().map(|c| *c as usize).product();
                Block { j, counts, values: vec![R::zero(); size] }
            })
            .collect();
        CoefficientField { base: base.to_vec(), trunc: trunc.to_vec(), blocks }
    }

    /// Builds a field from values listed in index_range order.
    pub fn from_dense(base: &[u32], trunc: &[u32], values: &[R]) -> Self {
        let mut f = Self::zeros(base, trunc);
        assert_eq!(values.len(), f.len(), "dense length");
        let mut it = values.iter();
        for b in f.blocks.iter_mut() {
            for v in b.values.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        f
    }

    pub fn to_dense(&self) -> Vec<R> {
        self.blocks.iter().flat_map(|b| b.values.iter().copied()).collect()
    }

    pub fn base(&self) -> &[u32] {
        &self.base
    }

    pub fn trunc(&self) -> &[u32] {
        &self.trunc
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn blocks(&self) -> &[Block<R>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn father_len(&self) -> usize {
        self.blocks[0].values.len()
    }

    fn block_pos(&self, j: &[u32]) -> Option<usize> {
        if j.len() != self.dim() {
            return None;
        }
        let mut pos = 0usize;
        for l in 0..self.dim() {
            if j[l] + 1 < self.base[l] || j[l] >= self.trunc[l] {
                return None;
            }
            let radix = (self.trunc[l] - self.base[l] + 1) as usize;
            pos = pos * radix + (j[l] + 1 - self.base[l]) as usize;
        }
        Some(pos)
    }

    fn offset(b: &Block<R>, k: &[u32]) -> Option<usize> {
        let mut off = 0usize;
        for (kk, c) in k.iter().zip(&b.counts) {
            if kk >= c {
                return None;
            }
            off = off * *c as usize + *kk as usize;
        }
        Some(off)
    }

    pub fn get(&self, idx: &TensorIndex) -> R {
        self.block_pos(&idx.j)
            .and_then(|p| Self::offset(&self.blocks[p], &idx.k).map(|o| self.blocks[p].values[o]))
            .unwrap_or_else(R::zero)
    }

    pub fn set(&mut self, idx: &TensorIndex, v: R) -> Result<(), SpaceError> {
        let p = self.block_pos(&idx.j).ok_or_else(|| SpaceError::Index(idx.clone()))?;
        let o = Self::offset(&self.blocks[p], &idx.k).ok_or_else(|| SpaceError::Index(idx.clone()))?;
        self.blocks[p].values[o] = v;
        Ok(())
    }

    /// All (index, value) pairs in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (TensorIndex, R)> + '_ {
        self.blocks.iter().flat_map(|b| {
            b.values.iter().enumerate().map(move |(o, v)| {
                let mut k = vec![0u32; b.counts.len()];
                let mut rem = o;
                for l in (0..b.counts.len()).rev() {
                    k[l] = (rem % b.counts[l] as usize) as u32;
                    rem /= b.counts[l] as usize;
                }
                (TensorIndex { j: b.j.clone(), k }, *v)
            })
        })
    }

    pub fn scaled(&self, t: R) -> Self {
        let mut f = self.clone();
        for b in f.blocks.iter_mut() {
            for v in b.values.iter_mut() {
                *v = *v * t;
            }
        }
        f
    }

    /// Adds another field of the same shape.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.base, other.base);
        let mut f = if self.trunc.iter().zip(&other.trunc).all(|(a, b)| a >= b) {
            self.clone()
        } else {
            let t: Vec<u32> = self.trunc.iter().zip(&other.trunc).map(|(a, b)| *a.max(b)).collect();
            let mut g = Self::zeros(&self.base, &t);
            for (i, v) in self.iter() {
                g.set(&i, v).unwrap();
            }
            g
        };
        for (i, v) in other.iter() {
            if v != R::zero() {
                let cur = f.get(&i);
                f.set(&i, cur + v).unwrap();
            }
        }
        f
    }

    /// K_W: keeps coefficients with every j_l < W_l (fathers always).
    pub fn project(&self, w: &[u32]) -> Self {
        let t: Vec<u32> = self
            .trunc
            .iter()
            .zip(w)
            .zip(&self.base)
            .map(|((j, w), n)| (*j).min((*w).max(*n)))
            .collect();
        let mut f = Self::zeros(&self.base, &t);
        for b in f.blocks.iter_mut() {
            let src = self.block_pos(&b.j).unwrap();
            b.values.copy_from_slice(&self.blocks[src].values);
        }
        f
    }

    /// D^r f(x) as a finite sum over active translates.
    pub fn eval(&self, basis: &Basis<R>, x: &[R], r: &[u32]) -> R {
        let d = self.dim();
        let mut cand = Vec::new();
        // per axis, per layer offset: nonzero (k, value)
        let mut active: Vec<Vec<Vec<(u32, R)>>> = Vec::with_capacity(d);
        for l in 0..d {
            let n = self.base[l];
            let mut per = Vec::new();
            for jj in (n - 1)..self.trunc[l] {
                let (layer, lev) = if jj + 1 == n { (Layer::Father, n) } else { (Layer::Mother, jj) };
                basis.candidates(lev, x[l], &mut cand);
                let vals: Vec<(u32, R)> = cand
                    .iter()
                    .filter_map(|&k| {
                        let v = basis.value_1d(layer, lev, k, x[l], r[l]);
                        (v != R::zero()).then_some((k, v))
                    })
                    .collect();
                per.push(vals);
            }
            active.push(per);
        }
        let mut total = R::zero();
        for b in &self.blocks {
            let lists: Vec<&Vec<(u32, R)>> =
                (0..d).map(|l| &active[l][(b.j[l] + 1 - self.base[l]) as usize]).collect();
            total = total + Self::block_sum(b, &lists, 0, 0, R::one());
        }
        total
    }

    fn block_sum(b: &Block<R>, lists: &[&Vec<(u32, R)>], axis: usize, off: usize, w: R) -> R {
        if axis == lists.len() {
            return w * b.values[off];
        }
        let mut s = R::zero();
        for &(k, v) in lists[axis].iter() {
            s = s + Self::block_sum(b, lists, axis + 1, off * b.counts[axis] as usize + k as usize, w * v);
        }
        s
    }

    /// Maximum level per axis.
    pub fn max_level(&self) -> u32 {
        self.trunc.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Triple {
    j: Vec<u32>,
    k: Vec<u32>,
    value: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldJson {
    base_level: Vec<u32>,
    truncation: Vec<u32>,
    coefficients: Vec<Triple>,
}

impl<R: Real> CoefficientField<R> {
    /// JSON with nonzero (j, k, value) triples in lexicographic order.
    pub fn to_json(&self) -> String {
        let doc = FieldJson {
            base_level: self.base.clone(),
            truncation: self.trunc.clone(),
            coefficients: self
                .iter()
                .filter(|(_, v)| *v != R::zero())
                .map(|(i, v)| Triple { j: i.j, k: i.k, value: v.f64() })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self, SpaceError> {
        let doc: FieldJson = serde_json::from_str(s).map_err(|e| SpaceError::Malformed(e.to_string()))?;
        if doc.base_level.len() != doc.truncation.len()
            || doc.base_level.iter().zip(&doc.truncation).any(|(n, j)| *n < 1 || j < n)
        {
            return Err(SpaceError::Malformed("levels".into()));
        }
        let mut f = Self::zeros(&doc.base_level, &doc.truncation);
        for t in doc.coefficients {
            f.set(&TensorIndex { j: t.j, k: t.k }, R::of(t.value))?;
        }
        Ok(f)
    }
}

/// Father l_p term plus the q-aggregated mother term; `b_zero` uses exponent sum j_l / 2.
pub fn besov_norm<R: Real>(c: &CoefficientField<R>, ball: &BesovBallSpec, b_zero: bool) -> Result<f64, SpaceError> {
    let s = ball.smoothness()?;
    let d = s.dim() as f64;
    let (p, q) = (ball.p, ball.q);
    let lp = |vals: &[R]| -> f64 {
        if p.is_infinite() {
            vals.iter().fold(0.0, |m, v| m.max(v.f64().abs()))
        } else {
            vals.iter().map(|v| v.f64().abs().powf(p)).sum::<f64>().powf(1.0 / p)
        }
    };
    let father = lp(&c.blocks[0].values);
    let inv_p = if p.is_infinite() { 0.0 } else { 1.0 / p };
    let mut agg = 0.0f64;
    for b in &c.blocks[1..] {
        let e: f64 = if b_zero {
            b.j.iter().map(|j| *j as f64 / 2.0).sum()
        } else {
            let c = 1.0 / d + 0.5 / s.alpha_star() - inv_p / s.alpha_star();
            s.alpha.iter().zip(&b.j).map(|(a, j)| a * *j as f64 * c).sum()
        };
        let term = 2f64.powf(e) * lp(&b.values);
        if q.is_infinite() {
            agg = agg.max(term);
        } else {
            agg += term.powf(q);
        }
    }
    let mother = if q.is_infinite() { agg } else { agg.powf(1.0 / q) };
    Ok(father + mother)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthMode {
    Envelope,
    Random,
}

/// Mother coefficients on (envelope) or uniformly inside (random) the sup-Besov envelope;
/// the father block is left at zero so that the full norm stays within the radius.
pub fn sample_truth<R: Real, G: Rng + ?Sized>(
    ball: &BesovBallSpec,
    base: &[u32],
    trunc: &[u32],
    mode: TruthMode,
    rng: &mut G,
) -> Result<CoefficientField<R>, SpaceError> {
    let s = ball.smoothness()?;
    let mut f = CoefficientField::<R>::zeros(base, trunc);
    for b in f.blocks.iter_mut().skip(1) {
        let env = s.envelope(ball.radius, &b.j);
        for v in b.values.iter_mut() {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let mag = match mode {
                TruthMode::Envelope => env,
                TruthMode::Random => env * rng.gen::<f64>(),
            };
            *v = R::of(sign * mag);
        }
    }
    Ok(f)
}

/// Uniform evaluation grid with `res` + 1 nodes per axis.
pub fn grid_points(d: usize, res: usize) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..d {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                (0..=res).map(move |i| {
                    let mut v = p.clone();
                    v.push(i as f64 / res as f64);
                    v
                })
            })
            .collect();
    }
    pts
}

/// sup over the grid of |K_W f - f|.
pub fn projection_error_sup<R: Real>(c: &CoefficientField<R>, basis: &Basis<R>, w: &[u32], res: usize) -> f64 {
    use rayon::prelude::*;
    let proj = c.project(w);
    let zero = vec![0u32; c.dim()];
    grid_points(c.dim(), res)
        .par_iter()
        .map(|x| {
            let xr: Vec<R> = x.iter().map(|v| R::of(*v)).collect();
            (c.eval(basis, &xr, &zero) - proj.eval(basis, &xr, &zero)).f64().abs()
        })
        .reduce(|| 0.0, f64::max)
}

fn log_ratio(n: f64) -> Result<f64, SpaceError> {
    if !(n >= 3.0) {
        return Err(SpaceError::SampleSize(n));
    }
    Ok(n / n.ln())
}

/// (n / ln n)^{-alpha* / (2 alpha* + d)}.
pub fn rate_eps(n: f64, alpha: &[f64]) -> Result<f64, SpaceError> {
    let a = harmonic_mean(alpha)?;
    let d = alpha.len() as f64;
    Ok(log_ratio(n)?.powf(-a / (2.0 * a + d)))
}

/// (n / ln n)^{-alpha* (1 - sum r_l/alpha_l) / (2 alpha* + d)}.
pub fn rate_eps_r(n: f64, alpha: &[f64], r: &[u32]) -> Result<f64, SpaceError> {
    let a = harmonic_mean(alpha)?;
    let d = alpha.len() as f64;
    let frac: f64 = alpha.iter().zip(r).map(|(al, r)| *r as f64 / al).sum();
    Ok(log_ratio(n)?.powf(-a * (1.0 - frac) / (2.0 * a + d)))
}

/// 2(r_l + 1) alpha* d / (2 alpha* + d) < alpha_l < eta + 1 for every axis.
pub fn in_adaptation_region(alpha: &[f64], r: &[u32], eta: f64) -> bool {
    let Ok(a) = harmonic_mean(alpha) else { return false };
    let d = alpha.len() as f64;
    alpha
        .iter()
        .zip(r)
        .all(|(al, r)| 2.0 * (*r as f64 + 1.0) * a * d / (2.0 * a + d) < *al && *al < eta + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{build_basis, index_range, BasisSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn harmonic_means() {
        assert_eq!(harmonic_mean(&[2.0, 2.0]).unwrap(), 2.0);
        assert!((harmonic_mean(&[1.0, 3.0]).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(harmonic_mean(&[0.7]).unwrap(), 0.7);
        assert_eq!(harmonic_mean(&[1.0, 0.0]), Err(SpaceError::Smoothness));
    }

    #[test]
    fn single_coefficient_sup_norm() {
        let mut f = CoefficientField::<f64>::zeros(&[1], &[4]);
        assert_eq!(besov_norm(&f, &BesovBallSpec::sup(vec![1.0], 1.0), false).unwrap(), 0.0);
        f.set(&TensorIndex { j: vec![2], k: vec![0] }, 1.0).unwrap();
        let v = besov_norm(&f, &BesovBallSpec::sup(vec![1.0], 1.0), false).unwrap();
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn finite_norm_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = index_range(&[1], &[5]);
        let vals: Vec<f64> = idx.iter().map(|_| rng.gen::<f64>() - 0.5).collect();
        let f = CoefficientField::from_dense(&[1], &[5], &vals);
        let ball = BesovBallSpec { alpha: vec![0.8], radius: 1.0, p: 2.0, q: 2.0 };
        let a = 0.8;
        let mut father = 0.0;
        let mut mother = 0.0;
        for (i, v) in idx.iter().zip(&vals) {
            if i.j[0] == 0 {
                father += v * v;
            }
        }
        for j in 1..5u32 {
            let mut s = 0.0;
            for (i, v) in idx.iter().zip(&vals) {
                if i.j[0] == j {
                    s += v * v;
                }
            }
            let w = 2f64.powf(a * j as f64 * (1.0 + 0.5 / a - 0.5 / a));
            mother += (w * s.sqrt()).powi(2);
        }
        let want = father.sqrt() + mother.sqrt();
        assert!((besov_norm(&f, &ball, false).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn envelope_truth_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ball = BesovBallSpec::sup(vec![1.0], 1.0);
        let f: CoefficientField<f64> = sample_truth(&ball, &[1], &[5], TruthMode::Envelope, &mut rng).unwrap();
        for k in 0..4 {
            assert!((f.get(&TensorIndex { j: vec![2], k: vec![k] }).abs() - 0.125).abs() < 1e-15);
        }
        assert!((besov_norm(&f, &ball, false).unwrap() - 1.0).abs() < 1e-12);
        let zero = BesovBallSpec::sup(vec![1.0], 0.0);
        let z: CoefficientField<f64> = sample_truth(&zero, &[1], &[5], TruthMode::Random, &mut rng).unwrap();
        assert!(z.iter().all(|(_, v)| v == 0.0));
    }

    #[test]
    fn random_truth_inside_ball() {
        let ball = BesovBallSpec::sup(vec![1.0, 2.0], 1.5);
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f: CoefficientField<f64> = sample_truth(&ball, &[1, 1], &[3, 4], TruthMode::Random, &mut rng).unwrap();
            assert!(besov_norm(&f, &ball, false).unwrap() <= 1.5);
        }
    }

    #[test]
    fn projection_masks() {
        let idx = index_range(&[1, 1], &[4, 3]);
        let vals: Vec<f64> = (0..idx.len()).map(|i| i as f64 + 1.0).collect();
        let f = CoefficientField::from_dense(&[1, 1], &[4, 3], &vals);
        assert_eq!(f.project(&[4, 3]), f);
        let p = f.project(&[1, 1]);
        assert_eq!(p.len(), 4);
        let w = [3, 2];
        let p = f.project(&w);
        for (i, v) in f.iter() {
            let keep = i.j.iter().zip(&w).all(|(j, w)| j < w);
            assert_eq!(p.get(&i), if keep { v } else { 0.0 });
        }
        assert_eq!(p.project(&w), p);
    }

    #[test]
    fn eval_matches_naive_sum() {
        let basis: Basis<f64> = build_basis(&BasisSpec::d4(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let idx = index_range(&[2], &[5]);
        let vals: Vec<f64> = idx.iter().map(|_| rng.gen::<f64>() - 0.5).collect();
        let f = CoefficientField::from_dense(&[2], &[5], &vals);
        for t in 0..10 {
            let x = rng.gen::<f64>();
            for r in 0..2 {
                let naive: f64 = idx.iter().zip(&vals).map(|(i, v)| v * basis.eval_tensor(i, &[x], &[r]).unwrap()).sum();
                assert!((f.eval(&basis, &[x], &[r]) - naive).abs() < 1e-9, "t={t} r={r}");
            }
        }
        let basis2: Basis<f64> = build_basis(&BasisSpec::d4(2)).unwrap();
        let idx = index_range(&[2, 2], &[4, 3]);
        let vals: Vec<f64> = idx.iter().map(|_| rng.gen::<f64>() - 0.5).collect();
        let f = CoefficientField::from_dense(&[2, 2], &[4, 3], &vals);
        for _ in 0..10 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let naive: f64 = idx.iter().zip(&vals).map(|(i, v)| v * basis2.eval_tensor(i, &x, &[0, 1]).unwrap()).sum();
            assert!((f.eval(&basis2, &x, &[0, 1]) - naive).abs() < 1e-8);
        }
    }

    #[test]
    fn json_roundtrip() {
        let mut f = CoefficientField::<f64>::zeros(&[1, 2], &[3, 3]);
        f.set(&TensorIndex { j: vec![2, 1], k: vec![3, 0] }, -0.25).unwrap();
        f.set(&TensorIndex { j: vec![0, 1], k: vec![1, 2] }, 0.5).unwrap();
        let back = CoefficientField::<f64>::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
        assert!(CoefficientField::<f64>::from_json(r#"{"base_level":[1],"truncation":[2],"coefficients":[{"j":[5],"k":[0],"value":1.0}]}"#).is_err());
    }

    #[test]
    fn rates() {
        // n / ln n = 2^12 solved numerically
        let mut n = 4096.0 * 8.0;
        for _ in 0..100 {
            n = 4096.0 * f64::ln(n);
        }
        assert!((rate_eps(n, &[1.0]).unwrap() - 0.0625).abs() < 1e-12);
        assert_eq!(rate_eps_r(1000.0, &[1.3], &[0]).unwrap(), rate_eps(1000.0, &[1.3]).unwrap());
        let v = rate_eps_r(500.0, &[2.0, 2.0], &[1, 0]).unwrap();
        assert!((v - (500.0f64 / 500f64.ln()).powf(-1.0 / 6.0)).abs() < 1e-14);
        assert!(rate_eps(2.0, &[1.0]).is_err());
        assert!(in_adaptation_region(&[0.75], &[0], 1.0));
        assert!(!in_adaptation_region(&[0.9], &[1], 1.0));
        assert!(in_adaptation_region(&[2.0, 2.0], &[0, 0], 10.0));
    }

    #[test]
    fn single_level_truncation_error() {
        let basis: Basis<f64> = build_basis(&BasisSpec::haar(1)).unwrap();
        let mut f = CoefficientField::<f64>::zeros(&[1], &[4]);
        f.set(&TensorIndex { j: vec![3], k: vec![2] }, 0.3).unwrap();
        let e = projection_error_sup(&f, &basis, &[3], 64);
        assert!((e - 0.3 * 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(projection_error_sup(&f, &basis, &[4], 64), 0.0);
    }
}
