//! Orthonormal wavelet systems on [0,1] and their tensor products.

pub mod cascade;
pub mod cdv;
pub mod filters;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum BasisError {
    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),
    #[error("cascade depth {depth} outside 8..=22")]
    Depth { depth: u32 },
    #[error("base level {level} too coarse on axis {axis} (need 2^N >= {need})")]
    BaseLevel { axis: usize, level: u32, need: u32 },
    #[error("derivative order {r} not supported (eta = {eta})")]
    Derivative { r: u32, eta: f64 },
    #[error("level {level} needs cascade depth >= {need}")]
    LevelTooFine { level: u32, need: u32 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index out of range: {0}")]
    Index(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Haar,
    Daubechies,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Cdv,
    Periodic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub family: Family,
    /// Vanishing moments (ignored for Haar).
    #[serde(default = "default_order")]
    pub order: u32,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
    #[serde(default = "default_depth")]
    pub cascade_depth: u32,
    pub base_level: Vec<u32>,
}

fn default_order() -> u32 {
    2
}
fn default_boundary() -> Boundary {
    Boundary::Cdv
}
fn default_depth() -> u32 {
    12
}

impl BasisSpec {
    pub fn haar(d: usize) -> Self {
        BasisSpec { family: Family::Haar, order: 1, boundary: Boundary::Cdv, cascade_depth: 12, base_level: vec![1; d] }
    }

    pub fn d4(d: usize) -> Self {
        BasisSpec { family: Family::Daubechies, order: 2, boundary: Boundary::Cdv, cascade_depth: 12, base_level: vec![2; d] }
    }

    pub fn dim(&self) -> usize {
        self.base_level.len()
    }

    /// Vanishing moments of the underlying filter.
    pub fn vanishing_moments(&self) -> u32 {
        match self.family {
            Family::Haar => 1,
            Family::Daubechies => self.order,
        }
    }

    /// Declared regularity: 0 for Haar, 1 for the Daubechies filters provided.
    pub fn eta(&self) -> f64 {
        match self.family {
            Family::Haar => 0.0,
            Family::Daubechies => 1.0,
        }
    }

    pub fn max_derivative(&self) -> u32 {
        self.eta().floor() as u32
    }
}

/// Father or mother layer of a univariate system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layer {
    Father,
    Mother,
}

/// Tensor index; `j[l] == base_level[l] - 1` marks the father layer on axis l.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TensorIndex {
    pub j: Vec<u32>,
    pub k: Vec<u32>,
}

impl TensorIndex {
    pub fn is_father(&self, base: &[u32]) -> bool {
        self.j.iter().zip(base).all(|(j, n)| *j + 1 == *n)
    }
}

/// Fathers first, then every other level vector in lexicographic order.
pub fn index_range(base: &[u32], trunc: &[u32]) -> Vec<TensorIndex> {
    assert_eq!(base.len(), trunc.len());
    assert!(base.iter().zip(trunc).all(|(n, j)| j >= n), "truncation below base level");
    let d = base.len();
    let mut levels: Vec<Vec<u32>> = vec![vec![]];
    for l in 0..d {
        let mut next = Vec::new();
        for prefix in &levels {
            for j in (base[l] - 1)..trunc[l] {
                let mut v = prefix.clone();
                v.push(j);
                next.push(v);
            }
        }
        levels = next;
    }
    let mut out = Vec::new();
    for j in levels {
        let counts: Vec<u32> = j.iter().zip(base).map(|(j, n)| 1u32 << (*j).max(*n)).collect();
        let mut ks: Vec<Vec<u32>> = vec![vec![]];
        for c in &counts {
            let mut next = Vec::with_capacity(ks.len() * *c as usize);
            for prefix in &ks {
                for k in 0..*c {
                    let mut v = prefix.clone();
                    v.push(k);
                    next.push(v);
                }
            }
            ks = next;
        }
        for k in ks {
            out.push(TensorIndex { j: j.clone(), k });
        }
    }
    out
}

#[derive(Clone, Debug)]
struct Table<R> {
    /// values[r][i] at node i 2^-depth, derivative order r
    values: Vec<Vec<R>>,
    scale: R,
    end: R,
}

impl<R: Real> Table<R> {
    fn new(v: Vec<f64>, depth: u32, max_r: u32) -> Self {
        let step = 1.0 / (1u64 << depth) as f64;
        let mut all = vec![v];
        for _ in 0..max_r {
            let next = cascade::difference(all.last().unwrap(), step);
            all.push(next);
        }
        let end = (all[0].len() - 1) as f64 * step;
        Table {
            values: all.into_iter().map(|t| t.into_iter().map(R::of).collect()).collect(),
            scale: R::of((1u64 << depth) as f64),
            end: R::of(end),
        }
    }

    #[inline]
    fn at(&self, u: R, r: u32) -> R {
        if u < R::zero() || u > self.end {
            return R::zero();
        }
        let t = &self.values[r as usize];
        let s = u * self.scale;
        let i = s.floor();
        let iu = i.to_usize().unwrap_or(0);
        if iu + 1 >= t.len() {
            return t[t.len() - 1];
        }
        let f = s - i;
        t[iu] + (t[iu + 1] - t[iu]) * f
    }
}

#[derive(Clone, Debug)]
struct CascadeSet<R> {
    p: u32,
    phi: Table<R>,
    psi: Table<R>,
    left_phi: Vec<Table<R>>,
    left_psi: Vec<Table<R>>,
    right_phi: Vec<Table<R>>,
    right_psi: Vec<Table<R>>,
}

#[derive(Clone, Debug)]
enum Kind<R> {
    Haar,
    Cascade(Box<CascadeSet<R>>),
}

/// Immutable, shareable univariate system applied on every axis.
#[derive(Clone, Debug)]
pub struct Basis<R> {
    spec: BasisSpec,
    kind: Kind<R>,
}

pub fn build_basis<R: Real>(spec: &BasisSpec) -> Result<Basis<R>, BasisError> {
    if spec.base_level.is_empty() {
        return Err(BasisError::Dimension("no axes".into()));
    }
    let p = spec.vanishing_moments();
    let kind = match spec.family {
        Family::Haar => Kind::Haar,
        Family::Daubechies => {
            let h = filters::daubechies(p)
                .filter(|_| p >= 2)
                .ok_or_else(|| BasisError::UnsupportedFamily(format!("daubechies p={p}")))?;
            if !(8..=22).contains(&spec.cascade_depth) {
                return Err(BasisError::Depth { depth: spec.cascade_depth });
            }
            let depth = spec.cascade_depth;
            let max_r = spec.max_derivative();
            let phi = cascade::scaling_table(&h, depth);
            let psi = cascade::wavelet_table(&filters::highpass(&h), &phi, depth);
            let (left_phi, left_psi, right_phi, right_psi) = if spec.boundary == Boundary::Cdv {
                let left = cdv::half_line(&h, &phi, depth);
                let hr: Vec<f64> = h.iter().rev().copied().collect();
                let phir: Vec<f64> = phi.iter().rev().copied().collect();
                let right = cdv::half_line(&hr, &phir, depth);
                let conv = |v: Vec<Vec<f64>>| -> Vec<Table<R>> {
                    v.into_iter().map(|t| Table::new(t, depth, max_r)).collect()
                };
                (conv(left.phi), conv(left.psi), conv(right.phi), conv(right.psi))
            } else {
                (vec![], vec![], vec![], vec![])
            };
            Kind::Cascade(Box::new(CascadeSet {
                p,
                phi: Table::new(phi, depth, max_r),
                psi: Table::new(psi, depth, max_r),
                left_phi,
                left_psi,
                right_phi,
                right_psi,
            }))
        }
    };
    let need = match (spec.family, spec.boundary) {
        (Family::Daubechies, Boundary::Cdv) => (2 * p).max(2 * spec.eta().ceil() as u32),
        _ => (2.0 * spec.eta()).ceil().max(1.0) as u32,
    };
    for (axis, &level) in spec.base_level.iter().enumerate() {
        if level < 1 || (1u64 << level) < need as u64 {
            return Err(BasisError::BaseLevel { axis, level, need });
        }
    }
    Ok(Basis { spec: spec.clone(), kind })
}

impl<R: Real> Basis<R> {
    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn base_level(&self) -> &[u32] {
        &self.spec.base_level
    }

    /// Length of the support of an interior mother wavelet at level 0.
    pub fn support_width(&self) -> u32 {
        2 * self.spec.vanishing_moments() - 1
    }

    /// Finest level that may be evaluated.
    pub fn max_level(&self) -> u32 {
        match self.kind {
            Kind::Haar => 40,
            Kind::Cascade(_) => self.spec.cascade_depth - 6,
        }
    }

    pub fn check_level(&self, j: u32) -> Result<(), BasisError> {
        if j > self.max_level() {
            return Err(BasisError::LevelTooFine { level: j, need: j + 6 });
        }
        Ok(())
    }

    pub fn check_derivative(&self, r: u32) -> Result<(), BasisError> {
        if r > self.spec.max_derivative() {
            return Err(BasisError::Derivative { r, eta: self.spec.eta() });
        }
        Ok(())
    }

    /// Checked univariate evaluation of phi_{j,k} or psi_{j,k} (derivative order r).
    pub fn eval_1d(&self, layer: Layer, j: u32, k: u32, x: R, r: u32) -> Result<R, BasisError> {
        self.check_derivative(r)?;
        self.check_level(j)?;
        if k >= 1u32 << j {
            return Err(BasisError::Index(format!("k={k} at level {j}")));
        }
        Ok(self.value_1d(layer, j, k, x, r))
    }

    /// Unchecked univariate evaluation; zero outside [0,1].
    pub fn value_1d(&self, layer: Layer, j: u32, k: u32, x: R, r: u32) -> R {
        if x < R::zero() || x > R::one() {
            return R::zero();
        }
        let two = R::of(2.0);
        let nj = 1u64 << j;
        let u = x * R::of(nj as f64);
        let amp = two.powf(R::of(j as f64 * (0.5 + r as f64)));
        match &self.kind {
            Kind::Haar => {
                if r > 0 {
                    return R::zero();
                }
                let cell = u.floor().to_u64().unwrap_or(0).min(nj - 1);
                if cell != k as u64 {
                    return R::zero();
                }
                match layer {
                    Layer::Father => amp,
                    Layer::Mother => {
                        if u - R::of(cell as f64) < R::of(0.5) {
                            amp
                        } else {
                            -amp
                        }
                    }
                }
            }
            Kind::Cascade(c) => {
                let p = c.p as u64;
                let (interior, left, right) = match layer {
                    Layer::Father => (&c.phi, &c.left_phi, &c.right_phi),
                    Layer::Mother => (&c.psi, &c.left_psi, &c.right_psi),
                };
                let k64 = k as u64;
                if self.spec.boundary == Boundary::Cdv {
                    if k64 < p {
                        return amp * left[k as usize].at(u, r);
                    }
                    if k64 >= nj - p {
                        let v = right[(nj - 1 - k64) as usize].at(R::of(nj as f64) - u, r);
                        return if r % 2 == 1 { -amp * v } else { amp * v };
                    }
                    amp * interior.at(u - R::of((k64 + 1 - p) as f64), r)
                } else {
                    // periodised standard translates
                    let width = (2 * p - 1) as f64;
                    let v = u - R::of(k as f64);
                    let njf = nj as f64;
                    let lo = (-v.f64() / njf).ceil() as i64;
                    let hi = ((width - v.f64()) / njf).floor() as i64;
                    let mut acc = R::zero();
                    for m in lo..=hi {
                        acc = acc + interior.at(v + R::of(m as f64 * njf), r);
                    }
                    amp * acc
                }
            }
        }
    }

    /// Shifts k at level j whose function may be nonzero at x (superset).
    pub fn candidates(&self, j: u32, x: R, out: &mut Vec<u32>) {
        out.clear();
        if x < R::zero() || x > R::one() {
            return;
        }
        let nj = 1i64 << j;
        let u = x.f64() * nj as f64;
        match &self.kind {
            Kind::Haar => out.push((u.floor() as i64).clamp(0, nj - 1) as u32),
            Kind::Cascade(c) => {
                let p = c.p as i64;
                let base = u.floor() as i64;
                if self.spec.boundary == Boundary::Cdv {
                    let edge = p.min(nj);
                    for k in 0..edge {
                        out.push(k as u32);
                    }
                    for k in (base - p - 1).max(edge)..=(base + p).min(nj - 1 - p) {
                        out.push(k as u32);
                    }
                    for k in (nj - p).max(edge)..nj {
                        out.push(k as u32);
                    }
                } else {
                    for i in -1..=(2 * p) {
                        out.push((base - i).rem_euclid(nj) as u32);
                    }
                    out.sort_unstable();
                    out.dedup();
                }
            }
        }
    }

    /// Product of univariate factors; father layer where j_l = N_l - 1.
    pub fn eval_tensor(&self, idx: &TensorIndex, x: &[R], r: &[u32]) -> Result<R, BasisError> {
        let d = self.dim();
        if idx.j.len() != d || idx.k.len() != d || x.len() != d || r.len() != d {
            return Err(BasisError::Dimension(format!("expected {d} axes")));
        }
        let mut acc = R::one();
        for l in 0..d {
            let n = self.spec.base_level[l];
            if idx.j[l] + 1 < n {
                return Err(BasisError::Index(format!("level {} below father layer", idx.j[l])));
            }
            let (layer, j) = if idx.j[l] + 1 == n { (Layer::Father, n) } else { (Layer::Mother, idx.j[l]) };
            acc = acc * self.eval_1d(layer, j, idx.k[l], x[l], r[l])?;
            if acc == R::zero() {
                return Ok(acc);
            }
        }
        Ok(acc)
    }

    /// Unchecked tensor evaluation for hot loops.
    pub fn value_tensor(&self, idx: &TensorIndex, x: &[R], r: &[u32]) -> R {
        let mut acc = R::one();
        for l in 0..x.len() {
            let n = self.spec.base_level[l];
            let (layer, j) = if idx.j[l] + 1 == n { (Layer::Father, n) } else { (Layer::Mother, idx.j[l]) };
            acc = acc * self.value_1d(layer, j, idx.k[l], x[l], r[l]);
            if acc == R::zero() {
                break;
            }
        }
        acc
    }

    /// Writes node, value, derivative for the level-0 tables (interior, then edges).
    pub fn export_tables<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "function,node,value,derivative")?;
        let Kind::Cascade(c) = &self.kind else {
            for (name, vals) in [("phi", [1.0, 1.0, 0.0]), ("psi", [1.0, -1.0, 0.0])] {
                for (i, v) in vals.iter().enumerate() {
                    writeln!(w, "{name},{},{},0", i as f64 * 0.5, v)?;
                }
            }
            return Ok(());
        };
        let step = 1.0 / (1u64 << self.spec.cascade_depth) as f64;
        let mut dump = |name: String, t: &Table<R>| -> std::io::Result<()> {
            for (i, v) in t.values[0].iter().enumerate() {
                let d = t.values.get(1).map(|d| d[i].f64()).unwrap_or(0.0);
                writeln!(w, "{name},{},{},{}", i as f64 * step, v.f64(), d)?;
            }
            Ok(())
        };
        dump("phi".into(), &c.phi)?;
        dump("psi".into(), &c.psi)?;
        for (i, t) in c.left_phi.iter().enumerate() {
            dump(format!("phi_left_{i}"), t)?;
        }
        for (i, t) in c.left_psi.iter().enumerate() {
            dump(format!("psi_left_{i}"), t)?;
        }
        for (i, t) in c.right_phi.iter().enumerate() {
            dump(format!("phi_right_{i}"), t)?;
        }
        for (i, t) in c.right_psi.iter().enumerate() {
            dump(format!("psi_right_{i}"), t)?;
        }
        Ok(())
    }

    /// Level-0 scaling table values (empty for Haar).
    pub fn scaling_nodes(&self) -> Vec<R> {
        match &self.kind {
            Kind::Haar => vec![],
            Kind::Cascade(c) => c.phi.values[0].clone(),
        }
    }
}

/// Sampled univariate function: nonzero values on cells start..start+vals.len().
pub struct Sampled {
    pub start: usize,
    pub vals: Vec<f64>,
}

/// Samples a univariate basis function at the cell midpoints (i + 1/2) 2^-res.
pub fn sample_1d<R: Real>(basis: &Basis<R>, layer: Layer, j: u32, k: u32, r: u32, res: u32) -> Sampled {
    let n = 1usize << res;
    let h = 1.0 / n as f64;
    let all: Vec<f64> = (0..n).map(|i| basis.value_1d(layer, j, k, R::of((i as f64 + 0.5) * h), r).f64()).collect();
    let lo = all.iter().position(|v| *v != 0.0).unwrap_or(0);
    let hi = all.iter().rposition(|v| *v != 0.0).map(|i| i + 1).unwrap_or(lo);
    Sampled { start: lo, vals: all[lo..hi].to_vec() }
}

/// Midpoint-rule inner product of two sampled functions on a grid with `n` cells.
pub fn midpoint_dot(a: &Sampled, b: &Sampled, n: usize) -> f64 {
    let lo = a.start.max(b.start);
    let hi = (a.start + a.vals.len()).min(b.start + b.vals.len());
    let mut s = 0.0;
    for i in lo..hi {
        s += a.vals[i - a.start] * b.vals[i - b.start];
    }
    s / n as f64
}

/// Univariate system up to level `top` (exclusive): fathers at the base level then mothers.
pub fn system_1d<R: Real>(basis: &Basis<R>, top: u32) -> Vec<(Layer, u32, u32)> {
    let n = basis.base_level()[0];
    let mut out: Vec<(Layer, u32, u32)> = (0..1u32 << n).map(|k| (Layer::Father, n, k)).collect();
    for j in n..top {
        out.extend((0..1u32 << j).map(|k| (Layer::Mother, j, k)));
    }
    out
}

/// Fine-grid Gram matrix of a univariate family.
pub fn quadrature_gram_1d<R: Real>(basis: &Basis<R>, funcs: &[(Layer, u32, u32)], res: u32) -> Vec<Vec<f64>> {
    use rayon::prelude::*;
    let n = 1usize << res;
    let sampled: Vec<Sampled> = funcs.par_iter().map(|&(l, j, k)| sample_1d(basis, l, j, k, 0, res)).collect();
    (0..funcs.len())
        .into_par_iter()
        .map(|a| (0..funcs.len()).map(|b| midpoint_dot(&sampled[a], &sampled[b], n)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d4() -> Basis<f64> {
        build_basis(&BasisSpec::d4(1)).unwrap()
    }

    #[test]
    fn haar_closed_form_values() {
        let b: Basis<f64> = build_basis(&BasisSpec::haar(1)).unwrap();
        let s2 = 2f64.sqrt();
        assert_eq!(b.eval_1d(Layer::Mother, 1, 0, 0.2, 0).unwrap(), s2);
        assert_eq!(b.eval_1d(Layer::Mother, 1, 0, 0.8, 0).unwrap(), 0.0);
        assert_eq!(b.eval_1d(Layer::Mother, 0, 0, 0.75, 0).unwrap(), -1.0);
        assert_eq!(b.eval_1d(Layer::Father, 0, 0, 0.999, 0).unwrap(), 1.0);
        assert!(matches!(b.eval_1d(Layer::Mother, 1, 0, 0.2, 1), Err(BasisError::Derivative { .. })));
    }

    #[test]
    fn haar_tensor_father_is_one() {
        let b: Basis<f64> = build_basis(&BasisSpec { base_level: vec![0 + 1, 1], ..BasisSpec::haar(2) }).unwrap();
        let idx = TensorIndex { j: vec![0, 0], k: vec![0, 1] };
        assert_eq!(b.eval_tensor(&idx, &[0.3, 0.7], &[0, 0]).unwrap(), 2.0f64.sqrt() * 2.0f64.sqrt());
    }

    #[test]
    fn index_range_counts() {
        assert_eq!(index_range(&[1], &[3]).len(), 8);
        let r = index_range(&[2], &[2]);
        assert_eq!(r.len(), 4);
        assert!(r.iter().all(|i| i.is_father(&[2])));
        assert_eq!(index_range(&[1, 1], &[2, 2]).len(), 16);
        let r = index_range(&[1, 2], &[3, 4]);
        assert_eq!(r.len(), 8 * 16);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn d4_cdv_orthonormal_to_level_five() {
        let b = d4();
        let fam = system_1d(&b, 6);
        let g = quadrature_gram_1d(&b, &fam, 18);
        let mut worst: f64 = 0.0;
        for a in 0..fam.len() {
            for c in 0..fam.len() {
                let want = if a == c { 1.0 } else { 0.0 };
                worst = worst.max((g[a][c] - want).abs());
            }
        }
        assert!(worst < 1e-4, "worst deviation {worst}");
    }

    #[test]
    fn periodic_interior_matches_cdv_interior() {
        let cdv = d4();
        let per: Basis<f64> = build_basis(&BasisSpec { boundary: Boundary::Periodic, ..BasisSpec::d4(1) }).unwrap();
        for j in 3..6u32 {
            for kc in 2..(1u32 << j) - 2 {
                for t in 0..50 {
                    let x = t as f64 / 49.0;
                    let a = cdv.value_1d(Layer::Mother, j, kc, x, 0);
                    let b = per.value_1d(Layer::Mother, j, kc - 1, x, 0);
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn candidates_cover_support() {
        for b in [d4(), build_basis(&BasisSpec { boundary: Boundary::Periodic, ..BasisSpec::d4(1) }).unwrap()] {
            let mut c = Vec::new();
            for j in 2..6u32 {
                for t in 0..=200 {
                    let x = t as f64 / 200.0;
                    b.candidates(j, x, &mut c);
                    for k in 0..1u32 << j {
                        if b.value_1d(Layer::Mother, j, k, x, 0) != 0.0 {
                            assert!(c.contains(&k), "j={j} k={k} x={x}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn f32_basis_agrees_with_f64() {
        let b64 = d4();
        let b32: Basis<f32> = build_basis(&BasisSpec::d4(1)).unwrap();
        for t in 0..100 {
            let x = t as f64 / 99.0;
            let a = b64.value_1d(Layer::Mother, 3, 0, x, 0);
            let c = b32.value_1d(Layer::Mother, 3, 0, x as f32, 0) as f64;
            assert!((a - c).abs() < 1e-4);
        }
    }
}
