//! Designs, empirical-CDF discrepancy, data generation and the Riemann gap.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::function_space::CoefficientField;
use crate::wavelet::Basis;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("grid needs m >= 2, got {0}")]
    GridSize(usize),
    #[error("exact discrepancy limited to d <= 3 (got {0})")]
    Dimension(usize),
    #[error("corner table of {0} entries exceeds the cap")]
    TooLarge(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Grid,
    MidpointGrid,
    UniformRandom,
}

/// n points in [0,1]^d stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub d: usize,
    pub points: Vec<f64>,
    pub kind: DesignKind,
    pub seed: Option<u64>,
}

impl Design {
    pub fn n(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            self.points.len() / self.d
        }
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks(self.d)
    }
}

fn tensorize(axis: &[f64], d: usize) -> Vec<f64> {
    let m = axis.len();
    let n = m.pow(d as u32);
    let mut pts = Vec::with_capacity(n * d);
    for i in 0..n {
        let mut rem = i;
        let mut row = vec![0.0; d];
        for l in (0..d).rev() {
            row[l] = axis[rem % m];
            rem /= m;
        }
        pts.extend(row);
    }
    pts
}

/// Tensor grid {(j-1)/(m-1)}^d in lexicographic row order.
pub fn make_grid_design(m: usize, d: usize) -> Result<Design, DesignError> {
    if m < 2 {
        return Err(DesignError::GridSize(m));
    }
    let axis: Vec<f64> = (0..m).map(|j| j as f64 / (m - 1) as f64).collect();
    Ok(Design { d, points: tensorize(&axis, d), kind: DesignKind::Grid, seed: None })
}

/// Tensor grid {(2i-1)/(2m)}^d.
pub fn make_midpoint_grid(m: usize, d: usize) -> Design {
    let axis: Vec<f64> = (1..=m).map(|i| (2 * i - 1) as f64 / (2 * m) as f64).collect();
    Design { d, points: tensorize(&axis, d), kind: DesignKind::MidpointGrid, seed: None }
}

pub fn sample_uniform_design<G: Rng + ?Sized>(n: usize, d: usize, seed: u64, rng: &mut G) -> Design {
    let points = (0..n * d).map(|_| rng.gen::<f64>()).collect();
    Design { d, points, kind: DesignKind::UniformRandom, seed: Some(seed) }
}

/// Builds a design of roughly n points; grid kinds use m = round(n^{1/d}).
pub fn make_design<G: Rng + ?Sized>(kind: DesignKind, n: usize, d: usize, seed: u64, rng: &mut G) -> Result<Design, DesignError> {
    let m = (n as f64).powf(1.0 / d as f64).round() as usize;
    match kind {
        DesignKind::Grid => make_grid_design(m, d),
        DesignKind::MidpointGrid => Ok(make_midpoint_grid(m, d)),
        DesignKind::UniformRandom => Ok(sample_uniform_design(n, d, seed, rng)),
    }
}

/// Exact sup_x |G_n(x) - prod x_l| over corner candidates (closed and just-below limits).
pub fn cdf_discrepancy(design: &Design) -> Result<f64, DesignError> {
    let d = design.d;
    let n = design.n();
    if d > 3 {
        return Err(DesignError::Dimension(d));
    }
    if n == 0 {
        return Ok(1.0);
    }
    // per-axis candidates: distinct coordinates plus 1
    let mut cands: Vec<Vec<f64>> = Vec::with_capacity(d);
    for l in 0..d {
        let mut c: Vec<f64> = design.iter().map(|p| p[l]).collect();
        c.push(1.0);
        c.sort_by(f64::total_cmp);
        c.dedup();
        cands.push(c);
    }
    let sizes: Vec<usize> = cands.iter().map(|c| c.len()).collect();
    let total: usize = sizes.iter().product();
    if total > 1 << 26 {
        return Err(DesignError::TooLarge(total));
    }
    let strides: Vec<usize> = (0..d).map(|l| sizes[l + 1..].iter().product()).collect();
    let mut hist = vec![0u32; total];
    for p in design.iter() {
        let mut off = 0;
        for l in 0..d {
            let r = cands[l].binary_search_by(|v| v.total_cmp(&p[l])).expect("coordinate is a candidate");
            off += r * strides[l];
        }
        hist[off] += 1;
    }
    // inclusive prefix sums along each axis
    for l in 0..d {
        for off in 0..total {
            let r = (off / strides[l]) % sizes[l];
            if r > 0 {
                hist[off] += hist[off - strides[l]];
            }
        }
    }
    let nf = n as f64;
    let mut worst = 0.0f64;
    let mut ranks = vec![0usize; d];
    for off in 0..total {
        let mut vol = 1.0;
        for l in 0..d {
            ranks[l] = (off / strides[l]) % sizes[l];
            vol *= cands[l][ranks[l]];
        }
        worst = worst.max(hist[off] as f64 / nf - vol);
        // strictly below the corner: one rank lower on every axis
        let below = if ranks.iter().all(|r| *r > 0) {
            hist[off - strides.iter().sum::<usize>()] as f64
        } else {
            0.0
        };
        worst = worst.max(vol - below / nf);
    }
    Ok(worst)
}

/// Monte-Carlo lower bound on the discrepancy for any d.
pub fn cdf_discrepancy_mc<G: Rng + ?Sized>(design: &Design, samples: usize, rng: &mut G) -> f64 {
    let n = design.n().max(1) as f64;
    let mut worst = 0.0f64;
    let mut x = vec![0.0; design.d];
    for _ in 0..samples {
        for v in x.iter_mut() {
            *v = rng.gen::<f64>();
        }
        let count = design.iter().filter(|p| p.iter().zip(&x).all(|(a, b)| a <= b)).count();
        let vol: f64 = x.iter().product();
        worst = worst.max((count as f64 / n - vol).abs());
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub seed: u64,
    pub sigma0: f64,
    pub kind: DesignKind,
    pub truth_ref: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionDataset {
    pub design: Design,
    pub y: Vec<f64>,
    pub sigma0: f64,
    pub truth_ref: String,
    pub seed: u64,
}

impl RegressionDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// CSV with header x_1..x_d,y plus a JSON sidecar at `path.json`.
    pub fn save(&self, path: &Path) -> Result<(), DesignError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let head: Vec<String> = (1..=self.design.d).map(|l| format!("x_{l}")).collect();
        writeln!(w, "{},y", head.join(","))?;
        for (p, y) in self.design.iter().zip(&self.y) {
            let cols: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{},{y:?}", cols.join(","))?;
        }
        let meta = DatasetMeta { seed: self.seed, sigma0: self.sigma0, kind: self.design.kind, truth_ref: self.truth_ref.clone() };
        std::fs::write(sidecar(path), serde_json::to_string_pretty(&meta).expect("serializable"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DesignError> {
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(sidecar(path))?)
            .map_err(|e| DesignError::Format(e.to_string()))?;
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let head = lines.next().ok_or_else(|| DesignError::Format("empty file".into()))??;
        let d = head.split(',').count() - 1;
        let mut points = Vec::new();
        let mut y = Vec::new();
        for line in lines {
            let line = line?;
            let vals: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| DesignError::Format(e.to_string()))?;
            if vals.len() != d + 1 {
                return Err(DesignError::Format(format!("row width {}", vals.len())));
            }
            points.extend_from_slice(&vals[..d]);
            y.push(vals[d]);
        }
        Ok(RegressionDataset {
            design: Design { d, points, kind: meta.kind, seed: Some(meta.seed) },
            y,
            sigma0: meta.sigma0,
            truth_ref: meta.truth_ref,
            seed: meta.seed,
        })
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Truth values at the design points.
pub fn truth_values(truth: &CoefficientField<f64>, basis: &Basis<f64>, design: &Design) -> Vec<f64> {
    use rayon::prelude::*;
    let r = vec![0u32; design.d];
    design.points.par_chunks(design.d).map(|p| truth.eval(basis, p, &r)).collect()
}

/// y_i = f(X_i) + sigma0 z_i.
pub fn gen_data_from_values<G: Rng + ?Sized>(
    f: &[f64],
    design: &Design,
    sigma0: f64,
    seed: u64,
    truth_ref: &str,
    rng: &mut G,
) -> RegressionDataset {
    let y = f
        .iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma0 * z
        })
        .collect();
    RegressionDataset { design: design.clone(), y, sigma0, truth_ref: truth_ref.to_string(), seed }
}

pub fn gen_data<G: Rng + ?Sized>(
    truth: &CoefficientField<f64>,
    basis: &Basis<f64>,
    design: &Design,
    sigma0: f64,
    seed: u64,
    rng: &mut G,
) -> RegressionDataset {
    let f = truth_values(truth, basis, design);
    gen_data_from_values(&f, design, sigma0, seed, "field", rng)
}

/// Composite Simpson weights on `cells` (even) intervals of [0,1].
fn simpson_weights(cells: usize) -> Vec<f64> {
    let h = 1.0 / cells as f64;
    (0..=cells)
        .map(|i| {
            let w = if i == 0 || i == cells {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiemannGap {
    pub gap: f64,
    pub bound_ratio: f64,
}

/// gap = | |mean f(X_i)| - |int f| |; bound_ratio = gap n / int |d^d f / dx_1..dx_d|.
/// `cells` is the per-axis quadrature resolution (2^14 for d = 1, 2^9 for d = 2 by default).
pub fn riemann_gap(f: &dyn Fn(&[f64]) -> f64, design: &Design, cells: usize) -> RiemannGap {
    let d = design.d;
    let n = design.n();
    let mean = design.iter().map(f).sum::<f64>() / n as f64;
    let cells = cells + cells % 2;
    let w = simpson_weights(cells);
    let nodes = cells + 1;
    let total = nodes.pow(d as u32);
    let mut vals = vec![0.0; total];
    let mut integral = 0.0;
    let mut x = vec![0.0; d];
    for (off, v) in vals.iter_mut().enumerate() {
        let mut rem = off;
        let mut wt = 1.0;
        for l in (0..d).rev() {
            let i = rem % nodes;
            rem /= nodes;
            x[l] = i as f64 / cells as f64;
            wt *= w[i];
        }
        *v = f(&x);
        integral += wt * *v;
    }
    // total variation of the mixed derivative: sum of |mixed differences| over cells
    let mut tv = 0.0;
    let cell_count = cells.pow(d as u32);
    for c in 0..cell_count {
        let mut rem = c;
        let mut lower = vec![0usize; d];
        for l in (0..d).rev() {
            lower[l] = rem % cells;
            rem /= cells;
        }
        let mut diff = 0.0;
        for corner in 0..(1usize << d) {
            let mut off = 0;
            let mut ones = 0;
            for l in 0..d {
                let bit = (corner >> l) & 1;
                ones += bit;
                off = off * nodes + lower[l] + bit;
            }
            let sign = if (d - ones) % 2 == 0 { 1.0 } else { -1.0 };
            diff += sign * vals[off];
        }
        tv += diff.abs();
    }
    let gap = (mean.abs() - integral.abs()).abs();
    RiemannGap { gap, bound_ratio: gap * n as f64 / tv }
}

/// Default per-axis quadrature resolution.
pub fn default_cells(d: usize) -> usize {
    if d == 1 {
        1 << 14
    } else {
        1 << 9
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grids() {
        assert_eq!(make_grid_design(2, 1).unwrap().points, vec![0.0, 1.0]);
        let g = make_grid_design(3, 2).unwrap();
        assert_eq!(g.n(), 9);
        assert_eq!(g.point(4), &[0.5, 0.5]);
        assert_eq!(make_grid_design(10, 1).unwrap().points[3], 3.0 / 9.0);
        assert!(make_grid_design(1, 1).is_err());
        assert_eq!(make_midpoint_grid(4, 1).points, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(make_midpoint_grid(2, 2).n(), 4);
    }

    #[test]
    fn discrepancy_hand_cases() {
        let d = make_grid_design(2, 1).unwrap();
        assert!((cdf_discrepancy(&d).unwrap() - 0.5).abs() < 1e-15);
        for m in [1usize, 3, 8, 33] {
            let v = cdf_discrepancy(&make_midpoint_grid(m, 1)).unwrap();
            assert!((v - 0.5 / m as f64).abs() < 1e-14, "m={m} v={v}");
        }
        let mut prev = f64::INFINITY;
        for m in [8usize, 16, 32, 64, 128, 256] {
            let v = cdf_discrepancy(&make_grid_design(m, 1).unwrap()).unwrap();
            assert!(v <= prev / 2.0 + 1e-12, "m={m}");
            prev = v;
        }
    }

    #[test]
    fn discrepancy_two_dim_against_dense_scan() {
        let g = make_grid_design(3, 2).unwrap();
        let exact = cdf_discrepancy(&g).unwrap();
        let res = 1000;
        let mut scan = 0.0f64;
        for a in 0..=res {
            for b in 0..=res {
                let x = [a as f64 / res as f64, b as f64 / res as f64];
                let c = g.iter().filter(|p| p[0] <= x[0] && p[1] <= x[1]).count() as f64 / 9.0;
                scan = scan.max((c - x[0] * x[1]).abs());
            }
        }
        assert!(scan <= exact + 1e-12);
        assert!(exact - scan < 2e-3, "exact={exact} scan={scan}");
    }

    #[test]
    fn riemann_gap_cases() {
        let g = make_grid_design(10, 1).unwrap();
        assert!(riemann_gap(&|x| x[0], &g, 1 << 14).gap < 1e-12);
        let r = riemann_gap(&|x| x[0] * x[0], &g, 1 << 14);
        // (1/m) sum_{i<m} (i/(m-1))^2 - 1/3 = 1/(6(m-1))
        assert!((r.gap - 1.0 / 54.0).abs() < 1e-12, "gap={}", r.gap);
        // spacing 1/10 (eleven nodes): 1/60
        let r = riemann_gap(&|x| x[0] * x[0], &make_grid_design(11, 1).unwrap(), 1 << 14);
        assert!((r.gap - 1.0 / 60.0).abs() < 1e-12, "gap={}", r.gap);
    }

    #[test]
    fn uniform_design_is_reproducible_and_centred() {
        let a = sample_uniform_design(4096, 2, 7, &mut ChaCha8Rng::seed_from_u64(7));
        let b = sample_uniform_design(4096, 2, 7, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        let n = a.n() as f64;
        for l in 0..2 {
            let m: f64 = a.iter().map(|p| p[l]).sum::<f64>() / n;
            assert!((m - 0.5).abs() < 3.0 / (12.0 * n).sqrt());
        }
        assert_eq!(sample_uniform_design(0, 2, 1, &mut ChaCha8Rng::seed_from_u64(1)).n(), 0);
    }

    #[test]
    fn noise_is_gaussian_and_centred() {
        let g = make_grid_design(8192, 1).unwrap();
        let zero = vec![0.0; g.n()];
        let ds = gen_data_from_values(&zero, &g, 2.0, 5, "zero", &mut ChaCha8Rng::seed_from_u64(5));
        let n = ds.n() as f64;
        let mean = ds.y.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * 2.0 / n.sqrt());
        let var = ds.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let kurt = ds.y.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n / (var * var);
        assert!((kurt - 3.0).abs() < 1.0);
        let exact = gen_data_from_values(&[1.5, -2.0], &make_grid_design(2, 1).unwrap(), 0.0, 1, "t", &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(exact.y, vec![1.5, -2.0]);
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let g = make_grid_design(5, 2).unwrap();
        let f: Vec<f64> = g.iter().map(|p| p[0] - p[1]).collect();
        let ds = gen_data_from_values(&f, &g, 0.3, 11, "diff", &mut ChaCha8Rng::seed_from_u64(11));
        ds.save(&path).unwrap();
        let back = RegressionDataset::load(&path).unwrap();
        assert_eq!(back.y, ds.y);
        assert_eq!(back.design.points, ds.design.points);
        assert_eq!(back.sigma0, 0.3);
    }
}
