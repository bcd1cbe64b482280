//! Boundary-adapted scaling functions and wavelets on the half-line [0, inf).
//!
//! Edge scaling functions are the orthonormalised restrictions of the
//! polynomial-reproducing combinations sum_k <x^l, phi(.-k)> phi(x-k) over the
//! translates that straddle the origin (centered convention, interior translates
//! k >= p kept). Edge wavelets span the orthogonal complement of V_0 and the kept
//! interior wavelets inside V_1, found as a null space in V_1 coordinates.

use nalgebra::{DMatrix, DVector};

pub struct HalfLine {
    /// Edge scaling tables on [0, 2p-1], step 2^-depth.
    pub phi: Vec<Vec<f64>>,
    /// Edge wavelet tables starting at 0, step 2^-depth.
    pub psi: Vec<Vec<f64>>,
    /// Rows: edge scaling functions in orthonormal V_1 coordinates
    /// (p edge columns, then sqrt2 phi_c(2x-m) for m = p..=p+ncol-p-1).
    pub phi_v1: DMatrix<f64>,
    pub psi_v1: DMatrix<f64>,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Moments of the centered scaling function phi_c(x) = phi(x + p - 1).
fn centered_moments(h: &[f64], p: usize) -> Vec<f64> {
    let sqrt2 = 2f64.sqrt();
    let mut m = vec![1.0; p];
    for i in 1..p {
        let mut s = 0.0;
        for (a, ma) in m.iter().enumerate().take(i) {
            let hk: f64 = h.iter().enumerate().map(|(k, v)| v * (k as f64).powi((i - a) as i32)).sum();
            s += binom(i, a) * ma * hk;
        }
        m[i] = sqrt2 / 2f64.powi(i as i32 + 1) * s / (1.0 - 2f64.powi(-(i as i32)));
    }
    let shift = -((p - 1) as f64);
    (0..p)
        .map(|i| (0..=i).map(|a| binom(i, a) * m[a] * shift.powi((i - a) as i32)).sum())
        .collect()
}

pub fn half_line(h: &[f64], phi_std: &[f64], depth: u32) -> HalfLine {
    let p = h.len() / 2;
    let pi = p as isize;
    let sqrt2 = 2f64.sqrt();
    let g = super::filters::highpass(h);
    let hc = |i: isize| -> f64 {
        let t = i + pi - 1;
        if t >= 0 && (t as usize) < h.len() {
            h[t as usize]
        } else {
            0.0
        }
    };
    let gc = |i: isize| -> f64 {
        let t = i + pi - 1;
        if t >= 0 && (t as usize) < g.len() {
            g[t as usize]
        } else {
            0.0
        }
    };
    let mc = centered_moments(h, p);
    let coef = |l: usize, k: isize| -> f64 {
        (0..=l).map(|a| binom(l, a) * (k as f64).powi((l - a) as i32) * mc[a]).sum()
    };

    // window of interior V_1 translates m = p..=mw
    let mw = 8 * pi + 4;
    let nint = (mw - pi + 1) as usize;
    let ncol = p + nint;

    // preboundary refinement: tilde(x) = D tilde(2x) + E phi_c(2x - .)
    let mut e = DMatrix::<f64>::zeros(p, nint);
    for l in 0..p {
        for m in pi..=mw {
            let mut v = coef(l, m) / 2f64.powi(l as i32);
            let mut kk = pi;
            while 2 * kk - pi + 1 <= m + pi {
                v -= sqrt2 * coef(l, kk) * hc(m - 2 * kk);
                kk += 1;
            }
            e[(l, (m - pi) as usize)] = v;
        }
    }
    let eet = &e * e.transpose();
    let gram = DMatrix::from_fn(p, p, |a, b| eet[(a, b)] / (2.0 - 2f64.powi(-((a + b) as i32))));
    let chol = gram.cholesky().expect("edge Gram matrix is positive definite");
    let lmat = chol.l();
    let linv = lmat.clone().try_inverse().expect("triangular factor invertible");
    let dmat = DMatrix::from_fn(p, p, |a, b| if a == b { 2f64.powi(-(a as i32)) } else { 0.0 });

    let mut phi_v1 = DMatrix::<f64>::zeros(p, ncol);
    let pe = &linv * &dmat * &lmat / sqrt2;
    let pint = &linv * &e / sqrt2;
    phi_v1.view_mut((0, 0), (p, p)).copy_from(&pe);
    phi_v1.view_mut((0, p), (p, nint)).copy_from(&pint);

    // generators of V_0 and of the kept interior wavelets, truncated to the window
    let mut rows: Vec<DVector<f64>> = (0..p).map(|i| phi_v1.row(i).transpose()).collect();
    let mut kk = pi;
    while 2 * kk - pi + 1 <= mw {
        let mut rp = DVector::<f64>::zeros(ncol);
        let mut rq = DVector::<f64>::zeros(ncol);
        for i in (-pi + 1)..=pi {
            let m = 2 * kk + i;
            if m >= pi && m <= mw {
                rp[p + (m - pi) as usize] = hc(i);
                rq[p + (m - pi) as usize] = gc(i);
            }
        }
        rows.push(rp);
        rows.push(rq);
        kk += 1;
    }
    let gen = DMatrix::from_fn(rows.len(), ncol, |r, c| rows[r][c]);
    let eig = (gen.transpose() * &gen).symmetric_eigen();
    let scale = eig.eigenvalues.amax();
    let mut null: Vec<DVector<f64>> = (0..ncol)
        .filter(|&i| eig.eigenvalues[i] < 1e-10 * scale)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    assert_eq!(null.len(), p, "edge wavelet space has dimension p");

    // staggered supports: eliminate from the right, then orthonormalise
    let mut order = vec![0usize; p];
    let mut remaining: Vec<usize> = (0..p).collect();
    let mut slot = p;
    for c in (0..ncol).rev() {
        if remaining.is_empty() {
            break;
        }
        let (pos, &piv) = remaining
            .iter()
            .enumerate()
            .max_by(|a, b| null[*a.1][c].abs().total_cmp(&null[*b.1][c].abs()))
            .unwrap();
        if null[piv][c].abs() < 1e-9 {
            continue;
        }
        let pivot = null[piv].clone();
        for &o in remaining.iter() {
            if o != piv {
                let f = null[o][c] / pivot[c];
                null[o] -= &pivot * f;
                null[o][c] = 0.0;
            }
        }
        slot -= 1;
        order[slot] = piv;
        remaining.remove(pos);
    }
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(p);
    for &i in &order {
        let mut v = null[i].clone();
        for b in &basis {
            let d = v.dot(b);
            v -= b * d;
        }
        v /= v.norm();
        for x in v.iter_mut() {
            if x.abs() < 1e-13 {
                *x = 0.0;
            }
        }
        let big = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
        if big < 0.0 {
            v = -v;
        }
        basis.push(v);
    }
    let psi_v1 = DMatrix::from_fn(p, ncol, |r, c| basis[r][c]);

    // tables
    let unit = 1usize << depth;
    let tilde: Vec<Vec<f64>> = (0..p)
        .map(|l| {
            (0..phi_std.len())
                .map(|t| {
                    let mut v = 0.0;
                    for k in (-pi + 1)..pi {
                        let idx = t as isize + (pi - 1 - k) * unit as isize;
                        if idx >= 0 && (idx as usize) < phi_std.len() {
                            v += coef(l, k) * phi_std[idx as usize];
                        }
                    }
                    v
                })
                .collect()
        })
        .collect();
    let phi: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            (0..phi_std.len())
                .map(|t| (0..=i).map(|l| linv[(i, l)] * tilde[l][t]).sum())
                .collect()
        })
        .collect();
    let psi: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            let row = psi_v1.row(i);
            // support end in units of 2^-(depth+1)
            let mut end2 = 0usize;
            for c in 0..ncol {
                if row[c] != 0.0 {
                    let e2 = if c < p { 2 * p - 1 } else { 2 * p + (c - p) };
                    end2 = end2.max(e2);
                }
            }
            let len = end2 * (unit / 2) + 1;
            (0..len)
                .map(|t| {
                    let mut v = 0.0;
                    for a in 0..p {
                        if let Some(x) = phi[a].get(2 * t) {
                            v += row[a] * x;
                        }
                    }
                    for c in p..ncol {
                        if row[c] == 0.0 {
                            continue;
                        }
                        let m = (c - p) as isize + pi;
                        let idx = 2 * t as isize - (m - pi + 1) * unit as isize;
                        if idx >= 0 && (idx as usize) < phi_std.len() {
                            v += row[c] * phi_std[idx as usize];
                        }
                    }
                    sqrt2 * v
                })
                .collect()
        })
        .collect();
    HalfLine { phi, psi, phi_v1, psi_v1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::cascade::scaling_table;
    use crate::wavelet::filters::daubechies;

    fn quad(a: &[f64], b: &[f64], step: f64) -> f64 {
        let n = a.len().min(b.len());
        let mut s: f64 = (0..n).map(|i| a[i] * b[i]).sum();
        s -= 0.5 * a[0] * b[0];
        s * step
    }

    #[test]
    fn v1_coordinates_are_orthonormal_and_complementary() {
        for p in 2..=4 {
            let h = daubechies(p).unwrap();
            let phi = scaling_table(&h, 8);
            let hl = half_line(&h, &phi, 8);
            let all = DMatrix::from_fn(2 * p as usize, hl.phi_v1.ncols(), |r, c| {
                if r < p as usize {
                    hl.phi_v1[(r, c)]
                } else {
                    hl.psi_v1[(r - p as usize, c)]
                }
            });
            let gram = &all * all.transpose();
            let err = (gram - DMatrix::identity(2 * p as usize, 2 * p as usize)).amax();
            assert!(err < 1e-10, "p={p} err={err}");
        }
    }

    #[test]
    fn edge_tables_are_orthonormal_by_quadrature() {
        let depth = 12;
        let h = daubechies(2).unwrap();
        let phi = scaling_table(&h, depth);
        let hl = half_line(&h, &phi, depth);
        let step = 1.0 / (1u64 << depth) as f64;
        for a in 0..2 {
            for b in 0..2 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((quad(&hl.phi[a], &hl.phi[b], step) - want).abs() < 1e-4);
                assert!((quad(&hl.psi[a], &hl.psi[b], step) - want).abs() < 1e-4);
                assert!(quad(&hl.phi[a], &hl.psi[b], step).abs() < 1e-4);
            }
        }
    }
}
