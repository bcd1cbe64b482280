//! Dyadic tables of the scaling function and wavelet via the two-scale relation.

use nalgebra::{DMatrix, DVector};

/// phi(i 2^-depth) for i = 0..=(L-1) 2^depth, where L = h.len().
pub fn scaling_table(h: &[f64], depth: u32) -> Vec<f64> {
    let len = h.len();
    let sqrt2 = 2f64.sqrt();
    // integer samples: fixed point of v_a = sqrt2 sum_b h_{2a-b} v_b with sum v = 1
    let mut a = DMatrix::<f64>::zeros(len, len);
    for r in 0..len {
        for c in 0..len {
            let t = 2 * r as isize - c as isize;
            if t >= 0 && (t as usize) < len {
                a[(r, c)] = sqrt2 * h[t as usize];
            }
        }
        a[(r, r)] -= 1.0;
    }
    for c in 0..len {
        a[(len - 1, c)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(len);
    rhs[len - 1] = 1.0;
    let ints = a.lu().solve(&rhs).expect("two-scale eigenproblem is regular");

    let scale = 1usize << depth;
    let size = (len - 1) * scale + 1;
    let mut t = vec![0.0; size];
    for i in 0..len {
        if i * scale < size {
            t[i * scale] = ints[i];
        }
    }
    for s in 1..=depth {
        let stride = 1usize << (depth - s);
        let mut i = stride;
        while i < size {
            let mut acc = 0.0;
            for (k, hk) in h.iter().enumerate() {
                let idx = 2 * i as isize - (k * scale) as isize;
                if idx >= 0 && (idx as usize) < size {
                    acc += hk * t[idx as usize];
                }
            }
            t[i] = sqrt2 * acc;
            i += 2 * stride;
        }
    }
    t
}

/// psi(i 2^-depth) from psi(x) = sqrt2 sum_k g_k phi(2x - k), on the same support as phi.
pub fn wavelet_table(g: &[f64], phi: &[f64], depth: u32) -> Vec<f64> {
    let scale = 1isize << depth;
    let sqrt2 = 2f64.sqrt();
    (0..phi.len())
        .map(|i| {
            let mut acc = 0.0;
            for (k, gk) in g.iter().enumerate() {
                let idx = 2 * i as isize - k as isize * scale;
                if idx >= 0 && (idx as usize) < phi.len() {
                    acc += gk * phi[idx as usize];
                }
            }
            sqrt2 * acc
        })
        .collect()
}

/// Centered differences with one-sided ends.
pub fn difference(t: &[f64], step: f64) -> Vec<f64> {
    let n = t.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                (t[1] - t[0]) / step
            } else if i == n - 1 {
                (t[n - 1] - t[n - 2]) / step
            } else {
                (t[i + 1] - t[i - 1]) / (2.0 * step)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::filters::daubechies;

    #[test]
    fn d4_integer_values_match_closed_form() {
        let h = daubechies(2).unwrap();
        let t = scaling_table(&h, 3);
        let s3 = 3f64.sqrt();
        assert!((t[8] - (1.0 + s3) / 2.0).abs() < 1e-12);
        assert!((t[16] - (1.0 - s3) / 2.0).abs() < 1e-12);
        assert!(t[0].abs() < 1e-12 && t[24].abs() < 1e-12);
    }

    #[test]
    fn partition_of_unity_at_every_node() {
        for p in 2..=4 {
            let h = daubechies(p).unwrap();
            let depth = 6;
            let t = scaling_table(&h, depth);
            let scale = 1usize << depth;
            for off in 0..scale {
                let s: f64 = (0..h.len()).filter_map(|k| t.get(off + k * scale)).sum();
                assert!((s - 1.0).abs() < 1e-10, "p={p} off={off} sum={s}");
            }
        }
    }
}
