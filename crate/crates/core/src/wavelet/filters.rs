//! Daubechies low-pass filters, normalised so that the taps sum to sqrt(2).

const D6: [f64; 6] = [
    0.332_670_552_950_082_6,
    0.806_891_509_311_092_5,
    0.459_877_502_118_491_5,
    -0.135_011_020_010_254_6,
    -0.085_441_273_882_026_66,
    0.035_226_291_885_709_53,
];

const D8: [f64; 8] = [
    0.230_377_813_308_896_4,
    0.714_846_570_552_915_4,
    0.630_880_767_929_858_7,
    -0.027_983_769_416_859_854,
    -0.187_034_811_719_093_1,
    0.030_841_381_835_560_764,
    0.032_883_011_666_885_34,
    -0.010_597_401_785_069_032,
];

/// Low-pass taps for `p` vanishing moments (p = 1 is Haar).
pub fn daubechies(p: u32) -> Option<Vec<f64>> {
    match p {
        1 => Some(vec![std::f64::consts::FRAC_1_SQRT_2; 2]),
        2 => {
            let s3 = 3f64.sqrt();
            let c = 4.0 * 2f64.sqrt();
            Some(vec![(1.0 + s3) / c, (3.0 + s3) / c, (3.0 - s3) / c, (1.0 - s3) / c])
        }
        3 => Some(D6.to_vec()),
        4 => Some(D8.to_vec()),
        _ => None,
    }
}

/// High-pass taps g_k = (-1)^k h_{L-1-k}.
pub fn highpass(h: &[f64]) -> Vec<f64> {
    let l = h.len();
    (0..l)
        .map(|k| if k % 2 == 0 { h[l - 1 - k] } else { -h[l - 1 - k] })
        .collect()
}
