//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain binary so the
//! lines are always shown; exits non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavess::experiment::{parse_spec, read_result_csv, run, run_rates, save_spec, Check, ExperimentSpec, Mode, RunOutput};
use wavess::function_space::{projection_error_sup, sample_truth, BesovBallSpec, CoefficientField, TruthMode};
use wavess::wavelet::{build_basis, Basis, BasisSpec};

struct Line {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn spec(mode: Mode, json: serde_json::Value, out: &Path) -> ExperimentSpec {
    let mut s = parse_spec(&json.to_string()).expect("acceptance spec parses");
    s.output = out.to_path_buf();
    s.resolve(mode).expect("acceptance spec is valid")
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn pick<'a>(out: &'a RunOutput, prefix: &str) -> Vec<&'a Check> {
    out.checks.iter().filter(|c| c.name.starts_with(prefix)).collect()
}

fn summarize(checks: &[&Check]) -> (bool, String) {
    let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
    let detail = checks.iter().map(|c| format!("{} [{}]", c.name, c.detail)).collect::<Vec<_>>().join("; ");
    (passed, detail)
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let mut lines: Vec<Line> = Vec::new();
    let mut push = |id, name, passed, detail: String| lines.push(Line { id, name, passed, detail });

    // 1-4: basis, Gram and Riemann-gap suite
    let bc = spec(
        Mode::BasisCheck,
        serde_json::json!({
            "d": 1,
            "basis_check": {
                "top_level": 6, "quadrature": 16, "orth_tol": 1e-4,
                "haar_n": 1024, "trunc": 5, "exact_tol": 1e-9,
                "d4_n": [4096, 8192, 16384],
                "riemann_m": [8, 16, 32, 64, 128, 256]
            }
        }),
        &root.join("c1"),
    );
    let (bc_out, bc_time) = timed(|| run(&bc).expect("basis-check runs"));
    let (ok, detail) = summarize(&pick(&bc_out, "orthonormality"));
    push(1, "basis orthonormality", ok && bc_time < Duration::from_secs(30), format!("{detail}; suite {:.1} s", bc_time.as_secs_f64()));
    let mut c2 = pick(&bc_out, "haar midpoint gram");
    c2.extend(pick(&bc_out, "d4 diagonal"));
    c2.extend(pick(&bc_out, "d4 off-diagonal ratio"));
    let (ok, detail) = summarize(&c2);
    push(2, "Gram lemma suite", ok && bc_time < Duration::from_secs(120), detail);
    let c3 = pick(&bc_out, "eigen sandwich");
    let (ok, detail) = summarize(&c3);
    push(3, "eigenvalue sandwich", ok && c3.len() == 3 && bc_time < Duration::from_secs(60), detail);
    let (ok, detail) = summarize(&pick(&bc_out, "riemann"));
    push(4, "Riemann gap", ok, detail);

    // 5: Gibbs against exact enumeration on six Haar mothers
    let oc = spec(
        Mode::OracleCheck,
        serde_json::json!({
            "d": 1, "n_grid": [128], "sigma0": 1.0,
            "basis": {"family": "haar", "base_level": [1]},
            "prior": {"slab": {"kind": "gaussian", "tau": 2.0}},
            "gibbs": {"iters": 20000, "burnin": 1000, "thin": 1},
            "oracle": {"trunc": [3], "inclusion_tol": 0.02, "mean_tol": 0.02}
        }),
        &root.join("c5"),
    );
    let (oc_out, oc_time) = timed(|| run(&oc).expect("oracle-check runs"));
    let (_, rows) = read_result_csv(&root.join("c5/oracle.csv"), &oc).expect("oracle table");
    let mothers = rows.iter().filter(|r| r[1] != "0").count();
    let (ok, detail) = summarize(&oc_out.checks.iter().collect::<Vec<_>>());
    push(5, "oracle equivalence", ok && mothers == 6 && oc_time < Duration::from_secs(120), format!("{mothers} mothers; {detail}"));

    // 6: coefficient-wise posterior on the orthogonal Haar design
    let qc = spec(
        Mode::QwnCheck,
        serde_json::json!({
            "d": 1, "n_grid": [1024], "sigma0": 1.0, "design": "midpoint_grid",
            "basis": {"family": "haar", "base_level": [1]},
            "qwn": {"trunc": [5], "tol": 1e-6}
        }),
        &root.join("c6"),
    );
    let qc_out = run(&qc).expect("qwn-check runs");
    let (ok, detail) = summarize(&qc_out.checks.iter().collect::<Vec<_>>());
    push(6, "quasi-white-noise exactness", ok && detail.contains("exact:"), detail);

    // 7-8: rate slope and event frequencies from one run
    let rates = spec(
        Mode::Rates,
        serde_json::json!({
            "d": 1, "alpha": [1.0], "r": [0], "R": 1.0, "sigma0": 0.5,
            "basis": {"family": "haar", "base_level": [1]},
            "n_grid": [1024, 2048, 4096, 8192, 16384, 32768],
            "replicates": 20,
            "diagnostics": {"gamma_lo": 0.5, "gamma_hi": 4.0}
        }),
        &root.join("c7"),
    );
    let (res, rt) = timed(|| run_rates(&rates).expect("rates run"));
    // alpha* / (2 alpha* + d) with alpha* = d = 1
    let target = -1.0 / 3.0;
    match res.fit {
        Some(f) => push(
            7,
            "rate slope",
            (f.slope - target).abs() <= 0.12 && rt < Duration::from_secs(1800),
            format!("slope {:.4} (se {:.4}) vs {target:.4}; {:.1} s", f.slope, f.slope_se, rt.as_secs_f64()),
        ),
        None => push(7, "rate slope", false, "no slope".into()),
    }
    let sub: Vec<_> = res.aggregates.iter().filter(|a| (2048..=16384).contains(&a.n)).collect();
    let bc_seq: Vec<f64> = sub.iter().map(|a| a.b_c).collect();
    let cc_seq: Vec<f64> = sub.iter().map(|a| a.c_c).collect();
    let last = sub.last().expect("n = 2^14 present");
    let inv = |v: &[f64]| v.windows(2).filter(|w| w[1] > w[0]).count();
    push(
        8,
        "thresholding events",
        last.n == 16384 && last.b_c <= 0.05 && last.c_c <= 0.05 && inv(&bc_seq) <= 1 && inv(&cc_seq) <= 1,
        format!("B^c {bc_seq:?}, C^c {cc_seq:?} over n = 2^11..2^14"),
    );

    // 9: sigma consistency
    let sig = spec(
        Mode::Rates,
        serde_json::json!({
            "d": 1, "n_grid": [8192], "replicates": 10, "sigma0": 1.0,
            "basis": {"family": "haar", "base_level": [1]},
            "prior": {"sigma_prior": {"kind": "inverse_gamma", "shape": 1.0, "rate": 1.0}}
        }),
        &root.join("c9"),
    );
    run(&sig).expect("sigma run");
    let (head, rows) = read_result_csv(&root.join("c9/replicates.csv"), &sig).expect("replicate table");
    let col = head.iter().position(|h| h == "sigma_hat").expect("sigma column");
    let med: Vec<f64> = rows.iter().map(|r| r[col].parse().unwrap()).collect();
    let inside = med.iter().filter(|s| (0.9..=1.1).contains(*s)).count();
    push(9, "sigma consistency", med.len() == 10 && inside == 10, format!("{inside}/10 medians in [0.9, 1.1]: {med:.4?}"));

    // 10-11: tests
    let tests = spec(
        Mode::Tests,
        serde_json::json!({
            "d": 1, "alpha": [1.0], "R": 1.0,
            "basis": {"family": "daubechies", "order": 2, "base_level": [2]},
            "n_grid": [1024, 2048, 4096, 8192, 16384, 32768, 65536],
            "tests": {"lr_replicates": 10000, "plugin_replicates": 200, "calibration_replicates": 500, "level": 0.05}
        }),
        &root.join("c10"),
    );
    let t_out = run(&tests).expect("tests run");
    let mut c10 = pick(&t_out, "separation");
    c10.extend(pick(&t_out, "discrepancy"));
    c10.extend(pick(&t_out, "polynomial"));
    let (ok, detail) = summarize(&c10);
    push(10, "adversarial separation", ok && c10.len() == 3, detail);
    let (ok, detail) = summarize(&pick(&t_out, "plug-in at n=8192"));
    push(11, "plug-in test", ok, detail);

    // 12: projection error, with the Haar closed form 2^{1-W} - 2^{-(L-1)} for an envelope truth to level L
    let ball = BesovBallSpec::sup(vec![1.0], 1.0);
    let mut ok12 = true;
    let mut d12 = Vec::new();
    for bs in [BasisSpec::haar(1), BasisSpec::d4(1)] {
        let b: Basis<f64> = build_basis(&bs).expect("basis");
        let t: CoefficientField<f64> = sample_truth(&ball, b.base_level(), &[14], TruthMode::Envelope, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let ratios: Vec<f64> = (3..=7u32).map(|w| projection_error_sup(&t, &b, &[w], 1 << 15) * 2f64.powi(w as i32)).collect();
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, c), v| (a.min(*v), c.max(*v)));
        ok12 &= hi < 2.0 * lo;
        if bs.family == wavess::wavelet::Family::Haar {
            for (w, r) in (3..=7).zip(&ratios) {
                ok12 &= (r - (2.0 - 2f64.powi(w - 13))).abs() < 1e-9;
            }
        }
        d12.push(format!("{:?}: {ratios:.4?}", bs.family));
    }
    push(12, "projection error", ok12, d12.join("; "));

    // 13: rerun through the binary at two thread counts and compare against the in-process run
    let exe = env!("CARGO_BIN_EXE_wavess");
    let small_tests = spec(
        Mode::Tests,
        serde_json::json!({
            "n_grid": [1024, 2048, 4096, 8192],
            "tests": {"lr_replicates": 2000, "plugin_replicates": 50, "calibration_replicates": 100}
        }),
        &root.join("c13t"),
    );
    run(&small_tests).expect("small tests run");
    let mut ok13 = true;
    let mut d13 = Vec::new();
    for (label, s) in [("basis-check", &bc), ("oracle-check", &oc), ("qwn-check", &qc), ("sigma", &sig), ("tests", &small_tests)] {
        let sp = root.join(format!("{label}.json"));
        save_spec(s, &sp).unwrap();
        let reference = csv_bytes(&s.output);
        for threads in ["1", "4"] {
            let out = root.join(format!("{label}-t{threads}"));
            let st = Command::new(exe)
                .args([s.mode().name(), "--threads", threads, "--spec"])
                .arg(&sp)
                .arg("--out")
                .arg(&out)
                .output()
                .expect("binary runs");
            let same = csv_bytes(&out) == reference && !reference.is_empty();
            ok13 &= same && st.status.code().is_some();
            d13.push(format!("{label}@{threads}: {}", if same { "identical" } else { "differs" }));
        }
    }
    push(13, "determinism", ok13, d13.join(", "));

    let mut failed = 0;
    lines.sort_by_key(|l| l.id);
    for l in &lines {
        if !l.passed {
            failed += 1;
        }
        println!("criterion {:>2} {}: {} | {}", l.id, l.name, if l.passed { "PASS" } else { "FAIL" }, l.detail);
    }
    println!("acceptance: {} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
