//! Acceptance suite: one PASS/FAIL line per criterion, each at its stated tolerance.
//!
//! Runs with `harness = false` so the report always prints. The process fails if a criterion fails
//! that is not listed in `KNOWN_FAILURES`; a listed criterion that passes is reported.

use std::collections::BTreeSet;
use std::time::Instant;

use rbmlab::diagram_lab::singular_table;
use rbmlab::exp_cli::{execute, load_config, read_results, ExperimentResult, RunOptions, Verdict, RESULT_FILE};
use rbmlab::poly_engine::{
    bound_sinc_limit, chebyshev_u, contour_value, default_points, default_radius, eval_scalar, PolyFamily,
};

/// Criteria that fail on the default configs, with the reason.
const KNOWN_FAILURES: &[(&str, &str)] = &[
    (
        "tables",
        "the printed d = 4 row lists (0,3) and (0,4), which the discriminant marks convergent, and omits (1,2), which it marks singular",
    ),
    (
        "polynomials",
        "the envelope grid runs to √(1−a4), past the lemma's range x ≤ 1−a4+C/n²; at the top point n·a4 = 0.1 leaves a 9% gap",
    ),
    (
        "edge_universality",
        "β = 1 at N = 128: the RBM top eigenvalue sits about 0.03 below the A_d-shifted GOE edge, KS ≈ 0.24",
    ),
    (
        "factorization",
        "Var(Tr P_6) ≈ 50 at L = 1024, W = 64 is real; with SE ≈ 21 from one probe the covariance z-score sits near 3",
    ),
];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn run(recipe: &str, overlay: Option<&str>) -> (ExperimentResult, f64) {
    let (cfg, _) = load_config(recipe, overlay, false).expect("config");
    let t = Instant::now();
    let r = execute(recipe, &cfg, &RunOptions::default()).expect("run");
    (r, t.elapsed().as_secs_f64())
}

/// Comparisons whose quantity starts with `prefix`: (all pass, count, worst measurement).
fn verdicts(r: &ExperimentResult, prefix: &str) -> (bool, usize, f64) {
    let cs: Vec<_> = r.comparisons.iter().filter(|c| c.quantity.starts_with(prefix)).collect();
    let worst = cs.iter().map(|c| c.measurement.abs()).fold(0.0, f64::max);
    (!cs.is_empty() && cs.iter().all(|c| c.verdict == Verdict::Pass), cs.len(), worst)
}

fn row(r: &ExperimentResult, quantity: &str, n: &str) -> (f64, f64) {
    let x = r.rows.iter().find(|x| x.quantity == quantity && x.n == n).unwrap_or_else(|| panic!("row {quantity} {n}"));
    (x.value, x.stderr)
}

/// Theta graph at d = 1: ∫_{[0,1]^3} (α1α2 + α1α3 + α2α3)^{-1/2} dα. Splitting by the largest α and
/// integrating the inner coordinate leaves 3 ∫_0^1 2u(√(1+2u²) − u)/(1+u²) du, done by Simpson.
fn theta_quadrature() -> f64 {
    let f = |u: f64| 2.0 * u * ((1.0 + 2.0 * u * u).sqrt() - u) / (1.0 + u * u);
    let m = 20_000;
    let h = 1.0 / m as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..m {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    3.0 * s * h / 3.0
}

fn identity_and_oracle(out: &mut Vec<Outcome>) {
    let (r, secs) = run("identity_suite", None);
    let names = ["calv_recursion", "p_expansion", "loop_free_recursion", "renormalized_expansion"];
    let mut all = true;
    let mut worst = 0.0f64;
    for n in names {
        let (ok, count, w) = verdicts(&r, n);
        all &= ok && count == 2;
        worst = worst.max(w);
    }
    out.push(Outcome {
        name: "identity_suite",
        pass: all && secs < 120.0,
        detail: format!("max residual {worst:.2e} ≤ 1e-9 over 20 instances per β; {secs:.0} s < 120 s"),
    });
    let (a, _, wa) = verdicts(&r, "edge_operator_vs_enumeration");
    let (b, _, wb) = verdicts(&r, "v2_minus_h2_plus_i");
    out.push(Outcome {
        name: "oracle_equivalence",
        pass: a && b,
        detail: format!("edge-operator vs brute force {wa:.2e}, V2 − (H² − I) {wb:.2e}, both ≤ 1e-10"),
    });
}

fn kernel_suite(out: &mut Vec<Outcome>) {
    let (llt, s1) = run("llt_check", None);
    let (hk, s2) = run("heat_kernel", None);
    let (d, _, dv) = verdicts(&llt, "theta_duality");
    let (c, _, cv) = verdicts(&llt, "chapman_kolmogorov");
    let (l, _, lv) = verdicts(&llt, "llt_relative_error");
    let (h, _, hv) = verdicts(&hk, "heat_kernel_fitted_c1");
    let (v, _, _) = verdicts(&hk, "vertex_split_nonfinite");
    let secs = s1 + s2;
    out.push(Outcome {
        name: "kernel_suite",
        pass: d && c && l && h && v && secs < 300.0,
        detail: format!(
            "duality {dv:.1e}, CK {cv:.1e}, LLT {lv:.1e}, fitted C1 {hv:.3} ≤ 3, vertex split finite; {secs:.0} s"
        ),
    });
}

fn moment_reduction(out: &mut Vec<Outcome>) {
    let (r, secs) = run("moment_reduction", None);
    let (ok, count, _) = verdicts(&r, "ratio_TrP_TrV");
    let ratios: Vec<String> = r
        .comparisons
        .iter()
        .map(|c| format!("n={} {:.3}±{:.3}", c.n, c.measurement, c.stderr.unwrap_or(0.0)))
        .collect();
    out.push(Outcome {
        name: "moment_reduction",
        pass: ok && count == 5,
        detail: format!("{}; {secs:.0} s", ratios.join(", ")),
    });
}

/// Singular (V2, V3) pairs as printed, d = 1..4.
const PRINTED_TABLE: [&[(usize, usize)]; 4] = [
    &[],
    &[(1, 0), (0, 1)],
    &[(1, 0), (0, 1), (0, 2)],
    &[(1, 0), (1, 1), (2, 0), (0, 1), (0, 2), (0, 3), (0, 4)],
];

fn diagram_criteria(out: &mut Vec<Outcome>) {
    let (r, secs) = run("diagram_tables", None);
    let mut mismatched = Vec::new();
    for d in 1..=4usize {
        let got: BTreeSet<_> = singular_table(d, false).unwrap().into_iter().collect();
        let want: BTreeSet<_> = PRINTED_TABLE[d - 1].iter().copied().collect();
        if got != want {
            mismatched.push(format!(
                "d={d}: extra {:?} missing {:?}",
                got.difference(&want).collect::<Vec<_>>(),
                want.difference(&got).collect::<Vec<_>>()
            ));
        }
    }
    let (tad, _, _) = verdicts(&r, "tadpole_divergent");
    let (wit, _, _) = verdicts(&r, "theta_witness_2_0");
    let (recipe_tables, _, _) = verdicts(&r, "singular_pairs_mismatch");
    out.push(Outcome {
        name: "tables",
        pass: mismatched.is_empty() && recipe_tables && tad && wit && secs < 60.0,
        detail: format!(
            "tadpole divergent for d ≥ 2: {tad}; theta d=4 witness (2,0): {wit}; table mismatches: [{}]",
            mismatched.join("; ")
        ),
    });

    let (mc, se) = row(&r, "graph_integral_theta", "1");
    let exact = theta_quadrature();
    let (bounds, count, _) = verdicts(&r, "graph_integral_");
    out.push(Outcome {
        name: "graph_integrals",
        pass: (mc - exact).abs() <= 3.0 * se && bounds && count == 3,
        detail: format!("theta d=1 MC {mc:.5} ± {se:.5} vs quadrature {exact:.6}; {count} sector bounds respected"),
    });

    let mut ok = true;
    let mut parts = Vec::new();
    for d in 1..=3 {
        let (p, _, e) = verdicts(&r, &format!("tadpole_exponent_d{d}"));
        ok &= p;
        parts.push(format!("d={d} {e:.3}"));
    }
    let (r2ok, _, _) = verdicts(&r, "tadpole_log_linear_r2_d2");
    let r2 = row(&r, "tadpole_log_linear_r2", "2").0;
    out.push(Outcome {
        name: "tadpole_scaling",
        pass: ok && r2ok,
        detail: format!("exponents {} (targets 0.5, 0, 0 ± 0.05); d=2 log-fit R² {r2:.4}", parts.join(", ")),
    });
}

fn constants(out: &mut Vec<Outcome>) {
    let (r, secs) = run("constants", None);
    let (c, _, _) = verdicts(&r, "c_constant_");
    out.push(Outcome {
        name: "c_constants",
        pass: c && secs < 60.0,
        detail: format!(
            "x+y: {:.6} (√2/2), x+2y: {:.6} (√5/5) at n = 10⁴",
            row(&r, "c_constant_1x+1y", "10000").0,
            row(&r, "c_constant_1x+2y", "10000").0
        ),
    });
    let (a, _, _) = verdicts(&r, "a2l_exact");
    let (s, _, _) = verdicts(&r, "a2l_w_scaling");
    let ratios: Vec<String> = r
        .comparisons
        .iter()
        .filter(|c| c.quantity.starts_with("a2l"))
        .map(|c| format!("{} l={} {:.3}", c.quantity, c.n, c.ratio.unwrap_or(f64::NAN)))
        .collect();
    out.push(Outcome { name: "a2l", pass: a && s, detail: ratios.join(", ") });
}

fn polynomials(out: &mut Vec<Outcome>) {
    let a4 = 1e-4;
    let n = 1000;
    let p = PolyFamily::modified(a4).unwrap();
    let s = (1.0 - a4).sqrt();
    let envelope = |top: f64| {
        (0..=20_000)
            .map(|i| {
                let x = top * i as f64 / 20_000.0;
                (eval_scalar(&p, n, 2.0 * x) - (1.0 - a4).powf(n as f64 / 2.0) * chebyshev_u(n, x / s)).abs()
                    / n as f64
            })
            .fold(0.0, f64::max)
    };
    let full = envelope(s);
    let inner = envelope(1.0 - a4 + 1.0 / (n * n) as f64);

    let families = [
        PolyFamily::ChebyshevU,
        PolyFamily::modified(a4).unwrap(),
        PolyFamily::renormalized(a4, vec![(3, 6e-5), (4, 5e-5), (5, 4e-5)], 2).unwrap(),
    ];
    let mut contour = 0.0f64;
    for fam in &families {
        for m in 0..=50 {
            for i in 0..=18 {
                let z = -1.8 + 3.6 * i as f64 / 18.0;
                let rec = eval_scalar(fam, m, z);
                let c = contour_value(fam, m, z, default_radius(m), default_points(m)).unwrap();
                contour = contour.max((c - rec).abs() / rec.abs().max(1.0));
            }
        }
    }

    let sinc = bound_sinc_limit(1.0, -1.0, 200.0).constant;
    out.push(Outcome {
        name: "polynomials",
        pass: full <= 0.01 && contour <= 1e-8 && sinc <= 5e-3,
        detail: format!(
            "envelope on [0, √(1−a4)] {full:.2e} ≤ 0.01 (on [0, 1−a4+1/n²] {inner:.2e}), \
             contour/recursion {contour:.2e} ≤ 1e-8, sinc at t=1, y=−1 {sinc:.2e} ≤ 5e-3"
        ),
    });
}

fn edge(out: &mut Vec<Outcome>) {
    let (g2, s2) = run("edge_universality", None);
    let (g1, s1) = run("edge_universality", Some("[model]\nbeta = 1\n"));
    let ks2 = row(&g2, "ks_statistic", "128").0;
    let ks1 = row(&g1, "ks_statistic", "128").0;
    out.push(Outcome {
        name: "edge_universality",
        pass: ks2 <= 0.06 && ks1 <= 0.06,
        detail: format!("KS β=2 vs GUE {ks2:.4}, β=1 vs GOE (A_d shift) {ks1:.4}, threshold 0.06; {:.0} s", s1 + s2),
    });
}

fn factorization(out: &mut Vec<Outcome>) {
    let (r, secs) = run("factorization", None);
    let c = r.comparisons.iter().find(|c| c.quantity == "cov_TrP_TrP").expect("covariance comparison");
    let z = c.z.unwrap_or(f64::NAN);
    out.push(Outcome {
        name: "factorization",
        pass: z.abs() <= 3.0,
        detail: format!("cov {:.3} ± {:.3}, z = {z:.2} (|z| ≤ 3); {secs:.0} s", c.measurement, c.stderr.unwrap_or(0.0)),
    });
}

fn determinism(out: &mut Vec<Outcome>) {
    let dir = tempfile::tempdir().unwrap();
    let mut same = true;
    for recipe in ["tadpole_demo", "heat_kernel", "diagram_tables"] {
        let (cfg, _) = load_config(recipe, Some("[sampling]\nsamples = 300\n"), false).unwrap();
        let bodies: Vec<Vec<u8>> = [(1, "a"), (2, "b")]
            .iter()
            .map(|&(threads, sub)| {
                let out_dir = dir.path().join(recipe).join(sub);
                let opts = RunOptions { out_dir: Some(out_dir.clone()), threads: Some(threads), ..Default::default() };
                execute(recipe, &cfg, &opts).unwrap();
                assert!(read_results(&out_dir.join(RESULT_FILE)).unwrap().1.is_none());
                std::fs::read(out_dir.join(RESULT_FILE)).unwrap()
            })
            .collect();
        same &= bodies[0] == bodies[1];
    }
    out.push(Outcome {
        name: "determinism",
        pass: same,
        detail: "tadpole_demo, heat_kernel, diagram_tables rerun on 1 and 2 threads give byte-identical result.csv".into(),
    });
}

fn main() {
    let started = Instant::now();
    let mut out = Vec::new();
    identity_and_oracle(&mut out);
    kernel_suite(&mut out);
    moment_reduction(&mut out);
    diagram_criteria(&mut out);
    constants(&mut out);
    polynomials(&mut out);
    edge(&mut out);
    factorization(&mut out);
    determinism(&mut out);

    println!();
    for o in &out {
        println!("{} {:<20} {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let known: BTreeSet<&str> = KNOWN_FAILURES.iter().map(|k| k.0).collect();
    let mut unexpected = Vec::new();
    for o in &out {
        match (o.pass, known.contains(o.name)) {
            (false, true) => {
                let why = KNOWN_FAILURES.iter().find(|k| k.0 == o.name).map_or("", |k| k.1);
                println!("known failure {}: {why}", o.name);
            }
            (false, false) => unexpected.push(format!("{} failed", o.name)),
            (true, true) => println!("note: {} passed on this run although it is listed as a known failure", o.name),
            (true, false) => {}
        }
    }
    let passed = out.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria pass; {:.0} s", out.len(), started.elapsed().as_secs_f64());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
