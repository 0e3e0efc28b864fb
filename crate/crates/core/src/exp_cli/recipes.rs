//! Recipe registry and implementations.

use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{par_samples, Measurement, Prediction, RecipeInfo, RunContext};
use crate::diagram_lab::{
    cluster_t, graph_integral, singular_table, singularity_scan, tadpole_exponent, EvalMode, McOptions, Multigraph,
    Verdict as ScanVerdict, WeightSystem,
};
use crate::error::{LabError, Result};
use crate::linalg::{hermitian_eigenvalues, max_abs_diff, Entry, Operator};
use crate::nbw_oracle::{
    calv_recursion_residual, loop_free_recursion_residual, nb_powers, oracle_matrix, p_expansion_residual,
    paired_trace_sample, renormalized_expansion_residual, PathOracle, PATH_BUDGET,
};
use crate::poly_engine::{apply_to_vector, eval_scalar, traces_dense, PolyFamily};
use crate::rbm_model::{
    a2l, a2l_asymptotic, a4, baseline_gue_goe, default_cutoff, edge_shift, eigenvalues, ensemble_constants,
    sample_rbm, A2lMode, BandProfile, Beta, EIGEN_CAP,
};
use crate::stats::{covariance, ks_two_sample, linear_fit, paired_ratio, sub_seed, MeanAcc};
use crate::torus_walk::{
    heat_kernel_bound_check, theta_direct, theta_dual, transition_theta, vertex_split_check, Kernel, Regime,
    ThetaArg, TorusLattice,
};

/// Seed-index offset separating independent stages of one recipe.
const STAGE: u64 = 1 << 40;

pub(super) static REGISTRY: &[RecipeInfo] = &[
    RecipeInfo {
        name: "llt_check",
        anchor: "theta duality, Chapman–Kolmogorov and the local limit theorem for the torus kernel",
        description: "Poisson duality, convolution semigroup and theta-vs-convolution transition probabilities",
        params: &["n_max", "ck_steps", "theta_t", "theta_x", "duality_tol", "ck_tol", "llt_tol"],
        defaults: include_str!("../../configs/llt_check.toml"),
        run: llt_check,
    },
    RecipeInfo {
        name: "heat_kernel",
        anchor: "Gaussian heat-kernel upper bound and vertex splitting for the torus walk",
        description: "Fitted heat-kernel constant C1 at fixed C2 and a vertex-splitting ratio scan",
        params: &["n_max", "c1", "c2", "split_points"],
        defaults: include_str!("../../configs/heat_kernel.toml"),
        run: heat_kernel,
    },
    RecipeInfo {
        name: "identity_suite",
        anchor: "non-backtracking and loop-free path expansions of the modified and renormalized polynomials",
        description: "Matrix identities of the path oracles and edge-operator equivalence on tiny instances",
        params: &["n_max", "loop_cutoff", "betas", "identity_tol", "oracle_tol"],
        defaults: include_str!("../../configs/identity_suite.toml"),
        run: identity_suite,
    },
    RecipeInfo {
        name: "moment_reduction",
        anchor: "moment reduction: E Tr P_n matches E Tr V_n up to O(n/W)",
        description: "Paired ratio E Tr P_n / E Tr V_n with a delta-method standard error",
        params: &[],
        defaults: include_str!("../../configs/moment_reduction.toml"),
        run: moment_reduction,
    },
    RecipeInfo {
        name: "edge_universality",
        anchor: "edge universality: rescaled top eigenvalue follows the Gaussian-ensemble law",
        description: "Two-sample KS statistic of rescaled λ_max against same-size GUE/GOE",
        params: &["ks_threshold", "cutoff"],
        defaults: include_str!("../../configs/edge_universality.toml"),
        run: edge_universality,
    },
    RecipeInfo {
        name: "factorization",
        anchor: "subcritical factorization: traces of P_n become uncorrelated",
        description: "Covariance z-score of independent Hutchinson estimates of Tr P_n1 and Tr P_n2",
        params: &[],
        defaults: include_str!("../../configs/factorization.toml"),
        run: factorization,
    },
    RecipeInfo {
        name: "critical_scan",
        anchor: "critical regime: moments follow truncated diagram sums at W = γ L^(1-d/6)",
        description: "E Tr P_n over a γ scan against exact truncated cluster sums",
        params: &["gammas", "s_max", "mc_samples"],
        defaults: include_str!("../../configs/critical_scan.toml"),
        run: critical_scan,
    },
    RecipeInfo {
        name: "tail_decay",
        anchor: "upper-tail decay of the top eigenvalue: exp(-x^((6-d)/4)) subcritical, exp(-x^(3/2)) supercritical",
        description: "Fits of log P(rescaled λ_max ≥ x) against both tail exponents; fit quality only",
        params: &["min_tail", "points"],
        defaults: include_str!("../../configs/tail_decay.toml"),
        run: tail_decay,
    },
    RecipeInfo {
        name: "tadpole_demo",
        anchor: "tadpole renormalization: loop-corrected polynomials remove the d = 2 moment drift",
        description: "E Tr P_n / N and E Tr P̃_n / N over n for real symmetric d = 2 samples",
        params: &[],
        defaults: include_str!("../../configs/tadpole_demo.toml"),
        run: tadpole_demo,
    },
    RecipeInfo {
        name: "diagram_tables",
        anchor: "ultraviolet singularity criterion for diagram graph integrals",
        description: "Singular (V2, V3) tables, tadpole/theta scans, graph integrals and tadpole growth exponents",
        params: &["dims", "tadpole_w", "tadpole_n_min", "tadpole_decades", "exponent_tol"],
        defaults: include_str!("../../configs/diagram_tables.toml"),
        run: diagram_tables,
    },
    RecipeInfo {
        name: "constants",
        anchor: "ensemble constants a4, a_{2l} and lattice-point densities C_D",
        description: "a_{2l} against (2πl)^(-d/2) W^(-d), its W-scaling, and C_D for x+y=n and x+2y=n",
        params: &["loop_lengths", "a2l_tol", "scaling_tol", "c_target", "c_tol"],
        defaults: include_str!("../../configs/constants.toml"),
        run: constants,
    },
];

fn seed_at(ctx: &RunContext, stage: u64, i: usize) -> u64 {
    sub_seed(ctx.config.seed, stage * STAGE + i as u64)
}

fn beta_label(beta: Beta) -> String {
    format!("beta{}", beta.value())
}

fn llt_check(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config;
    let lat = cfg.lattice()?;
    let kernel = Kernel::new(&lat);
    let n_max = cfg.param_usize("n_max", 50)?;
    let seed = cfg.seed;

    let ts = cfg.param_f64_list("theta_t", &[0.01, 0.1, 1.0, 10.0])?;
    let xs = cfg.param_f64_list("theta_x", &[0.0, 0.1, 0.3, 0.5])?;
    let mut worst = 0.0f64;
    for &t in &ts {
        let peak = theta_direct(&ThetaArg::scalar(0.0, t)?);
        for &x in &xs {
            let arg = ThetaArg::scalar(x, t)?;
            worst = worst.max((theta_direct(&arg) - theta_dual(&arg)).abs() / peak);
        }
    }
    let points = ts.len() * xs.len();
    ctx.row("theta_duality_residual", "", worst, 0.0, points, seed)?;
    ctx.compare(
        Measurement::new("theta_duality_residual", "", worst, None),
        Prediction::exact(0.0, "Poisson summation: image sum equals Fourier sum")
            .with_allowance(cfg.param_f64("duality_tol", 1e-10)?),
    )?;

    let steps = cfg.param_usize_list("ck_steps", &[1, 2, 3, 5, 8, 13, 21])?;
    let sites = lat.n_sites();
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for (i, &a) in steps.iter().enumerate() {
        for &b in &steps[i..] {
            let (pa, pb, pab) = (kernel.n_step(a).values, kernel.n_step(b).values, kernel.n_step(a + b).values);
            for y in 0..sites {
                let conv: f64 =
                    (0..sites).map(|x| pa[lat.displacement_index(0, x)] * pb[lat.displacement_index(x, y)]).sum();
                worst = worst.max((conv - pab[lat.displacement_index(0, y)]).abs());
            }
            pairs += 1;
        }
    }
    ctx.row("chapman_kolmogorov_residual", "", worst, 0.0, pairs, seed)?;
    ctx.compare(
        Measurement::new("chapman_kolmogorov_residual", "", worst, None),
        Prediction::exact(0.0, "p_a * p_b = p_(a+b)").with_allowance(cfg.param_f64("ck_tol", 1e-12)?),
    )?;

    let mut worst_all = 0.0f64;
    for n in 1..=n_max {
        let p = kernel.n_step(n).values;
        let worst = (0..sites)
            .map(|i| (transition_theta(&lat, n, &lat.delta_of(i)) / p[i] - 1.0).abs())
            .fold(0.0, f64::max);
        ctx.row("llt_relative_error", n, worst, 0.0, sites, seed)?;
        worst_all = worst_all.max(worst);
    }
    ctx.compare(
        Measurement::new("llt_relative_error", format!("1..{n_max}"), worst_all, None),
        Prediction::exact(0.0, "local limit theorem: p_n equals the theta kernel with covariance nW²Σ")
            .with_allowance(cfg.param_f64("llt_tol", 1e-6)?),
    )?;
    Ok(())
}

fn heat_kernel(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config;
    let lat = cfg.lattice()?;
    let kernel = Kernel::new(&lat);
    let (c1, c2) = (cfg.param_f64("c1", 3.0)?, cfg.param_f64("c2", 0.4)?);
    let seed = cfg.seed;
    let mut worst = 0.0f64;
    let n_max = cfg.param_usize("n_max", 50)?;
    for n in 1..=n_max {
        let r = heat_kernel_bound_check(&kernel, n, c1, c2)?;
        ctx.row("heat_kernel_fitted_c1", n, r.fitted_c1, 0.0, lat.n_sites(), seed)?;
        worst = worst.max(r.fitted_c1);
    }
    ctx.compare(
        Measurement::new("heat_kernel_fitted_c1_max", format!("1..{n_max}"), worst, None),
        Prediction::exact(0.0, format!("heat-kernel envelope holds with C1 = {c1} at C2 = {c2}")).with_allowance(c1),
    )?;

    let points = cfg.param_usize("split_points", 100)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_at(ctx, 0, 0));
    let sites = lat.n_sites();
    let mut bad = 0usize;
    for _ in 0..points {
        let n3 = rng.random_range(1..=4usize);
        let (n1, n2) = (n3 + rng.random_range(0..=10usize), n3 + rng.random_range(0..=10usize));
        let x = (rng.random_range(0..sites), rng.random_range(0..sites), rng.random_range(0..sites));
        let r = vertex_split_check(&kernel, (n1, n2, n3), x)?;
        if !(r.ratio.is_finite() && r.ratio >= 0.0) {
            bad += 1;
        }
        ctx.row("vertex_split_ratio", format!("{n1};{n2};{n3}"), r.ratio, 0.0, 1, seed)?;
    }
    ctx.compare(
        Measurement::new("vertex_split_nonfinite", points.to_string(), bad as f64, None),
        Prediction::exact(0.0, "vertex splitting: p_n1 p_n2 is bounded by the three-leg sum"),
    )?;
    Ok(())
}

struct IdentityRecord {
    calv: f64,
    p_expansion: f64,
    loop_free: f64,
    renormalized: f64,
    oracle: f64,
    v2: f64,
}

fn identity_instance(profile: &BandProfile, beta: Beta, n_max: usize, r: usize, seed: u64) -> Result<IdentityRecord> {
    let h = oracle_matrix(profile, beta, seed);
    let o = PathOracle::new(&h, n_max, r, PATH_BUDGET)?;
    let brute = o.nb_power();
    let fast = nb_powers(&h, n_max);
    let oracle = brute.iter().zip(&fast).map(|(a, b)| max_abs_diff(a, b)).fold(0.0, f64::max);
    let id = nalgebra::DMatrix::<Complex64>::identity(h.nrows(), h.nrows());
    let v2 = if n_max >= 2 { max_abs_diff(&fast[2], &(&h * &h - id)) } else { 0.0 };
    Ok(IdentityRecord {
        calv: calv_recursion_residual(&o)?,
        p_expansion: p_expansion_residual(&o)?,
        loop_free: loop_free_recursion_residual(&o)?,
        renormalized: renormalized_expansion_residual(&o)?,
        oracle,
        v2,
    })
}

fn identity_suite(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config;
    let profile = BandProfile::new(&cfg.lattice()?);
    let n_max = cfg.param_usize("n_max", 8)?;
    let r = cfg.param_usize("loop_cutoff", 3)?;
    let id_tol = cfg.param_f64("identity_tol", 1e-9)?;
    let or_tol = cfg.param_f64("oracle_tol", 1e-10)?;
    let samples = cfg.sampling.samples;
    for (stage, b) in cfg.param_usize_list("betas", &[1, 2])?.into_iter().enumerate() {
        let beta = Beta::try_from(u8::try_from(b).map_err(|_| LabError::Config("params.betas must be 1 or 2".into()))?)?;
        let seeds: Vec<u64> = (0..samples).map(|i| seed_at(ctx, stage as u64, i)).collect();
        let recs = par_samples(samples, |i| identity_instance(&profile, beta, n_max, r, seeds[i]))?
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let checks: [(&str, fn(&IdentityRecord) -> f64, f64, &str); 6] = [
            ("calv_recursion_residual", |x| x.calv, id_tol, "almost non-backtracking recursion with Φ5, Φ7 blocks"),
            ("p_expansion_residual", |x| x.p_expansion, id_tol, "P_n expands into almost non-backtracking paths"),
            ("loop_free_recursion_residual", |x| x.loop_free, id_tol, "loop-free recursion with error operators E1, E2, E3"),
            ("renormalized_expansion_residual", |x| x.renormalized, id_tol, "P̃_n expands into loop-free paths"),
            ("edge_operator_vs_enumeration", |x| x.oracle, or_tol, "edge-operator V_n equals brute-force V_n"),
            ("v2_minus_h2_plus_i", |x| x.v2, or_tol, "V_2 = H² − I"),
        ];
        for (name, get, tol, source) in checks {
            let worst = recs.iter().map(get).fold(0.0, f64::max);
            let q = format!("{name}_{}", beta_label(beta));
            ctx.row(&q, n_max, worst, 0.0, samples, cfg.seed)?;
            ctx.compare(Measurement::new(q, n_max.to_string(), worst, None), Prediction::exact(0.0, source).with_allowance(tol))?;
        }
    }
    Ok(())
}

fn moment_reduction(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config;
    let lat = cfg.lattice()?;
    let profile = BandProfile::new(&lat);
    let family = cfg.family(&profile)?;
    let degrees = &cfg.poly.degrees;
    let nmax = *degrees.iter().max().ok_or_else(|| LabError::Config("poly.degrees is empty".into()))?;
    let beta = cfg.model.beta;
    let samples = cfg.sampling.samples;
    let seeds: Vec<u64> = (0..samples).map(|i| seed_at(ctx, 0, i)).collect();
    let recs = par_samples(samples, |i| paired_trace_sample(&profile, beta, &family, nmax, seeds[i]))?;
    for &n in degrees {
        let p: Vec<f64> = recs.iter().map(|r| r.0[n]).collect();
        let v: Vec<f64> = recs.iter().map(|r| r.1[n]).collect();
        let (pa, va) = (MeanAcc::from_slice(&p), MeanAcc::from_slice(&v));
        ctx.row("E_TrP", n, pa.mean(), pa.stderr(), samples, cfg.seed)?;
        ctx.row("E_TrV", n, va.mean(), va.stderr(), samples, cfg.seed)?;
        let (ratio, se) = paired_ratio(&p, &v);
        ctx.row("ratio_TrP_TrV", n, ratio, se, samples, cfg.seed)?;
        ctx.compare(
            Measurement::new("ratio_TrP_TrV", n.to_string(), ratio, Some(se)),
            Prediction::exact(1.0, "moment reduction: E Tr P_n / E Tr V_n = 1 + O(n/W)")
                .with_allowance(5.0 * n as f64 / lat.w()),
        )?;
    }
    Ok(())
}

fn top_rescaled(profile: &BandProfile, beta: Beta, shift: f64, seed: u64) -> Result<f64> {
    Ok(match beta {
        Beta::Real => eigenvalues(&sample_rbm::<f64>(profile, seed), shift, EIGEN_CAP)?.rescaled_max(),
        Beta::Complex => eigenvalues(&sample_rbm::<Complex64>(profile, seed), shift, EIGEN_CAP)?.rescaled_max(),
    })
}

fn rbm_top_samples(ctx: &RunContext, profile: &BandProfile, shift: f64) -> Result<Vec<f64>> {
    let beta = ctx.config.model.beta;
    let seeds: Vec<u64> = (0..ctx.config.sampling.samples).map(|i| seed_at(ctx, 0, i)).collect();
    par_samples(seeds.len(), |i| top_rescaled(profile, beta, shift, seeds[i]))?.into_iter().collect()
}

fn edge_universality(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config;
    let lat = cfg.lattice()?;
    let profile = BandProfile::new(&lat);
    let beta = cfg.model.beta;
    let r = cfg.param_usize("cutoff", default_cutoff(&lat))?;
    let shift = edge_shift(&profile, beta, r)?;
    let samples = cfg.sampling.samples;
    ctx.row("edge_shift", beta_label(beta), shift, 0.0, 1, cfg.seed)?;
    let rbm = rbm_top_samples(ctx, &profile, shift)?;
    let n = lat.n_sites();
    let seeds: Vec<u64> = (0..samples).map(|i| seed_at(ctx, 1, i)).collect();
    let base = par_samples(samples, |i| baseline_gue_goe(n, beta, seeds[i]).rescaled_max())?;
    let (a, b) = (MeanAcc::from_slice(&rbm), MeanAcc::from_slice(&base));
    ctx.row("rbm_rescaled_lambda_max", n, a.mean(), a.stderr(), samples, cfg.seed)?;
    ctx.row("baseline_rescaled_lambda_max", n, b.mean(), b.stderr(), samples, cfg.seed)?;
    let gap = (a.mean() - b.mean()) / (n as f64).powf(2.0 / 3.0);
    ctx.row("lambda_max_mean_gap", n, gap, (a.stderr().hypot(b.stderr())) / (n as f64).powf(2.0 / 3.0), samples, cfg.seed)?;
    let ks = ks_two_sample(&rbm, &base);
    ctx.row("ks_statistic", n, ks, 0.0, samples, cfg.seed)?;
    let threshold = cfg.param_f64("ks_threshold", 0.06)?;
    let ensemble = if beta == Beta::Complex { "GUE" } else { "GOE" };
    ctx.compare(
        Measurement::new("ks_statistic", n.to_string(), ks, None),
        Prediction::exact(0.0, format!("edge universality: rescaled λ_max has the {ensemble} law (KS ≤ {threshold})"))
            .with_allowance(threshold),
    )?;
    Ok(())
}

/// Rounds each degree up to even, reporting what changed.
fn even_degrees(ctx: &mut RunContext, degrees: &[usize], why: &str) -> Vec<usize> {
    degrees
        .iter()
        .map(|&n| {
            if n % 2 == 1 {
                ctx.warn(format!("degree {n} rounded to {} ({why})", n + 1));
                n + 1
            } else {
                n
            }
        })
        .collect()
}

fn probe_pair<T: Entry>(
    profile: &BandProfile,
    family: &PolyFamily,
    (n1, n2): (usize, usize),
    probes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let h = sample_rbm::<T>(profile, seed).h;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1));
    let dim = h.dim();
    let mut quad = |n: usize| -> Result<f64> {
        let mut acc = 0.0;
        for _ in 0..probes {
            let v: Vec<T> = (0..dim).map(|_| T::from_real(if rng.random::<bool>() { 1.0 } else { -1.0 })).collect();
            let pv = apply_to_vector(family, &h, n, &v)?;
            acc += v.iter().zip(&pv).map(|(a, b)| (a.conjugate() * *b).real()).sum::<f64>();
        }
        Ok(acc / probes as f64)
    };
    Ok((quad(n1)?, quad(n2)?))
}

fn factorization(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config;
    let lat = cfg.lattice()?;
    let profile = BandProfile::new(&lat);
    let family = cfg.family(&profile)?;
    let [n1, n2] = <[usize; 2]>::try_from(even_degrees(ctx, &cfg.poly.degrees, "factorization holds for even degrees"))
        .map_err(|_| LabError::Config("factorization needs exactly two poly.degrees".into()))?;
    let samples = cfg.sampling.samples;
    let probes = cfg.sampling.probes;
    let beta = cfg.model.beta;
    let seeds: Vec<u64> = (0..samples).map(|i| seed_at(ctx, 0, i)).collect();
    let recs = par_samples(samples, |i| match beta {
        Beta::Real => probe_pair::<f64>(&profile, &family, (n1, n2), probes, seeds[i]),
        Beta::Complex => probe_pair::<Complex64>(&profile, &family, (n1, n2), probes, seeds[i]),
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = recs.iter().map(|r| r.0).collect();
    let y: Vec<f64> = recs.iter().map(|r| r.1).collect();
    let (ax, ay) = (MeanAcc::from_slice(&x), MeanAcc::from_slice(&y));
    ctx.row("E_TrP_probe1", n1, ax.mean(), ax.stderr(), samples, cfg.seed)?;
    ctx.row("E_TrP_probe2", n2, ay.mean(), ay.stderr(), samples, cfg.seed)?;
    let (cov, se) = covariance(&x, &y);
    let label = format!("{n1};{n2}");
    ctx.row("cov_TrP_TrP", &label, cov, se, samples, cfg.seed)?;
    let corr = cov / (ax.variance() * ay.variance()).sqrt();
    ctx.row("corr_TrP_TrP", &label, corr, se / (ax.variance() * ay.variance()).sqrt(), samples, cfg.seed)?;
    ctx.compare(
        Measurement::new("cov_TrP_TrP", label, cov, Some(se)),
        Prediction::exact(0.0, "subcritical factorization: E[Tr P_n1 Tr P_n2] − E Tr P_n1 E Tr P_n2 → 0"),
    )?;
    Ok(())
}

fn critical_scan(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config;
    let base = cfg.lattice()?;
    let degrees = even_degrees(ctx, &cfg.poly.degrees, "odd total degree gives zero moments");
    let nmax = *degrees.iter().max().ok_or_else(|| LabError::Config("poly.degrees is empty".into()))?;
    let s_max = cfg.param_usize("s_max", 4)?;
    let mc = cfg.param_usize("mc_samples", 20_000)?;
    let beta = cfg.model.beta;
    let samples = cfg.sampling.samples;
    let scale = (base.l() as f64).powf(1.0 - base.d() as f64 / 6.0);
    for (stage, gamma) in cfg.param_f64_list("gammas", &[1.0])?.into_iter().enumerate() {
        let lat = TorusLattice::new(base.d(), base.l(), gamma * scale, base.sigma().clone())?;
        let profile = BandProfile::new(&lat);
        let family = cfg.family(&profile)?;
        let seeds: Vec<u64> = (0..samples).map(|i| seed_at(ctx, stage as u64, i)).collect();
        let traces = par_samples(samples, |i| match beta {
            Beta::Real => traces_dense(&family, &sample_rbm::<f64>(&profile, seeds[i]).h.to_dense(), nmax),
            Beta::Complex => traces_dense(&family, &sample_rbm::<Complex64>(&profile, seeds[i]).h.to_dense(), nmax),
        })?;
        for &n in &degrees {
            let label = format!("gamma={gamma};n={n}");
            let acc = MeanAcc::from_iter(traces.iter().map(|t| t[n]));
            ctx.row("E_TrP", &label, acc.mean(), acc.stderr(), samples, cfg.seed)?;
            let opts = McOptions { samples: mc, seed: seed_at(ctx, STAGE - 1, stage) };
            let pred = cluster_t(beta, &[n], s_max, &lat, Regime::Critical, EvalMode::ExactSum, opts)?;
            ctx.row("cluster_prediction", &label, pred.value, pred.stderr, pred.diagrams, cfg.seed)?;
            ctx.row("cluster_tail_estimate", &label, pred.tail_estimate, 0.0, pred.diagrams, cfg.seed)?;
            if pred.tail_estimate.is_finite() {
                ctx.compare(
                    Measurement::new("E_TrP", label, acc.mean(), Some(acc.stderr())),
                    Prediction::estimated(pred.value, pred.stderr, format!("typical diagrams with s ≤ {s_max}"))
                        .with_allowance(pred.tail_estimate),
                )?;
            } else {
                ctx.warn(format!("{label}: diagram levels grow with s; no comparison"));
            }
        }
    }
    Ok(())
}

fn tail_decay(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config;
    let lat = cfg.lattice()?;
    let profile = BandProfile::new(&lat);
    let beta = cfg.model.beta;
    let shift = edge_shift(&profile, beta, default_cutoff(&lat))?;
    let mut top = rbm_top_samples(ctx, &profile, shift)?;
    top.sort_by(f64::total_cmp);
    let samples = top.len();
    let min_tail = cfg.param_usize("min_tail", 10)?.max(1);
    let points = cfg.param_usize("points", 12)?.max(3);
    let first = top.partition_point(|&v| v <= 0.0);
    let last = samples.saturating_sub(min_tail);
    if last <= first + 2 {
        ctx.warn("too few positive rescaled values for a tail fit");
        return Ok(());
    }
    let mut xs = Vec::new();
    let mut ln_s = Vec::new();
    for j in 0..points {
        let idx = first + (last - first) * j / (points - 1);
        let x = top[idx.min(last)];
        let surv = (samples - top.partition_point(|&v| v < x)) as f64 / samples as f64;
        if xs.last().is_some_and(|&p| p >= x) {
            continue;
        }
        ctx.row("tail_survival", format!("x={x:.6}"), surv, (surv * (1.0 - surv) / samples as f64).sqrt(), samples, cfg.seed)?;
        xs.push(x);
        ln_s.push(surv.ln());
    }
    let d = lat.d() as f64;
    for (name, p) in [("subcritical", (6.0 - d) / 4.0), ("supercritical", 1.5)] {
        let u: Vec<f64> = xs.iter().map(|x| x.powf(p)).collect();
        let fit = linear_fit(&u, &ln_s);
        ctx.row(&format!("tail_fit_slope_{name}"), format!("p={p}"), fit.slope, 0.0, samples, cfg.seed)?;
        ctx.row(&format!("tail_fit_r2_{name}"), format!("p={p}"), fit.r2, 0.0, samples, cfg.seed)?;
    }
    Ok(())
}

fn tadpole_demo(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config;
    let lat = cfg.lattice()?;
    let profile = BandProfile::new(&lat);
    let beta = cfg.model.beta;
    let a4v = a4(&profile);
    let r = cfg.poly.cutoff.unwrap_or_else(|| default_cutoff(&lat));
    let consts = ensemble_constants(&profile, r)?;
    let lmax = consts.a2l.keys().copied().max().unwrap_or(3).max(3);
    let plain = PolyFamily::modified(a4v)?;
    let renorm = PolyFamily::renormalized(a4v, consts.a2l.clone().into_iter().collect(), lmax)?;
    for (l, v) in &consts.a2l {
        ctx.row("a2l", l, *v, 0.0, 1, cfg.seed)?;
    }
    let degrees = cfg.poly.degrees.clone();
    let samples = cfg.sampling.samples;
    let sites = lat.n_sites() as f64;
    let seeds: Vec<u64> = (0..samples).map(|i| seed_at(ctx, 0, i)).collect();
    let recs = par_samples(samples, |i| {
        let ev = match beta {
            Beta::Real => hermitian_eigenvalues(&sample_rbm::<f64>(&profile, seeds[i]).h.to_dense()),
            Beta::Complex => hermitian_eigenvalues(&sample_rbm::<Complex64>(&profile, seeds[i]).h.to_dense()),
        };
        let tr = |f: &PolyFamily, n: usize| ev.iter().map(|&l| eval_scalar(f, n, l)).sum::<f64>() / sites;
        degrees.iter().map(|&n| (tr(&plain, n), tr(&renorm, n))).collect::<Vec<_>>()
    })?;
    let ns: Vec<f64> = degrees.iter().map(|&n| n as f64).collect();
    let mut means = [Vec::new(), Vec::new()];
    for (j, &n) in degrees.iter().enumerate() {
        let p = MeanAcc::from_iter(recs.iter().map(|r| r[j].0));
        let q = MeanAcc::from_iter(recs.iter().map(|r| r[j].1));
        ctx.row("E_TrP_over_N", n, p.mean(), p.stderr(), samples, cfg.seed)?;
        ctx.row("E_TrPtilde_over_N", n, q.mean(), q.stderr(), samples, cfg.seed)?;
        means[0].push(p.mean());
        means[1].push(q.mean());
    }
    if ns.len() >= 2 {
        for (name, m) in [("drift_slope_P", &means[0]), ("drift_slope_Ptilde", &means[1])] {
            ctx.row(name, "", linear_fit(&ns, m).slope, 0.0, samples, cfg.seed)?;
        }
    }
    Ok(())
}

/// Singular (V2, V3) pairs as printed in the reference table, d = 1..4.
const REFERENCE_TABLE: [(usize, &[(usize, usize)]); 4] = [
    (1, &[]),
    (2, &[(1, 0), (0, 1)]),
    (3, &[(1, 0), (0, 1), (0, 2)]),
    (4, &[(1, 0), (1, 1), (2, 0), (0, 1), (0, 2), (0, 3), (0, 4)]),
];

fn diagram_tables(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config;
    let seed = cfg.seed;
    for d in cfg.param_usize_list("dims", &[1, 2, 3, 4])? {
        let computed: BTreeSet<(usize, usize)> = singular_table(d, false)?.into_iter().collect();
        ctx.row("singular_pairs", d, computed.len() as f64, 0.0, 1, seed)?;
        if let Some((_, expected)) = REFERENCE_TABLE.iter().find(|(dd, _)| *dd == d) {
            let expected: BTreeSet<(usize, usize)> = expected.iter().copied().collect();
            let mismatch = computed.symmetric_difference(&expected).count();
            ctx.compare(
                Measurement::new("singular_pairs_mismatch", d.to_string(), mismatch as f64, None),
                Prediction::exact(0.0, "reference (V2, V3) table with Δ = V2 + (3/2 − d/4)V3 − d/2 ≤ 0"),
            )?;
        }
        let tadpole = singularity_scan(&Multigraph::cycle(1), d as f64);
        let divergent = tadpole.verdict == ScanVerdict::Divergent;
        ctx.row("tadpole_divergent", d, f64::from(u8::from(divergent)), 0.0, 1, seed)?;
        ctx.compare(
            Measurement::new("tadpole_divergent", d.to_string(), f64::from(u8::from(divergent)), None),
            Prediction::exact(f64::from(u8::from(d >= 2)), "tadpole is singular for d ≥ 2"),
        )?;
        let theta = singularity_scan(&Multigraph::theta(), d as f64);
        ctx.row("theta_min_discriminant", d, theta.min_delta, 0.0, 1, seed)?;
        if d == 4 {
            let ok = theta.verdict == ScanVerdict::Divergent
                && theta.witness.as_ref().and_then(|w| w.pattern) == Some((2, 0));
            ctx.compare(
                Measurement::new("theta_witness_2_0", "4", f64::from(u8::from(ok)), None),
                Prediction::exact(1.0, "theta graph is singular at d = 4 through the (2,0) pattern"),
            )?;
        }
    }

    let samples = cfg.sampling.samples;
    for (i, (name, g)) in [("theta", Multigraph::theta()), ("cycle3", Multigraph::cycle(3)), ("k4", Multigraph::complete(4))]
        .into_iter()
        .enumerate()
    {
        match graph_integral(&g, 1.0, samples, seed_at(ctx, 0, i), false) {
            Ok(r) => {
                ctx.row(&format!("graph_integral_{name}"), 1, r.value, r.stderr, samples, seed)?;
                ctx.compare(
                    Measurement::new(format!("graph_integral_{name}"), "1", r.value, None),
                    Prediction::exact(0.0, "sector bound 18^|E| δ^-(|E|-|V|+1), δ = 0.01").with_allowance(r.sector_bound),
                )?;
            }
            Err(LabError::Divergent { witness }) => ctx.warn(format!("{name} divergent at d = 1, witness {witness:?}")),
            Err(e) => return Err(e),
        }
    }

    let w = cfg.param_f64("tadpole_w", 4.0)?;
    let n0 = cfg.param_usize("tadpole_n_min", 1000)? as f64;
    let decades = cfg.param_usize("tadpole_decades", 3)?;
    let tol = cfg.param_f64("exponent_tol", 0.05)?;
    let ns: Vec<usize> = (0..=4 * decades).map(|i| (n0 * 10f64.powf(i as f64 / 4.0)) as usize).collect();
    let label = format!("{}..{}", ns[0], ns[ns.len() - 1]);
    for (d, target, shape) in [(1, 0.5, "√n growth"), (2, 0.0, "log n growth"), (3, 0.0, "bounded")] {
        let fit = tadpole_exponent(d, w, &ns)?;
        ctx.row("tadpole_exponent", d, fit.exponent, 0.0, ns.len(), seed)?;
        ctx.row("tadpole_log_linear_r2", d, fit.log_linear_r2, 0.0, ns.len(), seed)?;
        ctx.compare(
            Measurement::new(format!("tadpole_exponent_d{d}"), label.clone(), fit.exponent, None),
            Prediction::exponent(target, tol, format!("tadpole partial sum: {shape}")),
        )?;
        if d == 2 {
            ctx.compare(
                Measurement::new("tadpole_log_linear_r2_d2", label.clone(), fit.log_linear_r2, None),
                Prediction::exact(1.0, "tadpole partial sum linear in log n").with_allowance(0.01),
            )?;
        }
    }
    Ok(())
}

fn constants(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config;
    let seed = cfg.seed;
    let lat = cfg.lattice()?;
    let profile = BandProfile::new(&lat);
    ctx.row("a4", "", a4(&profile), 0.0, 1, seed)?;
    let d = lat.d();
    let doubled = TorusLattice::new(d, 2 * lat.l(), 2.0 * lat.w(), lat.sigma().clone())?;
    let profile2 = BandProfile::new(&doubled);
    let tol = cfg.param_f64("a2l_tol", 0.3)?;
    let stol = cfg.param_f64("scaling_tol", 0.1)?;
    let target = 0.5f64.powi(d as i32);
    for l in cfg.param_usize_list("loop_lengths", &[3, 4, 5])? {
        let exact = a2l(&profile, l, A2lMode::ExactEnumeration)?.value;
        let asy = a2l_asymptotic(&lat, l)?;
        ctx.row("a2l_exact", l, exact, 0.0, 1, seed)?;
        ctx.row("a2l_asymptotic", l, asy, 0.0, 1, seed)?;
        ctx.compare(
            Measurement::new("a2l_exact", l.to_string(), exact, None),
            Prediction::exact(asy, "a_2l ≈ (2πl)^(-d/2) W^(-d)").with_allowance(tol * asy),
        )?;
        let exact2 = a2l(&profile2, l, A2lMode::ExactEnumeration)?.value;
        ctx.row("a2l_exact_doubled_w", l, exact2, 0.0, 1, seed)?;
        ctx.compare(
            Measurement::new("a2l_w_scaling", l.to_string(), exact2 / exact, None),
            Prediction::exact(target, "a_2l(2W) / a_2l(W) = 2^(-d)").with_allowance(stol * target),
        )?;
    }
    let n = cfg.param_usize("c_target", 10_000)?;
    let ctol = cfg.param_f64("c_tol", 1e-3)?;
    for (coeffs, expect, source) in [
        ([1u32, 1], 0.5 * 2f64.sqrt(), "x + y = n: C_D = √2/2"),
        ([1, 2], 5f64.sqrt() / 5.0, "x + 2y = n: C_D = √5/5"),
    ] {
        let ws = WeightSystem::single(&coeffs)?;
        let c = ws.c_constant(&[1.0], &[n / 2, n])?;
        let label = format!("{}x+{}y", coeffs[0], coeffs[1]);
        let at_n = c.points.last().expect("two scales").ratio;
        ctx.row(&format!("c_constant_{label}"), n, at_n, 0.0, 1, seed)?;
        ctx.row(&format!("c_constant_limit_{label}"), "", c.limit, 0.0, 1, seed)?;
        ctx.compare(
            Measurement::new(format!("c_constant_{label}"), n.to_string(), at_n, None),
            Prediction::exact(expect, source).with_allowance(ctol),
        )?;
    }
    Ok(())
}
