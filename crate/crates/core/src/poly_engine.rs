//! Chebyshev U_n, modified P_n and renormalized P̃_n polynomial families:
//! recursions, generating-function contour evaluation, matrix application,
//! trace estimation, asymptotics, inequality scans and sinc transforms.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::linalg::{Entry, Operator};
use crate::quad;
use crate::stats::MeanAcc;

/// Polynomial family with its recursion coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PolyFamily {
    ChebyshevU,
    ModifiedP { a4: f64 },
    /// `a2l` holds (l, a_{2l}) pairs with 3 ≤ l ≤ 3R.
    RenormalizedP { a4: f64, a2l: Vec<(usize, f64)>, r: usize },
}

impl PolyFamily {
    pub fn modified(a4: f64) -> Result<Self> {
        check_finite(a4)?;
        Ok(PolyFamily::ModifiedP { a4 })
    }

    pub fn renormalized(a4: f64, mut a2l: Vec<(usize, f64)>, r: usize) -> Result<Self> {
        check_finite(a4)?;
        for &(l, v) in &a2l {
            check_finite(v)?;
            if l < 3 || l > 3 * r {
                return Err(LabError::invalid(format!("a_2l index l={l} outside 3..=3R with R={r}")));
            }
        }
        a2l.sort_by_key(|p| p.0);
        a2l.dedup_by_key(|p| p.0);
        Ok(PolyFamily::RenormalizedP { a4, a2l, r })
    }

    fn a4(&self) -> f64 {
        match self {
            PolyFamily::ChebyshevU => 0.0,
            PolyFamily::ModifiedP { a4 } | PolyFamily::RenormalizedP { a4, .. } => *a4,
        }
    }

    /// Lag coefficients c_k with P_n = z P_{n−1} − P_{n−2} + Σ_k c_k P_{n−k}, k ≥ 4.
    fn lags(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let a4 = self.a4();
        if a4 != 0.0 {
            out.push((4, a4));
        }
        if let PolyFamily::RenormalizedP { a2l, .. } = self {
            out.extend(a2l.iter().map(|&(l, v)| (2 * l, -v)));
        }
        out
    }

    /// Largest lag of the recursion.
    pub fn max_lag(&self) -> usize {
        self.lags().iter().map(|p| p.0).max().unwrap_or(2).max(2)
    }

    /// 1 + W^{−d}A(1) = 1 − a4 + Σ a_{2l}.
    pub fn edge_scale(&self) -> f64 {
        let mut s = 1.0 - self.a4();
        if let PolyFamily::RenormalizedP { a2l, .. } = self {
            s += a2l.iter().map(|p| p.1).sum::<f64>();
        }
        s
    }

    /// Denominator 1 − zt + t² − a4t⁴ + Σ a_{2l}t^{2l} of the generating function.
    fn denominator(&self, z: f64, t: Complex64) -> Complex64 {
        let mut v = Complex64::new(1.0, 0.0) - z * t + t * t;
        for (k, c) in self.lags() {
            v -= c * t.powu(k as u32);
        }
        v
    }
}

fn check_finite(v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(LabError::invalid("polynomial coefficients must be finite"));
    }
    Ok(())
}

/// All values P_0(z)..P_n(z) by forward recursion.
pub fn eval_all(family: &PolyFamily, n: usize, z: f64) -> Vec<f64> {
    let lags = family.lags();
    let mut p = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let v = match k {
            0 => 1.0,
            1 => z,
            _ => {
                let mut v = z * p[k - 1] - p[k - 2];
                for &(lag, c) in &lags {
                    if lag <= k {
                        v += c * p[k - lag];
                    }
                }
                v
            }
        };
        p.push(v);
    }
    p
}

/// P_n(z) by forward recursion; Chebyshev U uses the U_n(z/2) convention.
pub fn eval_scalar(family: &PolyFamily, n: usize, z: f64) -> f64 {
    eval_all(family, n, z)[n]
}

/// Standard Chebyshev polynomial of the second kind U_n(x).
pub fn chebyshev_u(n: usize, x: f64) -> f64 {
    eval_scalar(&PolyFamily::ChebyshevU, n, 2.0 * x)
}

/// Default contour radius 1 − 1/(2n).
pub fn default_radius(n: usize) -> f64 {
    if n == 0 {
        0.5
    } else {
        1.0 - 1.0 / (2.0 * n as f64)
    }
}

/// Default trapezoid size 64n capped at 2^16.
pub fn default_points(n: usize) -> usize {
    (64 * n.max(1)).min(1 << 16)
}

/// Relative disagreement with the recursion that flags an unreliable contour.
pub const CONTOUR_TOLERANCE: f64 = 1e-6;

/// Trapezoid rule for the Cauchy coefficient integral of the generating function.
pub fn contour_value(family: &PolyFamily, n: usize, z: f64, radius: f64, points: usize) -> Result<f64> {
    if !(radius > 0.0) || points == 0 {
        return Err(LabError::invalid("contour needs positive radius and points"));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..points {
        let th = 2.0 * PI * j as f64 / points as f64;
        let t = Complex64::from_polar(radius, th);
        let g = 1.0 / family.denominator(z, t);
        acc += g * Complex64::from_polar(radius.powi(-(n as i32)), -(n as f64) * th);
    }
    Ok(acc.re / points as f64)
}

/// Contour evaluation, cross-checked against the recursion.
pub fn contour_eval(family: &PolyFamily, n: usize, z: f64, radius: Option<f64>, points: Option<usize>) -> Result<f64> {
    let r = radius.unwrap_or_else(|| default_radius(n));
    let m = points.unwrap_or_else(|| default_points(n));
    let v = contour_value(family, n, z, r, m)?;
    let rec = eval_scalar(family, n, z);
    if !v.is_finite() || (v - rec).abs() > CONTOUR_TOLERANCE * rec.abs().max(1.0) {
        return Err(LabError::Numerical(format!(
            "contour value {v:e} disagrees with recursion {rec:e} (radius {r}, {m} points)"
        )));
    }
    Ok(v)
}

/// P_n(H)v with a rolling window of max(4, 2·l_max+1) vectors.
pub fn apply_to_vector<T: Entry>(family: &PolyFamily, h: &impl Operator<T>, n: usize, v: &[T]) -> Result<Vec<T>> {
    let dim = h.dim();
    if v.len() != dim {
        return Err(LabError::invalid(format!("vector length {} does not match dimension {dim}", v.len())));
    }
    let lags = family.lags();
    let window = (family.max_lag() + 1).max(4);
    let mut hist: VecDeque<Vec<T>> = VecDeque::with_capacity(window);
    hist.push_front(v.to_vec());
    let mut tmp = vec![T::zero(); dim];
    for k in 1..=n {
        h.apply(&hist[0], &mut tmp);
        let mut next = tmp.clone();
        if k >= 2 {
            for (a, b) in next.iter_mut().zip(&hist[1]) {
                *a -= *b;
            }
        }
        for &(lag, c) in &lags {
            if lag <= k {
                let c = T::from_real(c);
                for (a, b) in next.iter_mut().zip(&hist[lag - 1]) {
                    *a += c * *b;
                }
            }
        }
        if hist.len() == window {
            hist.pop_back();
        }
        hist.push_front(next);
    }
    Ok(hist.pop_front().expect("window nonempty"))
}

/// Dense P_0(H)..P_n(H) traces, one matrix product per degree.
pub fn traces_dense<T: Entry>(family: &PolyFamily, h: &DMatrix<T>, n: usize) -> Vec<f64> {
    let dim = h.nrows();
    let lags = family.lags();
    let mut mats: Vec<DMatrix<T>> = Vec::with_capacity(n + 1);
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let m = match k {
            0 => DMatrix::identity(dim, dim),
            1 => h.clone(),
            _ => {
                let mut m = h * &mats[k - 1] - &mats[k - 2];
                for &(lag, c) in &lags {
                    if lag <= k {
                        m += &mats[k - lag] * T::from_real(c);
                    }
                }
                m
            }
        };
        out.push(m.trace().real());
        mats.push(m);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceMethod {
    Exact,
    Hutchinson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEstimate {
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
    pub method: TraceMethod,
    pub samples: usize,
}

/// Tr P_n(H), either exactly from unit-vector columns or by Rademacher probes.
pub fn trace_poly<T: Entry>(
    family: &PolyFamily,
    h: &impl Operator<T>,
    n: usize,
    method: TraceMethod,
    probes: usize,
    seed: u64,
    cap: usize,
) -> Result<TraceEstimate> {
    let dim = h.dim();
    match method {
        TraceMethod::Exact => {
            if dim > cap {
                return Err(LabError::Resource(format!("exact trace at N = {dim} exceeds cap {cap}")));
            }
            let mut tr = 0.0;
            let mut e = vec![T::zero(); dim];
            for x in 0..dim {
                e[x] = T::one();
                tr += apply_to_vector(family, h, n, &e)?[x].real();
                e[x] = T::zero();
            }
            Ok(TraceEstimate { n, value: tr, stderr: 0.0, method, samples: dim })
        }
        TraceMethod::Hutchinson => {
            if probes < 2 {
                return Err(LabError::invalid("hutchinson needs at least two probes"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = MeanAcc::default();
            for _ in 0..probes {
                let v: Vec<T> = (0..dim).map(|_| T::from_real(if rng.random::<bool>() { 1.0 } else { -1.0 })).collect();
                let pv = apply_to_vector(family, h, n, &v)?;
                let q: f64 = v.iter().zip(&pv).map(|(a, b)| (a.conjugate() * *b).real()).sum();
                acc.push(q);
            }
            Ok(TraceEstimate { n, value: acc.mean(), stderr: acc.stderr(), method, samples: probes })
        }
    }
}

/// Scaled Chebyshev principal term s^{n/2} U_n(x/√s) with s = 1 − a4 (+ Σ a_{2l}).
pub fn supercrit_asymptote(family: &PolyFamily, n: usize, x: f64) -> f64 {
    let s = family.edge_scale();
    s.powf(n as f64 / 2.0) * chebyshev_u(n, x / s.sqrt())
}

/// Kernel of the subcritical limit integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubcritDim {
    Two,
    Three,
}

impl TryFrom<usize> for SubcritDim {
    type Error = LabError;
    fn try_from(d: usize) -> Result<Self> {
        match d {
            2 => Ok(SubcritDim::Two),
            3 => Ok(SubcritDim::Three),
            _ => Err(LabError::invalid(format!("subcritical limit is defined for d ∈ {{2,3}}, got {d}"))),
        }
    }
}

fn subcrit_denominator(d: SubcritDim, y: Complex64, xhat: f64) -> Complex64 {
    let k = match d {
        SubcritDim::Two => (-y).ln() / (2.0 * PI),
        SubcritDim::Three => (-y).sqrt() / PI,
    };
    y * y + xhat - k
}

/// (1/(2πit)) ∫ e^{−ty} dy / (y² + x̂ − K(y)) along Re y = −c.
pub fn subcrit_line_integral(d: SubcritDim, t: f64, xhat: f64, c: f64, cutoff: f64) -> f64 {
    let f = |u: f64| {
        let y = Complex64::new(-c, u);
        ((-t * y).exp() / subcrit_denominator(d, y, xhat)).re
    };
    let mut total = 0.0;
    let mut a = 0.0;
    let step = 2.0 * PI / t;
    while a < cutoff {
        let b = (a + step).min(cutoff);
        total += quad::adaptive(f, a, b, 1e-13, 1e-11).0;
        a = b;
    }
    total / (PI * t)
}

/// Limit of (1/n)P̃_n(2x) in the subcritical scaling, with a contour-shift consistency check.
pub fn subcrit_limit_transform(d: usize, t: f64, xhat: f64) -> Result<f64> {
    let dim = SubcritDim::try_from(d)?;
    if !(t > 0.0) {
        return Err(LabError::invalid("t must be positive"));
    }
    let cutoff = 4000.0;
    let a = subcrit_line_integral(dim, t, xhat, 1.0, cutoff);
    let b = subcrit_line_integral(dim, t, xhat, 1.5, cutoff);
    if !(a.is_finite() && (a - b).abs() <= 1e-4 * a.abs().max(1e-3)) {
        return Err(LabError::Numerical(format!("subcritical integral not converged: {a} vs {b}")));
    }
    Ok(a)
}

/// Spectral parameter x of the subcritical scaling at bandwidth W.
pub fn subcrit_x(d: usize, w: f64, xhat: f64) -> Result<f64> {
    match SubcritDim::try_from(d)? {
        SubcritDim::Two => Ok(1.0 + (-2.0 - 2f64.ln() + w.ln()) / (4.0 * PI * w * w) - xhat / (2.0 * w * w)),
        SubcritDim::Three => {
            let zeta32 = 2.612_375_348_685_488_3;
            Ok(1.0 + (zeta32 - 1.0 - 0.5f64.sqrt()) / (2.0 * (2.0 * PI).powf(1.5) * w.powi(3)) - xhat / (2.0 * w.powi(4)))
        }
    }
}

/// One row of an inequality scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub inequality: String,
    pub grid_point: String,
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
}

/// |P_n(2x)| ≤ C/√(1−x²); constant = |P_n(2x)|√(1−x²).
pub fn bound_bulk(a4: f64, n: usize, xs: &[f64]) -> Vec<BoundRow> {
    let fam = PolyFamily::ModifiedP { a4 };
    xs.iter()
        .map(|&x| {
            let lhs = eval_scalar(&fam, n, 2.0 * x).abs();
            let c = lhs * (1.0 - x * x).sqrt();
            BoundRow {
                inequality: "bulk".into(),
                grid_point: format!("n={n};x={x}"),
                lhs,
                rhs: 1.0 / (1.0 - x * x).sqrt(),
                constant: c,
            }
        })
        .collect()
}

/// (1/n)P_n(2x) ≥ C3 e^{C4 n√δ} at x = √(1−a4+δ); constant = C3 at the given C4.
pub fn bound_outside(a4: f64, n: usize, deltas: &[f64], c4: f64) -> Vec<BoundRow> {
    let fam = PolyFamily::ModifiedP { a4 };
    deltas
        .iter()
        .map(|&delta| {
            let x = (1.0 - a4 + delta).sqrt();
            let lhs = eval_scalar(&fam, n, 2.0 * x) / n as f64;
            let rhs = (c4 * n as f64 * delta.sqrt()).exp();
            BoundRow {
                inequality: "outside".into(),
                grid_point: format!("n={n};delta={delta}"),
                lhs,
                rhs,
                constant: lhs / rhs,
            }
        })
        .collect()
}

/// U_n(1+x) ≥ e^{Cn√x}; constant = log U_n(1+x)/(n√x).
pub fn bound_edge_growth(n: usize, xs: &[f64]) -> Vec<BoundRow> {
    xs.iter()
        .map(|&x| {
            let lhs = chebyshev_u(n, 1.0 + x);
            BoundRow {
                inequality: "edge_growth".into(),
                grid_point: format!("n={n};x={x}"),
                lhs,
                rhs: (n as f64 * x.sqrt()).exp(),
                constant: lhs.ln() / (n as f64 * x.sqrt()),
            }
        })
        .collect()
}

/// sin(a)/a continued to sinh(|a|)/|a| for imaginary a, with a² = −λx².
fn sinc_ext(x: f64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        let a = x * (-lambda).sqrt();
        if a == 0.0 {
            1.0
        } else {
            a.sin() / a
        }
    } else {
        let a = x * lambda.sqrt();
        if a > 700.0 {
            (a - 2f64.ln() - a.ln()).exp()
        } else {
            a.sinh() / a
        }
    }
}

/// sin(t√−y)/(t√−y), continued analytically for y > 0.
pub fn sinc_limit(t: f64, y: f64) -> f64 {
    sinc_ext(t, y)
}

/// |(1/n)U_n(1 + y/(2M²)) − sin(t√−y)/(t√−y)| with n = ⌊tM⌋.
pub fn bound_sinc_limit(t: f64, y: f64, m: f64) -> BoundRow {
    let n = (t * m).floor() as usize;
    let lhs = chebyshev_u(n, 1.0 + y / (2.0 * m * m)) / n as f64;
    let rhs = sinc_limit(t, y);
    BoundRow {
        inequality: "sinc_limit".into(),
        grid_point: format!("t={t};y={y};M={m}"),
        lhs,
        rhs,
        constant: (lhs - rhs).abs(),
    }
}

/// Default scan of all four inequalities.
pub fn bound_checks(a4: f64, n: usize) -> Vec<BoundRow> {
    let xs: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
    let mut rows = bound_bulk(a4, n, &xs);
    let deltas: Vec<f64> = (1..=10).map(|i| (i as f64 / n as f64).powi(2)).collect();
    rows.extend(bound_outside(a4, n, &deltas, 0.5));
    let grow: Vec<f64> = [0.001, 0.01, 0.04, 0.1].to_vec();
    rows.extend(bound_edge_growth(n, &grow));
    for m in [50.0, 100.0, 200.0] {
        rows.push(bound_sinc_limit(1.0, -1.0, m));
    }
    rows
}

pub fn write_bound_csv(rows: &[BoundRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "inequality,grid_point,lhs,rhs,constant")?;
    for r in rows {
        writeln!(out, "{},{},{:.12e},{:.12e},{:.12e}", r.inequality, r.grid_point, r.lhs, r.rhs, r.constant)?;
    }
    Ok(())
}

/// Exponent 2j of the sinc transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SincPower(u32);

impl SincPower {
    pub fn new(j: u32) -> Result<Self> {
        if matches!(j, 2 | 4 | 5) {
            Ok(SincPower(j))
        } else {
            Err(LabError::invalid(format!("sinc transform index j must be 2, 4 or 5, got {j}")))
        }
    }
}

/// ∫ (sin(x√−λ)/(x√−λ))^{2j} dσ(λ) for a weighted point measure.
pub fn sinc_transform(measure: &[(f64, f64)], j: SincPower, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(LabError::invalid("sinc transform needs x > 0"));
    }
    let p = 2 * j.0 as i32;
    Ok(measure
        .iter()
        .map(|&(lambda, w)| {
            if lambda > 0.0 && x * lambda.sqrt() > 700.0 {
                let a = x * lambda.sqrt();
                w * (p as f64 * (a - 2f64.ln() - a.ln())).exp()
            } else {
                w * sinc_ext(x, lambda).powi(p)
            }
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn modp(a4: f64) -> PolyFamily {
        PolyFamily::modified(a4).unwrap()
    }

    #[test]
    fn modified_with_zero_a4_is_chebyshev() {
        for n in 0..=50 {
            for i in 0..=20 {
                let x = -1.0 + i as f64 / 10.0;
                let u = eval_scalar(&PolyFamily::ChebyshevU, n, 2.0 * x);
                assert!((eval_scalar(&modp(0.0), n, 2.0 * x) - u).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn p4_closed_form() {
        let a4 = 0.0123;
        for z in [-1.7f64, 0.3, 2.5] {
            let want = z.powi(4) - 3.0 * z * z + 1.0 + a4;
            assert_relative_eq!(eval_scalar(&modp(a4), 4, z), want, max_relative = 1e-14);
        }
    }

    #[test]
    fn renormalized_without_loops_is_modified() {
        let r = PolyFamily::renormalized(1e-3, vec![(3, 0.0), (4, 0.0)], 3).unwrap();
        for n in 0..=100 {
            assert!((eval_scalar(&r, n, 1.3) - eval_scalar(&modp(1e-3), n, 1.3)).abs() <= 1e-12 * eval_scalar(&modp(1e-3), n, 1.3).abs().max(1.0));
        }
        assert!(PolyFamily::renormalized(0.0, vec![(10, 0.1)], 3).is_err());
    }

    #[test]
    fn contour_matches_recursion() {
        let fam = modp(1e-3);
        for n in 0..=20 {
            let v = contour_value(&fam, n, 0.6, 0.5, 2048).unwrap();
            let r = eval_scalar(&fam, n, 0.6);
            assert!((v - r).abs() <= 1e-9 * r.abs().max(1.0), "n={n}");
        }
        for n in 0..=50 {
            contour_eval(&fam, n, 0.6, None, None).unwrap();
        }
        assert!((contour_eval(&fam, 0, 0.6, None, None).unwrap() - 1.0).abs() < 1e-12);
        for n in 1..=30 {
            let th: f64 = 0.7;
            let v = contour_eval(&PolyFamily::ChebyshevU, n, 2.0 * th.cos(), None, None).unwrap();
            assert!((v - ((n + 1) as f64 * th).sin() / th.sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn contour_beyond_pole_is_flagged() {
        assert!(matches!(contour_eval(&modp(0.0), 10, 0.6, Some(1.2), Some(256)), Err(LabError::Numerical(_))));
    }

    fn dense_hermitian(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = if i == j {
                    Complex64::new(rng.random::<f64>() - 0.5, 0.0)
                } else {
                    Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                } / (n as f64).sqrt();
                m[(i, j)] = v;
                m[(j, i)] = v.conj();
            }
        }
        m
    }

    #[test]
    fn vector_application_matches_dense() {
        let h = dense_hermitian(16, 1);
        let fam = PolyFamily::renormalized(1e-2, vec![(3, 2e-3), (4, 1e-3)], 3).unwrap();
        let mut mats = vec![DMatrix::<Complex64>::identity(16, 16), h.clone()];
        let lags = fam.lags();
        for k in 2..=12 {
            let mut m = &h * &mats[k - 1] - &mats[k - 2];
            for &(lag, c) in &lags {
                if lag <= k {
                    m += &mats[k - lag] * Complex64::new(c, 0.0);
                }
            }
            mats.push(m);
        }
        let v: Vec<Complex64> = (0..16).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let got = apply_to_vector(&fam, &h, 12, &v).unwrap();
        let want = &mats[12] * nalgebra::DVector::from_vec(v.clone());
        for i in 0..16 {
            assert!((got[i] - want[i]).norm() < 1e-9);
        }
        let tr = traces_dense(&fam, &h, 12);
        assert!((tr[12] - mats[12].trace().re).abs() < 1e-9);
        assert!(apply_to_vector(&fam, &h, 2, &v[..3]).is_err());
    }

    #[test]
    fn p2_is_h_squared_minus_identity() {
        let h = dense_hermitian(8, 2);
        let v: Vec<Complex64> = (0..8).map(|i| Complex64::new(1.0, i as f64)).collect();
        let got = apply_to_vector(&modp(0.3), &h, 2, &v).unwrap();
        let dv = nalgebra::DVector::from_vec(v.clone());
        let want = &h * (&h * &dv) - &dv;
        for i in 0..8 {
            assert!((got[i] - want[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn traces() {
        let h = dense_hermitian(64, 3);
        let fam = modp(1e-3);
        let t0 = trace_poly(&fam, &h, 0, TraceMethod::Exact, 0, 0, 4096).unwrap();
        assert_eq!(t0.value, 64.0);
        let ex = trace_poly(&fam, &h, 6, TraceMethod::Exact, 0, 0, 4096).unwrap();
        let hu = trace_poly(&fam, &h, 6, TraceMethod::Hutchinson, 32, 9, 4096).unwrap();
        assert!((ex.value - hu.value).abs() <= 4.0 * hu.stderr);
        assert!(trace_poly(&fam, &h, 6, TraceMethod::Exact, 0, 0, 10).is_err());
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.1, -0.7, 1.9]));
        let t = trace_poly(&fam, &d, 7, TraceMethod::Exact, 0, 0, 4096).unwrap();
        let s: f64 = [0.1, -0.7, 1.9].iter().map(|&z| eval_scalar(&fam, 7, z)).sum();
        assert!((t.value - s).abs() < 1e-10);
    }

    #[test]
    fn supercritical_asymptote() {
        let fam = modp(1e-4);
        let n = 1000;
        let d = (eval_scalar(&fam, n, 1.0) - supercrit_asymptote(&fam, n, 0.5)).abs() / n as f64;
        assert!(d <= 0.01, "{d}");
        assert_eq!(supercrit_asymptote(&modp(0.0), 17, 0.4), chebyshev_u(17, 0.4));
        let xe = (1.0 - 1e-4f64).sqrt();
        let v = supercrit_asymptote(&fam, 40, xe);
        assert_relative_eq!(v, (1.0 - 1e-4f64).powf(20.0) * 41.0, max_relative = 1e-10);
    }

    #[test]
    fn lemma_bounds() {
        let g = bound_edge_growth(100, &[0.04]);
        assert!(g[0].lhs >= (0.1f64 * 100.0 * 0.2).exp());
        let b = bound_sinc_limit(1.0, -1.0, 200.0);
        assert!(b.constant <= 5e-3, "{}", b.constant);
        let bulk = bound_bulk(1e-4, 100, &[0.5]);
        assert!(bulk[0].constant <= 3.0);
        let rows = bound_checks(1e-4, 100);
        let mut buf = Vec::new();
        write_bound_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), rows.len() + 1);
    }

    #[test]
    fn sinc_transforms() {
        let j = SincPower::new(2).unwrap();
        for x in [0.5, 1.0, 3.0] {
            assert_eq!(sinc_transform(&[(0.0, 1.0)], j, x).unwrap(), 1.0);
        }
        let x = 2.0;
        let v = sinc_transform(&[(-PI * PI / (x * x), 1.0)], j, x).unwrap();
        assert!(v < 1e-30);
        let m = 1000;
        let pts: Vec<(f64, f64)> = (0..m).map(|i| (-4.0 + 3.0 * (i as f64 + 0.5) / m as f64, 1.0 / m as f64)).collect();
        let v = sinc_transform(&pts, j, 1.0).unwrap();
        let (oracle, _) = quad::adaptive(|l| ((-l).sqrt().sin() / (-l).sqrt()).powi(4) / 3.0, -4.0, -1.0, 1e-14, 1e-13);
        assert!((v - oracle).abs() < 1e-3);
        let below = sinc_ext(1.0, 699.999f64.powi(2));
        let above = sinc_ext(1.0, 700.001f64.powi(2));
        assert!((above / below / (0.002f64).exp() - 1.0).abs() < 1e-5);
        assert!(SincPower::new(3).is_err());
    }

    #[test]
    fn subcritical_transform() {
        for xhat in [50.0, 200.0, 1000.0] {
            let a = subcrit_limit_transform(3, 1.0, xhat).unwrap();
            let s: f64 = xhat.sqrt();
            assert!(a.abs() <= 2.0 / s);
        }
        let b = subcrit_limit_transform(2, 1.0, 1.0).unwrap();
        let c = subcrit_limit_transform(3, 1.0, 1.0).unwrap();
        assert!((b - c).abs() > 1e-3);
        assert!(subcrit_limit_transform(4, 1.0, 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn family() -> impl Strategy<Value = PolyFamily> {
            prop_oneof![
                Just(PolyFamily::ChebyshevU),
                (0.0f64..1e-3).prop_map(|a| PolyFamily::ModifiedP { a4: a }),
                (0.0f64..1e-3, 0.0f64..1e-3, 0.0f64..1e-3)
                    .prop_map(|(a, b, c)| PolyFamily::renormalized(a, vec![(3, b), (5, c)], 2).unwrap()),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn parity(f in family(), n in 0usize..40, z in -2.5f64..2.5) {
                let a = eval_scalar(&f, n, z);
                let b = eval_scalar(&f, n, -z);
                let s = if n % 2 == 0 { 1.0 } else { -1.0 };
                prop_assert!((a - s * b).abs() <= 1e-12 * a.abs().max(1.0));
            }

            #[test]
            fn monic(f in family(), n in 0usize..30) {
                let z = 1e6;
                let r = eval_scalar(&f, n, z) / z.powi(n as i32);
                prop_assert!((r - 1.0).abs() <= 1e-6);
            }

            #[test]
            fn contour_agrees(f in family(), n in 0usize..50, x in -0.9f64..0.9) {
                let z = 2.0 * x;
                let v = contour_value(&f, n, z, default_radius(n), default_points(n)).unwrap();
                let r = eval_scalar(&f, n, z);
                prop_assert!((v - r).abs() <= 1e-8 * r.abs().max(1.0), "{} vs {}", v, r);
            }

            #[test]
            fn linear(seed in any::<u64>(), alpha in -3.0f64..3.0) {
                let h = dense_hermitian(6, seed);
                let fam = PolyFamily::ModifiedP { a4: 0.01 };
                let v: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64, -1.0)).collect();
                let w: Vec<Complex64> = (0..6).map(|i| Complex64::new(1.0, i as f64 * 0.5)).collect();
                let comb: Vec<Complex64> = v.iter().zip(&w).map(|(a, b)| a * alpha + b).collect();
                let lhs = apply_to_vector(&fam, &h, 7, &comb).unwrap();
                let pv = apply_to_vector(&fam, &h, 7, &v).unwrap();
                let pw = apply_to_vector(&fam, &h, 7, &w).unwrap();
                for i in 0..6 {
                    prop_assert!((lhs[i] - (pv[i] * alpha + pw[i])).norm() <= 1e-12 * (1.0 + lhs[i].norm()));
                }
            }
        }
    }
}
