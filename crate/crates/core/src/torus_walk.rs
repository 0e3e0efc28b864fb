//! Periodized Gaussian random walks on the discrete torus (Z/LZ)^d.
//!
//! Theta functions, the variance profile σ²_xy, exact n-step kernels computed
//! spectrally, and numeric checks of the local limit theorem, heat-kernel
//! bound, vertex splitting and intersection estimates.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Values below this are treated as zero in kernels.
pub const KERNEL_FLOOR: f64 = 1e-300;
/// Largest n·e^{-c_Σ W²/2} accepted by the regime-sensitive checks.
pub const LLT_PRECONDITION: f64 = 1e-2;

/// Side-L torus in d dimensions with bandwidth W and covariance Σ.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusLattice {
    d: usize,
    l: usize,
    w: f64,
    sigma: DMatrix<f64>,
    c_sigma: f64,
}

impl TorusLattice {
    pub fn new(d: usize, l: usize, w: f64, sigma: DMatrix<f64>) -> Result<Self> {
        if d == 0 {
            return Err(LabError::invalid("dimension d must be positive"));
        }
        if l < 2 {
            return Err(LabError::invalid(format!("side length L={l} must be at least 2")));
        }
        if !(w > 0.0) || w > l as f64 / 2.0 {
            return Err(LabError::invalid(format!("bandwidth W={w} must lie in (0, L/2]")));
        }
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(LabError::invalid("covariance must be d×d"));
        }
        let c_sigma = spd_min_eigenvalue(&sigma)?;
        Ok(TorusLattice { d, l, w, sigma, c_sigma })
    }

    /// Lattice with Σ = I.
    pub fn isotropic(d: usize, l: usize, w: f64) -> Result<Self> {
        Self::new(d, l, w, DMatrix::identity(d, d))
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Smallest eigenvalue of Σ.
    pub fn c_sigma(&self) -> f64 {
        self.c_sigma
    }

    /// Number of sites N = L^d.
    pub fn n_sites(&self) -> usize {
        self.l.pow(self.d as u32)
    }

    /// Row-major site index of coordinates in [0, L).
    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.l + c)
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.d];
        for k in (0..self.d).rev() {
            c[k] = idx % self.l;
            idx /= self.l;
        }
        c
    }

    /// Canonical representative of a displacement, components in (−L/2, L/2].
    pub fn canonical(&self, delta: &[i64]) -> Vec<i64> {
        let l = self.l as i64;
        delta
            .iter()
            .map(|&v| {
                let r = v.rem_euclid(l);
                if r > l / 2 {
                    r - l
                } else {
                    r
                }
            })
            .collect()
    }

    /// Site index of the displacement y − x.
    pub fn displacement_index(&self, x: usize, y: usize) -> usize {
        if self.d == 1 {
            return (y + self.l - x) % self.l;
        }
        let (cx, cy) = (self.coords(x), self.coords(y));
        let l = self.l;
        let c: Vec<usize> = cx.iter().zip(&cy).map(|(&a, &b)| (b + l - a) % l).collect();
        self.index(&c)
    }

    /// Canonical displacement vector of a site index.
    pub fn delta_of(&self, idx: usize) -> Vec<i64> {
        let c: Vec<i64> = self.coords(idx).iter().map(|&v| v as i64).collect();
        self.canonical(&c)
    }

    /// Index of a (possibly non-canonical) displacement.
    pub fn index_of_delta(&self, delta: &[i64]) -> usize {
        let l = self.l as i64;
        let c: Vec<usize> = delta.iter().map(|&v| v.rem_euclid(l) as usize).collect();
        self.index(&c)
    }

    fn scaled_sigma(&self, factor: f64) -> DMatrix<f64> {
        &self.sigma * factor
    }
}

fn spd_min_eigenvalue(s: &DMatrix<f64>) -> Result<f64> {
    if (s - s.transpose()).amax() > 1e-12 * s.amax().max(1.0) {
        return Err(LabError::invalid("covariance matrix is not symmetric"));
    }
    let ev = s.clone().symmetric_eigenvalues();
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(LabError::invalid("covariance matrix is not positive definite"));
    }
    Ok(min)
}

/// Argument of the Jacobi theta function: torus point x ∈ [0,1)^d and covariance S.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaArg {
    x: Vec<f64>,
    s: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    det: f64,
}

impl ThetaArg {
    pub fn new(x: &[f64], s: DMatrix<f64>) -> Result<Self> {
        if s.nrows() != x.len() || s.ncols() != x.len() {
            return Err(LabError::invalid("theta covariance must be d×d"));
        }
        spd_min_eigenvalue(&s)?;
        let x = x.iter().map(|v| v.rem_euclid(1.0)).collect();
        let s_inv = s.clone().try_inverse().ok_or_else(|| LabError::invalid("singular covariance"))?;
        let det = s.determinant();
        Ok(ThetaArg { x, s, s_inv, det })
    }

    pub fn scalar(x: f64, t: f64) -> Result<Self> {
        Self::new(&[x], DMatrix::from_element(1, 1, t))
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }
}

/// Calls `f` for every integer vector with sup-norm exactly r.
fn for_shell(d: usize, r: i64, mut f: impl FnMut(&[i64])) {
    let side = (2 * r + 1) as usize;
    let total = side.pow(d as u32);
    let mut v = vec![0i64; d];
    for mut k in 0..total {
        for c in v.iter_mut() {
            *c = (k % side) as i64 - r;
            k /= side;
        }
        if v.iter().any(|c| c.abs() == r) {
            f(&v);
        }
    }
}

fn shell_sum(d: usize, mut term: impl FnMut(&[i64]) -> f64) -> f64 {
    let mut total = 0.0;
    let mut abs_total = 0.0;
    for r in 0..100_000i64 {
        let mut shell = 0.0;
        let mut shell_abs = 0.0;
        for_shell(d, r, |n| {
            let t = term(n);
            shell += t;
            shell_abs += t.abs();
        });
        total += shell;
        abs_total += shell_abs;
        if r >= 2 && shell_abs <= 1e-17 * abs_total {
            break;
        }
    }
    total
}

/// Direct Gaussian image sum.
pub fn theta_direct(arg: &ThetaArg) -> f64 {
    let d = arg.x.len();
    let norm = ((2.0 * PI).powi(d as i32) * arg.det).sqrt();
    let mut y = vec![0.0; d];
    let sum = shell_sum(d, |n| {
        for i in 0..d {
            y[i] = n[i] as f64 + arg.x[i];
        }
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += y[i] * arg.s_inv[(i, j)] * y[j];
            }
        }
        (-0.5 * q).exp()
    });
    sum / norm
}

/// Poisson-dual exponential sum Σ_k e^{−2π² kᵀSk} cos(2π k·x).
pub fn theta_dual(arg: &ThetaArg) -> f64 {
    let d = arg.x.len();
    shell_sum(d, |k| {
        let mut q = 0.0;
        let mut phase = 0.0;
        for i in 0..d {
            phase += k[i] as f64 * arg.x[i];
            for j in 0..d {
                q += k[i] as f64 * arg.s[(i, j)] * k[j] as f64;
            }
        }
        (-2.0 * PI * PI * q).exp() * (2.0 * PI * phase).cos()
    })
}

/// θ(x, S), using the representation that converges fastest.
pub fn theta(arg: &ThetaArg) -> f64 {
    let d = arg.x.len() as f64;
    if arg.s.trace() < d {
        theta_direct(arg)
    } else {
        theta_dual(arg)
    }
}

/// Mass normalization M = Σ_{x∈Z^d} f(x/W) = W^d θ(0, W²Σ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mass {
    pub value: f64,
    /// Bound ε on |M/W^d − 1|.
    pub eps_bound: f64,
}

pub fn mass_m(lat: &TorusLattice) -> Mass {
    let d = lat.d;
    let arg = ThetaArg::new(&vec![0.0; d], lat.scaled_sigma(lat.w * lat.w)).expect("SPD by construction");
    Mass {
        value: lat.w.powi(d as i32) * theta(&arg),
        eps_bound: (-0.5 * lat.c_sigma * lat.w * lat.w).exp(),
    }
}

/// σ²_{xy} for y − x = delta, via (W^d/(M L^d)) θ((x−y)/L, (W²/L²)Σ).
pub fn profile_sigma2(lat: &TorusLattice, delta: &[i64]) -> f64 {
    let m = mass_m(lat).value;
    profile_sigma2_with_mass(lat, delta, m)
}

fn profile_sigma2_with_mass(lat: &TorusLattice, delta: &[i64], m: f64) -> f64 {
    let l = lat.l as f64;
    let x: Vec<f64> = delta.iter().map(|&v| -(v as f64) / l).collect();
    let arg = ThetaArg::new(&x, lat.scaled_sigma(lat.w * lat.w / (l * l))).expect("SPD by construction");
    (lat.w / l).powi(lat.d as i32) / m * theta(&arg)
}

/// Full profile σ²(0, ·) indexed by site.
pub fn profile_vector(lat: &TorusLattice) -> Vec<f64> {
    let m = mass_m(lat).value;
    (0..lat.n_sites())
        .map(|i| profile_sigma2_with_mass(lat, &lat.delta_of(i), m))
        .collect()
}

/// Evaluation route for n-step transition probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionMethod {
    Theta,
    Convolution,
}

/// Kernel values with a flag marking whether any entry was clamped to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelVector {
    pub values: Vec<f64>,
    pub clamped: bool,
}

/// Spectral representation of the one-step kernel on a fixed lattice.
#[derive(Clone)]
pub struct Kernel {
    lat: TorusLattice,
    profile: Vec<f64>,
    spectrum: Vec<f64>,
    planner: Arc<std::sync::Mutex<FftPlanner<f64>>>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernel").field("lat", &self.lat).finish()
    }
}

impl Kernel {
    pub fn new(lat: &TorusLattice) -> Self {
        Self::from_profile(lat, profile_vector(lat))
    }

    /// Kernel of an arbitrary even one-step profile indexed by displacement.
    pub fn from_profile(lat: &TorusLattice, profile: Vec<f64>) -> Self {
        let planner = Arc::new(std::sync::Mutex::new(FftPlanner::new()));
        let mut buf: Vec<Complex64> = profile.iter().map(|&p| Complex64::new(p, 0.0)).collect();
        fft_nd(&planner, &mut buf, lat.l, lat.d, false);
        let spectrum = buf.iter().map(|c| c.re).collect();
        Kernel { lat: lat.clone(), profile, spectrum, planner }
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lat
    }

    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    /// Fourier coefficients of the one-step kernel (real since σ² is even).
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// p_n(0, ·); n = 0 gives the delta mass at the origin.
    pub fn n_step(&self, n: usize) -> KernelVector {
        let mut buf: Vec<Complex64> = self
            .spectrum
            .iter()
            .map(|&s| Complex64::new(s.powi(n as i32), 0.0))
            .collect();
        fft_nd(&self.planner, &mut buf, self.lat.l, self.lat.d, true);
        let scale = 1.0 / self.lat.n_sites() as f64;
        let mut clamped = false;
        let values = buf
            .iter()
            .map(|c| {
                let v = c.re * scale;
                if v.abs() < KERNEL_FLOOR {
                    clamped |= v != 0.0;
                    0.0
                } else {
                    v
                }
            })
            .collect();
        KernelVector { values, clamped }
    }

    /// All kernels p_0..p_n.
    pub fn steps_upto(&self, n: usize) -> Vec<Vec<f64>> {
        (0..=n).map(|k| self.n_step(k).values).collect()
    }
}

fn fft_nd(planner: &std::sync::Mutex<FftPlanner<f64>>, data: &mut [Complex64], l: usize, d: usize, inverse: bool) {
    let fft = {
        let mut p = planner.lock().expect("planner lock");
        if inverse {
            p.plan_fft_inverse(l)
        } else {
            p.plan_fft_forward(l)
        }
    };
    let n = data.len();
    let mut line = vec![Complex64::new(0.0, 0.0); l];
    for axis in 0..d {
        let stride = l.pow((d - 1 - axis) as u32);
        for start in 0..n {
            if (start / stride) % l != 0 {
                continue;
            }
            for k in 0..l {
                line[k] = data[start + k * stride];
            }
            fft.process(&mut line);
            for k in 0..l {
                data[start + k * stride] = line[k];
            }
        }
    }
}

/// n-step transition probability p_n(0, delta).
pub fn transition_n(lat: &TorusLattice, n: usize, delta: &[i64], method: TransitionMethod) -> Result<f64> {
    if n == 0 {
        return Err(LabError::invalid("step count must be at least 1"));
    }
    match method {
        TransitionMethod::Theta => Ok(transition_theta(lat, n, delta)),
        TransitionMethod::Convolution => {
            let k = Kernel::new(lat);
            Ok(k.n_step(n).values[lat.index_of_delta(delta)])
        }
    }
}

/// (1/N)·θ((x−y)/L, nW²Σ/L²).
pub fn transition_theta(lat: &TorusLattice, n: usize, delta: &[i64]) -> f64 {
    let l = lat.l as f64;
    let x: Vec<f64> = delta.iter().map(|&v| -(v as f64) / l).collect();
    let arg = ThetaArg::new(&x, lat.scaled_sigma(n as f64 * lat.w * lat.w / (l * l))).expect("SPD by construction");
    theta(&arg) / lat.n_sites() as f64
}

fn check_llt_precondition(lat: &TorusLattice, steps: usize) -> Result<()> {
    let v = steps as f64 * (-0.5 * lat.c_sigma * lat.w * lat.w).exp();
    if v > LLT_PRECONDITION {
        return Err(LabError::Regime(format!(
            "n·exp(-c_Σ W²/2) = {v:.3e} exceeds {LLT_PRECONDITION:e}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatKernelReport {
    pub holds: bool,
    /// max over displacements of p_n / (C1·envelope).
    pub worst_ratio: f64,
    /// Smallest C1 for which the bound holds at the given C2.
    pub fitted_c1: f64,
    pub c2: f64,
}

/// Checks p_n(x,y) ≤ C1 ∏_i ((nW²)^{-1/2} e^{−C2 (x_i−y_i)²/(nW²)} + 1/L) over all displacements.
pub fn heat_kernel_bound_check(kernel: &Kernel, n: usize, c1: f64, c2: f64) -> Result<HeatKernelReport> {
    let lat = &kernel.lat;
    check_llt_precondition(lat, n)?;
    if n == 0 {
        return Err(LabError::invalid("step count must be at least 1"));
    }
    let p = kernel.n_step(n).values;
    let nw2 = n as f64 * lat.w * lat.w;
    let fitted = (0..lat.n_sites())
        .map(|i| {
            let env: f64 = lat
                .delta_of(i)
                .iter()
                .map(|&c| nw2.powf(-0.5) * (-c2 * (c * c) as f64 / nw2).exp() + 1.0 / lat.l as f64)
                .product();
            p[i] / env
        })
        .fold(0.0, f64::max);
    Ok(HeatKernelReport { holds: fitted <= c1, worst_ratio: fitted / c1, fitted_c1: fitted, c2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VertexSplitReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// lhs = p_{n1}(x1,x3)p_{n2}(x2,x3) versus rhs = Σ_x p_{n1}(x1,x)p_{n2}(x2,x)p_{n3}(x,x3).
pub fn vertex_split_check(
    kernel: &Kernel,
    (n1, n2, n3): (usize, usize, usize),
    (x1, x2, x3): (usize, usize, usize),
) -> Result<VertexSplitReport> {
    if !(n1 >= n3 && n2 >= n3 && n3 >= 1) {
        return Err(LabError::invalid("vertex splitting requires n1, n2 ≥ n3 ≥ 1"));
    }
    let lat = &kernel.lat;
    check_llt_precondition(lat, n1 + n2 + n3)?;
    let p1 = kernel.n_step(n1).values;
    let p2 = kernel.n_step(n2).values;
    let p3 = kernel.n_step(n3).values;
    let lhs = p1[lat.displacement_index(x1, x3)] * p2[lat.displacement_index(x2, x3)];
    let rhs: f64 = (0..lat.n_sites())
        .map(|x| {
            p1[lat.displacement_index(x1, x)] * p2[lat.displacement_index(x2, x)] * p3[lat.displacement_index(x, x3)]
        })
        .sum();
    Ok(VertexSplitReport { lhs, rhs, ratio: lhs / rhs })
}

/// Intersection envelope n²/N + {n^{3/2}/W, n log n/W², n/W^d}.
pub fn intersection_envelope(lat: &TorusLattice, n: usize) -> f64 {
    let nf = n as f64;
    let bulk = nf * nf / lat.n_sites() as f64;
    let local = match lat.d {
        1 => nf.powf(1.5) / lat.w,
        2 => nf * nf.ln() / (lat.w * lat.w),
        d => nf / lat.w.powi(d as i32),
    };
    bulk + local
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntersectionReport {
    /// Expected number of intersection times of two bridges.
    pub pair: f64,
    /// Expected number of self-intersections of the first bridge.
    pub self_intersections: f64,
    /// Envelope evaluated at n = n1 + n2.
    pub envelope: f64,
}

/// Exact conditional intersection counts of bridges x1→x2 (n1 steps) and x3→x4 (n2 steps).
pub fn intersection_expectation(
    kernel: &Kernel,
    n1: usize,
    n2: usize,
    endpoints: [usize; 4],
) -> Result<IntersectionReport> {
    if n1 == 0 || n2 == 0 {
        return Err(LabError::invalid("bridge lengths must be at least 1"));
    }
    let lat = &kernel.lat;
    let [x1, x2, x3, x4] = endpoints;
    let steps = kernel.steps_upto(n1.max(n2));
    let p = |k: usize, a: usize, b: usize| steps[k][lat.displacement_index(a, b)];
    let bridge = |n: usize, a: usize, b: usize| -> Vec<f64> {
        let z = p(n, a, b);
        (0..lat.n_sites())
            .map(|x| (1..=n).map(|i| p(n - i, a, x) * p(i, x, b)).sum::<f64>() / z)
            .collect()
    };
    let a = bridge(n1, x1, x2);
    let b = bridge(n2, x3, x4);
    let pair = a.iter().zip(&b).map(|(u, v)| u * v).sum();
    let z = p(n1, x1, x2);
    let mut self_sum = 0.0;
    for i in 1..=n1 {
        for j in (i + 1)..=n1 {
            self_sum += (0..lat.n_sites())
                .map(|x| p(i, x1, x) * p(j - i, x, x) * p(n1 - j, x, x2))
                .sum::<f64>();
        }
    }
    Ok(IntersectionReport {
        pair,
        self_intersections: self_sum / z,
        envelope: intersection_envelope(lat, n1 + n2),
    })
}

/// Writes a kernel as CSV with one column per displacement component plus the probability.
pub fn write_kernel_csv(lat: &TorusLattice, values: &[f64], mut out: impl Write) -> Result<()> {
    let header: Vec<String> = (0..lat.d).map(|i| format!("delta_{i}")).collect();
    writeln!(out, "{},probability", header.join(","))?;
    for (i, v) in values.iter().enumerate() {
        let delta: Vec<String> = lat.delta_of(i).iter().map(|c| c.to_string()).collect();
        writeln!(out, "{},{:.17e}", delta.join(","), v)?;
    }
    Ok(())
}

/// Scaling regime of a lattice relative to W ~ L^{1−d/6}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub regime: Regime,
    pub tau: Vec<f64>,
    pub gamma: Option<f64>,
}

/// γ = W / L^{1−d/6}; the critical scale is γ of order one.
pub fn critical_gamma(lat: &TorusLattice) -> f64 {
    lat.w / (lat.l as f64).powf(1.0 - lat.d as f64 / 6.0)
}

/// Classifies a lattice: supercritical if γ ≥ slack, subcritical if γ ≤ 1/slack, critical otherwise.
pub fn classify(lat: &TorusLattice, slack: f64) -> Regime {
    let g = critical_gamma(lat);
    if g >= slack {
        Regime::Supercritical
    } else if g <= 1.0 / slack {
        Regime::Subcritical
    } else {
        Regime::Critical
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat1(l: usize, w: f64) -> TorusLattice {
        TorusLattice::isotropic(1, l, w).unwrap()
    }

    /// Independent oracle: sum the Gaussian density over all lattice images.
    fn sigma2_by_images(l: usize, w: f64, delta: i64) -> f64 {
        let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        let m: f64 = (-2000i64..=2000).map(|x| f(x as f64 / w)).sum();
        let s: f64 = (-200i64..=200).map(|k| f((delta + k * l as i64) as f64 / w)).sum();
        s / m
    }

    #[test]
    fn theta_large_covariance_is_one() {
        let arg = ThetaArg::scalar(0.0, 100.0).unwrap();
        assert!((theta(&arg) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn theta_half_point_two_images() {
        let t = 0.01;
        let arg = ThetaArg::scalar(0.5, t).unwrap();
        let approx = 2.0 * (2.0 * PI * t).powf(-0.5) * (-1.0 / (8.0 * t)).exp();
        assert!((theta(&arg) / approx - 1.0).abs() < 0.01);
    }

    #[test]
    fn direct_and_dual_agree() {
        for &t in &[1e-2, 1e-1, 1.0, 10.0] {
            let arg = ThetaArg::scalar(0.3, t).unwrap();
            let (a, b) = (theta_direct(&arg), theta_dual(&arg));
            assert!((a - b).abs() / a < 1e-11, "t={t}: {a} vs {b}");
        }
        // At t = 1e-3 the value at x = 0.3 is ~1e-19 and the dual sum cancels;
        // compare on the scale of θ(0, t) instead.
        let arg = ThetaArg::scalar(0.3, 1e-3).unwrap();
        let scale = theta_direct(&ThetaArg::scalar(0.0, 1e-3).unwrap());
        assert!((theta_direct(&arg) - theta_dual(&arg)).abs() / scale < 1e-11);
    }

    #[test]
    fn theta_rejects_non_spd() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(ThetaArg::new(&[0.0, 0.0], s).is_err());
    }

    #[test]
    fn profile_normalized_and_even() {
        let lat = lat1(32, 4.0);
        let p = profile_vector(&lat);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 1..16i64 {
            assert_eq!(profile_sigma2(&lat, &[k]), profile_sigma2(&lat, &[-k]));
        }
    }

    #[test]
    fn profile_matches_image_sum_oracle() {
        let lat = lat1(32, 4.0);
        for delta in [0i64, 3, 16] {
            let v = profile_sigma2(&lat, &[delta]);
            let o = sigma2_by_images(32, 4.0, delta);
            assert!((v / o - 1.0).abs() < 1e-12, "delta={delta}");
        }
    }

    #[test]
    fn mass_asymptotics() {
        let m = mass_m(&lat1(32, 10.0));
        assert!((m.value / 10.0 - 1.0).abs() < 1e-12);
        let direct: f64 = (-200i64..=200).map(|x| (-0.5 * (x * x) as f64).exp() / (2.0 * PI).sqrt()).sum();
        let m1 = mass_m(&lat1(8, 1.0));
        assert!((m1.value - direct).abs() < 1e-13);
        let mut prev = f64::INFINITY;
        for w in [2.0, 4.0, 8.0] {
            let dev = (mass_m(&TorusLattice::isotropic(2, 32, w).unwrap()).value / (w * w) - 1.0).abs();
            assert!(dev <= prev);
            prev = dev;
        }
    }

    #[test]
    fn one_step_kernel_is_profile() {
        let lat = lat1(32, 4.0);
        let k = Kernel::new(&lat);
        let p1 = k.n_step(1).values;
        for (a, b) in p1.iter().zip(k.profile()) {
            assert!((a - b).abs() < 1e-16);
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        let lat = lat1(32, 4.0);
        let k = Kernel::new(&lat);
        let (p2, p3, p5) = (k.n_step(2).values, k.n_step(3).values, k.n_step(5).values);
        for (a, b) in [(0usize, 0usize), (0, 7), (3, 20)] {
            let s: f64 = (0..32).map(|x| p2[lat.displacement_index(a, x)] * p3[lat.displacement_index(x, b)]).sum();
            assert!((s - p5[lat.displacement_index(a, b)]).abs() < 1e-12);
        }
    }

    #[test]
    fn llt_theta_vs_convolution() {
        let lat = lat1(64, 8.0);
        let k = Kernel::new(&lat);
        let p = k.n_step(10).values;
        let worst = (0..64)
            .map(|i| (transition_theta(&lat, 10, &lat.delta_of(i)) / p[i] - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn regime_limits() {
        let lat = lat1(32, 8.0);
        let k = Kernel::new(&lat);
        let n = 400;
        let p = k.n_step(n).values;
        assert!(p.iter().all(|v| (v * 32.0 - 1.0).abs() <= 1e-6));
        let lat = lat1(256, 8.0);
        let k = Kernel::new(&lat);
        let n = 40;
        let p = k.n_step(n).values;
        let s2 = n as f64 * 64.0;
        for x in 0..=64i64 {
            let g = (-(x * x) as f64 / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt();
            assert!((p[lat.index_of_delta(&[x])] / g - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn heat_kernel_examples() {
        let lat = lat1(64, 8.0);
        let k = Kernel::new(&lat);
        for n in 1..=50 {
            let r = heat_kernel_bound_check(&k, n, 3.0, 0.4).unwrap();
            assert!(r.holds, "n={n} C1={}", r.fitted_c1);
        }
        let r1 = heat_kernel_bound_check(&k, 1, 3.0, 0.45).unwrap();
        assert!(r1.holds);
        let small = lat1(16, 1.0);
        assert!(matches!(
            heat_kernel_bound_check(&Kernel::new(&small), 5, 3.0, 0.4),
            Err(LabError::Regime(_))
        ));
    }

    #[test]
    fn vertex_split_examples() {
        let lat = lat1(32, 4.0);
        let k = Kernel::new(&lat);
        let r = vertex_split_check(&k, (4, 4, 1), (0, 0, 0)).unwrap();
        assert!(r.ratio.is_finite() && r.ratio <= 10.0);
        let r = vertex_split_check(&k, (3, 3, 3), (0, 0, 0)).unwrap();
        let p3 = k.n_step(3).values[0];
        assert!(r.rhs >= p3 * p3 * p3);
        assert!(vertex_split_check(&k, (1, 4, 2), (0, 0, 0)).is_err());
    }

    #[test]
    fn intersection_one_step_bridges() {
        let lat = lat1(16, 2.0);
        let k = Kernel::new(&lat);
        let r = intersection_expectation(&k, 1, 1, [0, 3, 0, 5]).unwrap();
        assert!((r.pair - 1.0).abs() < 1e-12);
        let r = intersection_expectation(&k, 1, 1, [0, 3, 2, 5]).unwrap();
        assert!(r.pair.abs() < 1e-12);
    }

    #[test]
    fn intersection_envelopes() {
        let lat = lat1(256, 16.0);
        let r = intersection_expectation(&Kernel::new(&lat), 20, 20, [0; 4]).unwrap();
        assert!(r.pair <= 10.0 * r.envelope, "{} vs {}", r.pair, r.envelope);
        assert!(r.self_intersections <= 10.0 * r.envelope);
        let lat = TorusLattice::isotropic(3, 32, 4.0).unwrap();
        let r = intersection_expectation(&Kernel::new(&lat), 10, 10, [0; 4]).unwrap();
        assert!(r.pair <= 10.0 * r.envelope);
    }

    #[test]
    fn canonical_representatives() {
        let lat = lat1(8, 2.0);
        assert_eq!(lat.canonical(&[5]), vec![-3]);
        assert_eq!(lat.canonical(&[4]), vec![4]);
        assert_eq!(lat.canonical(&[-9]), vec![-1]);
    }

    #[test]
    fn invalid_lattices_rejected() {
        assert!(TorusLattice::isotropic(1, 8, 5.0).is_err());
        assert!(TorusLattice::isotropic(0, 8, 2.0).is_err());
        assert!(TorusLattice::isotropic(1, 1, 0.5).is_err());
    }

    #[test]
    fn kernel_csv_has_header_and_rows() {
        let lat = lat1(4, 1.0);
        let k = Kernel::new(&lat);
        let mut buf = Vec::new();
        write_kernel_csv(&lat, k.profile(), &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 5);
        assert!(s.starts_with("delta_0,probability"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn theta_periodic_and_even(x in 0.0f64..1.0, t in 0.01f64..5.0) {
                let a = theta(&ThetaArg::scalar(x, t).unwrap());
                let b = theta(&ThetaArg::scalar(x + 1.0, t).unwrap());
                let c = theta(&ThetaArg::scalar(-x, t).unwrap());
                prop_assert!((a - b).abs() <= 1e-12 * a);
                prop_assert!((a - c).abs() <= 1e-12 * a);
            }

            #[test]
            fn duality_2d(x0 in 0.0f64..1.0, x1 in 0.0f64..1.0, logt in -1.5f64..1.0, off in -0.3f64..0.3) {
                let t = 10f64.powf(logt);
                let s = DMatrix::from_row_slice(2, 2, &[t, off * t, off * t, t]);
                let arg = ThetaArg::new(&[x0, x1], s).unwrap();
                let scale = theta_direct(&ThetaArg::new(&[0.0, 0.0], arg.s.clone()).unwrap());
                prop_assert!((theta_direct(&arg) - theta_dual(&arg)).abs() <= 1e-10 * scale);
            }

            #[test]
            fn semigroup(n in 1usize..32, m in 1usize..32, a in 0usize..16, b in 0usize..16) {
                let lat = TorusLattice::isotropic(1, 16, 2.0).unwrap();
                let k = Kernel::new(&lat);
                let (pn, pm, pnm) = (k.n_step(n).values, k.n_step(m).values, k.n_step(n + m).values);
                let s: f64 = (0..16).map(|x| pn[lat.displacement_index(a, x)] * pm[lat.displacement_index(x, b)]).sum();
                prop_assert!((s - pnm[lat.displacement_index(a, b)]).abs() <= 1e-12);
            }

            #[test]
            fn kernel_symmetric(n in 1usize..20, x in 0usize..16, y in 0usize..16) {
                let lat = TorusLattice::isotropic(1, 16, 3.0).unwrap();
                let p = Kernel::new(&lat).n_step(n).values;
                let (a, b) = (p[lat.displacement_index(x, y)], p[lat.displacement_index(y, x)]);
                prop_assert!((a - b).abs() <= 1e-16);
            }
        }
    }
}
