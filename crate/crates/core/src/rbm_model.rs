//! Unimodular random band matrices on the torus: sampling, ensemble
//! constants a4 and a_{2l}, edge shifts, spectra and Gaussian baselines.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg::{hermitian_eigenvalues, Entry, SparseHermitian};
use crate::torus_walk::{profile_vector, Kernel, TorusLattice};

/// Entries with σ below this fraction of max σ are stored as zeros.
pub const SAMPLE_TRUNCATION: f64 = 1e-8;
/// Relative σ² cutoff for loop enumeration supports.
pub const LOOP_TRUNCATION: f64 = 1e-12;
/// Default dense eigensolve cap.
pub const EIGEN_CAP: usize = 4096;

/// Symmetry class: real symmetric (1) or complex Hermitian (2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Beta {
    Real,
    Complex,
}

impl Beta {
    pub fn value(self) -> u8 {
        match self {
            Beta::Real => 1,
            Beta::Complex => 2,
        }
    }
}

impl TryFrom<u8> for Beta {
    type Error = LabError;
    fn try_from(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Beta::Real),
            2 => Ok(Beta::Complex),
            _ => Err(LabError::invalid(format!("beta must be 1 or 2, got {b}"))),
        }
    }
}

impl From<Beta> for u8 {
    fn from(b: Beta) -> u8 {
        b.value()
    }
}

/// Variance profile prepared for sampling: σ² by displacement and the kept support.
#[derive(Debug, Clone)]
pub struct BandProfile {
    lat: TorusLattice,
    sigma2: Vec<f64>,
    /// Displacement indices with σ above the truncation level.
    support: Vec<usize>,
    truncated_mass: f64,
}

impl BandProfile {
    pub fn new(lat: &TorusLattice) -> Self {
        Self::with_truncation(lat, SAMPLE_TRUNCATION)
    }

    pub fn with_truncation(lat: &TorusLattice, rel: f64) -> Self {
        let sigma2 = profile_vector(lat);
        let max = sigma2.iter().copied().fold(0.0, f64::max);
        let cut = rel * rel * max;
        let support: Vec<usize> = (0..sigma2.len()).filter(|&i| sigma2[i] >= cut).collect();
        let kept: f64 = support.iter().map(|&i| sigma2[i]).sum();
        BandProfile { lat: lat.clone(), sigma2, support, truncated_mass: (1.0 - kept).max(0.0) }
    }

    /// Flat profile σ² = 1/N, used as a diagnostic.
    pub fn flat(lat: &TorusLattice) -> Self {
        let n = lat.n_sites();
        BandProfile {
            lat: lat.clone(),
            sigma2: vec![1.0 / n as f64; n],
            support: (0..n).collect(),
            truncated_mass: 0.0,
        }
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lat
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Total σ² dropped by truncation, per row.
    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    /// σ²_{xy} between sites.
    pub fn s2(&self, x: usize, y: usize) -> f64 {
        self.sigma2[self.lat.displacement_index(x, y)]
    }

    fn neighbours(&self, x: usize) -> Vec<usize> {
        let (d, l) = (self.lat.d(), self.lat.l());
        if d == 1 {
            return self.support.iter().map(|&di| (x + di) % l).collect();
        }
        let cx = self.lat.coords(x);
        let mut cd = vec![0usize; d];
        self.support
            .iter()
            .map(|&di| {
                let mut rest = di;
                for k in (0..d).rev() {
                    cd[k] = rest % l;
                    rest /= l;
                }
                cx.iter().zip(&cd).fold(0, |acc, (&a, &b)| acc * l + (a + b) % l)
            })
            .collect()
    }
}

/// One sampled matrix H_xy = σ_xy A_xy with its metadata.
#[derive(Debug, Clone)]
pub struct RbmSample<T> {
    pub lat: TorusLattice,
    pub beta: Beta,
    pub seed: u64,
    pub h: SparseHermitian<T>,
    pub truncated_mass: f64,
}

/// Counter-based unit draw for the entry (x, y), x ≤ y.
#[cfg(test)]
fn entry_word(seed: u64, x: usize, y: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(x as u64);
    rng.set_word_pos(2 * y as u128);
    rng.next_u64()
}

fn unimodular<T: Entry>(word: u64, diagonal: bool) -> T {
    if diagonal || !T::IS_COMPLEX {
        T::from_real(if word >> 63 == 1 { -1.0 } else { 1.0 })
    } else {
        let u = (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        T::phase(2.0 * std::f64::consts::PI * u)
    }
}

/// Samples a unimodular band matrix; the scalar type fixes β.
///
/// Each row reads its ChaCha stream sequentially and seeks only across gaps in the support,
/// so entries agree with `entry_word` at a fraction of the cost.
pub fn sample_rbm<T: Entry>(profile: &BandProfile, seed: u64) -> RbmSample<T> {
    let lat = &profile.lat;
    let n = lat.n_sites();
    let mut rows: Vec<Vec<(usize, T)>> = (0..n).map(|_| Vec::with_capacity(profile.support.len())).collect();
    let mut upper: Vec<(usize, f64)> = Vec::with_capacity(profile.support.len());
    for x in 0..n {
        upper.clear();
        upper.extend(
            profile.neighbours(x).into_iter().zip(&profile.support).filter(|(y, _)| *y >= x).map(|(y, &di)| (y, profile.sigma2[di])),
        );
        upper.sort_unstable_by_key(|e| e.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(x as u64);
        let mut next = usize::MAX;
        for &(y, s2) in &upper {
            if y != next {
                rng.set_word_pos(2 * y as u128);
            }
            next = y + 1;
            let a: T = unimodular(rng.next_u64(), x == y);
            let v = a * T::from_real(s2.sqrt());
            rows[x].push((y, v));
            if y != x {
                rows[y].push((x, v.conjugate()));
            }
        }
    }
    RbmSample {
        lat: lat.clone(),
        beta: if T::IS_COMPLEX { Beta::Complex } else { Beta::Real },
        seed,
        h: SparseHermitian::from_rows(rows),
        truncated_mass: profile.truncated_mass,
    }
}

/// a4 = Σ_y σ⁴_{0y}.
pub fn a4(profile: &BandProfile) -> f64 {
    profile.sigma2.iter().map(|s| s * s).sum()
}

/// a4 recomputed at base point x.
pub fn a4_at(profile: &BandProfile, x: usize) -> f64 {
    (0..profile.lat.n_sites()).map(|y| profile.s2(x, y).powi(2)).sum()
}

/// Evaluation route for a_{2l}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum A2lMode {
    ExactEnumeration,
    Asymptotic,
    Mc { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0 }
    }
}

/// Loop-weight machinery on a truncated support.
pub struct LoopEnumerator<'a> {
    profile: &'a BandProfile,
    neighbours: Vec<Vec<(usize, f64)>>,
    p2: Vec<f64>,
    budget: u64,
}

impl<'a> LoopEnumerator<'a> {
    pub fn new(profile: &'a BandProfile, budget: u64) -> Self {
        let lat = &profile.lat;
        let max = profile.sigma2.iter().copied().fold(0.0, f64::max);
        let support: Vec<usize> =
            (0..profile.sigma2.len()).filter(|&i| profile.sigma2[i] >= LOOP_TRUNCATION * max).collect();
        let trunc = BandProfile { support, ..profile.clone() };
        let neighbours = (0..lat.n_sites())
            .map(|x| trunc.neighbours(x).into_iter().map(|y| (y, profile.s2(x, y))).collect())
            .collect();
        let p2 = Kernel::from_profile(lat, profile.sigma2.clone()).n_step(2).values;
        LoopEnumerator { profile, neighbours, p2, budget }
    }

    fn s2(&self, x: usize, y: usize) -> f64 {
        self.profile.s2(x, y)
    }

    fn p2(&self, x: usize, y: usize) -> f64 {
        self.p2[self.profile.lat.displacement_index(x, y)]
    }

    /// Exact leading-term a_{2l} by full depth-first enumeration.
    pub fn full(&self, l: usize) -> Result<f64> {
        check_l(l)?;
        let mut path = vec![0usize; l];
        let mut nodes = 0u64;
        let mut total = 0.0;
        self.dfs_full(&mut path, 1, 1.0, &mut nodes, &mut total)?;
        Ok(total)
    }

    fn dfs_full(&self, path: &mut [usize], depth: usize, w: f64, nodes: &mut u64, total: &mut f64) -> Result<()> {
        let l = path.len();
        if depth == l {
            if closed_loop_admissible(path) {
                *total += w * self.s2(path[l - 1], path[0]);
            }
            return Ok(());
        }
        *nodes += 1;
        if *nodes > self.budget {
            return Err(LabError::Resource(format!("loop enumeration exceeded {} nodes", self.budget)));
        }
        let prev = path[depth - 1];
        for &(y, s) in &self.neighbours[prev] {
            if depth >= 2 && y == path[depth - 2] {
                continue;
            }
            path[depth] = y;
            self.dfs_full(path, depth + 1, w * s, nodes, total)?;
        }
        Ok(())
    }

    /// Exact leading-term a_{2l}, summing the last vertex in closed form for l ≤ 5.
    pub fn accelerated(&self, l: usize) -> Result<f64> {
        check_l(l)?;
        if l > 5 {
            return self.full(l);
        }
        let mut path = vec![0usize; l];
        let mut nodes = 0u64;
        let mut total = 0.0;
        self.dfs_accel(&mut path, 1, 1.0, &mut nodes, &mut total)?;
        Ok(total)
    }

    fn dfs_accel(&self, path: &mut [usize], depth: usize, w: f64, nodes: &mut u64, total: &mut f64) -> Result<()> {
        let l = path.len();
        if depth == l - 1 {
            let (x0, x1, a, b) = (path[0], path[1], path[l - 3], path[l - 2]);
            if b == x0 {
                return Ok(());
            }
            let mut last = self.p2(b, x0);
            last -= self.s2(b, a) * self.s2(a, x0);
            if x1 != a {
                last -= self.s2(b, x1) * self.s2(x1, x0);
            }
            *total += w * last;
            return Ok(());
        }
        *nodes += 1;
        if *nodes > self.budget {
            return Err(LabError::Resource(format!("loop enumeration exceeded {} nodes", self.budget)));
        }
        let prev = path[depth - 1];
        for &(y, s) in &self.neighbours[prev] {
            if depth >= 2 && y == path[depth - 2] {
                continue;
            }
            path[depth] = y;
            self.dfs_accel(path, depth + 1, w * s, nodes, total)?;
        }
        Ok(())
    }

    /// Importance-sampled a_{2l}: walk l−1 steps from the profile, close with σ².
    pub fn monte_carlo(&self, l: usize, samples: usize, seed: u64) -> Result<Estimate> {
        check_l(l)?;
        if samples < 2 {
            return Err(LabError::invalid("monte carlo needs at least two samples"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables: Vec<(Vec<f64>, f64)> = self
            .neighbours
            .iter()
            .map(|nb| {
                let mut acc = 0.0;
                let cdf: Vec<f64> = nb
                    .iter()
                    .map(|&(_, s)| {
                        acc += s;
                        acc
                    })
                    .collect();
                (cdf, acc)
            })
            .collect();
        let mut path = vec![0usize; l];
        let mut acc = crate::stats::MeanAcc::default();
        for _ in 0..samples {
            let mut scale = 1.0;
            for i in 1..l {
                let (cdf, mass) = &tables[path[i - 1]];
                let u: f64 = rng.random::<f64>() * mass;
                let k = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
                path[i] = self.neighbours[path[i - 1]][k].0;
                scale *= mass;
            }
            let v = if closed_loop_admissible(&path) { scale * self.s2(path[l - 1], path[0]) } else { 0.0 };
            acc.push(v);
        }
        Ok(Estimate { value: acc.mean(), stderr: acc.stderr() })
    }
}

fn check_l(l: usize) -> Result<()> {
    if l < 3 {
        return Err(LabError::invalid(format!("a_2l requires l ≥ 3, got {l}")));
    }
    Ok(())
}

/// Cyclic non-backtracking and no shorter double loop for a closed path x_0..x_{l−1}.
pub fn closed_loop_admissible(path: &[usize]) -> bool {
    let l = path.len();
    let at = |t: usize| path[t % l];
    if (0..l).any(|i| at(i) == at(i + 2)) {
        return false;
    }
    (3..l).all(|i| !(0..=i).all(|t| at(t) == at(t + i)))
}

/// a_{2l} in the requested mode.
pub fn a2l(profile: &BandProfile, l: usize, mode: A2lMode) -> Result<Estimate> {
    check_l(l)?;
    match mode {
        A2lMode::ExactEnumeration => {
            if l > 7 {
                return Err(LabError::Resource(format!("exact enumeration supports l ≤ 7, got {l}")));
            }
            LoopEnumerator::new(profile, 2_000_000_000).accelerated(l).map(Estimate::exact)
        }
        A2lMode::Asymptotic => Ok(Estimate::exact(a2l_asymptotic(&profile.lat, l)?)),
        A2lMode::Mc { samples, seed } => LoopEnumerator::new(profile, 0).monte_carlo(l, samples, seed),
    }
}

/// (2πl)^{−d/2} W^{−d}, valid for Σ = I.
pub fn a2l_asymptotic(lat: &TorusLattice, l: usize) -> Result<f64> {
    check_l(l)?;
    let d = lat.d();
    if (lat.sigma() - DMatrix::<f64>::identity(d, d)).amax() > 0.0 {
        return Err(LabError::invalid("asymptotic a_2l is only available for Σ = I"));
    }
    Ok((2.0 * std::f64::consts::PI * l as f64).powf(-(d as f64) / 2.0) * lat.w().powi(-(d as i32)))
}

/// Work estimate (support size)^{l−2} of accelerated enumeration.
fn enumeration_cost(profile: &BandProfile, l: usize) -> f64 {
    let max = profile.sigma2.iter().copied().fold(0.0, f64::max);
    let s = profile.sigma2.iter().filter(|&&v| v >= LOOP_TRUNCATION * max).count() as f64;
    if l <= 5 {
        s.powi(l as i32 - 2)
    } else {
        s.powi(l as i32 - 1)
    }
}

/// Largest work estimate for which edge shifts use exact enumeration.
pub const AUTO_EXACT_COST: f64 = 2e8;

/// a_{2l} chosen automatically: exact when affordable, otherwise asymptotic (Σ = I) or MC.
pub fn a2l_auto(profile: &BandProfile, l: usize) -> Result<Estimate> {
    if enumeration_cost(profile, l) <= AUTO_EXACT_COST {
        a2l(profile, l, A2lMode::ExactEnumeration)
    } else if let Ok(v) = a2l_asymptotic(&profile.lat, l) {
        Ok(Estimate::exact(v))
    } else {
        a2l(profile, l, A2lMode::Mc { samples: 200_000, seed: 0x5eed ^ l as u64 })
    }
}

/// Default loop cutoff R = ⌈(L/W)²⌉ for the β=1 shift in d = 1.
pub fn default_cutoff(lat: &TorusLattice) -> usize {
    ((lat.l() as f64 / lat.w()).powi(2)).ceil().max(3.0) as usize
}

/// Ensemble constants entering the edge shifts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleConstants {
    pub a4: f64,
    pub a2l: BTreeMap<usize, f64>,
    pub r: usize,
    /// W^d(−a4 + Σ a_{2l}).
    pub a1: f64,
    /// −a4 + Σ a_{2l}.
    pub ad: f64,
}

/// Cap on l for the d > 2 convergence cutoff.
pub const MAX_LOOP_LENGTH: usize = 64;

pub fn ensemble_constants(profile: &BandProfile, r: usize) -> Result<EnsembleConstants> {
    let lat = &profile.lat;
    let a4v = a4(profile);
    let mut map = BTreeMap::new();
    let mut sum = 0.0;
    match lat.d() {
        1 | 2 => {
            let lmax = if lat.d() == 1 { r } else { lat.w().floor() as usize };
            for l in 3..=lmax {
                let v = a2l_auto(profile, l)?.value;
                map.insert(l, v);
                sum += v;
            }
        }
        _ => {
            for l in 3..=MAX_LOOP_LENGTH {
                let v = a2l_auto(profile, l)?.value;
                map.insert(l, v);
                sum += v;
                if v < 1e-3 * sum {
                    break;
                }
            }
        }
    }
    let ad = -a4v + sum;
    Ok(EnsembleConstants { a4: a4v, a2l: map, r, a1: lat.w().powi(lat.d() as i32) * ad, ad })
}

/// Edge offset: the spectral edge sits at 2 + shift.
pub fn edge_shift(profile: &BandProfile, beta: Beta, r: usize) -> Result<f64> {
    match beta {
        Beta::Complex => Ok(-a4(profile)),
        Beta::Real => Ok(ensemble_constants(profile, r)?.ad),
    }
}

/// Sorted spectrum with edge-rescaled values N^{2/3}(λ − 2 − shift).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRecord {
    pub eigenvalues: Vec<f64>,
    pub rescaled: Vec<f64>,
    pub shift: f64,
}

impl SpectrumRecord {
    pub fn new(eigenvalues: Vec<f64>, shift: f64) -> Self {
        let n = eigenvalues.len() as f64;
        let s = n.powf(2.0 / 3.0);
        let rescaled = eigenvalues.iter().map(|l| s * (l - 2.0 - shift)).collect();
        SpectrumRecord { eigenvalues, rescaled, shift }
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("nonempty spectrum")
    }

    pub fn rescaled_max(&self) -> f64 {
        *self.rescaled.last().expect("nonempty spectrum")
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "index,eigenvalue,rescaled")?;
        for (i, (l, r)) in self.eigenvalues.iter().zip(&self.rescaled).enumerate() {
            writeln!(out, "{i},{l:.17e},{r:.17e}")?;
        }
        Ok(())
    }
}

pub fn eigenvalues<T: Entry>(sample: &RbmSample<T>, shift: f64, cap: usize) -> Result<SpectrumRecord> {
    let n = sample.lat.n_sites();
    if n > cap {
        return Err(LabError::Resource(format!("N = {n} exceeds eigensolve cap {cap}")));
    }
    Ok(SpectrumRecord::new(hermitian_eigenvalues(&sample.h.to_dense()), shift))
}

/// Gaussian ensemble with semicircle support [−2, 2].
pub fn baseline_matrix(n: usize, beta: Beta, seed: u64) -> DMatrix<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = n as f64;
    let mut m = DMatrix::zeros(n, n);
    let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
    for i in 0..n {
        for j in i..n {
            let v = if i == j {
                let var = if beta == Beta::Real { 2.0 / nf } else { 1.0 / nf };
                Complex64::new(g() * var.sqrt(), 0.0)
            } else if beta == Beta::Real {
                Complex64::new(g() / nf.sqrt(), 0.0)
            } else {
                let s = (0.5 / nf).sqrt();
                Complex64::new(g() * s, g() * s)
            };
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
    m
}

pub fn baseline_gue_goe(n: usize, beta: Beta, seed: u64) -> SpectrumRecord {
    let m = baseline_matrix(n, beta, seed);
    let ev = if beta == Beta::Real { hermitian_eigenvalues(&m.map(|c| c.re)) } else { hermitian_eigenvalues(&m) };
    SpectrumRecord::new(ev, 0.0)
}

pub const DUMP_MAGIC: &[u8; 8] = b"RBMDUMP1";

/// Row-major little-endian dump; complex entries as (re, im) pairs.
pub fn write_binary_dump<T: Entry>(sample: &RbmSample<T>, mut out: impl Write) -> Result<()> {
    let lat = &sample.lat;
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&(lat.d() as u32).to_le_bytes())?;
    out.write_all(&(lat.l() as u32).to_le_bytes())?;
    out.write_all(&lat.w().to_le_bytes())?;
    out.write_all(&[sample.beta.value()])?;
    out.write_all(&sample.seed.to_le_bytes())?;
    let n = lat.n_sites();
    out.write_all(&(n as u64).to_le_bytes())?;
    for i in 0..n {
        for j in 0..n {
            let v = sample.h.get(i, j).to_c64();
            out.write_all(&v.re.to_le_bytes())?;
            if T::IS_COMPLEX {
                out.write_all(&v.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}
