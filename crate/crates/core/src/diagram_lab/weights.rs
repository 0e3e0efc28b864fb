//! Linear weight systems Σ_e c_i(e) w(e) = n_i and the lattice-point density
//! constant C_𝔇 = lim #solutions / slice volume.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{LabError, Result};

/// Cap on the DP state space ∏(n_i + 1).
pub const COUNT_STATE_CAP: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSystem {
    /// k rows of coefficients c_i(e) over m variables.
    coeffs: Vec<Vec<u32>>,
    lower: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CPoint {
    pub scale: usize,
    pub targets: Vec<usize>,
    pub count: f64,
    pub volume: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CConstant {
    pub points: Vec<CPoint>,
    /// Richardson extrapolation of the last two ratios assuming a 1/n correction.
    pub limit: f64,
}

impl WeightSystem {
    pub fn new(coeffs: Vec<Vec<u32>>, lower: Vec<u32>) -> Result<Self> {
        let m = lower.len();
        if coeffs.is_empty() || coeffs.iter().any(|r| r.len() != m) || m == 0 {
            return Err(LabError::invalid("weight system needs k ≥ 1 rows of equal length m ≥ 1"));
        }
        Ok(WeightSystem { coeffs, lower })
    }

    /// Single equation Σ_j a_j w_j = n with zero lower bounds.
    pub fn single(a: &[u32]) -> Result<Self> {
        Self::new(vec![a.to_vec()], vec![0; a.len()])
    }

    pub fn k(&self) -> usize {
        self.coeffs.len()
    }

    pub fn m(&self) -> usize {
        self.lower.len()
    }

    pub fn coeffs(&self) -> &[Vec<u32>] {
        &self.coeffs
    }

    pub fn lower(&self) -> &[u32] {
        &self.lower
    }

    fn column(&self, j: usize) -> Vec<usize> {
        self.coeffs.iter().map(|r| r[j] as usize).collect()
    }

    fn check_columns(&self) -> Result<()> {
        if let Some(j) = (0..self.m()).find(|&j| self.column(j).iter().all(|&c| c == 0)) {
            return Err(LabError::Infeasible(format!("variable {j} appears in no equation")));
        }
        Ok(())
    }

    /// Number of integer solutions with w ≥ 0 (or w ≥ lower bounds).
    pub fn count_solutions(&self, n: &[usize], respect_lower: bool) -> Result<f64> {
        self.weighted_count(n, respect_lower, &vec![1.0; self.m()])
    }

    /// Σ over integer solutions of ∏_e λ_e^{w(e)}.
    pub fn weighted_count(&self, n: &[usize], respect_lower: bool, lambda: &[f64]) -> Result<f64> {
        self.check_columns()?;
        if n.len() != self.k() || lambda.len() != self.m() {
            return Err(LabError::invalid("one target per equation and one weight per variable"));
        }
        let mut t: Vec<i64> = n.iter().map(|&x| x as i64).collect();
        let mut prefactor = 1.0;
        if respect_lower {
            for j in 0..self.m() {
                for (i, ti) in t.iter_mut().enumerate() {
                    *ti -= (self.coeffs[i][j] * self.lower[j]) as i64;
                }
                prefactor *= lambda[j].powi(self.lower[j] as i32);
            }
            if t.iter().any(|&x| x < 0) {
                return Ok(0.0);
            }
        }
        let dims: Vec<usize> = t.iter().map(|&x| x as usize + 1).collect();
        let states: usize = dims.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).unwrap_or(usize::MAX);
        if states > COUNT_STATE_CAP {
            return Err(LabError::Resource(format!("{states} DP states exceed {COUNT_STATE_CAP}")));
        }
        let mut strides = vec![1usize; dims.len()];
        for i in (0..dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        let mut count = vec![0.0f64; states];
        count[0] = 1.0;
        let mut coord = vec![0usize; dims.len()];
        for j in 0..self.m() {
            if lambda[j] == 0.0 {
                continue;
            }
            let a = self.column(j);
            let shift: usize = a.iter().zip(&strides).map(|(x, s)| x * s).sum();
            if dims.len() == 1 {
                for idx in shift..states {
                    count[idx] += lambda[j] * count[idx - shift];
                }
                continue;
            }
            coord.iter_mut().for_each(|c| *c = 0);
            for idx in 0..states {
                if idx > 0 {
                    let mut i = dims.len() - 1;
                    loop {
                        coord[i] += 1;
                        if coord[i] < dims[i] {
                            break;
                        }
                        coord[i] = 0;
                        i -= 1;
                    }
                }
                if coord.iter().zip(&a).all(|(c, x)| c >= x) {
                    count[idx] += lambda[j] * count[idx - shift];
                }
            }
        }
        Ok(prefactor * count[states - 1])
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k(), self.m(), |i, j| self.coeffs[i][j] as f64)
    }

    /// (m − k)-dimensional volume of {w ∈ ℝ^m_+ : Aw = n}.
    pub fn slice_volume(&self, n: &[f64]) -> Result<f64> {
        self.check_columns()?;
        let a = self.matrix();
        let gram = (&a * a.transpose()).determinant();
        if gram <= 1e-12 {
            return Err(LabError::Infeasible("equations are linearly dependent".into()));
        }
        let b = DVector::from_column_slice(n);
        let mut memo = HashMap::new();
        let full = (1u64 << self.m()) - 1;
        Ok(gram.sqrt() * truncated_power(&a, &b, full, &mut memo))
    }

    /// Hit-or-miss estimate of `slice_volume` with its standard error.
    pub fn slice_volume_mc(&self, n: &[f64], samples: usize, seed: u64) -> Result<(f64, f64)> {
        self.slice_integral_mc(n, |_| 1.0, samples, seed)
    }

    /// MC estimate of ∫ f dH over the slice {w ≥ 0 : Aw = n}, with standard error.
    /// One equation is sampled exactly through a Dirichlet draw; more use hit-or-miss in free coordinates.
    pub fn slice_integral_mc(
        &self,
        n: &[f64],
        mut f: impl FnMut(&[f64]) -> f64,
        samples: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        self.check_columns()?;
        if n.len() != self.k() || samples < 2 {
            return Err(LabError::invalid("one target per equation and at least two samples"));
        }
        let a = self.matrix();
        let (k, m) = (self.k(), self.m());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = crate::stats::MeanAcc::default();
        let mut w = vec![0.0; m];
        if k == 1 {
            let vol = self.slice_volume(n)?;
            for _ in 0..samples {
                let mut total = 0.0;
                for x in w.iter_mut() {
                    *x = -(1.0 - rng.random::<f64>()).ln();
                    total += *x;
                }
                for (j, x) in w.iter_mut().enumerate() {
                    *x *= n[0] / (total * a[(0, j)]);
                }
                acc.push(f(&w));
            }
            return Ok((vol * acc.mean(), vol * acc.stderr()));
        }
        let mut basis: Vec<usize> = Vec::new();
        for j in 0..m {
            let mut trial = basis.clone();
            trial.push(j);
            if a.select_columns(&trial).rank(1e-9) == trial.len() {
                basis = trial;
            }
            if basis.len() == k {
                break;
            }
        }
        if basis.len() < k {
            return Err(LabError::Infeasible("equations are linearly dependent".into()));
        }
        let free: Vec<usize> = (0..m).filter(|j| !basis.contains(j)).collect();
        let ab = a.select_columns(&basis);
        let ab_inv = ab.clone().try_inverse().ok_or_else(|| LabError::Numerical("singular basis".into()))?;
        let an = a.select_columns(&free);
        let bounds: Vec<f64> = free
            .iter()
            .map(|&j| (0..k).filter(|&i| a[(i, j)] > 0.0).map(|i| n[i] / a[(i, j)]).fold(f64::INFINITY, f64::min))
            .collect();
        let box_vol: f64 = bounds.iter().product();
        let b = DVector::from_column_slice(n);
        let mut y = DVector::zeros(free.len());
        for _ in 0..samples {
            for (i, bd) in bounds.iter().enumerate() {
                y[i] = rng.random::<f64>() * bd;
            }
            let wb = &ab_inv * (&b - &an * &y);
            if wb.iter().all(|&v| v >= 0.0) {
                for (i, &j) in free.iter().enumerate() {
                    w[j] = y[i];
                }
                for (i, &j) in basis.iter().enumerate() {
                    w[j] = wb[i];
                }
                acc.push(f(&w));
            } else {
                acc.push(0.0);
            }
        }
        let scale = (&a * a.transpose()).determinant().sqrt() / ab.determinant().abs() * box_vol;
        Ok((scale * acc.mean(), scale * acc.stderr()))
    }

    /// Ratio #solutions / slice volume at targets round(direction · scale).
    pub fn c_constant(&self, direction: &[f64], scales: &[usize]) -> Result<CConstant> {
        if direction.len() != self.k() || scales.len() < 2 {
            return Err(LabError::invalid("need one direction entry per equation and at least two scales"));
        }
        let mut points = Vec::new();
        for &scale in scales {
            let targets: Vec<usize> = direction.iter().map(|t| (t * scale as f64).round() as usize).collect();
            let count = self.count_solutions(&targets, false)?;
            let tf: Vec<f64> = targets.iter().map(|&x| x as f64).collect();
            let volume = self.slice_volume(&tf)?;
            if volume <= 0.0 {
                return Err(LabError::Infeasible(format!("empty slice at targets {targets:?}")));
            }
            points.push(CPoint { scale, targets, count, volume, ratio: count / volume });
        }
        if points.iter().all(|p| p.count == 0.0) {
            return Err(LabError::Infeasible("no integer solutions at any scale".into()));
        }
        let (p1, p2) = (&points[points.len() - 2], &points[points.len() - 1]);
        let (s1, s2) = (p1.scale as f64, p2.scale as f64);
        let limit = (s2 * p2.ratio - s1 * p1.ratio) / (s2 - s1);
        Ok(CConstant { points, limit })
    }
}

/// Density at b of the image of Lebesgue measure on ℝ^{|mask|}_+ under the selected columns.
fn truncated_power(a: &DMatrix<f64>, b: &DVector<f64>, mask: u64, memo: &mut HashMap<u64, f64>) -> f64 {
    if let Some(&v) = memo.get(&mask) {
        return v;
    }
    let k = a.nrows();
    let cols: Vec<usize> = (0..a.ncols()).filter(|j| mask >> j & 1 == 1).collect();
    let value = if cols.len() < k {
        0.0
    } else {
        let x = a.select_columns(&cols);
        if x.rank(1e-9) < k {
            0.0
        } else if cols.len() == k {
            match x.clone().lu().solve(b) {
                Some(lam) if lam.iter().all(|&l| l > 1e-12) => 1.0 / x.determinant().abs(),
                _ => 0.0,
            }
        } else {
            let xxt = &x * x.transpose();
            let lam = x.transpose() * xxt.lu().solve(b).expect("full row rank");
            let mut acc = 0.0;
            for (pos, &j) in cols.iter().enumerate() {
                if lam[pos] != 0.0 {
                    acc += lam[pos] * truncated_power(a, b, mask & !(1u64 << j), memo);
                }
            }
            acc / (cols.len() - k) as f64
        }
    };
    memo.insert(mask, value);
    value
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_variable_examples() {
        let sys = WeightSystem::single(&[1, 1]).unwrap();
        let c = sys.c_constant(&[1.0], &[5000, 10000]).unwrap();
        assert!((c.points[1].ratio - 0.5f64.sqrt()).abs() < 1e-3);
        assert!((c.limit - 0.5f64.sqrt()).abs() < 1e-9);
        let sys = WeightSystem::single(&[1, 2]).unwrap();
        let c = sys.c_constant(&[1.0], &[5000, 10000]).unwrap();
        assert!((c.points[1].ratio - 0.2f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn three_variable_count_and_area() {
        let sys = WeightSystem::single(&[1, 1, 1]).unwrap();
        for n in [10usize, 37, 200] {
            let count = sys.count_solutions(&[n], false).unwrap();
            assert_eq!(count, ((n + 1) * (n + 2) / 2) as f64);
            let positive = sys.count_solutions(&[n], true).unwrap();
            assert_eq!(positive, ((n + 1) * (n + 2) / 2) as f64);
            let area = sys.slice_volume(&[n as f64]).unwrap();
            assert!((area - 3f64.sqrt() / 2.0 * (n * n) as f64).abs() < 1e-9 * area);
        }
        let c = sys.c_constant(&[1.0], &[5000, 10000]).unwrap();
        assert!((c.limit - 1.0 / 3f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn lower_bounds_shift_count() {
        let sys = WeightSystem::new(vec![vec![1, 1, 1]], vec![1, 1, 3]).unwrap();
        // w0 + w1 + w2 = 10 with w0, w1 ≥ 1, w2 ≥ 3: substitute and count compositions of 5 into 3 parts.
        assert_eq!(sys.count_solutions(&[10], true).unwrap(), 21.0);
        assert_eq!(sys.count_solutions(&[4], true).unwrap(), 0.0);
    }

    #[test]
    fn two_equation_volume_matches_mc() {
        // x + y + 2z = n1, z + w + u = n2.
        let sys = WeightSystem::new(vec![vec![1, 1, 2, 0, 0], vec![0, 0, 1, 1, 1]], vec![0; 5]).unwrap();
        let n = [7.0, 5.0];
        let exact = sys.slice_volume(&n).unwrap();
        let (mc, se) = sys.slice_volume_mc(&n, 400_000, 3).unwrap();
        assert!((exact - mc).abs() < 4.0 * se, "exact {exact} mc {mc} ± {se}");
        let (mc_mean_z, _) = sys.slice_integral_mc(&n, |w| w[2], 400_000, 4).unwrap();
        let hand_z = crate::quad::gl_integrate(|z| z * (7.0 - 2.0 * z) * (5.0 - z), 0.0, 3.5, 20);
        let a = sys.matrix();
        let hand_z = (&a * a.transpose()).determinant().sqrt() * hand_z;
        assert!((mc_mean_z - hand_z).abs() < 0.03 * hand_z);
        // Parametrize by (x, z, w); y and u have unit coefficients so the area factor is sqrt(det AAᵀ).
        let param_vol = crate::quad::gl_integrate(|z| (7.0 - 2.0 * z) * (5.0 - z), 0.0, 3.5, 20);
        let a = sys.matrix();
        let hand = (&a * a.transpose()).determinant().sqrt() * param_vol;
        assert!((exact - hand).abs() < 1e-9 * exact, "exact {exact} hand {hand}");
    }

    #[test]
    fn count_matches_brute_force() {
        let sys = WeightSystem::new(vec![vec![2, 1, 0, 1], vec![0, 1, 2, 1]], vec![0; 4]).unwrap();
        let n = [9usize, 8];
        let mut brute = 0;
        for a in 0..=9 {
            for b in 0..=9 {
                for c in 0..=8 {
                    for d in 0..=9 {
                        if 2 * a + b + d == n[0] && b + 2 * c + d == n[1] {
                            brute += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(sys.count_solutions(&n, false).unwrap(), brute as f64);
    }

    #[test]
    fn weighted_count_matches_generating_function() {
        // Σ_{w0 + 2 w1 = 6} a^{w0} b^{w1} = a^6 + a^4 b + a^2 b^2 + b^3.
        let sys = WeightSystem::single(&[1, 2]).unwrap();
        let (a, b) = (0.7f64, -0.4f64);
        let expect = a.powi(6) + a.powi(4) * b + a * a * b * b + b.powi(3);
        assert!((sys.weighted_count(&[6], false, &[a, b]).unwrap() - expect).abs() < 1e-14);
        let lb = WeightSystem::new(vec![vec![1, 2]], vec![2, 1]).unwrap();
        let expect = a.powi(4) * b + a * a * b * b;
        assert!((lb.weighted_count(&[6], true, &[a, b]).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_route_matches_area() {
        let sys = WeightSystem::single(&[1, 2, 3]).unwrap();
        let (v, se) = sys.slice_integral_mc(&[6.0], |_| 1.0, 1000, 1).unwrap();
        assert!((v - sys.slice_volume(&[6.0]).unwrap()).abs() < 1e-9 && se < 1e-9);
        // Mean of w0 over the uniform triangle with vertices 6e0, 3e1, 2e2 is 2.
        let (m, se) = sys.slice_integral_mc(&[6.0], |w| w[0], 200_000, 2).unwrap();
        assert!((m / v - 2.0).abs() < 4.0 * se / v);
    }

    #[test]
    fn infeasible_and_invalid() {
        let sys = WeightSystem::new(vec![vec![1, 0]], vec![0, 0]).unwrap();
        assert!(matches!(sys.count_solutions(&[3], false), Err(LabError::Infeasible(_))));
        assert!(WeightSystem::new(vec![vec![1], vec![1, 2]], vec![0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]

            #[test]
            fn ratio_is_cauchy(a in proptest::collection::vec(1u32..4, 2..5)) {
                let sys = WeightSystem::single(&a).unwrap();
                let g = a.iter().fold(0u32, |g, &x| gcd(g, x)) as usize;
                let c = sys.c_constant(&[1.0], &[10_000 * g, 20_000 * g]).unwrap();
                let (r1, r2) = (c.points[0].ratio, c.points[1].ratio);
                prop_assert!((r1 - r2).abs() < 1e-3 * r2.max(1e-300), "{r1} vs {r2}");
            }
        }

        fn gcd(a: u32, b: u32) -> u32 {
            if b == 0 { a } else { gcd(b, a % b) }
        }
    }
}
