//! Non-backtracking and loop-free matrix powers.
//!
//! `nb_powers` propagates amplitudes on directed edges and is exact at any
//! size. `PathOracle` enumerates vertex sequences directly and evaluates the
//! almost non-backtracking powers, the Φ5/Φ7 blocks, the loop-free powers and
//! the three error operators of the loop-free recursion. The residual checks
//! compare both sides of each expansion entrywise.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::linalg::{hermitian_eigenvalues, to_complex, Entry};
use crate::poly_engine::{eval_scalar, traces_dense, PolyFamily};
use crate::rbm_model::{sample_rbm, BandProfile, Beta};
use crate::stats::{sub_seed, MeanAcc};

type C = Complex64;

/// Default cap on enumerated path prefixes.
pub const PATH_BUDGET: u64 = 50_000_000;

/// Entrywise block (Φ_c)_{xy} for c ∈ {1, 3, 5, 7}.
pub fn phi_block(h: &DMatrix<C>, c: usize) -> Result<DMatrix<C>> {
    let (coef, pow) = match c {
        1 => (1.0, 0),
        3 => (-1.0, 1),
        5 => (2.0, 2),
        7 => (-1.0, 3),
        _ => return Err(LabError::invalid(format!("Φ block index must be 1, 3, 5 or 7, got {c}"))),
    };
    Ok(h.map(|v| v * coef * v.norm_sqr().powi(pow)))
}

/// Amplitudes A[u][v] of non-backtracking walks from one source whose last step is u→v.
fn edge_step<T: Entry>(h: &DMatrix<T>, a: &[T], next: &mut [T], s: &mut [T]) {
    let n = h.nrows();
    for v in 0..n {
        let mut acc = T::zero();
        for u in 0..n {
            acc += a[u * n + v];
        }
        s[v] = acc;
    }
    for v in 0..n {
        let sv = s[v];
        for w in 0..n {
            next[v * n + w] = h[(v, w)] * (sv - a[w * n + v]);
        }
    }
}

/// V_0..V_n via the directed-edge recursion new(v→w) = H_vw (S(v) − old(w→v)).
pub fn nb_powers<T: Entry>(h: &DMatrix<T>, n: usize) -> Vec<DMatrix<T>> {
    let dim = h.nrows();
    let mut out = vec![DMatrix::identity(dim, dim)];
    if n == 0 {
        return out;
    }
    out.push(h.clone());
    for _ in 2..=n {
        out.push(DMatrix::zeros(dim, dim));
    }
    let mut a = vec![T::zero(); dim * dim];
    let mut next = vec![T::zero(); dim * dim];
    let mut s = vec![T::zero(); dim];
    for x in 0..dim {
        a.iter_mut().for_each(|v| *v = T::zero());
        for v in 0..dim {
            a[x * dim + v] = h[(x, v)];
        }
        for k in 2..=n {
            edge_step(h, &a, &mut next, &mut s);
            std::mem::swap(&mut a, &mut next);
            for w in 0..dim {
                let mut acc = T::zero();
                for v in 0..dim {
                    acc += a[v * dim + w];
                }
                out[k][(x, w)] = acc;
            }
        }
    }
    out
}

/// Tr V_0..Tr V_n without materializing the matrices.
pub fn nb_traces<T: Entry>(h: &DMatrix<T>, n: usize) -> Vec<f64> {
    let dim = h.nrows();
    let mut tr = vec![0.0; n + 1];
    tr[0] = dim as f64;
    if n == 0 {
        return tr;
    }
    tr[1] = h.trace().real();
    let mut a = vec![T::zero(); dim * dim];
    let mut next = vec![T::zero(); dim * dim];
    let mut s = vec![T::zero(); dim];
    for x in 0..dim {
        a.iter_mut().for_each(|v| *v = T::zero());
        for v in 0..dim {
            a[x * dim + v] = h[(x, v)];
        }
        for t in tr.iter_mut().skip(2) {
            edge_step(h, &a, &mut next, &mut s);
            std::mem::swap(&mut a, &mut next);
            let mut acc = T::zero();
            for v in 0..dim {
                acc += a[v * dim + x];
            }
            *t += acc.real();
        }
    }
    tr
}

/// x_i = x_{i+l} for t = i..=i+l, requiring i + 2l within the path.
fn double_loop(path: &[usize], i: usize, l: usize) -> bool {
    i + 2 * l < path.len() && (i..=i + l).all(|t| path[t] == path[t + l])
}

/// Loop-free event at step i with cutoff R.
fn loop_free_at(path: &[usize], i: usize, r: usize) -> bool {
    !(3..=r).any(|l| double_loop(path, i, l))
}

/// Loop-free events for every start in a..=b.
fn loop_free_range(path: &[usize], a: usize, b: usize, r: usize) -> bool {
    (a..=b).all(|i| loop_free_at(path, i, r))
}

/// x_i ≠ x_{i+2}, vacuous when x_{i+2} is beyond the path.
/// Double loop completed by the last vertex; with every shorter prefix loop-free this decides the whole path.
fn closes_double_loop(path: &[usize], r: usize) -> bool {
    let last = path.len() - 1;
    (3..=r).any(|l| last >= 2 * l && double_loop(path, last - 2 * l, l))
}

/// Whether some extension of the prefix can carry an E3 term with first double loop of length l.
fn e3_viable(p: &[usize], l: usize, r: usize) -> bool {
    let n = p.len();
    (0..=l).all(|t| t + l >= n || p[t] == p[t + l])
        && !(3..l).any(|i| double_loop(p, 0, i))
        && (0..=2 * l - 2).all(|i| nb_at(p, i))
        && (2 * l..n).all(|i| nb_at(p, i) && loop_free_at(p, i, r))
}

fn nb_at(path: &[usize], i: usize) -> bool {
    i + 2 >= path.len() || path[i] != path[i + 2]
}

fn nb_range(path: &[usize], a: usize, b: usize) -> bool {
    (a..=b).all(|i| nb_at(path, i))
}

/// Step weights available at one position: (weight, block).
type Steps<'a> = Vec<(usize, &'a DMatrix<C>)>;

/// Brute-force enumerator over vertex sequences on a tiny instance.
pub struct PathOracle {
    dim: usize,
    n_max: usize,
    r: usize,
    h: DMatrix<C>,
    phi: [DMatrix<C>; 4],
    support: Vec<Vec<usize>>,
    a4: f64,
}

impl PathOracle {
    /// Prepares an oracle for weights up to `n_max` and loop cutoff R, refusing instances above `budget`.
    pub fn new(h: &DMatrix<C>, n_max: usize, r: usize, budget: u64) -> Result<Self> {
        let dim = h.nrows();
        let support: Vec<Vec<usize>> =
            (0..dim).map(|x| (0..dim).filter(|&y| h[(x, y)].norm() > 0.0).collect()).collect();
        let deg = support.iter().map(|s| s.len()).max().unwrap_or(0) as f64;
        let predicted = dim as f64 * (1..=n_max).map(|s| deg.powi(s as i32)).sum::<f64>();
        if predicted > budget as f64 {
            return Err(LabError::Resource(format!(
                "path enumeration would visit {predicted:.3e} prefixes, budget {budget}"
            )));
        }
        let phi = [phi_block(h, 1)?, phi_block(h, 3)?, phi_block(h, 5)?, phi_block(h, 7)?];
        let a4 = (0..dim).map(|y| h[(0, y)].norm_sqr().powi(2)).sum();
        Ok(PathOracle { dim, n_max, r, h: h.clone(), phi, support, a4 })
    }

    /// a4 = Σ_y |H_0y|⁴ as read off the matrix.
    pub fn a4(&self) -> f64 {
        self.a4
    }

    fn block(&self, c: usize) -> &DMatrix<C> {
        &self.phi[match c {
            1 => 0,
            3 => 1,
            5 => 2,
            _ => 3,
        }]
    }

    fn zeros(&self) -> Vec<DMatrix<C>> {
        vec![DMatrix::zeros(self.dim, self.dim); self.n_max + 1]
    }

    /// Depth-first walk; `prune` sees each new prefix, `visit` each surviving path with its weight polynomial.
    fn walk(
        &self,
        first: &Steps,
        later: &Steps,
        prune: &dyn Fn(&[usize]) -> bool,
        visit: &mut dyn FnMut(&[usize], &[C]),
    ) {
        let zero = C::new(0.0, 0.0);
        let mut polys = vec![vec![zero; self.n_max + 1]; self.n_max + 2];
        polys[0][0] = C::new(1.0, 0.0);
        for x0 in 0..self.dim {
            let mut path = vec![x0];
            self.walk_rec(&mut path, &mut polys, first, later, prune, visit);
        }
    }

    /// `polys[depth]` holds the weight polynomial of the current path; deeper rows are scratch.
    fn walk_rec(
        &self,
        path: &mut Vec<usize>,
        polys: &mut [Vec<C>],
        first: &Steps,
        later: &Steps,
        prune: &dyn Fn(&[usize]) -> bool,
        visit: &mut dyn FnMut(&[usize], &[C]),
    ) {
        let zero = C::new(0.0, 0.0);
        let depth = path.len() - 1;
        if depth + 1 >= polys.len() {
            return;
        }
        let u = path[depth];
        let steps = if depth == 0 { first } else { later };
        for &v in &self.support[u] {
            path.push(v);
            if !prune(path) {
                let (head, tail) = polys.split_at_mut(depth + 1);
                let (poly, next) = (&head[depth], &mut tail[0]);
                next.iter_mut().for_each(|c| *c = zero);
                let mut any = false;
                for &(w, b) in steps {
                    let e = b[(u, v)];
                    for k in depth..=self.n_max.saturating_sub(w) {
                        if poly[k] != zero {
                            next[k + w] += poly[k] * e;
                            any = true;
                        }
                    }
                }
                if any {
                    visit(path, next);
                    self.walk_rec(path, polys, first, later, prune, visit);
                }
            }
            path.pop();
        }
    }

    fn accumulate(out: &mut [DMatrix<C>], path: &[usize], poly: &[C], sign: f64) {
        let (x, y) = (path[0], *path.last().expect("nonempty path"));
        for (k, p) in poly.iter().enumerate() {
            if *p != C::new(0.0, 0.0) {
                out[k][(x, y)] += *p * sign;
            }
        }
    }

    fn standard_steps(&self, phi3: bool) -> Steps<'_> {
        let mut s: Steps = vec![(1, self.block(1))];
        if phi3 {
            s.push((3, self.block(3)));
        }
        s
    }

    /// V_0..V_{n_max} by enumerating non-backtracking paths.
    pub fn nb_power(&self) -> Vec<DMatrix<C>> {
        self.calv(false)
    }

    /// 𝒱_0..𝒱_{n_max}; with `phi3 = false` every step is Φ1 and the result is V_n.
    pub fn calv(&self, phi3: bool) -> Vec<DMatrix<C>> {
        let steps = self.standard_steps(phi3);
        let mut out = self.zeros();
        out[0] = DMatrix::identity(self.dim, self.dim);
        let prune = |p: &[usize]| !nb_at(p, p.len().saturating_sub(3).min(p.len()));
        self.walk(&steps, &steps, &|p| p.len() >= 3 && prune(p), &mut |p, w| Self::accumulate(&mut out, p, w, 1.0));
        out
    }

    /// Underlined block Φ_c 𝒱_m indexed by m; `loop_free` adds the loop-free event over the whole path.
    pub fn underline(&self, c: usize, loop_free: bool) -> Result<Vec<DMatrix<C>>> {
        if c != 5 && c != 7 {
            return Err(LabError::invalid("underlined blocks use c ∈ {5, 7}"));
        }
        let first: Steps = vec![(c, self.block(c))];
        let later = self.standard_steps(true);
        let mut full = self.zeros();
        let r = self.r;
        let prune = |p: &[usize]| {
            (p.len() >= 3 && p[p.len() - 1] == p[p.len() - 3]) || (loop_free && closes_double_loop(p, r))
        };
        self.walk(&first, &later, &prune, &mut |p, w| Self::accumulate(&mut full, p, w, 1.0));
        let mut out = self.zeros();
        for m in 0..=self.n_max {
            if m + c <= self.n_max {
                out[m] = full[m + c].clone();
            }
        }
        Ok(out)
    }

    /// Loop-free almost non-backtracking powers 𝒱^R_0..𝒱^R_{n_max}.
    pub fn loop_free(&self) -> Vec<DMatrix<C>> {
        let steps = self.standard_steps(true);
        let mut out = self.zeros();
        out[0] = DMatrix::identity(self.dim, self.dim);
        let r = self.r;
        let prune = |p: &[usize]| (p.len() >= 3 && p[p.len() - 1] == p[p.len() - 3]) || closes_double_loop(p, r);
        self.walk(&steps, &steps, &prune, &mut |p, w| Self::accumulate(&mut out, p, w, 1.0));
        out
    }

    /// Loop-free non-backtracking powers with every step Φ1.
    pub fn loop_free_nb(&self) -> Vec<DMatrix<C>> {
        let steps = self.standard_steps(false);
        let mut out = self.zeros();
        out[0] = DMatrix::identity(self.dim, self.dim);
        let r = self.r;
        let prune = |p: &[usize]| (p.len() >= 3 && p[p.len() - 1] == p[p.len() - 3]) || closes_double_loop(p, r);
        self.walk(&steps, &steps, &prune, &mut |p, w| Self::accumulate(&mut out, p, w, 1.0));
        out
    }

    /// Diagonal loop coefficients a_{2t}(x) indexed by weight 2t: first double loops x_0..x_{2l}, 3 ≤ l ≤ R.
    pub fn loop_diagonals(&self) -> Vec<DVector<C>> {
        let first: Steps = vec![(1, self.block(1))];
        let later = self.standard_steps(true);
        let mut out = vec![DVector::zeros(self.dim); self.n_max + 1];
        let r = self.r;
        let max_len = 2 * r + 1;
        let prune = |p: &[usize]| p.len() > max_len || (p.len() >= 3 && p[p.len() - 1] == p[p.len() - 3]);
        self.walk(&first, &later, &prune, &mut |p, w| {
            let s = p.len() - 1;
            if s % 2 != 0 || s < 6 {
                return;
            }
            let l = s / 2;
            if double_loop(p, 0, l) && (3..l).all(|i| !double_loop(p, 0, i)) {
                for (k, c) in w.iter().enumerate() {
                    out[k][p[0]] += *c;
                }
            }
        });
        out
    }

    /// Error operator E2 indexed by total weight n.
    pub fn e2(&self) -> Vec<DMatrix<C>> {
        let first: Steps = vec![(1, self.block(1))];
        let later = self.standard_steps(true);
        let mut out = self.zeros();
        let r = self.r;
        let prune = |p: &[usize]| (p.len() == 3 && p[2] != p[0]) || (p.len() >= 4 && p[p.len() - 1] == p[p.len() - 3]);
        self.walk(&first, &later, &prune, &mut |p, w| {
            if p.len() < 3 {
                return;
            }
            let last = p.len() - 1;
            if !loop_free_at(p, 1, r) && loop_free_range(p, 2, last, r) {
                Self::accumulate(&mut out, p, w, -1.0);
            }
        });
        out
    }

    /// Error operator E3 indexed by total weight n.
    pub fn e3(&self) -> Vec<DMatrix<C>> {
        let first: Steps = vec![(1, self.block(1))];
        let later = self.standard_steps(true);
        let mut out = self.zeros();
        let r = self.r;
        let prune = |p: &[usize]| !(3..=r).any(|l| e3_viable(p, l, r));
        self.walk(&first, &later, &prune, &mut |p, w| {
            let last = p.len() - 1;
            let mut coef = 0.0;
            for l in 3..=r {
                if !double_loop(p, 0, l) || (3..l).any(|i| double_loop(p, 0, i)) {
                    continue;
                }
                let base = nb_range(p, 0, 2 * l - 2) && nb_range(p, 2 * l, last) && loop_free_range(p, 2 * l, last, r);
                if !base {
                    continue;
                }
                let junction = nb_at(p, 2 * l - 1) && loop_free_range(p, 1, 2 * l - 1, r);
                if !junction {
                    coef += 1.0;
                }
            }
            if coef != 0.0 {
                Self::accumulate(&mut out, p, w, -coef);
            }
        });
        out
    }

    /// Error operator E1 = Φ5 and Φ7 underlined loop-free blocks, indexed by total weight.
    pub fn e1(&self) -> Result<Vec<DMatrix<C>>> {
        let u5 = self.underline(5, true)?;
        let u7 = self.underline(7, true)?;
        let mut out = self.zeros();
        for n in 0..=self.n_max {
            if n >= 5 {
                out[n] += &u5[n - 5];
            }
            if n >= 7 {
                out[n] += &u7[n - 7];
            }
        }
        Ok(out)
    }
}

fn max_entry(m: &DMatrix<C>) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn get(v: &[DMatrix<C>], k: isize, dim: usize) -> DMatrix<C> {
    if k < 0 || k as usize >= v.len() {
        DMatrix::zeros(dim, dim)
    } else {
        v[k as usize].clone()
    }
}

/// Max residual of 𝒱_n = H𝒱_{n−1} − 𝒱_{n−2} + a4𝒱_{n−4} − Φ5𝒱_{n−5} − Φ7𝒱_{n−7} over 3 ≤ n ≤ n_max.
pub fn calv_recursion_residual(o: &PathOracle) -> Result<f64> {
    let v = o.calv(true);
    let u5 = o.underline(5, false)?;
    let u7 = o.underline(7, false)?;
    let d = o.dim;
    let mut worst = 0.0f64;
    for n in 3..=o.n_max as isize {
        let rhs = &o.h * get(&v, n - 1, d) - get(&v, n - 2, d) + get(&v, n - 4, d) * C::new(o.a4, 0.0)
            - get(&u5, n - 5, d)
            - get(&u7, n - 7, d);
        worst = worst.max(max_entry(&(get(&v, n, d) - rhs)));
    }
    Ok(worst)
}

/// Dense P̃_0..P̃_n with left-multiplied diagonal loop coefficients.
fn renormalized_dense(h: &DMatrix<C>, a4: f64, diags: &[DVector<C>], n: usize) -> Vec<DMatrix<C>> {
    let dim = h.nrows();
    let mut p: Vec<DMatrix<C>> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let m = match k {
            0 => DMatrix::identity(dim, dim),
            1 => h.clone(),
            _ => {
                let mut m = h * &p[k - 1] - &p[k - 2];
                if k >= 4 {
                    m += &p[k - 4] * C::new(a4, 0.0);
                }
                for (w, dv) in diags.iter().enumerate() {
                    if w >= 6 && w <= k && dv.iter().any(|c| c.norm() > 0.0) {
                        m -= DMatrix::from_diagonal(dv) * &p[k - w];
                    }
                }
                m
            }
        };
        p.push(m);
    }
    p
}

/// G_0 = I, G_m = Σ_{j≥1} F_j G_{m−j}.
fn chain(f: &[DMatrix<C>], n: usize, dim: usize) -> Vec<DMatrix<C>> {
    let mut g = vec![DMatrix::identity(dim, dim)];
    for m in 1..=n {
        let mut acc = DMatrix::zeros(dim, dim);
        for j in 1..=m {
            if j < f.len() {
                acc += &f[j] * &g[m - j];
            }
        }
        g.push(acc);
    }
    g
}

fn expansion(v: &[DMatrix<C>], g: &[DMatrix<C>], n: usize, dim: usize) -> DMatrix<C> {
    let mut acc = DMatrix::zeros(dim, dim);
    for l0 in 0..=n {
        acc += &v[l0] * &g[n - l0];
    }
    acc
}

/// Max residual of P_n(H) − Σ 𝒱_{l0}(Φ_c𝒱)…(Φ_c𝒱) over n ≤ n_max.
pub fn p_expansion_residual(o: &PathOracle) -> Result<f64> {
    let d = o.dim;
    let v = o.calv(true);
    let u5 = o.underline(5, false)?;
    let u7 = o.underline(7, false)?;
    let f: Vec<DMatrix<C>> = (0..=o.n_max as isize).map(|j| get(&u5, j - 5, d) + get(&u7, j - 7, d)).collect();
    let g = chain(&f, o.n_max, d);
    let p = traces_free_dense(&o.h, &PolyFamily::ModifiedP { a4: o.a4 }, o.n_max);
    let mut worst = 0.0f64;
    for n in 0..=o.n_max {
        worst = worst.max(max_entry(&(&p[n] - expansion(&v, &g, n, d))));
    }
    Ok(worst)
}

fn traces_free_dense(h: &DMatrix<C>, fam: &PolyFamily, n: usize) -> Vec<DMatrix<C>> {
    let lag4 = match fam {
        PolyFamily::ModifiedP { a4 } => *a4,
        _ => 0.0,
    };
    renormalized_dense(h, lag4, &[], n)
}

/// Max residual of the loop-free recursion H𝒱^R_{n−1} = 𝒱^R_n + 𝒱^R_{n−2} − a4𝒱^R_{n−4} + Σ D_{2t}𝒱^R_{n−2t} + E1 + E2 + E3.
pub fn loop_free_recursion_residual(o: &PathOracle) -> Result<f64> {
    let d = o.dim;
    let v = o.loop_free();
    let diags = o.loop_diagonals();
    let e1 = o.e1()?;
    let e2 = o.e2();
    let e3 = o.e3();
    let mut worst = 0.0f64;
    for n in 3..=o.n_max as isize {
        let lhs = &o.h * get(&v, n - 1, d);
        let mut rhs = get(&v, n, d) + get(&v, n - 2, d) - get(&v, n - 4, d) * C::new(o.a4, 0.0);
        for (w, dv) in diags.iter().enumerate() {
            let w = w as isize;
            if w >= 6 && w <= n {
                rhs += DMatrix::from_diagonal(dv) * get(&v, n - w, d);
            }
        }
        let nu = n as usize;
        rhs += &e1[nu] + &e2[nu] + &e3[nu];
        worst = worst.max(max_entry(&(lhs - rhs)));
    }
    Ok(worst)
}

/// Max residual of P̃_n − Σ 𝒱^R_{l0} E…E over n ≤ n_max.
pub fn renormalized_expansion_residual(o: &PathOracle) -> Result<f64> {
    let d = o.dim;
    let v = o.loop_free();
    let diags = o.loop_diagonals();
    let e1 = o.e1()?;
    let e2 = o.e2();
    let e3 = o.e3();
    let f: Vec<DMatrix<C>> = (0..=o.n_max).map(|j| &e1[j] + &e2[j] + &e3[j]).collect();
    let g = chain(&f, o.n_max, d);
    let p = renormalized_dense(&o.h, o.a4, &diags, o.n_max);
    let mut worst = 0.0f64;
    for n in 0..=o.n_max {
        worst = worst.max(max_entry(&(&p[n] - expansion(&v, &g, n, d))));
    }
    Ok(worst)
}

/// For β=1 the loop coefficients do not depend on the base point or the signs; returns their spread.
pub fn loop_diagonal_spread(o: &PathOracle) -> f64 {
    o.loop_diagonals()
        .iter()
        .map(|dv| {
            let re: Vec<f64> = dv.iter().map(|c| c.re).collect();
            let hi = re.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = re.iter().copied().fold(f64::INFINITY, f64::min);
            let im = dv.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
            (hi - lo).max(im)
        })
        .fold(0.0, f64::max)
}

/// Object whose traces enter a moment estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentObject {
    Poly(PolyFamily),
    NonBacktracking,
}

impl MomentObject {
    fn label(&self) -> &'static str {
        match self {
            MomentObject::Poly(PolyFamily::ChebyshevU) => "U",
            MomentObject::Poly(PolyFamily::ModifiedP { .. }) => "P",
            MomentObject::Poly(PolyFamily::RenormalizedP { .. }) => "Ptilde",
            MomentObject::NonBacktracking => "V",
        }
    }
}

/// Monte Carlo estimate of E[∏ Tr X_{n_i}].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub object: String,
    pub degrees: Vec<usize>,
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

fn sample_traces(profile: &BandProfile, beta: Beta, object: &MomentObject, nmax: usize, seed: u64) -> Vec<f64> {
    fn go<T: Entry>(profile: &BandProfile, object: &MomentObject, nmax: usize, seed: u64) -> Vec<f64> {
        let h = sample_rbm::<T>(profile, seed).h.to_dense();
        match object {
            MomentObject::NonBacktracking => nb_traces(&h, nmax),
            MomentObject::Poly(f) => {
                let ev = hermitian_eigenvalues(&h);
                (0..=nmax).map(|n| ev.iter().map(|&l| eval_scalar(f, n, l)).sum()).collect()
            }
        }
    }
    match beta {
        Beta::Real => go::<f64>(profile, object, nmax, seed),
        Beta::Complex => go::<C>(profile, object, nmax, seed),
    }
}

/// E[∏_i Tr X_{n_i}(H)] over independent samples with sub-seeds derived from `seed`.
pub fn moment_mc(
    profile: &BandProfile,
    beta: Beta,
    object: &MomentObject,
    degrees: &[usize],
    samples: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if degrees.is_empty() || samples < 2 {
        return Err(LabError::invalid("moment estimate needs degrees and at least two samples"));
    }
    let nmax = *degrees.iter().max().expect("nonempty");
    let mut acc = MeanAcc::default();
    for i in 0..samples {
        let tr = sample_traces(profile, beta, object, nmax, sub_seed(seed, i as u64));
        acc.push(degrees.iter().map(|&n| tr[n]).product());
    }
    Ok(MomentEstimate {
        object: object.label().into(),
        degrees: degrees.to_vec(),
        estimate: acc.mean(),
        stderr: acc.stderr(),
        samples,
        seed,
    })
}

/// Traces Tr P_n(H) and Tr V_n(H), n = 0..=nmax, of the matrix sampled with `sample_seed`.
pub fn paired_trace_sample(
    profile: &BandProfile,
    beta: Beta,
    family: &PolyFamily,
    nmax: usize,
    sample_seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    fn go<T: Entry>(profile: &BandProfile, family: &PolyFamily, nmax: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let h = sample_rbm::<T>(profile, seed).h.to_dense();
        (traces_dense(family, &h, nmax), nb_traces(&h, nmax))
    }
    match beta {
        Beta::Real => go::<f64>(profile, family, nmax, sample_seed),
        Beta::Complex => go::<C>(profile, family, nmax, sample_seed),
    }
}

/// Per-sample traces Tr P_n(H) and Tr V_n(H), n = 0..=nmax, on the same matrices.
pub fn paired_traces(
    profile: &BandProfile,
    beta: Beta,
    family: &PolyFamily,
    nmax: usize,
    samples: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    (0..samples).map(|i| paired_trace_sample(profile, beta, family, nmax, sub_seed(seed, i as u64))).unzip()
}

pub fn write_estimates_csv(rows: &[MomentEstimate], mut out: impl Write) -> Result<()> {
    writeln!(out, "object,degrees,estimate,stderr,samples,seed")?;
    for r in rows {
        let deg: Vec<String> = r.degrees.iter().map(|d| d.to_string()).collect();
        writeln!(out, "{},{},{:.12e},{:.12e},{},{}", r.object, deg.join(";"), r.estimate, r.stderr, r.samples, r.seed)?;
    }
    Ok(())
}

/// Dense complex copy of a sample for the oracles.
pub fn oracle_matrix(profile: &BandProfile, beta: Beta, seed: u64) -> DMatrix<C> {
    match beta {
        Beta::Real => to_complex(&sample_rbm::<f64>(profile, seed).h.to_dense()),
        Beta::Complex => sample_rbm::<C>(profile, seed).h.to_dense(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus_walk::TorusLattice;

    fn tiny(beta: Beta, seed: u64) -> DMatrix<C> {
        let lat = TorusLattice::isotropic(1, 6, 2.0).unwrap();
        oracle_matrix(&BandProfile::new(&lat), beta, seed)
    }

    #[test]
    fn edge_operator_initial_data() {
        let h = tiny(Beta::Complex, 1);
        let v = nb_powers(&h, 3);
        assert!(max_entry(&(&v[0] - DMatrix::identity(6, 6))) == 0.0);
        assert!(max_entry(&(&v[1] - &h)) == 0.0);
        assert!(max_entry(&(&v[2] - (&h * &h - DMatrix::identity(6, 6)))) < 1e-12);
    }

    #[test]
    fn edge_operator_matches_enumeration() {
        for beta in [Beta::Real, Beta::Complex] {
            for seed in 0..3 {
                let h = tiny(beta, seed);
                let o = PathOracle::new(&h, 6, 3, PATH_BUDGET).unwrap();
                let brute = o.nb_power();
                let fast = nb_powers(&h, 6);
                for n in 0..=6 {
                    assert!(max_entry(&(&brute[n] - &fast[n])) < 1e-10, "n={n}");
                }
                let tr = nb_traces(&h, 6);
                for n in 0..=6 {
                    assert!((tr[n] - fast[n].trace().re).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn nb_power_hermitian_under_reversal() {
        let h = tiny(Beta::Complex, 5);
        for v in nb_powers(&h, 6) {
            assert!(max_entry(&(&v - v.adjoint())) < 1e-12);
        }
    }

    #[test]
    fn calv_initial_data_and_toggle() {
        let h = tiny(Beta::Complex, 2);
        let o = PathOracle::new(&h, 6, 3, PATH_BUDGET).unwrap();
        let v = o.calv(true);
        assert!(max_entry(&(&v[1] - &h)) < 1e-14);
        assert!(max_entry(&(&v[2] - (&h * &h - DMatrix::identity(6, 6)))) < 1e-12);
        let plain = o.calv(false);
        let fast = nb_powers(&h, 6);
        assert!(max_entry(&(&plain[5] - &fast[5])) < 1e-10);
    }

    #[test]
    fn identities_hold() {
        for beta in [Beta::Real, Beta::Complex] {
            let h = tiny(beta, 11);
            let o = PathOracle::new(&h, 8, 3, PATH_BUDGET).unwrap();
            assert!(calv_recursion_residual(&o).unwrap() < 1e-10);
            assert!(p_expansion_residual(&o).unwrap() < 1e-9);
            assert!(loop_free_recursion_residual(&o).unwrap() < 1e-9);
            assert!(renormalized_expansion_residual(&o).unwrap() < 1e-9);
        }
    }

    #[test]
    fn short_loop_free_powers_are_plain() {
        let h = tiny(Beta::Complex, 3);
        let o = PathOracle::new(&h, 8, 3, PATH_BUDGET).unwrap();
        let a = o.loop_free();
        let b = o.calv(true);
        for n in 0..=5 {
            assert!(max_entry(&(&a[n] - &b[n])) == 0.0);
        }
        assert!(max_entry(&(&a[8] - &b[8])) > 0.0);
    }

    #[test]
    fn real_loop_coefficients_are_constant() {
        let h = tiny(Beta::Real, 4);
        let o = PathOracle::new(&h, 8, 3, PATH_BUDGET).unwrap();
        assert!(loop_diagonal_spread(&o) < 1e-14);
        let hc = tiny(Beta::Complex, 4);
        let oc = PathOracle::new(&hc, 8, 3, PATH_BUDGET).unwrap();
        assert!(loop_diagonal_spread(&oc) > 1e-6);
    }

    #[test]
    fn budget_enforced() {
        let h = tiny(Beta::Complex, 0);
        assert!(matches!(PathOracle::new(&h, 12, 3, 1000), Err(LabError::Resource(_))));
        assert!(phi_block(&h, 2).is_err());
    }

    #[test]
    fn odd_moments_vanish() {
        let lat = TorusLattice::isotropic(1, 16, 2.0).unwrap();
        let p = BandProfile::new(&lat);
        let e = moment_mc(&p, Beta::Complex, &MomentObject::NonBacktracking, &[3], 400, 1).unwrap();
        assert!(e.estimate.abs() <= 4.0 * e.stderr);
        let e = moment_mc(&p, Beta::Real, &MomentObject::Poly(PolyFamily::ModifiedP { a4: 0.1 }), &[2, 3], 400, 2).unwrap();
        assert!(e.estimate.abs() <= 4.0 * e.stderr);
        let mut buf = Vec::new();
        write_estimates_csv(&[e], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("P,2;3,"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(8))]

            #[test]
            fn loop_free_recursion_random(seed in any::<u64>(), complex in any::<bool>()) {
                let beta = if complex { Beta::Complex } else { Beta::Real };
                let h = tiny(beta, seed);
                let o = PathOracle::new(&h, 7, 3, PATH_BUDGET).unwrap();
                prop_assert!(loop_free_recursion_residual(&o).unwrap() < 1e-9);
                prop_assert!(calv_recursion_residual(&o).unwrap() < 1e-10);
            }
        }
    }
}
