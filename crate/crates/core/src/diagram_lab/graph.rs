//! Multigraphs, spanning trees, Symanzik polynomials and the UV criterion.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{LabError, Result};

/// Undirected multigraph with dense vertex ids; edge id = position in `edges`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Multigraph {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

impl Multigraph {
    pub fn new(n_vertices: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n_vertices || v >= n_vertices) {
            return Err(LabError::invalid(format!("edge ({u}, {v}) outside {n_vertices} vertices")));
        }
        Ok(Multigraph { n_vertices, edges })
    }

    /// Two vertices joined by three parallel edges.
    pub fn theta() -> Self {
        Multigraph { n_vertices: 2, edges: vec![(0, 1); 3] }
    }

    /// Cycle on n vertices (n = 1 is a self-loop, n = 2 a double edge).
    pub fn cycle(n: usize) -> Self {
        Multigraph { n_vertices: n, edges: (0..n).map(|i| (i, (i + 1) % n)).collect() }
    }

    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        Multigraph { n_vertices: n, edges }
    }

    /// Path with n edges.
    pub fn path(n: usize) -> Self {
        Multigraph { n_vertices: n + 1, edges: (0..n).map(|i| (i, i + 1)).collect() }
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_loop(&self, e: usize) -> bool {
        self.edges[e].0 == self.edges[e].1
    }

    /// Degree with loops counted twice.
    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().map(|&(a, b)| (a == v) as usize + (b == v) as usize).sum()
    }

    pub fn components(&self) -> usize {
        let mut uf = UnionFind::new(self.n_vertices);
        let mut c = self.n_vertices;
        for &(a, b) in &self.edges {
            if uf.union(a, b) {
                c -= 1;
            }
        }
        c
    }

    pub fn is_connected(&self) -> bool {
        self.components() == 1
    }

    /// |E| − |V| + #components.
    pub fn cycle_rank(&self) -> usize {
        self.edges.len() + self.components() - self.n_vertices
    }

    /// Edge-id sets of all spanning trees.
    pub fn spanning_trees(&self) -> Result<Vec<Vec<usize>>> {
        if !self.is_connected() {
            return Err(LabError::invalid("spanning trees need a connected graph"));
        }
        let need = self.n_vertices - 1;
        let mut out = Vec::new();
        let mut chosen = Vec::with_capacity(need);
        self.trees_rec(0, need, &mut chosen, &mut out);
        Ok(out)
    }

    fn trees_rec(&self, start: usize, need: usize, chosen: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if chosen.len() == need {
            out.push(chosen.clone());
            return;
        }
        let remaining = need - chosen.len();
        for e in start..self.edges.len() {
            if self.edges.len() - e < remaining {
                break;
            }
            if self.is_loop(e) {
                continue;
            }
            chosen.push(e);
            let mut uf = UnionFind::new(self.n_vertices);
            let acyclic = chosen.iter().all(|&f| uf.union(self.edges[f].0, self.edges[f].1));
            if acyclic {
                self.trees_rec(e + 1, need, chosen, out);
            }
            chosen.pop();
        }
    }

    /// Spanning-tree count from the reduced Laplacian determinant.
    pub fn matrix_tree_count(&self) -> f64 {
        let n = self.n_vertices;
        if n <= 1 {
            return 1.0;
        }
        let mut lap = DMatrix::<f64>::zeros(n, n);
        for &(a, b) in &self.edges {
            if a != b {
                lap[(a, a)] += 1.0;
                lap[(b, b)] += 1.0;
                lap[(a, b)] -= 1.0;
                lap[(b, a)] -= 1.0;
            }
        }
        lap.view((1, 1), (n - 1, n - 1)).into_owned().determinant().round()
    }

    /// First Symanzik polynomial.
    pub fn symanzik(&self) -> Result<Symanzik> {
        let trees = self.spanning_trees()?;
        let monomials = trees
            .into_iter()
            .map(|t| (0..self.edges.len()).filter(|e| !t.contains(e)).collect())
            .collect();
        Ok(Symanzik { n_edges: self.edges.len(), monomials })
    }

    /// Subgraph spanned by an edge set, vertices relabeled densely.
    pub fn edge_subgraph(&self, edge_ids: &[usize]) -> Multigraph {
        let mut map = vec![usize::MAX; self.n_vertices];
        let mut next = 0;
        let mut edges = Vec::with_capacity(edge_ids.len());
        for &e in edge_ids {
            let (a, b) = self.edges[e];
            for v in [a, b] {
                if map[v] == usize::MAX {
                    map[v] = next;
                    next += 1;
                }
            }
            edges.push((map[a], map[b]));
        }
        Multigraph { n_vertices: next, edges }
    }

    /// True when the edges cannot be split into two nonempty parts meeting in one vertex.
    pub fn is_one_vi(&self) -> bool {
        if self.edges.is_empty() || !self.is_connected() {
            return false;
        }
        if self.edges.len() == 1 {
            return true;
        }
        for v in 0..self.n_vertices {
            let mut uf = UnionFind::new(self.n_vertices + self.edges.len());
            // Edge e is node n_vertices + e; joined to its endpoints other than v.
            for (e, &(a, b)) in self.edges.iter().enumerate() {
                let node = self.n_vertices + e;
                if a != v {
                    uf.union(node, a);
                }
                if b != v {
                    uf.union(node, b);
                }
            }
            let root = uf.find(self.n_vertices);
            if (1..self.edges.len()).any(|e| uf.find(self.n_vertices + e) != root) {
                return false;
            }
        }
        true
    }

    /// Edge sets of all 1VI subgraphs, single edges included.
    pub fn one_vi_subgraphs(&self) -> Vec<Vec<usize>> {
        let m = self.edges.len();
        assert!(m < 32, "1VI enumeration is exhaustive over edge subsets");
        let mut out = Vec::new();
        for mask in 1u32..(1u32 << m) {
            let ids: Vec<usize> = (0..m).filter(|e| mask >> e & 1 == 1).collect();
            if self.edge_subgraph(&ids).is_one_vi() {
                out.push(ids);
            }
        }
        out
    }
}

/// U_G = Σ_T ∏_{e∉T} α_e as a list of monomials (edge-id sets).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Symanzik {
    pub n_edges: usize,
    pub monomials: Vec<Vec<usize>>,
}

impl Symanzik {
    pub fn eval(&self, alpha: &[f64]) -> f64 {
        self.monomials.iter().map(|m| m.iter().map(|&e| alpha[e]).product::<f64>()).sum()
    }

    /// U with α_fixed = 1 and the remaining edges taking `rest` in order.
    pub fn eval_with_unit(&self, fixed: usize, rest: &[f64]) -> f64 {
        let mut alpha = Vec::with_capacity(self.n_edges);
        let mut it = rest.iter();
        for e in 0..self.n_edges {
            alpha.push(if e == fixed { 1.0 } else { *it.next().expect("rest has n_edges − 1 entries") });
        }
        self.eval(&alpha)
    }
}

/// Δ_γ = |E(γ)| − (d/2)(|E(γ)| − |V(γ)| + 1) for a connected subgraph.
pub fn discriminant(sub: &Multigraph, d: f64) -> f64 {
    let e = sub.n_edges() as f64;
    e - 0.5 * d * (e - sub.n_vertices() as f64 + 1.0)
}

/// Δ(V₂, V₃) = V₂ + (3/2 − d/4)V₃ − d/2 for graphs with degrees 2 and 3 only.
pub fn degree_discriminant(v2: usize, v3: usize, d: f64) -> f64 {
    v2 as f64 + (1.5 - d / 4.0) * v3 as f64 - d / 2.0
}

/// Numbers of degree-2 and degree-3 vertices, or None if another degree occurs.
pub fn degree_pattern(sub: &Multigraph) -> Option<(usize, usize)> {
    let mut v2 = 0;
    let mut v3 = 0;
    for v in 0..sub.n_vertices() {
        match sub.degree(v) {
            2 => v2 += 1,
            3 => v3 += 1,
            _ => return None,
        }
    }
    Some((v2, v3))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Convergent,
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub edges: Vec<usize>,
    pub delta: f64,
    pub pattern: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub min_delta: f64,
}

/// Scans every 1VI subgraph; the witness is a divergent one with fewest edges.
pub fn singularity_scan(g: &Multigraph, d: f64) -> ScanReport {
    let mut min_delta = f64::INFINITY;
    let mut witness: Option<Witness> = None;
    for ids in g.one_vi_subgraphs() {
        let sub = g.edge_subgraph(&ids);
        let delta = discriminant(&sub, d);
        min_delta = min_delta.min(delta);
        if delta <= 0.0 {
            let better = match &witness {
                None => true,
                Some(w) => ids.len() < w.edges.len() || (ids.len() == w.edges.len() && delta < w.delta),
            };
            if better {
                witness = Some(Witness { pattern: degree_pattern(&sub), edges: ids, delta });
            }
        }
    }
    ScanReport {
        verdict: if witness.is_some() { Verdict::Divergent } else { Verdict::Convergent },
        witness,
        min_delta,
    }
}

/// Largest V₃ listed when the V₃ coefficient of Δ vanishes (d = 6).
pub const TABLE_V3_CAP: usize = 12;

/// All (V₂, V₃) ≠ (0, 0) with Δ(V₂, V₃) ≤ 0; `realizable` keeps even V₃ and even 2V₂ + 3V₃.
pub fn singular_table(d: usize, realizable: bool) -> Result<Vec<(usize, usize)>> {
    if !(1..=6).contains(&d) {
        return Err(LabError::invalid(format!("singular table covers d = 1..6, got {d}")));
    }
    let df = d as f64;
    let slope = 1.5 - df / 4.0;
    let v3_max = if slope > 0.0 { (df / 2.0 / slope).floor() as usize } else { TABLE_V3_CAP };
    let v2_max = (df / 2.0).floor() as usize;
    let mut out = Vec::new();
    for v2 in 0..=v2_max {
        for v3 in 0..=v3_max {
            if (v2, v3) == (0, 0) || degree_discriminant(v2, v3, df) > 0.0 {
                continue;
            }
            if realizable && (v3 % 2 != 0 || (2 * v2 + 3 * v3) % 2 != 0) {
                continue;
            }
            out.push((v2, v3));
        }
    }
    Ok(out)
}
