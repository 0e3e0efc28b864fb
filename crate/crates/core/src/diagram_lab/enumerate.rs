//! Typical k-diagrams: multigraphs with k marked degree-1 vertices and
//! degree-3 vertices elsewhere, covered by k non-backtracking circuits that
//! traverse every edge twice.
//!
//! Circuits are generated step by step. Vertices and edges are labeled in
//! order of first traversal, so every diagram (graph plus ordered, directed
//! circuits) is produced by exactly one traversal word.

use std::collections::HashSet;
use std::io::Write;

use serde::Serialize;

use super::graph::Multigraph;
use super::weights::WeightSystem;
use crate::error::{LabError, Result};
use crate::rbm_model::Beta;

/// Largest s accepted by `enumerate_typical`.
pub const S_MAX_LIMIT: usize = 4;
/// Cap on explored traversal prefixes.
pub const ENUMERATION_BUDGET: u64 = 200_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagram {
    pub beta: Beta,
    pub k: usize,
    pub s: usize,
    pub graph: Multigraph,
    /// Vertex sequences u_0 u_1 … u_0 of each circuit.
    pub circuits: Vec<Vec<usize>>,
    /// Edge ids traversed by each circuit, in order.
    pub circuit_edges: Vec<Vec<usize>>,
    pub marked: Vec<usize>,
    pub tails: Vec<usize>,
    /// c_i(e): traversals of edge e by circuit i.
    pub multiplicity: Vec<Vec<u32>>,
}

impl Diagram {
    pub fn is_tail(&self, e: usize) -> bool {
        self.tails.contains(&e)
    }

    pub fn has_self_loop(&self) -> bool {
        (0..self.graph.n_edges()).any(|e| self.graph.is_loop(e))
    }

    /// Graph with tail edges and marked points removed.
    pub fn core_graph(&self) -> Multigraph {
        let ids: Vec<usize> = (0..self.graph.n_edges()).filter(|&e| !self.is_tail(e)).collect();
        self.graph.edge_subgraph(&ids)
    }

    /// Linear weight system Σ_e c_i(e) w(e) = n_i with lower bounds 0 (tail), 3 (self-loop), 1 (other).
    pub fn weight_system(&self) -> WeightSystem {
        let lower = (0..self.graph.n_edges())
            .map(|e| {
                if self.is_tail(e) {
                    0
                } else if self.graph.is_loop(e) {
                    3
                } else {
                    1
                }
            })
            .collect();
        WeightSystem::new(self.multiplicity.clone(), lower).expect("diagram systems are well formed")
    }
}

#[derive(Clone)]
struct Walk {
    beta: Beta,
    k: usize,
    max_edges: usize,
    max_vertices: usize,
    edges: Vec<(usize, usize)>,
    uses: Vec<u8>,
    first_from: Vec<usize>,
    deg: Vec<u8>,
    marked: Vec<bool>,
    circuits: Vec<Vec<usize>>,
    circuit_edges: Vec<Vec<usize>>,
    tails: Vec<usize>,
    visited: u64,
}

impl Walk {
    fn open_edge(&mut self, a: usize, b: usize) -> usize {
        self.edges.push((a, b));
        self.uses.push(1);
        self.first_from.push(a);
        self.deg[a] += 1;
        self.deg[b] += 1;
        self.edges.len() - 1
    }

    fn close_edge(&mut self) {
        let (a, b) = self.edges.pop().expect("edge to close");
        self.uses.pop();
        self.first_from.pop();
        self.deg[a] -= 1;
        self.deg[b] -= 1;
    }

    fn new_vertex(&mut self, marked: bool) -> usize {
        self.deg.push(0);
        self.marked.push(marked);
        self.deg.len() - 1
    }

    fn drop_vertex(&mut self) {
        self.deg.pop();
        self.marked.pop();
    }

    fn core_vertices(&self) -> usize {
        self.marked.iter().filter(|m| !**m).count()
    }

    fn push_step(&mut self, e: usize, to: usize) {
        let c = self.circuits.len() - 1;
        self.circuit_edges[c].push(e);
        self.circuits[c].push(to);
    }

    fn pop_step(&mut self) {
        let c = self.circuits.len() - 1;
        self.circuit_edges[c].pop();
        self.circuits[c].pop();
    }

    fn budget_ok(&mut self) -> Result<()> {
        self.visited += 1;
        if self.visited > ENUMERATION_BUDGET {
            return Err(LabError::Resource(format!("diagram enumeration exceeded {ENUMERATION_BUDGET} prefixes")));
        }
        Ok(())
    }

    /// Starts circuit number `self.circuits.len()` or finalizes.
    fn start_circuit(&mut self, out: &mut Vec<Diagram>) -> Result<()> {
        if self.circuits.len() == self.k {
            self.finish(out);
            return Ok(());
        }
        let m = self.new_vertex(true);
        self.circuits.push(vec![m]);
        self.circuit_edges.push(Vec::new());
        if self.edges.len() < self.max_edges {
            for w in 0..m {
                if !self.marked[w] && self.deg[w] < 3 {
                    let e = self.open_edge(m, w);
                    self.tails.push(e);
                    self.push_step(e, w);
                    self.step(w, e, out)?;
                    self.pop_step();
                    self.tails.pop();
                    self.close_edge();
                }
            }
            if self.core_vertices() < self.max_vertices {
                let w = self.new_vertex(false);
                let e = self.open_edge(m, w);
                self.tails.push(e);
                self.push_step(e, w);
                self.step(w, e, out)?;
                self.pop_step();
                self.tails.pop();
                self.close_edge();
                self.drop_vertex();
            }
        }
        self.circuits.pop();
        self.circuit_edges.pop();
        self.drop_vertex();
        Ok(())
    }

    fn step(&mut self, v: usize, prev: usize, out: &mut Vec<Diagram>) -> Result<()> {
        self.budget_ok()?;
        let tail = *self.tails.last().expect("inside a circuit");
        let start = self.circuits.last().expect("inside a circuit")[0];
        // Second traversals of existing edges at v.
        for e in 0..self.edges.len() {
            if self.uses[e] != 1 {
                continue;
            }
            let (a, b) = self.edges[e];
            if a != v && b != v {
                continue;
            }
            let is_loop = a == b;
            if e == prev && !(is_loop && self.beta == Beta::Real) {
                continue;
            }
            let w = if a == v { b } else { a };
            if self.beta == Beta::Complex && !is_loop && self.first_from[e] == v {
                continue;
            }
            if self.marked[w] && !(e == tail && w == start) {
                continue;
            }
            self.uses[e] = 2;
            self.push_step(e, w);
            if e == tail {
                self.start_circuit(out)?;
            } else {
                self.step(w, e, out)?;
            }
            self.pop_step();
            self.uses[e] = 1;
        }
        if self.edges.len() >= self.max_edges {
            return Ok(());
        }
        // New edge to an existing core vertex, v itself included.
        for w in 0..self.deg.len() {
            if self.marked[w] {
                continue;
            }
            let room = if w == v { self.deg[v] <= 1 } else { self.deg[v] < 3 && self.deg[w] < 3 };
            if !room {
                continue;
            }
            let e = self.open_edge(v, w);
            self.push_step(e, w);
            self.step(w, e, out)?;
            self.pop_step();
            self.close_edge();
        }
        // New edge to a new vertex.
        if self.deg[v] < 3 && self.core_vertices() < self.max_vertices {
            let w = self.new_vertex(false);
            let e = self.open_edge(v, w);
            self.push_step(e, w);
            self.step(w, e, out)?;
            self.pop_step();
            self.close_edge();
            self.drop_vertex();
        }
        Ok(())
    }

    fn finish(&self, out: &mut Vec<Diagram>) {
        if self.uses.iter().any(|&u| u != 2) {
            return;
        }
        if (0..self.deg.len()).any(|v| !self.marked[v] && self.deg[v] != 3) {
            return;
        }
        let m = self.edges.len();
        if (m + self.k) % 3 != 0 {
            return;
        }
        let s = (m + self.k) / 3;
        if self.deg.len() != 2 * s {
            return;
        }
        let graph = Multigraph::new(self.deg.len(), self.edges.clone()).expect("labels are dense");
        if !graph.is_connected() {
            return;
        }
        let multiplicity = self
            .circuit_edges
            .iter()
            .map(|ce| {
                let mut c = vec![0u32; m];
                ce.iter().for_each(|&e| c[e] += 1);
                c
            })
            .collect();
        out.push(Diagram {
            beta: self.beta,
            k: self.k,
            s,
            graph,
            circuits: self.circuits.clone(),
            circuit_edges: self.circuit_edges.clone(),
            marked: self.circuits.iter().map(|c| c[0]).collect(),
            tails: self.tails.clone(),
            multiplicity,
        });
    }
}

/// All connected typical k-diagrams with k ≤ s ≤ s_max, sorted by s.
pub fn enumerate_typical(beta: Beta, k: usize, s_max: usize) -> Result<Vec<Diagram>> {
    if k == 0 {
        return Err(LabError::invalid("k must be positive"));
    }
    if s_max > S_MAX_LIMIT {
        return Err(LabError::Resource(format!("s_max = {s_max} exceeds the enumeration limit {S_MAX_LIMIT}")));
    }
    if s_max < k {
        return Ok(Vec::new());
    }
    let mut walk = Walk {
        beta,
        k,
        max_edges: 3 * s_max - k,
        max_vertices: 2 * s_max - k,
        edges: Vec::new(),
        uses: Vec::new(),
        first_from: Vec::new(),
        deg: Vec::new(),
        marked: Vec::new(),
        circuits: Vec::new(),
        circuit_edges: Vec::new(),
        tails: Vec::new(),
        visited: 0,
    };
    let mut out = Vec::new();
    walk.start_circuit(&mut out)?;
    let mut seen = HashSet::new();
    for d in &out {
        let key = (d.graph.clone(), d.circuit_edges.clone());
        if !seen.insert(key) {
            return Err(LabError::Numerical("duplicate traversal word in diagram enumeration".into()));
        }
    }
    out.sort_by_key(|d| d.s);
    Ok(out)
}

/// Counts per s of the enumerated diagrams.
pub fn counts_by_s(diagrams: &[Diagram], s_max: usize) -> Vec<usize> {
    let mut c = vec![0; s_max + 1];
    diagrams.iter().for_each(|d| c[d.s] += 1);
    c
}

/// Smallest C with (s/C)^{s+k−1}/(k−1)! ≤ D(s) ≤ (Cs)^{s+k−1}/(k−1)! for all listed (s, D(s)), D(s) > 0.
pub fn fitted_envelope_constant(k: usize, counts: &[(usize, usize)]) -> Option<f64> {
    let fact: f64 = (1..k).map(|i| i as f64).product();
    let mut c: f64 = 1.0;
    for &(s, dcount) in counts {
        if dcount == 0 {
            return None;
        }
        let p = (s + k - 1) as f64;
        let scaled = (dcount as f64 * fact).powf(1.0 / p);
        c = c.max(s as f64 / scaled).max(scaled / s as f64);
    }
    Some(c)
}

/// Diagram catalog as JSON.
pub fn write_catalog_json(diagrams: &[Diagram], out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(out, diagrams)?;
    Ok(())
}
