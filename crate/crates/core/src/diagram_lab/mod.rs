//! Diagram calculus: typical k-diagrams, their weight systems, Symanzik
//! graph integrals, the power-counting singularity criterion and diagram functions.

pub mod enumerate;
pub mod function;
pub mod graph;
pub mod integral;
pub mod weights;

pub use enumerate::{counts_by_s, enumerate_typical, fitted_envelope_constant, write_catalog_json, Diagram};
pub use function::{
    cluster_t, diagram_c_constant, diagram_function, phi1_sub, t1_crit, tadpole_exponent, tadpole_sum, ClusterPrediction,
    DiagramValue, EvalMode, McOptions, TadpoleFit, TransformValue,
};
pub use graph::{singular_table, singularity_scan, Multigraph, ScanReport, Symanzik, Verdict, Witness};
pub use integral::{graph_integral, sector_bound, GraphIntegralResult};
pub use weights::{CConstant, CPoint, WeightSystem};
