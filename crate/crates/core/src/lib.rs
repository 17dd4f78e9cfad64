//! Phase-field fatigue fracture coupled to multi-surface cyclic plasticity
//! with ratcheting: material-point drivers and a 2D plane-strain FE solver.

// Index loops over element/node/quadrature arrays mirror the assembly math;
// negated comparisons in the input validators (`!(x > 0.0)`) deliberately
// reject NaN along with out-of-range values.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::too_many_arguments)]

pub mod cli;
pub mod config;
pub mod constitutive;
pub mod energy;
pub mod fem;
pub mod linsolve;
pub mod load;
pub mod matpoint;
pub mod mesh;
pub mod solver;
pub mod tensor;
pub mod vtk;

/// Format a float with 9 significant digits (trace/snapshot convention).
pub fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// CLI entry point; returns the process exit code.
pub fn run_cli() -> i32 {
    cli::run(std::env::args())
}
