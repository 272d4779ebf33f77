//! The structure step: proximal maps, the primal-dual splitting solver for
//! the task-structure subproblem, and fixed-structure presets.

mod presets;
mod prox;
mod solver;

pub use presets::{structure_from_graph, structure_mean_variance};
pub use prox::{prox_trace_inverse, soft_threshold};
pub use solver::{
    solve_structure, structure_subproblem, DualUpdate, SolveStatus, SplitState, StructureDiagnostics,
    StructureProblem, StructureSolution, StructureSolverOptions,
};
