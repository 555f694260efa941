//! Tiling selection and group-boundary exploration.

mod explore;
mod tiling;

pub use explore::{
    algorithm1, describe, evaluate_boundary, reference_plan, seed_order, select_boundary, sweep, sweep_plans,
    BoundaryOutcome, Candidate, Constraint, DseConfig, MultiplierModel, Selection, SweepRow,
    SWEEP_HEADER,
};
pub use tiling::{
    main_candidates, main_group_time, propagate_group1_tilings, select_main_tiling, PlanError,
    PropagatedTile, Tile, TilingPlan,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DseError {
    #[error("conv {conv}: infeasible seed: {reason}")]
    InfeasibleSeed { conv: usize, reason: String },
    #[error("boundary {boundary} exceeds conv layer count {convs}")]
    Boundary { boundary: usize, convs: usize },
    #[error("no main-layer tile fits at boundary {boundary}")]
    NoMainCandidate { boundary: usize },
    #[error("no feasible boundary: {}", describe_binding(.0))]
    Infeasible(Vec<(usize, Vec<Constraint>)>),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

fn describe_binding(per_boundary: &[(usize, Vec<Constraint>)]) -> String {
    per_boundary
        .iter()
        .map(|(i, c)| format!("i={i}: {c:?}"))
        .collect::<Vec<_>>()
        .join("; ")
}
