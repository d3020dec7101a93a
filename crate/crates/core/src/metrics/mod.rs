//! Cost model, cost ledger and convergence diagnostics.

mod cost;
mod diagnostics;

pub use cost::{
    bytes_f64, cost_to_target, format_bytes, parse_bytes, round_cost, training_step_flops, Bytes, CostLedger, RoundCost,
};
pub use diagnostics::{alignment_alpha, descent_check, norm_discrepancy, Alignment, DescentCheck, DiagnosticSample};
