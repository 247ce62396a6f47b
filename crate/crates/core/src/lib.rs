//! Two-stage service restoration planning for unbalanced, multi-feeder
//! distribution networks.
//!
//! Stage 1 finds the restored radial topology (feeder reconfiguration plus
//! grid-forming DG islanding) as a MILP over a linearized three-phase power
//! flow. Stage 2 orders the resulting switch actions one per step under
//! cold-load-pickup demand. Both are checked with a nonlinear sweep.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod clpu;
pub mod milp;
pub mod netmodel;
pub mod powerflow;
pub mod reports;
pub mod stage1;
pub mod stage2;
pub mod topology;

mod formulation;
