//! Linearizability checking for compare-and-swap histories.
//!
//! Two independent engines: [`check_linearizable`] searches for a
//! linearization of the call history alone, while
//! [`linearize_by_definition`] reads the points off the register-level trace
//! and [`validate_assignment`] checks them.

mod check;
mod definition;
mod history;

pub use check::{
    check_linearizable, check_objects, check_with, spec_apply, CasSpec, LinearizationVerdict, SequentialSpec,
    DEFAULT_BUDGET,
};
pub use definition::{
    line_of, linearize_by_definition, validate_assignment, white_box, Case, CaseHistogram, Check, ClassifyError,
    DefinitionOneAssignment, Failure, Point, PointAssignment, Validation,
};
pub use history::{History, HistoryCall, HistoryError};
