//! Wait-free compare-and-swap from half-max and max-write registers, plus the
//! tooling to check it: a deterministic step-level simulator, a black-box
//! linearizability checker and a white-box linearization-point oracle.

pub mod bench;
pub mod campaign;
pub mod caslib;
pub mod lincheck;
pub mod machine;
pub mod registers;
