//! Wait-free compare-and-swap built from registers that only offer read,
//! write, half-max and max-write.
//!
//! Shared state per object is the `V` register `(seq | val)` and the `P`
//! register `(seq | pid, c)`; per process there is an announcement `A[i] =
//! (c | val)` and a result slot `R[i] = (c | ret)`. A `read` is one read of
//! `V`. A `cas(a, b)` reads `V`, returns early if `a` is not the current value
//! or `a == b`, and otherwise announces `b`, competes for `P` with a max-write
//! of `seq + 1`, closes the round with a half-max of `seq + 2`, helps whoever
//! won the round, and returns what its own `R` entry says. Every call finishes
//! in at most [`MAX_CAS_STEPS`] register operations.
//!
//! [`MultiCas`] runs `m` objects over one shared pair of `A`/`R` arrays, which
//! works because a process has at most one pending call across all objects and
//! its counter orders the entries.

mod call;
mod live;
mod object;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registers::RegisterError;

pub use call::{Algorithm, Call, Line, Memory, Mutation, Path, Step};
pub use live::{LiveCas, LiveHandle};
pub use object::{CasConfig, CasObject, MultiCas, SimMemory, Snapshot};

/// Register operations issued by a `cas` that takes the competition path.
pub const MAX_CAS_STEPS: u32 = 10;
/// Register operations issued by a `read`, or by a `cas` that returns early.
pub const SHORT_CALL_STEPS: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CasError {
    #[error(transparent)]
    Register(#[from] RegisterError),
    #[error("at least one process is required")]
    NoProcesses,
    #[error("at least one object is required")]
    NoObjects,
    #[error("pid {pid} is outside 1..={procs}")]
    PidOutOfRange { pid: usize, procs: usize },
    #[error("object {obj} is outside 0..{objects}")]
    ObjectOutOfRange { obj: usize, objects: usize },
    #[error("process {0} already has a call in flight")]
    CallInFlight(Pid),
    #[error("process {0} stepped a call that already returned")]
    CallFinished(Pid),
    #[error("pid {0} is already bound to a live handle")]
    PidTaken(Pid),
}

/// Process identifier, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pid(usize);

impl Pid {
    pub const fn new(raw: usize) -> Self {
        Pid(raw)
    }

    pub const fn get(self) -> usize {
        self.0
    }

    /// Zero-based slot in per-process arrays.
    pub const fn index(self) -> usize {
        self.0 - 1
    }

    pub(crate) fn check(self, procs: usize) -> Result<Self, CasError> {
        if self.0 >= 1 && self.0 <= procs {
            Ok(self)
        } else {
            Err(CasError::PidOutOfRange { pid: self.0, procs })
        }
    }
}

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A shared register. `V` and `P` are per object, `A` and `R` per process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Reg {
    V(usize),
    P(usize),
    A(Pid),
    R(Pid),
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Reg::V(0) => f.write_str("V"),
            Reg::P(0) => f.write_str("P"),
            Reg::V(k) => write!(f, "V[{k}]"),
            Reg::P(k) => write!(f, "P[{k}]"),
            Reg::A(pid) => write!(f, "A[{pid}]"),
            Reg::R(pid) => write!(f, "R[{pid}]"),
        }
    }
}

impl FromStr for Reg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("unknown register `{s}`");
        let (name, index) = match s.split_once('[') {
            None => (s, None),
            Some((name, rest)) => {
                let digits = rest.strip_suffix(']').ok_or_else(bad)?;
                (name, Some(digits.parse::<usize>().map_err(|_| bad())?))
            }
        };
        match (name, index) {
            ("V", None) => Ok(Reg::V(0)),
            ("P", None) => Ok(Reg::P(0)),
            ("V", Some(k)) => Ok(Reg::V(k)),
            ("P", Some(k)) => Ok(Reg::P(k)),
            ("A", Some(i)) if i >= 1 => Ok(Reg::A(Pid(i))),
            ("R", Some(i)) if i >= 1 => Ok(Reg::R(Pid(i))),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Reg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Reg {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A high-level operation on a compare-and-swap object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CallOp {
    Cas { expected: u64, new: u64 },
    Read,
}

impl CallOp {
    pub fn name(&self) -> &'static str {
        match self {
            CallOp::Cas { .. } => "cas",
            CallOp::Read => "read",
        }
    }

    pub fn args(&self) -> Vec<u64> {
        match *self {
            CallOp::Cas { expected, new } => vec![expected, new],
            CallOp::Read => vec![],
        }
    }

    pub fn from_parts(name: &str, args: &[u64]) -> Option<Self> {
        match (name, args) {
            ("cas", &[expected, new]) => Some(CallOp::Cas { expected, new }),
            ("read", []) => Some(CallOp::Read),
            _ => None,
        }
    }
}

impl fmt::Display for CallOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CallOp::Cas { expected, new } => write!(f, "cas({expected}, {new})"),
            CallOp::Read => f.write_str("read()"),
        }
    }
}

/// Return value of a high-level call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ret {
    Bool(bool),
    Value(u64),
}

impl fmt::Display for Ret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ret::Bool(b) => write!(f, "{b}"),
            Ret::Value(v) => write!(f, "{v}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_names_round_trip() {
        for reg in [
            Reg::V(0),
            Reg::P(0),
            Reg::V(3),
            Reg::P(1),
            Reg::A(Pid::new(2)),
            Reg::R(Pid::new(7)),
        ] {
            assert_eq!(reg.to_string().parse::<Reg>(), Ok(reg));
        }
        assert_eq!(Reg::V(0).to_string(), "V");
        assert_eq!(Reg::A(Pid::new(1)).to_string(), "A[1]");
        assert!("A[0]".parse::<Reg>().is_err());
        assert!("Q".parse::<Reg>().is_err());
        assert!("A[1".parse::<Reg>().is_err());
    }

    #[test]
    fn mutation_names_parse() {
        for m in Mutation::ALL {
            assert_eq!(m.name().parse::<Mutation>(), Ok(m));
        }
        assert!("nope".parse::<Mutation>().is_err());
    }
}
