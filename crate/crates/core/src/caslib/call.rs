use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CasError, CallOp, Pid, Reg, Ret};
use crate::registers::{PLayout, PWord, Primitive, Width, Word};

/// Source line of the algorithm a register operation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Line {
    /// `read()`: the single read of `V`.
    ReadValue,
    /// `cas()`: read `V` to get `(seq | val)`.
    ReadVersion,
    /// `A[id].write(c | b)`.
    Announce,
    /// `R[id].write(c | false)`.
    ResetResult,
    /// `P.max_write(seq + 1 | id | c)`.
    Compete,
    /// `P.half_max(seq + 2)`.
    Win,
    /// `(seq | pid | cp) <- P.read()`.
    ReadWinner,
    /// `(ca | val) <- A[pid].read()`.
    ReadAnnounced,
    /// `R[pid].max_write(ca | true)`.
    Inform,
    /// `V.max_write(seq | val)`.
    Update,
    /// `(_ | ret) <- R[id].read()`.
    ReadResult,
}

impl Line {
    pub fn number(self) -> u8 {
        match self {
            Line::ReadValue => 2,
            Line::ReadVersion => 5,
            Line::Announce => 12,
            Line::ResetResult => 13,
            Line::Compete => 14,
            Line::Win => 15,
            Line::ReadWinner => 16,
            Line::ReadAnnounced => 17,
            Line::Inform => 19,
            Line::Update => 20,
            Line::ReadResult => 21,
        }
    }
}

/// Seeded bugs, each breaking one step the correctness argument leans on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Update `V` before informing the winner through `R`.
    SwapInformUpdate,
    /// Plain write instead of max-write when updating `V`.
    PlainWriteUpdate,
    /// Finish the competition with `seq + 1` instead of `seq + 2`.
    WinWithSeqPlusOne,
    /// Help even when the observed `P.seq` is odd.
    SkipParityCheck,
    /// Help without checking that the announcement matches `P.c`.
    SkipCounterCheck,
}

impl Mutation {
    pub const ALL: [Mutation; 5] = [
        Mutation::SwapInformUpdate,
        Mutation::PlainWriteUpdate,
        Mutation::WinWithSeqPlusOne,
        Mutation::SkipParityCheck,
        Mutation::SkipCounterCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mutation::SwapInformUpdate => "swap-inform-update",
            Mutation::PlainWriteUpdate => "plain-write-update",
            Mutation::WinWithSeqPlusOne => "win-seq-plus-one",
            Mutation::SkipParityCheck => "skip-parity-check",
            Mutation::SkipCounterCheck => "skip-counter-check",
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mutation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mutation::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Mutation::ALL.iter().map(|m| m.name()).collect();
                format!("unknown mutation `{s}` (expected one of: {})", names.join(", "))
            })
    }
}

/// Fixed parameters of the algorithm shared by every call on an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Algorithm {
    layout: PLayout,
    mutation: Option<Mutation>,
}

impl Algorithm {
    pub fn new(width: Width, procs: usize, mutation: Option<Mutation>) -> Result<Self, CasError> {
        if procs == 0 {
            return Err(CasError::NoProcesses);
        }
        Ok(Algorithm {
            layout: PLayout::new(width, procs)?,
            mutation,
        })
    }

    pub fn layout(&self) -> &PLayout {
        &self.layout
    }

    pub fn width(&self) -> Width {
        self.layout.width()
    }

    pub fn procs(&self) -> usize {
        self.layout.procs()
    }

    pub fn mutation(&self) -> Option<Mutation> {
        self.mutation
    }

    fn has(&self, m: Mutation) -> bool {
        self.mutation == Some(m)
    }
}

/// Shared registers a call runs against.
pub trait Memory {
    /// Executes one register operation; returns the value read, or the state
    /// after the operation for anything other than a read.
    fn execute(&mut self, reg: Reg, op: Primitive) -> Result<Word, CasError>;
}

/// Which way a call went after its first read of `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    Read,
    GuardFail,
    NoOp,
    Contended,
}

/// One executed register operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub reg: Reg,
    pub op: Primitive,
    pub observed: Word,
    pub line: Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pc {
    Start,
    Announce,
    ResetResult,
    Compete,
    Win,
    ReadWinner,
    ReadAnnounced,
    Inform,
    Update,
    ReadResult,
    Done(Ret),
}

/// An in-flight high-level call, advanced one register operation at a time.
///
/// Local computation (the argument guards, the counter increment, the helping
/// check and the final return) is folded into the adjacent register step, so
/// every [`Call::step`] issues exactly one register operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Call {
    pid: Pid,
    obj: usize,
    op: CallOp,
    pc: Pc,
    path: Option<Path>,
    first_read: Option<Word>,
    seq: u64,
    c: u64,
    winner: PWord,
    announced: Word,
    steps: u32,
}

impl Call {
    pub fn new(pid: Pid, obj: usize, op: CallOp) -> Self {
        Call {
            pid,
            obj,
            op,
            pc: Pc::Start,
            path: None,
            first_read: None,
            seq: 0,
            c: 0,
            winner: PWord::default(),
            announced: Word::ZERO,
            steps: 0,
        }
    }

    pub fn pid(&self) -> Pid {
        self.pid
    }

    pub fn obj(&self) -> usize {
        self.obj
    }

    pub fn op(&self) -> CallOp {
        self.op
    }

    pub fn result(&self) -> Option<Ret> {
        match self.pc {
            Pc::Done(r) => Some(r),
            _ => None,
        }
    }

    pub fn is_done(&self) -> bool {
        self.result().is_some()
    }

    /// Register operations issued so far.
    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// Known once the first step has run.
    pub fn path(&self) -> Option<Path> {
        self.path
    }

    /// What the first read of `V` returned.
    pub fn first_read(&self) -> Option<Word> {
        self.first_read
    }

    /// Counter value used by a contended call (0 before it is assigned).
    pub fn counter(&self) -> u64 {
        self.c
    }

    /// Runs the next register operation. `counter` is the calling process's
    /// private counter `c`.
    pub fn step<M: Memory>(
        &mut self,
        alg: &Algorithm,
        mem: &mut M,
        counter: &mut u64,
    ) -> Result<Step, CasError> {
        let id = self.pid;
        let v = Reg::V(self.obj);
        let p = Reg::P(self.obj);
        let width = alg.width();
        let swapped = alg.has(Mutation::SwapInformUpdate);

        let (reg, op, line) = match self.pc {
            Pc::Done(_) => return Err(CasError::CallFinished(id)),
            Pc::Start => match self.op {
                CallOp::Read => (v, Primitive::Read, Line::ReadValue),
                CallOp::Cas { .. } => (v, Primitive::Read, Line::ReadVersion),
            },
            Pc::Announce => {
                let next = *counter + 1;
                if next > alg.layout.max_counter() {
                    return Err(crate::registers::RegisterError::Overflow {
                        field: "c",
                        value: next as u128,
                        bits: alg.layout.counter_bits(),
                    }
                    .into());
                }
                *counter = next;
                self.c = next;
                let CallOp::Cas { new, .. } = self.op else { unreachable!() };
                (Reg::A(id), Primitive::Write(Word::new(self.c, new)), Line::Announce)
            }
            Pc::ResetResult => (Reg::R(id), Primitive::Write(Word::new(self.c, 0)), Line::ResetResult),
            Pc::Compete => {
                let seq = width.check_wide("P.seq", self.seq as u128 + 1)?;
                let word = alg.layout.pack(PWord {
                    seq,
                    pid: id.get() as u64,
                    c: self.c,
                })?;
                (p, Primitive::MaxWrite(word), Line::Compete)
            }
            Pc::Win => {
                let bump = if alg.has(Mutation::WinWithSeqPlusOne) { 1 } else { 2 };
                let seq = width.check_wide("P.seq", self.seq as u128 + bump)?;
                (p, Primitive::HalfMax(seq), Line::Win)
            }
            Pc::ReadWinner => (p, Primitive::Read, Line::ReadWinner),
            Pc::ReadAnnounced => {
                let pid = self.winner.pid as usize;
                if pid == 0 || pid > alg.procs() {
                    return Err(CasError::PidOutOfRange {
                        pid,
                        procs: alg.procs(),
                    });
                }
                (Reg::A(Pid::new(pid)), Primitive::Read, Line::ReadAnnounced)
            }
            Pc::Inform => (
                Reg::R(Pid::new(self.winner.pid as usize)),
                Primitive::MaxWrite(Word::new(self.announced.hi, 1)),
                Line::Inform,
            ),
            Pc::Update => {
                let word = Word::new(self.winner.seq, self.announced.lo);
                let op = if alg.has(Mutation::PlainWriteUpdate) {
                    Primitive::Write(word)
                } else {
                    Primitive::MaxWrite(word)
                };
                (v, op, Line::Update)
            }
            Pc::ReadResult => (Reg::R(id), Primitive::Read, Line::ReadResult),
        };

        let observed = mem.execute(reg, op)?;
        self.steps += 1;

        self.pc = match self.pc {
            Pc::Start => {
                self.first_read = Some(observed);
                match self.op {
                    CallOp::Read => {
                        self.path = Some(Path::Read);
                        Pc::Done(Ret::Value(observed.lo))
                    }
                    CallOp::Cas { expected, new } => {
                        self.seq = observed.hi;
                        if expected != observed.lo {
                            self.path = Some(Path::GuardFail);
                            Pc::Done(Ret::Bool(false))
                        } else if expected == new {
                            self.path = Some(Path::NoOp);
                            Pc::Done(Ret::Bool(true))
                        } else {
                            self.path = Some(Path::Contended);
                            Pc::Announce
                        }
                    }
                }
            }
            Pc::Announce => Pc::ResetResult,
            Pc::ResetResult => Pc::Compete,
            Pc::Compete => Pc::Win,
            Pc::Win => Pc::ReadWinner,
            Pc::ReadWinner => {
                self.winner = alg.layout.unpack(observed);
                Pc::ReadAnnounced
            }
            Pc::ReadAnnounced => {
                self.announced = observed;
                let even = self.winner.seq.is_multiple_of(2) || alg.has(Mutation::SkipParityCheck);
                let current =
                    self.winner.c == observed.hi || alg.has(Mutation::SkipCounterCheck);
                match (even && current, swapped) {
                    (true, false) => Pc::Inform,
                    (true, true) => Pc::Update,
                    (false, _) => Pc::ReadResult,
                }
            }
            Pc::Inform if swapped => Pc::ReadResult,
            Pc::Inform => Pc::Update,
            Pc::Update if swapped => Pc::Inform,
            Pc::Update => Pc::ReadResult,
            Pc::ReadResult => Pc::Done(Ret::Bool(observed.lo == 1)),
            Pc::Done(_) => unreachable!(),
        };

        Ok(Step {
            reg,
            op,
            observed,
            line,
        })
    }
}
