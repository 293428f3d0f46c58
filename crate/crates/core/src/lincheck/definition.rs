//! Linearization points read off the register-level trace, following the
//! correctness argument for the construction, and a validator for them.

use std::collections::HashMap;
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::caslib::{CallOp, Line, Pid, Reg, Ret};
use crate::machine::{ExecutionTrace, RegisterStep, TracedCall};
use crate::registers::{PLayout, Primitive, RegisterError, Width, Word};

use super::spec_apply;

/// Which rule placed a call's linearization point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Case {
    /// Saw a value other than `expected`: point at the first read of `V`.
    One,
    /// Saw `expected == new`: point at the first read of `V`.
    Two,
    /// Its own announcement was installed by the first write of `seq + 2`.
    ThreeA,
    /// Someone else's was: point just after that write.
    ThreeB,
    /// `V.seq` never reached `seq + 2`: placed at the end, without effect.
    Four,
    /// A read: point at its read of `V`.
    Read,
}

impl Case {
    pub const ALL: [Case; 6] = [Case::One, Case::Two, Case::ThreeA, Case::ThreeB, Case::Four, Case::Read];

    pub fn as_str(self) -> &'static str {
        match self {
            Case::One => "1",
            Case::Two => "2",
            Case::ThreeA => "3a",
            Case::ThreeB => "3b",
            Case::Four => "4",
            Case::Read => "read",
        }
    }

    /// Return value a finished call in this case must have produced.
    pub fn expected_ret(self) -> Option<bool> {
        match self {
            Case::One | Case::ThreeB => Some(false),
            Case::Two | Case::ThreeA => Some(true),
            Case::Four | Case::Read => None,
        }
    }

    fn index(self) -> usize {
        Case::ALL.iter().position(|&c| c == self).unwrap()
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Count of calls per case.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CaseHistogram([u64; 6]);

impl CaseHistogram {
    pub fn add(&mut self, case: Case) {
        self.0[case.index()] += 1;
    }

    pub fn merge(&mut self, other: &CaseHistogram) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
    }

    pub fn get(&self, case: Case) -> u64 {
        self.0[case.index()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

impl Serialize for CaseHistogram {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(6))?;
        for case in Case::ALL {
            map.serialize_entry(case.as_str(), &self.get(case))?;
        }
        map.end()
    }
}

impl fmt::Display for CaseHistogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = Case::ALL.iter().map(|c| format!("{}:{}", c, self.get(*c))).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Where in the execution a call takes effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Point {
    /// At the register step with this index.
    At(u64),
    /// Between this step and the next one.
    After(u64),
    /// After every other point.
    End,
}

impl Point {
    fn key(self) -> (u64, u8) {
        match self {
            Point::At(s) => (s, 0),
            Point::After(s) => (s, 1),
            Point::End => (u64::MAX, 2),
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Point::At(s) => write!(f, "at step {s}"),
            Point::After(s) => write!(f, "just after step {s}"),
            Point::End => f.write_str("at the end"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointAssignment {
    pub pid: Pid,
    pub obj: usize,
    pub op: CallOp,
    pub case: Case,
    pub point: Point,
    /// Sequence number seen by the first read of `V` (cas calls).
    pub seq: Option<u64>,
    /// Step of the first write of `seq + 2` to `V`, for case 3 calls.
    pub writer: Option<u64>,
}

/// One point per call; `points[i]` belongs to `calls[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefinitionOneAssignment {
    pub calls: Vec<TracedCall>,
    pub points: Vec<PointAssignment>,
}

impl DefinitionOneAssignment {
    /// Call indices sorted by point. Calls sharing a point (several placed
    /// just after the same write, or several at the end) go in pid order.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        idx.sort_by_key(|&i| (self.points[i].point.key(), self.points[i].pid));
        idx
    }

    pub fn histogram(&self) -> CaseHistogram {
        let mut h = CaseHistogram::default();
        for p in &self.points {
            h.add(p.case);
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("call {call} of pid {pid} did not start with a read of V")]
    NoFirstRead { call: usize, pid: Pid },
    #[error(
        "call {call} of pid {pid}: V[{obj}].seq ended at {final_seq} but no update wrote {target}"
    )]
    NoWriter {
        call: usize,
        pid: Pid,
        obj: usize,
        target: u64,
        final_seq: u64,
    },
    #[error("update at step {step} is not preceded by a read of P in the same call")]
    NoWinnerRead { step: u64 },
    #[error(transparent)]
    Layout(#[from] RegisterError),
}

/// Names the line of the algorithm a register step executes, from the
/// register and primitive alone. `own` is the pid running the call.
pub fn line_of(own: Pid, op: CallOp, reg: Reg, prim: Primitive) -> Option<Line> {
    use Primitive::*;
    Some(match (reg, prim) {
        (Reg::V(_), Read) if op == CallOp::Read => Line::ReadValue,
        (Reg::V(_), Read) => Line::ReadVersion,
        (Reg::A(p), Write(_)) if p == own => Line::Announce,
        (Reg::R(p), Write(_)) if p == own => Line::ResetResult,
        (Reg::P(_), MaxWrite(_)) => Line::Compete,
        (Reg::P(_), HalfMax(_)) => Line::Win,
        (Reg::P(_), Read) => Line::ReadWinner,
        (Reg::A(_), Read) => Line::ReadAnnounced,
        (Reg::R(_), MaxWrite(_)) => Line::Inform,
        (Reg::V(_), MaxWrite(_) | Write(_)) => Line::Update,
        (Reg::R(p), Read) if p == own => Line::ReadResult,
        _ => return None,
    })
}

fn is_update(step: &RegisterStep, obj: usize) -> bool {
    step.reg == Reg::V(obj) && matches!(step.op, Primitive::MaxWrite(_) | Primitive::Write(_))
}

/// Assigns every call of `trace` a case and a linearization point.
pub fn linearize_by_definition(trace: &ExecutionTrace) -> Result<DefinitionOneAssignment, ClassifyError> {
    let layout = PLayout::new(Width::new(trace.meta.width)?, trace.meta.procs)?;
    let calls = trace.calls();
    let steps = &trace.register_steps;

    let mut owner = vec![usize::MAX; steps.len()];
    for (ci, call) in calls.iter().enumerate() {
        for &si in &call.steps {
            owner[si] = ci;
        }
    }
    // First update step that brought each object's V.seq to each value.
    let mut first_write: HashMap<(usize, u64), usize> = HashMap::new();
    for (si, st) in steps.iter().enumerate() {
        if let Reg::V(obj) = st.reg {
            if is_update(st, obj) {
                first_write.entry((obj, st.observed.hi)).or_insert(si);
            }
        }
    }

    let mut points = Vec::with_capacity(calls.len());
    for (ci, call) in calls.iter().enumerate() {
        let first = call
            .steps
            .first()
            .map(|&si| &steps[si])
            .filter(|st| st.reg == Reg::V(call.obj) && st.op.is_read())
            .ok_or(ClassifyError::NoFirstRead { call: ci, pid: call.pid })?;
        let Word { hi: seq, lo: val } = first.observed;
        let mut assigned = PointAssignment {
            pid: call.pid,
            obj: call.obj,
            op: call.op,
            case: Case::Read,
            point: Point::At(first.step),
            seq: None,
            writer: None,
        };
        let CallOp::Cas { expected, new } = call.op else {
            points.push(assigned);
            continue;
        };
        assigned.seq = Some(seq);
        if val != expected {
            assigned.case = Case::One;
        } else if expected == new {
            assigned.case = Case::Two;
        } else {
            let target = seq + 2;
            let final_seq = trace.final_state.v[call.obj].hi;
            if final_seq < target {
                assigned.case = Case::Four;
                assigned.point = Point::End;
            } else {
                let wi = *first_write.get(&(call.obj, target)).ok_or(ClassifyError::NoWriter {
                    call: ci,
                    pid: call.pid,
                    obj: call.obj,
                    target,
                    final_seq,
                })?;
                let w = &steps[wi];
                let writer_call = &calls[owner[wi]];
                let winner_read = writer_call
                    .steps
                    .iter()
                    .rev()
                    .map(|&si| &steps[si])
                    .find(|st| st.step < w.step && st.reg == Reg::P(call.obj) && st.op.is_read())
                    .ok_or(ClassifyError::NoWinnerRead { step: w.step })?;
                let winner = layout.unpack(winner_read.observed).pid;
                assigned.writer = Some(w.step);
                if winner == call.pid.get() as u64 {
                    assigned.case = Case::ThreeA;
                    assigned.point = Point::At(w.step);
                } else {
                    assigned.case = Case::ThreeB;
                    assigned.point = Point::After(w.step);
                }
            }
        }
        points.push(assigned);
    }
    Ok(DefinitionOneAssignment { calls, points })
}

/// Obligation a point assignment failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// The point lies inside the call.
    Span,
    /// Replaying calls in point order reproduces their returns.
    Replay,
    /// The case fixes the return value.
    ReturnTable,
    /// Point order extends real-time order.
    RealTime,
    /// Each version of `V` is installed on behalf of exactly one call.
    Uniqueness,
    /// The winner's result register says true before `V` moves on.
    WinnerInformed,
    /// No point could be assigned at all.
    Classify,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub check: Check,
    pub call: Option<usize>,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.call {
            Some(c) => write!(f, "{:?} (call {c}): {}", self.check, self.message),
            None => write!(f, "{:?}: {}", self.check, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Validation {
    pub failures: Vec<Failure>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }

    fn fail(&mut self, check: Check, call: Option<usize>, message: String) {
        self.failures.push(Failure { check, call, message });
    }
}

/// Checks the proof obligations of an assignment against its trace.
pub fn validate_assignment(trace: &ExecutionTrace, assignment: &DefinitionOneAssignment) -> Validation {
    let mut out = Validation::default();
    let calls = &assignment.calls;
    let points = &assignment.points;

    // Span, and the return-value table.
    for (i, (call, p)) in calls.iter().zip(points).enumerate() {
        let inside = match (p.point, call.res_step) {
            (Point::End, None) => true,
            (Point::End, Some(_)) => false,
            (Point::At(s), end) => s >= call.inv_step && end.is_none_or(|e| s <= e),
            (Point::After(s), end) => s >= call.inv_step && end.is_none_or(|e| s < e),
        };
        if !inside {
            out.fail(
                Check::Span,
                Some(i),
                format!("pid {} {} case {} placed {} outside its span", p.pid, p.op, p.case, p.point),
            );
        }
        if let (Some(want), Some(Ret::Bool(got))) = (p.case.expected_ret(), call.ret) {
            if want != got {
                out.fail(
                    Check::ReturnTable,
                    Some(i),
                    format!("pid {} {} is case {} but returned {got}", p.pid, p.op, p.case),
                );
            }
        }
    }

    // Replay per object in point order; case-4 calls take no effect.
    let order = assignment.order();
    let mut state: Vec<u64> = trace.meta.initial.clone();
    for &i in &order {
        let p = &points[i];
        if p.case == Case::Four {
            continue;
        }
        let Some(cell) = state.get_mut(p.obj) else { continue };
        let (next, ret) = spec_apply(*cell, p.op);
        *cell = next;
        if let Some(actual) = calls[i].ret {
            if actual != ret {
                out.fail(
                    Check::Replay,
                    Some(i),
                    format!("pid {} {} returned {actual}, replay gives {ret}", p.pid, p.op),
                );
            }
        }
    }

    // Real-time order.
    let mut rank = vec![0usize; order.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    for (a, ca) in calls.iter().enumerate() {
        let Some(end) = ca.res_step else { continue };
        for (b, cb) in calls.iter().enumerate() {
            if end < cb.inv_step && rank[a] > rank[b] {
                out.fail(
                    Check::RealTime,
                    Some(b),
                    format!("call {b} is ordered before call {a}, which returned before it began"),
                );
            }
        }
    }

    // One 3a call per installed version.
    for obj in 0..trace.meta.objects {
        let final_seq = trace.final_state.v[obj].hi;
        let mut winners: HashMap<u64, usize> = HashMap::new();
        for p in points.iter().filter(|p| p.obj == obj && p.case == Case::ThreeA) {
            *winners.entry(p.seq.unwrap_or(0) + 2).or_default() += 1;
        }
        for v in (2..=final_seq).step_by(2) {
            let n = winners.get(&v).copied().unwrap_or(0);
            if n != 1 {
                out.fail(
                    Check::Uniqueness,
                    None,
                    format!("V[{obj}].seq = {v} has {n} case-3a calls"),
                );
            }
        }
    }

    // At a 3a point the winner's R entry already holds (c, true).
    let steps = &trace.register_steps;
    for (i, (call, p)) in calls.iter().zip(points).enumerate() {
        if p.case != Case::ThreeA {
            continue;
        }
        let Point::At(at) = p.point else { continue };
        let c = call.steps.iter().map(|&si| &steps[si]).find_map(|st| match (st.reg, st.op) {
            (Reg::A(q), Primitive::Write(w)) if q == call.pid => Some(w.hi),
            _ => None,
        });
        let Some(c) = c else {
            out.fail(Check::WinnerInformed, Some(i), format!("winner pid {} never announced", p.pid));
            continue;
        };
        let r = steps
            .iter()
            .take_while(|st| st.step < at)
            .filter(|st| st.reg == Reg::R(call.pid))
            .last()
            .map_or(Word::ZERO, |st| st.observed);
        if r != Word::new(c, 1) {
            out.fail(
                Check::WinnerInformed,
                Some(i),
                format!("R[{}] = {r} at step {at}, expected {}", p.pid, Word::new(c, 1)),
            );
        }
    }
    out
}

/// White-box verdict for one trace: classification, then validation.
/// A classification error is reported as a failed validation.
pub fn white_box(trace: &ExecutionTrace) -> (Option<DefinitionOneAssignment>, Validation) {
    match linearize_by_definition(trace) {
        Ok(a) => {
            let v = validate_assignment(trace, &a);
            (Some(a), v)
        }
        Err(e) => {
            let mut v = Validation::default();
            v.fail(Check::Classify, None, e.to_string());
            (None, v)
        }
    }
}
