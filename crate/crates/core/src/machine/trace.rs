use serde::{Deserialize, Serialize};

use crate::caslib::{CallOp, Mutation, Pid, Reg, Ret, Snapshot};
use crate::registers::{Primitive, Word};

use super::Schedule;

/// One register operation in an execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegisterStep {
    pub step: u64,
    pub pid: Pid,
    pub reg: Reg,
    pub op: Primitive,
    /// Value read, or the register state after a modifying operation.
    pub observed: Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Inv,
    Res,
}

/// Invocation or response of a high-level call.
///
/// `step` is the index of the call's first register operation for an
/// invocation and of its last one for a response, so a call that finishes in
/// a single operation has both events at the same step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub kind: EventKind,
    pub pid: Pid,
    pub obj: usize,
    pub op: CallOp,
    pub ret: Option<Ret>,
    pub step: u64,
}

/// Parameters an execution was produced with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub procs: usize,
    pub objects: usize,
    pub width: u32,
    pub initial: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<Mutation>,
}

/// Everything that happened while running one schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub meta: TraceMeta,
    pub schedule: Schedule,
    pub register_steps: Vec<RegisterStep>,
    pub events: Vec<Event>,
    pub final_state: Snapshot,
    /// Processes whose current call had not returned when the schedule ended.
    pub pending: Vec<Pid>,
}

/// A call reassembled from a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TracedCall {
    pub pid: Pid,
    pub obj: usize,
    pub op: CallOp,
    pub inv_step: u64,
    pub res_step: Option<u64>,
    pub ret: Option<Ret>,
    /// Indices into `register_steps`, in execution order.
    pub steps: Vec<usize>,
}

impl TracedCall {
    pub fn is_finished(&self) -> bool {
        self.res_step.is_some()
    }
}

impl ExecutionTrace {
    /// Pairs invocations with responses and attributes register steps to the
    /// call their process was running. Calls are ordered by invocation.
    pub fn calls(&self) -> Vec<TracedCall> {
        let mut calls: Vec<TracedCall> = Vec::new();
        let mut open: Vec<Option<usize>> = vec![None; self.meta.procs + 1];
        for ev in &self.events {
            let slot = ev.pid.get();
            if slot >= open.len() {
                open.resize(slot + 1, None);
            }
            match ev.kind {
                EventKind::Inv => {
                    open[slot] = Some(calls.len());
                    calls.push(TracedCall {
                        pid: ev.pid,
                        obj: ev.obj,
                        op: ev.op,
                        inv_step: ev.step,
                        res_step: None,
                        ret: None,
                        steps: Vec::new(),
                    });
                }
                EventKind::Res => {
                    if let Some(i) = open[slot].take() {
                        calls[i].res_step = Some(ev.step);
                        calls[i].ret = ev.ret;
                    }
                }
            }
        }
        let mut by_pid: Vec<Vec<usize>> = vec![Vec::new(); open.len()];
        for (i, call) in calls.iter().enumerate() {
            by_pid[call.pid.get()].push(i);
        }
        let mut cursor = vec![0usize; open.len()];
        for (idx, rs) in self.register_steps.iter().enumerate() {
            let slot = rs.pid.get();
            let Some(list) = by_pid.get(slot) else { continue };
            while let Some(&ci) = list.get(cursor[slot]) {
                let call = &calls[ci];
                if call.res_step.is_some_and(|end| rs.step > end) {
                    cursor[slot] += 1;
                } else {
                    break;
                }
            }
            if let Some(&ci) = list.get(cursor[slot]) {
                if rs.step >= calls[ci].inv_step {
                    calls[ci].steps.push(idx);
                }
            }
        }
        calls
    }

    pub fn is_complete(&self) -> bool {
        self.pending.is_empty()
    }
}
