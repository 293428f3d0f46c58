use thiserror::Error;

use crate::caslib::{CallOp, Pid, Ret};
use crate::machine::{Event, EventKind, ExecutionTrace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("event {index}: pid {pid} invoked a call while another was pending")]
    Overlapping { index: usize, pid: Pid },
    #[error("event {index}: response from pid {pid} with no pending call")]
    Unmatched { index: usize, pid: Pid },
    #[error("event {index}: response of pid {pid} does not match its invocation")]
    Mismatched { index: usize, pid: Pid },
    #[error("event {index}: step {step} goes back in time")]
    StepOrder { index: usize, step: u64 },
}

/// A call as seen by the black-box checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HistoryCall {
    pub pid: Pid,
    pub obj: usize,
    pub op: CallOp,
    pub inv: u64,
    /// `None` for a pending call.
    pub res: Option<(u64, Ret)>,
}

impl HistoryCall {
    pub fn is_pending(&self) -> bool {
        self.res.is_none()
    }

    pub fn ret(&self) -> Option<Ret> {
        self.res.map(|(_, r)| r)
    }

    /// Real-time order: `self` responded before `other` was invoked.
    pub fn precedes(&self, other: &HistoryCall) -> bool {
        self.res.is_some_and(|(end, _)| end < other.inv)
    }
}

/// A well-formed sequence of invocation and response events.
///
/// Per process, invocations and responses alternate and only the last call
/// may lack a response. Steps never decrease; an invocation and the response
/// of the same call may share a step (calls that issue a single register
/// operation), any other pair of events sharing a step is rejected.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct History {
    events: Vec<Event>,
    calls: Vec<HistoryCall>,
}

impl History {
    pub fn new(events: Vec<Event>) -> Result<Self, HistoryError> {
        let mut calls: Vec<HistoryCall> = Vec::new();
        let mut open: Vec<Option<usize>> = Vec::new();
        let mut last: Option<&Event> = None;
        for (index, ev) in events.iter().enumerate() {
            if let Some(prev) = last {
                let same_call = prev.kind == EventKind::Inv && ev.kind == EventKind::Res && prev.pid == ev.pid;
                if ev.step < prev.step || (ev.step == prev.step && !same_call) {
                    return Err(HistoryError::StepOrder { index, step: ev.step });
                }
            }
            last = Some(ev);
            let slot = ev.pid.get();
            if slot >= open.len() {
                open.resize(slot + 1, None);
            }
            match ev.kind {
                EventKind::Inv => {
                    if open[slot].is_some() {
                        return Err(HistoryError::Overlapping { index, pid: ev.pid });
                    }
                    open[slot] = Some(calls.len());
                    calls.push(HistoryCall {
                        pid: ev.pid,
                        obj: ev.obj,
                        op: ev.op,
                        inv: ev.step,
                        res: None,
                    });
                }
                EventKind::Res => {
                    let Some(i) = open[slot].take() else {
                        return Err(HistoryError::Unmatched { index, pid: ev.pid });
                    };
                    let call = &mut calls[i];
                    let Some(ret) = ev.ret else {
                        return Err(HistoryError::Mismatched { index, pid: ev.pid });
                    };
                    if call.op != ev.op || call.obj != ev.obj {
                        return Err(HistoryError::Mismatched { index, pid: ev.pid });
                    }
                    call.res = Some((ev.step, ret));
                }
            }
        }
        Ok(History { events, calls })
    }

    pub fn from_trace(trace: &ExecutionTrace) -> Result<Self, HistoryError> {
        Self::new(trace.events.clone())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Calls in invocation order.
    pub fn calls(&self) -> &[HistoryCall] {
        &self.calls
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Object indices that appear in the history, ascending.
    pub fn objects(&self) -> Vec<usize> {
        let mut objs: Vec<usize> = self.calls.iter().map(|c| c.obj).collect();
        objs.sort_unstable();
        objs.dedup();
        objs
    }

    /// The sub-history of one object.
    pub fn for_object(&self, obj: usize) -> History {
        let events = self.events.iter().filter(|e| e.obj == obj).copied().collect();
        History::new(events).expect("sub-history of a well-formed history is well-formed")
    }

    /// The first `len` events; calls whose response is cut off become pending.
    pub fn prefix(&self, len: usize) -> History {
        History::new(self.events[..len.min(self.events.len())].to_vec())
            .expect("prefix of a well-formed history is well-formed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(kind: EventKind, pid: usize, op: CallOp, ret: Option<Ret>, step: u64) -> Event {
        Event {
            kind,
            pid: Pid::new(pid),
            obj: 0,
            op,
            ret,
            step,
        }
    }

    const CAS: CallOp = CallOp::Cas { expected: 0, new: 1 };

    #[test]
    fn pairs_calls_and_keeps_pending() {
        let h = History::new(vec![
            ev(EventKind::Inv, 1, CAS, None, 0),
            ev(EventKind::Inv, 2, CallOp::Read, None, 1),
            ev(EventKind::Res, 2, CallOp::Read, Some(Ret::Value(0)), 1),
            ev(EventKind::Res, 1, CAS, Some(Ret::Bool(true)), 5),
            ev(EventKind::Inv, 2, CAS, None, 6),
        ])
        .unwrap();
        let calls = h.calls();
        assert_eq!(calls.len(), 3);
        assert_eq!(calls[0].res, Some((5, Ret::Bool(true))));
        assert!(calls[2].is_pending());
        assert!(calls[1].precedes(&calls[2]));
        assert!(!calls[0].precedes(&calls[1]));
        assert_eq!(h.prefix(3).calls()[0].res, None);
    }

    #[test]
    fn rejects_malformed() {
        let two_invs = vec![ev(EventKind::Inv, 1, CAS, None, 0), ev(EventKind::Inv, 1, CAS, None, 1)];
        assert!(matches!(History::new(two_invs), Err(HistoryError::Overlapping { index: 1, .. })));
        let orphan = vec![ev(EventKind::Res, 1, CAS, Some(Ret::Bool(true)), 0)];
        assert!(matches!(History::new(orphan), Err(HistoryError::Unmatched { .. })));
        let wrong = vec![
            ev(EventKind::Inv, 1, CAS, None, 0),
            ev(EventKind::Res, 1, CallOp::Read, Some(Ret::Value(0)), 1),
        ];
        assert!(matches!(History::new(wrong), Err(HistoryError::Mismatched { .. })));
        let back = vec![ev(EventKind::Inv, 1, CAS, None, 3), ev(EventKind::Inv, 2, CAS, None, 2)];
        assert!(matches!(History::new(back), Err(HistoryError::StepOrder { index: 1, .. })));
        let shared = vec![ev(EventKind::Inv, 1, CAS, None, 3), ev(EventKind::Inv, 2, CAS, None, 3)];
        assert!(matches!(History::new(shared), Err(HistoryError::StepOrder { .. })));
    }
}
