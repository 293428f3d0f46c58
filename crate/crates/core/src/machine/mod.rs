//! Deterministic shared-memory machine.
//!
//! A [`Schedule`] is a sequence of process ids; each entry lets that process
//! run exactly one register operation of its current call. Entries naming a
//! process whose program is exhausted are skipped. Running a schedule yields
//! an [`ExecutionTrace`] with every register step and the invocation and
//! response events of the high-level calls.

pub mod hooks;
mod record;
mod schedule;
mod trace;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caslib::{Call, CallOp, CasConfig, CasError, MultiCas, Pid, Snapshot};
use crate::registers::Word;

pub use hooks::{standard_hooks, FinishedCall, Hook, HookContext};
pub use record::{parse_records, EventLog, EventRecord, FinalRecord, HeaderRecord, ParseError, Record, StepRecord};
pub use schedule::{enumerate_schedules, random_schedules, ExhaustiveSchedules, RandomSchedules, Schedule, Truncation};
pub use trace::{Event, EventKind, ExecutionTrace, RegisterStep, TraceMeta, TracedCall};

/// One high-level operation in a process program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProgramOp {
    pub obj: usize,
    pub op: CallOp,
}

impl ProgramOp {
    pub fn cas(expected: u64, new: u64) -> Self {
        ProgramOp {
            obj: 0,
            op: CallOp::Cas { expected, new },
        }
    }

    pub fn read() -> Self {
        ProgramOp {
            obj: 0,
            op: CallOp::Read,
        }
    }

    pub fn on(self, obj: usize) -> Self {
        ProgramOp { obj, ..self }
    }
}

/// The calls one process makes, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessProgram {
    pub pid: Pid,
    pub ops: Vec<ProgramOp>,
}

impl ProcessProgram {
    pub fn new(pid: usize, ops: Vec<ProgramOp>) -> Self {
        ProcessProgram {
            pid: Pid::new(pid),
            ops,
        }
    }
}

/// Shared-object parameters for a machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineConfig {
    /// Initial value of each object; its length is the object count.
    pub initial: Vec<u64>,
    #[serde(skip)]
    pub cas: CasConfig,
}

impl MachineConfig {
    pub fn single(initial: u64) -> Self {
        MachineConfig {
            initial: vec![initial],
            cas: CasConfig::default(),
        }
    }

    pub fn multi(initial: Vec<u64>) -> Self {
        MachineConfig {
            initial,
            cas: CasConfig::default(),
        }
    }

    pub fn with_cas(self, cas: CasConfig) -> Self {
        MachineConfig { cas, ..self }
    }
}

/// An invariant that failed, with the execution up to and including the
/// offending step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub hook: &'static str,
    pub step: u64,
    pub pid: Pid,
    pub message: String,
    pub state: Snapshot,
    pub trace: ExecutionTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error("invariant `{}` violated at step {}: {}", .0.hook, .0.step, .0.message)]
    Invariant(Box<Violation>),
    #[error("process {pid} failed at step {step}: {source}")]
    Cas {
        step: u64,
        pid: Pid,
        #[source]
        source: CasError,
    },
    #[error(transparent)]
    Setup(#[from] CasError),
    #[error("programs must use pids 1..={procs} exactly once each")]
    BadPrograms { procs: usize },
    #[error("schedule entry {index} names pid {pid}, outside 1..={procs}")]
    BadSchedule { index: usize, pid: Pid, procs: usize },
    #[error("program of pid {pid} targets object {obj}, outside 0..{objects}")]
    BadObject { pid: Pid, obj: usize, objects: usize },
}

/// Result of offering one schedule entry to a process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Stepped,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Process {
    ops: Arc<[ProgramOp]>,
    next: usize,
    current: Option<Call>,
}

impl Process {
    fn runnable(&self) -> bool {
        self.current.is_some() || self.next < self.ops.len()
    }
}

/// The simulated machine: shared registers plus each process's progress.
#[derive(Debug, Clone)]
pub struct Machine {
    cas: MultiCas,
    procs: Vec<Process>,
    meta: TraceMeta,
    hooks: Vec<Hook>,
    record: bool,
    state: Snapshot,
    clock: u64,
    offered: usize,
    schedule: Vec<Pid>,
    register_steps: Vec<RegisterStep>,
    events: Vec<Event>,
}

impl Machine {
    pub fn new(config: &MachineConfig, programs: &[ProcessProgram]) -> Result<Self, MachineError> {
        let procs = programs.len();
        let mut sorted: Vec<&ProcessProgram> = programs.iter().collect();
        sorted.sort_by_key(|p| p.pid);
        if sorted.iter().enumerate().any(|(i, p)| p.pid.get() != i + 1) {
            return Err(MachineError::BadPrograms { procs });
        }
        let cas = MultiCas::with_config(procs, &config.initial, config.cas)?;
        for p in &sorted {
            if let Some(op) = p.ops.iter().find(|op| op.obj >= cas.objects()) {
                return Err(MachineError::BadObject {
                    pid: p.pid,
                    obj: op.obj,
                    objects: cas.objects(),
                });
            }
        }
        let meta = TraceMeta {
            procs,
            objects: cas.objects(),
            width: config.cas.width.bits(),
            initial: config.initial.clone(),
            mutation: config.cas.mutation,
        };
        Ok(Machine {
            state: cas.snapshot(),
            cas,
            procs: sorted
                .into_iter()
                .map(|p| Process {
                    ops: p.ops.clone().into(),
                    next: 0,
                    current: None,
                })
                .collect(),
            meta,
            hooks: Vec::new(),
            record: true,
            clock: 0,
            offered: 0,
            schedule: Vec::new(),
            register_steps: Vec::new(),
            events: Vec::new(),
        })
    }

    pub fn with_hooks(mut self, hooks: Vec<Hook>) -> Self {
        self.hooks = hooks;
        self
    }

    /// Turns off trace recording; used by schedule generators.
    pub fn without_recording(mut self) -> Self {
        self.record = false;
        self
    }

    pub fn procs(&self) -> usize {
        self.procs.len()
    }

    /// Register operations executed so far.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn state(&self) -> &Snapshot {
        &self.state
    }

    pub fn is_runnable(&self, pid: Pid) -> bool {
        self.procs.get(pid.get().wrapping_sub(1)).is_some_and(Process::runnable)
    }

    /// Pids that still have work, in increasing order.
    pub fn runnable(&self) -> impl Iterator<Item = Pid> + '_ {
        self.procs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.runnable())
            .map(|(i, _)| Pid::new(i + 1))
    }

    pub fn is_finished(&self) -> bool {
        self.procs.iter().all(|p| !p.runnable())
    }

    /// Lets `pid` take one register step.
    pub fn step(&mut self, pid: Pid) -> Result<StepOutcome, MachineError> {
        let index = self.offered;
        let procs = self.procs.len();
        let Some(proc) = self.procs.get_mut(pid.get().wrapping_sub(1)) else {
            return Err(MachineError::BadSchedule { index, pid, procs });
        };
        self.offered += 1;
        if self.record {
            self.schedule.push(pid);
        }
        let step = self.clock;
        if proc.current.is_none() {
            let Some(&next) = proc.ops.get(proc.next) else {
                return Ok(StepOutcome::Skipped);
            };
            let call = self
                .cas
                .begin(pid, next.obj, next.op)
                .map_err(|source| MachineError::Cas { step, pid, source })?;
            proc.current = Some(call);
            if self.record {
                self.events.push(Event {
                    kind: EventKind::Inv,
                    pid,
                    obj: next.obj,
                    op: next.op,
                    ret: None,
                    step,
                });
            }
        }
        let call = proc.current.as_mut().expect("call opened above");
        let executed = self
            .cas
            .step(call)
            .map_err(|source| MachineError::Cas { step, pid, source })?;
        self.clock += 1;

        let before = self.state.get(executed.reg);
        if !executed.op.is_read() {
            set(&mut self.state, executed.reg, executed.observed);
        }
        let after = self.state.get(executed.reg);
        if self.record {
            self.register_steps.push(RegisterStep {
                step,
                pid,
                reg: executed.reg,
                op: executed.op,
                observed: executed.observed,
            });
        }

        let finished = match call.result() {
            None => None,
            Some(ret) => {
                let done = FinishedCall {
                    pid,
                    obj: call.obj(),
                    op: call.op(),
                    path: call.path().expect("finished call has a path"),
                    first_read: call.first_read().unwrap_or(Word::ZERO),
                    steps: call.steps(),
                    ret,
                };
                proc.current = None;
                proc.next += 1;
                if self.record {
                    self.events.push(Event {
                        kind: EventKind::Res,
                        pid,
                        obj: done.obj,
                        op: done.op,
                        ret: Some(ret),
                        step,
                    });
                }
                Some(done)
            }
        };

        if !self.hooks.is_empty() {
            let cx = HookContext {
                step,
                pid,
                reg: executed.reg,
                before,
                after,
                state: &self.state,
                finished: finished.as_ref(),
            };
            for hook in &self.hooks {
                if let Err(message) = (hook.check)(&cx) {
                    let violation = Violation {
                        hook: hook.name,
                        step,
                        pid,
                        message,
                        state: self.state.clone(),
                        trace: self.trace(),
                    };
                    return Err(MachineError::Invariant(Box::new(violation)));
                }
            }
        }
        Ok(StepOutcome::Stepped)
    }

    /// The execution so far.
    pub fn trace(&self) -> ExecutionTrace {
        ExecutionTrace {
            meta: self.meta.clone(),
            schedule: Schedule::new(self.schedule.clone()),
            register_steps: self.register_steps.clone(),
            events: self.events.clone(),
            final_state: self.state.clone(),
            pending: self.pending(),
        }
    }

    pub fn into_trace(self) -> ExecutionTrace {
        let pending = self.pending();
        ExecutionTrace {
            meta: self.meta,
            schedule: Schedule::new(self.schedule),
            register_steps: self.register_steps,
            events: self.events,
            final_state: self.state,
            pending,
        }
    }

    fn pending(&self) -> Vec<Pid> {
        self.procs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.current.is_some())
            .map(|(i, _)| Pid::new(i + 1))
            .collect()
    }
}

fn set(state: &mut Snapshot, reg: crate::caslib::Reg, word: Word) {
    use crate::caslib::Reg;
    match reg {
        Reg::V(k) => state.v[k] = word,
        Reg::P(k) => state.p[k] = word,
        Reg::A(pid) => state.a[pid.index()] = word,
        Reg::R(pid) => state.r[pid.index()] = word,
    }
}

/// Runs `schedule` from the initial state, checking `hooks` after every step.
pub fn run_schedule(
    config: &MachineConfig,
    programs: &[ProcessProgram],
    schedule: &Schedule,
    hooks: &[Hook],
) -> Result<ExecutionTrace, MachineError> {
    let mut machine = Machine::new(config, programs)?.with_hooks(hooks.to_vec());
    for &pid in schedule.iter() {
        machine.step(pid)?;
    }
    Ok(machine.into_trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caslib::{Reg, Ret, MAX_CAS_STEPS};
    use crate::registers::PrimitiveKind;

    fn pids(raw: &[usize]) -> Schedule {
        Schedule::new(raw.iter().map(|&p| Pid::new(p)).collect())
    }

    #[test]
    fn solo_cas_trace_matches_hand_execution() {
        let programs = [ProcessProgram::new(1, vec![ProgramOp::cas(5, 7)])];
        let trace = run_schedule(&MachineConfig::single(5), &programs, &pids(&[1; 12]), &standard_hooks()).unwrap();
        assert_eq!(trace.final_state.v[0], Word::new(2, 7));
        assert_eq!(trace.register_steps.len(), MAX_CAS_STEPS as usize);
        assert!(trace.pending.is_empty());
        let regs: Vec<String> = trace.register_steps.iter().map(|s| format!("{}.{}", s.reg, s.op.kind())).collect();
        assert_eq!(
            regs,
            [
                "V.read", "A[1].write", "R[1].write", "P.max_write", "P.half_max", "P.read", "A[1].read",
                "R[1].max_write", "V.max_write", "R[1].read"
            ]
        );
        assert_eq!(trace.events.len(), 2);
        assert_eq!(trace.events[0].step, 0);
        assert_eq!(trace.events[1].step, 9);
        assert_eq!(trace.events[1].ret, Some(Ret::Bool(true)));
        // Entries after the program is exhausted are skipped.
        assert_eq!(trace.schedule.len(), 12);
    }

    #[test]
    fn empty_schedule_takes_no_steps() {
        let programs = [
            ProcessProgram::new(1, vec![ProgramOp::cas(0, 1)]),
            ProcessProgram::new(2, vec![ProgramOp::read()]),
        ];
        let trace = run_schedule(&MachineConfig::single(0), &programs, &Schedule::default(), &[]).unwrap();
        assert!(trace.register_steps.is_empty());
        assert!(trace.events.is_empty());
        assert!(trace.pending.is_empty());
        assert_eq!(trace.final_state.v[0], Word::ZERO);
    }

    #[test]
    fn truncated_schedule_leaves_call_pending() {
        let programs = [ProcessProgram::new(1, vec![ProgramOp::cas(0, 1), ProgramOp::read()])];
        let trace = run_schedule(&MachineConfig::single(0), &programs, &pids(&[1; 4]), &[]).unwrap();
        assert_eq!(trace.pending, vec![Pid::new(1)]);
        assert_eq!(trace.events.len(), 1);
        assert_eq!(trace.events[0].kind, EventKind::Inv);
        let calls = trace.calls();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].steps, vec![0, 1, 2, 3]);
        assert!(!calls[0].is_finished());
    }

    #[test]
    fn rejects_bad_setup() {
        let programs = [ProcessProgram::new(2, vec![])];
        assert!(matches!(
            Machine::new(&MachineConfig::single(0), &programs),
            Err(MachineError::BadPrograms { .. })
        ));
        let programs = [ProcessProgram::new(1, vec![ProgramOp::read().on(3)])];
        assert!(matches!(
            Machine::new(&MachineConfig::single(0), &programs),
            Err(MachineError::BadObject { obj: 3, .. })
        ));
        let programs = [ProcessProgram::new(1, vec![ProgramOp::read()])];
        assert!(matches!(
            run_schedule(&MachineConfig::single(0), &programs, &pids(&[2]), &[]),
            Err(MachineError::BadSchedule { index: 0, .. })
        ));
    }

    #[test]
    fn replay_is_deterministic() {
        let programs = [
            ProcessProgram::new(1, vec![ProgramOp::cas(0, 1), ProgramOp::read()]),
            ProcessProgram::new(2, vec![ProgramOp::cas(0, 2), ProgramOp::cas(1, 0)]),
        ];
        let schedule = pids(&[1, 2, 2, 1, 1, 2, 1, 2, 2, 2, 1, 1, 1, 1, 2, 2, 2, 2, 1, 1, 1, 2, 2, 2, 2, 2, 2, 1, 1]);
        let config = MachineConfig::single(0);
        let a = run_schedule(&config, &programs, &schedule, &standard_hooks()).unwrap();
        let b = run_schedule(&config, &programs, &schedule, &standard_hooks()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hook_violation_carries_step_and_trace() {
        fn no_writes_to_p(cx: &HookContext<'_>) -> Result<(), String> {
            match cx.reg {
                Reg::P(_) if cx.before != cx.after => Err("P changed".into()),
                _ => Ok(()),
            }
        }
        let hook = Hook {
            name: "no_writes_to_p",
            check: no_writes_to_p,
        };
        let programs = [ProcessProgram::new(1, vec![ProgramOp::cas(0, 1)])];
        let err = run_schedule(&MachineConfig::single(0), &programs, &pids(&[1; 10]), &[hook]).unwrap_err();
        let MachineError::Invariant(v) = err else { panic!("expected violation, got {err}") };
        assert_eq!(v.hook, "no_writes_to_p");
        assert_eq!(v.step, 3);
        assert_eq!(v.trace.register_steps.len(), 4);
        assert_eq!(v.trace.register_steps[3].op.kind(), PrimitiveKind::MaxWrite);
    }

    #[test]
    fn overflow_surfaces_with_step() {
        let config = MachineConfig::single(0).with_cas(CasConfig {
            width: crate::registers::Width::new(4).unwrap(),
            mutation: None,
        });
        // n = 1 leaves 3 counter bits: the eighth contended call overflows.
        let ops = (0..8u64).map(|i| ProgramOp::cas(i % 2, (i + 1) % 2)).collect();
        let programs = [ProcessProgram::new(1, ops)];
        let err = run_schedule(&config, &programs, &pids(&[1; 80]), &[]).unwrap_err();
        assert!(matches!(err, MachineError::Cas { step: 71, .. }), "{err}");
    }
}
