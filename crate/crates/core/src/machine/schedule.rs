use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caslib::Pid;

use super::{Machine, MachineConfig, MachineError, ProcessProgram};

/// Sequence of process ids driving an execution.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule(Vec<Pid>);

impl Schedule {
    pub fn new(steps: Vec<Pid>) -> Self {
        Schedule(steps)
    }

    pub fn from_raw(steps: &[usize]) -> Self {
        Schedule(steps.iter().map(|&p| Pid::new(p)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pid> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Pid] {
        &self.0
    }

    pub fn truncated(&self, len: usize) -> Schedule {
        Schedule(self.0[..len.min(self.0.len())].to_vec())
    }
}

struct Frame {
    machine: Machine,
    candidates: Vec<Pid>,
    next: usize,
}

/// Every interleaving of the processes' register steps, depth first.
///
/// Only runnable processes are ever scheduled, so no two yielded schedules
/// produce the same execution and none contains entries for finished
/// processes. Branches that reach `max_steps` are yielded as they stand and
/// counted in [`ExhaustiveSchedules::truncated`]; a step that fails (for
/// example a register overflow) ends its branch, and the schedule is yielded
/// so that replaying it reproduces the failure.
pub struct ExhaustiveSchedules {
    stack: Vec<Frame>,
    prefix: Vec<Pid>,
    max_steps: usize,
    cap: Option<usize>,
    yielded: usize,
    truncated: usize,
    partial: bool,
}

impl ExhaustiveSchedules {
    /// Stop after `cap` schedules; [`ExhaustiveSchedules::partial`] reports
    /// whether any were left out.
    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn partial(&self) -> bool {
        self.partial
    }

    pub fn truncated(&self) -> usize {
        self.truncated
    }

    pub fn yielded(&self) -> usize {
        self.yielded
    }

    fn emit(&mut self) -> Option<Schedule> {
        if self.cap.is_some_and(|cap| self.yielded >= cap) {
            self.partial = true;
            self.stack.clear();
            return None;
        }
        self.yielded += 1;
        Some(Schedule(self.prefix.clone()))
    }
}

impl Iterator for ExhaustiveSchedules {
    type Item = Schedule;

    fn next(&mut self) -> Option<Schedule> {
        loop {
            let depth = self.prefix.len();
            let top = self.stack.last_mut()?;
            if top.next == usize::MAX {
                // Leaf already yielded.
                self.stack.pop();
                self.prefix.pop();
                continue;
            }
            if top.candidates.is_empty() {
                top.next = usize::MAX;
                return self.emit();
            }
            if top.next == 0 && depth >= self.max_steps {
                top.next = usize::MAX;
                self.truncated += 1;
                return self.emit();
            }
            if top.next < top.candidates.len() {
                let pid = top.candidates[top.next];
                top.next += 1;
                let mut child = top.machine.clone();
                let ok = child.step(pid).is_ok();
                self.prefix.push(pid);
                let candidates = if ok { child.runnable().collect() } else { Vec::new() };
                self.stack.push(Frame {
                    machine: child,
                    candidates,
                    next: 0,
                });
            } else {
                self.stack.pop();
                self.prefix.pop();
            }
        }
    }
}

/// All distinct interleavings of `programs`, each at most `max_steps` long.
pub fn enumerate_schedules(
    config: &MachineConfig,
    programs: &[ProcessProgram],
    max_steps: usize,
) -> Result<ExhaustiveSchedules, MachineError> {
    let machine = Machine::new(config, programs)?.without_recording();
    let candidates = machine.runnable().collect();
    Ok(ExhaustiveSchedules {
        stack: vec![Frame {
            machine,
            candidates,
            next: 0,
        }],
        prefix: Vec::new(),
        max_steps,
        cap: None,
        yielded: 0,
        truncated: 0,
        partial: false,
    })
}

/// How random schedules are cut short to leave calls pending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Truncation {
    /// Run until every program finishes.
    #[default]
    None,
    /// Stop after at most this many entries.
    At(usize),
    /// Cut each schedule at a uniformly chosen point before its end.
    Uniform,
}

/// Seeded random schedules: at each step the next process is drawn uniformly
/// from those that still have work.
pub struct RandomSchedules {
    root: Machine,
    rng: ChaCha8Rng,
    remaining: usize,
    truncation: Truncation,
}

impl Iterator for RandomSchedules {
    type Item = Schedule;

    fn next(&mut self) -> Option<Schedule> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let limit = match self.truncation {
            Truncation::At(k) => k,
            _ => usize::MAX,
        };
        let mut machine = self.root.clone();
        let mut steps = Vec::new();
        let mut runnable: Vec<Pid> = machine.runnable().collect();
        while !runnable.is_empty() && steps.len() < limit {
            let pid = runnable[self.rng.random_range(0..runnable.len())];
            steps.push(pid);
            if machine.step(pid).is_err() {
                break;
            }
            runnable.clear();
            runnable.extend(machine.runnable());
        }
        if self.truncation == Truncation::Uniform && !steps.is_empty() {
            let cut = self.rng.random_range(0..steps.len());
            steps.truncate(cut);
        }
        Some(Schedule(steps))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

pub fn random_schedules(
    config: &MachineConfig,
    programs: &[ProcessProgram],
    count: usize,
    seed: u64,
    truncation: Truncation,
) -> Result<RandomSchedules, MachineError> {
    Ok(RandomSchedules {
        root: Machine::new(config, programs)?.without_recording(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        remaining: count,
        truncation,
    })
}
