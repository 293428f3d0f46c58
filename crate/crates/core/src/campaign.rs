//! Verification campaigns: generate programs and schedules, run each
//! schedule on the machine, and put every trace through both checkers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::caslib::{CallOp, CasConfig, Mutation, Path, Reg, Ret};
use crate::lincheck::{
    check_linearizable, white_box, CaseHistogram, History, LinearizationVerdict, Validation, DEFAULT_BUDGET,
};
use crate::machine::{
    enumerate_schedules, random_schedules, run_schedule, standard_hooks, ExecutionTrace, Hook, MachineConfig,
    MachineError, ProcessProgram, ProgramOp, Schedule, Truncation,
};
use crate::registers::Width;

/// Refuse exhaustive runs with more schedules than this unless told otherwise.
pub const DEFAULT_CEILING: usize = 1_000_000;

const BATCH: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Every process runs `cas(x0, b)` with its own `b`.
    #[default]
    Contend,
    /// Random reads and cas calls over the value domain.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Every interleaving; refused if there are more than `ceiling`.
    Exhaustive { ceiling: usize },
    /// `count` seeded random schedules, the last `truncated` of which are cut
    /// at a uniformly random point.
    Random { count: usize, seed: u64, truncated: usize },
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub procs: usize,
    pub ops_per_proc: usize,
    /// Value domain; the first entry is the initial value of every object.
    pub values: Vec<u64>,
    pub objects: usize,
    pub mode: Mode,
    pub shape: Shape,
    /// Step cap: longer schedules are cut here, leaving calls pending.
    pub truncate: Option<usize>,
    pub hooks: Vec<Hook>,
    pub mutation: Option<Mutation>,
    pub width: Width,
    pub budget: u64,
    /// Seed for mixed programs in exhaustive mode.
    pub program_seed: u64,
    /// Keep every trace in its [`ScheduleResult`], not only failing ones.
    pub keep_traces: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            procs: 2,
            ops_per_proc: 1,
            values: vec![0, 1, 2],
            objects: 1,
            mode: Mode::Exhaustive {
                ceiling: DEFAULT_CEILING,
            },
            shape: Shape::Contend,
            truncate: None,
            hooks: standard_hooks(),
            mutation: None,
            width: Width::default(),
            budget: DEFAULT_BUDGET,
            program_seed: 0,
            keep_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CampaignError {
    #[error("invalid campaign: {0}")]
    Config(String),
    #[error("more than {ceiling} schedules; raise the ceiling or shrink the configuration")]
    Ceiling { ceiling: usize },
    #[error(transparent)]
    Machine(#[from] MachineError),
}

impl CampaignConfig {
    fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: &str| Err(CampaignError::Config(m.into()));
        if self.procs == 0 {
            return bad("at least one process is needed");
        }
        if self.objects == 0 {
            return bad("at least one object is needed");
        }
        if self.values.is_empty() {
            return bad("the value domain is empty");
        }
        if self.shape == Shape::Contend && self.values.len() < 2 {
            return bad("the contend shape needs a second value to swap in");
        }
        Ok(())
    }

    pub fn machine_config(&self) -> MachineConfig {
        MachineConfig::multi(vec![self.values[0]; self.objects]).with_cas(CasConfig {
            width: self.width,
            mutation: self.mutation,
        })
    }

    /// The `b` that process `pid` swaps in under the contend shape. Distinct
    /// per process as long as the domain has more than `procs` values.
    pub fn contend_value(&self, pid: usize) -> u64 {
        let others = &self.values[1..];
        others[(pid - 1) % others.len()]
    }

    /// Programs for the contend shape, or mixed programs drawn from `rng`.
    pub fn programs(&self, rng: &mut impl Rng) -> Vec<ProcessProgram> {
        (1..=self.procs)
            .map(|pid| {
                let ops = (0..self.ops_per_proc)
                    .map(|j| match self.shape {
                        Shape::Contend => {
                            ProgramOp::cas(self.values[0], self.contend_value(pid)).on((pid - 1 + j) % self.objects)
                        }
                        Shape::Mixed => {
                            let obj = rng.random_range(0..self.objects);
                            let pick = |rng: &mut _| self.values[Rng::random_range(rng, 0..self.values.len())];
                            if rng.random_ratio(1, 3) {
                                ProgramOp::read().on(obj)
                            } else {
                                let a = pick(rng);
                                ProgramOp::cas(a, pick(rng)).on(obj)
                            }
                        }
                    })
                    .collect();
                ProcessProgram::new(pid, ops)
            })
            .collect()
    }

    fn winner_check_applies(&self) -> bool {
        self.shape == Shape::Contend && self.ops_per_proc == 1 && self.objects == 1
    }
}

/// Calls and register operations observed on one path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PathStat {
    pub calls: u64,
    pub min: Option<u32>,
    pub max: Option<u32>,
}

impl PathStat {
    fn add(&mut self, steps: u32) {
        self.calls += 1;
        self.min = Some(self.min.map_or(steps, |m| m.min(steps)));
        self.max = Some(self.max.map_or(steps, |m| m.max(steps)));
    }

    fn merge(&mut self, o: &PathStat) {
        self.calls += o.calls;
        self.min = match (self.min, o.min) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.max = self.max.max(o.max);
    }
}

/// Register operations per finished call, by path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepStats {
    pub read: PathStat,
    pub guard_fail: PathStat,
    pub no_op: PathStat,
    pub contended: PathStat,
}

impl StepStats {
    fn get_mut(&mut self, path: Path) -> &mut PathStat {
        match path {
            Path::Read => &mut self.read,
            Path::GuardFail => &mut self.guard_fail,
            Path::NoOp => &mut self.no_op,
            Path::Contended => &mut self.contended,
        }
    }

    fn merge(&mut self, o: &StepStats) {
        self.read.merge(&o.read);
        self.guard_fail.merge(&o.guard_fail);
        self.no_op.merge(&o.no_op);
        self.contended.merge(&o.contended);
    }

    /// Largest number of register operations any finished call issued.
    pub fn max_per_call(&self) -> u32 {
        [self.read, self.guard_fail, self.no_op, self.contended]
            .iter()
            .filter_map(|s| s.max)
            .max()
            .unwrap_or(0)
    }

    /// Register steps per finished call in `trace`, by the path its first read
    /// of `V` sent it down.
    pub fn of_trace(trace: &ExecutionTrace) -> StepStats {
        let mut stats = StepStats::default();
        for call in trace.calls() {
            if !call.is_finished() {
                continue;
            }
            let first = call.steps.first().map(|&i| trace.register_steps[i].observed);
            let path = match (call.op, first) {
                (CallOp::Read, _) => Path::Read,
                (CallOp::Cas { expected, .. }, Some(v)) if v.lo != expected => Path::GuardFail,
                (CallOp::Cas { expected, new }, _) if expected == new => Path::NoOp,
                _ => Path::Contended,
            };
            stats.get_mut(path).add(call.steps.len() as u32);
        }
        stats
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlackBox {
    Accepted,
    Rejected { obj: usize, counterexample: History },
    BudgetExceeded { explored: u64 },
    /// The machine failed before a history existed.
    NotRun,
}

/// Everything learned from one schedule.
#[derive(Debug, Clone)]
pub struct ScheduleResult {
    pub index: usize,
    pub schedule: Schedule,
    /// Kept for failures, and for every schedule with `keep_traces`.
    pub trace: Option<ExecutionTrace>,
    pub black_box: BlackBox,
    pub white_box: Validation,
    /// Invariant hook that fired, with its message.
    pub violation: Option<(String, String)>,
    /// Any other machine error (a register overflow, say).
    pub error: Option<String>,
    pub cases: CaseHistogram,
    pub steps: StepStats,
    pub register_steps: u64,
    pub pending: bool,
    /// Exactly one winner and the final value is its `b` (contend shape,
    /// single call per process, complete schedules only).
    pub winner_ok: Option<bool>,
}

impl ScheduleResult {
    pub fn accepted(&self) -> bool {
        self.violation.is_none()
            && self.error.is_none()
            && self.black_box == BlackBox::Accepted
            && self.white_box.is_ok()
            && self.winner_ok != Some(false)
    }

    pub fn budget_exceeded(&self) -> bool {
        matches!(self.black_box, BlackBox::BudgetExceeded { .. })
    }

    pub fn summary(&self) -> String {
        let mut why = Vec::new();
        if let Some((hook, msg)) = &self.violation {
            why.push(format!("invariant {hook}: {msg}"));
        }
        if let Some(e) = &self.error {
            why.push(e.clone());
        }
        match &self.black_box {
            BlackBox::Rejected { obj, counterexample } => {
                why.push(format!("black-box rejected object {obj} ({} events)", counterexample.len()))
            }
            BlackBox::BudgetExceeded { explored } => why.push(format!("budget exceeded after {explored} nodes")),
            _ => {}
        }
        for f in &self.white_box.failures {
            why.push(format!("white-box {f}"));
        }
        if self.winner_ok == Some(false) {
            why.push("winner check failed".into());
        }
        why.join("; ")
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CampaignReport {
    pub schedules: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub black_box_rejected: u64,
    pub white_box_rejected: u64,
    pub budget_exceeded: u64,
    pub violations: u64,
    pub errors: u64,
    /// Schedules where exactly one engine accepted.
    pub disagreements: u64,
    pub pending_histories: u64,
    pub register_steps: u64,
    pub cases: CaseHistogram,
    pub steps: StepStats,
    pub winner_checked: u64,
    pub winner_failures: u64,
    /// Indices of failing schedules, in order.
    pub failing: Vec<usize>,
}

impl CampaignReport {
    pub fn passed(&self) -> bool {
        self.rejected == 0 && self.budget_exceeded == 0
    }

    fn add(&mut self, r: &ScheduleResult) {
        self.schedules += 1;
        let bb_ok = r.black_box == BlackBox::Accepted;
        if r.accepted() {
            self.accepted += 1;
        } else if !r.budget_exceeded() || r.violation.is_some() || r.error.is_some() || !r.white_box.is_ok() {
            self.rejected += 1;
            self.failing.push(r.index);
        }
        if matches!(r.black_box, BlackBox::Rejected { .. }) {
            self.black_box_rejected += 1;
        }
        if r.budget_exceeded() {
            self.budget_exceeded += 1;
        }
        if r.black_box != BlackBox::NotRun {
            if !r.white_box.is_ok() {
                self.white_box_rejected += 1;
            }
            if !r.budget_exceeded() && bb_ok != r.white_box.is_ok() {
                self.disagreements += 1;
            }
        }
        if r.violation.is_some() {
            self.violations += 1;
        }
        if r.error.is_some() {
            self.errors += 1;
        }
        if r.pending {
            self.pending_histories += 1;
        }
        self.register_steps += r.register_steps;
        self.cases.merge(&r.cases);
        self.steps.merge(&r.steps);
        if let Some(ok) = r.winner_ok {
            self.winner_checked += 1;
            if !ok {
                self.winner_failures += 1;
            }
        }
    }
}

/// Runs one schedule and checks its trace.
pub fn check_schedule(
    config: &CampaignConfig,
    programs: &[ProcessProgram],
    index: usize,
    schedule: Schedule,
) -> ScheduleResult {
    let machine = config.machine_config();
    let mut result = ScheduleResult {
        index,
        schedule,
        trace: None,
        black_box: BlackBox::NotRun,
        white_box: Validation::default(),
        violation: None,
        error: None,
        cases: CaseHistogram::default(),
        steps: StepStats::default(),
        register_steps: 0,
        pending: false,
        winner_ok: None,
    };
    let trace = match run_schedule(&machine, programs, &result.schedule, &config.hooks) {
        Ok(t) => t,
        Err(MachineError::Invariant(v)) => {
            result.violation = Some((v.hook.to_string(), format!("step {}: {}", v.step, v.message)));
            result.register_steps = v.trace.register_steps.len() as u64;
            result.trace = Some(v.trace);
            return result;
        }
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    result.register_steps = trace.register_steps.len() as u64;
    result.pending = !trace.is_complete();
    result.steps = StepStats::of_trace(&trace);

    result.black_box = match History::from_trace(&trace) {
        Err(e) => {
            result.error = Some(format!("malformed history: {e}"));
            BlackBox::NotRun
        }
        Ok(h) => {
            let mut verdict = BlackBox::Accepted;
            for obj in h.objects() {
                match check_linearizable(&h.for_object(obj), trace.meta.initial[obj], config.budget) {
                    LinearizationVerdict::Accepted { .. } => {}
                    LinearizationVerdict::Rejected { counterexample } => {
                        verdict = BlackBox::Rejected { obj, counterexample };
                        break;
                    }
                    LinearizationVerdict::BudgetExceeded { explored } => {
                        verdict = BlackBox::BudgetExceeded { explored };
                    }
                }
            }
            verdict
        }
    };

    let (assignment, validation) = white_box(&trace);
    if let Some(a) = &assignment {
        result.cases = a.histogram();
    }
    result.white_box = validation;

    if config.winner_check_applies() && trace.is_complete() {
        let wins: Vec<_> = trace
            .events
            .iter()
            .filter(|e| e.ret == Some(Ret::Bool(true)))
            .collect();
        let final_value = trace.final_state.get(Reg::V(0)).lo;
        result.winner_ok = Some(match wins.as_slice() {
            [w] => matches!(w.op, CallOp::Cas { new, .. } if new == final_value),
            _ => false,
        });
    }

    if config.keep_traces || !result.accepted() {
        result.trace = Some(trace);
    }
    result
}

fn schedule_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Runs a whole campaign on the rayon pool. `sink` sees every result, in
/// schedule order.
pub fn run_campaign(
    config: &CampaignConfig,
    mut sink: impl FnMut(&ScheduleResult),
) -> Result<CampaignReport, CampaignError> {
    config.validate()?;
    let machine = config.machine_config();
    let mut report = CampaignReport::default();
    let mut absorb = |batch: Vec<ScheduleResult>, report: &mut CampaignReport| {
        for r in &batch {
            report.add(r);
            sink(r);
        }
    };
    match config.mode {
        Mode::Exhaustive { ceiling } => {
            let programs = config.programs(&mut ChaCha8Rng::seed_from_u64(config.program_seed));
            let max_steps = config.truncate.unwrap_or(usize::MAX);
            let mut it = enumerate_schedules(&machine, &programs, max_steps)?.with_cap(ceiling);
            let schedules: Vec<Schedule> = it.by_ref().collect();
            if it.partial() {
                return Err(CampaignError::Ceiling { ceiling });
            }
            for (b, chunk) in schedules.chunks(BATCH).enumerate() {
                let batch = chunk
                    .par_iter()
                    .enumerate()
                    .map(|(k, s)| check_schedule(config, &programs, b * BATCH + k, s.clone()))
                    .collect();
                absorb(batch, &mut report);
            }
        }
        Mode::Random { count, seed, truncated } => {
            let cut_from = count.saturating_sub(truncated);
            let fixed = config.programs(&mut ChaCha8Rng::seed_from_u64(seed));
            for start in (0..count).step_by(BATCH) {
                let end = (start + BATCH).min(count);
                let batch: Result<Vec<ScheduleResult>, MachineError> = (start..end)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = schedule_rng(seed, i);
                        let programs = match config.shape {
                            Shape::Mixed => config.programs(&mut rng),
                            Shape::Contend => fixed.clone(),
                        };
                        let truncation = if i >= cut_from {
                            Truncation::Uniform
                        } else {
                            config.truncate.map_or(Truncation::None, Truncation::At)
                        };
                        let schedule = random_schedules(&machine, &programs, 1, rng.random(), truncation)?
                            .next()
                            .expect("one schedule requested");
                        Ok(check_schedule(config, &programs, i, schedule))
                    })
                    .collect();
                absorb(batch?, &mut report);
            }
        }
    }
    Ok(report)
}

/// Program set a random campaign used for schedule `index`, for replay.
pub fn programs_for(config: &CampaignConfig, index: usize) -> Vec<ProcessProgram> {
    match (config.mode, config.shape) {
        (Mode::Random { seed, .. }, Shape::Mixed) => config.programs(&mut schedule_rng(seed, index)),
        (Mode::Random { seed, .. }, Shape::Contend) => config.programs(&mut ChaCha8Rng::seed_from_u64(seed)),
        (Mode::Exhaustive { .. }, _) => config.programs(&mut ChaCha8Rng::seed_from_u64(config.program_seed)),
    }
}
