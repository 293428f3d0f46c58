//! Throughput of the register-based compare-and-swap against the host's
//! native one. Numbers only; nothing here is a pass/fail gate.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::caslib::{CallOp, CasError, LiveCas, Pid, Ret};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Contention {
    /// Each thread works on its own object.
    Low,
    /// All threads share one object.
    High,
}

impl Contention {
    pub fn as_str(self) -> &'static str {
        match self {
            Contention::Low => "low",
            Contention::High => "high",
        }
    }
}

impl fmt::Display for Contention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub threads: usize,
    /// Read-then-cas rounds per thread.
    pub ops: u64,
    pub contention: Contention,
}

/// Register operations issued per high-level call, live build only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RegisterOps {
    pub contended_calls: u64,
    pub contended_max: u32,
    pub contended_mean: f64,
    pub guard_fail_calls: u64,
    pub guard_fail_max: u32,
    pub read_max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub implementation: &'static str,
    pub contention: Contention,
    pub threads: usize,
    pub cas_calls: u64,
    pub successes: u64,
    pub seconds: f64,
    pub cas_per_sec: f64,
    pub register_ops: Option<RegisterOps>,
}

#[derive(Default)]
struct Tally {
    calls: u64,
    wins: u64,
    contended: u64,
    contended_steps: u64,
    contended_max: u32,
    guard_fail: u64,
    guard_fail_max: u32,
    read_max: u32,
}

impl Tally {
    fn record(&mut self, steps: u32) {
        if steps == 1 {
            self.guard_fail += 1;
            self.guard_fail_max = self.guard_fail_max.max(steps);
        } else {
            self.contended += 1;
            self.contended_steps += steps as u64;
            self.contended_max = self.contended_max.max(steps);
        }
    }

    fn merge(&mut self, o: Tally) {
        self.calls += o.calls;
        self.wins += o.wins;
        self.contended += o.contended;
        self.contended_steps += o.contended_steps;
        self.contended_max = self.contended_max.max(o.contended_max);
        self.guard_fail += o.guard_fail;
        self.guard_fail_max = self.guard_fail_max.max(o.guard_fail_max);
        self.read_max = self.read_max.max(o.read_max);
    }
}

fn row(implementation: &'static str, config: &BenchConfig, t: &Tally, elapsed: Duration, live: bool) -> BenchRow {
    let seconds = elapsed.as_secs_f64();
    BenchRow {
        implementation,
        contention: config.contention,
        threads: config.threads,
        cas_calls: t.calls,
        successes: t.wins,
        seconds,
        cas_per_sec: if seconds > 0.0 { t.calls as f64 / seconds } else { 0.0 },
        register_ops: live.then(|| RegisterOps {
            contended_calls: t.contended,
            contended_max: t.contended_max,
            contended_mean: if t.contended > 0 {
                t.contended_steps as f64 / t.contended as f64
            } else {
                0.0
            },
            guard_fail_calls: t.guard_fail,
            guard_fail_max: t.guard_fail_max,
            read_max: t.read_max,
        }),
    }
}

fn native(config: &BenchConfig) -> BenchRow {
    let cells: Vec<AtomicU64> = match config.contention {
        Contention::Low => (0..config.threads).map(|_| AtomicU64::new(0)).collect(),
        Contention::High => vec![AtomicU64::new(0)],
    };
    let start = Instant::now();
    let tally = thread::scope(|s| {
        let workers: Vec<_> = (0..config.threads)
            .map(|t| {
                let cell = &cells[t % cells.len()];
                s.spawn(move || {
                    let mut tally = Tally::default();
                    for _ in 0..config.ops {
                        let v = cell.load(Ordering::SeqCst);
                        let won = cell.compare_exchange(v, v + 1, Ordering::SeqCst, Ordering::SeqCst).is_ok();
                        tally.calls += 1;
                        tally.wins += won as u64;
                    }
                    tally
                })
            })
            .collect();
        let mut total = Tally::default();
        for w in workers {
            total.merge(w.join().expect("bench worker panicked"));
        }
        total
    });
    row("native", config, &tally, start.elapsed(), false)
}

fn live(config: &BenchConfig) -> Result<BenchRow, CasError> {
    let objects: Vec<LiveCas> = match config.contention {
        Contention::Low => (0..config.threads)
            .map(|_| LiveCas::new(config.threads, 0))
            .collect::<Result<_, _>>()?,
        Contention::High => vec![LiveCas::new(config.threads, 0)?],
    };
    let start = Instant::now();
    let result: Result<Tally, CasError> = thread::scope(|s| {
        let workers: Vec<_> = (0..config.threads)
            .map(|t| {
                let obj = &objects[t % objects.len()];
                s.spawn(move || -> Result<Tally, CasError> {
                    let mut h = obj.handle(Pid::new(t + 1))?;
                    let mut tally = Tally::default();
                    for _ in 0..config.ops {
                        let (v, read_steps) = match h.run(CallOp::Read)? {
                            (Ret::Value(v), n) => (v, n),
                            _ => unreachable!("read returns a value"),
                        };
                        tally.read_max = tally.read_max.max(read_steps);
                        let (ret, steps) = h.run(CallOp::Cas { expected: v, new: v + 1 })?;
                        tally.calls += 1;
                        tally.record(steps);
                        tally.wins += (ret == Ret::Bool(true)) as u64;
                    }
                    // Untimed: a cas that fails its guard unless another
                    // thread moves the value in between.
                    let v = obj.value();
                    let (_, steps) = h.run(CallOp::Cas { expected: v + 1, new: v })?;
                    tally.record(steps);
                    Ok(tally)
                })
            })
            .collect();
        let mut total = Tally::default();
        for w in workers {
            total.merge(w.join().expect("bench worker panicked")?);
        }
        Ok(total)
    });
    let elapsed = start.elapsed();
    Ok(row("simulated", config, &result?, elapsed, true))
}

/// Native and simulated rows for one configuration.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRow>, CasError> {
    if config.threads == 0 {
        return Err(CasError::NoProcesses);
    }
    Ok(vec![native(config), live(config)?])
}
