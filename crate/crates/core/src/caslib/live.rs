use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use super::{Algorithm, CallOp, Call, CasConfig, CasError, Memory, Pid, Reg, Ret};
use crate::registers::{AtomicRegister, Primitive, Word};

/// Compare-and-swap object over atomic registers, for use from real threads.
///
/// Each thread binds one pid through [`LiveCas::handle`]; a pid can be bound
/// by at most one handle at a time.
#[derive(Debug)]
pub struct LiveCas {
    a: Vec<AtomicRegister>,
    r: Vec<AtomicRegister>,
    v: AtomicRegister,
    p: AtomicRegister,
    alg: Algorithm,
    claimed: Vec<AtomicBool>,
    // Private counters, parked here while no handle holds the pid.
    counters: Vec<AtomicU64>,
}

impl LiveCas {
    pub fn new(procs: usize, initial_value: u64) -> Result<Self, CasError> {
        Self::with_config(procs, initial_value, CasConfig::default())
    }

    pub fn with_config(procs: usize, initial_value: u64, config: CasConfig) -> Result<Self, CasError> {
        let alg = Algorithm::new(config.width, procs, config.mutation)?;
        let zeroed = || -> Result<Vec<AtomicRegister>, CasError> {
            (0..procs)
                .map(|_| AtomicRegister::new(config.width, Word::ZERO).map_err(CasError::from))
                .collect()
        };
        Ok(LiveCas {
            a: zeroed()?,
            r: zeroed()?,
            v: AtomicRegister::new(config.width, Word::new(0, initial_value))?,
            p: AtomicRegister::new(config.width, Word::ZERO)?,
            alg,
            claimed: (0..procs).map(|_| AtomicBool::new(false)).collect(),
            counters: (0..procs).map(|_| AtomicU64::new(0)).collect(),
        })
    }

    pub fn procs(&self) -> usize {
        self.alg.procs()
    }

    /// Current value, read directly from `V`.
    pub fn value(&self) -> u64 {
        self.v.read().lo
    }

    pub fn v(&self) -> Word {
        self.v.read()
    }

    /// Binds `pid` to the calling thread until the handle is dropped.
    pub fn handle(&self, pid: Pid) -> Result<LiveHandle<'_>, CasError> {
        pid.check(self.procs())?;
        if self.claimed[pid.index()].swap(true, Ordering::AcqRel) {
            return Err(CasError::PidTaken(pid));
        }
        Ok(LiveHandle {
            cas: self,
            pid,
            counter: self.counters[pid.index()].load(Ordering::Acquire),
        })
    }
}

struct LiveMemory<'a>(&'a LiveCas);

impl Memory for LiveMemory<'_> {
    fn execute(&mut self, reg: Reg, op: Primitive) -> Result<Word, CasError> {
        let cas = self.0;
        let register = match reg {
            Reg::V(0) => &cas.v,
            Reg::P(0) => &cas.p,
            Reg::V(obj) | Reg::P(obj) => return Err(CasError::ObjectOutOfRange { obj, objects: 1 }),
            Reg::A(pid) => &cas.a[pid.check(cas.procs())?.index()],
            Reg::R(pid) => &cas.r[pid.check(cas.procs())?.index()],
        };
        Ok(register.execute(op)?)
    }
}

/// A thread's view of a [`LiveCas`] as one fixed process.
#[derive(Debug)]
pub struct LiveHandle<'a> {
    cas: &'a LiveCas,
    pid: Pid,
    counter: u64,
}

impl LiveHandle<'_> {
    pub fn pid(&self) -> Pid {
        self.pid
    }

    /// Runs `op` and returns its result with the number of register
    /// operations it issued.
    pub fn run(&mut self, op: CallOp) -> Result<(Ret, u32), CasError> {
        let mut call = Call::new(self.pid, 0, op);
        let mut mem = LiveMemory(self.cas);
        loop {
            call.step(&self.cas.alg, &mut mem, &mut self.counter)?;
            if let Some(ret) = call.result() {
                return Ok((ret, call.steps()));
            }
        }
    }

    pub fn cas(&mut self, expected: u64, new: u64) -> Result<bool, CasError> {
        match self.run(CallOp::Cas { expected, new })?.0 {
            Ret::Bool(b) => Ok(b),
            Ret::Value(_) => unreachable!("cas returns a boolean"),
        }
    }

    pub fn read(&mut self) -> Result<u64, CasError> {
        match self.run(CallOp::Read)?.0 {
            Ret::Value(v) => Ok(v),
            Ret::Bool(_) => unreachable!("read returns a value"),
        }
    }
}

impl Drop for LiveHandle<'_> {
    fn drop(&mut self) {
        let slot = self.pid.index();
        self.cas.counters[slot].store(self.counter, Ordering::Release);
        self.cas.claimed[slot].store(false, Ordering::Release);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caslib::MAX_CAS_STEPS;
    use std::thread;

    #[test]
    fn solo_matches_simulated_steps() {
        let cas = LiveCas::new(1, 5).unwrap();
        let mut h = cas.handle(Pid::new(1)).unwrap();
        assert_eq!(h.run(CallOp::Cas { expected: 5, new: 7 }), Ok((Ret::Bool(true), MAX_CAS_STEPS)));
        assert_eq!(h.run(CallOp::Cas { expected: 5, new: 9 }), Ok((Ret::Bool(false), 1)));
        assert_eq!(h.run(CallOp::Cas { expected: 7, new: 7 }), Ok((Ret::Bool(true), 1)));
        assert_eq!(h.run(CallOp::Read), Ok((Ret::Value(7), 1)));
        assert_eq!(cas.v(), Word::new(2, 7));
    }

    #[test]
    fn pid_binding_is_exclusive() {
        let cas = LiveCas::new(2, 0).unwrap();
        let h = cas.handle(Pid::new(1)).unwrap();
        assert_eq!(cas.handle(Pid::new(1)).unwrap_err(), CasError::PidTaken(Pid::new(1)));
        assert!(cas.handle(Pid::new(3)).is_err());
        drop(h);
        assert!(cas.handle(Pid::new(1)).is_ok());
    }

    #[test]
    fn counter_survives_rebinding() {
        let cas = LiveCas::new(1, 0).unwrap();
        {
            let mut h = cas.handle(Pid::new(1)).unwrap();
            assert!(h.cas(0, 1).unwrap());
        }
        let mut h = cas.handle(Pid::new(1)).unwrap();
        assert!(h.cas(1, 2).unwrap());
        assert_eq!(cas.a[0].read(), Word::new(2, 2));
    }

    #[test]
    fn concurrent_increments_are_not_lost() {
        const THREADS: usize = 4;
        const PER_THREAD: u64 = 2_000;
        let cas = LiveCas::new(THREADS, 0).unwrap();
        let wins: u64 = thread::scope(|s| {
            let workers: Vec<_> = (1..=THREADS)
                .map(|pid| {
                    let cas = &cas;
                    s.spawn(move || {
                        let mut h = cas.handle(Pid::new(pid)).unwrap();
                        let mut wins = 0;
                        while wins < PER_THREAD {
                            let v = h.read().unwrap();
                            let (ret, steps) = h.run(CallOp::Cas { expected: v, new: v + 1 }).unwrap();
                            assert!(steps <= MAX_CAS_STEPS);
                            if ret == Ret::Bool(true) {
                                wins += 1;
                            }
                        }
                        wins
                    })
                })
                .collect();
            workers.into_iter().map(|w| w.join().unwrap()).sum()
        });
        assert_eq!(wins, THREADS as u64 * PER_THREAD);
        assert_eq!(cas.value(), wins);
        assert_eq!(cas.v().hi, 2 * wins);
    }
}
