use serde::{Deserialize, Serialize};

use super::{Algorithm, CallOp, Call, CasError, Memory, Mutation, Pid, Reg, Ret, Step};
use crate::registers::{PLayout, Primitive, SimRegister, Width, Word};

/// Construction options shared by the simulated and live objects.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CasConfig {
    pub width: Width,
    pub mutation: Option<Mutation>,
}

/// Contents of every shared register at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Snapshot {
    #[serde(rename = "A")]
    pub a: Vec<Word>,
    #[serde(rename = "R")]
    pub r: Vec<Word>,
    #[serde(rename = "V")]
    pub v: Vec<Word>,
    #[serde(rename = "P")]
    pub p: Vec<Word>,
}

impl Snapshot {
    pub fn get(&self, reg: Reg) -> Word {
        match reg {
            Reg::V(k) => self.v[k],
            Reg::P(k) => self.p[k],
            Reg::A(pid) => self.a[pid.index()],
            Reg::R(pid) => self.r[pid.index()],
        }
    }

    pub fn register_count(&self) -> usize {
        self.a.len() + self.r.len() + self.v.len() + self.p.len()
    }
}

/// Register file for the simulator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimMemory {
    a: Vec<SimRegister>,
    r: Vec<SimRegister>,
    v: Vec<SimRegister>,
    p: Vec<SimRegister>,
}

impl SimMemory {
    fn new(width: Width, procs: usize, initial_values: &[u64]) -> Result<Self, CasError> {
        let zeroed = |count: usize| -> Result<Vec<SimRegister>, CasError> {
            (0..count)
                .map(|_| SimRegister::new(width, Word::ZERO).map_err(CasError::from))
                .collect()
        };
        let v = initial_values
            .iter()
            .map(|&x| SimRegister::new(width, Word::new(0, x)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SimMemory {
            a: zeroed(procs)?,
            r: zeroed(procs)?,
            p: zeroed(initial_values.len())?,
            v,
        })
    }

    fn register(&mut self, reg: Reg) -> Result<&mut SimRegister, CasError> {
        let (slots, index, bound) = match reg {
            Reg::V(k) => (&mut self.v, k, None),
            Reg::P(k) => (&mut self.p, k, None),
            Reg::A(pid) => (&mut self.a, pid.get().wrapping_sub(1), Some(pid)),
            Reg::R(pid) => (&mut self.r, pid.get().wrapping_sub(1), Some(pid)),
        };
        let len = slots.len();
        slots.get_mut(index).ok_or(match bound {
            Some(pid) => CasError::PidOutOfRange {
                pid: pid.get(),
                procs: len,
            },
            None => CasError::ObjectOutOfRange {
                obj: index,
                objects: len,
            },
        })
    }

    pub fn snapshot(&self) -> Snapshot {
        let words = |regs: &[SimRegister]| regs.iter().map(SimRegister::read).collect();
        Snapshot {
            a: words(&self.a),
            r: words(&self.r),
            v: words(&self.v),
            p: words(&self.p),
        }
    }
}

impl Memory for SimMemory {
    fn execute(&mut self, reg: Reg, op: Primitive) -> Result<Word, CasError> {
        Ok(self.register(reg)?.execute(op)?)
    }
}

/// `m` simulated compare-and-swap objects sharing one `A` and one `R` array.
///
/// Calls can be run to completion ([`MultiCas::cas`], [`MultiCas::read`]) or
/// stepped one register operation at a time ([`MultiCas::begin`] then
/// [`MultiCas::step`]), which is what the machine does.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiCas {
    mem: SimMemory,
    counters: Vec<u64>,
    in_flight: Vec<bool>,
    alg: Algorithm,
}

impl MultiCas {
    pub fn new(procs: usize, initial_values: &[u64]) -> Result<Self, CasError> {
        Self::with_config(procs, initial_values, CasConfig::default())
    }

    pub fn with_config(
        procs: usize,
        initial_values: &[u64],
        config: CasConfig,
    ) -> Result<Self, CasError> {
        let alg = Algorithm::new(config.width, procs, config.mutation)?;
        if initial_values.is_empty() {
            return Err(CasError::NoObjects);
        }
        Ok(MultiCas {
            mem: SimMemory::new(config.width, procs, initial_values)?,
            counters: vec![0; procs],
            in_flight: vec![false; procs],
            alg,
        })
    }

    pub fn procs(&self) -> usize {
        self.alg.procs()
    }

    pub fn objects(&self) -> usize {
        self.mem.v.len()
    }

    /// Number of shared registers allocated: `2n + 2m`.
    pub fn register_count(&self) -> usize {
        self.mem.a.len() + self.mem.r.len() + self.mem.v.len() + self.mem.p.len()
    }

    pub fn layout(&self) -> &PLayout {
        self.alg.layout()
    }

    pub fn algorithm(&self) -> &Algorithm {
        &self.alg
    }

    /// Private counter `c` of `pid`.
    pub fn counter(&self, pid: Pid) -> u64 {
        self.counters[pid.index()]
    }

    pub fn snapshot(&self) -> Snapshot {
        self.mem.snapshot()
    }

    /// Current `V_k.val` without issuing a register operation.
    pub fn peek(&self, obj: usize) -> u64 {
        self.mem.v[obj].read().lo
    }

    /// Opens a call for `pid`. Each process may have only one call in flight.
    pub fn begin(&mut self, pid: Pid, obj: usize, op: CallOp) -> Result<Call, CasError> {
        pid.check(self.procs())?;
        if obj >= self.objects() {
            return Err(CasError::ObjectOutOfRange {
                obj,
                objects: self.objects(),
            });
        }
        let slot = &mut self.in_flight[pid.index()];
        if *slot {
            return Err(CasError::CallInFlight(pid));
        }
        *slot = true;
        Ok(Call::new(pid, obj, op))
    }

    pub fn step(&mut self, call: &mut Call) -> Result<Step, CasError> {
        let pid = call.pid();
        let step = call.step(&self.alg, &mut self.mem, &mut self.counters[pid.index()]);
        if call.is_done() || step.is_err() {
            self.in_flight[pid.index()] = false;
        }
        step
    }

    /// Runs a whole call; returns its result and the number of register
    /// operations it issued.
    pub fn run(&mut self, pid: Pid, obj: usize, op: CallOp) -> Result<(Ret, u32), CasError> {
        let mut call = self.begin(pid, obj, op)?;
        loop {
            self.step(&mut call)?;
            if let Some(ret) = call.result() {
                return Ok((ret, call.steps()));
            }
        }
    }

    pub fn cas(&mut self, obj: usize, pid: Pid, expected: u64, new: u64) -> Result<bool, CasError> {
        match self.run(pid, obj, CallOp::Cas { expected, new })?.0 {
            Ret::Bool(b) => Ok(b),
            Ret::Value(_) => unreachable!("cas returns a boolean"),
        }
    }

    pub fn read(&mut self, obj: usize, pid: Pid) -> Result<u64, CasError> {
        match self.run(pid, obj, CallOp::Read)?.0 {
            Ret::Value(v) => Ok(v),
            Ret::Bool(_) => unreachable!("read returns a value"),
        }
    }
}

/// A single simulated compare-and-swap object: `A[n]`, `R[n]`, `V` and `P`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CasObject {
    inner: MultiCas,
}

impl CasObject {
    pub fn new(procs: usize, initial_value: u64) -> Result<Self, CasError> {
        Self::with_config(procs, initial_value, CasConfig::default())
    }

    pub fn with_config(procs: usize, initial_value: u64, config: CasConfig) -> Result<Self, CasError> {
        Ok(CasObject {
            inner: MultiCas::with_config(procs, &[initial_value], config)?,
        })
    }

    pub fn procs(&self) -> usize {
        self.inner.procs()
    }

    pub fn counter(&self, pid: Pid) -> u64 {
        self.inner.counter(pid)
    }

    pub fn snapshot(&self) -> Snapshot {
        self.inner.snapshot()
    }

    pub fn v(&self) -> Word {
        self.inner.snapshot().v[0]
    }

    pub fn p(&self) -> Word {
        self.inner.snapshot().p[0]
    }

    pub fn layout(&self) -> &PLayout {
        self.inner.layout()
    }

    pub fn begin(&mut self, pid: Pid, op: CallOp) -> Result<Call, CasError> {
        self.inner.begin(pid, 0, op)
    }

    pub fn step(&mut self, call: &mut Call) -> Result<Step, CasError> {
        self.inner.step(call)
    }

    pub fn run(&mut self, pid: Pid, op: CallOp) -> Result<(Ret, u32), CasError> {
        self.inner.run(pid, 0, op)
    }

    pub fn cas(&mut self, pid: Pid, expected: u64, new: u64) -> Result<bool, CasError> {
        self.inner.cas(0, pid, expected, new)
    }

    pub fn read(&mut self, pid: Pid) -> Result<u64, CasError> {
        self.inner.read(0, pid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caslib::{Line, Path, MAX_CAS_STEPS};
    use crate::registers::{PWord, RegisterError};
    use proptest::prelude::*;

    const P1: Pid = Pid::new(1);
    const P2: Pid = Pid::new(2);

    #[test]
    fn new_initializes_version_zero() {
        let obj = CasObject::new(2, 5).unwrap();
        assert_eq!(obj.v(), Word::new(0, 5));
        assert_eq!(obj.p(), Word::ZERO);
        let snap = obj.snapshot();
        assert!(snap.a.iter().chain(&snap.r).all(|w| *w == Word::ZERO));
        assert_eq!(obj.counter(P1), 0);
        assert_eq!(obj.counter(P2), 0);
        assert_eq!(CasObject::new(1, 0).unwrap().v(), Word::new(0, 0));
        assert_eq!(CasObject::new(2, 5).unwrap().read(P1), Ok(5));
    }

    #[test]
    fn new_rejects_bad_sizes() {
        assert_eq!(CasObject::new(0, 1), Err(CasError::NoProcesses));
        let w8 = CasConfig {
            width: Width::new(8).unwrap(),
            mutation: None,
        };
        assert!(matches!(
            CasObject::with_config(200, 0, w8),
            Err(CasError::Register(RegisterError::PidBudget { .. }))
        ));
        assert!(matches!(
            CasObject::with_config(2, 256, w8),
            Err(CasError::Register(RegisterError::Overflow { .. }))
        ));
        assert_eq!(MultiCas::new(2, &[]), Err(CasError::NoObjects));
    }

    // Expected state comes from replaying the algorithm by hand for one process:
    // V read (0|5); c = 1; A[1] = (1|7); R[1] = (1|0); P max-write (1|1,1);
    // P half-max 2 -> (2|1,1); P read; A[1] read (1|7); seq even and cp = ca,
    // so R[1] max-write (1|1) and V max-write (2|7); R[1] read -> true.
    #[test]
    fn solo_contended_cas_hand_execution() {
        let mut obj = CasObject::new(1, 5).unwrap();
        let mut call = obj.begin(P1, CallOp::Cas { expected: 5, new: 7 }).unwrap();
        let mut lines = vec![];
        while !call.is_done() {
            lines.push(obj.step(&mut call).unwrap().line.number());
        }
        assert_eq!(lines, vec![5, 12, 13, 14, 15, 16, 17, 19, 20, 21]);
        assert_eq!(call.result(), Some(Ret::Bool(true)));
        assert_eq!(call.steps(), MAX_CAS_STEPS);
        assert_eq!(call.path(), Some(Path::Contended));

        let layout = *obj.layout();
        assert_eq!(obj.v(), Word::new(2, 7));
        assert_eq!(layout.unpack(obj.p()), PWord { seq: 2, pid: 1, c: 1 });
        let snap = obj.snapshot();
        assert_eq!(snap.a[0], Word::new(1, 7));
        assert_eq!(snap.r[0], Word::new(1, 1));
        assert_eq!(obj.read(P1), Ok(7));
    }

    #[test]
    fn guard_paths_take_one_step() {
        let mut obj = CasObject::new(2, 5).unwrap();
        let before = obj.snapshot();
        assert_eq!(obj.run(P1, CallOp::Cas { expected: 4, new: 7 }), Ok((Ret::Bool(false), 1)));
        assert_eq!(obj.run(P1, CallOp::Cas { expected: 5, new: 5 }), Ok((Ret::Bool(true), 1)));
        assert_eq!(obj.run(P2, CallOp::Read), Ok((Ret::Value(5), 1)));
        assert_eq!(obj.snapshot(), before);
        assert_eq!(obj.read(P1), Ok(5));
    }

    #[test]
    fn one_call_in_flight_per_process() {
        let mut obj = CasObject::new(2, 0).unwrap();
        let mut call = obj.begin(P1, CallOp::Cas { expected: 0, new: 1 }).unwrap();
        assert_eq!(obj.begin(P1, CallOp::Read), Err(CasError::CallInFlight(P1)));
        assert!(obj.begin(P2, CallOp::Read).is_ok());
        while !call.is_done() {
            obj.step(&mut call).unwrap();
        }
        assert_eq!(obj.step(&mut call), Err(CasError::CallFinished(P1)));
        assert!(obj.begin(P1, CallOp::Read).is_ok());
        assert!(matches!(obj.begin(Pid::new(3), CallOp::Read), Err(CasError::PidOutOfRange { .. })));
    }

    #[test]
    fn counter_overflow_is_an_error() {
        let config = CasConfig {
            width: Width::new(8).unwrap(),
            mutation: None,
        };
        let mut obj = CasObject::with_config(1, 0, config).unwrap();
        // n = 1 leaves 7 counter bits in P, so call 128 cannot be numbered.
        for i in 0..127u64 {
            assert_eq!(obj.cas(P1, i % 2, (i + 1) % 2), Ok(true));
        }
        let err = obj.cas(P1, 1, 0).unwrap_err();
        assert!(matches!(err, CasError::Register(RegisterError::Overflow { field: "c", .. })));
    }

    #[test]
    fn multi_object_register_count() {
        assert_eq!(MultiCas::new(3, &[0; 4]).unwrap().register_count(), 14);
        assert_eq!(MultiCas::new(1, &[0]).unwrap().register_count(), 4);
        assert_eq!(MultiCas::new(5, &[1, 2]).unwrap().register_count(), 14);
    }

    #[test]
    fn multi_counter_shared_across_objects() {
        let mut mc = MultiCas::new(2, &[0, 0]).unwrap();
        assert!(mc.cas(0, P1, 0, 1).unwrap());
        assert_eq!(mc.counter(P1), 1);
        assert!(mc.cas(1, P1, 0, 1).unwrap());
        assert_eq!(mc.counter(P1), 2);
        let snap = mc.snapshot();
        assert_eq!(snap.a[0], Word::new(2, 1));
        assert_eq!(snap.v, vec![Word::new(2, 1), Word::new(2, 1)]);
    }

    #[test]
    fn failed_guard_leaves_shared_arrays_alone() {
        let mut mc = MultiCas::new(2, &[0, 3]).unwrap();
        assert!(mc.cas(0, P1, 0, 1).unwrap());
        let before = mc.snapshot();
        assert!(!mc.cas(1, P1, 0, 9).unwrap());
        let after = mc.snapshot();
        assert_eq!(before, after);
        assert_eq!(mc.counter(P1), 1);
    }

    #[test]
    fn interleaved_pair_has_one_winner() {
        // Both read V before either writes, then run round-robin.
        let mut obj = CasObject::new(2, 0).unwrap();
        let mut c1 = obj.begin(P1, CallOp::Cas { expected: 0, new: 1 }).unwrap();
        let mut c2 = obj.begin(P2, CallOp::Cas { expected: 0, new: 2 }).unwrap();
        while !(c1.is_done() && c2.is_done()) {
            for call in [&mut c1, &mut c2] {
                if !call.is_done() {
                    let step = obj.step(call).unwrap();
                    assert!(step.line != Line::ReadValue);
                }
            }
        }
        let wins: Vec<_> = [&c1, &c2]
            .iter()
            .filter(|c| c.result() == Some(Ret::Bool(true)))
            .map(|c| c.op())
            .collect();
        assert_eq!(wins.len(), 1);
        let CallOp::Cas { new, .. } = wins[0] else { unreachable!() };
        assert_eq!(obj.v(), Word::new(2, new));
    }

    /// Sequential reference cell.
    fn reference(ops: &[(bool, u64, u64)], init: u64) -> (Vec<Ret>, u64) {
        let mut value = init;
        let rets = ops
            .iter()
            .map(|&(is_read, a, b)| {
                if is_read {
                    Ret::Value(value)
                } else if value == a {
                    value = b;
                    Ret::Bool(true)
                } else {
                    Ret::Bool(false)
                }
            })
            .collect();
        (rets, value)
    }

    proptest! {
        #[test]
        fn sequential_runs_match_reference(
            init in 0u64..4,
            ops in proptest::collection::vec((any::<bool>(), 0u64..4, 0u64..4), 0..200),
            procs in 1usize..4,
        ) {
            let mut obj = CasObject::new(procs, init).unwrap();
            let (expected, last) = reference(&ops, init);
            for (i, (&(is_read, a, b), want)) in ops.iter().zip(&expected).enumerate() {
                let pid = Pid::new(i % procs + 1);
                let op = if is_read { CallOp::Read } else { CallOp::Cas { expected: a, new: b } };
                let (got, steps) = obj.run(pid, op).unwrap();
                prop_assert_eq!(got, *want);
                prop_assert!(steps <= MAX_CAS_STEPS);
            }
            prop_assert_eq!(obj.v().lo, last);
        }

        #[test]
        fn two_objects_match_two_independent_cells(
            ops in proptest::collection::vec((0usize..2, any::<bool>(), 0u64..3, 0u64..3), 0..200),
        ) {
            let mut mc = MultiCas::new(2, &[0, 1]).unwrap();
            let mut singles = [CasObject::new(2, 0).unwrap(), CasObject::new(2, 1).unwrap()];
            for (i, &(obj, is_read, a, b)) in ops.iter().enumerate() {
                let pid = Pid::new(i % 2 + 1);
                let op = if is_read { CallOp::Read } else { CallOp::Cas { expected: a, new: b } };
                prop_assert_eq!(mc.run(pid, obj, op).unwrap().0, singles[obj].run(pid, op).unwrap().0);
            }
        }
    }
}
