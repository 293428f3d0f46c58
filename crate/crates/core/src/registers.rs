//! Two-half registers and the four primitives they support: read, write,
//! half-max and max-write.
//!
//! A register holds a pair `(hi, lo)`, each half `W` bits wide. Only
//! half-max and max-write look at the first half; neither returns a value.
//!
//! Two storage back ends share the same transition function
//! ([`Primitive::apply`]): [`SimRegister`] for the single-threaded simulator
//! and [`AtomicRegister`] for live threads, where the pair lives in one
//! 128-bit atomic and the max primitives are compare-exchange loops.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::Ordering;

use portable_atomic::AtomicU128;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default half width in bits.
pub const DEFAULT_WIDTH: u32 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegisterError {
    #[error("{field} value {value} does not fit in {bits} bits")]
    Overflow {
        field: &'static str,
        value: u128,
        bits: u32,
    },
    #[error("register half width must be in 2..=64 bits, got {0}")]
    InvalidWidth(u32),
    #[error("{procs} processes need {pid_bits} pid bits, which leaves no counter bits in a {bits}-bit half")]
    PidBudget { procs: usize, pid_bits: u32, bits: u32 },
    #[error("pid {pid} is outside 1..={procs}")]
    PidOutOfRange { pid: u64, procs: usize },
}

/// Bit width of one register half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Width(u32);

impl Width {
    pub fn new(bits: u32) -> Result<Self, RegisterError> {
        if (2..=64).contains(&bits) {
            Ok(Width(bits))
        } else {
            Err(RegisterError::InvalidWidth(bits))
        }
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn max_value(self) -> u64 {
        u64::MAX >> (64 - self.0)
    }

    /// Fails with [`RegisterError::Overflow`] if `value` needs more than `W` bits.
    pub fn check(self, field: &'static str, value: u64) -> Result<u64, RegisterError> {
        if value <= self.max_value() {
            Ok(value)
        } else {
            Err(RegisterError::Overflow {
                field,
                value: value as u128,
                bits: self.0,
            })
        }
    }

    /// Like [`Width::check`] but for intermediate results such as `seq + 2`
    /// that may not even fit a `u64`.
    pub fn check_wide(self, field: &'static str, value: u128) -> Result<u64, RegisterError> {
        if value <= self.max_value() as u128 {
            Ok(value as u64)
        } else {
            Err(RegisterError::Overflow {
                field,
                value,
                bits: self.0,
            })
        }
    }
}

impl Default for Width {
    fn default() -> Self {
        Width(DEFAULT_WIDTH)
    }
}

impl TryFrom<u32> for Width {
    type Error = RegisterError;

    fn try_from(bits: u32) -> Result<Self, Self::Error> {
        Width::new(bits)
    }
}

impl From<Width> for u32 {
    fn from(w: Width) -> u32 {
        w.0
    }
}

/// Contents of a register: the first half `hi` and the second half `lo`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u64; 2]", into = "[u64; 2]")]
pub struct Word {
    pub hi: u64,
    pub lo: u64,
}

impl Word {
    pub const ZERO: Word = Word { hi: 0, lo: 0 };

    pub const fn new(hi: u64, lo: u64) -> Self {
        Word { hi, lo }
    }

    fn to_bits(self) -> u128 {
        ((self.hi as u128) << 64) | self.lo as u128
    }

    fn from_bits(bits: u128) -> Self {
        Word {
            hi: (bits >> 64) as u64,
            lo: bits as u64,
        }
    }

    fn check(self, width: Width) -> Result<Self, RegisterError> {
        width.check("first half", self.hi)?;
        width.check("second half", self.lo)?;
        Ok(self)
    }
}

impl From<[u64; 2]> for Word {
    fn from([hi, lo]: [u64; 2]) -> Self {
        Word { hi, lo }
    }
}

impl From<Word> for [u64; 2] {
    fn from(w: Word) -> Self {
        [w.hi, w.lo]
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} | {})", self.hi, self.lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Read,
    Write,
    HalfMax,
    MaxWrite,
}

impl PrimitiveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveKind::Read => "read",
            PrimitiveKind::Write => "write",
            PrimitiveKind::HalfMax => "half_max",
            PrimitiveKind::MaxWrite => "max_write",
        }
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrimitiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read" => Ok(PrimitiveKind::Read),
            "write" => Ok(PrimitiveKind::Write),
            "half_max" => Ok(PrimitiveKind::HalfMax),
            "max_write" => Ok(PrimitiveKind::MaxWrite),
            other => Err(format!("unknown register primitive `{other}`")),
        }
    }
}

/// One register operation together with its arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Read,
    Write(Word),
    HalfMax(u64),
    MaxWrite(Word),
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::Read => PrimitiveKind::Read,
            Primitive::Write(_) => PrimitiveKind::Write,
            Primitive::HalfMax(_) => PrimitiveKind::HalfMax,
            Primitive::MaxWrite(_) => PrimitiveKind::MaxWrite,
        }
    }

    pub fn args(&self) -> Vec<u64> {
        match *self {
            Primitive::Read => vec![],
            Primitive::Write(w) | Primitive::MaxWrite(w) => vec![w.hi, w.lo],
            Primitive::HalfMax(x) => vec![x],
        }
    }

    /// Inverse of `(kind(), args())`.
    pub fn from_parts(kind: PrimitiveKind, args: &[u64]) -> Option<Self> {
        match (kind, args) {
            (PrimitiveKind::Read, []) => Some(Primitive::Read),
            (PrimitiveKind::Write, &[hi, lo]) => Some(Primitive::Write(Word::new(hi, lo))),
            (PrimitiveKind::HalfMax, &[x]) => Some(Primitive::HalfMax(x)),
            (PrimitiveKind::MaxWrite, &[hi, lo]) => Some(Primitive::MaxWrite(Word::new(hi, lo))),
            _ => None,
        }
    }

    pub fn is_read(&self) -> bool {
        matches!(self, Primitive::Read)
    }

    /// The register state after applying `self` to `current`.
    pub fn apply(&self, current: Word) -> Word {
        match *self {
            Primitive::Read => current,
            Primitive::Write(w) => w,
            Primitive::HalfMax(x) => Word {
                hi: current.hi.max(x),
                lo: current.lo,
            },
            Primitive::MaxWrite(w) => {
                if w.hi >= current.hi {
                    w
                } else {
                    current
                }
            }
        }
    }

    fn check(&self, width: Width) -> Result<(), RegisterError> {
        match *self {
            Primitive::Read => Ok(()),
            Primitive::Write(w) | Primitive::MaxWrite(w) => w.check(width).map(|_| ()),
            Primitive::HalfMax(x) => width.check("first half", x).map(|_| ()),
        }
    }
}

/// Register used by the simulator. Operations are serialized by the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimRegister {
    word: Word,
    width: Width,
}

impl SimRegister {
    pub fn new(width: Width, init: Word) -> Result<Self, RegisterError> {
        Ok(SimRegister {
            word: init.check(width)?,
            width,
        })
    }

    pub fn read(&self) -> Word {
        self.word
    }

    pub fn write(&mut self, w: Word) -> Result<(), RegisterError> {
        self.execute(Primitive::Write(w)).map(|_| ())
    }

    pub fn half_max(&mut self, x: u64) -> Result<(), RegisterError> {
        self.execute(Primitive::HalfMax(x)).map(|_| ())
    }

    pub fn max_write(&mut self, w: Word) -> Result<(), RegisterError> {
        self.execute(Primitive::MaxWrite(w)).map(|_| ())
    }

    /// Applies `op` and returns what it observed: the value read for a read,
    /// the resulting state for anything else.
    pub fn execute(&mut self, op: Primitive) -> Result<Word, RegisterError> {
        op.check(self.width)?;
        self.word = op.apply(self.word);
        Ok(self.word)
    }
}

/// Register shared between threads. The pair is stored in one 128-bit atomic
/// so reads never observe halves from two different operations.
#[derive(Debug)]
pub struct AtomicRegister {
    cell: AtomicU128,
    width: Width,
}

impl AtomicRegister {
    pub fn new(width: Width, init: Word) -> Result<Self, RegisterError> {
        Ok(AtomicRegister {
            cell: AtomicU128::new(init.check(width)?.to_bits()),
            width,
        })
    }

    pub fn read(&self) -> Word {
        Word::from_bits(self.cell.load(Ordering::SeqCst))
    }

    pub fn write(&self, w: Word) -> Result<(), RegisterError> {
        self.execute(Primitive::Write(w)).map(|_| ())
    }

    pub fn half_max(&self, x: u64) -> Result<(), RegisterError> {
        self.execute(Primitive::HalfMax(x)).map(|_| ())
    }

    pub fn max_write(&self, w: Word) -> Result<(), RegisterError> {
        self.execute(Primitive::MaxWrite(w)).map(|_| ())
    }

    /// Same contract as [`SimRegister::execute`].
    pub fn execute(&self, op: Primitive) -> Result<Word, RegisterError> {
        op.check(self.width)?;
        match op {
            Primitive::Read => Ok(self.read()),
            Primitive::Write(w) => {
                self.cell.store(w.to_bits(), Ordering::SeqCst);
                Ok(w)
            }
            Primitive::HalfMax(_) | Primitive::MaxWrite(_) => {
                // A no-op outcome is linearized at the load that saw it, so
                // the loop only stores when the state actually changes.
                let prev = self.cell.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |bits| {
                    let cur = Word::from_bits(bits);
                    let next = op.apply(cur);
                    (next != cur).then(|| next.to_bits())
                });
                let prev = match prev {
                    Ok(bits) | Err(bits) => Word::from_bits(bits),
                };
                Ok(op.apply(prev))
            }
        }
    }
}

/// Decoded contents of the `P` register: `seq` in the first half, `pid` and
/// `c` packed into the second.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct PWord {
    pub seq: u64,
    pub pid: u64,
    pub c: u64,
}

/// Packing of `(pid, c)` into one half: pid in the top `B` bits, the counter
/// in the remaining `W - B`, with `B = ceil(log2 n) + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PLayout {
    width: Width,
    procs: usize,
    pid_bits: u32,
}

impl PLayout {
    pub fn new(width: Width, procs: usize) -> Result<Self, RegisterError> {
        let pid_bits = Self::pid_bits_for(procs);
        if pid_bits >= width.bits() {
            return Err(RegisterError::PidBudget {
                procs,
                pid_bits,
                bits: width.bits(),
            });
        }
        Ok(PLayout {
            width,
            procs,
            pid_bits,
        })
    }

    /// `ceil(log2 n) + 1`, and 1 for `n <= 1`.
    pub fn pid_bits_for(procs: usize) -> u32 {
        let ceil_log2 = if procs <= 1 {
            0
        } else {
            usize::BITS - (procs - 1).leading_zeros()
        };
        ceil_log2 + 1
    }

    pub fn pid_bits(&self) -> u32 {
        self.pid_bits
    }

    pub fn counter_bits(&self) -> u32 {
        self.width.bits() - self.pid_bits
    }

    pub fn max_counter(&self) -> u64 {
        u64::MAX >> (64 - self.counter_bits())
    }

    pub fn width(&self) -> Width {
        self.width
    }

    pub fn procs(&self) -> usize {
        self.procs
    }

    pub fn pack(&self, p: PWord) -> Result<Word, RegisterError> {
        if p.pid == 0 || p.pid > self.procs as u64 {
            return Err(RegisterError::PidOutOfRange {
                pid: p.pid,
                procs: self.procs,
            });
        }
        if p.c > self.max_counter() {
            return Err(RegisterError::Overflow {
                field: "P.c",
                value: p.c as u128,
                bits: self.counter_bits(),
            });
        }
        let seq = self.width.check("P.seq", p.seq)?;
        Ok(Word {
            hi: seq,
            lo: (p.pid << self.counter_bits()) | p.c,
        })
    }

    pub fn unpack(&self, w: Word) -> PWord {
        PWord {
            seq: w.hi,
            pid: w.lo >> self.counter_bits(),
            c: w.lo & self.max_counter(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w64() -> Width {
        Width::default()
    }

    fn sim(hi: u64, lo: u64) -> SimRegister {
        SimRegister::new(w64(), Word::new(hi, lo)).unwrap()
    }

    #[test]
    fn read_returns_current_pair() {
        assert_eq!(sim(2, 9).read(), Word::new(2, 9));
        assert_eq!(sim(0, 0).read(), Word::ZERO);
        let mut r = sim(0, 0);
        r.write(Word::new(5, 7)).unwrap();
        assert_eq!(r.read(), Word::new(5, 7));
    }

    #[test]
    fn write_overwrites_unconditionally() {
        let mut r = sim(9, 9);
        r.write(Word::new(0, 0)).unwrap();
        assert_eq!(r.read(), Word::ZERO);
        let mut r = sim(2, 9);
        r.write(Word::new(2, 9)).unwrap();
        assert_eq!(r.read(), Word::new(2, 9));
        let mut r = sim(0, 0);
        r.write(Word::new(3, 4)).unwrap();
        assert_eq!(r.read(), Word::new(3, 4));
    }

    #[test]
    fn half_max_only_raises_first_half() {
        let mut r = sim(2, 9);
        r.half_max(5).unwrap();
        assert_eq!(r.read(), Word::new(5, 9));
        let mut r = sim(7, 9);
        r.half_max(5).unwrap();
        assert_eq!(r.read(), Word::new(7, 9));
        let mut r = sim(5, 9);
        r.half_max(5).unwrap();
        assert_eq!(r.read(), Word::new(5, 9));
    }

    #[test]
    fn max_write_writes_iff_first_arg_at_least_hi() {
        let mut r = sim(2, 9);
        r.max_write(Word::new(3, 4)).unwrap();
        assert_eq!(r.read(), Word::new(3, 4));
        let mut r = sim(2, 9);
        r.max_write(Word::new(2, 4)).unwrap();
        assert_eq!(r.read(), Word::new(2, 4));
        let mut r = sim(2, 9);
        r.max_write(Word::new(1, 4)).unwrap();
        assert_eq!(r.read(), Word::new(2, 9));
    }

    #[test]
    fn overflow_is_reported_not_wrapped() {
        let w8 = Width::new(8).unwrap();
        let mut r = SimRegister::new(w8, Word::ZERO).unwrap();
        assert!(matches!(
            r.half_max(256),
            Err(RegisterError::Overflow { value: 256, bits: 8, .. })
        ));
        assert!(r.max_write(Word::new(1, 300)).is_err());
        assert_eq!(r.read(), Word::ZERO);
        assert!(SimRegister::new(w8, Word::new(0, 256)).is_err());
        assert!(AtomicRegister::new(w8, Word::ZERO).unwrap().write(Word::new(999, 0)).is_err());
        assert_eq!(Width::new(1), Err(RegisterError::InvalidWidth(1)));
        assert_eq!(Width::new(65), Err(RegisterError::InvalidWidth(65)));
    }

    #[test]
    fn atomic_register_matches_sim_on_examples() {
        let r = AtomicRegister::new(w64(), Word::new(2, 9)).unwrap();
        r.half_max(5).unwrap();
        assert_eq!(r.read(), Word::new(5, 9));
        r.max_write(Word::new(5, 1)).unwrap();
        assert_eq!(r.read(), Word::new(5, 1));
        r.max_write(Word::new(4, 2)).unwrap();
        assert_eq!(r.read(), Word::new(5, 1));
        r.write(Word::new(0, 0)).unwrap();
        assert_eq!(r.read(), Word::ZERO);
        let full = AtomicRegister::new(w64(), Word::new(u64::MAX, u64::MAX)).unwrap();
        assert_eq!(full.read(), Word::new(u64::MAX, u64::MAX));
    }

    #[test]
    fn pid_bit_budget() {
        assert_eq!(PLayout::pid_bits_for(1), 1);
        assert_eq!(PLayout::pid_bits_for(2), 2);
        assert_eq!(PLayout::pid_bits_for(3), 3);
        assert_eq!(PLayout::pid_bits_for(4), 3);
        assert_eq!(PLayout::pid_bits_for(5), 4);
        let w8 = Width::new(8).unwrap();
        assert_eq!(PLayout::new(w8, 2).unwrap().max_counter(), 63);
        assert!(matches!(
            PLayout::new(w8, 200),
            Err(RegisterError::PidBudget { pid_bits: 9, .. })
        ));
        let l = PLayout::new(w8, 2).unwrap();
        assert!(l.pack(PWord { seq: 1, pid: 3, c: 0 }).is_err());
        assert!(l.pack(PWord { seq: 1, pid: 0, c: 0 }).is_err());
        assert!(l.pack(PWord { seq: 1, pid: 2, c: 64 }).is_err());
    }

    #[test]
    fn solo_p_register_value() {
        let l = PLayout::new(w64(), 1).unwrap();
        let w = l.pack(PWord { seq: 2, pid: 1, c: 1 }).unwrap();
        assert_eq!(w.hi, 2);
        assert_eq!(l.unpack(w), PWord { seq: 2, pid: 1, c: 1 });
    }

    fn arb_prim() -> impl Strategy<Value = Primitive> {
        prop_oneof![
            (0u64..50).prop_map(Primitive::HalfMax),
            (0u64..50, 0u64..50).prop_map(|(x, y)| Primitive::MaxWrite(Word::new(x, y))),
        ]
    }

    proptest! {
        #[test]
        fn hi_is_monotone_under_max_primitives(
            init in (0u64..50, 0u64..50),
            ops in proptest::collection::vec(arb_prim(), 0..40),
        ) {
            let mut r = SimRegister::new(w64(), Word::new(init.0, init.1)).unwrap();
            let mut last = r.read().hi;
            for op in ops {
                r.execute(op).unwrap();
                prop_assert!(r.read().hi >= last);
                last = r.read().hi;
            }
        }

        #[test]
        fn half_max_commutes_on_hi(h in 0u64..1000, x in 0u64..1000, y in 0u64..1000, lo in 0u64..9) {
            let mut a = sim(h, lo);
            a.half_max(x).unwrap();
            a.half_max(y).unwrap();
            let mut b = sim(h, lo);
            b.half_max(y).unwrap();
            b.half_max(x).unwrap();
            prop_assert_eq!(a.read(), b.read());
            prop_assert_eq!(a.read().hi, h.max(x).max(y));
        }

        #[test]
        fn p_pack_unpack_round_trip(
            bits in 8u32..=64,
            procs in 1usize..=8,
            seq in any::<u64>(),
            pid_pick in any::<u64>(),
            c in any::<u64>(),
        ) {
            let width = Width::new(bits).unwrap();
            let layout = PLayout::new(width, procs).unwrap();
            let p = PWord {
                seq: seq & width.max_value(),
                pid: pid_pick % procs as u64 + 1,
                c: c & layout.max_counter(),
            };
            prop_assert_eq!(layout.unpack(layout.pack(p).unwrap()), p);
        }
    }

    fn hammer(with_half_max: bool, check: fn(Word) -> bool) {
        use std::sync::Arc;
        use std::thread;

        let reg = Arc::new(AtomicRegister::new(w64(), Word::ZERO).unwrap());
        let threads: Vec<_> = (0..4u64)
            .map(|t| {
                let reg = Arc::clone(&reg);
                thread::spawn(move || {
                    for i in 0..20_000u64 {
                        // Each pair written is (x, x + 1) with x unique per thread.
                        let x = i * 4 + t;
                        match i % 3 {
                            0 => reg.max_write(Word::new(x, x + 1)).unwrap(),
                            1 if with_half_max => reg.half_max(x / 2).unwrap(),
                            1 => reg.write(Word::new(x, x + 1)).unwrap(),
                            _ => {}
                        }
                        let seen = reg.read();
                        assert!(check(seen), "torn read {seen}");
                    }
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
    }

    #[test]
    fn concurrent_writes_never_tear() {
        hammer(false, |w| w == Word::ZERO || w.lo == w.hi + 1);
    }

    #[test]
    fn concurrent_half_max_keeps_pairs_consistent() {
        // half_max only raises hi, so the hi written with lo can only have grown.
        hammer(true, |w| w.lo == 0 || w.lo - 1 <= w.hi);
    }
}
