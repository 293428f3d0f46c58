use std::collections::HashSet;
use std::hash::Hash;

use crate::caslib::{CallOp, Ret};

use super::{History, HistoryCall};

/// Default search budget, in explored nodes.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

/// A deterministic sequential object.
pub trait SequentialSpec {
    type State: Clone + Eq + Hash;

    fn apply(&self, state: &Self::State, op: CallOp) -> (Self::State, Ret);
}

/// The sequential compare-and-swap cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CasSpec;

impl SequentialSpec for CasSpec {
    type State = u64;

    fn apply(&self, state: &u64, op: CallOp) -> (u64, Ret) {
        spec_apply(*state, op)
    }
}

pub fn spec_apply(state: u64, op: CallOp) -> (u64, Ret) {
    match op {
        CallOp::Cas { expected, new } if state == expected => (new, Ret::Bool(true)),
        CallOp::Cas { .. } => (state, Ret::Bool(false)),
        CallOp::Read => (state, Ret::Value(state)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinearizationVerdict {
    /// `witness` lists indices into [`History::calls`] in linearization
    /// order. Pending calls that are absent were dropped.
    Accepted { witness: Vec<usize> },
    /// The shortest rejected prefix of the history.
    Rejected { counterexample: History },
    BudgetExceeded { explored: u64 },
}

impl LinearizationVerdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, LinearizationVerdict::Accepted { .. })
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, LinearizationVerdict::Rejected { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn clear(&mut self, i: usize) {
        self.0[i / 64] &= !(1 << (i % 64));
    }

    fn contains_all(&self, other: &Bits) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a & b == *b)
    }
}

struct Exceeded;

struct Search<'a, S: SequentialSpec> {
    spec: &'a S,
    calls: &'a [HistoryCall],
    preds: Vec<Bits>,
    complete: Bits,
    memo: HashSet<(Bits, S::State)>,
    explored: u64,
    budget: u64,
    order: Vec<usize>,
}

impl<S: SequentialSpec> Search<'_, S> {
    fn dfs(&mut self, done: &mut Bits, state: &S::State) -> Result<bool, Exceeded> {
        if done.contains_all(&self.complete) {
            return Ok(true);
        }
        if !self.memo.insert((done.clone(), state.clone())) {
            return Ok(false);
        }
        self.explored += 1;
        if self.explored > self.budget {
            return Err(Exceeded);
        }
        for i in 0..self.calls.len() {
            if done.get(i) || !done.contains_all(&self.preds[i]) {
                continue;
            }
            let call = &self.calls[i];
            let (next, ret) = self.spec.apply(state, call.op);
            if call.ret().is_some_and(|r| r != ret) {
                continue;
            }
            done.set(i);
            self.order.push(i);
            if self.dfs(done, &next)? {
                return Ok(true);
            }
            self.order.pop();
            done.clear(i);
        }
        Ok(false)
    }
}

enum Outcome {
    Accepted(Vec<usize>),
    Rejected,
    Exceeded(u64),
}

fn search<S: SequentialSpec>(history: &History, spec: &S, initial: &S::State, budget: u64) -> Outcome {
    let calls = history.calls();
    let n = calls.len();
    let mut complete = Bits::new(n);
    let mut preds = vec![Bits::new(n); n];
    for (j, later) in calls.iter().enumerate() {
        if !later.is_pending() {
            complete.set(j);
        }
        for (i, earlier) in calls.iter().enumerate() {
            if earlier.precedes(later) {
                preds[j].set(i);
            }
        }
    }
    let mut s = Search {
        spec,
        calls,
        preds,
        complete,
        memo: HashSet::new(),
        explored: 0,
        budget,
        order: Vec::with_capacity(n),
    };
    let mut done = Bits::new(n);
    match s.dfs(&mut done, initial) {
        Ok(true) => Outcome::Accepted(s.order),
        Ok(false) => Outcome::Rejected,
        Err(Exceeded) => Outcome::Exceeded(s.explored),
    }
}

/// Decides whether `history`, taken as the history of a single object
/// starting in `initial`, is linearizable with respect to `spec`.
///
/// Pending calls are either given an effect somewhere after their invocation
/// or dropped. At most `budget` search nodes are explored; running out is
/// reported as [`LinearizationVerdict::BudgetExceeded`], never as a
/// rejection. On rejection the history is shortened to the least rejected
/// prefix, which is well defined because every prefix of a linearizable
/// history is linearizable.
pub fn check_with<S: SequentialSpec>(
    history: &History,
    spec: &S,
    initial: &S::State,
    budget: u64,
) -> LinearizationVerdict {
    match search(history, spec, initial, budget) {
        Outcome::Accepted(witness) => LinearizationVerdict::Accepted { witness },
        Outcome::Exceeded(explored) => LinearizationVerdict::BudgetExceeded { explored },
        Outcome::Rejected => {
            let (mut lo, mut hi) = (0, history.len());
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                match search(&history.prefix(mid), spec, initial, budget) {
                    Outcome::Rejected => hi = mid,
                    Outcome::Accepted(_) => lo = mid,
                    Outcome::Exceeded(_) => break,
                }
            }
            LinearizationVerdict::Rejected {
                counterexample: history.prefix(hi),
            }
        }
    }
}

/// [`check_with`] against the compare-and-swap specification.
pub fn check_linearizable(history: &History, initial: u64, budget: u64) -> LinearizationVerdict {
    check_with(history, &CasSpec, &initial, budget)
}

/// Checks each object's sub-history on its own; linearizability is local, so
/// the whole history is linearizable iff every object's is.
pub fn check_objects(history: &History, initial: &[u64], budget: u64) -> Vec<(usize, LinearizationVerdict)> {
    history
        .objects()
        .into_iter()
        .map(|obj| {
            let init = initial.get(obj).copied().unwrap_or(0);
            (obj, check_linearizable(&history.for_object(obj), init, budget))
        })
        .collect()
}
