//! Invariants checked after every simulated step.

use crate::caslib::{CallOp, Path, Pid, Reg, Ret, Snapshot};
use crate::registers::Word;

/// A call that returned on the step being checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FinishedCall {
    pub pid: Pid,
    pub obj: usize,
    pub op: CallOp,
    pub path: Path,
    /// `V` as seen by the call's first read.
    pub first_read: Word,
    pub steps: u32,
    pub ret: Ret,
}

/// What a hook sees after one step.
#[derive(Debug)]
pub struct HookContext<'a> {
    pub step: u64,
    pub pid: Pid,
    pub reg: Reg,
    pub before: Word,
    pub after: Word,
    pub state: &'a Snapshot,
    pub finished: Option<&'a FinishedCall>,
}

/// A named predicate over one step.
#[derive(Debug, Clone, Copy)]
pub struct Hook {
    pub name: &'static str,
    pub check: fn(&HookContext<'_>) -> Result<(), String>,
}

impl PartialEq for Hook {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

fn v_seq_even(cx: &HookContext<'_>) -> Result<(), String> {
    match cx.reg {
        Reg::V(_) if !cx.after.hi.is_multiple_of(2) => Err(format!("{} seq became odd: {}", cx.reg, cx.after.hi)),
        _ => Ok(()),
    }
}

fn v_seq_step_two(cx: &HookContext<'_>) -> Result<(), String> {
    match cx.reg {
        Reg::V(_) if cx.after.hi != cx.before.hi && cx.after.hi != cx.before.hi.wrapping_add(2) => Err(
            format!("{} seq moved from {} to {}", cx.reg, cx.before.hi, cx.after.hi),
        ),
        _ => Ok(()),
    }
}

fn first_halves_monotone(cx: &HookContext<'_>) -> Result<(), String> {
    if cx.after.hi < cx.before.hi {
        Err(format!("{} first half fell from {} to {}", cx.reg, cx.before.hi, cx.after.hi))
    } else {
        Ok(())
    }
}

fn result_flag_monotone(cx: &HookContext<'_>) -> Result<(), String> {
    match cx.reg {
        Reg::R(_) if cx.after.hi == cx.before.hi && cx.before.lo == 1 && cx.after.lo == 0 => {
            Err(format!("{} ret went true -> false for c = {}", cx.reg, cx.after.hi))
        }
        _ => Ok(()),
    }
}

fn end_of_call_progress(cx: &HookContext<'_>) -> Result<(), String> {
    let Some(call) = cx.finished else { return Ok(()) };
    if call.path != Path::Contended {
        return Ok(());
    }
    let now = cx.state.v[call.obj].hi;
    let needed = call.first_read.hi + 2;
    if now < needed {
        Err(format!(
            "pid {} finished {} with V.seq = {now}, expected at least {needed}",
            call.pid, call.op
        ))
    } else {
        Ok(())
    }
}

pub const V_SEQ_EVEN: Hook = Hook {
    name: "v_seq_even",
    check: v_seq_even,
};
pub const V_SEQ_STEP_TWO: Hook = Hook {
    name: "v_seq_step_two",
    check: v_seq_step_two,
};
pub const FIRST_HALVES_MONOTONE: Hook = Hook {
    name: "first_halves_monotone",
    check: first_halves_monotone,
};
pub const RESULT_FLAG_MONOTONE: Hook = Hook {
    name: "result_flag_monotone",
    check: result_flag_monotone,
};
pub const END_OF_CALL_PROGRESS: Hook = Hook {
    name: "end_of_call_progress",
    check: end_of_call_progress,
};

/// Every built-in invariant.
pub fn standard_hooks() -> Vec<Hook> {
    vec![
        V_SEQ_EVEN,
        V_SEQ_STEP_TWO,
        FIRST_HALVES_MONOTONE,
        RESULT_FLAG_MONOTONE,
        END_OF_CALL_PROGRESS,
    ]
}

/// Looks up built-in hooks by name.
pub fn hooks_by_name<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Vec<Hook>, String> {
    let all = standard_hooks();
    names
        .into_iter()
        .map(|name| {
            all.iter()
                .find(|h| h.name == name)
                .copied()
                .ok_or_else(|| format!("unknown invariant `{name}`"))
        })
        .collect()
}
