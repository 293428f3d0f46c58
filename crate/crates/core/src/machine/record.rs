//! Line-oriented trace format: one JSON object per line.
//!
//! A full trace is a header line, the register steps and call events in
//! execution order, and a final line with the end state. Readers that only
//! need the history (the black-box checker) accept any subset of these,
//! including a bare list of event lines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caslib::{CallOp, Mutation, Pid, Reg, Ret, Snapshot};
use crate::registers::{Primitive, PrimitiveKind, Word};

use super::{Event, EventKind, ExecutionTrace, RegisterStep, Schedule, TraceMeta};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    /// 1-based line number; 0 for errors about the file as a whole.
    pub line: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeaderRecord {
    pub procs: usize,
    pub objects: usize,
    pub width: u32,
    pub initial: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<Mutation>,
    #[serde(default)]
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: u64,
    pub pid: Pid,
    pub reg: Reg,
    pub op: PrimitiveKind,
    pub args: Vec<u64>,
    pub observed: Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub kind: EventKind,
    pub pid: Pid,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub obj: usize,
    pub op: String,
    pub args: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ret: Option<Ret>,
    pub step: u64,
}

fn is_zero(x: &usize) -> bool {
    *x == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalRecord {
    pub final_state: Snapshot,
    pub pending: Vec<Pid>,
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Record {
    Header(HeaderRecord),
    Step(StepRecord),
    Event(EventRecord),
    Final(FinalRecord),
}

impl From<&RegisterStep> for StepRecord {
    fn from(s: &RegisterStep) -> Self {
        StepRecord {
            step: s.step,
            pid: s.pid,
            reg: s.reg,
            op: s.op.kind(),
            args: s.op.args(),
            observed: s.observed,
        }
    }
}

impl TryFrom<&StepRecord> for RegisterStep {
    type Error = String;

    fn try_from(r: &StepRecord) -> Result<Self, String> {
        let op = Primitive::from_parts(r.op, &r.args)
            .ok_or_else(|| format!("{} does not take {} argument(s)", r.op, r.args.len()))?;
        Ok(RegisterStep {
            step: r.step,
            pid: r.pid,
            reg: r.reg,
            op,
            observed: r.observed,
        })
    }
}

impl From<&Event> for EventRecord {
    fn from(e: &Event) -> Self {
        EventRecord {
            kind: e.kind,
            pid: e.pid,
            obj: e.obj,
            op: e.op.name().to_string(),
            args: e.op.args(),
            ret: e.ret,
            step: e.step,
        }
    }
}

impl TryFrom<&EventRecord> for Event {
    type Error = String;

    fn try_from(r: &EventRecord) -> Result<Self, String> {
        let op = CallOp::from_parts(&r.op, &r.args)
            .ok_or_else(|| format!("unknown operation {}({:?})", r.op, r.args))?;
        match (r.kind, r.ret) {
            (EventKind::Inv, Some(_)) => return Err("invocation carries a return value".into()),
            (EventKind::Res, None) => return Err("response without a return value".into()),
            _ => {}
        }
        if let Some(ret) = r.ret {
            let ok = matches!((op, ret), (CallOp::Cas { .. }, Ret::Bool(_)) | (CallOp::Read, Ret::Value(_)));
            if !ok {
                return Err(format!("{op} cannot return {ret}"));
            }
        }
        Ok(Event {
            kind: r.kind,
            pid: r.pid,
            obj: r.obj,
            op,
            ret: r.ret,
            step: r.step,
        })
    }
}

/// Parses every non-blank line.
pub fn parse_records(text: &str) -> Result<Vec<(usize, Record)>, ParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<Record>(line)
                .map(|r| (i + 1, r))
                .map_err(|_| ParseError::new(i + 1, describe_bad_line(line)))
        })
        .collect()
}

// The untagged enum only says "did not match any variant"; retry as the
// variant the line most resembles to get a useful message.
fn describe_bad_line(line: &str) -> String {
    let value: serde_json::Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return format!("invalid JSON: {e}"),
    };
    let Some(obj) = value.as_object() else {
        return "expected a JSON object".into();
    };
    let err = if obj.contains_key("procs") {
        serde_json::from_value::<HeaderRecord>(value).err()
    } else if obj.contains_key("reg") {
        serde_json::from_value::<StepRecord>(value).err()
    } else if obj.contains_key("kind") {
        serde_json::from_value::<EventRecord>(value).err()
    } else if obj.contains_key("final_state") {
        serde_json::from_value::<FinalRecord>(value).err()
    } else {
        return "not a header, step, event or final record".into();
    };
    match err {
        Some(e) => e.to_string(),
        None => "unrecognized record".into(),
    }
}

/// Header and events of a trace file, as needed by the black-box checker.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventLog {
    pub header: Option<HeaderRecord>,
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut log = EventLog::default();
        for (line, record) in parse_records(text)? {
            match record {
                Record::Header(h) => {
                    if log.header.is_some() {
                        return Err(ParseError::new(line, "second header record"));
                    }
                    if !log.events.is_empty() {
                        return Err(ParseError::new(line, "header after events"));
                    }
                    log.header = Some(h);
                }
                Record::Event(e) => {
                    let event = Event::try_from(&e).map_err(|m| ParseError::new(line, m))?;
                    log.events.push(event);
                }
                Record::Step(_) | Record::Final(_) => {}
            }
        }
        Ok(log)
    }
}

impl ExecutionTrace {
    pub fn header(&self) -> HeaderRecord {
        HeaderRecord {
            procs: self.meta.procs,
            objects: self.meta.objects,
            width: self.meta.width,
            initial: self.meta.initial.clone(),
            mutation: self.meta.mutation,
            schedule: self.schedule.clone(),
        }
    }

    /// All records in file order: header, steps and events interleaved by
    /// step index (an invocation precedes its first step, a response follows
    /// its last one), then the final state.
    pub fn records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.register_steps.len() + self.events.len() + 2);
        out.push(Record::Header(self.header()));
        let mut events = self.events.iter().peekable();
        for step in &self.register_steps {
            while let Some(e) = events.next_if(|e| e.step < step.step || (e.step == step.step && e.kind == EventKind::Inv))
            {
                out.push(Record::Event(e.into()));
            }
            out.push(Record::Step(step.into()));
            while let Some(e) = events.next_if(|e| e.step == step.step && e.kind == EventKind::Res) {
                out.push(Record::Event(e.into()));
            }
        }
        out.extend(events.map(|e| Record::Event(e.into())));
        out.push(Record::Final(FinalRecord {
            final_state: self.final_state.clone(),
            pending: self.pending.clone(),
        }));
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for record in self.records() {
            s.push_str(&serde_json::to_string(&record).expect("records serialize"));
            s.push('\n');
        }
        s
    }

    /// Parses a complete trace as written by [`ExecutionTrace::to_jsonl`].
    pub fn from_jsonl(text: &str) -> Result<Self, ParseError> {
        let mut header = None;
        let mut fin = None;
        let mut register_steps = Vec::new();
        let mut events = Vec::new();
        for (line, record) in parse_records(text)? {
            if fin.is_some() {
                return Err(ParseError::new(line, "record after the final record"));
            }
            match record {
                Record::Header(h) if header.is_none() && register_steps.is_empty() && events.is_empty() => {
                    header = Some(h)
                }
                Record::Header(_) => return Err(ParseError::new(line, "header must be the first record")),
                Record::Step(s) => register_steps.push(RegisterStep::try_from(&s).map_err(|m| ParseError::new(line, m))?),
                Record::Event(e) => events.push(Event::try_from(&e).map_err(|m| ParseError::new(line, m))?),
                Record::Final(f) => fin = Some(f),
            }
        }
        let header = header.ok_or_else(|| ParseError::new(0, "missing header record"))?;
        let fin = fin.ok_or_else(|| ParseError::new(0, "missing final record"))?;
        Ok(ExecutionTrace {
            meta: TraceMeta {
                procs: header.procs,
                objects: header.objects,
                width: header.width,
                initial: header.initial,
                mutation: header.mutation,
            },
            schedule: header.schedule,
            register_steps,
            events,
            final_state: fin.final_state,
            pending: fin.pending,
        })
    }
}
