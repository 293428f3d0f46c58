use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use maxcas::campaign::{
    run_campaign, BlackBox, CampaignConfig, CampaignError, CampaignReport, Mode, PathStat, ScheduleResult, Shape,
};
use maxcas::machine::hooks::{hooks_by_name, standard_hooks};
use maxcas::machine::EventRecord;
use maxcas::registers::Width;
use serde_json::json;

use crate::{ShapeArg, SimulateArgs, BUDGET, PASS, REJECTED, USAGE};

fn config(args: &SimulateArgs) -> Result<CampaignConfig, String> {
    let hooks = if args.no_invariants {
        Vec::new()
    } else if let Some(names) = &args.invariants {
        hooks_by_name(names.iter().map(String::as_str))?
    } else {
        standard_hooks()
    };
    let mode = match args.random {
        Some(count) => Mode::Random {
            count,
            seed: args.seed,
            truncated: args.truncated_count.min(count),
        },
        None => Mode::Exhaustive { ceiling: args.ceiling },
    };
    Ok(CampaignConfig {
        procs: args.procs,
        ops_per_proc: args.ops_per_proc,
        values: args.values.clone(),
        objects: args.objects,
        mode,
        shape: match args.shape {
            ShapeArg::Contend => Shape::Contend,
            ShapeArg::Mixed => Shape::Mixed,
        },
        truncate: args.truncate,
        hooks,
        mutation: args.mutation,
        width: Width::new(args.width).map_err(|e| e.to_string())?,
        budget: args.budget,
        program_seed: args.seed,
        keep_traces: args.record,
    })
}

fn verdict_record(r: &ScheduleResult) -> serde_json::Value {
    let black_box = match &r.black_box {
        BlackBox::Accepted => "accepted",
        BlackBox::Rejected { .. } => "rejected",
        BlackBox::BudgetExceeded { .. } => "budget_exceeded",
        BlackBox::NotRun => "not_run",
    };
    let mut rec = json!({
        "schedule": r.index,
        "accepted": r.accepted(),
        "black_box": black_box,
        "white_box": r.white_box.is_ok(),
        "cases": r.cases,
    });
    if let BlackBox::Rejected { obj, counterexample } = &r.black_box {
        let events: Vec<EventRecord> = counterexample.events().iter().map(EventRecord::from).collect();
        rec["counterexample"] = json!({"object": obj, "events": events});
    }
    if !r.accepted() {
        rec["reason"] = json!(r.summary());
    }
    rec
}

struct Output<'a> {
    dir: &'a Path,
    verdicts: BufWriter<File>,
    record: bool,
    max_failures: usize,
    written: usize,
    error: Option<std::io::Error>,
}

impl Output<'_> {
    fn write(&mut self, r: &ScheduleResult) -> std::io::Result<()> {
        writeln!(self.verdicts, "{}", verdict_record(r))?;
        let Some(trace) = &r.trace else { return Ok(()) };
        if !r.accepted() && self.written < self.max_failures {
            self.written += 1;
            fs::write(self.dir.join(format!("fail-{:06}.jsonl", r.index)), trace.to_jsonl())?;
        } else if self.record && r.accepted() {
            fs::write(self.dir.join(format!("trace-{:06}.jsonl", r.index)), trace.to_jsonl())?;
        }
        Ok(())
    }
}

fn stat(s: &PathStat) -> String {
    match (s.min, s.max) {
        (Some(lo), Some(hi)) if lo == hi => format!("{hi} ({} calls)", s.calls),
        (Some(lo), Some(hi)) => format!("{lo}..{hi} ({} calls)", s.calls),
        _ => "-".into(),
    }
}

fn print_report(r: &CampaignReport, shown: &[String]) {
    println!("schedules run          {}", r.schedules);
    println!("accepted               {}", r.accepted);
    println!("rejected               {}", r.rejected);
    println!("  black-box            {}", r.black_box_rejected);
    println!("  white-box            {}", r.white_box_rejected);
    println!("invariant violations   {}", r.violations);
    if r.errors > 0 {
        println!("machine errors         {}", r.errors);
    }
    println!("budget exceeded        {}", r.budget_exceeded);
    println!("pending histories      {}", r.pending_histories);
    println!("case histogram         {}", r.cases);
    println!("max register ops/call  {}", r.steps.max_per_call());
    println!("  contended            {}", stat(&r.steps.contended));
    println!("  guard-fail           {}", stat(&r.steps.guard_fail));
    println!("  no-op                {}", stat(&r.steps.no_op));
    println!("  read                 {}", stat(&r.steps.read));
    if r.winner_checked > 0 {
        println!("single winner          {} checked, {} failed", r.winner_checked, r.winner_failures);
    }
    for line in shown {
        println!("{line}");
    }
}

pub fn run(args: SimulateArgs) -> u8 {
    let config = match config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return USAGE;
        }
    };
    let mut out = match &args.out {
        Some(dir) => {
            let opened = fs::create_dir_all(dir).and_then(|_| File::create(dir.join("verdicts.jsonl")));
            match opened {
                Ok(f) => Some(Output {
                    dir,
                    verdicts: BufWriter::new(f),
                    record: args.record,
                    max_failures: args.max_failures,
                    written: 0,
                    error: None,
                }),
                Err(e) => {
                    eprintln!("error: {}: {e}", dir.display());
                    return USAGE;
                }
            }
        }
        None => None,
    };
    let mut shown = Vec::new();
    let result = run_campaign(&config, |r| {
        if !r.accepted() && shown.len() < 5 {
            shown.push(format!("schedule {}: {}", r.index, r.summary()));
        }
        if let Some(o) = out.as_mut() {
            if o.error.is_none() {
                if let Err(e) = o.write(r) {
                    o.error = Some(e);
                }
            }
        }
    });
    let report = match result {
        Ok(r) => r,
        Err(e @ (CampaignError::Config(_) | CampaignError::Ceiling { .. })) => {
            eprintln!("error: {e}");
            return USAGE;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return REJECTED;
        }
    };
    if let Some(mut o) = out {
        let flushed = o.verdicts.flush();
        if let Some(e) = o.error.or(flushed.err()) {
            eprintln!("error: writing to {}: {e}", o.dir.display());
            return USAGE;
        }
        if o.written > 0 {
            shown.push(format!("failing traces written to {}", o.dir.display()));
        }
    }
    print_report(&report, &shown);
    if report.rejected > 0 {
        REJECTED
    } else if report.budget_exceeded > 0 {
        BUDGET
    } else {
        PASS
    }
}
