use std::fs;
use std::io::{self, Read};

use maxcas::lincheck::{check_linearizable, History, LinearizationVerdict};
use maxcas::machine::{EventLog, EventRecord};
use serde_json::json;

use crate::{CheckArgs, BUDGET, PASS, REJECTED, USAGE};

fn read_input(args: &CheckArgs) -> io::Result<String> {
    if args.file.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(&args.file)
    }
}

fn events_json(h: &History) -> serde_json::Value {
    h.events().iter().map(|e| json!(EventRecord::from(e))).collect()
}

pub fn run(args: CheckArgs) -> u8 {
    let name = args.file.display();
    let text = match read_input(&args) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {name}: {e}");
            return USAGE;
        }
    };
    let log = match EventLog::parse(&text) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {name}: {e}");
            return USAGE;
        }
    };
    let history = match History::new(log.events) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("error: {name}: malformed history: {e}");
            return USAGE;
        }
    };
    let initial_for = |obj: usize| {
        args.initial
            .or_else(|| log.header.as_ref().and_then(|h| h.initial.get(obj).copied()))
            .unwrap_or(0)
    };

    let objects = history.objects();
    let mut code = PASS;
    let mut records = Vec::new();
    if objects.is_empty() && !args.json {
        println!("accepted (empty history)");
    }
    for obj in objects {
        let sub = history.for_object(obj);
        let verdict = check_linearizable(&sub, initial_for(obj), args.budget);
        let label = if history.objects().len() > 1 {
            format!("object {obj}: ")
        } else {
            String::new()
        };
        match &verdict {
            LinearizationVerdict::Accepted { witness } => {
                records.push(json!({"object": obj, "accepted": true, "witness": witness}));
                if !args.json {
                    println!("{label}accepted");
                    for (k, &i) in witness.iter().enumerate() {
                        let c = &sub.calls()[i];
                        let ret = c.ret().map_or("pending, takes effect".to_string(), |r| r.to_string());
                        println!("  {:>3}. pid {} {} -> {ret}", k + 1, c.pid, c.op);
                    }
                }
            }
            LinearizationVerdict::Rejected { counterexample } => {
                code = REJECTED;
                records.push(json!({
                    "object": obj,
                    "accepted": false,
                    "counterexample": events_json(counterexample),
                }));
                if !args.json {
                    println!(
                        "{label}rejected; shortest non-linearizable prefix has {} events:",
                        counterexample.len()
                    );
                    for e in counterexample.events() {
                        let ret = e.ret.map_or(String::new(), |r| format!(" -> {r}"));
                        println!("  step {:>4} {:?} pid {} {}{ret}", e.step, e.kind, e.pid, e.op);
                    }
                }
            }
            LinearizationVerdict::BudgetExceeded { explored } => {
                if code == PASS {
                    code = BUDGET;
                }
                records.push(json!({"object": obj, "accepted": null, "budget_exceeded": explored}));
                if !args.json {
                    println!("{label}budget exceeded after {explored} nodes; no verdict");
                }
            }
        }
    }
    if args.json {
        let accepted = match code {
            PASS => json!(true),
            REJECTED => json!(false),
            _ => json!(null),
        };
        println!("{}", json!({"accepted": accepted, "objects": records}));
    }
    code
}
