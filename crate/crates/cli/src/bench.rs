use maxcas::bench::{run_bench, BenchConfig, Contention};
use serde_json::json;

use crate::{BenchArgs, ContentionArg, PASS, USAGE};

pub fn run(args: BenchArgs) -> u8 {
    let levels: &[Contention] = match args.contention {
        ContentionArg::Low => &[Contention::Low],
        ContentionArg::High => &[Contention::High],
        ContentionArg::Both => &[Contention::Low, Contention::High],
    };
    if !args.json {
        println!(
            "{:<10} {:<10} {:>7} {:>10} {:>10} {:>14} {:>22} {:>14}",
            "impl", "contention", "threads", "cas calls", "successes", "cas/s", "reg ops/contended cas", "guard-fail ops"
        );
    }
    for &contention in levels {
        let config = BenchConfig {
            threads: args.threads,
            ops: args.ops,
            contention,
        };
        let rows = match run_bench(&config) {
            Ok(rows) => rows,
            Err(e) => {
                eprintln!("error: {e}");
                return USAGE;
            }
        };
        for row in rows {
            if args.json {
                println!("{}", json!(row));
                continue;
            }
            let (contended, guard) = match row.register_ops {
                Some(o) => (
                    format!("max {} mean {:.2}", o.contended_max, o.contended_mean),
                    o.guard_fail_max.to_string(),
                ),
                None => ("-".into(), "-".into()),
            };
            println!(
                "{:<10} {:<10} {:>7} {:>10} {:>10} {:>14.0} {:>22} {:>14}",
                row.implementation,
                row.contention,
                row.threads,
                row.cas_calls,
                row.successes,
                row.cas_per_sec,
                contended,
                guard
            );
        }
    }
    PASS
}
