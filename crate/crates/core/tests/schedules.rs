//! Schedule enumeration against a brute-force oracle: drive the machine with
//! every pid sequence of a fixed length and collect the distinct effective
//! schedules of the runs that finish (entries for finished processes are
//! skipped by the machine).

use std::collections::HashSet;

use maxcas::caslib::Pid;
use maxcas::machine::{enumerate_schedules, Machine, MachineConfig, ProcessProgram, ProgramOp, StepOutcome};

fn effective_schedules(config: &MachineConfig, programs: &[ProcessProgram], len: u32) -> HashSet<Vec<usize>> {
    let root = Machine::new(config, programs).unwrap().without_recording();
    let mut seen = HashSet::new();
    for bits in 0..1u32 << len {
        let mut m = root.clone();
        let mut taken = Vec::new();
        for k in 0..len {
            let pid = 1 + (bits >> k & 1) as usize;
            if m.step(Pid::new(pid)).unwrap() == StepOutcome::Stepped {
                taken.push(pid);
            }
        }
        if m.is_finished() {
            seen.insert(taken);
        }
    }
    seen
}

fn enumerated(config: &MachineConfig, programs: &[ProcessProgram]) -> HashSet<Vec<usize>> {
    let all: Vec<Vec<usize>> = enumerate_schedules(config, programs, usize::MAX)
        .unwrap()
        .map(|s| s.iter().map(|p| p.get()).collect())
        .collect();
    let set: HashSet<_> = all.iter().cloned().collect();
    assert_eq!(set.len(), all.len(), "enumeration yielded a duplicate");
    set
}

#[test]
fn one_step_each() {
    let programs = [
        ProcessProgram::new(1, vec![ProgramOp::read()]),
        ProcessProgram::new(2, vec![ProgramOp::read()]),
    ];
    let config = MachineConfig::single(0);
    assert_eq!(enumerated(&config, &programs).len(), 2);
    assert_eq!(effective_schedules(&config, &programs, 2), enumerated(&config, &programs));
}

#[test]
fn two_steps_each() {
    let programs = [
        ProcessProgram::new(1, vec![ProgramOp::read(); 2]),
        ProcessProgram::new(2, vec![ProgramOp::read(); 2]),
    ];
    let config = MachineConfig::single(0);
    assert_eq!(enumerated(&config, &programs).len(), 6);
    assert_eq!(effective_schedules(&config, &programs, 4), enumerated(&config, &programs));
}

#[test]
fn contended_pair_matches_brute_force() {
    let programs = [
        ProcessProgram::new(1, vec![ProgramOp::cas(0, 1)]),
        ProcessProgram::new(2, vec![ProgramOp::cas(0, 2)]),
    ];
    let config = MachineConfig::single(0);
    let oracle = effective_schedules(&config, &programs, 20);
    let got = enumerated(&config, &programs);
    assert!(got.len() <= 184_756);
    assert_eq!(got, oracle);
}
