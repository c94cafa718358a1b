use csplab_core::budget::Budget;
use csplab_core::oracle::{differential_run, corpus_entry};
use std::time::Instant;

fn main() {
    let budget = Budget::default();
    for name in ["a2maj", "a2aff", "z3aff", "a2semi", "a2or", "m4mix", "s2s2", "p4semiaff"] {
        let entry = corpus_entry(name).unwrap();
        let started = Instant::now();
        match differential_run(&[(name.to_string(), entry.algebra)], 40, 20260810, &budget) {
            Ok(report) => {
                println!(
                    "{name}: {} instances, {} disagreements, sat={} unsat={}, p50={}ms max={}ms, total {:?}",
                    report.total,
                    report.disagreements.len(),
                    report.per_algebra[0].sat,
                    report.per_algebra[0].unsat,
                    report.per_algebra[0].solver_ms_p50,
                    report.per_algebra[0].solver_ms_max,
                    started.elapsed()
                );
                for d in report.disagreements.iter().take(3) {
                    println!("   DISAGREE seed={} solver={} oracle={}", d.seed, d.solver, d.oracle);
                }
            }
            Err(e) => println!("{name}: ERROR {e}"),
        }
    }
}
