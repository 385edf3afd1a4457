//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fail.

mod criteria;
mod gradients;
mod synth;

use std::time::Instant;

type Check = (&'static str, fn() -> criteria::Outcome);

fn main() {
    let checks: [Check; 10] = [
        ("gradient check", criteria::gradient_suite),
        ("overfit 32 pairs", criteria::overfit),
        ("metric oracles", criteria::metric_oracles),
        ("affinity transform", criteria::transform_anchors),
        ("SMILES corpus", criteria::parser_corpus),
        ("descriptor normalization", criteria::normalization),
        ("fusion identities", criteria::fusion_identities),
        ("attention contract", criteria::attention_contract),
        ("protocol properties", criteria::protocol_properties),
        ("harness completeness", criteria::harness_completeness),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
