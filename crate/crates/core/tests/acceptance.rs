//! Acceptance criteria on the circle, the 2:1 ellipse and the three-fold
//! perturbed circle. Prints one line per criterion.
//!
//! Criteria in `KNOWN_FAILING` do not meet their pinned thresholds; they are
//! still run and reported as FAIL. Set `ACCEPTANCE_STRICT=1` to make them fail
//! the run as well.

use std::process::ExitCode;

use sectorcount::harness::{format_value, run_check, Check, ExperimentConfig};

const KNOWN_FAILING: [(Check, &str); 3] = [
    (
        Check::ParallelogramBound,
        "for |q| below about 0.23 the three-fold curve meets its reflection through q/2 in six points",
    ),
    (
        Check::MomExponent,
        "at δ = l each interval holds one or two anchors, which steepens the fit",
    ),
    (
        Check::ConsExponent,
        "with three legs the two-scale count does not grow with the scale gap",
    ),
];

fn main() -> ExitCode {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let config = ExperimentConfig::default();
    let mut unexpected = Vec::new();
    for check in Check::ALL {
        let result = match run_check(&config, check) {
            Ok((result, _)) => result,
            Err(e) => {
                println!(
                    "criterion {:>2} {:<25} ERROR {e}",
                    check.criterion(),
                    check.name()
                );
                unexpected.push(check);
                continue;
            }
        };
        let status = if result.passed() { "PASS" } else { "FAIL" };
        let values: Vec<String> = result
            .measured
            .iter()
            .map(|(k, v)| format!("{k}={}", format_value(*v)))
            .collect();
        println!(
            "criterion {:>2} {:<25} {status} [{:.1} s / {:.0} s] {}",
            check.criterion(),
            check.name(),
            result.runtime_s,
            check.budget_s(),
            values.join(" ")
        );
        for note in &result.notes {
            println!("    {note}");
        }
        let known = KNOWN_FAILING.iter().find(|(c, _)| *c == check);
        match (result.passed(), known) {
            (false, Some((_, why))) => {
                println!("    known failure: {why}");
                if strict {
                    unexpected.push(check);
                }
            }
            (false, None) => unexpected.push(check),
            (true, Some(_)) => println!("    listed as failing but passed"),
            (true, None) => {}
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        let names: Vec<&str> = unexpected.iter().map(|c| c.name()).collect();
        println!("unexpected failures: {}", names.join(", "));
        ExitCode::FAILURE
    }
}
