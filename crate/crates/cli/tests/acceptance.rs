//! One line per acceptance criterion; the target fails if any criterion fails.

use radbath_cli::acceptance::{run_criterion, table};

fn main() {
    let outcomes: Vec<_> = (1..=10)
        .map(|id| {
            let o = run_criterion(id);
            println!("{}", o.line());
            o
        })
        .collect();
    let summary = table(&outcomes);
    println!("{}", summary.lines().last().unwrap_or_default());
    if outcomes.iter().any(|o| !o.passed) {
        std::process::exit(1);
    }
}
