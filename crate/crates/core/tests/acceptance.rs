//! Full acceptance battery. Prints one pass/fail line per criterion (run
//! with `-- --nocapture` to see them on success) and fails if any
//! criterion does.

use byzgossip_core::verify;

#[test]
fn acceptance_criteria() {
    let results = verify::run_all();
    for r in &results {
        println!("{}", r.line());
    }
    let failures: Vec<String> =
        results.iter().filter(|r| !r.passed).map(|r| r.line()).collect();
    assert!(
        failures.is_empty(),
        "{} of {} criteria failed:\n{}",
        failures.len(),
        results.len(),
        failures.join("\n")
    );
}
