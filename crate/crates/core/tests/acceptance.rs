//! Acceptance suite: runs every criterion at its pinned tolerance and
//! prints one pass/fail line per criterion (visible with `-- --nocapture`).

use matchkit::selftest;

#[test]
fn acceptance_criteria() {
    let results = selftest::run_all();
    for r in &results {
        println!("{}", r.line());
    }
    let failures: Vec<_> = results.iter().filter(|r| !r.pass).collect();
    assert!(
        failures.is_empty(),
        "{} criterion(s) failed:\n{}",
        failures.len(),
        failures
            .iter()
            .map(|r| r.line())
            .collect::<Vec<_>>()
            .join("\n")
    );
}
