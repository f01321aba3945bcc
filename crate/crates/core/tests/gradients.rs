use std::time::Instant;

use gla_core::gradsuite::{run_suite, SuiteSize, TOLERANCE};

fn assert_suite(size: SuiteSize) {
    let start = Instant::now();
    let outcomes = run_suite(size).unwrap();
    for o in &outcomes {
        println!("{size:>5} {:<34} {:.3e}", o.name, o.max_relative_error);
    }
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).collect();
    assert!(failed.is_empty(), "over {TOLERANCE:e}: {failed:?}");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn small_suite_within_tolerance() {
    assert_suite(SuiteSize::Small);
}

#[test]
fn full_suite_within_tolerance() {
    assert_suite(SuiteSize::Full);
}
