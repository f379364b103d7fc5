use manigrad::gradcheck::{network_suite, primitive_suite, CheckResult};

fn assert_all_pass(results: &[CheckResult]) {
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn every_primitive_matches_central_differences() {
    let results = primitive_suite(100, 7).unwrap();
    assert!(results.len() >= 60);
    assert!(results.iter().all(|r| r.trials == 100));
    assert_all_pass(&results);
}

#[test]
fn network_gradients_match_central_differences() {
    let results = network_suite(100, 7).unwrap();
    for r in &results {
        println!("{:<45} {:.2e}", r.name, r.max_error);
    }
    assert_all_pass(&results);
}
