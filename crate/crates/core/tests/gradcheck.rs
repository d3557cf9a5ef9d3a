mod common;

#[test]
fn backward_matches_finite_differences() {
    let failures = common::gradcheck::check_seeds(0..20);
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
