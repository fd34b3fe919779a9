use overparam_runner::checks;

#[test]
fn every_self_check_passes() {
    for c in checks::all() {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}
