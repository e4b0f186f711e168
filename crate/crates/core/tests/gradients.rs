mod support {
    pub mod grad_cases;
}

use support::grad_cases::CASES;

const INSTANCES: u64 = 100;
const TOLERANCE: f64 = 1e-5;

#[test]
fn every_backward_matches_central_differences() {
    for (name, case) in CASES {
        let worst = (0..INSTANCES).map(case).fold(0.0, f64::max);
        assert!(worst < TOLERANCE, "{name}: worst relative error {worst:e}");
    }
}

#[test]
fn a_wrong_gradient_is_caught() {
    use ndarray::array;
    use rac_core::autodiff::grad_check;
    let mut x = [array![[0.3, -1.2], [2.0, 0.7]]];
    let wrong = [x[0].mapv(|v| 2.0 * v + 0.01)];
    let report = grad_check(&mut x, &wrong, 4, 0, |p| p[0].mapv(|v| v * v).sum());
    assert!(report.max_rel_error > 1e-3);
}

