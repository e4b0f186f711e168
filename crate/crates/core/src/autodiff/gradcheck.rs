use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, row, col)` of the worst coordinate.
    pub worst: Option<(usize, usize, usize)>,
    pub checked: usize,
}

/// Compares `analytic[i]` with central differences of `loss` with respect
/// to `inputs[i]`, on up to `coords` random coordinates of each input.
/// Inputs are restored before returning.
pub fn grad_check<F>(
    inputs: &mut [Array2<f64>],
    analytic: &[Array2<f64>],
    coords: usize,
    seed: u64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&[Array2<f64>]) -> f64,
{
    assert_eq!(inputs.len(), analytic.len(), "one analytic gradient per input");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for i in 0..inputs.len() {
        assert_eq!(inputs[i].dim(), analytic[i].dim(), "gradient shape of input {i}");
        let (rows, cols) = inputs[i].dim();
        let total = rows * cols;
        if total == 0 {
            continue;
        }
        for flat in sample(&mut rng, total, coords.min(total)) {
            let (r, c) = (flat / cols, flat % cols);
            let orig = inputs[i][[r, c]];
            inputs[i][[r, c]] = orig + FD_STEP;
            let up = loss(inputs);
            inputs[i][[r, c]] = orig - FD_STEP;
            let down = loss(inputs);
            inputs[i][[r, c]] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic[i][[r, c]], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = Some((i, r, c));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cubic(x: &[Array2<f64>]) -> f64 {
        x[0].iter().map(|v| v * v * v).sum()
    }

    #[test]
    fn exact_gradient_passes() {
        let mut x = vec![array![[0.5, -1.2], [2.0, 0.1]]];
        let g = vec![x[0].mapv(|v| 3.0 * v * v)];
        let r = grad_check(&mut x, &g, 4, 0, cubic);
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-8);
        assert_eq!(x[0], array![[0.5, -1.2], [2.0, 0.1]]);
    }

    #[test]
    fn sign_flip_reports_two() {
        let mut x = vec![array![[0.5, -1.2, 2.0]]];
        let g = vec![x[0].mapv(|v| -3.0 * v * v)];
        let r = grad_check(&mut x, &g, 3, 0, cubic);
        assert!((r.max_rel_error - 2.0).abs() < 1e-6);
    }
}
