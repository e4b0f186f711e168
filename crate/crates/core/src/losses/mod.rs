//! Re-weighted, logit-adjusted softmax cross-entropy and evaluation metrics.
//!
//! Adjustments only ever enter the training loss. Predictions are always the
//! plain argmax of the logits.

mod adjusted;
mod metrics;

pub use adjusted::*;
pub use metrics::*;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Base,
    Ret,
    Fused,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Base, Branch::Ret, Branch::Fused];

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Base => "base",
            Branch::Ret => "ret",
            Branch::Fused => "fused",
        }
    }
}

/// A batch of class scores tagged with the branch that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    pub values: Array2<f64>,
    pub branch: Branch,
}

impl Logits {
    pub fn new(values: Array2<f64>, branch: Branch) -> Self {
        Logits { values, branch }
    }

    pub fn predict(&self) -> Vec<usize> {
        predict(self.values.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspace::ClassStats;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(rng: &mut ChaCha8Rng, n: usize, l: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, l), |_| rng.random_range(-3.0..3.0))
    }

    // Loss recomputed from scratch with the naive formula, no max shift.
    fn naive_loss(logits: &Array2<f64>, labels: &[usize], spec: &LossSpec) -> f64 {
        let (n, l) = logits.dim();
        let mut total = 0.0;
        for i in 0..n {
            let y = labels[i];
            let z: Vec<f64> = (0..l)
                .map(|c| match &spec.adjustment {
                    Adjustment::Offset(d) => logits[[i, c]] + spec.tau * d[c],
                    Adjustment::TrueClassMargin(m) => {
                        logits[[i, c]] - if c == y { spec.tau * m[y] } else { 0.0 }
                    }
                })
                .collect();
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            for c in 0..l {
                let t = if c == y { 1.0 - spec.epsilon } else { 0.0 } + spec.epsilon / l as f64;
                total -= spec.alpha[y] * t * (z[c].exp() / denom).ln();
            }
        }
        total / n as f64
    }

    fn max_fd_error(logits: &Array2<f64>, labels: &[usize], spec: &LossSpec) -> f64 {
        let h = 1e-5;
        let grad = adjusted_ce(logits.view(), labels, spec).unwrap().grad;
        let mut worst: f64 = 0.0;
        for idx in ndarray::indices(logits.dim()) {
            let mut plus = logits.clone();
            plus[idx] += h;
            let mut minus = logits.clone();
            minus[idx] -= h;
            let num = (adjusted_ce(plus.view(), labels, spec).unwrap().loss
                - adjusted_ce(minus.view(), labels, spec).unwrap().loss)
                / (2.0 * h);
            let a = grad[idx];
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-4));
        }
        worst
    }

    fn stats(counts: Vec<usize>) -> ClassStats {
        ClassStats::from_counts(counts)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let st = stats(vec![400, 120, 37, 9, 2]);
        let specs = [
            LossSpec::plain(5),
            lace_spec(&st, 1.0).unwrap().with_epsilon(0.1),
            balce_spec(&st).unwrap(),
            ldam_spec(&st).unwrap().with_epsilon(0.1),
            LossSpec::plain(5).with_alpha(reweight(&st, Reweight::InvLog).unwrap()),
        ];
        for spec in &specs {
            for _ in 0..20 {
                let logits = random_logits(&mut rng, 4, 5);
                let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
                assert!(max_fd_error(&logits, &labels, spec) < 1e-5);
            }
        }
    }

    #[test]
    fn stable_loss_matches_naive_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = stats(vec![50, 20, 5]);
        for spec in [lace_spec(&st, 1.5).unwrap().with_epsilon(0.2), ldam_spec(&st).unwrap()] {
            let logits = random_logits(&mut rng, 6, 3);
            let labels = [0, 1, 2, 2, 1, 0];
            let fast = adjusted_ce(logits.view(), &labels, &spec).unwrap().loss;
            assert!((fast - naive_loss(&logits, &labels, &spec)).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_ignores_adjustment() {
        // The metric layer takes logits as they are; the spec never reaches it.
        let logits = ndarray::array![[2.0, 1.9]];
        assert_eq!(Logits::new(logits, Branch::Base).predict(), vec![0]);
    }

    proptest! {
        #[test]
        fn delta_shift_is_invisible(
            seed in 0u64..1000,
            shift in -50.0f64..50.0,
            tau in 0.0f64..3.0,
            eps in 0.0f64..0.5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = 6;
            let logits = random_logits(&mut rng, 5, l);
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..l)).collect();
            let delta: Vec<f64> = (0..l).map(|_| rng.random_range(-4.0..0.0)).collect();
            let base = LossSpec { adjustment: Adjustment::Offset(delta.clone()), ..LossSpec::plain(l) }
                .with_tau(tau)
                .with_epsilon(eps);
            let shifted = LossSpec {
                adjustment: Adjustment::Offset(delta.iter().map(|d| d + shift).collect()),
                ..base.clone()
            };
            let a = adjusted_ce(logits.view(), &labels, &base).unwrap();
            let b = adjusted_ce(logits.view(), &labels, &shifted).unwrap();
            prop_assert!((a.loss - b.loss).abs() < 1e-10);
            prop_assert!((&a.grad - &b.grad).iter().all(|v| v.abs() < 1e-10));

            let moved = logits.mapv(|v| v + shift);
            let c = adjusted_ce(moved.view(), &labels, &base).unwrap();
            prop_assert!((a.loss - c.loss).abs() < 1e-10);
        }

        #[test]
        fn specializations_reduce_to_plain_ce(
            seed in 0u64..1000,
            counts in proptest::collection::vec(1usize..500, 2..8),
        ) {
            let l = counts.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logits = random_logits(&mut rng, 7, l);
            let labels: Vec<usize> = (0..7).map(|_| rng.random_range(0..l)).collect();
            let st = stats(counts.clone());
            let plain = adjusted_ce(logits.view(), &labels, &LossSpec::plain(l)).unwrap();

            let lace0 = adjusted_ce(logits.view(), &labels, &lace_spec(&st, 0.0).unwrap()).unwrap();
            prop_assert!((lace0.loss - plain.loss).abs() < 1e-12);

            // BalCE is per-sample CE scaled by 1 / N_y.
            let bal = adjusted_ce(logits.view(), &labels, &balce_spec(&st).unwrap()).unwrap();
            let mut expected = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let row = logits.slice(ndarray::s![i..i + 1, ..]);
                let per = adjusted_ce(row, &[y], &LossSpec::plain(l)).unwrap().loss;
                expected += per / counts[y] as f64;
            }
            prop_assert!((bal.loss - expected / 7.0).abs() < 1e-12);
        }

        #[test]
        fn balanced_error_ignores_test_multiplicity(
            preds in proptest::collection::vec(0usize..4, 8..40),
            labels_seed in 0u64..1000,
            dup in 1usize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(labels_seed);
            let labels: Vec<usize> = preds.iter().map(|_| rng.random_range(0..4)).collect();
            let be = balanced_error(&preds, &labels, 4).unwrap().value;
            let target = labels[0];
            let (mut p2, mut l2) = (preds.clone(), labels.clone());
            for (&p, &y) in preds.iter().zip(&labels) {
                if y == target {
                    for _ in 0..dup {
                        p2.push(p);
                        l2.push(y);
                    }
                }
            }
            let be2 = balanced_error(&p2, &l2, 4).unwrap().value;
            prop_assert!((be - be2).abs() < 1e-12);
        }

        #[test]
        fn bucket_means_match_tally(
            preds in proptest::collection::vec(0usize..6, 30..60),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = preds.iter().map(|_| rng.random_range(0..6)).collect();
            let st = stats(vec![500, 300, 90, 40, 10, 3]);
            let buckets = crate::dataspace::bucketize(&st).unwrap();
            let acc = per_class_accuracy(&preds, &labels, 6);
            let got = bucket_accuracy(&acc, &buckets).unwrap();
            for bucket in crate::dataspace::Bucket::ALL {
                let mut sum = 0.0;
                let mut n = 0;
                for c in 0..6 {
                    if buckets[c] != bucket {
                        continue;
                    }
                    let total = labels.iter().filter(|&&y| y == c).count();
                    if total == 0 {
                        continue;
                    }
                    let right = labels.iter().zip(&preds).filter(|&(&y, &p)| y == c && p == c).count();
                    sum += right as f64 / total as f64;
                    n += 1;
                }
                let expected = (n > 0).then(|| sum / n as f64);
                prop_assert_eq!(got.get(bucket), expected);
            }
        }
    }
}
