use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, Split};
use crate::error::{RacError, Result};

// Independent RNG streams derived from one seed, so that generating the
// test set never depends on whether the training set was drawn first.
const STREAM_GEOMETRY: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_AUX_GEOMETRY: u64 = 3;
const STREAM_AUX_SAMPLES: u64 = 4;

/// Shape of the per-class count decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// `n_c = round(n_max * IF^(-c / (L - 1)))`.
    Exponential,
    /// First half of the classes at `n_max`, second half at `round(n_max / IF)`.
    Step,
    /// Every class at `n_max`; the imbalance factor is ignored.
    Uniform,
}

impl std::str::FromStr for Profile {
    type Err = RacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(Profile::Exponential),
            "step" => Ok(Profile::Step),
            "uniform" => Ok(Profile::Uniform),
            other => Err(RacError::config(format!("unknown profile `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub classes: usize,
    pub dim: usize,
    pub n_max: usize,
    pub imbalance_factor: f64,
    pub profile: Profile,
    pub seed: u64,
    /// Mean distance between two class centroids.
    pub cluster_sep: f64,
    /// Per-class isotropic standard deviation is drawn uniformly from this interval.
    pub spread_range: (f64, f64),
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            classes: 20,
            dim: 32,
            n_max: 1000,
            imbalance_factor: 100.0,
            profile: Profile::Exponential,
            seed: 0,
            cluster_sep: 5.0,
            spread_range: (0.5, 1.5),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.imbalance_factor.is_finite() && self.imbalance_factor >= 1.0) {
            return Err(RacError::config(format!(
                "imbalance factor must be >= 1, got {}",
                self.imbalance_factor
            )));
        }
        if self.classes < 2 {
            return Err(RacError::config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.dim == 0 {
            return Err(RacError::config("feature dimension must be positive"));
        }
        if (self.n_max as f64) / self.imbalance_factor < 1.0 {
            return Err(RacError::config(format!(
                "n_max / imbalance factor must be >= 1 (n_max = {}, imbalance factor = {})",
                self.n_max, self.imbalance_factor
            )));
        }
        let (lo, hi) = self.spread_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(RacError::config(format!(
                "spread range must be a positive interval, got [{lo}, {hi}]"
            )));
        }
        if !(self.cluster_sep > 0.0 && self.cluster_sep.is_finite()) {
            return Err(RacError::config("cluster separation must be positive"));
        }
        Ok(())
    }
}

/// Per-class sample counts for a configuration.
pub fn class_counts(config: &GenConfig) -> Result<Vec<usize>> {
    config.validate()?;
    let l = config.classes;
    let n_max = config.n_max as f64;
    let ratio = config.imbalance_factor;
    let counts = (0..l)
        .map(|c| match config.profile {
            Profile::Exponential => {
                let exponent = -(c as f64) / ((l - 1) as f64);
                (n_max * ratio.powf(exponent)).round() as usize
            }
            Profile::Step => {
                if c < l / 2 {
                    config.n_max
                } else {
                    (n_max / ratio).round() as usize
                }
            }
            Profile::Uniform => config.n_max,
        })
        .collect();
    Ok(counts)
}

/// Class centroids and spreads shared by every split drawn from one config.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassGeometry {
    pub centroids: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
}

impl ClassGeometry {
    pub fn from_config(config: &GenConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.seed, STREAM_GEOMETRY);
        // Coordinates ~ N(0, s^2) give E|mu_a - mu_b| ~ s * sqrt(2D).
        let scale = config.cluster_sep / (2.0 * config.dim as f64).sqrt();
        let centroids = (0..config.classes)
            .map(|_| gaussian_vec(&mut rng, config.dim, scale))
            .collect();
        let (lo, hi) = config.spread_range;
        let sigmas = (0..config.classes)
            .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect();
        Ok(ClassGeometry { centroids, sigmas })
    }

    pub fn classes(&self) -> usize {
        self.centroids.len()
    }

    fn draw(&self, class: usize, rng: &mut ChaCha8Rng) -> Sample {
        let sigma = self.sigmas[class];
        let features = self.centroids[class]
            .iter()
            .map(|&mu| {
                let z: f64 = rng.sample(StandardNormal);
                mu + sigma * z
            })
            .collect();
        Sample {
            features,
            label: class,
        }
    }

    fn draw_counts(&self, counts: &[usize], rng: &mut ChaCha8Rng) -> Vec<Sample> {
        let mut samples = Vec::with_capacity(counts.iter().sum());
        for (class, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                samples.push(self.draw(class, rng));
            }
        }
        samples
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        })
        .collect()
}

/// Draws a long-tailed training set: one isotropic Gaussian cluster per
/// class, with class 0 the most frequent.
pub fn generate_longtail(config: &GenConfig) -> Result<Dataset> {
    let counts = class_counts(config)?;
    let geometry = ClassGeometry::from_config(config)?;
    let samples = geometry.draw_counts(&counts, &mut stream(config.seed, STREAM_TRAIN));
    Dataset::new(samples, config.classes, config.dim, Split::Train)
}

/// Draws `n_per_class` fresh samples per class from the same class
/// geometry as [`generate_longtail`] with the same config.
pub fn make_balanced_testset(config: &GenConfig, n_per_class: usize) -> Result<Dataset> {
    if n_per_class < 1 {
        return Err(RacError::config("test set needs at least one sample per class"));
    }
    let geometry = ClassGeometry::from_config(config)?;
    let counts = vec![n_per_class; config.classes];
    let samples = geometry.draw_counts(&counts, &mut stream(config.seed, STREAM_TEST));
    Dataset::new(samples, config.classes, config.dim, Split::Test)
}

/// An external labeled pool living in the same feature space as a target
/// dataset but carrying its own label vocabulary.
///
/// Auxiliary class `a` is anchored near the centroid of target class
/// `perm[a mod L]` (a seeded permutation), displaced by `anchor_jitter`
/// times the target's mean centroid distance. Its labels therefore say
/// something about target classes without naming them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxConfig {
    pub classes: usize,
    pub per_class: usize,
    pub anchor_jitter: f64,
    pub spread_range: (f64, f64),
    pub seed: u64,
}

impl Default for AuxConfig {
    fn default() -> Self {
        AuxConfig {
            classes: 20,
            per_class: 100,
            anchor_jitter: 0.1,
            spread_range: (0.5, 1.5),
            seed: 1,
        }
    }
}

/// Generates an auxiliary pool for `target`. Labels are auxiliary class
/// ids in `0..aux.classes`, ordered class by class.
pub fn generate_auxiliary(target: &GenConfig, aux: &AuxConfig) -> Result<Dataset> {
    if aux.classes == 0 || aux.per_class == 0 {
        return Err(RacError::config("auxiliary pool needs classes and samples"));
    }
    let (lo, hi) = aux.spread_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(RacError::config("auxiliary spread range must be positive"));
    }
    let target_geometry = ClassGeometry::from_config(target)?;
    let mut rng = stream(aux.seed, STREAM_AUX_GEOMETRY);
    let l = target.classes;
    let mut perm: Vec<usize> = (0..l).collect();
    for i in (1..l).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let jitter_scale = aux.anchor_jitter * target.cluster_sep / (2.0 * target.dim as f64).sqrt();
    let mut centroids = Vec::with_capacity(aux.classes);
    let mut sigmas = Vec::with_capacity(aux.classes);
    for a in 0..aux.classes {
        let anchor = &target_geometry.centroids[perm[a % l]];
        let offset = gaussian_vec(&mut rng, target.dim, jitter_scale);
        centroids.push(anchor.iter().zip(&offset).map(|(m, o)| m + o).collect());
        sigmas.push(if hi > lo { rng.random_range(lo..hi) } else { lo });
    }
    let geometry = ClassGeometry { centroids, sigmas };
    let counts = vec![aux.per_class; aux.classes];
    let samples = geometry.draw_counts(&counts, &mut stream(aux.seed, STREAM_AUX_SAMPLES));
    Dataset::new(samples, aux.classes, target.dim, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(l: usize, n_max: usize, ratio: f64) -> GenConfig {
        GenConfig {
            classes: l,
            dim: 4,
            n_max,
            imbalance_factor: ratio,
            ..GenConfig::default()
        }
    }

    #[test]
    fn unit_imbalance_is_uniform() {
        let counts = class_counts(&cfg(10, 1000, 1.0)).unwrap();
        assert!(counts.iter().all(|&n| n == 1000));
    }

    #[test]
    fn exponential_second_class_count() {
        // 1000 * 100^(-1/9) = 599.48...
        let oracle = (1000.0_f64 * (-(100.0_f64.ln()) / 9.0).exp()).round() as usize;
        assert_eq!(oracle, 599);
        let counts = class_counts(&cfg(10, 1000, 100.0)).unwrap();
        assert_eq!(counts[1], oracle);
        assert_eq!(counts[0], 1000);
        assert_eq!(counts[9], 10);
    }

    #[test]
    fn places_like_minimum_count() {
        let counts = class_counts(&cfg(365, 2500, 500.0)).unwrap();
        assert_eq!(*counts.last().unwrap(), 5);
    }

    #[test]
    fn step_profile_halves() {
        let counts = class_counts(&GenConfig {
            profile: Profile::Step,
            ..cfg(4, 100, 10.0)
        })
        .unwrap();
        assert_eq!(counts, vec![100, 100, 10, 10]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(class_counts(&cfg(10, 1000, 0.5)).is_err());
        assert!(class_counts(&cfg(1, 1000, 1.0)).is_err());
        assert!(class_counts(&cfg(10, 50, 100.0)).is_err());
        let bad_spread = GenConfig {
            spread_range: (0.0, 1.0),
            ..cfg(10, 100, 1.0)
        };
        assert!(generate_longtail(&bad_spread).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let c = cfg(5, 50, 10.0);
        assert_eq!(generate_longtail(&c).unwrap(), generate_longtail(&c).unwrap());
        assert_eq!(
            make_balanced_testset(&c, 3).unwrap(),
            make_balanced_testset(&c, 3).unwrap()
        );
        let other = GenConfig { seed: 9, ..c.clone() };
        assert_ne!(generate_longtail(&c).unwrap(), generate_longtail(&other).unwrap());
    }

    #[test]
    fn balanced_testset_counts() {
        let ds = make_balanced_testset(&cfg(10, 100, 10.0), 3).unwrap();
        assert_eq!(ds.len(), 30);
        let mut per = vec![0; 10];
        for s in ds.samples() {
            per[s.label] += 1;
        }
        assert!(per.iter().all(|&n| n == 3));
        let tiny = make_balanced_testset(&cfg(2, 10, 1.0), 1).unwrap();
        assert_eq!(tiny.len(), 2);
        assert!(make_balanced_testset(&cfg(2, 10, 1.0), 0).is_err());
    }

    #[test]
    fn test_draws_share_train_centroids() {
        let c = GenConfig {
            classes: 3,
            dim: 6,
            n_max: 10,
            imbalance_factor: 1.0,
            ..GenConfig::default()
        };
        let geometry = ClassGeometry::from_config(&c).unwrap();
        let n = 4000;
        let test = make_balanced_testset(&c, n).unwrap();
        for class in 0..3 {
            let sigma = geometry.sigmas[class];
            let members: Vec<_> = test.samples().iter().filter(|s| s.label == class).collect();
            for d in 0..6 {
                let mean = members.iter().map(|s| s.features[d]).sum::<f64>() / n as f64;
                let tol = 3.0 * sigma / (n as f64).sqrt();
                assert!((mean - geometry.centroids[class][d]).abs() < tol);
            }
        }
    }

    #[test]
    fn auxiliary_pool_shape() {
        let target = cfg(6, 60, 10.0);
        let aux = AuxConfig {
            classes: 9,
            per_class: 7,
            ..AuxConfig::default()
        };
        let pool = generate_auxiliary(&target, &aux).unwrap();
        assert_eq!(pool.len(), 63);
        assert_eq!(pool.classes(), 9);
        assert_eq!(pool.dim(), 4);
        assert_eq!(pool, generate_auxiliary(&target, &aux).unwrap());
    }
}
