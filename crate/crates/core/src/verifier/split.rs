//! App-level train/validation/test partitioning.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VerifyError;

pub const TRAIN_FRACTION: f64 = 0.8;
pub const VALIDATION_FRACTION: f64 = 0.1;
pub const MIN_APPS: usize = 10;

/// Anything that can be partitioned by app.
pub trait SplitSample {
    fn app_id(&self) -> &str;
    fn is_positive(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

/// Sample indices per partition. All samples of an app share a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub apps: BTreeMap<String, Partition>,
}

impl DatasetSplit {
    pub fn partition_of(&self, app_id: &str) -> Option<Partition> {
        self.apps.get(app_id).copied()
    }

    pub fn app_count(&self, part: Partition) -> usize {
        self.apps.values().filter(|p| **p == part).count()
    }

    /// Realized (train, validation, test) fractions by app count.
    pub fn app_fractions(&self) -> (f64, f64, f64) {
        let n = self.apps.len().max(1) as f64;
        (
            self.app_count(Partition::Train) as f64 / n,
            self.app_count(Partition::Validation) as f64 / n,
            self.app_count(Partition::Test) as f64 / n,
        )
    }

    pub fn indices(&self, part: Partition) -> &[usize] {
        match part {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }
}

/// Shuffles the distinct apps with `seed` and assigns 80/10/10 of them to
/// train/validation/test.
pub fn split_dataset<S: SplitSample>(samples: &[S], seed: u64) -> Result<DatasetSplit, VerifyError> {
    let positives = samples.iter().filter(|s| s.is_positive()).count();
    if positives == 0 || positives == samples.len() {
        return Err(VerifyError::SingleLabel);
    }
    let mut apps: Vec<&str> = samples
        .iter()
        .map(SplitSample::app_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if apps.len() < MIN_APPS {
        return Err(VerifyError::TooFewApps {
            found: apps.len(),
            required: MIN_APPS,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    apps.shuffle(&mut rng);

    let n = apps.len();
    let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
    let n_val = (n as f64 * VALIDATION_FRACTION).round() as usize;
    let assignment: BTreeMap<String, Partition> = apps
        .iter()
        .enumerate()
        .map(|(i, app)| {
            let part = if i < n_train {
                Partition::Train
            } else if i < n_train + n_val {
                Partition::Validation
            } else {
                Partition::Test
            };
            (app.to_string(), part)
        })
        .collect();

    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        apps: assignment,
    };
    for (i, s) in samples.iter().enumerate() {
        match split.apps[s.app_id()] {
            Partition::Train => split.train.push(i),
            Partition::Validation => split.validation.push(i),
            Partition::Test => split.test.push(i),
        }
    }
    let train_pos = split.train.iter().filter(|&&i| samples[i].is_positive()).count();
    if train_pos == 0 || train_pos == split.train.len() {
        return Err(VerifyError::SingleLabel);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct S(String, bool);

    impl SplitSample for S {
        fn app_id(&self) -> &str {
            &self.0
        }
        fn is_positive(&self) -> bool {
            self.1
        }
    }

    fn corpus(apps: usize, per_app: usize) -> Vec<S> {
        (0..apps)
            .flat_map(|a| (0..per_app).map(move |k| S(format!("app{a:03}"), k == 0)))
            .collect()
    }

    #[test]
    fn hundred_apps_split_80_10_10() {
        let samples = corpus(100, 3);
        let split = split_dataset(&samples, 7).unwrap();
        assert_eq!(split.app_count(Partition::Train), 80);
        assert_eq!(split.app_count(Partition::Validation), 10);
        assert_eq!(split.app_count(Partition::Test), 10);
        assert_eq!(split.train.len() + split.validation.len() + split.test.len(), 300);
    }

    #[test]
    fn same_seed_same_partitions() {
        let samples = corpus(50, 2);
        assert_eq!(split_dataset(&samples, 3).unwrap(), split_dataset(&samples, 3).unwrap());
        assert_ne!(
            split_dataset(&samples, 3).unwrap().apps,
            split_dataset(&samples, 4).unwrap().apps
        );
    }

    #[test]
    fn apps_never_straddle() {
        let samples = corpus(40, 5);
        let split = split_dataset(&samples, 1).unwrap();
        for part in [Partition::Train, Partition::Validation, Partition::Test] {
            for &i in split.indices(part) {
                assert_eq!(split.partition_of(samples[i].app_id()), Some(part));
            }
        }
    }

    #[test]
    fn single_label_and_too_few_apps_rejected() {
        let all_neg: Vec<S> = (0..20).map(|a| S(format!("a{a}"), false)).collect();
        assert!(matches!(split_dataset(&all_neg, 0), Err(VerifyError::SingleLabel)));
        let few = corpus(5, 2);
        assert!(matches!(
            split_dataset(&few, 0),
            Err(VerifyError::TooFewApps { found: 5, .. })
        ));
    }
}
