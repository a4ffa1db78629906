use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Disjoint train/validation/test row indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub fractions: [f64; 3],
    pub seed: u64,
}

/// Shuffles `0..n_rows` with the seed and cuts it into validation and test
/// blocks of `round(n * f)` rows; the remainder goes to train.
pub fn split_data(n_rows: usize, fractions: [f64; 3], seed: u64) -> Result<Split, ModelError> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(ModelError::Split("fractions must be positive".into()));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(ModelError::Split("fractions must sum to 1".into()));
    }
    let n_val = (n_rows as f64 * fractions[1]).round() as usize;
    let n_test = (n_rows as f64 * fractions[2]).round() as usize;
    if n_val == 0 || n_test == 0 || n_val + n_test >= n_rows {
        return Err(ModelError::Split(format!(
            "{n_rows} rows cannot give every split at least one row"
        )));
    }
    let mut idx: Vec<usize> = (0..n_rows).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_rows - n_test);
    let validation = idx.split_off(idx.len() - n_val);
    Ok(Split { train: idx, validation, test, fractions, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DEFAULT: [f64; 3] = [0.7, 0.1, 0.2];

    #[test]
    fn ten_rows() {
        let s = split_data(10, DEFAULT, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 1, 2));
        assert_eq!(s, split_data(10, DEFAULT, 1).unwrap());
    }

    #[test]
    fn too_small() {
        assert!(matches!(split_data(2, DEFAULT, 1), Err(ModelError::Split(_))));
    }

    #[test]
    fn bad_fractions() {
        assert!(split_data(100, [0.7, 0.1, 0.1], 1).is_err());
        assert!(split_data(100, [0.9, 0.1, 0.0], 1).is_err());
    }

    proptest! {
        #[test]
        fn partitions_rows(n in 10usize..2000, seed in any::<u64>()) {
            let s = split_data(n, DEFAULT, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.test.len(), (n as f64 * 0.2).round() as usize);
        }
    }
}
