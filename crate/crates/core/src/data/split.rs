use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SequencePair;
use crate::error::{Error, Result};
use crate::sampling::stream_rng;
use crate::scalar::Scalar;

/// Share of sequences held out for testing (337 of 1597).
pub const TEST_FRACTION: f64 = 0.211;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit<T> {
    pub name: String,
    pub seed: u64,
    pub train: Vec<SequencePair<T>>,
    pub test: Vec<SequencePair<T>>,
}

/// Deterministic shuffle-split by sequence. The test side receives
/// `round(n · test_fraction)` pairs.
pub fn split<T: Scalar>(
    pairs: Vec<SequencePair<T>>,
    test_fraction: f64,
    seed: u64,
    name: &str,
) -> Result<DatasetSplit<T>> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} outside [0, 1]"
        )));
    }
    let n_test = (pairs.len() as f64 * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut is_test = vec![false; pairs.len()];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (p, t) in pairs.into_iter().zip(is_test) {
        if t {
            test.push(p);
        } else {
            train.push(p);
        }
    }
    Ok(DatasetSplit {
        name: name.to_string(),
        seed,
        train,
        test,
    })
}
