use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CohortError, Dataset};
use crate::rng::rng_from_seed;

/// Disjoint train/test row indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

/// `ceil(fraction * n)`, guarding against floating error just above an integer.
pub(crate) fn ceil_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Hold out `ceil(test_fraction * n)` rows. Stratified splits allocate the
/// test rows per class by largest remainder, so each class's test share is
/// within one record of proportional.
pub fn split_dataset(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitIndices, CohortError> {
    let labels = dataset.outcomes();
    split_labels(labels, test_fraction, seed, stratified)
}

pub(crate) fn split_labels(
    labels: &[bool],
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitIndices, CohortError> {
    let degenerate = |m: &str| CohortError::DegenerateSplit(m.to_string());
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(degenerate("test fraction must lie in (0, 1)"));
    }
    let n = labels.len();
    let n_test = ceil_count(test_fraction, n);
    if n == 0 || n_test == 0 || n_test >= n {
        return Err(degenerate("one side of the split would be empty"));
    }
    let mut rng = rng_from_seed(seed);
    let mut test = Vec::with_capacity(n_test);
    if stratified {
        let pos: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
        let neg: Vec<usize> = (0..n).filter(|&i| !labels[i]).collect();
        if pos.is_empty() || neg.is_empty() {
            return Err(degenerate("stratification needs both classes"));
        }
        let exact_pos = n_test as f64 * pos.len() as f64 / n as f64;
        let exact_neg = n_test as f64 * neg.len() as f64 / n as f64;
        let mut k_pos = exact_pos.floor() as usize;
        let mut k_neg = exact_neg.floor() as usize;
        if k_pos + k_neg < n_test {
            // Largest remainder; ties go to the positive class.
            if exact_pos - k_pos as f64 >= exact_neg - k_neg as f64 {
                k_pos += 1;
            } else {
                k_neg += 1;
            }
        }
        if k_pos == 0 || k_neg == 0 || k_pos >= pos.len() || k_neg >= neg.len() {
            return Err(degenerate("a class would be absent from train or test"));
        }
        for (mut class, k) in [(pos, k_pos), (neg, k_neg)] {
            class.shuffle(&mut rng);
            test.extend_from_slice(&class[..k]);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        test.extend_from_slice(&all[..n_test]);
    }
    test.sort_unstable();
    let mut in_test = vec![false; n];
    for &i in &test {
        in_test[i] = true;
    }
    let train = (0..n).filter(|&i| !in_test[i]).collect();
    Ok(SplitIndices { train, test, seed, stratified })
}
