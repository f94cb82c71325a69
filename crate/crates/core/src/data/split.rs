//! Stratified fold assignment and the train/validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Label};

/// Assign each item a fold in `0..k`, stratified by class.
///
/// Per class the indices are shuffled, then split into k folds of
/// `floor(n/k)` items with the `n mod k` remainder going to the LAST
/// folds, so fold 0 is the smallest.
pub fn stratified_kfold(labels: &[Label], k: usize, seed: u64) -> Result<Vec<usize>, DataError> {
    if k < 2 {
        return Err(DataError::Validation(format!(
            "k-fold needs k >= 2, got {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![usize::MAX; labels.len()];
    for class in Label::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(DataError::Validation(format!(
                "class {class:?} has {} members, fewer than k = {k}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let base = members.len() / k;
        let remainder = members.len() % k;
        let mut cursor = 0;
        for fold in 0..k {
            let extra = usize::from(fold >= k - remainder);
            for &idx in &members[cursor..cursor + base + extra] {
                folds[idx] = fold;
            }
            cursor += base + extra;
        }
    }
    Ok(folds)
}

/// Split the non-test indices into (train, validation), stratified by
/// class and shuffled with `seed`.
///
/// The validation share is the closest integer to a quarter of each class
/// (ties broken toward train), which reproduces fold sizes that a
/// floor-only rule cannot.
pub fn train_val_split(
    non_test: &[usize],
    labels: &[Label],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if non_test.is_empty() {
        return Err(DataError::Validation("train/val split of an empty set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in Label::ALL {
        let mut members: Vec<usize> = non_test
            .iter()
            .copied()
            .filter(|&i| labels[i] == class)
            .collect();
        if members.is_empty() {
            return Err(DataError::Validation(format!(
                "class {class:?} has no members outside the test fold"
            )));
        }
        members.shuffle(&mut rng);
        // round(n/4) with .5 rounded down: floor((n + 1) / 4).
        let val_count = (members.len() + 1) / 4;
        val.extend_from_slice(&members[..val_count]);
        train.extend_from_slice(&members[val_count..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}
