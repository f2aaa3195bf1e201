use rand::seq::SliceRandom;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Class-stratified random assignment to train/val/test.
///
/// Within each class the first `round(train·n)` shuffled members go to
/// train, the next `round(val·n)` to val and the rest to test. Unlabeled
/// accounts get [`Split::None`].
pub fn split_dataset(ds: &Dataset, ratios: (f64, f64, f64), rng: &mut Rng) -> Result<Dataset> {
    let split = stratified_assignment(&ds.labels, ratios, rng)?;
    let mut out = ds.clone();
    out.split = split;
    Ok(out)
}

pub(crate) fn stratified_assignment(
    labels: &[Option<u8>],
    (train, val, test): (f64, f64, f64),
    rng: &mut Rng,
) -> Result<Vec<Split>> {
    if !(train > 0.0 && val > 0.0 && test > 0.0) || (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "split ratios must be positive and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    let mut split = vec![Split::None; labels.len()];
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] == Some(class))
            .collect();
        if members.len() < 3 {
            return Err(Error::contract(format!(
                "class {class} has {} members; stratified splitting needs at least 3",
                members.len()
            )));
        }
        members.shuffle(rng);
        let n = members.len() as f64;
        let n_train = ((train * n).round() as usize).clamp(1, members.len() - 2);
        let n_val = ((val * n).round() as usize).clamp(1, members.len() - n_train - 1);
        for (k, &i) in members.iter().enumerate() {
            split[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(split)
}
