use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};

/// ChaCha8 stream used for the train/validation partition; epoch `e`
/// shuffles with stream `e` (epochs count from 1).
const SPLIT_STREAM: u64 = 0;

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shuffled indices `0..n` for epoch `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed, epoch as u64));
    order
}

/// Seeded partition of `0..n` into training and validation indices. The
/// validation share is `round(fraction·n)`, kept between 1 and `n − 1`.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    contract!(n >= 2, "splitting needs at least 2 samples, got {n}");
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Param(format!("validation fraction must lie in (0, 1), got {fraction}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed, SPLIT_STREAM));
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let val = order.split_off(n - n_val);
    Ok((order, val))
}

pub fn split_train_val<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, val) = split_indices(items.len(), fraction, seed)?;
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| items[i].clone()).collect();
    Ok((pick(train), pick(val)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_samples_split_eight_two() {
        let (train, val) = split_indices(10, 0.2, 3).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        assert_eq!(split_indices(10, 0.2, 3).unwrap(), (train, val));
    }

    #[test]
    fn tiny_sets_keep_both_sides() {
        assert_eq!(split_indices(2, 0.2, 0).unwrap().1.len(), 1);
        assert_eq!(split_indices(3, 0.9, 0).unwrap().0.len(), 1);
        assert!(split_indices(1, 0.2, 0).is_err());
        assert!(split_indices(5, 1.0, 0).is_err());
    }

    #[test]
    fn epochs_shuffle_differently() {
        let a = epoch_order(20, 1, 1);
        assert_eq!(a, epoch_order(20, 1, 1));
        assert_ne!(a, epoch_order(20, 1, 2));
    }
}
