use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Sample indices of the three partitions, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded per-class split.
///
/// Each class is shuffled independently and cut at
/// `round(n * train)` and `round(n * (train + val))`, so every class with
/// enough samples appears in every partition.
pub fn stratified_split(labels: &[usize], fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(alloc::format!("split fractions {fractions:?} must lie in [0,1] and sum to 1")));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split::default();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let a = round_to_count(n * fractions[0]);
        let b = round_to_count(n * (fractions[0] + fractions[1])).max(a);
        split.train.extend_from_slice(&idx[..a]);
        split.val.extend_from_slice(&idx[a..b]);
        split.test.extend_from_slice(&idx[b..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

fn round_to_count(v: f64) -> usize {
    num_traits::Float::round(v) as usize
}
