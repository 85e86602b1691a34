use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PlaqueClass, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub split_seed: u64,
}

impl DatasetSplit {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

/// Largest-remainder apportionment of `n` items over `ratios`: floor every
/// share, then hand the leftover units to the largest fractional parts
/// (earlier parts win ties).
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|e| e.floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &j in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[j] += 1;
        left -= 1;
    }
    sizes
}

fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Stratified train/val/test partition.
///
/// Overall split sizes follow [`split_sizes`] on the whole set; within that
/// budget each class is apportioned the same way, so every split keeps the
/// class mix. Members are drawn by a seeded shuffle per class and listed in
/// input order.
pub fn split_dataset(samples: &[Sample], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    validate_ratios(ratios)?;
    if samples.len() < 3 {
        return Err(Error::Invalid(format!(
            "need at least 3 samples to split, got {}",
            samples.len()
        )));
    }
    let totals = split_sizes(samples.len(), ratios);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); PlaqueClass::COUNT];
    for (i, s) in samples.iter().enumerate() {
        by_class[s.class_label.index()].push(i);
    }

    // floor quotas per class, then distribute leftovers without exceeding
    // the global split sizes
    let mut quota = [[0usize; 3]; PlaqueClass::COUNT];
    let mut frac = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        for j in 0..3 {
            let e = ratios[j] * members.len() as f64;
            quota[c][j] = e.floor() as usize;
            frac.push((e - e.floor(), c, j));
        }
    }
    let mut class_left: Vec<usize> = (0..PlaqueClass::COUNT)
        .map(|c| by_class[c].len() - quota[c].iter().sum::<usize>())
        .collect();
    let mut split_left: Vec<usize> = (0..3)
        .map(|j| totals[j] - (0..PlaqueClass::COUNT).map(|c| quota[c][j]).sum::<usize>())
        .collect();
    frac.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, c, j) in &frac {
        if class_left[c] > 0 && split_left[j] > 0 {
            quota[c][j] += 1;
            class_left[c] -= 1;
            split_left[j] -= 1;
        }
    }
    for c in 0..PlaqueClass::COUNT {
        for j in 0..3 {
            let take = class_left[c].min(split_left[j]);
            quota[c][j] += take;
            class_left[c] -= take;
            split_left[j] -= take;
        }
    }

    let mut assignment = vec![0usize; samples.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (c, members) in by_class.iter().enumerate() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let mut it = shuffled.into_iter();
        for j in 0..3 {
            for i in it.by_ref().take(quota[c][j]) {
                assignment[i] = j;
            }
        }
    }
    let mut parts: [Vec<Sample>; 3] = Default::default();
    for (i, s) in samples.iter().enumerate() {
        parts[assignment[i]].push(s.clone());
    }
    let [train, val, test] = parts;
    Ok(DatasetSplit {
        train,
        val,
        test,
        split_seed: seed,
    })
}
