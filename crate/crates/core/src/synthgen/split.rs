//! Train/test split stratified by risk situation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{Episode, RiskSituation};

/// Indices of the train and test episodes, each in ascending order.
pub fn split_indices(episodes: &[Episode], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!("split ratio {ratio} must lie strictly between 0 and 1")));
    }
    let mut strata: BTreeMap<RiskSituation, Vec<usize>> = BTreeMap::new();
    for (i, e) in episodes.iter().enumerate() {
        strata.entry(e.situation).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (situation, mut idx) in strata {
        if idx.len() < 2 {
            log::warn!("situation `{situation}` has {} episode(s); placing it wholly in train", idx.len());
            train.extend(idx);
            continue;
        }
        idx.shuffle(&mut rng);
        let k = ((ratio * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(episodes: &[Episode], ratio: f64, seed: u64) -> Result<(Vec<Episode>, Vec<Episode>)> {
    let (train, test) = split_indices(episodes, ratio, seed)?;
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| episodes[i].clone()).collect();
    Ok((pick(train), pick(test)))
}
