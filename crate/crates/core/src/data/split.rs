use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FrameRef;
use crate::au::AU_COUNT;
use crate::error::{Error, Result};

pub const MIN_SPLIT_FRAMES: usize = 10;

/// Multi-label stratified train/test split of one subject's frames.
///
/// Iterative proportional assignment: labels are visited from rarest to most
/// common, and each frame carrying the current label goes to whichever side
/// still wants the most of that label. A side whose size quota is full never
/// receives frames, so sizes are exact.
pub fn stratified_split<'a>(
    frames: &[&'a FrameRef],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<&'a FrameRef>, Vec<&'a FrameRef>)> {
    let n = frames.len();
    if n < MIN_SPLIT_FRAMES {
        return Err(Error::TooFewFrames {
            need: MIN_SPLIT_FRAMES,
            got: n,
        });
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let n_train = n_train.clamp(1, n - 1);
    let mut total_demand = [n_train as f64, (n - n_train) as f64];

    let mut label_demand = [[0.0f64; AU_COUNT]; 2];
    for f in frames {
        for (ch, &on) in f.labels.binary().iter().enumerate() {
            if on {
                label_demand[0][ch] += train_fraction;
                label_demand[1][ch] += 1.0 - train_fraction;
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut side_of: Vec<Option<usize>> = vec![None; n];
    let mut unassigned: Vec<usize> = order;

    let assign = |i: usize, side: usize, side_of: &mut Vec<Option<usize>>, total: &mut [f64; 2], demand: &mut [[f64; AU_COUNT]; 2]| {
        side_of[i] = Some(side);
        total[side] -= 1.0;
        for (ch, &on) in frames[i].labels.binary().iter().enumerate() {
            if on {
                demand[side][ch] -= 1.0;
            }
        }
    };

    loop {
        // rarest label among the unassigned frames
        let mut counts = [0usize; AU_COUNT];
        for &i in &unassigned {
            for (ch, &on) in frames[i].labels.binary().iter().enumerate() {
                counts[ch] += on as usize;
            }
        }
        let Some(label) = (0..AU_COUNT).filter(|&c| counts[c] > 0).min_by_key(|&c| (counts[c], c)) else {
            break;
        };
        let (with, rest): (Vec<usize>, Vec<usize>) =
            unassigned.iter().partition(|&&i| frames[i].labels.is_active(label));
        for i in with {
            let side = if total_demand[0] <= 0.0 {
                1
            } else if total_demand[1] <= 0.0 {
                0
            } else {
                let (a, b) = (label_demand[0][label], label_demand[1][label]);
                if a > b {
                    0
                } else if b > a {
                    1
                } else if total_demand[0] > total_demand[1] {
                    0
                } else if total_demand[1] > total_demand[0] {
                    1
                } else {
                    rng.random_range(0..2)
                }
            };
            assign(i, side, &mut side_of, &mut total_demand, &mut label_demand);
        }
        unassigned = rest;
    }
    // frames with no active AU fill the remaining quotas
    for i in unassigned {
        let side = if total_demand[0] > 0.0 { 0 } else { 1 };
        assign(i, side, &mut side_of, &mut total_demand, &mut label_demand);
    }

    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (i, f) in frames.iter().enumerate() {
        match side_of[i] {
            Some(0) => train.push(*f),
            _ => test.push(*f),
        }
    }
    Ok((train, test))
}

/// Split identities into `k` disjoint folds whose sizes differ by at most one.
pub fn identity_folds(identities: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if identities.len() < k {
        return Err(Error::TooFewIdentities {
            need: k,
            got: identities.len(),
        });
    }
    let mut ids = identities.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::frame;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn rate(frames: &[&FrameRef], ch: usize) -> f64 {
        frames.iter().filter(|f| f.labels.is_active(ch)).count() as f64 / frames.len() as f64
    }

    #[test]
    fn preserves_au_rate() {
        let frames: Vec<FrameRef> = (0..1000)
            .map(|i| {
                let mut on = Vec::new();
                if i % 10 < 3 {
                    on.push(6);
                }
                if i % 7 == 0 {
                    on.push(0);
                }
                frame("A", i, &on)
            })
            .collect();
        let refs: Vec<&FrameRef> = frames.iter().collect();
        let (train, test) = stratified_split(&refs, 0.8, 3).unwrap();
        assert_eq!(test.len(), 200);
        assert_eq!(train.len(), 800);
        let r = rate(&test, 6);
        assert!((0.28..=0.32).contains(&r), "AU12 test rate {r}");
        for ch in [0, 6] {
            assert!((rate(&train, ch) - rate(&refs, ch)).abs() <= 0.02);
            assert!((rate(&test, ch) - rate(&refs, ch)).abs() <= 0.02);
        }
    }

    #[test]
    fn too_few_frames() {
        let frames: Vec<FrameRef> = (0..5).map(|i| frame("A", i, &[])).collect();
        let refs: Vec<&FrameRef> = frames.iter().collect();
        assert!(matches!(stratified_split(&refs, 0.8, 0), Err(Error::TooFewFrames { .. })));
    }

    #[test]
    fn fold_sizes() {
        let ids: Vec<String> = (0..27).map(|i| format!("SN{i:03}")).collect();
        let f = identity_folds(&ids, 3, 1).unwrap();
        assert_eq!(f.iter().map(Vec::len).collect::<Vec<_>>(), vec![9, 9, 9]);
        let f = identity_folds(&ids[..4], 3, 1).unwrap();
        assert_eq!(f.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 1, 1]);
        assert!(matches!(identity_folds(&ids[..2], 3, 1), Err(Error::TooFewIdentities { .. })));
    }

    proptest! {
        #[test]
        fn split_partitions_input(n in 10usize..200, seed in 0u64..1000, frac in 0.1f64..0.9) {
            let frames: Vec<FrameRef> = (0..n as u32)
                .map(|i| frame("A", i, if (i * 7 + seed as u32) % 5 == 0 { &[1, 4] } else { &[] }))
                .collect();
            let refs: Vec<&FrameRef> = frames.iter().collect();
            let (train, test) = stratified_split(&refs, frac, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), n);
            let a: BTreeSet<u32> = train.iter().map(|f| f.index).collect();
            let b: BTreeSet<u32> = test.iter().map(|f| f.index).collect();
            prop_assert!(a.is_disjoint(&b));
            prop_assert_eq!(a.len() + b.len(), n);
        }

        #[test]
        fn folds_partition_identities(n in 3usize..40, k in 1usize..4, seed in 0u64..100) {
            let ids: Vec<String> = (0..n).map(|i| format!("P{i}")).collect();
            let folds = identity_folds(&ids, k, seed).unwrap();
            let mut all: Vec<String> = folds.iter().flatten().cloned().collect();
            all.sort();
            let mut expected = ids.clone();
            expected.sort();
            prop_assert_eq!(all, expected);
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
