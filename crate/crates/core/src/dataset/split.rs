use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::RatingDataset;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Per-record split membership for one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub fold: usize,
    pub seed: u64,
    pub assignment: Vec<Split>,
}

impl SplitAssignment {
    /// The records of `part` as a dataset over the same user/item universe.
    pub fn subset(&self, ds: &RatingDataset, part: Split) -> Result<RatingDataset> {
        if self.assignment.len() != ds.len() {
            return Err(Error::invalid(format!(
                "split covers {} records, dataset has {}",
                self.assignment.len(),
                ds.len()
            )));
        }
        let records = ds
            .records()
            .iter()
            .zip(&self.assignment)
            .filter(|(_, &s)| s == part)
            .map(|(r, _)| *r)
            .collect();
        ds.with_records(records)
    }

    pub fn count(&self, part: Split) -> usize {
        self.assignment.iter().filter(|&&s| s == part).count()
    }
}

/// Per-user 60/20/20 split of `n` records: `floor(0.6 n)` train,
/// `floor(0.2 n)` validation, the remainder test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 3 / 5;
    let valid = n / 5;
    (train, valid, n - train - valid)
}

/// One independent, user-stratified 60/20/20 split per fold.
///
/// Fold `f` uses the seed `derive(seed, [f])`; the same seed always yields
/// the same assignments.
pub fn make_splits(ds: &RatingDataset, fold_count: usize, seed: u64) -> Result<Vec<SplitAssignment>> {
    if fold_count == 0 {
        return Err(Error::invalid("fold_count must be >= 1"));
    }
    Ok((0..fold_count)
        .map(|fold| {
            let fold_seed = seed::derive(seed, &[fold as u64]);
            let mut rng = seed::rng(fold_seed);
            let mut assignment = vec![Split::Test; ds.len()];
            for u in 0..ds.num_users() {
                let mut idx: Vec<usize> = ds.profile_range(u).collect();
                idx.shuffle(&mut rng);
                let (train, valid, _) = split_sizes(idx.len());
                for (pos, &rec) in idx.iter().enumerate() {
                    assignment[rec] = if pos < train {
                        Split::Train
                    } else if pos < train + valid {
                        Split::Validation
                    } else {
                        Split::Test
                    };
                }
            }
            SplitAssignment {
                fold,
                seed: fold_seed,
                assignment,
            }
        })
        .collect())
}
