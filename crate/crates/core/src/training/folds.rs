use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;

/// Query-level partition into folds. For held-out fold `f`, fold `f + 1`
/// (mod k) is the early-stopping validation fold and the rest train.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    num_folds: usize,
    assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    /// Shuffles queries with `seed` and deals them round-robin.
    pub fn new<S: AsRef<str>>(query_ids: &[S], num_folds: usize, seed: u64) -> Result<Self> {
        let mut ids: Vec<String> = query_ids.iter().map(|q| q.as_ref().to_string()).collect();
        ids.sort();
        ids.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        let assignments = ids
            .into_iter()
            .enumerate()
            .map(|(i, q)| (q, i % num_folds.max(1)))
            .collect();
        Self::from_assignments(assignments, num_folds)
    }

    pub fn from_assignments(assignments: BTreeMap<String, usize>, num_folds: usize) -> Result<Self> {
        if num_folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {num_folds}")));
        }
        let mut sizes = vec![0usize; num_folds];
        for (q, &f) in &assignments {
            if f >= num_folds {
                return Err(Error::Config(format!("query `{q}` assigned to fold {f} of {num_folds}")));
            }
            sizes[f] += 1;
        }
        if let Some(f) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::EmptyFold(f));
        }
        Ok(Self {
            num_folds,
            assignments,
        })
    }

    pub fn num_folds(&self) -> usize {
        self.num_folds
    }

    pub fn assignments(&self) -> &BTreeMap<String, usize> {
        &self.assignments
    }

    pub fn fold_of(&self, query_id: &str) -> Option<usize> {
        self.assignments.get(query_id).copied()
    }

    pub fn fold_queries(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(q, _)| q.as_str())
            .collect()
    }

    pub fn validation_fold(&self, held_out: usize) -> usize {
        (held_out + 1) % self.num_folds
    }

    /// Every query outside the held-out fold.
    pub fn non_held_out(&self, held_out: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f != held_out)
            .map(|(q, _)| q.as_str())
            .collect()
    }

    /// Queries used for gradient updates when `held_out` is the test fold.
    pub fn training_queries(&self, held_out: usize) -> Vec<&str> {
        let val = self.validation_fold(held_out);
        self.assignments
            .iter()
            .filter(|(_, &f)| f != held_out && f != val)
            .map(|(q, _)| q.as_str())
            .collect()
    }

    pub fn validation_queries(&self, held_out: usize) -> Vec<&str> {
        self.fold_queries(self.validation_fold(held_out))
    }
}
