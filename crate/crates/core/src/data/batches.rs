use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Attribute-balanced minibatch sampler.
///
/// Each batch draws an equal share from every attribute group (the
/// remainder of an indivisible batch size rotates across groups). Groups
/// are consumed without replacement in a per-epoch shuffled order; smaller
/// groups wrap around with a fresh shuffle so every batch stays balanced.
/// An epoch ends once the largest group has been fully visited. Groups
/// without samples are skipped with a warning.
#[derive(Debug, Clone)]
pub struct BalancedBatcher {
    groups: Vec<Vec<usize>>,
    batch_size: usize,
}

impl BalancedBatcher {
    /// `group_of[i]` is the attribute value index of sample `i`.
    pub fn new(group_of: &[usize], num_groups: usize, batch_size: usize) -> Result<Self> {
        if num_groups == 0 || batch_size < num_groups {
            return Err(Error::Invalid(format!(
                "batch size {batch_size} is smaller than the {num_groups} attribute groups"
            )));
        }
        let mut groups = vec![Vec::new(); num_groups];
        for (i, &g) in group_of.iter().enumerate() {
            groups
                .get_mut(g)
                .ok_or_else(|| Error::Invalid(format!("group index {g} >= {num_groups}")))?
                .push(i);
        }
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                log::warn!("attribute group {g} has no samples and is left out of balancing");
            }
        }
        groups.retain(|g| !g.is_empty());
        if groups.is_empty() {
            return Err(Error::Invalid("no samples to batch".into()));
        }
        Ok(BalancedBatcher { groups, batch_size })
    }

    /// Number of non-empty groups.
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    fn share(&self, group: usize, batch: usize) -> usize {
        let k = self.groups.len();
        let (base, rem) = (self.batch_size / k, self.batch_size % k);
        base + usize::from((group + k - batch % k) % k < rem)
    }

    pub fn batches_per_epoch(&self) -> usize {
        let base = self.batch_size / self.groups.len();
        self.groups.iter().map(|g| g.len().div_ceil(base)).max().unwrap_or(0)
    }

    /// Sample indices of every batch in one epoch.
    pub fn epoch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<usize>> {
        let mut orders: Vec<Vec<usize>> = self
            .groups
            .iter()
            .map(|g| {
                let mut o = g.clone();
                o.shuffle(rng);
                o
            })
            .collect();
        let mut cursors = vec![0usize; self.groups.len()];
        (0..self.batches_per_epoch())
            .map(|b| {
                let mut batch = Vec::with_capacity(self.batch_size);
                for g in 0..self.groups.len() {
                    for _ in 0..self.share(g, b) {
                        if cursors[g] == orders[g].len() {
                            orders[g].shuffle(rng);
                            cursors[g] = 0;
                        }
                        batch.push(orders[g][cursors[g]]);
                        cursors[g] += 1;
                    }
                }
                batch
            })
            .collect()
    }
}

/// One epoch of balanced batches over `group_of`.
pub fn balanced_batches<R: Rng + ?Sized>(
    group_of: &[usize],
    num_groups: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    Ok(BalancedBatcher::new(group_of, num_groups, batch_size)?.epoch(rng))
}
