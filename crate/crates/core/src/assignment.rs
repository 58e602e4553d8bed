//! Randomized assignment mechanisms.

use rand::Rng;

use crate::data::ObservedDataset;
use crate::error::{Error, Result};

/// A randomized assignment mechanism: draws hypothetical assignments and
/// enumerates the assignment space for exact tests.
pub trait AssignmentMechanism: Send + Sync {
    fn n_units(&self) -> usize;

    /// Writes one random assignment into `z`, which has `n_units()` entries.
    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [bool]);

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<bool> {
        let mut z = vec![false; self.n_units()];
        self.draw_into(rng, &mut z);
        z
    }

    /// Size of the assignment space, saturating at `u128::MAX`.
    fn space_size(&self) -> u128;

    /// Every assignment exactly once, in a deterministic order.
    fn enumerate(&self, limit: u128) -> Result<Box<dyn Iterator<Item = Vec<bool>> + '_>>;
}

/// Complete randomization with a fixed number of treated units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompleteRandomization {
    n_total: usize,
    n_treated: usize,
}

impl CompleteRandomization {
    pub fn new(n_total: usize, n_treated: usize) -> Result<Self> {
        if n_treated > n_total {
            return Err(Error::Config(format!(
                "treated count {n_treated} exceeds unit count {n_total}"
            )));
        }
        Ok(Self { n_total, n_treated })
    }

    pub fn from_observed(obs: &ObservedDataset) -> Self {
        Self {
            n_total: obs.len(),
            n_treated: obs.n_treated(),
        }
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }
}

impl AssignmentMechanism for CompleteRandomization {
    fn n_units(&self) -> usize {
        self.n_total
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [bool]) {
        debug_assert_eq!(z.len(), self.n_total);
        z.fill(false);
        for i in rand::seq::index::sample(rng, self.n_total, self.n_treated) {
            z[i] = true;
        }
    }

    fn space_size(&self) -> u128 {
        binomial(self.n_total as u64, self.n_treated as u64)
    }

    fn enumerate(&self, limit: u128) -> Result<Box<dyn Iterator<Item = Vec<bool>> + '_>> {
        let size = self.space_size();
        if size > limit {
            return Err(Error::EnumerationLimit { size, limit });
        }
        Ok(Box::new(Colex::new(self.n_total, self.n_treated)))
    }
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        match acc.checked_mul((n - i) as u128) {
            Some(v) => acc = v / (i + 1) as u128,
            None => return u128::MAX,
        }
    }
    acc
}

/// k-subsets of `0..n` in colexicographic order.
struct Colex {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Colex {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            idx: (0..k).collect(),
            done: false,
        }
    }
}

impl Iterator for Colex {
    type Item = Vec<bool>;

    fn next(&mut self) -> Option<Vec<bool>> {
        if self.done {
            return None;
        }
        let mut z = vec![false; self.n];
        for &i in &self.idx {
            z[i] = true;
        }
        let k = self.idx.len();
        let mut i = 0;
        while i < k {
            let bound = if i + 1 < k { self.idx[i + 1] } else { self.n };
            if self.idx[i] + 1 < bound {
                break;
            }
            i += 1;
        }
        if i == k {
            self.done = true;
        } else {
            self.idx[i] += 1;
            for (pos, v) in self.idx[..i].iter_mut().enumerate() {
                *v = pos;
            }
        }
        Some(z)
    }
}
