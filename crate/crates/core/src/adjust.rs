//! Closed-form familywise adjustments of a vector of nominal p-values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentMethod {
    Bonferroni,
    Holm,
    Hochberg,
    Hommel,
    /// minP adjustment against the joint randomization distribution.
    Randomization,
}

impl AdjustmentMethod {
    pub const ALL: [AdjustmentMethod; 5] = [
        AdjustmentMethod::Bonferroni,
        AdjustmentMethod::Holm,
        AdjustmentMethod::Hochberg,
        AdjustmentMethod::Hommel,
        AdjustmentMethod::Randomization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdjustmentMethod::Bonferroni => "bonferroni",
            AdjustmentMethod::Holm => "holm",
            AdjustmentMethod::Hochberg => "hochberg",
            AdjustmentMethod::Hommel => "hommel",
            AdjustmentMethod::Randomization => "randomization",
        }
    }

    /// Adjusts `p` with a closed-form method; `None` for randomization,
    /// which needs the joint null distribution.
    pub fn apply<S: Scalar>(self, p: &[S]) -> Option<Vec<S>> {
        match self {
            AdjustmentMethod::Bonferroni => Some(bonferroni(p)),
            AdjustmentMethod::Holm => Some(holm(p)),
            AdjustmentMethod::Hochberg => Some(hochberg(p)),
            AdjustmentMethod::Hommel => Some(hommel(p)),
            AdjustmentMethod::Randomization => None,
        }
    }

    /// Parses a comma-separated list, or `all`.
    pub fn parse_list(s: &str) -> Result<Vec<AdjustmentMethod>> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        let mut out: Vec<AdjustmentMethod> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: AdjustmentMethod = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("no adjustment methods given".into()));
        }
        out.sort();
        Ok(out)
    }
}

impl fmt::Display for AdjustmentMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdjustmentMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown adjustment method {s:?}")))
    }
}

fn n_of<S: Scalar>(n: usize) -> S {
    S::from_usize(n).unwrap()
}

/// Ascending order of `p`, ties broken by index.
fn ascending<S: Scalar>(p: &[S]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap().then(a.cmp(&b)));
    order
}

pub fn bonferroni<S: Scalar>(p: &[S]) -> Vec<S> {
    let j = n_of::<S>(p.len());
    p.iter().map(|&x| (j * x).min(S::one())).collect()
}

/// Step-down: `a_(i) = max_{k≤i} min(1, (J−k+1)·p_(k))`.
pub fn holm<S: Scalar>(p: &[S]) -> Vec<S> {
    let n = p.len();
    let order = ascending(p);
    let mut out = vec![S::zero(); n];
    let mut running = S::zero();
    for (rank, &i) in order.iter().enumerate() {
        running = running.max((n_of::<S>(n - rank) * p[i]).min(S::one()));
        out[i] = running;
    }
    out
}

/// Step-up: `a_(i) = min_{k≥i} min(1, (J−k+1)·p_(k))`.
pub fn hochberg<S: Scalar>(p: &[S]) -> Vec<S> {
    let n = p.len();
    let order = ascending(p);
    let mut out = vec![S::zero(); n];
    let mut running = S::one();
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min((n_of::<S>(n - rank) * p[i]).min(S::one()));
        out[i] = running;
    }
    out
}

/// Simes-closure adjusted p-values, using the usual quadratic algorithm.
pub fn hommel<S: Scalar>(p: &[S]) -> Vec<S> {
    let n = p.len();
    if n <= 1 {
        return p.to_vec();
    }
    let order = ascending(p);
    let ps: Vec<S> = order.iter().map(|&i| p[i]).collect();
    let initial = (0..n)
        .map(|i| n_of::<S>(n) * ps[i] / n_of::<S>(i + 1))
        .fold(S::infinity(), S::min);
    let mut q = vec![initial; n];
    let mut pa = vec![initial; n];
    for m in (2..n).rev() {
        // the last m−1 sorted values against Simes weights 2..m
        let q1 = (0..m - 1)
            .map(|t| n_of::<S>(m) * ps[n - m + 1 + t] / n_of::<S>(t + 2))
            .fold(S::infinity(), S::min);
        for i in 0..=n - m {
            q[i] = (n_of::<S>(m) * ps[i]).min(q1);
        }
        let pivot = q[n - m];
        for v in q.iter_mut().skip(n - m + 1) {
            *v = pivot;
        }
        for (a, &b) in pa.iter_mut().zip(&q) {
            *a = a.max(b);
        }
    }
    let hoch = hochberg(p);
    let mut out = vec![S::zero(); n];
    for (rank, &i) in order.iter().enumerate() {
        // Rounding in the weights must not break hommel <= hochberg.
        out[i] = pa[rank].max(ps[rank]).min(hoch[i]).min(S::one());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_derived_vectors() {
        let p = [0.01, 0.04, 0.03];
        assert_eq!(holm(&p), vec![0.03, 0.06, 0.06]);
        assert_eq!(hochberg(&p), vec![0.03, 0.04, 0.04]);
        assert_eq!(bonferroni(&[0.3]), vec![0.3]);
        assert_eq!(bonferroni(&[0.3; 6]), vec![1.0; 6]);
        let b = bonferroni(&[0.0002f64, 0.5, 0.5, 0.5, 0.5, 0.5]);
        assert!((b[0] - 0.0012).abs() < 1e-15);
    }

    #[test]
    fn equal_p_values() {
        let p = [0.02; 4];
        assert_eq!(holm(&p), vec![0.08; 4]);
        assert_eq!(hochberg(&p), vec![0.02; 4]);
        assert_eq!(hommel(&p), vec![0.02; 4]);
    }

    /// Hommel by brute-force closure: the adjusted value of hypothesis i is
    /// the largest Simes p-value over all intersections containing i.
    fn hommel_closure(p: &[f64]) -> Vec<f64> {
        let n = p.len();
        let simes = |set: &[usize]| {
            let mut v: Vec<f64> = set.iter().map(|&i| p[i]).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = v.len() as f64;
            v.iter()
                .enumerate()
                .map(|(r, &x)| m * x / (r + 1) as f64)
                .fold(f64::INFINITY, f64::min)
        };
        (0..n)
            .map(|i| {
                let mut worst: f64 = 0.0;
                for mask in 1u32..(1 << n) {
                    if mask & (1 << i) == 0 {
                        continue;
                    }
                    let set: Vec<usize> = (0..n).filter(|&b| mask & (1 << b) != 0).collect();
                    worst = worst.max(simes(&set));
                }
                worst.min(1.0)
            })
            .collect()
    }

    #[test]
    fn hommel_matches_closure_examples() {
        let cases: [&[f64]; 4] = [
            &[0.01, 0.04, 0.03],
            &[0.01, 0.02, 0.03, 0.04, 0.05],
            &[0.2, 0.001, 0.04, 0.04, 0.9, 0.03],
            &[0.5],
        ];
        for p in cases {
            let h = hommel(p);
            let c = hommel_closure(p);
            for (a, b) in h.iter().zip(&c) {
                assert!((a - b).abs() < 1e-12, "{p:?}: {h:?} vs {c:?}");
            }
        }
    }

    #[test]
    fn parse_lists() {
        assert_eq!(AdjustmentMethod::parse_list("all").unwrap().len(), 5);
        assert_eq!(
            AdjustmentMethod::parse_list("randomization, bonferroni").unwrap(),
            vec![AdjustmentMethod::Bonferroni, AdjustmentMethod::Randomization]
        );
        assert!(AdjustmentMethod::parse_list("sidak").is_err());
        assert!(AdjustmentMethod::parse_list("").is_err());
    }

    fn pvec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(
            prop_oneof![0.0..=1.0f64, Just(0.05), Just(0.0), Just(1.0), (0u32..20).prop_map(|k| k as f64 / 20.0)],
            1..=8,
        )
    }

    proptest! {
        #[test]
        fn ordering_chain(p in pvec()) {
            let (b, ho, hg, hm) = (bonferroni(&p), holm(&p), hochberg(&p), hommel(&p));
            for i in 0..p.len() {
                prop_assert!(b[i] >= ho[i]);
                prop_assert!(ho[i] >= hg[i]);
                prop_assert!(hg[i] >= hm[i]);
                prop_assert!(hm[i] >= p[i]);
                prop_assert!(b[i] <= 1.0);
            }
        }

        #[test]
        fn hommel_equals_closure(p in prop::collection::vec(0.0..=1.0f64, 1..=6)) {
            let h = hommel(&p);
            let c = hommel_closure(&p);
            for (a, b) in h.iter().zip(&c) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn permutation_equivariance(p in pvec(), seed in any::<u64>()) {
            let n = p.len();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let q: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
            for f in [bonferroni::<f64>, holm::<f64>, hochberg::<f64>, hommel::<f64>] {
                let a = f(&p);
                let b = f(&q);
                for (k, &i) in perm.iter().enumerate() {
                    prop_assert_eq!(b[k], a[i]);
                }
            }
        }

        #[test]
        fn monotone_in_each_coordinate(p in pvec(), idx in any::<prop::sample::Index>(), bump in 0.0..0.5f64) {
            let i = idx.index(p.len());
            let mut q = p.clone();
            q[i] = (q[i] + bump).min(1.0);
            for f in [bonferroni::<f64>, holm::<f64>, hochberg::<f64>, hommel::<f64>] {
                let a = f(&p);
                let b = f(&q);
                for k in 0..p.len() {
                    prop_assert!(b[k] >= a[k] - 1e-15);
                }
            }
        }

        #[test]
        fn single_precision_chain(p in prop::collection::vec(0.0..=1.0f32, 1..=8)) {
            let (b, ho, hg, hm) = (bonferroni(&p), holm(&p), hochberg(&p), hommel(&p));
            for i in 0..p.len() {
                prop_assert!(b[i] >= ho[i] && ho[i] >= hg[i] && hg[i] >= hm[i] && hm[i] >= p[i]);
            }
        }
    }
}
