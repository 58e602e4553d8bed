//! Posterior predictive imputation of missing compliance under the null.
//!
//! Under the sharp null the outcome vector is a covariate, so compliance of
//! control units is a two-class mixture: compliers and never-takers, each
//! with a Multinomial distribution over the `K^J` joint outcome patterns in
//! every covariate cell. Two-block data augmentation alternates
//!
//! * (a) compliance of each control unit given the parameters (Bayes' rule),
//! * (b) `ω_c ~ Beta` and every `η ~ Dirichlet` given the completed strata.
//!
//! [`gibbs_sweep`] is the direct per-unit form. [`Sampler`] runs the same
//! chain on sufficient statistics: control units sharing a (cell, pattern)
//! are exchangeable, so step (a) draws one Binomial per group, and Dirichlet
//! components of patterns absent from a cell are merged into one Gamma draw.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::{ComplianceStatus, ObservedDataset, ObservedUnit};
use crate::error::{Error, Result};

/// Largest joint-pattern space the sampler accepts.
pub const MAX_PATTERNS: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompliancePrior {
    pub omega_a: f64,
    pub omega_b: f64,
    pub dirichlet_weight: f64,
}

impl Default for CompliancePrior {
    fn default() -> Self {
        Self {
            omega_a: 1.0,
            omega_b: 1.0,
            dirichlet_weight: 1.0,
        }
    }
}

impl CompliancePrior {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if ok(self.omega_a) && ok(self.omega_b) && ok(self.dirichlet_weight) {
            Ok(())
        } else {
            Err(Error::Config(format!("prior hyperparameters must be positive: {self:?}")))
        }
    }
}

/// `K^J`, or `None` past [`MAX_PATTERNS`].
pub fn pattern_count(j: usize, k: usize) -> Option<usize> {
    let mut n: usize = 1;
    for _ in 0..j {
        n = n.checked_mul(k).filter(|&n| n <= MAX_PATTERNS)?;
    }
    Some(n)
}

/// Mixed-radix code of an outcome vector, first outcome most significant.
pub fn pattern_index(y: &[u8], k: usize) -> Result<usize> {
    y.iter().try_fold(0usize, |acc, &v| {
        if (v as usize) < k {
            Ok(acc * k + v as usize)
        } else {
            Err(Error::Config(format!("category {v} out of range for K={k}")))
        }
    })
}

fn class_slot(class: ComplianceStatus) -> usize {
    match class {
        ComplianceStatus::Complier => 0,
        ComplianceStatus::NeverTaker => 1,
        other => panic!("no outcome model for {other}"),
    }
}

/// Parameters of the mixture: complier share and one pattern distribution
/// per (cell, class).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceModelState {
    pub omega_c: f64,
    cell_count: usize,
    patterns: usize,
    /// `[cell][class][pattern]`, class 0 = complier, 1 = never-taker.
    eta: Vec<f64>,
}

impl ComplianceModelState {
    /// `eta` is laid out `[cell][class][pattern]` with compliers first.
    pub fn new(omega_c: f64, cell_count: usize, patterns: usize, eta: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&omega_c) {
            return Err(Error::Config(format!("omega_c {omega_c} outside [0, 1]")));
        }
        if eta.len() != cell_count * 2 * patterns {
            return Err(Error::LengthMismatch {
                expected: cell_count * 2 * patterns,
                found: eta.len(),
            });
        }
        for dist in eta.chunks(patterns.max(1)) {
            let s: f64 = dist.iter().sum();
            if dist.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config("eta vectors must be probability vectors".into()));
            }
        }
        Ok(Self {
            omega_c,
            cell_count,
            patterns,
            eta,
        })
    }

    /// Uniform pattern distributions for every (cell, class).
    pub fn uniform(omega_c: f64, cell_count: usize, patterns: usize) -> Self {
        Self {
            omega_c,
            cell_count,
            patterns,
            eta: vec![1.0 / patterns as f64; cell_count * 2 * patterns],
        }
    }

    /// Parameters drawn from the prior.
    pub fn from_prior<R: Rng + ?Sized>(
        prior: &CompliancePrior,
        cell_count: usize,
        patterns: usize,
        rng: &mut R,
    ) -> Self {
        let mut state = Self::uniform(0.5, cell_count, patterns);
        state.omega_c = draw_beta(prior.omega_a, prior.omega_b, rng);
        let weights = vec![prior.dirichlet_weight; patterns];
        for dist in state.eta.chunks_mut(patterns) {
            draw_dirichlet(&weights, dist, rng);
        }
        state
    }

    pub fn cell_count(&self) -> usize {
        self.cell_count
    }

    pub fn patterns(&self) -> usize {
        self.patterns
    }

    pub fn eta(&self, cell: usize, class: ComplianceStatus) -> &[f64] {
        let start = (cell * 2 + class_slot(class)) * self.patterns;
        &self.eta[start..start + self.patterns]
    }

    pub fn eta_mut(&mut self, cell: usize, class: ComplianceStatus) -> &mut [f64] {
        let start = (cell * 2 + class_slot(class)) * self.patterns;
        &mut self.eta[start..start + self.patterns]
    }

    /// Posterior probability that a control unit at `(cell, pattern)` is a
    /// complier.
    pub fn complier_prob(&self, cell: usize, pattern: usize) -> Result<f64> {
        complier_prob_from(
            self.omega_c,
            self.eta(cell, ComplianceStatus::Complier)[pattern],
            self.eta(cell, ComplianceStatus::NeverTaker)[pattern],
        )
    }
}

/// Bayes' rule in log space: `ω g_c / (ω g_c + (1−ω) g_n)`.
pub fn complier_prob_from(omega: f64, g_c: f64, g_n: f64) -> Result<f64> {
    let lc = omega.ln() + g_c.ln();
    let ln = (1.0 - omega).ln() + g_n.ln();
    if lc == f64::NEG_INFINITY && ln == f64::NEG_INFINITY {
        return Err(Error::Internal(format!(
            "both mixture densities vanish (omega={omega}, g_c={g_c}, g_n={g_n})"
        )));
    }
    if lc == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if ln == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    Ok(1.0 / (1.0 + (ln - lc).exp()))
}

pub fn complier_posterior_prob(unit: &ObservedUnit, state: &ComplianceModelState, k: usize) -> Result<f64> {
    if unit.z {
        return Err(Error::Config(format!("unit {:?} is not a control unit", unit.id)));
    }
    state.complier_prob(unit.cell, pattern_index(&unit.y_obs, k)?)
}

fn draw_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0).expect("positive gamma shape").sample(rng)
}

fn draw_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    Beta::new(a, b).expect("positive beta parameters").sample(rng)
}

fn draw_dirichlet<R: Rng + ?Sized>(alpha: &[f64], out: &mut [f64], rng: &mut R) {
    let mut total = 0.0;
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = draw_gamma(a, rng);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// One direct two-block sweep. Statuses of treated units are left as they
/// are; control units get fresh draws in step (a).
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &ComplianceModelState,
    obs: &ObservedDataset,
    compliance: &mut [ComplianceStatus],
    prior: &CompliancePrior,
    rng: &mut R,
) -> Result<ComplianceModelState> {
    if compliance.len() != obs.len() {
        return Err(Error::LengthMismatch {
            expected: obs.len(),
            found: compliance.len(),
        });
    }
    for (u, c) in obs.units().iter().zip(compliance.iter_mut()) {
        if !u.z {
            let p = complier_posterior_prob(u, state, obs.k())?;
            *c = if rng.random_bool(p) {
                ComplianceStatus::Complier
            } else {
                ComplianceStatus::NeverTaker
            };
        }
    }
    let patterns = state.patterns;
    let mut counts = vec![0.0; state.cell_count * 2 * patterns];
    let (mut compliers, mut never) = (0.0, 0.0);
    for (u, &c) in obs.units().iter().zip(compliance.iter()) {
        let slot = match c {
            ComplianceStatus::Complier => {
                compliers += 1.0;
                0
            }
            ComplianceStatus::NeverTaker => {
                never += 1.0;
                1
            }
            _ => return Err(Error::UnknownCompliance(u.id.clone())),
        };
        counts[(u.cell * 2 + slot) * patterns + pattern_index(&u.y_obs, obs.k())?] += 1.0;
    }
    let mut next = state.clone();
    next.omega_c = draw_beta(prior.omega_a + compliers, prior.omega_b + never, rng);
    for (dist, cnt) in next.eta.chunks_mut(patterns).zip(counts.chunks_mut(patterns)) {
        for c in cnt.iter_mut() {
            *c += prior.dirichlet_weight;
        }
        draw_dirichlet(cnt, dist, rng);
    }
    Ok(next)
}

/// Imputes the missing statuses with a fresh chain of `burn_in` sweeps.
pub fn impute_compliance<R: Rng + ?Sized>(
    obs: &ObservedDataset,
    prior: &CompliancePrior,
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<ComplianceStatus>> {
    let sampler = Sampler::new(obs, *prior)?;
    let mut complier = vec![false; obs.len()];
    sampler.impute(burn_in, rng, &mut complier)?;
    Ok(complier
        .into_iter()
        .map(|c| {
            if c {
                ComplianceStatus::Complier
            } else {
                ComplianceStatus::NeverTaker
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
struct ControlGroup {
    cell: usize,
    local: usize,
    units: Vec<usize>,
}

/// Data augmentation on sufficient statistics, built once per dataset.
#[derive(Debug, Clone)]
pub struct Sampler {
    prior: CompliancePrior,
    n_units: usize,
    /// Observed patterns per cell; the remaining patterns share one merged
    /// Dirichlet component.
    local_patterns: Vec<usize>,
    unseen_patterns: Vec<f64>,
    /// Per cell and local pattern: treated compliers and never-takers.
    treated_complier: Vec<Vec<u64>>,
    treated_never: Vec<Vec<u64>>,
    groups: Vec<ControlGroup>,
    treated_is_complier: Vec<(usize, bool)>,
    init_rate: f64,
}

impl Sampler {
    pub fn new(obs: &ObservedDataset, prior: CompliancePrior) -> Result<Self> {
        prior.validate()?;
        let patterns = pattern_count(obs.j(), obs.k()).ok_or_else(|| {
            Error::Config(format!("outcome pattern space {}^{} is too large", obs.k(), obs.j()))
        })?;
        let cells = obs.cell_count();
        // Local pattern indices follow pattern order so that results do not
        // depend on the order of units.
        let mut seen: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); cells];
        let mut codes = Vec::with_capacity(obs.len());
        for u in obs.units() {
            let p = pattern_index(&u.y_obs, obs.k())?;
            seen[u.cell].insert(p, 0);
            codes.push(p);
        }
        for map in seen.iter_mut() {
            for (l, v) in map.values_mut().enumerate() {
                *v = l;
            }
        }
        let local_of: Vec<usize> = obs.units().iter().zip(&codes).map(|(u, p)| seen[u.cell][p]).collect();
        let local_patterns: Vec<usize> = seen.iter().map(|m| m.len()).collect();
        let unseen_patterns = local_patterns
            .iter()
            .map(|&l| (patterns - l) as f64)
            .collect();
        let mut treated_complier: Vec<Vec<u64>> = local_patterns.iter().map(|&l| vec![0; l]).collect();
        let mut treated_never = treated_complier.clone();
        let mut group_of: Vec<Vec<Option<usize>>> = local_patterns.iter().map(|&l| vec![None; l]).collect();
        let mut groups: Vec<ControlGroup> = Vec::new();
        let mut treated_is_complier = Vec::new();
        let (mut n1, mut nc1) = (0u64, 0u64);
        for (i, (u, &local)) in obs.units().iter().zip(&local_of).enumerate() {
            if u.z {
                n1 += 1;
                treated_is_complier.push((i, u.d_obs));
                if u.d_obs {
                    nc1 += 1;
                    treated_complier[u.cell][local] += 1;
                } else {
                    treated_never[u.cell][local] += 1;
                }
            } else {
                let g = *group_of[u.cell][local].get_or_insert_with(|| {
                    groups.push(ControlGroup {
                        cell: u.cell,
                        local,
                        units: Vec::new(),
                    });
                    groups.len() - 1
                });
                groups[g].units.push(i);
            }
        }
        groups.sort_by_key(|g| (g.cell, g.local));
        let init_rate = if n1 == 0 { 0.5 } else { nc1 as f64 / n1 as f64 };
        Ok(Self {
            prior,
            n_units: obs.len(),
            local_patterns,
            unseen_patterns,
            treated_complier,
            treated_never,
            groups,
            treated_is_complier,
            init_rate,
        })
    }

    /// Runs a fresh chain and writes the final complier indicators for every
    /// unit into `complier`. Treated units keep their observed status.
    pub fn impute<R: Rng + ?Sized>(&self, burn_in: usize, rng: &mut R, complier: &mut [bool]) -> Result<()> {
        if burn_in == 0 {
            return Err(Error::Config("burn-in must be at least 1 sweep".into()));
        }
        if complier.len() != self.n_units {
            return Err(Error::LengthMismatch {
                expected: self.n_units,
                found: complier.len(),
            });
        }
        for &(i, c) in &self.treated_is_complier {
            complier[i] = c;
        }
        let cells = self.local_patterns.len();
        // Chain starts from statuses drawn at the treated compliance rate.
        let mut k_group: Vec<u64> = self
            .groups
            .iter()
            .map(|g| binomial(g.units.len() as u64, self.init_rate, rng))
            .collect();
        let mut c_counts: Vec<Vec<f64>> = self.local_patterns.iter().map(|&l| vec![0.0; l]).collect();
        let mut n_counts = c_counts.clone();
        let mut eta_c = c_counts.clone();
        let mut eta_n = c_counts.clone();
        for sweep in 0..burn_in {
            // (b) parameters given completed strata
            let (mut compliers, mut never) = (0u64, 0u64);
            for cell in 0..cells {
                for (l, (c, n)) in c_counts[cell].iter_mut().zip(n_counts[cell].iter_mut()).enumerate() {
                    *c = self.treated_complier[cell][l] as f64;
                    *n = self.treated_never[cell][l] as f64;
                    compliers += self.treated_complier[cell][l];
                    never += self.treated_never[cell][l];
                }
            }
            for (g, &k) in self.groups.iter().zip(&k_group) {
                c_counts[g.cell][g.local] += k as f64;
                n_counts[g.cell][g.local] += (g.units.len() as u64 - k) as f64;
                compliers += k;
                never += g.units.len() as u64 - k;
            }
            let omega = draw_beta(
                self.prior.omega_a + compliers as f64,
                self.prior.omega_b + never as f64,
                rng,
            );
            let w = self.prior.dirichlet_weight;
            for cell in 0..cells {
                let rest = self.unseen_patterns[cell] * w;
                for (eta, counts) in [(&mut eta_c[cell], &c_counts[cell]), (&mut eta_n[cell], &n_counts[cell])] {
                    let mut total = if rest > 0.0 { draw_gamma(rest, rng) } else { 0.0 };
                    for (e, &c) in eta.iter_mut().zip(counts) {
                        *e = draw_gamma(w + c, rng);
                        total += *e;
                    }
                    for e in eta.iter_mut() {
                        *e /= total;
                    }
                }
            }
            // (a) statuses given parameters
            let last = sweep + 1 == burn_in;
            for (g, k) in self.groups.iter().zip(k_group.iter_mut()) {
                let p = complier_prob_from(omega, eta_c[g.cell][g.local], eta_n[g.cell][g.local])?;
                if last {
                    for &i in &g.units {
                        complier[i] = rng.random_bool(p);
                    }
                } else {
                    *k = binomial(g.units.len() as u64, p, rng);
                }
            }
        }
        Ok(())
    }
}
