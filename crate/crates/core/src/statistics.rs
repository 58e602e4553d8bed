//! ITT and CACE test statistics per estimand (subgroup × outcome).
//!
//! All statistics are functions of a [`Tabulation`]: category counts of one
//! outcome within one subgroup, split into treated compliers, treated
//! never-takers and controls. Observed and hypothetical datasets go through
//! the same tabulation, so identical sufficient statistics give bit-identical
//! statistic values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ObservedDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EstimandDef {
    pub label: String,
    /// Restrict to one covariate cell; `None` uses every unit.
    pub cell_filter: Option<usize>,
    pub outcome_index: usize,
}

impl EstimandDef {
    pub fn new(label: impl Into<String>, cell_filter: Option<usize>, outcome_index: usize) -> Self {
        Self {
            label: label.into(),
            cell_filter,
            outcome_index,
        }
    }

    pub fn validate(&self, j: usize, cell_count: usize) -> Result<()> {
        if self.outcome_index >= j {
            return Err(Error::Config(format!(
                "estimand {}: outcome index {} >= {j}",
                self.label, self.outcome_index
            )));
        }
        if let Some(c) = self.cell_filter {
            if c >= cell_count {
                return Err(Error::Config(format!(
                    "estimand {}: cell {c} >= {cell_count}",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

/// One estimand per outcome over all units.
pub fn outcome_estimands(outcome_names: &[String]) -> Vec<EstimandDef> {
    outcome_names
        .iter()
        .enumerate()
        .map(|(j, name)| EstimandDef::new(name.clone(), None, j))
        .collect()
}

/// Cell × outcome cross product, cell-major. With a single cell this is
/// [`outcome_estimands`].
pub fn cross_estimands(cell_count: usize, cell_name: &str, outcome_names: &[String]) -> Vec<EstimandDef> {
    if cell_count <= 1 {
        return outcome_estimands(outcome_names);
    }
    (0..cell_count)
        .flat_map(|c| {
            outcome_names
                .iter()
                .enumerate()
                .map(move |(j, name)| EstimandDef::new(format!("{cell_name}={c}/{name}"), Some(c), j))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// Difference in mean outcome between assigned arms.
    Itt,
    /// Maximum-likelihood complier effect under the exclusion restriction.
    Cace,
    /// Instrumental-variables ratio `ITT_Y / ITT_D`.
    CaceRatio,
}

impl StatisticKind {
    /// Whether the statistic reads treatment receipt, so that missing
    /// compliance has to be imputed.
    pub fn uses_receipt(self) -> bool {
        !matches!(self, StatisticKind::Itt)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StatisticKind::Itt => "itt",
            StatisticKind::Cace => "cace",
            StatisticKind::CaceRatio => "cace-ratio",
        }
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatisticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "itt" => Ok(StatisticKind::Itt),
            "cace" => Ok(StatisticKind::Cace),
            "cace-ratio" | "cace_ratio" | "iv" => Ok(StatisticKind::CaceRatio),
            other => Err(Error::Config(format!("unknown statistic {other:?}"))),
        }
    }
}

/// Which values count as "at least as extreme".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    #[default]
    TwoSidedAbs,
    RightTail,
    LeftTail,
}

impl Tail {
    /// Monotone transform after which larger means more extreme.
    pub fn extremity<S: Scalar>(self, t: S) -> S {
        match self {
            Tail::TwoSidedAbs => t.abs(),
            Tail::RightTail => t,
            Tail::LeftTail => -t,
        }
    }

    /// `candidate` is at least as extreme as `reference`, both already
    /// transformed by [`Tail::extremity`]. Differences within rounding noise
    /// count as ties.
    pub fn at_least<S: Scalar>(candidate: S, reference: S) -> bool {
        candidate >= reference - S::tie_slack(reference)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tail::TwoSidedAbs => "two",
            Tail::RightTail => "right",
            Tail::LeftTail => "left",
        }
    }
}

impl FromStr for Tail {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two" | "two-sided" | "two_sided_abs" => Ok(Tail::TwoSidedAbs),
            "right" | "right_tail" => Ok(Tail::RightTail),
            "left" | "left_tail" => Ok(Tail::LeftTail),
            other => Err(Error::Config(format!("unknown tail {other:?}"))),
        }
    }
}

/// Why a statistic is undefined on a tabulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Undefined {
    EmptyArm,
    NoCompliers,
}

impl Undefined {
    fn into_error(self, label: &str) -> Error {
        match self {
            Undefined::EmptyArm => Error::EmptyArm {
                label: label.to_string(),
            },
            Undefined::NoCompliers => Error::DegenerateCompliance {
                label: label.to_string(),
            },
        }
    }
}

/// Receipt group of an observed unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    TreatedComplier = 0,
    TreatedNever = 1,
    Control = 2,
}

impl Group {
    pub fn of(z: bool, d: bool) -> Self {
        match (z, d) {
            (true, true) => Group::TreatedComplier,
            (true, false) => Group::TreatedNever,
            (false, _) => Group::Control,
        }
    }
}

/// Category counts of one outcome within one subgroup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tabulation {
    pub treated_complier: Vec<u64>,
    pub treated_never: Vec<u64>,
    pub control: Vec<u64>,
}

fn total(counts: &[u64]) -> u64 {
    counts.iter().sum()
}

fn score_sum(counts: &[u64]) -> u64 {
    counts.iter().enumerate().map(|(y, &c)| y as u64 * c).sum()
}

impl Tabulation {
    pub fn new(k: usize) -> Self {
        Self {
            treated_complier: vec![0; k],
            treated_never: vec![0; k],
            control: vec![0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.control.len()
    }

    pub fn add(&mut self, group: Group, category: usize) {
        match group {
            Group::TreatedComplier => self.treated_complier[category] += 1,
            Group::TreatedNever => self.treated_never[category] += 1,
            Group::Control => self.control[category] += 1,
        }
    }

    pub fn n_treated(&self) -> u64 {
        total(&self.treated_complier) + total(&self.treated_never)
    }

    pub fn n_control(&self) -> u64 {
        total(&self.control)
    }

    pub fn n_compliers(&self) -> u64 {
        total(&self.treated_complier)
    }

    pub fn itt<S: Scalar>(&self) -> Result<S, Undefined> {
        let n1 = self.n_treated();
        let n0 = self.n_control();
        if n1 == 0 || n0 == 0 {
            return Err(Undefined::EmptyArm);
        }
        let s1 = score_sum(&self.treated_complier) + score_sum(&self.treated_never);
        let s0 = score_sum(&self.control);
        Ok(S::ratio(s1 as usize, n1 as usize) - S::ratio(s0 as usize, n0 as usize))
    }

    /// `ITT / (treated receipt rate − control receipt rate)`; the control
    /// rate is zero under one-sided non-compliance.
    pub fn cace_ratio<S: Scalar>(&self) -> Result<S, Undefined> {
        let itt = self.itt::<S>()?;
        let nc1 = self.n_compliers();
        if nc1 == 0 {
            return Err(Undefined::NoCompliers);
        }
        Ok(itt / S::ratio(nc1 as usize, self.n_treated() as usize))
    }

    /// Maximum-likelihood complier effect under the exclusion restriction,
    /// with saturated categorical outcome models for treated compliers,
    /// never-takers (shared by both arms) and control compliers.
    ///
    /// Writing `v(y) = ω·f_c0(y)` and `u(y) = (1−ω)·f_n(y)`, the
    /// log-likelihood `n_c1·ln Σv + Σ t_n(y) ln u(y) + Σ c_0(y) ln(u(y)+v(y))`
    /// is concave on the simplex. Its KKT conditions pin every coordinate
    /// given the scalar `a = n_c1/ω`:
    /// `v(y) = max(0, c_0(y)/(N−a) − t_n(y)/a)`, and `a` solves the
    /// increasing equation `Σ v(y) = n_c1/a` on `(n_c1, N)`. The interior
    /// solution `a = n_1` reproduces the instrumental-variables ratio.
    pub fn cace<S: Scalar>(&self) -> Result<S, Undefined> {
        let n1 = self.n_treated();
        let n0 = self.n_control();
        if n1 == 0 || n0 == 0 {
            return Err(Undefined::EmptyArm);
        }
        let nc1 = self.n_compliers();
        if nc1 == 0 {
            return Err(Undefined::NoCompliers);
        }
        if total(&self.treated_never) == 0 {
            // ω = 1 on the boundary; the control arm is all compliers.
            return self.itt();
        }
        let n = S::from_u64(n1 + n0).unwrap();
        let nc1_s = S::from_u64(nc1).unwrap();
        let tn: Vec<S> = self.treated_never.iter().map(|&c| S::from_u64(c).unwrap()).collect();
        let c0: Vec<S> = self.control.iter().map(|&c| S::from_u64(c).unwrap()).collect();
        let complier_mass = |a: S, out: &mut Vec<S>| {
            out.clear();
            let rest = n - a;
            out.extend(
                c0.iter()
                    .zip(&tn)
                    .map(|(&c, &t)| (c / rest - t / a).max(S::zero())),
            );
        };
        let mut v = Vec::with_capacity(self.k());

        let a_interior = S::from_u64(n1).unwrap();
        let interior = self
            .control
            .iter()
            .zip(&self.treated_never)
            .all(|(&c, &t)| c * n1 >= t * n0);
        if interior {
            complier_mass(a_interior, &mut v);
        } else {
            let excess = |a: S, v: &mut Vec<S>| {
                complier_mass(a, v);
                v.iter().fold(S::zero(), |acc, &x| acc + x) - nc1_s / a
            };
            let (mut lo, mut hi) = (nc1_s, n);
            for _ in 0..256 {
                let mid = lo + (hi - lo) / S::lit(2.0);
                if mid <= lo || mid >= hi {
                    break;
                }
                if excess(mid, &mut v) < S::zero() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            complier_mass(hi, &mut v);
        }
        let mass = v.iter().fold(S::zero(), |acc, &x| acc + x);
        if mass <= S::zero() {
            return Err(Undefined::NoCompliers);
        }
        let control_complier_mean = v
            .iter()
            .enumerate()
            .fold(S::zero(), |acc, (y, &x)| acc + S::from_usize(y).unwrap() * x)
            / mass;
        let treated_complier_mean = S::ratio(score_sum(&self.treated_complier) as usize, nc1 as usize);
        Ok(treated_complier_mean - control_complier_mean)
    }

    pub fn statistic<S: Scalar>(&self, kind: StatisticKind) -> Result<S, Undefined> {
        match kind {
            StatisticKind::Itt => self.itt(),
            StatisticKind::Cace => self.cace(),
            StatisticKind::CaceRatio => self.cace_ratio(),
        }
    }
}

/// Tabulations for every (cell, outcome) pair; estimands aggregate cells.
#[derive(Debug, Clone)]
pub struct CellTables {
    cell_count: usize,
    j: usize,
    k: usize,
    counts: Vec<u64>,
}

impl CellTables {
    pub fn new(cell_count: usize, j: usize, k: usize) -> Self {
        Self {
            cell_count,
            j,
            k,
            counts: vec![0; cell_count * j * 3 * k],
        }
    }

    pub fn clear(&mut self) {
        self.counts.fill(0);
    }

    #[inline]
    pub fn add_unit(&mut self, cell: usize, group: Group, outcomes: &[u8]) {
        let base = cell * self.j * 3 * self.k + group as usize * self.k;
        for (j, &y) in outcomes.iter().enumerate() {
            self.counts[base + j * 3 * self.k + y as usize] += 1;
        }
    }

    pub fn from_observed(obs: &ObservedDataset) -> Self {
        let mut tables = Self::new(obs.cell_count(), obs.j(), obs.k());
        for u in obs.units() {
            tables.add_unit(u.cell, Group::of(u.z, u.d_obs), &u.y_obs);
        }
        tables
    }

    pub fn tabulate(&self, e: &EstimandDef) -> Tabulation {
        let mut tab = Tabulation::new(self.k);
        let cells = match e.cell_filter {
            Some(c) => c..c + 1,
            None => 0..self.cell_count,
        };
        for cell in cells {
            let base = (cell * self.j + e.outcome_index) * 3 * self.k;
            for y in 0..self.k {
                tab.treated_complier[y] += self.counts[base + y];
                tab.treated_never[y] += self.counts[base + self.k + y];
                tab.control[y] += self.counts[base + 2 * self.k + y];
            }
        }
        tab
    }
}

pub fn tabulate(obs: &ObservedDataset, e: &EstimandDef) -> Tabulation {
    let mut tab = Tabulation::new(obs.k());
    for u in obs.units() {
        if e.cell_filter.is_none_or(|c| c == u.cell) {
            tab.add(Group::of(u.z, u.d_obs), u.y_obs[e.outcome_index] as usize);
        }
    }
    tab
}

pub fn itt<S: Scalar>(obs: &ObservedDataset, e: &EstimandDef) -> Result<S> {
    statistic(obs, StatisticKind::Itt, e)
}

pub fn cace<S: Scalar>(obs: &ObservedDataset, e: &EstimandDef) -> Result<S> {
    statistic(obs, StatisticKind::Cace, e)
}

pub fn cace_ratio<S: Scalar>(obs: &ObservedDataset, e: &EstimandDef) -> Result<S> {
    statistic(obs, StatisticKind::CaceRatio, e)
}

pub fn statistic<S: Scalar>(obs: &ObservedDataset, kind: StatisticKind, e: &EstimandDef) -> Result<S> {
    e.validate(obs.j(), obs.cell_count())?;
    tabulate(obs, e)
        .statistic(kind)
        .map_err(|u| u.into_error(&e.label))
}

/// Statistic per estimand, in order.
pub fn statistic_vector<S: Scalar>(
    obs: &ObservedDataset,
    kind: StatisticKind,
    estimands: &[EstimandDef],
) -> Result<Vec<S>> {
    for e in estimands {
        e.validate(obs.j(), obs.cell_count())?;
    }
    let tables = CellTables::from_observed(obs);
    estimands
        .iter()
        .map(|e| {
            tables
                .tabulate(e)
                .statistic(kind)
                .map_err(|u| u.into_error(&e.label))
        })
        .collect()
}

/// Like [`statistic_vector`] but keeps undefined entries as `None`.
pub fn statistic_row<S: Scalar>(
    tables: &CellTables,
    kind: StatisticKind,
    estimands: &[EstimandDef],
    out: &mut Vec<Option<S>>,
) {
    out.clear();
    out.extend(estimands.iter().map(|e| tables.tabulate(e).statistic(kind).ok()));
}
