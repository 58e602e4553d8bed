//! Synthetic Science tables and replication grids.
//!
//! Three scenario families share one generator: a single outcome with 10%
//! compliers, three outcomes with full compliance, and three outcomes with
//! one-sided non-compliance. Outcomes have three ordered categories.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjust::AdjustmentMethod;
use crate::assignment::{AssignmentMechanism, CompleteRandomization};
use crate::data::{reobserve, ComplianceStatus, ObservedDataset, ScienceTable, ScienceUnit};
use crate::engine::{analyze, AnalysisResult, EngineConfig};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::scalar::Scalar;
use crate::statistics::{outcome_estimands, EstimandDef, StatisticKind};

pub const CATEGORIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    NoncomplianceSingle,
    MultipleNoCompliance,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Null,
    Alt,
    Alt1,
    Alt2,
    Alt3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    #[default]
    Zero,
    Partial,
    Perfect,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::NoncomplianceSingle => "single",
            Family::MultipleNoCompliance => "multiple",
            Family::Combined => "combined",
        }
    }
}

impl Hypothesis {
    pub fn as_str(self) -> &'static str {
        match self {
            Hypothesis::Null => "null",
            Hypothesis::Alt => "alt",
            Hypothesis::Alt1 => "alt1",
            Hypothesis::Alt2 => "alt2",
            Hypothesis::Alt3 => "alt3",
        }
    }

    pub fn is_legal_for(self, family: Family) -> bool {
        match self {
            Hypothesis::Null => true,
            Hypothesis::Alt => family != Family::Combined,
            _ => family == Family::Combined,
        }
    }
}

impl Correlation {
    pub fn as_str(self) -> &'static str {
        match self {
            Correlation::Zero => "zero",
            Correlation::Partial => "partial",
            Correlation::Perfect => "perfect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub family: Family,
    pub hypothesis: Hypothesis,
    pub correlation: Correlation,
    pub omega_c: f64,
    pub n: usize,
    pub n_treated: usize,
    pub j: usize,
}

impl ScenarioSpec {
    /// Family defaults: 1,000 units, half treated; 10% compliers for the
    /// single-outcome family, full compliance for the multiple-outcome one.
    pub fn new(family: Family, hypothesis: Hypothesis) -> Self {
        let (omega_c, j) = match family {
            Family::NoncomplianceSingle => (0.1, 1),
            Family::MultipleNoCompliance => (1.0, 3),
            Family::Combined => (0.1, 3),
        };
        Self {
            family,
            hypothesis,
            correlation: Correlation::Zero,
            omega_c,
            n: 1000,
            n_treated: 500,
            j,
        }
    }

    pub fn with_correlation(mut self, c: Correlation) -> Self {
        self.correlation = c;
        self
    }

    pub fn with_omega(mut self, omega_c: f64) -> Self {
        self.omega_c = omega_c;
        self
    }

    pub fn with_size(mut self, n: usize, n_treated: usize) -> Self {
        self.n = n;
        self.n_treated = n_treated;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.hypothesis.is_legal_for(self.family) {
            return Err(Error::Scenario(format!(
                "hypothesis {} is not defined for family {}",
                self.hypothesis.as_str(),
                self.family.as_str()
            )));
        }
        if self.j == 1 && self.correlation != Correlation::Zero {
            return Err(Error::Scenario("correlation needs more than one outcome".into()));
        }
        if self.j == 0 {
            return Err(Error::Scenario("at least one outcome is required".into()));
        }
        if !(self.omega_c > 0.0 && self.omega_c <= 1.0) {
            return Err(Error::Scenario(format!("omega {} outside (0, 1]", self.omega_c)));
        }
        if self.n_treated > self.n {
            return Err(Error::Scenario("more treated units than units".into()));
        }
        Ok(())
    }

    pub fn outcome_names(&self) -> Vec<String> {
        (1..=self.j).map(|i| format!("y{i}")).collect()
    }

    pub fn estimands(&self) -> Vec<EstimandDef> {
        outcome_estimands(&self.outcome_names())
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.family.as_str(), self.hypothesis.as_str())?;
        if self.j > 1 {
            write!(f, "/{}", self.correlation.as_str())?;
        }
        write!(f, "/omega={}/n={}/treated={}", self.omega_c, self.n, self.n_treated)
    }
}

impl FromStr for ScenarioSpec {
    type Err = Error;

    /// `family/hypothesis[/correlation][/omega=x][/n=N][/treated=n1]`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('/').map(str::trim).filter(|p| !p.is_empty());
        let family = match parts.next() {
            Some("single" | "noncompliance_single") => Family::NoncomplianceSingle,
            Some("multiple" | "multiple_no_compliance") => Family::MultipleNoCompliance,
            Some("combined") => Family::Combined,
            other => return Err(Error::Scenario(format!("unknown family {other:?}"))),
        };
        let hypothesis = match parts.next() {
            Some("null") => Hypothesis::Null,
            Some("alt") => Hypothesis::Alt,
            Some("alt1") => Hypothesis::Alt1,
            Some("alt2") => Hypothesis::Alt2,
            Some("alt3") => Hypothesis::Alt3,
            other => return Err(Error::Scenario(format!("unknown hypothesis {other:?}"))),
        };
        let mut spec = ScenarioSpec::new(family, hypothesis);
        let mut size = (spec.n, None);
        for part in parts {
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|_| Error::Scenario(format!("bad number in {part:?}")))
            };
            match part.split_once('=') {
                Some(("omega", v)) => spec.omega_c = num(v)?,
                Some(("n", v)) => size.0 = num(v)? as usize,
                Some(("treated", v)) => size.1 = Some(num(v)? as usize),
                Some(_) => return Err(Error::Scenario(format!("unknown scenario option {part:?}"))),
                None => {
                    spec.correlation = match part {
                        "zero" => Correlation::Zero,
                        "partial" => Correlation::Partial,
                        "perfect" => Correlation::Perfect,
                        other => return Err(Error::Scenario(format!("unknown token {other:?}"))),
                    }
                }
            }
        }
        spec.n = size.0;
        spec.n_treated = size.1.unwrap_or(size.0 / 2);
        spec.validate()?;
        Ok(spec)
    }
}

const COMPLIER_CONTROL: [f64; 3] = [0.45, 0.45, 0.10];
const NEVER_TAKER: [f64; 3] = [0.02, 0.02, 0.96];
const COMPLIER_TREATED_ALT: [f64; 3] = [0.80, 0.10, 0.10];
const MULTIPLE_TREATED_ALT: [f64; 3] = [0.50, 0.45, 0.05];

/// Marginal category probabilities of `Y(z)` for a unit of `class`.
pub fn marginal(class: ComplianceStatus, z: bool, hypothesis: Hypothesis, family: Family) -> Result<[f64; 3]> {
    if !hypothesis.is_legal_for(family) {
        return Err(Error::Scenario(format!(
            "hypothesis {} is not defined for family {}",
            hypothesis.as_str(),
            family.as_str()
        )));
    }
    match class {
        ComplianceStatus::NeverTaker => return Ok(NEVER_TAKER),
        ComplianceStatus::Complier => {}
        other => return Err(Error::Scenario(format!("no marginal for {other}"))),
    }
    let control = match hypothesis {
        Hypothesis::Alt2 => [0.30, 0.60, 0.10],
        Hypothesis::Alt3 => [0.25, 0.55, 0.20],
        _ => COMPLIER_CONTROL,
    };
    Ok(match (z, hypothesis, family) {
        (false, ..) | (true, Hypothesis::Null, _) => control,
        (true, _, Family::MultipleNoCompliance) => MULTIPLE_TREATED_ALT,
        (true, ..) => COMPLIER_TREATED_ALT,
    })
}

pub fn draw_category<R: Rng + ?Sized>(p: &[f64; 3], rng: &mut R) -> u8 {
    let u: f64 = rng.random();
    if u < p[0] {
        0
    } else if u < p[0] + p[1] {
        1
    } else {
        2
    }
}

pub fn draw_marginal<R: Rng + ?Sized>(
    class: ComplianceStatus,
    z: bool,
    hypothesis: Hypothesis,
    family: Family,
    rng: &mut R,
) -> Result<u8> {
    Ok(draw_category(&marginal(class, z, hypothesis, family)?, rng))
}

/// Fills `out` with correlated draws. Under partial correlation coordinate
/// `t` copies each earlier coordinate with probability `1/(t+1)` and is
/// fresh otherwise, which for three outcomes is: `y2 = y1` w.p. ½, and
/// `y3` equal to `y1`, `y2` or fresh w.p. ⅓ each.
pub fn correlated<R: Rng + ?Sized>(
    mode: Correlation,
    out: &mut [u8],
    rng: &mut R,
    mut fresh: impl FnMut(&mut R) -> u8,
) {
    for t in 0..out.len() {
        out[t] = match mode {
            _ if t == 0 => fresh(rng),
            Correlation::Zero => fresh(rng),
            Correlation::Perfect => out[0],
            Correlation::Partial => {
                let pick = rng.random_range(0..=t);
                if pick < t {
                    out[pick]
                } else {
                    fresh(rng)
                }
            }
        };
    }
}

/// Three-outcome form of [`correlated`] with the first draw given.
pub fn apply_correlation<R: Rng + ?Sized>(
    first: u8,
    mut second: impl FnMut(&mut R) -> u8,
    mut third: impl FnMut(&mut R) -> u8,
    mode: Correlation,
    rng: &mut R,
) -> [u8; 3] {
    let mut out = [first, 0, 0];
    let mut t = 0;
    correlated(mode, &mut out, rng, |r| {
        t += 1;
        match t {
            1 => first,
            2 => second(r),
            _ => third(r),
        }
    });
    out
}

/// Science table with compliance drawn i.i.d. Bernoulli(`omega_c`) per unit.
pub fn generate<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<ScienceTable> {
    spec.validate()?;
    let mut units = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let class = if rng.random_bool(spec.omega_c) {
            ComplianceStatus::Complier
        } else {
            ComplianceStatus::NeverTaker
        };
        let mut ys = [vec![0u8; spec.j], vec![0u8; spec.j]];
        for (z, y) in [false, true].into_iter().zip(ys.iter_mut()) {
            let p = marginal(class, z, spec.hypothesis, spec.family)?;
            correlated(spec.correlation, y, rng, |r| draw_category(&p, r));
        }
        let [y0, y1] = ys;
        units.push(ScienceUnit {
            id: (i + 1).to_string(),
            cell: 0,
            compliance: class,
            y0,
            y1,
        });
    }
    ScienceTable::new(units, spec.j, CATEGORIES, 1)
}

/// Generates a table and observes it under one completely randomized
/// assignment.
pub fn simulate<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<(ScienceTable, ObservedDataset)> {
    let table = generate(spec, rng)?;
    let z = CompleteRandomization::new(spec.n, spec.n_treated)?.draw(rng);
    let obs = reobserve(&table, &z)?;
    Ok((table, obs))
}

/// Analyses of one replication, one per statistic kind.
pub type Replication<S> = Vec<AnalysisResult<S>>;

/// Runs `reps` replications. Replication `r` generates its data from
/// `key.child(r).child(0)` and analyses statistic `kinds[s]` with
/// `key.child(r).child(1 + s)`.
pub fn replicate_results<S: Scalar>(
    spec: &ScenarioSpec,
    kinds: &[StatisticKind],
    reps: usize,
    cfg: &EngineConfig,
    key: StreamKey,
) -> Result<Vec<Replication<S>>> {
    spec.validate()?;
    cfg.validate()?;
    let estimands = spec.estimands();
    let mech = CompleteRandomization::new(spec.n, spec.n_treated)?;
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_key = key.child(r as u64);
            let (_, obs) = simulate(spec, &mut rep_key.child(0).rng())?;
            kinds
                .iter()
                .enumerate()
                .map(|(s, &kind)| analyze(&obs, kind, &estimands, cfg, &mech, rep_key.child(1 + s as u64)))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub kind: StatisticKind,
    pub method: AdjustmentMethod,
    pub rejections: usize,
    pub reps: usize,
    pub rate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationTable {
    pub scenario: ScenarioSpec,
    pub rows: Vec<RejectionRate>,
}

impl ReplicationTable {
    pub fn rate(&self, kind: StatisticKind, method: AdjustmentMethod) -> Option<&RejectionRate> {
        self.rows.iter().find(|r| r.kind == kind && r.method == method)
    }
}

/// Familywise rejection rates: a replication rejects when the smallest
/// adjusted p-value is at most `alpha`.
pub fn rejection_table<S: Scalar>(
    spec: &ScenarioSpec,
    results: &[Replication<S>],
    kinds: &[StatisticKind],
    methods: &[AdjustmentMethod],
) -> ReplicationTable {
    let reps = results.len();
    let mut rows = Vec::new();
    for (s, &kind) in kinds.iter().enumerate() {
        for &method in methods {
            let rejections = results.iter().filter(|rep| rep[s].rejects(method)).count();
            let rate = if reps == 0 { 0.0 } else { rejections as f64 / reps as f64 };
            let se = if reps == 0 { 0.0 } else { (rate * (1.0 - rate) / reps as f64).sqrt() };
            rows.push(RejectionRate {
                kind,
                method,
                rejections,
                reps,
                rate,
                se,
            });
        }
    }
    ReplicationTable { scenario: *spec, rows }
}

pub fn replicate<S: Scalar>(
    spec: &ScenarioSpec,
    kinds: &[StatisticKind],
    methods: &[AdjustmentMethod],
    reps: usize,
    cfg: &EngineConfig,
    key: StreamKey,
) -> Result<ReplicationTable> {
    let results = replicate_results::<S>(spec, kinds, reps, cfg, key)?;
    Ok(rejection_table(spec, &results, kinds, methods))
}
