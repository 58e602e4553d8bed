//! Imputation-randomization iterations and the p-values built from them.
//!
//! Each iteration imputes missing compliance under the null (skipped for
//! ITT), draws one hypothetical assignment, re-observes the sharp-null table
//! and records the statistic vector. Iteration `m` draws everything from
//! `key.child(m)`, so the matrix is identical for any thread count.
//!
//! p-values are kept as integer counts out of `M` and converted to the
//! scalar type only for output.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjust::AdjustmentMethod;
use crate::assignment::AssignmentMechanism;
use crate::data::{ObservedDataset, PotentialOutcomes};
use crate::error::{Error, Result};
use crate::imputation::{CompliancePrior, Sampler};
use crate::rng::StreamKey;
use crate::scalar::Scalar;
use crate::statistics::{statistic_row, CellTables, EstimandDef, Group, StatisticKind, Tail};

/// Order of the imputation and assignment steps within an iteration. Both
/// give the same distribution of hypothetical statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOrder {
    #[default]
    ImputeThenDraw,
    DrawThenImpute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub m: usize,
    pub alpha: f64,
    pub tail: Tail,
    pub prior: CompliancePrior,
    pub burn_in: usize,
    pub order: StepOrder,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            m: 10_000,
            alpha: 0.05,
            tail: Tail::TwoSidedAbs,
            prior: CompliancePrior::default(),
            burn_in: 50,
            order: StepOrder::ImputeThenDraw,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("M must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.burn_in == 0 {
            return Err(Error::Config("burn-in must be at least 1 sweep".into()));
        }
        self.prior.validate()
    }
}

/// Hypothetical statistics, one row per iteration. `None` marks an
/// estimand whose statistic was undefined in that iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMatrix<S> {
    m: usize,
    j: usize,
    values: Vec<Option<S>>,
    /// Row `m` was drawn from `stream.child(m)`.
    pub stream: StreamKey,
}

impl<S: Scalar> IterationMatrix<S> {
    pub fn from_rows(rows: Vec<Vec<Option<S>>>, stream: StreamKey) -> Result<Self> {
        let j = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != j) {
            return Err(Error::LengthMismatch {
                expected: j,
                found: bad.len(),
            });
        }
        Ok(Self {
            m: rows.len(),
            j,
            values: rows.into_iter().flatten().collect(),
            stream,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn get(&self, m: usize, j: usize) -> Option<S> {
        self.values[m * self.j + j]
    }

    pub fn row(&self, m: usize) -> &[Option<S>] {
        &self.values[m * self.j..(m + 1) * self.j]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = Option<S>> + '_ {
        (0..self.m).map(move |m| self.get(m, j))
    }

    /// Iterations with an undefined statistic, per estimand.
    pub fn degenerate_counts(&self) -> Vec<usize> {
        (0..self.j).map(|j| self.column(j).filter(Option::is_none).count()).collect()
    }
}

/// Everything an iteration needs besides its random stream.
struct Plan<'a> {
    n: usize,
    cells: &'a [usize],
    /// Outcomes under control and under treatment; identical under the null.
    y0: Vec<&'a [u8]>,
    y1: Vec<&'a [u8]>,
    known: Option<Vec<bool>>,
    sampler: Option<Sampler>,
    j: usize,
    k: usize,
    cell_count: usize,
}

fn run_plan<S: Scalar, M: AssignmentMechanism>(
    plan: &Plan<'_>,
    kind: StatisticKind,
    estimands: &[EstimandDef],
    cfg: &EngineConfig,
    mech: &M,
    key: StreamKey,
) -> Result<IterationMatrix<S>> {
    cfg.validate()?;
    if mech.n_units() != plan.n {
        return Err(Error::LengthMismatch {
            expected: plan.n,
            found: mech.n_units(),
        });
    }
    for e in estimands {
        e.validate(plan.j, plan.cell_count)?;
    }
    let width = estimands.len();
    let mut values: Vec<Option<S>> = vec![None; cfg.m * width];
    const BLOCK: usize = 64;
    let chunk = (BLOCK * width).max(1);
    values
        .par_chunks_mut(chunk)
        .enumerate()
        .try_for_each(|(block, out)| -> Result<()> {
            let mut z = vec![false; plan.n];
            let mut complier = plan.known.clone().unwrap_or_else(|| vec![false; plan.n]);
            let mut tables = CellTables::new(plan.cell_count, plan.j, plan.k);
            let mut row: Vec<Option<S>> = Vec::with_capacity(width);
            let rows = if width == 0 { 0 } else { out.len() / width };
            for r in 0..rows {
                let it = (block * BLOCK + r) as u64;
                let mut rng = key.child(it).rng();
                match cfg.order {
                    StepOrder::ImputeThenDraw => {
                        impute(plan, cfg, &mut rng, &mut complier)?;
                        mech.draw_into(&mut rng, &mut z);
                    }
                    StepOrder::DrawThenImpute => {
                        mech.draw_into(&mut rng, &mut z);
                        impute(plan, cfg, &mut rng, &mut complier)?;
                    }
                }
                tables.clear();
                for i in 0..plan.n {
                    let (group, y) = if z[i] {
                        let g = if complier[i] { Group::TreatedComplier } else { Group::TreatedNever };
                        (g, plan.y1[i])
                    } else {
                        (Group::Control, plan.y0[i])
                    };
                    tables.add_unit(plan.cells[i], group, y);
                }
                statistic_row(&tables, kind, estimands, &mut row);
                out[r * width..(r + 1) * width].copy_from_slice(&row);
            }
            Ok(())
        })?;
    Ok(IterationMatrix {
        m: cfg.m,
        j: width,
        values,
        stream: key,
    })
}

fn impute<R: Rng + ?Sized>(plan: &Plan<'_>, cfg: &EngineConfig, rng: &mut R, complier: &mut [bool]) -> Result<()> {
    match &plan.sampler {
        Some(s) => s.impute(cfg.burn_in, rng, complier),
        None => Ok(()),
    }
}

/// Iterations on observed data under the sharp null of no effect.
///
/// ITT never reads treatment receipt, so its iterations skip imputation and
/// treat every control unit as a never-taker placeholder.
pub fn run_iterations<S: Scalar, M: AssignmentMechanism>(
    obs: &ObservedDataset,
    kind: StatisticKind,
    estimands: &[EstimandDef],
    cfg: &EngineConfig,
    mech: &M,
    key: StreamKey,
) -> Result<IterationMatrix<S>> {
    let cells: Vec<usize> = obs.units().iter().map(|u| u.cell).collect();
    let y: Vec<&[u8]> = obs.units().iter().map(|u| u.y_obs.as_slice()).collect();
    let (known, sampler) = if kind.uses_receipt() {
        (None, Some(Sampler::new(obs, cfg.prior)?))
    } else {
        (Some(obs.units().iter().map(|u| u.z && u.d_obs).collect()), None)
    };
    let plan = Plan {
        n: obs.len(),
        cells: &cells,
        y0: y.clone(),
        y1: y,
        known,
        sampler,
        j: obs.j(),
        k: obs.k(),
        cell_count: obs.cell_count(),
    };
    run_plan(&plan, kind, estimands, cfg, mech, key)
}

/// Iterations on a table with known compliance for every unit, e.g. a
/// simulated Science table or a sharp-null table. No imputation happens.
pub fn run_iterations_on_table<S: Scalar, T: PotentialOutcomes + ?Sized, M: AssignmentMechanism>(
    table: &T,
    kind: StatisticKind,
    estimands: &[EstimandDef],
    cfg: &EngineConfig,
    mech: &M,
    key: StreamKey,
) -> Result<IterationMatrix<S>> {
    let n = table.len();
    let known = (0..n)
        .map(|i| {
            table
                .compliance(i)
                .receipt(true)
                .ok_or_else(|| Error::UnknownCompliance(table.id(i).to_string()))
        })
        .collect::<Result<Vec<bool>>>()?;
    let cells: Vec<usize> = (0..n).map(|i| table.cell(i)).collect();
    let plan = Plan {
        n,
        cells: &cells,
        y0: (0..n).map(|i| table.outcomes(i, false)).collect(),
        y1: (0..n).map(|i| table.outcomes(i, true)).collect(),
        known: Some(known),
        sampler: None,
        j: table.j(),
        k: table.k(),
        cell_count: table.cell_count(),
    };
    run_plan(&plan, kind, estimands, cfg, mech, key)
}

fn extremity<S: Scalar>(tail: Tail, t: Option<S>) -> Option<S> {
    t.map(|t| tail.extremity(t))
}

/// `#{m : ext(t_hyp[m][j]) ≥ ext(t_obs[j])}` per estimand; undefined
/// hypothetical statistics are never counted as extreme.
pub fn nominal_counts<S: Scalar>(t_obs: &[S], it: &IterationMatrix<S>, tail: Tail) -> Vec<usize> {
    t_obs
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let reference = tail.extremity(t);
            it.column(j)
                .filter(|&h| extremity(tail, h).is_some_and(|e| Tail::at_least(e, reference)))
                .count()
        })
        .collect()
}

pub fn nominal_pvalues<S: Scalar>(t_obs: &[S], it: &IterationMatrix<S>, tail: Tail) -> Vec<S> {
    nominal_counts(t_obs, it, tail)
        .into_iter()
        .map(|c| S::ratio(c, it.m()))
        .collect()
}

/// Self-inclusive counts behind the hypothetical p-values, `M × J` row
/// major. An undefined entry gets `M` (p = 1). Sorting each column makes
/// this `O(M log M)`.
pub fn hypothetical_counts<S: Scalar>(it: &IterationMatrix<S>, tail: Tail) -> Vec<usize> {
    let (m, width) = (it.m(), it.j());
    let mut counts = vec![m; m * width];
    for j in 0..width {
        let mut sorted: Vec<S> = it.column(j).filter_map(|h| extremity(tail, h)).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for r in 0..m {
            if let Some(e) = extremity(tail, it.get(r, j)) {
                let below = sorted.partition_point(|&x| !Tail::at_least(x, e));
                counts[r * width + j] = sorted.len() - below;
            }
        }
    }
    counts
}

pub fn hypothetical_pvalue_matrix<S: Scalar>(it: &IterationMatrix<S>, tail: Tail) -> Vec<Vec<S>> {
    let width = it.j();
    hypothetical_counts(it, tail)
        .chunks(width.max(1))
        .take(it.m())
        .map(|row| row.iter().map(|&c| S::ratio(c, it.m())).collect())
        .collect()
}

/// Row minima of the hypothetical counts, sorted ascending.
pub fn sorted_minima(hyp_counts: &[usize], m: usize, width: usize) -> Vec<usize> {
    let mut mins: Vec<usize> = if width == 0 {
        vec![m; m]
    } else {
        hyp_counts.chunks(width).map(|r| *r.iter().min().unwrap()).collect()
    };
    mins.sort_unstable();
    mins
}

/// `#{m : min_m ≤ nominal_j}` per estimand.
pub fn randomization_counts(nominal: &[usize], sorted_mins: &[usize]) -> Vec<usize> {
    nominal
        .iter()
        .map(|&c| sorted_mins.partition_point(|&x| x <= c))
        .collect()
}

/// Lower empirical `alpha`-quantile of the row minima, as a count.
pub fn cutoff_count(sorted_mins: &[usize], alpha: f64) -> usize {
    let m = sorted_mins.len();
    if m == 0 {
        return 0;
    }
    let rank = ((alpha * m as f64).ceil() as usize).clamp(1, m);
    sorted_mins[rank - 1]
}

pub fn adjust_randomization<S: Scalar>(nominal: &[S], p_hyp: &[Vec<S>]) -> Vec<S> {
    let m = p_hyp.len();
    let mut mins: Vec<S> = p_hyp
        .iter()
        .map(|r| r.iter().copied().fold(S::infinity(), S::min))
        .collect();
    mins.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nominal
        .iter()
        .map(|&p| S::ratio(mins.partition_point(|&x| x <= p), m))
        .collect()
}

pub fn familywise_cutoff<S: Scalar>(p_hyp: &[Vec<S>], alpha: f64) -> S {
    let mut mins: Vec<S> = p_hyp
        .iter()
        .map(|r| r.iter().copied().fold(S::infinity(), S::min))
        .collect();
    mins.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if mins.is_empty() {
        return S::zero();
    }
    let rank = ((alpha * mins.len() as f64).ceil() as usize).clamp(1, mins.len());
    mins[rank - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult<S> {
    pub labels: Vec<String>,
    pub t_obs: Vec<S>,
    pub nominal_counts: Vec<usize>,
    pub nominal_p: Vec<S>,
    /// Closed-form adjustments and the randomization adjustment, in
    /// [`AdjustmentMethod`] order.
    pub adjusted: Vec<(AdjustmentMethod, Vec<S>)>,
    pub randomization_counts: Vec<usize>,
    pub cutoff: S,
    pub m: usize,
    pub alpha: f64,
    pub kind: StatisticKind,
    pub tail: Tail,
    /// Iterations with an undefined hypothetical statistic, per estimand.
    pub degenerate: Vec<usize>,
}

impl<S: Scalar> AnalysisResult<S> {
    pub fn adjusted(&self, method: AdjustmentMethod) -> &[S] {
        &self
            .adjusted
            .iter()
            .find(|(m, _)| *m == method)
            .expect("every method is computed")
            .1
    }

    /// Whether the familywise test by `method` rejects at `alpha`.
    pub fn rejects(&self, method: AdjustmentMethod) -> bool {
        let alpha = S::lit(self.alpha);
        self.adjusted(method).iter().any(|&p| p <= alpha)
    }
}

/// Assembles p-values from observed statistics and the iteration matrix.
pub fn summarize<S: Scalar>(
    labels: Vec<String>,
    t_obs: Vec<S>,
    it: &IterationMatrix<S>,
    kind: StatisticKind,
    cfg: &EngineConfig,
) -> AnalysisResult<S> {
    let m = it.m();
    let nominal_counts = nominal_counts(&t_obs, it, cfg.tail);
    let nominal_p: Vec<S> = nominal_counts.iter().map(|&c| S::ratio(c, m)).collect();
    let hyp = hypothetical_counts(it, cfg.tail);
    let mins = sorted_minima(&hyp, m, it.j());
    let randomization_counts = randomization_counts(&nominal_counts, &mins);
    let adjusted = AdjustmentMethod::ALL
        .iter()
        .map(|&method| {
            let values = method
                .apply(&nominal_p)
                .unwrap_or_else(|| randomization_counts.iter().map(|&c| S::ratio(c, m)).collect());
            (method, values)
        })
        .collect();
    AnalysisResult {
        labels,
        t_obs,
        nominal_counts,
        nominal_p,
        adjusted,
        randomization_counts,
        cutoff: S::ratio(cutoff_count(&mins, cfg.alpha), m),
        m,
        alpha: cfg.alpha,
        kind,
        tail: cfg.tail,
        degenerate: it.degenerate_counts(),
    }
}

/// Observed statistics through the same tabulation path as the iterations.
pub fn observed_statistics<S: Scalar>(
    obs: &ObservedDataset,
    kind: StatisticKind,
    estimands: &[EstimandDef],
) -> Result<Vec<S>> {
    crate::statistics::statistic_vector(obs, kind, estimands)
}

/// Full analysis of observed data.
pub fn analyze<S: Scalar, M: AssignmentMechanism>(
    obs: &ObservedDataset,
    kind: StatisticKind,
    estimands: &[EstimandDef],
    cfg: &EngineConfig,
    mech: &M,
    key: StreamKey,
) -> Result<AnalysisResult<S>> {
    cfg.validate()?;
    if estimands.is_empty() {
        return Err(Error::Config("no estimands".into()));
    }
    let t_obs = observed_statistics::<S>(obs, kind, estimands)?;
    let it = run_iterations::<S, M>(obs, kind, estimands, cfg, mech, key)?;
    let labels = estimands.iter().map(|e| e.label.clone()).collect();
    Ok(summarize(labels, t_obs, &it, kind, cfg))
}

/// Exact p-values by enumerating every assignment of `mech` on a table with
/// known compliance. Undefined statistics count as non-extreme.
pub fn exact_pvalue<S: Scalar, T: PotentialOutcomes + ?Sized, M: AssignmentMechanism>(
    table: &T,
    t_obs: &[S],
    kind: StatisticKind,
    estimands: &[EstimandDef],
    mech: &M,
    tail: Tail,
    limit: u128,
) -> Result<Vec<S>> {
    if t_obs.len() != estimands.len() {
        return Err(Error::LengthMismatch {
            expected: estimands.len(),
            found: t_obs.len(),
        });
    }
    let mut hits = vec![0usize; estimands.len()];
    let mut total = 0usize;
    let mut row = Vec::with_capacity(estimands.len());
    let n = table.len();
    let mut tables = CellTables::new(table.cell_count(), table.j(), table.k());
    for e in estimands {
        e.validate(table.j(), table.cell_count())?;
    }
    let complier = (0..n)
        .map(|i| {
            table
                .compliance(i)
                .receipt(true)
                .ok_or_else(|| Error::UnknownCompliance(table.id(i).to_string()))
        })
        .collect::<Result<Vec<bool>>>()?;
    for z in mech.enumerate(limit)? {
        tables.clear();
        for i in 0..n {
            let group = if z[i] { Group::of(true, complier[i]) } else { Group::Control };
            tables.add_unit(table.cell(i), group, table.outcomes(i, z[i]));
        }
        statistic_row::<S>(&tables, kind, estimands, &mut row);
        for ((h, &t), s) in hits.iter_mut().zip(t_obs).zip(&row) {
            if s.is_some_and(|s| Tail::at_least(tail.extremity(s), tail.extremity(t))) {
                *h += 1;
            }
        }
        total += 1;
    }
    Ok(hits.into_iter().map(|h| S::ratio(h, total)).collect())
}
