#![allow(dead_code)]

use complier_ri::data::{PotentialOutcomes, ScienceTable, ScienceUnit};
use complier_ri::{ComplianceStatus, StatisticKind, Tail};
use rand::Rng;

/// Counts per observed group for one outcome, category-indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct Counts {
    pub treated_complier: Vec<f64>,
    pub treated_never: Vec<f64>,
    pub control: Vec<f64>,
}

impl Counts {
    pub fn new(k: usize) -> Self {
        Counts {
            treated_complier: vec![0.0; k],
            treated_never: vec![0.0; k],
            control: vec![0.0; k],
        }
    }
}

fn mean(c: &[f64]) -> Option<f64> {
    let n: f64 = c.iter().sum();
    (n > 0.0).then(|| c.iter().enumerate().map(|(y, x)| y as f64 * x).sum::<f64>() / n)
}

pub fn itt_oracle(c: &Counts) -> Option<f64> {
    let treated: Vec<f64> = c.treated_complier.iter().zip(&c.treated_never).map(|(a, b)| a + b).collect();
    Some(mean(&treated)? - mean(&c.control)?)
}

/// Complier effect by EM on the mixture likelihood with the never-taker
/// distribution shared across arms. With no treated never-takers the
/// likelihood is maximised at ω = 1, where the estimate is the ITT.
pub fn cace_oracle(c: &Counts) -> Option<f64> {
    let k = c.control.len();
    let nc1: f64 = c.treated_complier.iter().sum();
    let nn1: f64 = c.treated_never.iter().sum();
    let n0: f64 = c.control.iter().sum();
    if nc1 == 0.0 || n0 == 0.0 {
        return None;
    }
    if nn1 == 0.0 {
        return itt_oracle(c);
    }
    let mut w = 0.5;
    let mut fc0 = vec![1.0 / k as f64; k];
    let mut fnt = vec![1.0 / k as f64; k];
    for _ in 0..2_000_000 {
        let mut ec = vec![0.0; k];
        let mut en = vec![0.0; k];
        for y in 0..k {
            let a = w * fc0[y];
            let b = (1.0 - w) * fnt[y];
            if a + b > 0.0 {
                ec[y] = c.control[y] * a / (a + b);
                en[y] = c.control[y] * b / (a + b);
            }
        }
        let sc: f64 = ec.iter().sum();
        let sn: f64 = en.iter().sum();
        let w_new = (nc1 + sc) / (nc1 + nn1 + n0);
        let mut delta = (w_new - w).abs();
        w = w_new;
        for y in 0..k {
            let f = if sc > 0.0 { ec[y] / sc } else { 0.0 };
            delta = delta.max((f - fc0[y]).abs());
            fc0[y] = f;
            fnt[y] = (c.treated_never[y] + en[y]) / (nn1 + sn);
        }
        if delta < 1e-15 {
            break;
        }
    }
    let mc0: f64 = fc0.iter().enumerate().map(|(y, p)| y as f64 * p).sum();
    Some(mean(&c.treated_complier)? - mc0)
}

pub fn statistic_oracle(kind: StatisticKind, c: &Counts) -> Option<f64> {
    match kind {
        StatisticKind::Itt => itt_oracle(c),
        StatisticKind::Cace => cace_oracle(c),
        StatisticKind::CaceRatio => {
            let nc1: f64 = c.treated_complier.iter().sum();
            let n1 = nc1 + c.treated_never.iter().sum::<f64>();
            (nc1 > 0.0).then_some(())?;
            Some(itt_oracle(c)? * n1 / nc1)
        }
    }
}

/// Counts for outcome `j` of a table with known compliance under `z`.
pub fn counts_under(table: &ScienceTable, z: &[bool], j: usize) -> Counts {
    let mut c = Counts::new(table.k());
    for (i, &zi) in z.iter().enumerate() {
        let y = table.outcomes(i, zi)[j] as usize;
        if !zi {
            c.control[y] += 1.0;
        } else if table.compliance(i) == ComplianceStatus::Complier {
            c.treated_complier[y] += 1.0;
        } else {
            c.treated_never[y] += 1.0;
        }
    }
    c
}

fn extremity(tail: Tail, t: f64) -> f64 {
    match tail {
        Tail::TwoSidedAbs => t.abs(),
        Tail::RightTail => t,
        Tail::LeftTail => -t,
    }
}

/// Exact p-value of outcome `j` by enumerating every way to treat
/// `n_treated` of the units with bitmasks. EM crawls when a category's
/// complier mass sits exactly on the boundary, so ties get a loose slack;
/// distinct values at these sizes are far further apart.
pub fn exact_p_oracle(table: &ScienceTable, kind: StatisticKind, j: usize, t_obs: f64, n_treated: usize, tail: Tail) -> f64 {
    let n = table.len();
    let reference = extremity(tail, t_obs);
    let (mut hits, mut total) = (0usize, 0usize);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n_treated {
            continue;
        }
        total += 1;
        let z: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        if let Some(t) = statistic_oracle(kind, &counts_under(table, &z, j)) {
            if extremity(tail, t) >= reference - 1e-5 {
                hits += 1;
            }
        }
    }
    hits as f64 / total as f64
}

/// Random Science table with known compliance; `never_takers` of the units
/// are never-takers.
pub fn random_table<R: Rng>(rng: &mut R, n: usize, never_takers: usize, j: usize, k: u8) -> ScienceTable {
    let units = (0..n)
        .map(|i| ScienceUnit {
            id: format!("u{i}"),
            cell: 0,
            compliance: if i < never_takers { ComplianceStatus::NeverTaker } else { ComplianceStatus::Complier },
            y0: (0..j).map(|_| rng.random_range(0..k)).collect(),
            y1: (0..j).map(|_| rng.random_range(0..k)).collect(),
        })
        .collect();
    ScienceTable::new(units, j, k as usize, 1).unwrap()
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value, with
/// Stephens' small-sample correction.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    (d, kolmogorov_q((en + 0.12 + 0.11 / en) * d))
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_q(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Upper bound for a rejection rate that is valid at level `alpha`.
pub fn validity_bound(alpha: f64, reps: usize) -> f64 {
    alpha + 3.0 * (alpha * (1.0 - alpha) / reps as f64).sqrt()
}

pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}
