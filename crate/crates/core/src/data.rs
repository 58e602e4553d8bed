//! Observed and complete (Science) data, sharp-null imputation and
//! re-observation under a hypothetical assignment.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal stratum defined by potential treatment receipt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplianceStatus {
    Complier,
    NeverTaker,
    AlwaysTaker,
    Defier,
    Unknown,
}

impl ComplianceStatus {
    /// Stratum revealed by a one-sided observation `(z, d)`.
    pub fn from_observed(z: bool, d: bool) -> Self {
        match (z, d) {
            (true, true) => ComplianceStatus::Complier,
            (true, false) => ComplianceStatus::NeverTaker,
            (false, _) => ComplianceStatus::Unknown,
        }
    }

    /// Potential receipt `D(z)`; `None` for an unknown stratum.
    pub fn receipt(self, z: bool) -> Option<bool> {
        match self {
            ComplianceStatus::Complier => Some(z),
            ComplianceStatus::NeverTaker => Some(false),
            ComplianceStatus::AlwaysTaker => Some(true),
            ComplianceStatus::Defier => Some(!z),
            ComplianceStatus::Unknown => None,
        }
    }

    /// Strata that exist when control units cannot access treatment.
    pub fn is_one_sided(self) -> bool {
        matches!(self, ComplianceStatus::Complier | ComplianceStatus::NeverTaker)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ComplianceStatus::Complier => "complier",
            ComplianceStatus::NeverTaker => "never_taker",
            ComplianceStatus::AlwaysTaker => "always_taker",
            ComplianceStatus::Defier => "defier",
            ComplianceStatus::Unknown => "unknown",
        }
    }
}

impl fmt::Display for ComplianceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComplianceStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "c" | "complier" => Ok(ComplianceStatus::Complier),
            "n" | "nt" | "never_taker" | "never-taker" => Ok(ComplianceStatus::NeverTaker),
            "at" | "always_taker" | "always-taker" => Ok(ComplianceStatus::AlwaysTaker),
            "d" | "defier" => Ok(ComplianceStatus::Defier),
            "?" | "u" | "unknown" => Ok(ComplianceStatus::Unknown),
            other => Err(format!("unrecognized compliance status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedUnit {
    pub id: String,
    pub cell: usize,
    pub z: bool,
    pub d_obs: bool,
    pub y_obs: Vec<u8>,
}

impl ObservedUnit {
    pub fn compliance(&self) -> ComplianceStatus {
        ComplianceStatus::from_observed(self.z, self.d_obs)
    }
}

/// Validated one-sided observed data: the only input to inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedDataset {
    units: Vec<ObservedUnit>,
    j: usize,
    k: usize,
    cell_count: usize,
    n1: usize,
}

impl ObservedDataset {
    /// Validates and wraps `units`. Row numbers in errors are 1-based unit
    /// positions.
    pub fn new(units: Vec<ObservedUnit>, j: usize, k: usize, cell_count: usize) -> Result<Self> {
        if j == 0 {
            return Err(Error::Schema("at least one outcome is required".into()));
        }
        if !(2..=256).contains(&k) {
            return Err(Error::Schema(format!("categories per outcome must be in 2..=256, got {k}")));
        }
        let mut ids = HashSet::with_capacity(units.len());
        for (i, u) in units.iter().enumerate() {
            let row = i + 1;
            if !ids.insert(u.id.as_str()) {
                return Err(Error::DuplicateId(u.id.clone()));
            }
            if !u.z && u.d_obs {
                return Err(Error::OneSidedViolation { row });
            }
            if u.y_obs.len() != j {
                return Err(Error::LengthMismatch {
                    expected: j,
                    found: u.y_obs.len(),
                });
            }
            if let Some((col, &v)) = u.y_obs.iter().enumerate().find(|(_, &v)| v as usize >= k) {
                return Err(Error::CategoryOutOfRange {
                    row,
                    column: format!("y[{col}]"),
                    value: v as u64,
                    k,
                });
            }
            if u.cell >= cell_count {
                return Err(Error::Parse {
                    row,
                    message: format!("cell {} >= cell count {cell_count}", u.cell),
                });
            }
        }
        let n1 = units.iter().filter(|u| u.z).count();
        Ok(Self {
            units,
            j,
            k,
            cell_count,
            n1,
        })
    }

    pub fn units(&self) -> &[ObservedUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Number of outcomes per unit.
    pub fn j(&self) -> usize {
        self.j
    }

    /// Categories per outcome.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cell_count(&self) -> usize {
        self.cell_count
    }

    /// Number of units assigned to treatment.
    pub fn n_treated(&self) -> usize {
        self.n1
    }

    pub fn assignment(&self) -> Vec<bool> {
        self.units.iter().map(|u| u.z).collect()
    }

    /// Compliance revealed by the observation; control units are unknown.
    pub fn observed_compliance(&self) -> Vec<ComplianceStatus> {
        self.units.iter().map(ObservedUnit::compliance).collect()
    }
}

/// Column mapping for delimiter-separated input.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schema {
    pub id: Option<String>,
    pub cell: Option<String>,
    pub z: String,
    pub d: String,
    pub y: Vec<String>,
    /// Categories per outcome; inferred from the data when absent.
    pub k: Option<usize>,
    /// Optional column carrying true compliance (simulated Science tables).
    pub compliance: Option<String>,
}

impl Schema {
    /// Parses `z=COL,d=COL,cell=COL,y=A:B:C[,id=COL][,k=K][,c=COL]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut schema = Schema::default();
        let (mut z, mut d) = (None, None);
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("schema entry {part:?} is not key=value")))?;
            let value = value.trim();
            if value.is_empty() {
                return Err(Error::Config(format!("schema entry {key:?} has no column")));
            }
            match key.trim() {
                "id" => schema.id = Some(value.into()),
                "cell" => schema.cell = Some(value.into()),
                "z" => z = Some(value.to_string()),
                "d" => d = Some(value.to_string()),
                "y" => schema.y = value.split(':').map(|s| s.trim().to_string()).collect(),
                "k" => {
                    schema.k = Some(
                        value
                            .parse()
                            .map_err(|_| Error::Config(format!("k must be an integer, got {value:?}")))?,
                    )
                }
                "c" | "compliance" => schema.compliance = Some(value.into()),
                other => return Err(Error::Config(format!("unknown schema key {other:?}"))),
            }
        }
        schema.z = z.ok_or_else(|| Error::Config("schema needs z=COL".into()))?;
        schema.d = d.ok_or_else(|| Error::Config("schema needs d=COL".into()))?;
        if schema.y.is_empty() || schema.y.iter().any(String::is_empty) {
            return Err(Error::Config("schema needs y=COL1:COL2:...".into()));
        }
        Ok(schema)
    }

    /// Schema matching the layout written by [`write_observed_csv`].
    pub fn standard(j: usize) -> Self {
        Schema {
            id: Some("id".into()),
            cell: Some("cell".into()),
            z: "z".into(),
            d: "d".into(),
            y: (1..=j).map(|i| format!("y{i}")).collect(),
            k: None,
            compliance: None,
        }
    }
}

/// Loads a dataset; see [`load_dataset_with_compliance`].
pub fn load_dataset<R: Read>(source: R, schema: &Schema) -> Result<ObservedDataset> {
    load_dataset_with_compliance(source, schema).map(|(obs, _)| obs)
}

/// Loads delimiter-separated text with a header row. Tabs are used as the
/// delimiter when the header contains one, commas otherwise. Returns the
/// true compliance column as well when the schema names one. Lines starting
/// with `#` are skipped.
pub fn load_dataset_with_compliance<R: Read>(
    mut source: R,
    schema: &Schema,
) -> Result<(ObservedDataset, Option<Vec<ComplianceStatus>>)> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let header_line = text.lines().find(|l| !l.starts_with('#')).unwrap_or("");
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column {name:?} not found in header")))
    };
    let id_col = schema.id.as_deref().map(column).transpose()?;
    let cell_col = schema.cell.as_deref().map(column).transpose()?;
    let z_col = column(&schema.z)?;
    let d_col = column(&schema.d)?;
    let c_col = schema.compliance.as_deref().map(column).transpose()?;
    let y_cols = schema.y.iter().map(|c| column(c)).collect::<Result<Vec<_>>>()?;

    let mut units = Vec::new();
    let mut compliance = c_col.map(|_| Vec::new());
    let mut max_category = 0u64;
    let mut max_cell = 0usize;
    for (index, record) in reader.records().enumerate() {
        let row = index + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let field = |col: usize| -> Result<&str> {
            match record.get(col) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    message: format!("missing value in column {:?}", &headers[col]),
                }),
            }
        };
        let integer = |col: usize| -> Result<u64> {
            let v = field(col)?;
            v.parse::<u64>().map_err(|_| Error::Parse {
                row,
                message: format!("column {:?}: {v:?} is not a non-negative integer", &headers[col]),
            })
        };
        let binary = |col: usize| -> Result<bool> {
            match integer(col)? {
                0 => Ok(false),
                1 => Ok(true),
                v => Err(Error::Parse {
                    row,
                    message: format!("column {:?}: {v} is not binary", &headers[col]),
                }),
            }
        };
        let id = match id_col {
            Some(col) => field(col)?.to_string(),
            None => row.to_string(),
        };
        let cell = match cell_col {
            Some(col) => usize::try_from(integer(col)?).map_err(|_| Error::Parse {
                row,
                message: "cell index too large".into(),
            })?,
            None => 0,
        };
        let z = binary(z_col)?;
        let d_obs = binary(d_col)?;
        if !z && d_obs {
            return Err(Error::OneSidedViolation { row });
        }
        let mut y_obs = Vec::with_capacity(y_cols.len());
        for &col in &y_cols {
            let v = integer(col)?;
            if let Some(k) = schema.k {
                if v >= k as u64 {
                    return Err(Error::CategoryOutOfRange {
                        row,
                        column: headers[col].to_string(),
                        value: v,
                        k,
                    });
                }
            }
            if v > 255 {
                return Err(Error::CategoryOutOfRange {
                    row,
                    column: headers[col].to_string(),
                    value: v,
                    k: 256,
                });
            }
            max_category = max_category.max(v);
            y_obs.push(v as u8);
        }
        if let (Some(col), Some(out)) = (c_col, compliance.as_mut()) {
            let status: ComplianceStatus = field(col)?.parse().map_err(|message| Error::Parse { row, message })?;
            out.push(status);
        }
        max_cell = max_cell.max(cell);
        units.push(ObservedUnit {
            id,
            cell,
            z,
            d_obs,
            y_obs,
        });
    }
    let k = schema.k.unwrap_or_else(|| (max_category as usize + 1).max(2));
    let cell_count = if units.is_empty() { 1 } else { max_cell + 1 };
    let obs = ObservedDataset::new(units, y_cols.len(), k, cell_count)?;
    Ok((obs, compliance))
}

/// Writes the layout read back by [`Schema::standard`].
pub fn write_observed_csv<W: std::io::Write>(obs: &ObservedDataset, mut out: W) -> Result<()> {
    write!(out, "id,cell,z,d")?;
    for j in 1..=obs.j() {
        write!(out, ",y{j}")?;
    }
    writeln!(out)?;
    for u in obs.units() {
        write!(out, "{},{},{},{}", u.id, u.cell, u.z as u8, u.d_obs as u8)?;
        for y in &u.y_obs {
            write!(out, ",{y}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Read access to a table holding both potential outcomes for every unit.
pub trait PotentialOutcomes {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn j(&self) -> usize;
    fn k(&self) -> usize;
    fn cell_count(&self) -> usize;
    fn id(&self, i: usize) -> &str;
    fn cell(&self, i: usize) -> usize;
    fn compliance(&self, i: usize) -> ComplianceStatus;
    /// Outcome vector `Y_i(z)`.
    fn outcomes(&self, i: usize, z: bool) -> &[u8];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScienceUnit {
    pub id: String,
    pub cell: usize,
    pub compliance: ComplianceStatus,
    pub y0: Vec<u8>,
    pub y1: Vec<u8>,
}

/// Full potential-outcome table with known compliance strata.
#[derive(Debug, Clone, PartialEq)]
pub struct ScienceTable {
    units: Vec<ScienceUnit>,
    j: usize,
    k: usize,
    cell_count: usize,
}

fn check_outcomes(id: &str, y: &[u8], j: usize, k: usize) -> Result<()> {
    if y.len() != j {
        return Err(Error::LengthMismatch {
            expected: j,
            found: y.len(),
        });
    }
    if let Some(&v) = y.iter().find(|&&v| v as usize >= k) {
        return Err(Error::Parse {
            row: 0,
            message: format!("unit {id:?}: category {v} >= {k}"),
        });
    }
    Ok(())
}

impl ScienceTable {
    pub fn new(units: Vec<ScienceUnit>, j: usize, k: usize, cell_count: usize) -> Result<Self> {
        for u in &units {
            if !u.compliance.is_one_sided() {
                return Err(Error::InvalidCompliance(u.id.clone()));
            }
            check_outcomes(&u.id, &u.y0, j, k)?;
            check_outcomes(&u.id, &u.y1, j, k)?;
            if u.cell >= cell_count {
                return Err(Error::Schema(format!("unit {:?}: cell out of range", u.id)));
            }
        }
        Ok(Self {
            units,
            j,
            k,
            cell_count,
        })
    }

    pub fn units(&self) -> &[ScienceUnit] {
        &self.units
    }
}

impl PotentialOutcomes for ScienceTable {
    fn len(&self) -> usize {
        self.units.len()
    }
    fn j(&self) -> usize {
        self.j
    }
    fn k(&self) -> usize {
        self.k
    }
    fn cell_count(&self) -> usize {
        self.cell_count
    }
    fn id(&self, i: usize) -> &str {
        &self.units[i].id
    }
    fn cell(&self, i: usize) -> usize {
        self.units[i].cell
    }
    fn compliance(&self, i: usize) -> ComplianceStatus {
        self.units[i].compliance
    }
    fn outcomes(&self, i: usize, z: bool) -> &[u8] {
        if z {
            &self.units[i].y1
        } else {
            &self.units[i].y0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NullUnit {
    pub id: String,
    pub cell: usize,
    pub compliance: ComplianceStatus,
    /// Shared value of `Y(0)` and `Y(1)`.
    pub y: Vec<u8>,
}

/// Science table completed under the sharp null of no effect: both
/// potential outcomes equal the observed outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteNullTable {
    units: Vec<NullUnit>,
    j: usize,
    k: usize,
    cell_count: usize,
}

impl CompleteNullTable {
    pub fn units(&self) -> &[NullUnit] {
        &self.units
    }

    pub fn compliance(&self) -> Vec<ComplianceStatus> {
        self.units.iter().map(|u| u.compliance).collect()
    }
}

impl PotentialOutcomes for CompleteNullTable {
    fn len(&self) -> usize {
        self.units.len()
    }
    fn j(&self) -> usize {
        self.j
    }
    fn k(&self) -> usize {
        self.k
    }
    fn cell_count(&self) -> usize {
        self.cell_count
    }
    fn id(&self, i: usize) -> &str {
        &self.units[i].id
    }
    fn cell(&self, i: usize) -> usize {
        self.units[i].cell
    }
    fn compliance(&self, i: usize) -> ComplianceStatus {
        self.units[i].compliance
    }
    fn outcomes(&self, i: usize, _z: bool) -> &[u8] {
        &self.units[i].y
    }
}

/// Fills in the missing potential outcomes under the sharp null.
pub fn impute_sharp_null(
    obs: &ObservedDataset,
    compliance: &[ComplianceStatus],
) -> Result<CompleteNullTable> {
    if compliance.len() != obs.len() {
        return Err(Error::LengthMismatch {
            expected: obs.len(),
            found: compliance.len(),
        });
    }
    let units = obs
        .units()
        .iter()
        .zip(compliance)
        .map(|(u, &c)| {
            if c == ComplianceStatus::Unknown {
                return Err(Error::UnknownCompliance(u.id.clone()));
            }
            if !c.is_one_sided() {
                return Err(Error::InvalidCompliance(u.id.clone()));
            }
            Ok(NullUnit {
                id: u.id.clone(),
                cell: u.cell,
                compliance: c,
                y: u.y_obs.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompleteNullTable {
        units,
        j: obs.j(),
        k: obs.k(),
        cell_count: obs.cell_count(),
    })
}

/// Masks a complete table according to `z_hyp`.
pub fn reobserve<T: PotentialOutcomes + ?Sized>(
    complete: &T,
    z_hyp: &[bool],
) -> Result<ObservedDataset> {
    if z_hyp.len() != complete.len() {
        return Err(Error::LengthMismatch {
            expected: complete.len(),
            found: z_hyp.len(),
        });
    }
    let units = z_hyp
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let d_obs = complete
                .compliance(i)
                .receipt(z)
                .ok_or_else(|| Error::UnknownCompliance(complete.id(i).to_string()))?;
            Ok(ObservedUnit {
                id: complete.id(i).to_string(),
                cell: complete.cell(i),
                z,
                d_obs,
                y_obs: complete.outcomes(i, z).to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ObservedDataset::new(units, complete.j(), complete.k(), complete.cell_count())
}
