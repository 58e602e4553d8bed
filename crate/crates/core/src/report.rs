//! Text reports: TSV with `# key=value` header lines, or JSON lines with a
//! trailing metadata object.

use std::fmt::Write as _;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::adjust::AdjustmentMethod;
use crate::engine::AnalysisResult;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::simgen::ReplicationTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Tsv,
    Jsonl,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(Format::Tsv),
            "jsonl" | "json-lines" => Ok(Format::Jsonl),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

/// Ordered run metadata printed with every report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(pub Vec<(String, Value)>);

impl Metadata {
    pub fn push(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.0.push((key.to_string(), value.into()));
        self
    }

    fn tsv_header(&self, out: &mut String) {
        for (k, v) in &self.0 {
            let text = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let _ = writeln!(out, "# {k}={text}");
        }
    }

    fn json_line(&self, out: &mut String) {
        let map: Map<String, Value> = self.0.iter().cloned().collect();
        let mut wrapper = Map::new();
        wrapper.insert("metadata".into(), Value::Object(map));
        let _ = writeln!(out, "{}", Value::Object(wrapper));
    }
}

fn number<S: Scalar>(x: S) -> Value {
    serde_json::Number::from_f64(x.to_f64().unwrap())
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

/// Shortest round-trip decimal of the value as `f64`.
fn decimal<S: Scalar>(x: S) -> String {
    format!("{}", x.to_f64().unwrap())
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "{}", header.join("\t"));
    for r in rows {
        let _ = writeln!(out, "{}", r.join("\t"));
    }
}

/// One row per estimand: label, effect, nominal p and one column per
/// requested adjustment.
pub fn analysis_report<S: Scalar>(
    res: &AnalysisResult<S>,
    methods: &[AdjustmentMethod],
    meta: &Metadata,
    format: Format,
) -> String {
    let mut out = String::new();
    let mut header = vec!["label".to_string(), "effect".into(), "p_nominal".into()];
    header.extend(methods.iter().map(|m| format!("p_{m}")));
    let rows: Vec<Vec<(String, Value)>> = (0..res.labels.len())
        .map(|j| {
            let mut row = vec![
                (res.labels[j].clone(), Value::String(res.labels[j].clone())),
                (decimal(res.t_obs[j]), number(res.t_obs[j])),
                (decimal(res.nominal_p[j]), number(res.nominal_p[j])),
            ];
            for &m in methods {
                let p = res.adjusted(m)[j];
                row.push((decimal(p), number(p)));
            }
            row
        })
        .collect();
    match format {
        Format::Tsv => {
            meta.tsv_header(&mut out);
            let text: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|c| c.0.clone()).collect()).collect();
            table(&mut out, &header, &text);
        }
        Format::Jsonl => {
            for r in &rows {
                let obj: Map<String, Value> = header.iter().cloned().zip(r.iter().map(|c| c.1.clone())).collect();
                let _ = writeln!(out, "{}", Value::Object(obj));
            }
            meta.json_line(&mut out);
        }
    }
    out
}

pub fn replication_report(table_: &ReplicationTable, meta: &Metadata, format: Format) -> String {
    let mut out = String::new();
    let header: Vec<String> = ["statistic", "method", "rejections", "reps", "rate", "se"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    match format {
        Format::Tsv => {
            meta.tsv_header(&mut out);
            let rows: Vec<Vec<String>> = table_
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.kind.to_string(),
                        r.method.to_string(),
                        r.rejections.to_string(),
                        r.reps.to_string(),
                        decimal(r.rate),
                        decimal(r.se),
                    ]
                })
                .collect();
            table(&mut out, &header, &rows);
        }
        Format::Jsonl => {
            for r in &table_.rows {
                let obj = serde_json::json!({
                    "statistic": r.kind.as_str(),
                    "method": r.method.as_str(),
                    "rejections": r.rejections,
                    "reps": r.reps,
                    "rate": r.rate,
                    "se": r.se,
                });
                let _ = writeln!(out, "{obj}");
            }
            meta.json_line(&mut out);
        }
    }
    out
}

pub fn exact_report<S: Scalar>(labels: &[String], t_obs: &[S], p: &[S], meta: &Metadata, format: Format) -> String {
    let mut out = String::new();
    let header: Vec<String> = vec!["label".into(), "effect".into(), "p_exact".into()];
    match format {
        Format::Tsv => {
            meta.tsv_header(&mut out);
            let rows: Vec<Vec<String>> = labels
                .iter()
                .zip(t_obs.iter().zip(p))
                .map(|(l, (&t, &p))| vec![l.clone(), decimal(t), decimal(p)])
                .collect();
            table(&mut out, &header, &rows);
        }
        Format::Jsonl => {
            for (l, (&t, &p)) in labels.iter().zip(t_obs.iter().zip(p)) {
                let obj = serde_json::json!({"label": l, "effect": number(t), "p_exact": number(p)});
                let _ = writeln!(out, "{obj}");
            }
            meta.json_line(&mut out);
        }
    }
    out
}
