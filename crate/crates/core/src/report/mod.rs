//! Presentation of tuning results: baseline-normalized latency tables,
//! relative-performance distributions and configuration transfer.
//!
//! Benchmark tables are CSV with columns `impl,median_ms` followed by one
//! column per shape dimension:
//!
//! ```text
//! impl,median_ms,batch,seq_len
//! flash_attn,2.0,1,512
//! triton,1.0,1,512
//! ```

mod transfer;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::configspace::{ShapeKey, Value};

pub use transfer::{transfer_analysis, TransferCell, TransferStatus};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("table has no `{0}` column")]
    MissingColumn(&'static str),
    #[error("table has no shape columns")]
    NoShapeColumns,
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("duplicate row for impl `{impl_name}` at shape {shape}")]
    DuplicateRow { impl_name: String, shape: ShapeKey },
    #[error("table is empty")]
    Empty,
    #[error("row for impl `{impl_name}` at shape {shape} has no `{key}` dimension")]
    MissingDimension {
        impl_name: String,
        shape: ShapeKey,
        key: String,
    },
    #[error("baseline `{baseline}` has no row in group {group}")]
    MissingBaseline { baseline: String, group: String },
    #[error("shapes do not align: only in baseline [{}], only in candidate [{}]", join(.only_baseline), join(.only_candidate))]
    ShapeMismatch {
        only_baseline: Vec<ShapeKey>,
        only_candidate: Vec<ShapeKey>,
    },
    #[error("{which} rows repeat shape {shape}")]
    RepeatedShape {
        which: &'static str,
        shape: ShapeKey,
    },
    #[error("transfer: {0}")]
    Transfer(String),
}

fn join(shapes: &[ShapeKey]) -> String {
    shapes
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    #[serde(rename = "impl")]
    pub impl_name: String,
    pub shape: ShapeKey,
    pub median_ms: f64,
}

/// Latency measurements of several implementations over a set of shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    rows: Vec<BenchRow>,
}

impl BenchmarkTable {
    pub fn new(rows: Vec<BenchRow>) -> Result<Self, ReportError> {
        let mut seen = BTreeSet::new();
        for (i, r) in rows.iter().enumerate() {
            if !(r.median_ms.is_finite() && r.median_ms > 0.0) {
                return Err(ReportError::BadRow {
                    row: i + 1,
                    message: format!("median_ms {} is not a positive duration", r.median_ms),
                });
            }
            if !seen.insert((r.impl_name.clone(), r.shape.dims().clone())) {
                return Err(ReportError::DuplicateRow {
                    impl_name: r.impl_name.clone(),
                    shape: r.shape.clone(),
                });
            }
        }
        Ok(BenchmarkTable { rows })
    }

    pub fn rows(&self) -> &[BenchRow] {
        &self.rows
    }

    /// Rows of one implementation.
    pub fn select(&self, impl_name: &str) -> Vec<BenchRow> {
        self.rows
            .iter()
            .filter(|r| r.impl_name == impl_name)
            .cloned()
            .collect()
    }

    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let col = |name: &'static str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or(ReportError::MissingColumn(name))
        };
        let impl_col = col("impl")?;
        let median_col = col("median_ms")?;
        let dims: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != impl_col && i != median_col)
            .map(|(i, h)| (i, h.to_string()))
            .collect();
        if dims.is_empty() {
            return Err(ReportError::NoShapeColumns);
        }
        let mut rows = Vec::new();
        for (n, record) in reader.records().enumerate() {
            let record = record?;
            let row = n + 1;
            let bad = |message: String| ReportError::BadRow { row, message };
            let impl_name = record.get(impl_col).unwrap_or("").to_string();
            if impl_name.is_empty() {
                return Err(bad("empty impl".into()));
            }
            let median_text = record.get(median_col).unwrap_or("");
            let median_ms: f64 = median_text
                .parse()
                .map_err(|_| bad(format!("median_ms `{median_text}` is not a number")))?;
            let shape = ShapeKey::new(
                dims.iter()
                    .map(|(i, name)| {
                        (
                            name.clone(),
                            Value::parse_loose(record.get(*i).unwrap_or("")),
                        )
                    })
                    .collect(),
            )
            .map_err(|e| bad(e.to_string()))?;
            rows.push(BenchRow {
                impl_name,
                shape,
                median_ms,
            });
        }
        BenchmarkTable::new(rows)
    }

    pub fn to_csv(&self) -> String {
        let dims = dim_names(self.rows.iter().map(|r| &r.shape));
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["impl".to_string(), "median_ms".to_string()];
        header.extend(dims.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.impl_name.clone(), r.median_ms.to_string()];
            rec.extend(dim_cells(&r.shape, &dims));
            w.write_record(&rec).expect("in-memory write");
        }
        finish_csv(w)
    }
}

fn dim_names<'a>(shapes: impl Iterator<Item = &'a ShapeKey>) -> Vec<String> {
    let set: BTreeSet<&String> = shapes.flat_map(|s| s.dims().keys()).collect();
    set.into_iter().cloned().collect()
}

fn dim_cells(shape: &ShapeKey, dims: &[String]) -> Vec<String> {
    dims.iter()
        .map(|d| shape.get(d).map(|v| v.to_string()).unwrap_or_default())
        .collect()
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV of UTF-8 fields")
}

/// Which baseline row a normalization divides by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Anchor {
    /// The baseline at the smallest x of each group.
    #[default]
    PerGroup,
    /// The baseline at the smallest x of the first group, for every group.
    Global,
}

/// Shape dimensions other than the x-axis key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct GroupKey(pub BTreeMap<String, Value>);

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("(all)");
        }
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedRow {
    #[serde(rename = "impl")]
    pub impl_name: String,
    pub shape: ShapeKey,
    pub median_ms: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedTable {
    pub baseline: String,
    pub x_key: String,
    pub rows: Vec<NormalizedRow>,
}

impl NormalizedTable {
    /// Columns `impl,median_ms,normalized` then the shape dimensions.
    pub fn to_csv(&self) -> String {
        let dims = dim_names(self.rows.iter().map(|r| &r.shape));
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["impl".to_string(), "median_ms".into(), "normalized".into()];
        header.extend(dims.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![
                r.impl_name.clone(),
                r.median_ms.to_string(),
                r.normalized.to_string(),
            ];
            rec.extend(dim_cells(&r.shape, &dims));
            w.write_record(&rec).expect("in-memory write");
        }
        finish_csv(w)
    }
}

fn group_of(row: &BenchRow, x_key: &str) -> Result<(GroupKey, Value), ReportError> {
    let x = row
        .shape
        .get(x_key)
        .cloned()
        .ok_or_else(|| ReportError::MissingDimension {
            impl_name: row.impl_name.clone(),
            shape: row.shape.clone(),
            key: x_key.to_string(),
        })?;
    let mut dims = row.shape.dims().clone();
    dims.remove(x_key);
    Ok((GroupKey(dims), x))
}

/// Divides every median by the baseline's median at the group's smallest x.
/// Rows come back in input order.
pub fn normalize(
    table: &BenchmarkTable,
    baseline: &str,
    x_key: &str,
    anchor: Anchor,
) -> Result<NormalizedTable, ReportError> {
    if table.rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let keyed = table
        .rows
        .iter()
        .map(|r| group_of(r, x_key))
        .collect::<Result<Vec<_>, _>>()?;
    let mut min_x: BTreeMap<&GroupKey, &Value> = BTreeMap::new();
    for (g, x) in &keyed {
        let slot = min_x.entry(g).or_insert(x);
        if x < *slot {
            *slot = x;
        }
    }
    let mut divisors: BTreeMap<&GroupKey, f64> = BTreeMap::new();
    for (g, x) in &min_x {
        let found = table
            .rows
            .iter()
            .zip(&keyed)
            .find(|(r, (rg, rx))| r.impl_name == baseline && rg == *g && rx == *x);
        match found {
            Some((r, _)) => {
                divisors.insert(g, r.median_ms);
            }
            None => {
                return Err(ReportError::MissingBaseline {
                    baseline: baseline.to_string(),
                    group: format!("{g} at {x_key}={x}"),
                })
            }
        }
    }
    let global = *divisors
        .values()
        .next()
        .expect("non-empty table has a group");
    let rows = table
        .rows
        .iter()
        .zip(&keyed)
        .map(|(r, (g, _))| {
            let d = match anchor {
                Anchor::PerGroup => divisors[g],
                Anchor::Global => global,
            };
            NormalizedRow {
                impl_name: r.impl_name.clone(),
                shape: r.shape.clone(),
                median_ms: r.median_ms,
                normalized: r.median_ms / d,
            }
        })
        .collect();
    Ok(NormalizedTable {
        baseline: baseline.to_string(),
        x_key: x_key.to_string(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfPoint {
    pub shape: ShapeKey,
    /// `baseline / candidate`; above 1 means the candidate is faster.
    pub ratio: f64,
    pub cumulative_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfSummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub frac_ge_1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeCdf {
    pub points: Vec<CdfPoint>,
    pub summary: CdfSummary,
}

impl RelativeCdf {
    pub fn ratios(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.ratio).collect()
    }

    /// Columns `ratio,cumulative_fraction` then the shape dimensions.
    pub fn to_csv(&self) -> String {
        let dims = dim_names(self.points.iter().map(|p| &p.shape));
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["ratio".to_string(), "cumulative_fraction".into()];
        header.extend(dims.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for p in &self.points {
            let mut rec = vec![p.ratio.to_string(), p.cumulative_fraction.to_string()];
            rec.extend(dim_cells(&p.shape, &dims));
            w.write_record(&rec).expect("in-memory write");
        }
        finish_csv(w)
    }
}

fn by_shape<'a>(
    rows: &'a [BenchRow],
    which: &'static str,
) -> Result<BTreeMap<&'a BTreeMap<String, Value>, &'a BenchRow>, ReportError> {
    let mut map = BTreeMap::new();
    for r in rows {
        if map.insert(r.shape.dims(), r).is_some() {
            return Err(ReportError::RepeatedShape {
                which,
                shape: r.shape.clone(),
            });
        }
    }
    Ok(map)
}

/// Per-shape speedup of `candidate` over `baseline`, sorted ascending.
pub fn relative_cdf(
    candidate: &[BenchRow],
    baseline: &[BenchRow],
) -> Result<RelativeCdf, ReportError> {
    let cand = by_shape(candidate, "candidate")?;
    let base = by_shape(baseline, "baseline")?;
    let only_baseline: Vec<ShapeKey> = base
        .iter()
        .filter(|(k, _)| !cand.contains_key(*k))
        .map(|(_, r)| r.shape.clone())
        .collect();
    let only_candidate: Vec<ShapeKey> = cand
        .iter()
        .filter(|(k, _)| !base.contains_key(*k))
        .map(|(_, r)| r.shape.clone())
        .collect();
    if !only_baseline.is_empty() || !only_candidate.is_empty() {
        return Err(ReportError::ShapeMismatch {
            only_baseline,
            only_candidate,
        });
    }
    if cand.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut points: Vec<CdfPoint> = cand
        .iter()
        .map(|(k, c)| CdfPoint {
            shape: c.shape.clone(),
            ratio: base[k].median_ms / c.median_ms,
            cumulative_fraction: 0.0,
        })
        .collect();
    points.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
    let n = points.len();
    for (i, p) in points.iter_mut().enumerate() {
        p.cumulative_fraction = (i + 1) as f64 / n as f64;
    }
    let ratios: Vec<f64> = points.iter().map(|p| p.ratio).collect();
    let summary = CdfSummary {
        count: n,
        mean: ratios.iter().sum::<f64>() / n as f64,
        min: ratios[0],
        max: ratios[n - 1],
        frac_ge_1: ratios.iter().filter(|&&r| r >= 1.0).count() as f64 / n as f64,
    };
    Ok(RelativeCdf { points, summary })
}
