//! Experimental designs: input matrix, responses, optional replication
//! groups, and CSV ingestion with provenance.
//!
//! CSV layouts (UTF-8, `.` decimal separator, header required):
//!
//! * replication-free: `x1,...,xM,y`
//! * replicated: `group_id,x1,...,xM,y`, rows of one group share their x

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Column layout of a dataset file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    ReplicationFree,
    Replicated,
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub sha256: String,
    pub rows: usize,
    pub columns: Vec<String>,
    pub layout: Layout,
}

/// Inputs X (N×M), responses y (N), and optional replication group ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

fn check_finite(x: &Matrix, y: &[f64]) -> Result<()> {
    for (i, (row, v)) in x.rows().zip(y).enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i,
                what: format!("input column {}", j + 1),
            });
        }
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: i,
                what: "response".into(),
            });
        }
    }
    Ok(())
}

impl Dataset {
    /// Replication-free dataset. Rejects mismatched lengths and non-finite values.
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        check_finite(&x, &y)?;
        Ok(Self {
            x,
            y,
            groups: None,
            provenance: None,
        })
    }

    /// Replicated dataset: `groups[i]` names the replication set of row i.
    /// Rows of one group must carry the same input vector.
    pub fn replicated(groups: Vec<u64>, x: Matrix, y: Vec<f64>) -> Result<Self> {
        let mut d = Self::new(x, y)?;
        if groups.len() != d.len() {
            return Err(Error::DimensionMismatch {
                expected: d.len(),
                got: groups.len(),
            });
        }
        let mut first: std::collections::HashMap<u64, usize> = Default::default();
        for (i, g) in groups.iter().enumerate() {
            let j = *first.entry(*g).or_insert(i);
            if d.x.row(i) != d.x.row(j) {
                return Err(Error::Precondition(format!(
                    "rows {j} and {i} share group {g} but differ in x"
                )));
            }
        }
        d.groups = Some(groups);
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Row indices of each replication group, in first-appearance order.
    pub fn group_rows(&self) -> Option<Vec<(u64, Vec<usize>)>> {
        let groups = self.groups.as_ref()?;
        let mut order: Vec<(u64, Vec<usize>)> = Vec::new();
        let mut pos: std::collections::HashMap<u64, usize> = Default::default();
        for (i, &g) in groups.iter().enumerate() {
            let k = *pos.entry(g).or_insert_with(|| {
                order.push((g, Vec::new()));
                order.len() - 1
            });
            order[k].1.push(i);
        }
        Some(order)
    }

    /// Rows listed in `idx` (replication groups and provenance dropped).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            groups: None,
            provenance: None,
        }
    }

    /// Writes the dataset as CSV, in the replicated layout when groups are set.
    /// Values are printed in shortest round-trip form.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = Vec::new();
        if self.groups.is_some() {
            header.push("group_id".into());
        }
        header.extend((1..=self.dim()).map(|j| format!("x{j}")));
        header.push("y".into());
        w.write_record(&header)?;
        for (i, row) in self.x.rows().enumerate() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            if let Some(g) = &self.groups {
                rec.push(g[i].to_string());
            }
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            rec.push(format!("{:?}", self.y[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn dataset_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a dataset CSV. `dim` (when given) fixes the expected number of
/// input columns. The layout is detected from a leading `group_id` column.
/// Provenance records the SHA-256 of the file bytes and the row count.
pub fn load_dataset_csv(path: &Path, dim: Option<usize>) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| dataset_err(path, e.to_string()))?;
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(dataset_err(path, "file is empty"));
    }
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| dataset_err(path, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let replicated = header.first().is_some_and(|h| h == "group_id");
    let offset = usize::from(replicated);
    let m = header.len().saturating_sub(1 + offset);
    if m == 0 {
        return Err(dataset_err(path, "need at least one input column and a `y` column"));
    }
    let expected: Vec<String> = (1..=m).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    if header[offset..] != expected[..] {
        return Err(dataset_err(
            path,
            format!(
                "header must be {}{}",
                if replicated { "group_id," } else { "" },
                expected.join(",")
            ),
        ));
    }
    if let Some(d) = dim {
        if d != m {
            return Err(dataset_err(path, format!("expected {d} input columns, found {m}")));
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut groups = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| dataset_err(path, format!("row {}: {e}", i + 1)))?;
        if rec.len() != header.len() {
            return Err(dataset_err(
                path,
                format!("row {}: expected {} fields, found {}", i + 1, header.len(), rec.len()),
            ));
        }
        if replicated {
            let g = rec[0]
                .parse::<u64>()
                .map_err(|_| dataset_err(path, format!("row {}: group_id `{}` is not an integer", i + 1, &rec[0])))?;
            groups.push(g);
        }
        for (j, field) in rec.iter().enumerate().skip(offset) {
            let v: f64 = field.parse().map_err(|_| {
                dataset_err(
                    path,
                    format!("row {}, column `{}`: cannot parse `{field}`", i + 1, header[j]),
                )
            })?;
            if !v.is_finite() {
                return Err(dataset_err(
                    path,
                    format!("row {}, column `{}`: non-finite value `{field}`", i + 1, header[j]),
                ));
            }
            if j == header.len() - 1 {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(dataset_err(path, "file has a header but no data rows"));
    }
    let x = Matrix::from_vec(ys.len(), m, xs);
    let rows = ys.len();
    let mut data = if replicated {
        Dataset::replicated(groups, x, ys).map_err(|e| dataset_err(path, e.to_string()))?
    } else {
        Dataset::new(x, ys)?
    };
    data.provenance = Some(Provenance {
        source: path.display().to_string(),
        sha256,
        rows,
        columns: header,
        layout: if replicated {
            Layout::Replicated
        } else {
            Layout::ReplicationFree
        },
    });
    Ok(data)
}

/// Path of the provenance sidecar for a dataset file: `<file>.provenance.json`.
pub fn provenance_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".provenance.json");
    PathBuf::from(s)
}

/// Writes the provenance of a loaded dataset next to its file.
pub fn write_provenance_sidecar(data: &Dataset, path: &Path) -> Result<PathBuf> {
    let prov = data
        .provenance
        .as_ref()
        .ok_or_else(|| Error::Precondition("dataset has no provenance".into()))?;
    let out = provenance_sidecar_path(path);
    fs::write(&out, serde_json::to_string_pretty(prov)?)?;
    Ok(out)
}
