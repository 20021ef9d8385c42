use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ActivityMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: String,
    pub objective: String,
    /// Training camera indices joined with `+`.
    pub views: String,
    pub view_count: usize,
    pub lambda_con: f64,
    pub seed: u64,
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub per_activity: BTreeMap<String, ActivityMetrics>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub experiment: String,
    pub rows: Vec<ResultRow>,
}

/// Median over seeds for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub objective: String,
    pub views: String,
    pub view_count: usize,
    pub lambda_con: f64,
    pub seeds: usize,
    pub median_mpjpe_mm: f64,
    pub median_pa_mpjpe_mm: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ResultTable {
    /// Sorts rows by cell id, then seed.
    pub fn sort(&mut self) {
        self.rows
            .sort_by(|a, b| a.cell.cmp(&b.cell).then(a.seed.cmp(&b.seed)));
    }

    pub fn validate(&self) -> Result<()> {
        let mut keys = BTreeSet::new();
        for r in &self.rows {
            if !keys.insert((r.cell.as_str(), r.seed)) {
                return Err(Error::Invalid(format!(
                    "duplicate row for cell `{}` seed {}",
                    r.cell, r.seed
                )));
            }
            if !(r.mpjpe_mm.is_finite() && r.pa_mpjpe_mm.is_finite()) {
                return Err(Error::Invalid(format!(
                    "non-finite metric in cell `{}` seed {}",
                    r.cell, r.seed
                )));
            }
        }
        Ok(())
    }

    /// Per-cell medians, in row order of first appearance.
    pub fn summarize(&self) -> Vec<CellSummary> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
        for r in &self.rows {
            let g = groups.entry(&r.cell).or_default();
            if g.is_empty() {
                order.push(&r.cell);
            }
            g.push(r);
        }
        order
            .into_iter()
            .map(|cell| {
                let rows = &groups[cell];
                let first = rows[0];
                CellSummary {
                    cell: cell.to_string(),
                    objective: first.objective.clone(),
                    views: first.views.clone(),
                    view_count: first.view_count,
                    lambda_con: first.lambda_con,
                    seeds: rows.len(),
                    median_mpjpe_mm: median(&rows.iter().map(|r| r.mpjpe_mm).collect::<Vec<_>>()),
                    median_pa_mpjpe_mm: median(
                        &rows.iter().map(|r| r.pa_mpjpe_mm).collect::<Vec<_>>(),
                    ),
                }
            })
            .collect()
    }

    pub fn cell_summary(&self, cell: &str) -> Option<CellSummary> {
        self.summarize().into_iter().find(|s| s.cell == cell)
    }

    fn activities(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self
            .rows
            .iter()
            .flat_map(|r| r.per_activity.keys())
            .collect();
        set.into_iter().cloned().collect()
    }

    /// Canonical CSV: metrics and per-activity columns, no timing, so reruns are byte-identical.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let activities = self.activities();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = [
            "cell",
            "objective",
            "views",
            "view_count",
            "lambda_con",
            "seed",
            "mpjpe_mm",
            "pa_mpjpe_mm",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for a in &activities {
            header.push(format!("mpjpe_mm[{a}]"));
            header.push(format!("pa_mpjpe_mm[{a}]"));
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.cell.clone(),
                r.objective.clone(),
                r.views.clone(),
                r.view_count.to_string(),
                r.lambda_con.to_string(),
                r.seed.to_string(),
                r.mpjpe_mm.to_string(),
                r.pa_mpjpe_mm.to_string(),
            ];
            for a in &activities {
                match r.per_activity.get(a) {
                    Some(m) => {
                        rec.push(m.mpjpe_mm.to_string());
                        rec.push(m.pa_mpjpe_mm.to_string());
                    }
                    None => {
                        rec.push(String::new());
                        rec.push(String::new());
                    }
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timing_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cell", "seed", "wall_clock_s"])?;
        for r in &self.rows {
            w.write_record([
                r.cell.clone(),
                r.seed.to_string(),
                format!("{:.3}", r.wall_clock_s),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for s in self.summarize() {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    /// Reads back the canonical CSV (per-activity columns and timing are not restored).
    pub fn read_csv(path: &Path) -> Result<Vec<(String, u64, f64, f64)>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Invalid(format!("bad numeric field {i} in results CSV")))
            };
            out.push((
                rec.get(0).unwrap_or_default().to_string(),
                num(5)? as u64,
                num(6)?,
                num(7)?,
            ));
        }
        Ok(out)
    }
}
