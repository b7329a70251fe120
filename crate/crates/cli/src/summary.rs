//! Per-method cumulative-regret tables recomputed from episode CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mdlc_core::agents::MethodKind;
use mdlc_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::matrix::EPISODE_HEADER;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub seeds: usize,
    pub mean: f64,
    /// Sample standard deviation over seeds divided by √seeds; 0 for one seed.
    pub se: f64,
    pub per_seed: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub phase: u8,
    pub rows: Vec<SummaryRow>,
}

/// Cumulative regret per (method, seed, phase) from one CSV's contents.
fn accumulate(text: &str, source: &str, into: &mut BTreeMap<(String, u64, u8), f64>) -> Result<()> {
    let mut lines = text.lines();
    if lines.next() != Some(EPISODE_HEADER) {
        return Err(Error::contract(format!("{source}: unexpected header")));
    }
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || Error::contract(format!("{source}:{}: malformed row", i + 2));
        if cols.len() != 9 {
            return Err(bad());
        }
        let seed: u64 = cols[1].parse().map_err(|_| bad())?;
        let phase: u8 = cols[2].parse().map_err(|_| bad())?;
        let regret: f64 = cols[6].parse().map_err(|_| bad())?;
        *into.entry((cols[0].to_string(), seed, phase)).or_insert(0.0) += regret;
    }
    Ok(())
}

pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn method_rank(name: &str) -> usize {
    name.parse::<MethodKind>()
        .ok()
        .and_then(|m| MethodKind::ALL.iter().position(|&k| k == m))
        .unwrap_or(usize::MAX)
}

/// Table of mean ± SE cumulative regret in `phase` over all episode CSVs
/// in `dir`.
pub fn summarize_phase(dir: &Path, phase: u8) -> Result<SummaryTable> {
    let mut totals = BTreeMap::new();
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.to_string_lossy().ends_with("_episodes.csv") {
            accumulate(&fs::read_to_string(&p)?, &p.display().to_string(), &mut totals)?;
        }
    }
    let mut by_method: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for ((m, seed, ph), v) in totals {
        if ph == phase {
            by_method.entry(m).or_default().push((seed, v));
        }
    }
    if by_method.is_empty() {
        return Err(Error::Empty(format!("no completed cells with phase {phase} in {}", dir.display())));
    }
    let mut rows: Vec<SummaryRow> = by_method
        .into_iter()
        .map(|(method, per_seed)| {
            let vals: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
            let (mean, se) = mean_se(&vals);
            SummaryRow {
                method,
                seeds: per_seed.len(),
                mean,
                se,
                per_seed,
            }
        })
        .collect();
    rows.sort_by_key(|r| method_rank(&r.method));
    Ok(SummaryTable { phase, rows })
}

pub fn summarize(dir: &Path) -> Result<SummaryTable> {
    summarize_phase(dir, 2)
}

impl SummaryTable {
    pub fn row(&self, method: MethodKind) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method.parse::<MethodKind>().ok() == Some(method))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,phase,seeds,mean_cumulative_regret,se\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.method, self.phase, r.seeds, r.mean, r.se);
        }
        s
    }

    /// Column-aligned text table.
    pub fn render(&self) -> String {
        let display = |m: &str| if m == "MDLC" { "MDL-C".to_string() } else { m.to_string() };
        let cells: Vec<(String, String)> = self
            .rows
            .iter()
            .map(|r| {
                let flag = if r.seeds == 1 { "  (single seed)" } else { "" };
                (display(&r.method), format!("{:.2e} ± {:.2e}  [n={}]{flag}", r.mean, r.se, r.seeds))
            })
            .collect();
        let w = cells.iter().map(|c| c.0.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:<w$}  Phase {} cumulative regret\n", "Method", self.phase);
        for (m, v) in cells {
            let _ = writeln!(s, "{m:<w$}  {v}");
        }
        s
    }
}
