//! Best-pair selection and plot-ready CSV series.
//!
//! Files written by [`write_report`]:
//!
//! - `cells.csv`: `cn0_dbhz,n_sup,lambda,sigma,runs,median_max_accuracy,q1,q2,q3`,
//!   one row per cell (baseline rows have `lambda = 0` and an empty `sigma`).
//! - `accuracy_vs_nsup.csv`: `cn0_dbhz,lambda,sigma,n_sup,median_max_accuracy`,
//!   one series per (C/N0, λ, σ) ordered by N_SUP.
//! - `quartiles_vs_sigma.csv`: `cn0_dbhz,n_sup,lambda,sigma,q1,q2,q3`, one series
//!   per (C/N0, N_SUP, λ) ordered by σ; quartiles are empty below four runs.
//! - `best_pairs.csv`: `cn0_dbhz,n_sup,lambda,sigma,median_max_accuracy,baseline_median,gain`,
//!   one row per winning pair (ties give several rows).
//! - `report.json`: the best-pair report with per-σ breakdowns and the quantile rule.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::CellStatistics;
use super::stats::{Quartiles, QUANTILE_RULE};
use crate::{io, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaRow {
    pub sigma: f64,
    pub runs: usize,
    pub median_max_accuracy: f64,
    pub quartiles: Option<Quartiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinningPair {
    pub lambda: f64,
    pub sigma: f64,
    pub median_max_accuracy: f64,
    pub gain: f64,
    /// Every σ tried at this λ.
    pub sigma_breakdown: Vec<SigmaRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPairs {
    pub cn0_dbhz: f64,
    pub n_sup: usize,
    pub baseline_median: f64,
    pub baseline_quartiles: Option<Quartiles>,
    /// Empty when the group has no SSL cells.
    pub winners: Vec<WinningPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub quantile_rule: String,
    pub n_cells: usize,
    pub best_pairs: Vec<BestPairs>,
}

fn sorted(table: &[CellStatistics]) -> Vec<&CellStatistics> {
    let mut v: Vec<&CellStatistics> = table.iter().collect();
    v.sort_by_key(|c| c.key.sort_key());
    v
}

/// Per (C/N0, N_SUP): every (λ, σ) with the highest median of max accuracy and
/// its gain over the λ = 0 baseline (negative gains are kept as they are).
pub fn best_pairs_report(table: &[CellStatistics]) -> Result<Vec<BestPairs>> {
    let rows = sorted(table);
    let mut groups: Vec<(f64, usize)> = Vec::new();
    for r in &rows {
        let g = (r.key.cn0_dbhz, r.key.n_sup);
        if groups.last() != Some(&g) {
            groups.push(g);
        }
    }
    let mut out = Vec::new();
    for (cn0, n_sup) in groups {
        let members: Vec<&CellStatistics> = rows
            .iter()
            .copied()
            .filter(|r| r.key.cn0_dbhz == cn0 && r.key.n_sup == n_sup)
            .collect();
        let baseline = members
            .iter()
            .find(|r| r.key.is_baseline())
            .ok_or_else(|| {
                Error::Report(format!(
                    "no baseline cell for C/N0 = {cn0}, N_SUP = {n_sup}"
                ))
            })?;
        let ssl: Vec<&CellStatistics> = members
            .iter()
            .copied()
            .filter(|r| !r.key.is_baseline())
            .collect();
        let best = ssl
            .iter()
            .map(|r| r.median_max_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        let winners = ssl
            .iter()
            .filter(|r| r.median_max_accuracy == best)
            .map(|w| WinningPair {
                lambda: w.key.lambda,
                sigma: w.key.sigma.expect("SSL cells carry sigma"),
                median_max_accuracy: w.median_max_accuracy,
                gain: w.median_max_accuracy - baseline.median_max_accuracy,
                sigma_breakdown: ssl
                    .iter()
                    .filter(|r| r.key.lambda == w.key.lambda)
                    .map(|r| SigmaRow {
                        sigma: r.key.sigma.expect("SSL cells carry sigma"),
                        runs: r.runs,
                        median_max_accuracy: r.median_max_accuracy,
                        quartiles: r.quartiles,
                    })
                    .collect(),
            })
            .collect();
        out.push(BestPairs {
            cn0_dbhz: cn0,
            n_sup,
            baseline_median: baseline.median_max_accuracy,
            baseline_quartiles: baseline.quartiles,
            winners,
        });
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn quartile_cols(q: Option<Quartiles>) -> String {
    format!(
        "{},{},{}",
        opt(q.map(|q| q.q1)),
        opt(q.map(|q| q.q2)),
        opt(q.map(|q| q.q3))
    )
}

/// Writes `cells.csv`, `accuracy_vs_nsup.csv` and `quartiles_vs_sigma.csv`.
pub fn emit_plot_data(table: &[CellStatistics], dir: &Path) -> Result<()> {
    if table.is_empty() {
        return Err(Error::Report("no cells to report".into()));
    }
    io::create_dir_all(dir)?;
    let rows = sorted(table);

    let mut cells = String::from("cn0_dbhz,n_sup,lambda,sigma,runs,median_max_accuracy,q1,q2,q3\n");
    for r in &rows {
        let k = &r.key;
        writeln!(
            cells,
            "{},{},{},{},{},{},{}",
            k.cn0_dbhz,
            k.n_sup,
            k.lambda,
            opt(k.sigma),
            r.runs,
            r.median_max_accuracy,
            quartile_cols(r.quartiles)
        )
        .unwrap();
    }

    let mut by_nsup = rows.clone();
    by_nsup.sort_by(|a, b| {
        let ka = (
            &a.key.cn0_dbhz,
            &a.key.lambda,
            &a.key.sigma.unwrap_or(f64::NEG_INFINITY),
            a.key.n_sup,
        );
        let kb = (
            &b.key.cn0_dbhz,
            &b.key.lambda,
            &b.key.sigma.unwrap_or(f64::NEG_INFINITY),
            b.key.n_sup,
        );
        ka.0.total_cmp(kb.0)
            .then(ka.1.total_cmp(kb.1))
            .then(ka.2.total_cmp(kb.2))
            .then(ka.3.cmp(&kb.3))
    });
    let mut acc = String::from("cn0_dbhz,lambda,sigma,n_sup,median_max_accuracy\n");
    for r in &by_nsup {
        let k = &r.key;
        writeln!(
            acc,
            "{},{},{},{},{}",
            k.cn0_dbhz,
            k.lambda,
            opt(k.sigma),
            k.n_sup,
            r.median_max_accuracy
        )
        .unwrap();
    }

    let mut quart = String::from("cn0_dbhz,n_sup,lambda,sigma,q1,q2,q3\n");
    for r in &rows {
        let k = &r.key;
        writeln!(
            quart,
            "{},{},{},{},{}",
            k.cn0_dbhz,
            k.n_sup,
            k.lambda,
            opt(k.sigma),
            quartile_cols(r.quartiles)
        )
        .unwrap();
    }

    io::write_atomic(&dir.join("cells.csv"), cells.as_bytes())?;
    io::write_atomic(&dir.join("accuracy_vs_nsup.csv"), acc.as_bytes())?;
    io::write_atomic(&dir.join("quartiles_vs_sigma.csv"), quart.as_bytes())
}

/// Plot data plus `best_pairs.csv` and `report.json`.
pub fn write_report(table: &[CellStatistics], dir: &Path) -> Result<Report> {
    emit_plot_data(table, dir)?;
    let best_pairs = best_pairs_report(table)?;
    let mut csv =
        String::from("cn0_dbhz,n_sup,lambda,sigma,median_max_accuracy,baseline_median,gain\n");
    for g in &best_pairs {
        if g.winners.is_empty() {
            writeln!(csv, "{},{},,,,{},", g.cn0_dbhz, g.n_sup, g.baseline_median).unwrap();
        }
        for w in &g.winners {
            writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                g.cn0_dbhz,
                g.n_sup,
                w.lambda,
                w.sigma,
                w.median_max_accuracy,
                g.baseline_median,
                w.gain
            )
            .unwrap();
        }
    }
    io::write_atomic(&dir.join("best_pairs.csv"), csv.as_bytes())?;
    let report = Report {
        quantile_rule: QUANTILE_RULE.to_string(),
        n_cells: table.len(),
        best_pairs,
    };
    io::write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}
