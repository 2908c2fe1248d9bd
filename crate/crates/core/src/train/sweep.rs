use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::config::TrainConfig;
use super::trainer::{train, write_file};

pub const SWEEP_HEADER: &str = "dropout,learning rate,hidden size,glove,batch-size,F1,EM";

/// One finished sweep cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub dropout: f64,
    pub learning_rate: f64,
    pub h: usize,
    pub d_word: usize,
    pub batch_size: usize,
    pub f1: f64,
    pub em: f64,
}

/// Parses a grid file: each non-blank line not starting with `#` is one cell
/// of `key=value` overrides separated by whitespace or commas.
pub fn parse_grid(text: &str) -> Result<Vec<Vec<(String, String)>>> {
    let mut cells = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cell = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|pair| {
                pair.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Config(format!("grid line {}: expected key=value, got '{pair}'", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut probe = TrainConfig::default();
        for (k, v) in &cell {
            probe.set(k, v).map_err(|e| Error::Config(format!("grid line {}: {e}", n + 1)))?;
        }
        cells.push(cell);
    }
    if cells.is_empty() {
        return Err(Error::Config("grid has no cells".into()));
    }
    Ok(cells)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.2},{:.2}",
            r.dropout, r.learning_rate, r.h, r.d_word, r.batch_size, r.f1, r.em
        );
    }
    out
}

/// Trains every cell in turn, each in `out/cell-<k>`, and writes
/// `out/sweep.csv`. Scores are the best dev F1 and its EM.
pub fn run_sweep(base: &TrainConfig, cells: &[Vec<(String, String)>], out: &Path) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(cells.len());
    for (k, cell) in cells.iter().enumerate() {
        let mut config = base.clone();
        for (key, value) in cell {
            config.set(key, value)?;
        }
        config.validate()?;
        let (_, summary) = train(&config, Some(&out.join(format!("cell-{k}"))))?;
        let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
        rows.push(SweepRow {
            dropout: config.dropout,
            learning_rate: config.learning_rate,
            h: config.h,
            d_word: config.d_word,
            batch_size: config.batch_size,
            f1: finite(summary.best_f1),
            em: finite(summary.best_em),
        });
        write_file(&out.join("sweep.csv"), &sweep_csv(&rows))?;
    }
    Ok(rows)
}
