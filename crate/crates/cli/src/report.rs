//! CSV and TOML output. Every writer targets a file when a path is given
//! and stdout otherwise, and flushes before returning so exit codes never
//! race the output.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use holelab_core::Grid;
use serde::Serialize;

use crate::pipeline::{ResultRow, LYAPUNOV_COLUMNS, RESULT_COLUMNS};

fn writer_for(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        ),
        None => Box::new(io::stdout().lock()),
    })
}

/// Full sweep table, one row per parameter point, in plan order.
pub fn write_rows(path: Option<&Path>, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer_for(path)?);
    w.write_record(RESULT_COLUMNS)?;
    for row in rows {
        w.write_record(row.to_record())?;
    }
    w.flush()?;
    Ok(())
}

/// Exponent-focused subset of the sweep table.
pub fn write_lyapunov_rows(path: Option<&Path>, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer_for(path)?);
    w.write_record(LYAPUNOV_COLUMNS)?;
    for row in rows {
        w.write_record(row.to_lyapunov_record())?;
    }
    w.flush()?;
    Ok(())
}

/// Density profile: one (cell_center, density) row per grid cell.
pub fn write_density(path: Option<&Path>, grid: &Grid, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer_for(path)?);
    w.write_record(["cell_center", "density"])?;
    for (j, v) in values.iter().enumerate() {
        w.write_record([grid.cell_center(j).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reachable-set trace: one row per interval per step.
pub fn write_gap(path: Option<&Path>, intervals: &[(u32, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer_for(path)?);
    w.write_record(["step", "interval_lo", "interval_hi"])?;
    for (step, lo, hi) in intervals {
        w.write_record([step.to_string(), lo.to_string(), hi.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Sparse operator in triplet form: `row,col,value`, one entry per line,
/// no header.
pub fn write_matrix_triplets(path: &Path, entries: &[(usize, usize, f64)]) -> Result<()> {
    let mut w = io::BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for (row, col, value) in entries {
        writeln!(w, "{row},{col},{value}")?;
    }
    w.flush()?;
    Ok(())
}

/// Run metadata written next to a density/histogram file.
#[derive(Debug, Serialize)]
pub struct Sidecar {
    pub command: String,
    pub map: String,
    pub sigma: f64,
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigenvalue: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kill: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub escape_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kills: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub non_ergodic_suspect: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_steps: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap_hit: Option<bool>,
}

impl Sidecar {
    pub fn new(
        command: &str,
        map: String,
        sigma: f64,
        delta: f64,
        n: Option<usize>,
        seed: u64,
    ) -> Self {
        Sidecar {
            command: command.to_string(),
            map,
            sigma,
            delta,
            n,
            seed,
            eigenvalue: None,
            residual: None,
            iterations: None,
            steps: None,
            burn_in: None,
            particles: None,
            kill: None,
            escape_rate: None,
            kills: None,
            coverage: None,
            non_ergodic_suspect: None,
            total_samples: None,
            gap_steps: None,
            cap_hit: None,
        }
    }
}

/// `out.csv` gets its metadata as `out.meta.toml`.
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("meta.toml")
}

pub fn write_sidecar(data_path: &Path, sidecar: &Sidecar) -> Result<()> {
    let path = sidecar_path(data_path);
    let text = toml::to_string_pretty(sidecar).context("serializing run metadata")?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
