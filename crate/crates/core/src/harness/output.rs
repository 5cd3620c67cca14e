use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::runner::{CellSummary, ExperimentResult, ResultRecord, SePoint, TrialFailure};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::se::write_se_csv;

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SE_CSV: &str = "se.csv";
pub const RESULTS_HEADER: &str = "algorithm,G,P,trial,pe,nmse_db,iterations,wall_ms";

/// Aggregates written next to the per-trial CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<TrialFailure>,
    pub se: Option<Vec<SePoint>>,
}

impl From<&ExperimentResult> for Summary {
    fn from(r: &ExperimentResult) -> Self {
        Self { config: r.config.clone(), cells: r.cells.clone(), failures: r.failures.clone(), se: r.se.clone() }
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_results_csv<W: Write>(w: W, records: &[ResultRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if records.is_empty() {
        out.write_record(RESULTS_HEADER.split(',')).map_err(csv_error)?;
    }
    for r in records {
        out.serialize(r).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_error)?;
    rdr.deserialize().map(|r| r.map_err(csv_error)).collect()
}

pub fn write_se_overlay_csv<W: Write>(mut w: W, points: &[SePoint]) -> Result<()> {
    writeln!(w, "G,nmse_db,iterations")?;
    for p in points {
        writeln!(w, "{},{},{}", p.g, p.nmse_db, p.iterations)?;
    }
    Ok(())
}

pub fn se_trajectory_file(g: usize) -> String {
    format!("se_trajectory_G{g}.csv")
}

/// Writes `results.csv`, `summary.json` and, when present, the SE overlay
/// with one trajectory file per pilot length. Returns the written paths.
pub fn write_outputs(result: &ExperimentResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join(RESULTS_CSV);
    write_results_csv(BufWriter::new(File::create(&path)?), &result.records)?;
    written.push(path);

    let path = dir.join(SUMMARY_JSON);
    write_json(&path, &Summary::from(result))?;
    written.push(path);

    if let Some(points) = &result.se {
        let path = dir.join(SE_CSV);
        let mut w = BufWriter::new(File::create(&path)?);
        write_se_overlay_csv(&mut w, points)?;
        w.flush()?;
        written.push(path);
        for p in points {
            let path = dir.join(se_trajectory_file(p.g));
            let mut w = BufWriter::new(File::create(&path)?);
            write_se_csv(&mut w, &p.trajectory)?;
            w.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn read_summary(dir: impl AsRef<Path>) -> Result<Summary> {
    read_json(dir.as_ref().join(SUMMARY_JSON))
}
