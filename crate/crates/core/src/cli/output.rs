use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use crate::bandits::Algorithm;
use crate::controller::StepRecord;
use crate::error::{Error, Result};
use crate::rng::TrialSeeds;

pub const STEPS_HEADER: &str = "run,algorithm,step,arm,reward,best_reward,error,eta,cum_regret";
pub const SUMMARY_HEADER: &str = "preset,algorithm,runs,mean_total_regret,std_total_regret";

/// C `printf("%.17g")` formatting: 17 significant digits, shortest of
/// fixed or exponent notation, trailing zeros removed.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_fraction(mantissa), exp.abs())
    } else {
        trim_fraction(&format!("{x:.*}", (16 - exp) as usize)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow<'a> {
    pub run: usize,
    pub algorithm: Algorithm,
    pub record: &'a StepRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub preset: String,
    pub algorithm: Algorithm,
    pub runs: u64,
    pub mean_total_regret: f64,
    pub std_total_regret: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub trials: Vec<ManifestTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestTrial {
    pub run: usize,
    pub seeds: TrialSeeds,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_csv<I, R>(path: &Path, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header.split(',')).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `steps.csv`, `summary.csv` and `manifest.json` into `dir`.
pub fn write_results(dir: &Path, steps: &[StepRow<'_>], summary: &[SummaryRow], manifest: &Manifest<'_>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let steps_path = dir.join("steps.csv");
    write_csv(
        &steps_path,
        STEPS_HEADER,
        steps.iter().map(|r| {
            let s = r.record;
            [
                r.run.to_string(),
                r.algorithm.name().to_string(),
                s.step.to_string(),
                s.arm.to_string(),
                format_g17(s.reward),
                format_g17(s.best_reward),
                format_g17(s.error),
                format_g17(s.eta),
                format_g17(s.cum_regret),
            ]
        }),
    )?;
    let summary_path = dir.join("summary.csv");
    write_csv(
        &summary_path,
        SUMMARY_HEADER,
        summary.iter().map(|r| {
            [
                r.preset.clone(),
                r.algorithm.name().to_string(),
                r.runs.to_string(),
                format_g17(r.mean_total_regret),
                format_g17(r.std_total_regret),
            ]
        }),
    )?;
    let manifest_path = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(manifest).map_err(|e| Error::io(&manifest_path, std::io::Error::other(e)))?;
    json.push('\n');
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(vec![steps_path, summary_path, manifest_path])
}
