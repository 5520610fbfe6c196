use std::path::PathBuf;

use clap::Args;
use funbipart::signal::{
    align_to_cycle_start_in_band, butterworth_filter, trim_boundaries, FilterKind,
};
use funbipart::{Aligned, Series};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{error_kind, file_stems};
use crate::error::{CliError, Result};
use crate::formats::{
    config_hash, fmt_f64, strings, write_csv, write_json, write_series_csv, Archive, Manifest,
    Preprocessing, RunConfig, Stage, SubjectEntry, MANIFEST_FILE, MANIFEST_VERSION,
};

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Manifest file, or a directory holding manifest.json.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectOutcome {
    pub id: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_frames: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period_frames: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_cycles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub format: String,
    pub config_hash: String,
    pub preprocessing: Preprocessing,
    /// True when the input was already aligned and was copied unchanged.
    pub passthrough: bool,
    pub n_failed: usize,
    pub subjects: Vec<SubjectOutcome>,
}

/// Low-pass, trim, then crop to the first cycle start of the alignment dimension.
pub fn preprocess_series(
    series: &Series,
    alignment_dim: usize,
    p: &Preprocessing,
) -> funbipart::Result<Aligned> {
    let kind = FilterKind::Lowpass {
        cutoff_hz: p.lowpass_hz,
    };
    let filtered = series
        .map_channels(|x| butterworth_filter(x, series.sample_rate_hz, kind, p.lowpass_order))?;
    let trimmed = trim_boundaries(&filtered, p.trim_seconds)?;
    align_to_cycle_start_in_band(&trimmed, alignment_dim, p.bandpass)
}

/// Aligned series of every subject in the archive, or the failure of each.
pub fn load_aligned(
    archive: &Archive,
    p: &Preprocessing,
) -> Vec<(SubjectEntry, std::result::Result<Aligned, CliError>)> {
    let m = &archive.manifest;
    m.subjects
        .par_iter()
        .map(|s| {
            let result = match m.stage {
                Stage::Aligned => archive.load_aligned(s),
                Stage::Raw => archive.load(s).and_then(|series| {
                    preprocess_series(&series, m.alignment_index(), p).map_err(CliError::from)
                }),
            };
            (s.clone(), result)
        })
        .collect()
}

fn outcome(id: &str, result: &std::result::Result<Aligned, CliError>) -> SubjectOutcome {
    match result {
        Ok(a) => {
            let n = a.series.n_frames();
            SubjectOutcome {
                id: id.to_owned(),
                ok: true,
                n_frames: Some(n),
                period_frames: Some(a.period_frames),
                n_cycles: Some((n as f64 / a.period_frames).floor() as usize),
                reason: None,
                detail: None,
            }
        }
        Err(e) => SubjectOutcome {
            id: id.to_owned(),
            ok: false,
            n_frames: None,
            period_frames: None,
            n_cycles: None,
            reason: Some(match e {
                CliError::Core(c) => error_kind(c).to_owned(),
                _ => "unreadable".to_owned(),
            }),
            detail: Some(e.to_string()),
        },
    }
}

pub fn run(args: &PreprocessArgs) -> Result<()> {
    let config = RunConfig::load(args.config.as_deref())?;
    config.validate()?;
    let out = config.output_dir(args.out.as_deref())?;
    let archive = Archive::open(&args.manifest)?;
    let results = load_aligned(&archive, &config.preprocessing);
    let m = &archive.manifest;

    let ok: Vec<(&SubjectEntry, &Aligned)> = results
        .iter()
        .filter_map(|(s, r)| r.as_ref().ok().map(|a| (s, a)))
        .collect();
    let stems = file_stems(ok.iter().map(|(s, _)| s.id.as_str()));
    let mut entries = Vec::with_capacity(ok.len());
    let mut period_rows = Vec::with_capacity(ok.len());
    for ((s, a), stem) in ok.iter().zip(&stems) {
        let csv_path = format!("aligned/{stem}.csv");
        write_series_csv(&out.join(&csv_path), &a.series)?;
        let n_cycles = (a.series.n_frames() as f64 / a.period_frames).floor() as usize;
        period_rows.push(vec![
            s.id.clone(),
            fmt_f64(a.period_frames),
            n_cycles.to_string(),
        ]);
        entries.push(SubjectEntry {
            id: s.id.clone(),
            csv_path,
            covariates: s.covariates.clone(),
            period_frames: Some(a.period_frames),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION.to_owned(),
        sample_rate_hz: m.sample_rate_hz,
        dim_names: m.dim_names.clone(),
        alignment_dim: m.alignment_dim.clone(),
        stage: Stage::Aligned,
        subjects: entries,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    write_csv(
        &out.join("periods.csv"),
        &strings(["subject_id", "period_frames", "n_cycles"]),
        &period_rows,
    )?;
    let subjects: Vec<SubjectOutcome> = results.iter().map(|(s, r)| outcome(&s.id, r)).collect();
    let n_failed = subjects.iter().filter(|s| !s.ok).count();
    let report = PreprocessReport {
        format: "funbipart.preprocess/1".to_owned(),
        config_hash: config_hash(&config.preprocessing),
        preprocessing: config.preprocessing.clone(),
        passthrough: m.stage == Stage::Aligned,
        n_failed,
        subjects,
    };
    write_json(&out.join("preprocess_report.json"), &report)?;
    for s in report.subjects.iter().filter(|s| !s.ok) {
        eprintln!(
            "subject {}: {}",
            s.id,
            s.detail.as_deref().unwrap_or("failed")
        );
    }
    if n_failed > 0 {
        return Err(CliError::Data(format!(
            "{n_failed} of {} subjects failed preprocessing",
            report.subjects.len()
        )));
    }
    Ok(())
}
