use std::path::PathBuf;

use clap::Args;
use funbipart::basis::{decompose_subject, select_common_degrees, FourierBasis};
use funbipart::em::{grid_search, PenaltyConstant};
use funbipart::metrics::{
    coefficient_std, curve_std, diagnostics, jerk_cost, reconstruct, DiagnosticsReport,
    ReconstructedCurves,
};
use funbipart::{Aligned, Coefficients, Fit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::preprocess::load_aligned;
use crate::error::{CliError, Result};
use crate::formats::{config_hash, fmt_f64, strings, write_csv, write_json, Archive, RunConfig};

pub const FIT_FORMAT: &str = "funbipart.fit/1";

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Aligned archive: manifest file or its directory. Raw archives are preprocessed in memory.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long)]
    pub lmax: Option<usize>,
    /// Penalty constant: "bic" for ln(n)/2, or a positive number.
    #[arg(long)]
    pub c: Option<PenaltyConstant>,
    #[arg(long)]
    pub grid_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSummary {
    pub cluster: usize,
    pub dim: String,
    pub curve_std: f64,
    pub jerk_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionSummary {
    pub cluster: usize,
    pub dim: String,
    /// Standard deviation of the variance curve, from its coefficients.
    pub variance_std: f64,
    /// Standard deviation of the standard-deviation curve on the grid.
    pub sd_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub dim_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub signal_degrees: Vec<usize>,
    pub residual_degrees: Vec<usize>,
    pub fit: Fit,
    pub coefficients: Vec<Coefficients>,
    pub pattern_summary: Vec<PatternSummary>,
    pub dispersion_summary: Vec<DispersionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub config_hash: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<DiagnosticsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

/// Flags override the config file; the output directory is not part of the result.
pub fn effective_config(args: &FitArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.em.seed = seed;
    }
    if let Some(k) = args.kmax {
        config.grid.k_max = k;
    }
    if let Some(l) = args.lmax {
        config.grid.l_max = l;
    }
    if let Some(c) = args.c {
        config.em.c = c;
    }
    if let Some(g) = args.grid_size {
        config.grid_size = g;
    }
    config.validate()?;
    Ok(config)
}

fn summaries(
    fit: &Fit,
    curves: &ReconstructedCurves,
    dim_names: &[String],
) -> (Vec<PatternSummary>, Vec<DispersionSummary>) {
    let m = &fit.structure;
    let mut pattern = Vec::new();
    for k in 0..m.k {
        for (j, name) in dim_names.iter().enumerate() {
            let mu = &fit.theta.alpha[j].component(k).mean;
            let unit = FourierBasis {
                degree: FourierBasis::degree_for_size(mu.len()).expect("valid fit"),
                period: 1.0,
            };
            pattern.push(PatternSummary {
                cluster: k + 1,
                dim: name.clone(),
                curve_std: curve_std(&curves.mean_curves[k][j]),
                jerk_cost: jerk_cost(mu, &unit),
            });
        }
    }
    let mut dispersion = Vec::new();
    for l in 0..m.l {
        for (j, name) in dim_names.iter().enumerate() {
            dispersion.push(DispersionSummary {
                cluster: l + 1,
                dim: name.clone(),
                variance_std: coefficient_std(&fit.theta.beta[j].component(l).mean),
                sd_std: curve_std(&curves.dispersion_curves[l][j]),
            });
        }
    }
    (pattern, dispersion)
}

pub fn fit_archive(
    archive: &Archive,
    config: &RunConfig,
) -> Result<(FitReport, ReconstructedCurves, DiagnosticsFile)> {
    let m = &archive.manifest;
    let mut aligned: Vec<Aligned> = Vec::with_capacity(m.subjects.len());
    let mut failures = Vec::new();
    for (s, r) in load_aligned(archive, &config.preprocessing) {
        match r {
            Ok(a) => aligned.push(a),
            Err(e) => failures.push(format!("{}: {e}", s.id)),
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Data(format!(
            "cannot load {} subjects: {}",
            failures.len(),
            failures.join("; ")
        )));
    }

    let wanted = &config.degrees.reference_subjects;
    let reference: Vec<Aligned> = if wanted.is_empty() {
        aligned.clone()
    } else {
        for id in wanted {
            if !m.subjects.iter().any(|s| &s.id == id) {
                return Err(CliError::Usage(format!("unknown reference subject {id:?}")));
            }
        }
        aligned
            .iter()
            .filter(|a| wanted.contains(&a.series.subject_id))
            .cloned()
            .collect()
    };
    let (signal_degrees, residual_degrees) = select_common_degrees(
        &reference,
        &config.degrees.signal_candidates,
        &config.degrees.residual_candidates,
    )?;
    let coefficients = aligned
        .par_iter()
        .map(|a| decompose_subject(a, &signal_degrees, &residual_degrees))
        .collect::<funbipart::Result<Vec<_>>>()?;
    let fit = grid_search(
        &coefficients,
        config.grid.k_max,
        config.grid.l_max,
        &config.em,
    )?;
    let curves = reconstruct(&fit.theta, &fit.structure, config.grid_size);
    let (pattern_summary, dispersion_summary) = summaries(&fit, &curves, &m.dim_names);

    let hash = config_hash(config);
    let diag = match diagnostics(&coefficients, &fit.fuzzy, config.diagnostics_level) {
        Ok(report) => DiagnosticsFile {
            config_hash: hash.clone(),
            seed: config.em.seed,
            report: Some(report),
            skipped: None,
        },
        Err(e) => DiagnosticsFile {
            config_hash: hash.clone(),
            seed: config.em.seed,
            report: None,
            skipped: Some(e.to_string()),
        },
    };
    let report = FitReport {
        format: FIT_FORMAT.to_owned(),
        config_hash: hash,
        seed: config.em.seed,
        config: config.clone(),
        dim_names: m.dim_names.clone(),
        subject_ids: m.subjects.iter().map(|s| s.id.clone()).collect(),
        signal_degrees,
        residual_degrees,
        fit,
        coefficients,
        pattern_summary,
        dispersion_summary,
    };
    Ok((report, curves, diag))
}

fn posterior_rows(report: &FitReport) -> (Vec<String>, Vec<Vec<String>>) {
    let fit = &report.fit;
    let (k, l) = (fit.structure.k, fit.structure.l);
    let mut header = strings(["subject_id", "v", "w"]);
    for a in 1..=k {
        for b in 1..=l {
            header.push(format!("t_{a}_{b}"));
        }
    }
    let rows = report
        .subject_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut row = vec![
                id.clone(),
                (fit.v_hat[i] + 1).to_string(),
                (fit.w_hat[i] + 1).to_string(),
            ];
            row.extend(fit.fuzzy.row(i).iter().map(|&t| fmt_f64(t)));
            row
        })
        .collect();
    (header, rows)
}

fn curve_rows(curves: &ReconstructedCurves, report: &FitReport) -> Vec<Vec<String>> {
    let grid = curves.grid();
    let m = &report.fit.structure;
    let mut rows = Vec::with_capacity(m.k * m.l * report.dim_names.len() * grid.len());
    for k in 0..m.k {
        for l in 0..m.l {
            for (j, name) in report.dim_names.iter().enumerate() {
                let (lo, hi) = curves.band(k, l, j);
                for (g, t) in grid.iter().enumerate() {
                    rows.push(vec![
                        fmt_f64(*t),
                        (k + 1).to_string(),
                        (l + 1).to_string(),
                        name.clone(),
                        fmt_f64(curves.mean_curves[k][j][g]),
                        fmt_f64(lo[g]),
                        fmt_f64(hi[g]),
                    ]);
                }
            }
        }
    }
    rows
}

pub fn run(args: &FitArgs) -> Result<()> {
    let mut config = effective_config(args)?;
    let out = config.output_dir(args.out.as_deref())?;
    config.output_dir = None;
    let archive = Archive::open(&args.manifest)?;
    let (report, curves, diag) = fit_archive(&archive, &config)?;

    write_json(&out.join("fit.json"), &report)?;
    let (header, rows) = posterior_rows(&report);
    write_csv(&out.join("posteriors.csv"), &header, &rows)?;
    write_csv(
        &out.join("curves.csv"),
        &strings(["t", "cluster_k", "cluster_l", "dim", "mean", "lo", "hi"]),
        &curve_rows(&curves, &report),
    )?;
    let pattern_rows: Vec<Vec<String>> = report
        .pattern_summary
        .iter()
        .map(|s| {
            vec![
                s.cluster.to_string(),
                s.dim.clone(),
                fmt_f64(s.curve_std),
                fmt_f64(s.jerk_cost),
            ]
        })
        .collect();
    write_csv(
        &out.join("summary_pattern.csv"),
        &strings(["cluster", "dim", "curve_std", "jerk_cost"]),
        &pattern_rows,
    )?;
    let dispersion_rows: Vec<Vec<String>> = report
        .dispersion_summary
        .iter()
        .map(|s| {
            vec![
                s.cluster.to_string(),
                s.dim.clone(),
                fmt_f64(s.variance_std),
                fmt_f64(s.sd_std),
            ]
        })
        .collect();
    write_csv(
        &out.join("summary_dispersion.csv"),
        &strings(["cluster", "dim", "variance_std", "sd_std"]),
        &dispersion_rows,
    )?;
    write_json(&out.join("diagnostics.json"), &diag)?;
    eprintln!(
        "selected K={} L={} (penalized log-likelihood {})",
        report.fit.structure.k,
        report.fit.structure.l,
        fmt_f64(report.fit.penalized)
    );
    Ok(())
}
