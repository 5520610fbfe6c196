use std::path::PathBuf;

use clap::Args;
use funbipart::simulate::{dim_names, generate, SimDesign, SAMPLE_RATE_HZ};
use serde::{Deserialize, Serialize};

use super::{file_stems, parse_ratio};
use crate::error::{CliError, Result};
use crate::formats::{
    config_hash, strings, write_csv, write_json, write_series_csv, Manifest, Stage, SubjectEntry,
    MANIFEST_FILE, MANIFEST_VERSION,
};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    /// Off-diagonal mixing mass in [0, 1/9]; fractions such as 1/9 are accepted.
    #[arg(long, value_parser = parse_ratio)]
    pub r: f64,
    /// Number of irrelevant dimensions.
    #[arg(long)]
    pub s: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_periods: Option<usize>,
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long)]
    pub scale_irrelevant_z: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub design: SimDesign,
    /// Fraction of frames whose variance signal was clamped at zero.
    pub clamp_rate: f64,
}

pub fn design_from(args: &SimulateArgs) -> Result<SimDesign> {
    let mut design = SimDesign::new(args.n, args.r, args.s, args.seed);
    if let Some(p) = args.n_periods {
        design.n_periods = p;
    }
    if let Some(p) = args.period {
        design.period = p;
    }
    design.scale_irrelevant_z = args.scale_irrelevant_z;
    design
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(design)
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let design = design_from(args)?;
    let sample = generate(&design)?;
    let out = &args.out;
    let names = dim_names(design.n_dims());
    let stems = file_stems(sample.series.iter().map(|s| s.subject_id.as_str()));
    let mut subjects = Vec::with_capacity(design.n);
    let mut truth = Vec::with_capacity(design.n);
    for (i, (series, stem)) in sample.series.iter().zip(&stems).enumerate() {
        let csv_path = format!("aligned/{stem}.csv");
        write_series_csv(&out.join(&csv_path), series)?;
        subjects.push(SubjectEntry {
            id: series.subject_id.clone(),
            csv_path,
            covariates: Default::default(),
            period_frames: Some(design.period),
        });
        truth.push(vec![
            series.subject_id.clone(),
            (sample.true_v[i] + 1).to_string(),
            (sample.true_w[i] + 1).to_string(),
        ]);
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION.to_owned(),
        sample_rate_hz: SAMPLE_RATE_HZ,
        alignment_dim: names[0].clone(),
        dim_names: names,
        stage: Stage::Aligned,
        subjects,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    write_csv(
        &out.join("truth.csv"),
        &strings(["subject_id", "v", "w"]),
        &truth,
    )?;
    write_json(
        &out.join("design.json"),
        &DesignFile {
            format: "funbipart.simulate/1".to_owned(),
            config_hash: config_hash(&design),
            seed: design.seed,
            design: design.clone(),
            clamp_rate: sample.clamp_rate,
        },
    )?;
    Ok(())
}
