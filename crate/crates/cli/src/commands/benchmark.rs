use std::path::PathBuf;

use clap::Args;
use funbipart::seed::splitmix64;
use funbipart::simulate::{run_benchmark, BenchmarkRow, Method, SimDesign};
use serde::{Deserialize, Serialize};

use super::parse_ratio;
use crate::error::{CliError, Result};
use crate::formats::{config_hash, fmt_f64, fmt_opt, strings, write_csv, write_json, RunConfig};

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    /// Mixing masses, comma separated; fractions such as 1/9 are accepted.
    #[arg(long, value_delimiter = ',', value_parser = parse_ratio, required = true)]
    pub r: Vec<f64>,
    /// Irrelevant dimension counts, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub s: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// "all" or a comma-separated list of method names.
    #[arg(long, default_value = "all")]
    pub methods: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run configuration; only its `em` block is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_periods: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFile {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_reps: usize,
    pub methods: Vec<Method>,
    pub designs: Vec<SimDesign>,
    pub em: funbipart::em::EmConfig,
    pub rows: Vec<BenchmarkRow>,
}

pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    if s.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let methods = s
        .split(',')
        .map(|m| m.trim().parse::<Method>())
        .collect::<funbipart::Result<Vec<_>>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if methods.is_empty() {
        return Err(CliError::Usage("no methods given".into()));
    }
    Ok(methods)
}

pub fn run(args: &BenchmarkArgs) -> Result<()> {
    let methods = parse_methods(&args.methods)?;
    let mut em = RunConfig::load(args.config.as_deref())?.em;
    // data and fits draw from separate master seeds
    em.seed = splitmix64(args.seed);
    em.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let mut designs = Vec::new();
    for &n in &args.n {
        for &r in &args.r {
            for &s in &args.s {
                let mut d = SimDesign::new(n, r, s, args.seed);
                if let Some(p) = args.n_periods {
                    d.n_periods = p;
                }
                d.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                designs.push(d);
            }
        }
    }
    let rows = run_benchmark(&designs, args.reps, &methods, &em)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.design_id.to_string(),
                r.n.to_string(),
                fmt_f64(r.r),
                r.s.to_string(),
                r.rep.to_string(),
                r.method.name().to_owned(),
                fmt_opt(r.ari_v),
                fmt_opt(r.ari_w),
            ]
        })
        .collect();
    write_csv(
        &args.out.join("benchmark.csv"),
        &strings([
            "design_id",
            "n",
            "r",
            "s",
            "rep",
            "method",
            "ari_v",
            "ari_w",
        ]),
        &table,
    )?;
    let sidecar = BenchmarkFile {
        format: "funbipart.benchmark/1".to_owned(),
        config_hash: config_hash(&(&designs, &em, &methods, args.reps)),
        seed: args.seed,
        n_reps: args.reps,
        methods,
        designs,
        em,
        rows,
    };
    write_json(&args.out.join("benchmark.json"), &sidecar)?;
    Ok(())
}
