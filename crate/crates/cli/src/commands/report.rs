use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use funbipart::metrics::{
    anova_f, chi_squared_independence, AnovaResult, ChiSquaredTest, ContingencyTable,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::formats::{config_hash, read_json, write_json, Archive};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// fit.json written by the fit command.
    #[arg(long)]
    pub fit: PathBuf,
    /// Manifest carrying the covariates; may be the archive that was fitted.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Covariate to relate to the partitions.
    #[arg(long)]
    pub covariate: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// The parts of a fit report that the analyses need.
#[derive(Debug, Clone, Deserialize)]
pub struct ReportInput {
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub seed: u64,
    pub subject_ids: Vec<String>,
    pub fit: LabelsInput,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LabelsInput {
    pub structure: StructureInput,
    pub v_hat: Vec<usize>,
    pub w_hat: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct StructureInput {
    pub k: usize,
    pub l: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome<T> {
    Done(T),
    Skipped { skipped: String, reason: String },
}

impl<T> Outcome<T> {
    fn from_core(r: funbipart::Result<T>) -> Self {
        match r {
            Ok(v) => Outcome::Done(v),
            Err(e) => Outcome::Skipped {
                skipped: super::error_kind(&e).to_owned(),
                reason: e.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub v: usize,
    pub w: usize,
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (n - 1 denominator).
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateAnalysis {
    pub name: String,
    pub n_used: usize,
    /// Subjects without a value for the covariate.
    pub missing: Vec<String>,
    pub anova: Outcome<AnovaResult>,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub format: String,
    pub fit_config_hash: String,
    pub config_hash: String,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    /// Rows are pattern clusters 1..K, columns dispersion clusters 1..L.
    pub contingency: ContingencyTable,
    pub chi_squared: Outcome<ChiSquaredTest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariate: Option<Outcome<CovariateAnalysis>>,
}

fn cell_summary(v: usize, w: usize, values: &[f64]) -> CellSummary {
    let n = values.len();
    let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
    let sd = mean
        .filter(|_| n > 1)
        .map(|m| (values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    CellSummary {
        v,
        w,
        n,
        mean,
        sd,
        min: values.iter().copied().reduce(f64::min),
        max: values.iter().copied().reduce(f64::max),
    }
}

fn covariate_analysis(
    input: &ReportInput,
    covariates: &BTreeMap<String, &BTreeMap<String, f64>>,
    name: &str,
) -> Outcome<CovariateAnalysis> {
    let (k, l) = (input.fit.structure.k, input.fit.structure.l);
    let mut values = Vec::new();
    let mut groups = Vec::new();
    let mut missing = Vec::new();
    let mut cells = vec![vec![Vec::new(); l]; k];
    for (i, id) in input.subject_ids.iter().enumerate() {
        match covariates.get(id).and_then(|c| c.get(name)) {
            Some(&x) if x.is_finite() => {
                let (v, w) = (input.fit.v_hat[i], input.fit.w_hat[i]);
                values.push(x);
                groups.push((v, w));
                cells[v][w].push(x);
            }
            _ => missing.push(id.clone()),
        }
    }
    if values.is_empty() {
        return Outcome::Skipped {
            skipped: "missing-covariate".into(),
            reason: format!("no subject has a value for {name:?}"),
        };
    }
    let cells = cells
        .iter()
        .enumerate()
        .flat_map(|(v, row)| {
            row.iter()
                .enumerate()
                .map(move |(w, xs)| cell_summary(v + 1, w + 1, xs))
        })
        .collect();
    Outcome::Done(CovariateAnalysis {
        name: name.to_owned(),
        n_used: values.len(),
        missing,
        anova: Outcome::from_core(anova_f(&values, &groups)),
        cells,
    })
}

pub fn analyse(
    input: &ReportInput,
    covariates: &BTreeMap<String, &BTreeMap<String, f64>>,
    covariate: Option<&str>,
) -> Result<Analysis> {
    let (k, l) = (input.fit.structure.k, input.fit.structure.l);
    let n = input.subject_ids.len();
    if input.fit.v_hat.len() != n || input.fit.w_hat.len() != n {
        return Err(CliError::Data("label and subject counts differ".into()));
    }
    if k == 0 || l == 0 {
        return Err(CliError::Data("fit has no clusters".into()));
    }
    let mut counts = vec![vec![0u64; l]; k];
    for (&v, &w) in input.fit.v_hat.iter().zip(&input.fit.w_hat) {
        if v >= k || w >= l {
            return Err(CliError::Data(format!("label ({v}, {w}) outside {k}x{l}")));
        }
        counts[v][w] += 1;
    }
    let contingency = ContingencyTable::from_counts(counts)?;
    let chi_squared = Outcome::from_core(chi_squared_independence(&contingency));
    let covariate = covariate.map(|name| covariate_analysis(input, covariates, name));
    Ok(Analysis {
        format: "funbipart.report/1".to_owned(),
        fit_config_hash: input.config_hash.clone(),
        config_hash: config_hash(&covariate_name(covariate.as_ref())),
        seed: input.seed,
        n,
        k,
        l,
        contingency,
        chi_squared,
        covariate,
    })
}

fn covariate_name(c: Option<&Outcome<CovariateAnalysis>>) -> Option<String> {
    match c? {
        Outcome::Done(a) => Some(a.name.clone()),
        Outcome::Skipped { .. } => None,
    }
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let input: ReportInput = read_json(&args.fit)?;
    let archive = Archive::open(&args.manifest)?;
    let covariates: BTreeMap<String, &BTreeMap<String, f64>> = archive
        .manifest
        .subjects
        .iter()
        .map(|s| (s.id.clone(), &s.covariates))
        .collect();
    let analysis = analyse(&input, &covariates, args.covariate.as_deref())?;
    for (what, skipped) in [
        (
            "chi-squared",
            matches!(analysis.chi_squared, Outcome::Skipped { .. }),
        ),
        (
            "covariate analysis",
            matches!(analysis.covariate, Some(Outcome::Skipped { .. })),
        ),
    ] {
        if skipped {
            eprintln!("notice: {what} skipped, see analysis.json");
        }
    }
    if let Some(Outcome::Done(c)) = &analysis.covariate {
        if let Outcome::Skipped { reason, .. } = &c.anova {
            eprintln!("notice: ANOVA skipped: {reason}");
        }
    }
    write_json(&args.out.join("analysis.json"), &analysis)
}
