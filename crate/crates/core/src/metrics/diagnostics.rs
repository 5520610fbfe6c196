//! Per-cluster normality and cross-dimension correlation checks of the
//! Gaussian model assumptions, with Bonferroni control per test family.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::shapiro::{self, shapiro_wilk};
use crate::basis::CoefficientPair;
use crate::error::{Error, Result};
use crate::mixture::FuzzyPartition;
use crate::scalar::Scalar;

pub const MIN_NORMALITY_SIZE: usize = 3;
pub const MIN_CORRELATION_SIZE: usize = 4;

/// Which coefficients are tested: signal coefficients within pattern
/// clusters, residual coefficients within dispersion clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Pattern,
    Dispersion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityRecord {
    pub partition: Partition,
    pub cluster: usize,
    pub dim: usize,
    pub coefficient: usize,
    pub n: usize,
    pub w: f64,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRecord {
    pub partition: Partition,
    pub cluster: usize,
    pub dim_a: usize,
    pub coefficient_a: usize,
    pub dim_b: usize,
    pub coefficient_b: usize,
    pub n: usize,
    pub r: f64,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTest {
    pub family: String,
    pub partition: Partition,
    pub cluster: usize,
    pub detail: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub n_tests: usize,
    /// Per-test level after Bonferroni correction.
    pub adjusted_level: f64,
    pub n_rejected: usize,
    pub fraction_rejected: f64,
    pub n_rejected_unadjusted: usize,
    pub fraction_rejected_unadjusted: f64,
}

impl FamilySummary {
    fn new(p_values: &[f64], nominal_level: f64) -> Self {
        let n_tests = p_values.len();
        let adjusted_level = if n_tests == 0 {
            nominal_level
        } else {
            nominal_level / n_tests as f64
        };
        let n_rejected = p_values.iter().filter(|&&p| p < adjusted_level).count();
        let n_rejected_unadjusted = p_values.iter().filter(|&&p| p < nominal_level).count();
        let frac = |c: usize| {
            if n_tests == 0 {
                0.0
            } else {
                c as f64 / n_tests as f64
            }
        };
        Self {
            n_tests,
            adjusted_level,
            n_rejected,
            fraction_rejected: frac(n_rejected),
            n_rejected_unadjusted,
            fraction_rejected_unadjusted: frac(n_rejected_unadjusted),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub nominal_level: f64,
    pub normality: Vec<NormalityRecord>,
    pub correlation: Vec<CorrelationRecord>,
    pub normality_summary: FamilySummary,
    pub correlation_summary: FamilySummary,
    pub skipped: Vec<SkippedTest>,
}

/// Pearson correlation and its two-sided p-value from the t distribution with n-2 df.
pub fn pearson_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("samples differ in length".into()));
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "{n} pairs cannot be tested"
        )));
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / n as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedVariance(
            "a constant sample has no correlation".into(),
        ));
    }
    let r = (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    if r.abs() == 1.0 {
        return Ok((r, 0.0));
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((r, 2.0 * dist.sf(t.abs())))
}

struct Group {
    partition: Partition,
    cluster: usize,
    /// `columns[dim][coefficient][member]`
    columns: Vec<Vec<Vec<f64>>>,
}

fn groups<S: Scalar>(
    data: &[CoefficientPair<S>],
    labels: &[usize],
    clusters: usize,
    partition: Partition,
) -> Vec<Group> {
    (0..clusters)
        .map(|cluster| {
            let members: Vec<&CoefficientPair<S>> = data
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == cluster)
                .map(|(p, _)| p)
                .collect();
            let blocks = |p: &CoefficientPair<S>| match partition {
                Partition::Pattern => p.y.clone(),
                Partition::Dispersion => p.z.clone(),
            };
            let shape = data.first().map(blocks).unwrap_or_default();
            let columns = shape
                .iter()
                .enumerate()
                .map(|(d, block)| {
                    (0..block.len())
                        .map(|c| {
                            members
                                .iter()
                                .map(|p| match partition {
                                    Partition::Pattern => p.y[d][c].as_f64(),
                                    Partition::Dispersion => p.z[d][c].as_f64(),
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            Group {
                partition,
                cluster,
                columns,
            }
        })
        .collect()
}

/// Runs every normality and correlation test on the hard (MAP) clusters of `fuzzy`.
pub fn diagnostics<S: Scalar>(
    data: &[CoefficientPair<S>],
    fuzzy: &FuzzyPartition<S>,
    nominal_level: f64,
) -> Result<DiagnosticsReport> {
    if data.len() != fuzzy.n {
        return Err(Error::InvalidArgument(
            "partition and data sizes differ".into(),
        ));
    }
    if !(nominal_level > 0.0 && nominal_level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "nominal level must be in (0,1), got {nominal_level}"
        )));
    }
    let (v, w) = fuzzy.hard_labels();
    let mut all = groups(data, &v, fuzzy.k, Partition::Pattern);
    all.extend(groups(data, &w, fuzzy.l, Partition::Dispersion));

    let mut normality = Vec::new();
    let mut correlation = Vec::new();
    let mut skipped = Vec::new();
    let skip = |family: &str, g: &Group, detail: String, reason: String| SkippedTest {
        family: family.into(),
        partition: g.partition,
        cluster: g.cluster,
        detail,
        reason,
    };

    for g in &all {
        let size = g
            .columns
            .first()
            .and_then(|d| d.first())
            .map_or(0, Vec::len);
        if size < MIN_NORMALITY_SIZE {
            skipped.push(skip(
                "normality",
                g,
                "all".into(),
                format!("cluster has {size} members, needs {MIN_NORMALITY_SIZE}"),
            ));
        } else if size > shapiro::MAX_N {
            skipped.push(skip(
                "normality",
                g,
                "all".into(),
                format!("cluster has {size} members, above {}", shapiro::MAX_N),
            ));
        } else {
            for (dim, coefs) in g.columns.iter().enumerate() {
                for (coefficient, x) in coefs.iter().enumerate() {
                    match shapiro_wilk(x) {
                        Ok(r) => normality.push(NormalityRecord {
                            partition: g.partition,
                            cluster: g.cluster,
                            dim,
                            coefficient,
                            n: size,
                            w: r.w,
                            p_value: r.p_value,
                            reject: false,
                        }),
                        Err(e) => skipped.push(skip(
                            "normality",
                            g,
                            format!("dim {dim} coefficient {coefficient}"),
                            e.to_string(),
                        )),
                    }
                }
            }
        }

        if size < MIN_CORRELATION_SIZE {
            skipped.push(skip(
                "correlation",
                g,
                "all".into(),
                format!("cluster has {size} members, needs {MIN_CORRELATION_SIZE}"),
            ));
            continue;
        }
        for dim_a in 0..g.columns.len() {
            for dim_b in dim_a + 1..g.columns.len() {
                for (coefficient_a, xa) in g.columns[dim_a].iter().enumerate() {
                    for (coefficient_b, xb) in g.columns[dim_b].iter().enumerate() {
                        match pearson_test(xa, xb) {
                            Ok((r, p_value)) => correlation.push(CorrelationRecord {
                                partition: g.partition,
                                cluster: g.cluster,
                                dim_a,
                                coefficient_a,
                                dim_b,
                                coefficient_b,
                                n: size,
                                r,
                                p_value,
                                reject: false,
                            }),
                            Err(e) => skipped.push(skip(
                                "correlation",
                                g,
                                format!("dims {dim_a}/{dim_b} coefficients {coefficient_a}/{coefficient_b}"),
                                e.to_string(),
                            )),
                        }
                    }
                }
            }
        }
    }

    let normality_summary = FamilySummary::new(
        &normality.iter().map(|r| r.p_value).collect::<Vec<_>>(),
        nominal_level,
    );
    for r in &mut normality {
        r.reject = r.p_value < normality_summary.adjusted_level;
    }
    let correlation_summary = FamilySummary::new(
        &correlation.iter().map(|r| r.p_value).collect::<Vec<_>>(),
        nominal_level,
    );
    for r in &mut correlation {
        r.reject = r.p_value < correlation_summary.adjusted_level;
    }
    Ok(DiagnosticsReport {
        nominal_level,
        normality,
        correlation,
        normality_summary,
        correlation_summary,
        skipped,
    })
}
