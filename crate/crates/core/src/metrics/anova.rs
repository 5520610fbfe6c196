use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df1: usize,
    pub df2: usize,
    pub p: f64,
    pub eta_squared: f64,
    /// Set when the within-group variation is zero but the between-group one is not.
    pub infinite_f: bool,
}

/// One-way analysis of variance of `values` across `groups`.
pub fn anova_f<L: Ord>(values: &[f64], groups: &[L]) -> Result<AnovaResult> {
    if values.len() != groups.len() {
        return Err(Error::InvalidArgument(
            "values and groups differ in length".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("values must be finite".into()));
    }
    let mut by_group: BTreeMap<&L, Vec<f64>> = BTreeMap::new();
    for (v, g) in values.iter().zip(groups) {
        by_group.entry(g).or_default().push(*v);
    }
    let k = by_group.len();
    let n = values.len();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "ANOVA needs at least two groups".into(),
        ));
    }
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "{n} observations in {k} groups leave no residual degrees of freedom"
        )));
    }
    let grand = values.iter().sum::<f64>() / n as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    for vs in by_group.values() {
        let m = vs.iter().sum::<f64>() / vs.len() as f64;
        between += vs.len() as f64 * (m - grand).powi(2);
        within += vs.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let total = between + within;
    let (df1, df2) = (k - 1, n - k);
    // exact zeros up to rounding of the group means
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max).powi(2) * n as f64;
    let negligible = |x: f64| x <= 1e-28 * scale;
    if negligible(total) {
        return Err(Error::UndefinedVariance(
            "all observations are equal".into(),
        ));
    }
    if negligible(within) {
        return Ok(AnovaResult {
            f: f64::INFINITY,
            df1,
            df2,
            p: 0.0,
            eta_squared: 1.0,
            infinite_f: true,
        });
    }
    let f = (between / df1 as f64) / (within / df2 as f64);
    let dist = FisherSnedecor::new(df1 as f64, df2 as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(AnovaResult {
        f,
        df1,
        df2,
        p: dist.sf(f),
        eta_squared: between / total,
        infinite_f: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_one_way_anova() {
        // scipy.stats.f_oneway on the same three groups
        let g1 = [1.2, 2.3, 1.9, 2.8, 2.2, 1.7];
        let g2 = [3.1, 2.9, 3.8, 3.3, 2.7];
        let g3 = [2.0, 2.5, 1.6, 2.2, 2.9, 3.0, 2.4];
        let mut values = Vec::new();
        let mut groups = Vec::new();
        for (label, g) in [(1, &g1[..]), (2, &g2[..]), (3, &g3[..])] {
            values.extend_from_slice(g);
            groups.extend(std::iter::repeat_n(label, g.len()));
        }
        let r = anova_f(&values, &groups).unwrap();
        assert!((r.f - 7.514_028_017_157_594).abs() < 1e-8);
        assert!((r.p - 0.005_485_677_988_927_86).abs() < 1e-8);
        assert_eq!((r.df1, r.df2), (2, 15));
        assert!(r.eta_squared > 0.0 && r.eta_squared < 1.0);
    }

    #[test]
    fn degenerate_cases() {
        let r = anova_f(&[1.0, 1.0, 2.0, 2.0], &["a", "a", "b", "b"]).unwrap();
        assert!(r.infinite_f && r.f.is_infinite() && r.p == 0.0);
        assert!(matches!(
            anova_f(&[3.0; 4], &[1, 1, 2, 2]),
            Err(Error::UndefinedVariance(_))
        ));
        assert!(matches!(
            anova_f(&[1.0, 2.0, 3.0], &[1, 1, 1]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            anova_f(&[1.0, 2.0], &[1, 2]),
            Err(Error::InsufficientData(_))
        ));
    }
}
