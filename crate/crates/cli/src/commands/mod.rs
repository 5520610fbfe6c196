pub mod benchmark;
pub mod fit;
pub mod preprocess;
pub mod report;
pub mod simulate;

use std::collections::BTreeSet;

/// Short machine-readable tag for a core error.
pub fn error_kind(e: &funbipart::Error) -> &'static str {
    use funbipart::Error::*;
    match e {
        InvalidFrequency(_) => "invalid-frequency",
        InsufficientData(_) => "insufficient-data",
        NoPeriod => "no-period",
        SingularDesign(_) => "singular-design",
        InvalidArgument(_) => "invalid-argument",
        Degenerate(_) => "degenerate",
        FitFailed { .. } => "fit-failed",
        UndefinedVariance(_) => "undefined-variance",
    }
}

/// File stems made from subject ids: unsafe characters become `_`, clashes get a suffix.
pub fn file_stems<'a>(ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut used = BTreeSet::new();
    ids.into_iter()
        .map(|id| {
            let base: String = id
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            let base = if base.is_empty() || base.starts_with('.') {
                format!("s{base}")
            } else {
                base
            };
            let mut stem = base.clone();
            let mut k = 2;
            while !used.insert(stem.to_ascii_lowercase()) {
                stem = format!("{base}-{k}");
                k += 1;
            }
            stem
        })
        .collect()
}

/// Parses `0.05`, `1/9` and similar.
pub fn parse_ratio(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad number {s:?}"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad number {s:?}"))?;
            a / b
        }
        None => s.parse().map_err(|_| format!("bad number {s:?}"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("bad number {s:?}"))
    }
}
