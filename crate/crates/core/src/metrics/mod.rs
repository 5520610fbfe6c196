//! Partition agreement, association tests, curve summaries and model diagnostics.

mod agreement;
mod anova;
mod curves;
mod diagnostics;
mod shapiro;

pub use agreement::{
    adjusted_rand_index, chi_squared_independence, ChiSquaredTest, ContingencyTable,
};
pub use anova::{anova_f, AnovaResult};
pub use curves::{
    coefficient_std, curve_std, jerk_cost, reconstruct, ReconstructedCurves, DEFAULT_GRID_SIZE,
};
pub use diagnostics::{
    diagnostics, pearson_test, CorrelationRecord, DiagnosticsReport, FamilySummary,
    NormalityRecord, Partition, SkippedTest,
};
pub use shapiro::{shapiro_wilk, ShapiroWilk};
