//! Fourier basis expansions of a signal and of its squared residuals, and
//! basis-degree selection by exact leave-one-out error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Qr;
use crate::scalar::Scalar;
use crate::signal::AlignedSeries;

/// Fourier basis `(1, cos(2πt/β), sin(2πt/β), …, cos(2πDt/β), sin(2πDt/β))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierBasis {
    pub degree: usize,
    pub period: f64,
}

impl FourierBasis {
    pub fn new(degree: usize, period: f64) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument(
                "Fourier degree must be at least 1".into(),
            ));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "period must be positive, got {period}"
            )));
        }
        Ok(Self { degree, period })
    }

    /// Number of basis functions, `2D + 1`.
    pub fn size(&self) -> usize {
        2 * self.degree + 1
    }

    /// Degree whose basis has `size` functions.
    pub fn degree_for_size(size: usize) -> Result<usize> {
        if size < 3 || size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "{size} is not a Fourier basis size"
            )));
        }
        Ok((size - 1) / 2)
    }

    pub fn evaluate<S: Scalar>(&self, t: S) -> Vec<S> {
        let mut out = Vec::with_capacity(self.size());
        out.push(S::one());
        let base = S::TAU() * t / S::lit(self.period);
        for h in 1..=self.degree {
            let angle = base * S::from_usize_lossy(h);
            out.push(angle.cos());
            out.push(angle.sin());
        }
        out
    }

    /// Column-major design matrix with rows `t = 0, …, n_frames - 1`.
    pub fn design_matrix<S: Scalar>(&self, n_frames: usize) -> Vec<S> {
        let g = self.size();
        let mut cols = vec![S::zero(); n_frames * g];
        for t in 0..n_frames {
            for (c, v) in self
                .evaluate(S::from_usize_lossy(t))
                .into_iter()
                .enumerate()
            {
                cols[c * n_frames + t] = v;
            }
        }
        cols
    }

    /// QR factorisation of the design; requires more frames than basis functions.
    pub fn factorize<S: Scalar>(&self, n_frames: usize) -> Result<Qr<S>> {
        if n_frames <= self.size() {
            return Err(Error::SingularDesign(format!(
                "{n_frames} frames cannot support {} basis functions",
                self.size()
            )));
        }
        Qr::new(n_frames, self.size(), self.design_matrix(n_frames))
    }

    /// `c · ψ(t)`.
    pub fn reconstruct<S: Scalar>(&self, coefficients: &[S], t: S) -> S {
        self.evaluate(t)
            .iter()
            .zip(coefficients)
            .map(|(&p, &c)| p * c)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit<S> {
    pub coefficients: Vec<S>,
    pub residuals: Vec<S>,
}

fn ols_with<S: Scalar>(qr: &Qr<S>, x: &[S]) -> OlsFit<S> {
    let (coefficients, residuals) = qr.solve_with_residuals(x);
    OlsFit {
        coefficients,
        residuals,
    }
}

/// Ordinary least-squares projection of `x` on the basis.
pub fn fit_ols<S: Scalar>(x: &[S], basis: &FourierBasis) -> Result<OlsFit<S>> {
    let qr = basis.factorize(x.len())?;
    Ok(ols_with(&qr, x))
}

/// Per-subject coefficients of the signal (`y`) and of its squared residuals (`z`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct CoefficientPair<S> {
    pub subject_id: String,
    pub y: Vec<Vec<S>>,
    pub z: Vec<Vec<S>>,
    pub period_frames: f64,
    pub signal_specs: Vec<FourierBasis>,
    pub residual_specs: Vec<FourierBasis>,
}

impl<S: Scalar> CoefficientPair<S> {
    pub fn n_dims(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.y.len();
        if j == 0
            || self.z.len() != j
            || self.signal_specs.len() != j
            || self.residual_specs.len() != j
        {
            return Err(Error::InvalidArgument(format!(
                "subject {}: inconsistent dimension counts",
                self.subject_id
            )));
        }
        for d in 0..j {
            if self.y[d].len() != self.signal_specs[d].size()
                || self.z[d].len() != self.residual_specs[d].size()
            {
                return Err(Error::InvalidArgument(format!(
                    "subject {}: coefficient length mismatch on dimension {d}",
                    self.subject_id
                )));
            }
        }
        if self
            .y
            .iter()
            .chain(&self.z)
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "subject {}: non-finite coefficient",
                self.subject_id
            )));
        }
        Ok(())
    }
}

/// Two-stage decomposition: OLS of each channel on its signal basis, then OLS
/// of the squared stage-one residuals on the residual basis. Both bases use
/// the subject's own period.
pub fn decompose_subject<S: Scalar>(
    aligned: &AlignedSeries<S>,
    signal_degrees: &[usize],
    residual_degrees: &[usize],
) -> Result<CoefficientPair<S>> {
    let series = &aligned.series;
    let j = series.n_dims();
    if signal_degrees.len() != j || residual_degrees.len() != j {
        return Err(Error::InvalidArgument(format!(
            "expected {j} signal and residual degrees, got {} and {}",
            signal_degrees.len(),
            residual_degrees.len()
        )));
    }
    let n = series.n_frames();
    let period = aligned.period_frames;
    let mut cache: BTreeMap<usize, (FourierBasis, Qr<S>)> = BTreeMap::new();
    let mut factor = |degree: usize| -> Result<()> {
        if !cache.contains_key(&degree) {
            let basis = FourierBasis::new(degree, period)?;
            let qr = basis.factorize(n)?;
            cache.insert(degree, (basis, qr));
        }
        Ok(())
    };
    for &d in signal_degrees.iter().chain(residual_degrees) {
        factor(d)?;
    }

    let mut pair = CoefficientPair {
        subject_id: series.subject_id.clone(),
        y: Vec::with_capacity(j),
        z: Vec::with_capacity(j),
        period_frames: period,
        signal_specs: Vec::with_capacity(j),
        residual_specs: Vec::with_capacity(j),
    };
    for (d, channel) in series.channels.iter().enumerate() {
        let (basis, qr) = &cache[&signal_degrees[d]];
        let stage1 = ols_with(qr, channel);
        let squared: Vec<S> = stage1.residuals.iter().map(|&e| e * e).collect();
        let (rbasis, rqr) = &cache[&residual_degrees[d]];
        let stage2 = rqr.solve(&squared);
        pair.y.push(stage1.coefficients);
        pair.z.push(stage2);
        pair.signal_specs.push(*basis);
        pair.residual_specs.push(*rbasis);
    }
    Ok(pair)
}

/// Exact leave-one-out squared error `Σ (eₜ / (1 − hₜₜ))²` of the OLS fit.
pub fn press<S: Scalar>(x: &[S], basis: &FourierBasis) -> Result<S> {
    let qr = basis.factorize(x.len())?;
    let fit = ols_with(&qr, x);
    Ok(fit
        .residuals
        .iter()
        .zip(qr.leverages())
        .map(|(&e, h)| {
            let r = e / (S::one() - h);
            r * r
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DegreeSelection<S> {
    pub best_degree: usize,
    pub candidates: Vec<usize>,
    pub press_scores: Vec<S>,
}

/// Picks the candidate degree with the smallest PRESS; near-ties go to the
/// smaller degree.
pub fn select_degree<S: Scalar>(
    x: &[S],
    period: f64,
    candidate_degrees: &[usize],
) -> Result<DegreeSelection<S>> {
    if candidate_degrees.is_empty() {
        return Err(Error::InvalidArgument("no candidate degrees".into()));
    }
    let press_scores = candidate_degrees
        .iter()
        .map(|&d| press(x, &FourierBasis::new(d, period)?))
        .collect::<Result<Vec<S>>>()?;
    let min = press_scores.iter().copied().fold(S::infinity(), S::min);
    let energy: S = x.iter().map(|&v| v * v).sum();
    let tol = (S::lit(1e-12) * min).max(S::epsilon() * S::epsilon() * S::lit(1e12) * energy);
    let best_degree = candidate_degrees
        .iter()
        .zip(&press_scores)
        .filter(|(_, &p)| p <= min + tol)
        .map(|(&d, _)| d)
        .min()
        .expect("at least one candidate attains the minimum");
    Ok(DegreeSelection {
        best_degree,
        candidates: candidate_degrees.to_vec(),
        press_scores,
    })
}

/// Most frequent value; ties go to the smaller one.
pub fn modal_degree(selected: &[usize]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &d in selected {
        *counts.entry(d).or_default() += 1;
    }
    let top = counts.values().copied().max()?;
    counts.into_iter().find(|&(_, c)| c == top).map(|(d, _)| d)
}

/// Per-dimension degrees shared by every subject: the modal LOOCV choice over
/// the reference subjects, first for the signal and then for the squared
/// residuals of the signal fit at the chosen degree.
pub fn select_common_degrees<S: Scalar>(
    reference: &[AlignedSeries<S>],
    signal_candidates: &[usize],
    residual_candidates: &[usize],
) -> Result<(Vec<usize>, Vec<usize>)> {
    let first = reference.first().ok_or_else(|| {
        Error::InvalidArgument("no reference subjects for degree selection".into())
    })?;
    let j = first.series.n_dims();
    let mut signal = Vec::with_capacity(j);
    let mut residual = Vec::with_capacity(j);
    for d in 0..j {
        let picks = reference
            .iter()
            .map(|a| {
                select_degree(&a.series.channels[d], a.period_frames, signal_candidates)
                    .map(|s| s.best_degree)
            })
            .collect::<Result<Vec<_>>>()?;
        let sd = modal_degree(&picks).expect("non-empty reference set");
        let picks = reference
            .iter()
            .map(|a| {
                let basis = FourierBasis::new(sd, a.period_frames)?;
                let fit = fit_ols(&a.series.channels[d], &basis)?;
                let squared: Vec<S> = fit.residuals.iter().map(|&e| e * e).collect();
                select_degree(&squared, a.period_frames, residual_candidates).map(|s| s.best_degree)
            })
            .collect::<Result<Vec<_>>>()?;
        signal.push(sd);
        residual.push(modal_degree(&picks).expect("non-empty reference set"));
    }
    Ok((signal, residual))
}
