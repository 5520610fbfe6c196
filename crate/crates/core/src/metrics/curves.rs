use serde::{Deserialize, Serialize};

use crate::basis::FourierBasis;
use crate::mixture::{MixtureParameters, ModelStructure};
use crate::scalar::Scalar;

pub const DEFAULT_GRID_SIZE: usize = 1024;

/// Cluster curves sampled at `t = g / grid_size` on a unit period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedCurves {
    pub grid_size: usize,
    /// `mean_curves[k][j][g]`
    pub mean_curves: Vec<Vec<Vec<f64>>>,
    /// `ν̂ᵀΠ(t)` before clamping, `[l][j][g]`; may be negative.
    pub dispersion_squared: Vec<Vec<Vec<f64>>>,
    /// `√max(0, ν̂ᵀΠ(t))`, `[l][j][g]`
    pub dispersion_curves: Vec<Vec<Vec<f64>>>,
}

impl ReconstructedCurves {
    pub fn grid(&self) -> Vec<f64> {
        (0..self.grid_size)
            .map(|g| g as f64 / self.grid_size as f64)
            .collect()
    }

    /// Lower and upper two-standard-deviation band for pattern `k`, dispersion `l`, dimension `j`.
    pub fn band(&self, k: usize, l: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
        let mean = &self.mean_curves[k][j];
        let sd = &self.dispersion_curves[l][j];
        mean.iter()
            .zip(sd)
            .map(|(m, s)| (m - 2.0 * s, m + 2.0 * s))
            .unzip()
    }
}

fn sample<S: Scalar>(coefficients: &[S], grid_size: usize) -> Vec<f64> {
    let degree =
        FourierBasis::degree_for_size(coefficients.len()).expect("validated coefficient length");
    let basis = FourierBasis {
        degree,
        period: 1.0,
    };
    let c: Vec<f64> = coefficients.iter().map(|v| v.as_f64()).collect();
    (0..grid_size)
        .map(|g| basis.reconstruct(&c, g as f64 / grid_size as f64))
        .collect()
}

pub fn reconstruct<S: Scalar>(
    theta: &MixtureParameters<S>,
    m: &ModelStructure,
    grid_size: usize,
) -> ReconstructedCurves {
    let dims = m.n_dims();
    let mean_curves = (0..m.k)
        .map(|k| {
            (0..dims)
                .map(|j| sample(&theta.alpha[j].component(k).mean, grid_size))
                .collect()
        })
        .collect();
    let dispersion_squared: Vec<Vec<Vec<f64>>> = (0..m.l)
        .map(|l| {
            (0..dims)
                .map(|j| sample(&theta.beta[j].component(l).mean, grid_size))
                .collect()
        })
        .collect();
    let dispersion_curves = dispersion_squared
        .iter()
        .map(|per_dim| {
            per_dim
                .iter()
                .map(|c| c.iter().map(|v| v.max(0.0).sqrt()).collect())
                .collect()
        })
        .collect();
    ReconstructedCurves {
        grid_size,
        mean_curves,
        dispersion_squared,
        dispersion_curves,
    }
}

/// Root mean squared deviation of a sampled curve from its grid mean.
pub fn curve_std(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Exact counterpart of [`curve_std`] for a curve given by Fourier coefficients.
pub fn coefficient_std(coefficients: &[f64]) -> f64 {
    (coefficients.iter().skip(1).map(|c| c * c).sum::<f64>() / 2.0).sqrt()
}

/// `∫₀^β X′(t)² dt` for `X = c · ψ`; for a unit period this is the usual jerk cost of the curve.
pub fn jerk_cost(coefficients: &[f64], basis: &FourierBasis) -> f64 {
    let tau = std::f64::consts::TAU;
    coefficients
        .iter()
        .skip(1)
        .collect::<Vec<_>>()
        .chunks(2)
        .enumerate()
        .map(|(i, ab)| {
            let h = (i + 1) as f64;
            let power: f64 = ab.iter().map(|c| *c * *c).sum();
            (tau * h).powi(2) * power / 2.0
        })
        .sum::<f64>()
        / basis.period
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{DiagGaussian, DimParams};

    fn theta(mu: Vec<f64>, nu: Vec<f64>) -> (MixtureParameters<f64>, ModelStructure) {
        let (gs, rs) = (mu.len(), nu.len());
        let m = ModelStructure::new(1, 1, vec![true], vec![true], vec![gs], vec![rs]).unwrap();
        let theta = MixtureParameters {
            pi: vec![vec![1.0]],
            alpha: vec![DimParams::PerComponent(vec![DiagGaussian::new(
                mu,
                vec![1.0; gs],
            )
            .unwrap()])],
            beta: vec![DimParams::PerComponent(vec![DiagGaussian::new(
                nu,
                vec![1.0; rs],
            )
            .unwrap()])],
        };
        (theta, m)
    }

    #[test]
    fn constant_curves_and_band() {
        let (t, m) = theta(vec![2.5, 0.0, 0.0], vec![4.0, 0.0, 0.0]);
        let r = reconstruct(&t, &m, 16);
        assert!(r.mean_curves[0][0].iter().all(|&v| (v - 2.5).abs() < 1e-12));
        assert!(r.dispersion_curves[0][0]
            .iter()
            .all(|&v| (v - 2.0).abs() < 1e-12));
        let (lo, hi) = r.band(0, 0, 0);
        assert!(lo.iter().zip(&hi).all(|(l, h)| (h - l - 8.0).abs() < 1e-12));
    }

    #[test]
    fn negative_dispersion_is_clamped() {
        let (t, m) = theta(vec![1.0, 0.0, 0.0], vec![0.5, 1.0, 0.0]);
        let r = reconstruct(&t, &m, 1000);
        for (g, t) in r.grid().into_iter().enumerate() {
            let raw = 0.5 + (std::f64::consts::TAU * t).cos();
            assert!((r.dispersion_squared[0][0][g] - raw).abs() < 1e-12);
            // cos(2πt) < -1/2 exactly on (1/3, 2/3)
            let inside = t > 1.0 / 3.0 + 1e-9 && t < 2.0 / 3.0 - 1e-9;
            if inside {
                assert_eq!(r.dispersion_curves[0][0][g], 0.0);
                let (lo, hi) = r.band(0, 0, 0);
                assert_eq!(lo[g], hi[g]);
            } else if t < 1.0 / 3.0 - 1e-9 || t > 2.0 / 3.0 + 1e-9 {
                assert!(r.dispersion_curves[0][0][g] > 0.0);
            }
        }
    }

    #[test]
    fn grid_point_zero_matches_basis_evaluation() {
        let mu = vec![0.3, -1.2, 0.8, 0.05, 0.4];
        let (t, m) = theta(mu.clone(), vec![1.0, 0.0, 0.0]);
        let r = reconstruct(&t, &m, 64);
        let direct = FourierBasis::new(2, 1.0).unwrap().reconstruct(&mu, 0.0);
        assert!((r.mean_curves[0][0][0] - direct).abs() < 1e-14);
    }

    #[test]
    fn standard_deviations() {
        assert_eq!(curve_std(&[3.0; 10]), 0.0);
        let n = 10_000;
        let grid = (0..n).map(|g| g as f64 / n as f64);
        let sine: Vec<f64> = grid
            .clone()
            .map(|t| (std::f64::consts::TAU * t).sin())
            .collect();
        assert!((curve_std(&sine) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
        let mixed: Vec<f64> = grid
            .map(|t| {
                3.0 * (std::f64::consts::TAU * t).cos() - (2.0 * std::f64::consts::TAU * t).sin()
            })
            .collect();
        assert!((curve_std(&mixed) - 5f64.sqrt()).abs() < 1e-3);
        assert!((coefficient_std(&[7.0, 3.0, 0.0, 0.0, -1.0]) - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn jerk_cost_examples() {
        let basis = FourierBasis::new(1, 1.0).unwrap();
        assert_eq!(jerk_cost(&[4.0, 0.0, 0.0], &basis), 0.0);
        let pi = std::f64::consts::PI;
        assert!((jerk_cost(&[0.0, 0.0, 1.0], &basis) - 2.0 * pi * pi).abs() < 1e-12);
    }
}
