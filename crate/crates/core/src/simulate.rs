//! Synthetic bi-partitioned data with known pattern and dispersion clusters,
//! and the four-method accuracy benchmark run on it.
//!
//! Simulation runs in `f64` only. Labels are zero-based throughout.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{decompose_subject, CoefficientPair, FourierBasis};
use crate::em::{run_em, EmConfig};
use crate::error::{Error, Result};
use crate::metrics::adjusted_rand_index;
use crate::mixture::{DiagGaussian, DimParams, MixtureParameters, ModelStructure};
use crate::seed::derive_seed;
use crate::signal::{AlignedSeries, MultivariateSeries};

pub const N_CLUSTERS: usize = 3;
pub const N_RELEVANT: usize = 3;
pub const DEGREE: usize = 2;
pub const SAMPLE_RATE_HZ: f64 = 50.0;
const SIZE: usize = 2 * DEGREE + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimDesign {
    pub n: usize,
    /// Off-diagonal mixing mass; `0` makes the partitions equal, `1/9` independent.
    pub r: f64,
    /// Number of irrelevant dimensions.
    pub s: usize,
    pub n_periods: usize,
    pub period: f64,
    pub delta: f64,
    pub seed: u64,
    /// Scales the irrelevant dispersion intercept by `delta` as well.
    pub scale_irrelevant_z: bool,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self {
            n: 100,
            r: 0.0,
            s: 0,
            n_periods: 20,
            period: 125.0,
            delta: 0.1 / (5.0f64 / 3.0).sqrt(),
            seed: 0,
            scale_irrelevant_z: false,
        }
    }
}

impl SimDesign {
    pub fn new(n: usize, r: f64, s: usize, seed: u64) -> Self {
        Self {
            n,
            r,
            s,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        mixing_table(self.r)?;
        if self.n == 0 || self.n_periods == 0 {
            return Err(Error::InvalidArgument(
                "n and n_periods must be positive".into(),
            ));
        }
        if !(self.period > 0.0
            && self.period.is_finite()
            && self.delta > 0.0
            && self.delta.is_finite())
        {
            return Err(Error::InvalidArgument(
                "period and delta must be positive".into(),
            ));
        }
        if self.n_frames() <= SIZE {
            return Err(Error::InvalidArgument(format!(
                "{} frames are too few",
                self.n_frames()
            )));
        }
        Ok(())
    }

    pub fn n_dims(&self) -> usize {
        N_RELEVANT + self.s
    }

    pub fn n_frames(&self) -> usize {
        (self.n_periods as f64 * self.period).round() as usize
    }

    fn basis(&self) -> FourierBasis {
        FourierBasis {
            degree: DEGREE,
            period: self.period,
        }
    }

    fn xi_sd(&self) -> f64 {
        self.delta * (5.0f64 / 3.0).sqrt()
    }

    /// Mean of the signal coefficients of dimension `j` given pattern label `k`.
    fn y_mean(&self, j: usize, k: usize) -> [f64; SIZE] {
        if j < N_RELEVANT {
            [(k + 1) as f64 * self.delta; SIZE]
        } else {
            [0.0; SIZE]
        }
    }

    /// Mean of the residual coefficients of dimension `j` given dispersion label `l`.
    fn z_mean(&self, j: usize, l: usize) -> [f64; SIZE] {
        let mut m = [0.0; SIZE];
        if j < N_RELEVANT {
            let scale = (l + 1) as f64 * self.delta;
            m = [scale; SIZE];
            m[0] = 3.0 * scale;
        } else {
            m[0] = if self.scale_irrelevant_z {
                2.0 * self.delta
            } else {
                2.0
            };
        }
        m
    }
}

/// `π(r)`: `1/3 − 2r` on the diagonal and `r` elsewhere.
pub fn mixing_table(r: f64) -> Result<[[f64; N_CLUSTERS]; N_CLUSTERS]> {
    if !(0.0..=1.0 / 9.0 + 1e-15).contains(&r) {
        return Err(Error::InvalidArgument(format!(
            "r must lie in [0, 1/9], got {r}"
        )));
    }
    let r = r.min(1.0 / 9.0);
    let mut t = [[r; N_CLUSTERS]; N_CLUSTERS];
    for (k, row) in t.iter_mut().enumerate() {
        row[k] = 1.0 / 3.0 - 2.0 * r;
    }
    Ok(t)
}

/// Generating parameters written as a fitted model, for scoring with the MAP rules.
pub fn true_model(design: &SimDesign) -> Result<(ModelStructure, MixtureParameters<f64>)> {
    design.validate()?;
    let j = design.n_dims();
    let relevant: Vec<bool> = (0..j).map(|d| d < N_RELEVANT).collect();
    let m = ModelStructure::new(
        N_CLUSTERS,
        N_CLUSTERS,
        relevant.clone(),
        relevant,
        vec![SIZE; j],
        vec![SIZE; j],
    )?;
    let var = vec![design.delta * design.delta; SIZE];
    let block = |mean: &dyn Fn(usize, usize) -> [f64; SIZE], d: usize| {
        let g = |c: usize| DiagGaussian::new(mean(d, c).to_vec(), var.clone());
        if d < N_RELEVANT {
            (0..N_CLUSTERS)
                .map(g)
                .collect::<Result<Vec<_>>>()
                .map(DimParams::PerComponent)
        } else {
            g(0).map(DimParams::Shared)
        }
    };
    let alpha = (0..j)
        .map(|d| block(&|d, k| design.y_mean(d, k), d))
        .collect::<Result<Vec<_>>>()?;
    let beta = (0..j)
        .map(|d| block(&|d, l| design.z_mean(d, l), d))
        .collect::<Result<Vec<_>>>()?;
    let pi = mixing_table(design.r)?
        .iter()
        .map(|row| row.to_vec())
        .collect();
    let theta = MixtureParameters { pi, alpha, beta };
    theta.validate(&m)?;
    Ok((m, theta))
}

/// Draws `(V_i, W_i)` and the subject's true coefficients.
pub fn draw_coefficients(
    design: &SimDesign,
    subject_id: String,
    rng: &mut impl Rng,
) -> Result<(usize, usize, CoefficientPair<f64>)> {
    let table = mixing_table(design.r)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut cell = N_CLUSTERS * N_CLUSTERS - 1;
    for (idx, p) in table.iter().flatten().enumerate() {
        acc += p;
        if u < acc {
            cell = idx;
            break;
        }
    }
    let (v, w) = (cell / N_CLUSTERS, cell % N_CLUSTERS);
    let mut gaussian = |mean: [f64; SIZE]| -> Vec<f64> {
        mean.iter()
            .map(|m| m + design.delta * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let j = design.n_dims();
    let mut y = Vec::with_capacity(j);
    let mut z = Vec::with_capacity(j);
    for d in 0..j {
        y.push(gaussian(design.y_mean(d, v)));
        z.push(gaussian(design.z_mean(d, w)));
    }
    let basis = design.basis();
    let pair = CoefficientPair {
        subject_id,
        y,
        z,
        period_frames: design.period,
        signal_specs: vec![basis; j],
        residual_specs: vec![basis; j],
    };
    Ok((v, w, pair))
}

/// One channel: mean `y·ψ(t)` plus a Rademacher-signed magnitude
/// `√max(0, z·ψ(t) + ξ(t))`. Returns the samples and the number of clamped frames.
pub fn synthesize_channel(
    y: &[f64],
    z: &[f64],
    psi: &[Vec<f64>],
    xi_sd: f64,
    rng: &mut impl Rng,
) -> (Vec<f64>, usize) {
    let dot = |c: &[f64], p: &[f64]| c.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
    let mut clamped = 0;
    let x = psi
        .iter()
        .map(|p| {
            let xi: f64 = if xi_sd > 0.0 {
                xi_sd * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            let mut s2 = dot(z, p) + xi;
            if s2 < 0.0 {
                s2 = 0.0;
                clamped += 1;
            }
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            dot(y, p) + sign * s2.sqrt()
        })
        .collect();
    (x, clamped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSample {
    pub series: Vec<MultivariateSeries<f64>>,
    pub true_v: Vec<usize>,
    pub true_w: Vec<usize>,
    pub true_coeffs: Vec<CoefficientPair<f64>>,
    /// Fraction of frames whose variance signal was clamped at zero.
    pub clamp_rate: f64,
}

pub fn dim_names(j: usize) -> Vec<String> {
    (1..=j).map(|d| format!("x{d}")).collect()
}

/// Draws a sample; subject `i` uses its own stream keyed by `(seed, i)`.
pub fn generate(design: &SimDesign) -> Result<SimSample> {
    design.validate()?;
    let basis = design.basis();
    let frames = design.n_frames();
    let psi: Vec<Vec<f64>> = (0..frames).map(|t| basis.evaluate(t as f64)).collect();
    let names = dim_names(design.n_dims());
    let subjects = (0..design.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(design.seed, &[i as u64]));
            let id = format!("sim{:05}", i + 1);
            let (v, w, pair) = draw_coefficients(design, id.clone(), &mut rng)?;
            let mut clamped = 0;
            let channels = pair
                .y
                .iter()
                .zip(&pair.z)
                .map(|(y, z)| {
                    let (x, c) = synthesize_channel(y, z, &psi, design.xi_sd(), &mut rng);
                    clamped += c;
                    x
                })
                .collect();
            let series = MultivariateSeries::new(id, channels, SAMPLE_RATE_HZ, names.clone())?;
            Ok((series, v, w, pair, clamped))
        })
        .collect::<Result<Vec<_>>>()?;
    let total = (design.n * design.n_dims() * frames) as f64;
    let mut sample = SimSample {
        series: Vec::with_capacity(design.n),
        true_v: Vec::with_capacity(design.n),
        true_w: Vec::with_capacity(design.n),
        true_coeffs: Vec::with_capacity(design.n),
        clamp_rate: 0.0,
    };
    let mut clamped = 0;
    for (series, v, w, pair, c) in subjects {
        sample.series.push(series);
        sample.true_v.push(v);
        sample.true_w.push(w);
        sample.true_coeffs.push(pair);
        clamped += c;
    }
    sample.clamp_rate = clamped as f64 / total;
    Ok(sample)
}

/// Two-stage decomposition at the known period and degree.
pub fn decompose_sample(
    sample: &SimSample,
    design: &SimDesign,
) -> Result<Vec<CoefficientPair<f64>>> {
    let degrees = vec![DEGREE; design.n_dims()];
    sample
        .series
        .par_iter()
        .map(|s| {
            let aligned = AlignedSeries {
                series: s.clone(),
                period_frames: design.period,
                alignment_dim: 0,
            };
            decompose_subject(&aligned, &degrees, &degrees)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    SimultSelect,
    SimultNoSelect,
    IndptSelect,
    IndptNoSelect,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::SimultSelect,
        Method::SimultNoSelect,
        Method::IndptSelect,
        Method::IndptNoSelect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SimultSelect => "simult.selecTRUE",
            Method::SimultNoSelect => "simult.selecFALSE",
            Method::IndptSelect => "indpt.selecTRUE",
            Method::IndptNoSelect => "indpt.selecFALSE",
        }
    }

    pub fn joint(self) -> bool {
        matches!(self, Method::SimultSelect | Method::SimultNoSelect)
    }

    pub fn selects(self) -> bool {
        matches!(self, Method::SimultSelect | Method::IndptSelect)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

impl Serialize for Method {
    fn serialize<Ser: serde::Serializer>(
        &self,
        s: Ser,
    ) -> std::result::Result<Ser::Ok, Ser::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub design_id: usize,
    pub n: usize,
    pub r: f64,
    pub s: usize,
    pub rep: usize,
    pub method: Method,
    pub ari_v: Option<f64>,
    pub ari_w: Option<f64>,
    /// Why an ARI is missing, if one is.
    pub error: Option<String>,
}

/// Hard labels `(v, w)` of one method on one decomposed sample.
pub fn fit_method(
    pairs: &[CoefficientPair<f64>],
    method: Method,
    config: &EmConfig,
) -> (Option<Vec<usize>>, Option<Vec<usize>>, Option<String>) {
    let config = EmConfig {
        select_dimensions: method.selects(),
        ..config.clone()
    };
    if method.joint() {
        match run_em(pairs, N_CLUSTERS, N_CLUSTERS, &config) {
            Ok(fit) => (Some(fit.v_hat), Some(fit.w_hat), None),
            Err(e) => (None, None, Some(e.to_string())),
        }
    } else {
        let mut errors = Vec::new();
        let mut labels = |k: usize, l: usize, pick_v: bool| match run_em(pairs, k, l, &config) {
            Ok(fit) => Some(if pick_v { fit.v_hat } else { fit.w_hat }),
            Err(e) => {
                errors.push(e.to_string());
                None
            }
        };
        let v = labels(N_CLUSTERS, 1, true);
        let w = labels(1, N_CLUSTERS, false);
        (v, w, (!errors.is_empty()).then(|| errors.join("; ")))
    }
}

/// Runs every design × replication × method; rows come out in that order.
///
/// Replication `rep` of design `d` draws its data with seed
/// `derive_seed(design.seed, [d, rep])` and fits with
/// `derive_seed(config.seed, [d, rep])`.
pub fn run_benchmark(
    designs: &[SimDesign],
    n_reps: usize,
    methods: &[Method],
    config: &EmConfig,
) -> Result<Vec<BenchmarkRow>> {
    if designs.is_empty() || n_reps == 0 || methods.is_empty() {
        return Err(Error::InvalidArgument(
            "benchmark needs designs, replications and methods".into(),
        ));
    }
    for d in designs {
        d.validate()?;
    }
    config.validate()?;
    let tasks: Vec<(usize, usize)> = (0..designs.len())
        .flat_map(|d| (0..n_reps).map(move |r| (d, r)))
        .collect();
    let rows = tasks
        .into_par_iter()
        .map(|(d, rep)| {
            let path = [d as u64, rep as u64];
            let design = SimDesign {
                seed: derive_seed(designs[d].seed, &path),
                ..designs[d].clone()
            };
            let fit_config = EmConfig {
                seed: derive_seed(config.seed, &path),
                ..config.clone()
            };
            let sample = generate(&design)?;
            let pairs = decompose_sample(&sample, &design)?;
            Ok(methods
                .iter()
                .map(|&method| {
                    let (v, w, error) = fit_method(&pairs, method, &fit_config);
                    let ari = |hat: Option<Vec<usize>>, truth: &[usize]| {
                        hat.and_then(|h| adjusted_rand_index(&h, truth).ok())
                    };
                    BenchmarkRow {
                        design_id: d,
                        n: design.n,
                        r: design.r,
                        s: design.s,
                        rep,
                        method,
                        ari_v: ari(v, &sample.true_v),
                        ari_w: ari(w, &sample.true_w),
                        error,
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixing_table_examples() {
        let t = mixing_table(1.0 / 9.0).unwrap();
        assert!(t.iter().flatten().all(|&p| (p - 1.0 / 9.0).abs() < 1e-15));
        let t = mixing_table(0.0).unwrap();
        assert_eq!(t[0], [1.0 / 3.0, 0.0, 0.0]);
        let t = mixing_table(0.05).unwrap();
        assert!((t[1][1] - (1.0 / 3.0 - 0.1)).abs() < 1e-15);
        assert!((t.iter().flatten().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(mixing_table(0.2).is_err());
        assert!(mixing_table(-0.01).is_err());
    }

    #[test]
    fn default_delta() {
        assert!((SimDesign::default().delta - 0.077_459_666_924_148_34).abs() < 1e-15);
        assert!((SimDesign::default().xi_sd() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_variance_profile_gives_exact_magnitudes() {
        let basis = FourierBasis::new(DEGREE, 125.0).unwrap();
        let psi: Vec<Vec<f64>> = (0..500).map(|t| basis.evaluate(t as f64)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, clamped) = synthesize_channel(
            &[0.0; SIZE],
            &[0.36, 0.0, 0.0, 0.0, 0.0],
            &psi,
            0.0,
            &mut rng,
        );
        assert_eq!(clamped, 0);
        assert!(x.iter().all(|v| (v.abs() - 0.6).abs() < 1e-15));
        let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((mean_sq - 0.36).abs() < 1e-12);
    }

    #[test]
    fn generate_shape_and_determinism() {
        let design = SimDesign::new(6, 0.05, 2, 7);
        let a = generate(&design).unwrap();
        assert_eq!(a.series.len(), 6);
        assert!(a
            .series
            .iter()
            .all(|s| s.n_dims() == 5 && s.n_frames() == 2500));
        assert_eq!(a, generate(&design).unwrap());
        assert_ne!(
            a.series[0],
            generate(&SimDesign { seed: 8, ..design }).unwrap().series[0]
        );
    }

    #[test]
    fn methods_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("simult".parse::<Method>().is_err());
    }
}
