//! Penalized EM with per-dimension relevance selection, multi-start driver
//! and (K, L) grid search.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::basis::CoefficientPair;
use crate::error::{Error, Result};
use crate::mixture::{
    bic_constant, canonicalize, DiagGaussian, DimParams, FuzzyPartition, MixtureParameters,
    ModelStructure, SubjectScores,
};
use crate::scalar::{argmax, Scalar};
use crate::seed::{derive_seed, fingerprint};

/// Penalty weight `c`: the BIC value `ln(n)/2` or a fixed number.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PenaltyConstant {
    #[default]
    Bic,
    Fixed(f64),
}

impl PenaltyConstant {
    pub fn value(&self, n: usize) -> f64 {
        match *self {
            PenaltyConstant::Bic => bic_constant(n),
            PenaltyConstant::Fixed(c) => c,
        }
    }
}

impl fmt::Display for PenaltyConstant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyConstant::Bic => f.write_str("bic-auto"),
            PenaltyConstant::Fixed(c) => write!(f, "{c}"),
        }
    }
}

impl std::str::FromStr for PenaltyConstant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bic" | "bic-auto" => Ok(PenaltyConstant::Bic),
            other => match other.parse::<f64>() {
                Ok(c) if c > 0.0 && c.is_finite() => Ok(PenaltyConstant::Fixed(c)),
                _ => Err(Error::InvalidArgument(format!(
                    "penalty constant must be \"bic\" or a positive number, got {other:?}"
                ))),
            },
        }
    }
}

impl Serialize for PenaltyConstant {
    fn serialize<Se: Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        match self {
            PenaltyConstant::Bic => s.serialize_str("bic-auto"),
            PenaltyConstant::Fixed(c) => s.serialize_f64(*c),
        }
    }
}

impl<'de> Deserialize<'de> for PenaltyConstant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(c) => format!("{c}").parse().map_err(serde::de::Error::custom),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub n_starts: usize,
    pub short_run_iter: usize,
    pub n_finalists: usize,
    pub seed: u64,
    pub c: PenaltyConstant,
    /// When false, Ω and Γ stay at every dimension.
    pub select_dimensions: bool,
    /// Fresh draws tried for a start whose chain loses a component.
    pub max_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-8,
            n_starts: 50,
            short_run_iter: 20,
            n_finalists: 5,
            seed: 0,
            c: PenaltyConstant::Bic,
            select_dimensions: true,
            max_restarts: 5,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0
            || self.n_starts == 0
            || self.short_run_iter == 0
            || self.n_finalists == 0
        {
            return Err(Error::InvalidArgument(
                "iteration and start counts must be positive".into(),
            ));
        }
        if self.n_finalists > self.n_starts {
            return Err(Error::InvalidArgument(
                "n_finalists cannot exceed n_starts".into(),
            ));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument("rel_tol must be positive".into()));
        }
        if let PenaltyConstant::Fixed(c) = self.c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "penalty constant must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Mass below which a row or column of `n_kℓ` counts as empty, as a fraction of n.
pub const EMPTY_COMPONENT_FRACTION: f64 = 1e-6;
/// Variance floor as a fraction of the pooled per-coordinate variance.
pub const VARIANCE_FLOOR_FRACTION: f64 = 1e-8;

/// Coefficient data prepared for fitting: sizes, variance floors, and the
/// all-subject ("irrelevant") Gaussian of every dimension, which does not
/// depend on the partition.
#[derive(Debug, Clone)]
pub struct CoefficientSet<'a, S> {
    pub pairs: &'a [CoefficientPair<S>],
    pub signal_sizes: Vec<usize>,
    pub residual_sizes: Vec<usize>,
    y_floor: Vec<Vec<S>>,
    z_floor: Vec<Vec<S>>,
    y_shared: Vec<DiagGaussian<S>>,
    z_shared: Vec<DiagGaussian<S>>,
    /// `Σ_i ln φ(y_ij; α̃_j)` per dimension.
    y_shared_ll: Vec<S>,
    z_shared_ll: Vec<S>,
}

fn block<S: Scalar>(pair: &CoefficientPair<S>, signal: bool, j: usize) -> &[S] {
    if signal {
        &pair.y[j]
    } else {
        &pair.z[j]
    }
}

impl<'a, S: Scalar> CoefficientSet<'a, S> {
    pub fn new(pairs: &'a [CoefficientPair<S>]) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InsufficientData("no subjects".into()))?;
        let signal_sizes: Vec<usize> = first.y.iter().map(Vec::len).collect();
        let residual_sizes: Vec<usize> = first.z.iter().map(Vec::len).collect();
        let probe = ModelStructure::full(1, 1, signal_sizes.clone(), residual_sizes.clone())?;
        for p in pairs {
            p.validate()?;
            probe.check_pair(p)?;
        }
        let n = S::from_usize_lossy(pairs.len());
        let ones = vec![S::one(); pairs.len()];
        let mut set = Self {
            pairs,
            signal_sizes,
            residual_sizes,
            y_floor: Vec::new(),
            z_floor: Vec::new(),
            y_shared: Vec::new(),
            z_shared: Vec::new(),
            y_shared_ll: Vec::new(),
            z_shared_ll: Vec::new(),
        };
        for signal in [true, false] {
            let sizes = if signal {
                &set.signal_sizes
            } else {
                &set.residual_sizes
            };
            let mut floors = Vec::with_capacity(sizes.len());
            let mut shared = Vec::with_capacity(sizes.len());
            let mut lls = Vec::with_capacity(sizes.len());
            for (j, &g) in sizes.iter().enumerate() {
                let floor: Vec<S> = (0..g)
                    .map(|c| {
                        let mean = pairs.iter().map(|p| block(p, signal, j)[c]).sum::<S>() / n;
                        let var = pairs
                            .iter()
                            .map(|p| (block(p, signal, j)[c] - mean).powi(2))
                            .sum::<S>()
                            / n;
                        let frac = S::lit(VARIANCE_FLOOR_FRACTION);
                        if var > S::zero() {
                            frac * var
                        } else {
                            frac
                        }
                    })
                    .collect();
                let (gauss, ll) = weighted_gaussian(pairs, signal, j, &ones, &floor);
                lls.push(ll);
                floors.push(floor);
                shared.push(gauss);
            }
            if signal {
                set.y_floor = floors;
                set.y_shared = shared;
                set.y_shared_ll = lls;
            } else {
                set.z_floor = floors;
                set.z_shared = shared;
                set.z_shared_ll = lls;
            }
        }
        Ok(set)
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_dims(&self) -> usize {
        self.signal_sizes.len()
    }
}

/// Weighted diagonal-Gaussian MLE of one coefficient block, with variances
/// clamped to `floor`, and `Σ_i w_i ln φ(x_i)` under the fitted law.
fn weighted_gaussian<S: Scalar>(
    pairs: &[CoefficientPair<S>],
    signal: bool,
    j: usize,
    weights: &[S],
    floor: &[S],
) -> (DiagGaussian<S>, S) {
    let g = floor.len();
    let total: S = weights.iter().copied().sum();
    let mut mean = vec![S::zero(); g];
    for (p, &w) in pairs.iter().zip(weights) {
        for (m, &v) in mean.iter_mut().zip(block(p, signal, j)) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / total);
    let mut ss = vec![S::zero(); g];
    for (p, &w) in pairs.iter().zip(weights) {
        for ((s, &v), &m) in ss.iter_mut().zip(block(p, signal, j)).zip(&mean) {
            *s += w * (v - m) * (v - m);
        }
    }
    let var: Vec<S> = ss
        .iter()
        .zip(floor)
        .map(|(&s, &f)| (s / total).max(f))
        .collect();
    let half = S::lit(0.5);
    let expected = ss
        .iter()
        .zip(&var)
        .map(|(&s, &v)| -half * (total * (S::ln_two_pi() + v.ln()) + s / v))
        .sum();
    (DiagGaussian { mean, var }, expected)
}

/// Gaussian with its normalising constant and inverse variances precomputed.
struct Prepared<S> {
    mean: Vec<S>,
    inv_var: Vec<S>,
    log_norm: S,
}

impl<S: Scalar> Prepared<S> {
    fn new(g: &DiagGaussian<S>) -> Self {
        let half = S::lit(0.5);
        Self {
            mean: g.mean.clone(),
            inv_var: g.var.iter().map(|&v| S::one() / v).collect(),
            log_norm: g
                .var
                .iter()
                .map(|&v| -half * (S::ln_two_pi() + v.ln()))
                .sum(),
        }
    }

    fn log_density(&self, x: &[S]) -> S {
        let mut q = S::zero();
        for ((&xi, &m), &iv) in x.iter().zip(&self.mean).zip(&self.inv_var) {
            let d = xi - m;
            q += d * d * iv;
        }
        self.log_norm - S::lit(0.5) * q
    }
}

fn prepare<S: Scalar>(params: &DimParams<S>) -> Vec<Prepared<S>> {
    match params {
        DimParams::Shared(g) => vec![Prepared::new(g)],
        DimParams::PerComponent(gs) => gs.iter().map(Prepared::new).collect(),
    }
}

/// Posteriors of every subject and the observed-data log-likelihood.
pub fn e_step<S: Scalar>(
    data: &CoefficientSet<'_, S>,
    m: &ModelStructure,
    theta: &MixtureParameters<S>,
) -> (FuzzyPartition<S>, S) {
    let alpha: Vec<Vec<Prepared<S>>> = theta.alpha.iter().map(prepare).collect();
    let beta: Vec<Vec<Prepared<S>>> = theta.beta.iter().map(prepare).collect();
    let mut t = Vec::with_capacity(data.n() * m.k * m.l);
    let mut loglik = S::zero();
    for pair in data.pairs {
        let mut scores = SubjectScores {
            shared: S::zero(),
            pattern: vec![S::zero(); m.k],
            dispersion: vec![S::zero(); m.l],
        };
        for j in 0..m.n_dims() {
            for (params, prepared, x, acc) in [
                (&theta.alpha[j], &alpha[j], &pair.y[j], &mut scores.pattern),
                (&theta.beta[j], &beta[j], &pair.z[j], &mut scores.dispersion),
            ] {
                if params.is_shared() {
                    scores.shared += prepared[0].log_density(x);
                } else {
                    for (a, g) in acc.iter_mut().zip(prepared) {
                        *a += g.log_density(x);
                    }
                }
            }
        }
        let (ll, post) = scores.evaluate(theta);
        loglik += ll;
        t.extend(post);
    }
    (
        FuzzyPartition {
            n: data.n(),
            k: m.k,
            l: m.l,
            t,
        },
        loglik,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStep<S> {
    pub structure: ModelStructure,
    pub theta: MixtureParameters<S>,
    /// Penalized gain of making each dimension pattern-relevant.
    pub kappa: Vec<S>,
    /// Same for the dispersion partition.
    pub lambda: Vec<S>,
}

/// Returns the relevance flags for gains `gain`: strictly positive entries,
/// or the single largest one if none is positive.
fn select_relevant<S: Scalar>(gain: &[S]) -> Vec<bool> {
    let mut flags: Vec<bool> = gain.iter().map(|&g| g > S::zero()).collect();
    if !flags.iter().any(|&b| b) {
        flags[argmax(gain)] = true;
    }
    flags
}

/// One side (pattern or dispersion) of the M-step.
fn m_step_side<S: Scalar>(
    data: &CoefficientSet<'_, S>,
    signal: bool,
    weights: &[Vec<S>],
    c: f64,
    select: bool,
) -> (Vec<bool>, Vec<DimParams<S>>, Vec<S>) {
    let (sizes, floors, shared, shared_ll) = if signal {
        (
            &data.signal_sizes,
            &data.y_floor,
            &data.y_shared,
            &data.y_shared_ll,
        )
    } else {
        (
            &data.residual_sizes,
            &data.z_floor,
            &data.z_shared,
            &data.z_shared_ll,
        )
    };
    let copies = weights.len();
    let mut specific = Vec::with_capacity(sizes.len());
    let mut gain = Vec::with_capacity(sizes.len());
    for j in 0..sizes.len() {
        let mut expected = S::zero();
        let comps: Vec<DiagGaussian<S>> = weights
            .iter()
            .map(|w| {
                let (g, e) = weighted_gaussian(data.pairs, signal, j, w, &floors[j]);
                expected += e;
                g
            })
            .collect();
        let penalty = S::lit(((copies - 1) * 2 * sizes[j]) as f64 * c);
        gain.push(expected - shared_ll[j] - penalty);
        specific.push(comps);
    }
    let flags = if copies == 1 || !select {
        vec![true; sizes.len()]
    } else {
        select_relevant(&gain)
    };
    let params = specific
        .into_iter()
        .zip(&flags)
        .zip(shared)
        .map(|((comps, &rel), sh)| {
            if rel {
                DimParams::PerComponent(comps)
            } else {
                DimParams::Shared(sh.clone())
            }
        })
        .collect();
    (flags, params, gain)
}

/// Maximises the expected penalized complete-data log-likelihood over the
/// relevance sets and θ. With `select` off every dimension stays relevant.
pub fn m_step<S: Scalar>(
    data: &CoefficientSet<'_, S>,
    fuzzy: &FuzzyPartition<S>,
    c: f64,
    select: bool,
) -> Result<MStep<S>> {
    let (k, l, n) = (fuzzy.k, fuzzy.l, data.n());
    if fuzzy.n != n {
        return Err(Error::InvalidArgument(
            "fuzzy partition size differs from the data".into(),
        ));
    }
    let counts = fuzzy.counts();
    let threshold = S::lit(EMPTY_COMPONENT_FRACTION * n as f64);
    let row_mass = counts
        .iter()
        .map(|r| r.iter().copied().fold(S::zero(), S::max))
        .fold(S::infinity(), S::min);
    let col_mass = (0..l)
        .map(|c| counts.iter().map(|r| r[c]).fold(S::zero(), S::max))
        .fold(S::infinity(), S::min);
    if row_mass < threshold || col_mass < threshold {
        return Err(Error::Degenerate(format!(
            "a component holds less than {threshold} subjects"
        )));
    }
    let nf = S::from_usize_lossy(n);
    let pi = counts
        .iter()
        .map(|r| r.iter().map(|&v| v / nf).collect())
        .collect();

    let mut v_weights = vec![vec![S::zero(); n]; k];
    let mut w_weights = vec![vec![S::zero(); n]; l];
    for i in 0..n {
        for (idx, &v) in fuzzy.row(i).iter().enumerate() {
            v_weights[idx / l][i] += v;
            w_weights[idx % l][i] += v;
        }
    }
    let (omega, alpha, kappa) = m_step_side(data, true, &v_weights, c, select);
    let (gamma, beta, lambda) = m_step_side(data, false, &w_weights, c, select);
    let structure = ModelStructure::new(
        k,
        l,
        omega,
        gamma,
        data.signal_sizes.clone(),
        data.residual_sizes.clone(),
    )?;
    Ok(MStep {
        structure,
        theta: MixtureParameters { pi, alpha, beta },
        kappa,
        lambda,
    })
}

/// Table entry of the grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub k: usize,
    pub l: usize,
    pub loglik: Option<f64>,
    pub penalty: Option<f64>,
    pub penalized: Option<f64>,
    pub n_params: Option<usize>,
    pub omega: Option<Vec<bool>>,
    pub gamma: Option<Vec<bool>>,
    pub n_iter: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct FitResult<S> {
    pub structure: ModelStructure,
    pub theta: MixtureParameters<S>,
    pub fuzzy: FuzzyPartition<S>,
    /// Zero-based MAP labels of the pattern partition.
    pub v_hat: Vec<usize>,
    /// Zero-based MAP labels of the dispersion partition.
    pub w_hat: Vec<usize>,
    pub loglik: S,
    pub penalty: S,
    pub penalized: S,
    pub c: f64,
    pub kappa: Vec<S>,
    pub lambda: Vec<S>,
    /// Penalized log-likelihood after initialisation and after every iteration.
    pub trace: Vec<S>,
    pub n_iter: usize,
    pub converged: bool,
    pub start: usize,
    pub start_seed: u64,
    pub bic_trace: Vec<GridCell>,
}

impl<S: Scalar> FitResult<S> {
    fn grid_cell(&self) -> GridCell {
        GridCell {
            k: self.structure.k,
            l: self.structure.l,
            loglik: Some(self.loglik.as_f64()),
            penalty: Some(self.penalty.as_f64()),
            penalized: Some(self.penalized.as_f64()),
            n_params: Some(self.structure.parameter_count()),
            omega: Some(self.structure.omega.clone()),
            gamma: Some(self.structure.gamma.clone()),
            n_iter: Some(self.n_iter),
            converged: Some(self.converged),
            error: None,
        }
    }
}

/// State of one EM chain between iterations.
#[derive(Debug, Clone)]
struct Chain<S> {
    step: MStep<S>,
    fuzzy: FuzzyPartition<S>,
    loglik: S,
    penalized: S,
    trace: Vec<S>,
    n_iter: usize,
    converged: bool,
    start: usize,
    seed: u64,
}

/// Dirichlet(1) row for every subject, drawn from a stream keyed by the
/// start seed and the subject's own coefficients, so that reordering the
/// subjects reorders the rows and nothing else.
fn random_partition<S: Scalar>(
    data: &CoefficientSet<'_, S>,
    k: usize,
    l: usize,
    seed: u64,
) -> FuzzyPartition<S> {
    let mut t = Vec::with_capacity(data.n() * k * l);
    for pair in data.pairs {
        let key = fingerprint(pair.y.iter().chain(&pair.z).flatten().map(|v| v.as_f64()));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[key]));
        let draws: Vec<f64> = (0..k * l).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        t.extend(draws.iter().map(|d| S::lit(d / total)));
    }
    FuzzyPartition {
        n: data.n(),
        k,
        l,
        t,
    }
}

impl<S: Scalar> Chain<S> {
    fn start(
        data: &CoefficientSet<'_, S>,
        k: usize,
        l: usize,
        c: f64,
        start: usize,
        seed: u64,
    ) -> Result<Self> {
        let init = random_partition(data, k, l, seed);
        let step = m_step(data, &init, c, false)?;
        let (fuzzy, loglik) = e_step(data, &step.structure, &step.theta);
        let penalized = loglik - Self::penalty_of(&step.structure, c);
        Ok(Self {
            step,
            fuzzy,
            loglik,
            penalized,
            trace: vec![penalized],
            n_iter: 0,
            converged: false,
            start,
            seed,
        })
    }

    fn penalty_of(m: &ModelStructure, c: f64) -> S {
        S::from_usize_lossy(m.parameter_count()) * S::lit(c)
    }

    /// Runs until converged or `limit` total iterations.
    fn advance(
        &mut self,
        data: &CoefficientSet<'_, S>,
        c: f64,
        config: &EmConfig,
        limit: usize,
    ) -> Result<()> {
        while !self.converged && self.n_iter < limit {
            let step = m_step(data, &self.fuzzy, c, config.select_dimensions)?;
            let (fuzzy, loglik) = e_step(data, &step.structure, &step.theta);
            let penalized = loglik - Self::penalty_of(&step.structure, c);
            let change = (penalized - self.penalized).abs() / (self.penalized.abs() + S::one());
            self.converged = change < S::lit(config.rel_tol);
            self.step = step;
            self.fuzzy = fuzzy;
            self.loglik = loglik;
            self.penalized = penalized;
            self.trace.push(penalized);
            self.n_iter += 1;
        }
        Ok(())
    }
}

/// Orders chains best first; equal values keep the lower start index first.
fn rank<S: Scalar>(chains: &mut [Chain<S>]) {
    chains.sort_by(|a, b| {
        b.penalized
            .partial_cmp(&a.penalized)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.start.cmp(&b.start))
    });
}

/// Fits the K×L model by multi-start penalized EM.
///
/// `n_starts` chains run `short_run_iter` iterations from random fuzzy
/// partitions; the best `n_finalists` continue to convergence and the best
/// of those is returned, canonicalised. A chain that loses a component is
/// redrawn up to `max_restarts` times.
pub fn run_em<S: Scalar>(
    pairs: &[CoefficientPair<S>],
    k: usize,
    l: usize,
    config: &EmConfig,
) -> Result<FitResult<S>> {
    let data = CoefficientSet::new(pairs)?;
    run_em_prepared(&data, k, l, config)
}

fn run_em_prepared<S: Scalar>(
    data: &CoefficientSet<'_, S>,
    k: usize,
    l: usize,
    config: &EmConfig,
) -> Result<FitResult<S>> {
    config.validate()?;
    if k == 0 || l == 0 {
        return Err(Error::InvalidArgument("K and L must be positive".into()));
    }
    if data.n() <= k * l {
        return Err(Error::InsufficientData(format!(
            "{} subjects cannot support {k}x{l} components",
            data.n()
        )));
    }
    let c = config.c.value(data.n());
    let short = config.short_run_iter.min(config.max_iter);

    let outcomes: Vec<std::result::Result<Chain<S>, String>> = (0..config.n_starts)
        .into_par_iter()
        .map(|start| {
            let mut last = String::new();
            for attempt in 0..=config.max_restarts {
                let seed = derive_seed(
                    config.seed,
                    &[k as u64, l as u64, start as u64, attempt as u64],
                );
                let run = Chain::start(data, k, l, c, start, seed).and_then(|mut ch| {
                    ch.advance(data, c, config, short)?;
                    Ok(ch)
                });
                match run {
                    Ok(ch) => return Ok(ch),
                    Err(e) => last = e.to_string(),
                }
            }
            Err(last)
        })
        .collect();

    let mut chains: Vec<Chain<S>> = Vec::with_capacity(outcomes.len());
    let mut failure = None;
    for o in outcomes {
        match o {
            Ok(ch) => chains.push(ch),
            Err(e) => failure = failure.or(Some(e)),
        }
    }
    if chains.is_empty() {
        return Err(Error::FitFailed {
            k,
            l,
            reason: format!(
                "all {} starts degenerated: {}",
                config.n_starts,
                failure.unwrap_or_default()
            ),
        });
    }
    rank(&mut chains);
    chains.truncate(config.n_finalists);

    let mut finals: Vec<Chain<S>> = chains
        .into_par_iter()
        .filter_map(|mut ch| {
            ch.advance(data, c, config, config.max_iter)
                .ok()
                .map(|_| ch)
        })
        .collect();
    if finals.is_empty() {
        return Err(Error::FitFailed {
            k,
            l,
            reason: "every finalist degenerated".into(),
        });
    }
    rank(&mut finals);
    let best = finals.swap_remove(0);

    let (theta, fuzzy, _) = canonicalize(&best.step.structure, &best.step.theta, &best.fuzzy);
    let kappa = best.step.kappa;
    let lambda = best.step.lambda;
    let (v_hat, w_hat) = fuzzy.hard_labels();
    let penalty = Chain::<S>::penalty_of(&best.step.structure, c);
    let mut fit = FitResult {
        structure: best.step.structure,
        theta,
        fuzzy,
        v_hat,
        w_hat,
        loglik: best.loglik,
        penalty,
        penalized: best.penalized,
        c,
        kappa,
        lambda,
        trace: best.trace,
        n_iter: best.n_iter,
        converged: best.converged,
        start: best.start,
        start_seed: best.seed,
        bic_trace: Vec::new(),
    };
    fit.bic_trace = vec![fit.grid_cell()];
    Ok(fit)
}

/// Fits every (K, L) with `K ≤ k_max`, `L ≤ l_max` and keeps the largest
/// penalized log-likelihood (ties to the earlier cell in row-major order).
pub fn grid_search<S: Scalar>(
    pairs: &[CoefficientPair<S>],
    k_max: usize,
    l_max: usize,
    config: &EmConfig,
) -> Result<FitResult<S>> {
    if k_max == 0 || l_max == 0 {
        return Err(Error::InvalidArgument(
            "K_max and L_max must be at least 1".into(),
        ));
    }
    config.validate()?;
    let data = CoefficientSet::new(pairs)?;
    let cells: Vec<(usize, usize)> = (1..=k_max)
        .flat_map(|k| (1..=l_max).map(move |l| (k, l)))
        .collect();
    let fits: Vec<Result<FitResult<S>>> = cells
        .par_iter()
        .map(|&(k, l)| run_em_prepared(&data, k, l, config))
        .collect();

    let mut trace = Vec::with_capacity(cells.len());
    let mut best: Option<FitResult<S>> = None;
    let mut last_err = None;
    for (&(k, l), fit) in cells.iter().zip(fits) {
        match fit {
            Ok(f) => {
                trace.push(f.grid_cell());
                if best.as_ref().is_none_or(|b| f.penalized > b.penalized) {
                    best = Some(f);
                }
            }
            Err(e) => {
                trace.push(GridCell {
                    k,
                    l,
                    loglik: None,
                    penalty: None,
                    penalized: None,
                    n_params: None,
                    omega: None,
                    gamma: None,
                    n_iter: None,
                    converged: None,
                    error: Some(e.to_string()),
                });
                last_err = Some(e);
            }
        }
    }
    match best {
        Some(mut b) => {
            b.bic_trace = trace;
            Ok(b)
        }
        None => Err(last_err.unwrap_or(Error::FitFailed {
            k: k_max,
            l: l_max,
            reason: "empty grid".into(),
        })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::FourierBasis;

    fn pair(id: usize, y: Vec<Vec<f64>>, z: Vec<Vec<f64>>) -> CoefficientPair<f64> {
        let spec = |v: &Vec<f64>| FourierBasis {
            degree: v.len().saturating_sub(1) / 2,
            period: 1.0,
        };
        CoefficientPair {
            subject_id: format!("s{id}"),
            signal_specs: y.iter().map(spec).collect(),
            residual_specs: z.iter().map(spec).collect(),
            y,
            z,
            period_frames: 1.0,
        }
    }

    fn quick() -> EmConfig {
        EmConfig {
            n_starts: 6,
            n_finalists: 2,
            short_run_iter: 5,
            seed: 3,
            ..EmConfig::default()
        }
    }

    #[test]
    fn penalty_constant_round_trips() {
        for (text, value) in [
            ("\"bic-auto\"", PenaltyConstant::Bic),
            ("2.5", PenaltyConstant::Fixed(2.5)),
        ] {
            let parsed: PenaltyConstant = serde_json::from_str(text).unwrap();
            assert_eq!(parsed, value);
            assert_eq!(serde_json::to_string(&parsed).unwrap(), text);
        }
        assert_eq!(
            "bic".parse::<PenaltyConstant>().unwrap(),
            PenaltyConstant::Bic
        );
        assert!("-1".parse::<PenaltyConstant>().is_err());
        assert!(serde_json::from_str::<PenaltyConstant>("0").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EmConfig::default().validate().is_ok());
        assert!(EmConfig {
            n_finalists: 60,
            ..EmConfig::default()
        }
        .validate()
        .is_err());
        assert!(EmConfig {
            rel_tol: 0.0,
            ..EmConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn hand_computed_m_step() {
        let ys = [0.0, 0.2, 10.0, 10.2];
        let pairs: Vec<_> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| pair(i, vec![vec![y]], vec![vec![1.0]]))
            .collect();
        let data = CoefficientSet::new(&pairs).unwrap();
        let rows = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ];
        let fuzzy = FuzzyPartition::from_rows(2, 1, rows).unwrap();
        for c in [0.5, 1.0, 3.0] {
            let step = m_step(&data, &fuzzy, c, true).unwrap();
            let comps = match &step.theta.alpha[0] {
                DimParams::PerComponent(g) => g.clone(),
                DimParams::Shared(_) => panic!("dimension should be relevant"),
            };
            assert!(
                (comps[0].mean[0] - 0.1).abs() < 1e-12 && (comps[1].mean[0] - 10.1).abs() < 1e-12
            );
            assert!(
                (comps[0].var[0] - 0.01).abs() < 1e-12 && (comps[1].var[0] - 0.01).abs() < 1e-12
            );
            assert!(step.kappa[0] > 0.0);
            // brute force: weighted log-likelihood gain minus 2 parameters times c
            let shared = DiagGaussian::new(vec![5.1], vec![25.01]).unwrap();
            let gain: f64 = ys
                .iter()
                .enumerate()
                .map(|(i, &y)| comps[i / 2].log_density(&[y]) - shared.log_density(&[y]))
                .sum();
            assert!((step.kappa[0] - (gain - 2.0 * c)).abs() < 1e-9);
            assert_eq!(step.structure.omega, vec![true]);
        }
    }

    #[test]
    fn uniform_partition_makes_every_gain_negative() {
        let pairs: Vec<_> = (0..12)
            .map(|i| {
                let x = i as f64;
                pair(
                    i,
                    vec![vec![x, x.sin(), (0.5 * x).cos()], vec![x * x]],
                    vec![vec![x.cos()], vec![1.0 + x, x.sqrt(), (0.3 * x).sin()]],
                )
            })
            .collect();
        let data = CoefficientSet::new(&pairs).unwrap();
        let fuzzy = FuzzyPartition::from_rows(2, 3, vec![vec![1.0 / 6.0; 6]; 12]).unwrap();
        let c = 1.3;
        let step = m_step(&data, &fuzzy, c, true).unwrap();
        for (j, &g) in [3usize, 1].iter().enumerate() {
            assert!((step.kappa[j] + (2 * g) as f64 * c).abs() < 1e-9);
        }
        for (j, &h) in [1usize, 3].iter().enumerate() {
            assert!((step.lambda[j] + 2.0 * (2 * h) as f64 * c).abs() < 1e-9);
        }
        // the empty set is replaced by the least negative gain
        assert_eq!(step.structure.omega, vec![false, true]);
        assert_eq!(step.structure.gamma, vec![true, false]);
    }

    #[test]
    fn single_component_fit_is_closed_form() {
        let pairs: Vec<_> = (0..20)
            .map(|i| {
                let x = i as f64 * 0.37;
                pair(
                    i,
                    vec![vec![x.sin(), x.cos(), x]],
                    vec![vec![(2.0 * x).sin()]],
                )
            })
            .collect();
        let fit = run_em(&pairs, 1, 1, &quick()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.n_iter, 1);
        let data = CoefficientSet::new(&pairs).unwrap();
        let direct: f64 = data.y_shared_ll.iter().chain(&data.z_shared_ll).sum();
        assert!((fit.loglik - direct).abs() < 1e-9);
        assert!((fit.penalized - (direct - 8.0 * bic_constant(20))).abs() < 1e-9);
        assert!(fit.fuzzy.t.iter().all(|&t| t == 1.0));
    }

    #[test]
    fn too_few_subjects() {
        let pairs: Vec<_> = (0..4)
            .map(|i| pair(i, vec![vec![i as f64]], vec![vec![1.0]]))
            .collect();
        assert!(matches!(
            run_em(&pairs, 2, 2, &quick()),
            Err(Error::InsufficientData(_))
        ));
    }
}
