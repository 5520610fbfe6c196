//! The K×L bi-partition mixture: structure, parameters, densities,
//! posteriors, MAP rules, penalized likelihood and label canonicalisation.

use serde::{Deserialize, Serialize};

use crate::basis::CoefficientPair;
use crate::error::{Error, Result};
use crate::scalar::{argmax, log_sum_exp, Scalar};

/// The discrete model index: component counts and relevance flags per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStructure {
    pub k: usize,
    pub l: usize,
    pub omega: Vec<bool>,
    pub gamma: Vec<bool>,
    pub signal_sizes: Vec<usize>,
    pub residual_sizes: Vec<usize>,
}

impl ModelStructure {
    pub fn new(
        k: usize,
        l: usize,
        omega: Vec<bool>,
        gamma: Vec<bool>,
        signal_sizes: Vec<usize>,
        residual_sizes: Vec<usize>,
    ) -> Result<Self> {
        let m = Self {
            k,
            l,
            omega,
            gamma,
            signal_sizes,
            residual_sizes,
        };
        m.validate()?;
        Ok(m)
    }

    /// Every dimension relevant for both partitions.
    pub fn full(
        k: usize,
        l: usize,
        signal_sizes: Vec<usize>,
        residual_sizes: Vec<usize>,
    ) -> Result<Self> {
        let j = signal_sizes.len();
        Self::new(
            k,
            l,
            vec![true; j],
            vec![true; j],
            signal_sizes,
            residual_sizes,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l == 0 {
            return Err(Error::InvalidArgument("K and L must be positive".into()));
        }
        let j = self.signal_sizes.len();
        if j == 0
            || self.residual_sizes.len() != j
            || self.omega.len() != j
            || self.gamma.len() != j
        {
            return Err(Error::InvalidArgument(
                "structure has inconsistent dimension counts".into(),
            ));
        }
        if self
            .signal_sizes
            .iter()
            .chain(&self.residual_sizes)
            .any(|&g| g == 0)
        {
            return Err(Error::InvalidArgument(
                "coefficient blocks must be non-empty".into(),
            ));
        }
        if !self.omega.iter().any(|&b| b) || !self.gamma.iter().any(|&b| b) {
            return Err(Error::InvalidArgument(
                "both relevance sets need at least one dimension".into(),
            ));
        }
        Ok(())
    }

    pub fn n_dims(&self) -> usize {
        self.signal_sizes.len()
    }

    /// Zero-based indices of the pattern-relevant dimensions.
    pub fn omega_indices(&self) -> Vec<usize> {
        (0..self.n_dims()).filter(|&j| self.omega[j]).collect()
    }

    pub fn gamma_indices(&self) -> Vec<usize> {
        (0..self.n_dims()).filter(|&j| self.gamma[j]).collect()
    }

    /// Free parameter count ν_m: `KL − 1` proportions, then a mean and a
    /// variance per coefficient, once per component on relevant dimensions
    /// and once overall on irrelevant ones.
    pub fn parameter_count(&self) -> usize {
        let mut count = self.k * self.l - 1;
        for j in 0..self.n_dims() {
            let pattern_copies = if self.omega[j] { self.k } else { 1 };
            let dispersion_copies = if self.gamma[j] { self.l } else { 1 };
            count += pattern_copies * 2 * self.signal_sizes[j];
            count += dispersion_copies * 2 * self.residual_sizes[j];
        }
        count
    }

    /// Checks that a subject's coefficient blocks have this structure's sizes.
    pub fn check_pair<S: Scalar>(&self, pair: &CoefficientPair<S>) -> Result<()> {
        let ok = pair.y.len() == self.n_dims()
            && pair.z.len() == self.n_dims()
            && pair
                .y
                .iter()
                .zip(&self.signal_sizes)
                .all(|(v, &g)| v.len() == g)
            && pair
                .z
                .iter()
                .zip(&self.residual_sizes)
                .all(|(v, &h)| v.len() == h);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "subject {} does not match the model's coefficient sizes",
                pair.subject_id
            )))
        }
    }
}

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DiagGaussian<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> DiagGaussian<S> {
    pub fn new(mean: Vec<S>, var: Vec<S>) -> Result<Self> {
        if mean.len() != var.len() || mean.is_empty() {
            return Err(Error::InvalidArgument(
                "mean and variance lengths differ".into(),
            ));
        }
        if var.iter().any(|&v| !(v > S::zero()) || !v.is_finite())
            || mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidArgument(
                "variances must be positive and finite".into(),
            ));
        }
        Ok(Self { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `Σ_g −½ ln(2πσ²_g) − (x_g − μ_g)² / (2σ²_g)`.
    pub fn log_density(&self, x: &[S]) -> S {
        debug_assert_eq!(x.len(), self.mean.len());
        let half = S::lit(0.5);
        let mut acc = S::zero();
        for ((&xi, &m), &v) in x.iter().zip(&self.mean).zip(&self.var) {
            let d = xi - m;
            acc -= half * ((S::ln_two_pi() + v.ln()) + d * d / v);
        }
        acc
    }
}

/// Parameters of one dimension: a single Gaussian shared by all components,
/// or one per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "components", rename_all = "snake_case")]
#[serde(bound = "S: Scalar")]
pub enum DimParams<S> {
    Shared(DiagGaussian<S>),
    PerComponent(Vec<DiagGaussian<S>>),
}

impl<S: Scalar> DimParams<S> {
    /// Parameters used by component `c`.
    pub fn component(&self, c: usize) -> &DiagGaussian<S> {
        match self {
            DimParams::Shared(g) => g,
            DimParams::PerComponent(gs) => &gs[c],
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, DimParams::Shared(_))
    }

    fn check(&self, relevant: bool, copies: usize, size: usize) -> bool {
        match self {
            DimParams::Shared(g) => !relevant && g.dim() == size,
            DimParams::PerComponent(gs) => {
                relevant && gs.len() == copies && gs.iter().all(|g| g.dim() == size)
            }
        }
    }

    fn permuted(&self, order: &[usize]) -> Self {
        match self {
            DimParams::Shared(g) => DimParams::Shared(g.clone()),
            DimParams::PerComponent(gs) => {
                DimParams::PerComponent(order.iter().map(|&o| gs[o].clone()).collect())
            }
        }
    }
}

/// θ: mixing proportions `pi[k][l]` and per-dimension Gaussians for the
/// pattern (`alpha`, signal coefficients) and dispersion (`beta`, residual
/// coefficients) partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MixtureParameters<S> {
    pub pi: Vec<Vec<S>>,
    pub alpha: Vec<DimParams<S>>,
    pub beta: Vec<DimParams<S>>,
}

impl<S: Scalar> MixtureParameters<S> {
    pub fn validate(&self, m: &ModelStructure) -> Result<()> {
        if self.pi.len() != m.k || self.pi.iter().any(|row| row.len() != m.l) {
            return Err(Error::InvalidArgument(format!(
                "pi must be {}x{}",
                m.k, m.l
            )));
        }
        if self.pi.iter().flatten().any(|&p| !(p >= S::zero())) {
            return Err(Error::InvalidArgument(
                "mixing proportions must be nonnegative".into(),
            ));
        }
        let total: S = self.pi.iter().flatten().copied().sum();
        let tol = S::lit(1e-12).max(S::epsilon() * S::lit(64.0));
        if (total - S::one()).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "mixing proportions sum to {total}"
            )));
        }
        if self.alpha.len() != m.n_dims() || self.beta.len() != m.n_dims() {
            return Err(Error::InvalidArgument(
                "parameter blocks do not match the dimension count".into(),
            ));
        }
        for j in 0..m.n_dims() {
            if !self.alpha[j].check(m.omega[j], m.k, m.signal_sizes[j]) {
                return Err(Error::InvalidArgument(format!(
                    "pattern parameters of dimension {j} do not match"
                )));
            }
            if !self.beta[j].check(m.gamma[j], m.l, m.residual_sizes[j]) {
                return Err(Error::InvalidArgument(format!(
                    "dispersion parameters of dimension {j} do not match"
                )));
            }
        }
        Ok(())
    }

    /// Row sums `π_k•`.
    pub fn pattern_weights(&self) -> Vec<S> {
        self.pi
            .iter()
            .map(|row| row.iter().copied().sum())
            .collect()
    }

    /// Column sums `π_•ℓ`.
    pub fn dispersion_weights(&self) -> Vec<S> {
        let l = self.pi.first().map_or(0, Vec::len);
        (0..l)
            .map(|c| self.pi.iter().map(|row| row[c]).sum())
            .collect()
    }
}

/// Posterior membership probabilities `t[i][k][l]`, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct FuzzyPartition<S> {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub t: Vec<S>,
}

impl<S: Scalar> FuzzyPartition<S> {
    pub fn from_rows(k: usize, l: usize, rows: Vec<Vec<S>>) -> Result<Self> {
        if rows.iter().any(|r| r.len() != k * l) {
            return Err(Error::InvalidArgument(format!(
                "every row must have {} entries",
                k * l
            )));
        }
        let n = rows.len();
        Ok(Self {
            n,
            k,
            l,
            t: rows.into_iter().flatten().collect(),
        })
    }

    pub fn get(&self, i: usize, k: usize, l: usize) -> S {
        self.t[(i * self.k + k) * self.l + l]
    }

    /// Row-major K×L block of subject `i`.
    pub fn row(&self, i: usize) -> &[S] {
        let w = self.k * self.l;
        &self.t[i * w..(i + 1) * w]
    }

    /// `t_ik•` for every k.
    pub fn pattern_marginal(&self, i: usize) -> Vec<S> {
        self.row(i)
            .chunks(self.l)
            .map(|c| c.iter().copied().sum())
            .collect()
    }

    /// `t_i•ℓ` for every ℓ.
    pub fn dispersion_marginal(&self, i: usize) -> Vec<S> {
        let row = self.row(i);
        (0..self.l)
            .map(|c| (0..self.k).map(|r| row[r * self.l + c]).sum())
            .collect()
    }

    /// `n_kℓ = Σ_i t_ikℓ`.
    pub fn counts(&self) -> Vec<Vec<S>> {
        let mut out = vec![vec![S::zero(); self.l]; self.k];
        for i in 0..self.n {
            for (idx, &v) in self.row(i).iter().enumerate() {
                out[idx / self.l][idx % self.l] += v;
            }
        }
        out
    }

    /// Zero-based MAP labels of the two partitions (ties to the smaller index).
    pub fn hard_labels(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.n)
            .map(|i| {
                (
                    argmax(&self.pattern_marginal(i)),
                    argmax(&self.dispersion_marginal(i)),
                )
            })
            .unzip()
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_error(&self) -> S {
        (0..self.n)
            .map(|i| (self.row(i).iter().copied().sum::<S>() - S::one()).abs())
            .fold(S::zero(), S::max)
    }

    fn permuted(&self, k_order: &[usize], l_order: &[usize]) -> Self {
        let mut t = Vec::with_capacity(self.t.len());
        for i in 0..self.n {
            for &k in k_order {
                for &l in l_order {
                    t.push(self.get(i, k, l));
                }
            }
        }
        Self {
            n: self.n,
            k: self.k,
            l: self.l,
            t,
        }
    }
}

/// Per-subject log-density pieces: the part shared by every component
/// (irrelevant dimensions) and the component-specific sums over Ω and Γ.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectScores<S> {
    pub shared: S,
    pub pattern: Vec<S>,
    pub dispersion: Vec<S>,
}

pub fn subject_scores<S: Scalar>(
    pair: &CoefficientPair<S>,
    m: &ModelStructure,
    theta: &MixtureParameters<S>,
) -> SubjectScores<S> {
    let mut shared = S::zero();
    let mut pattern = vec![S::zero(); m.k];
    let mut dispersion = vec![S::zero(); m.l];
    for j in 0..m.n_dims() {
        match &theta.alpha[j] {
            DimParams::Shared(g) => shared += g.log_density(&pair.y[j]),
            DimParams::PerComponent(gs) => {
                for (acc, g) in pattern.iter_mut().zip(gs) {
                    *acc += g.log_density(&pair.y[j]);
                }
            }
        }
        match &theta.beta[j] {
            DimParams::Shared(g) => shared += g.log_density(&pair.z[j]),
            DimParams::PerComponent(gs) => {
                for (acc, g) in dispersion.iter_mut().zip(gs) {
                    *acc += g.log_density(&pair.z[j]);
                }
            }
        }
    }
    SubjectScores {
        shared,
        pattern,
        dispersion,
    }
}

impl<S: Scalar> SubjectScores<S> {
    /// `ln π_kℓ + pattern_k + dispersion_ℓ`, row-major.
    fn component_terms(&self, theta: &MixtureParameters<S>) -> Vec<S> {
        let mut out = Vec::with_capacity(self.pattern.len() * self.dispersion.len());
        for (k, &a) in self.pattern.iter().enumerate() {
            for (l, &b) in self.dispersion.iter().enumerate() {
                out.push(theta.pi[k][l].ln() + a + b);
            }
        }
        out
    }

    /// Joint log-density and the normalised posterior block.
    pub fn evaluate(&self, theta: &MixtureParameters<S>) -> (S, Vec<S>) {
        let terms = self.component_terms(theta);
        let lse = log_sum_exp(&terms);
        let post = terms.iter().map(|&v| (v - lse).exp()).collect();
        (self.shared + lse, post)
    }
}

/// `ln f(y_i, z_i; m, θ)`.
pub fn joint_log_density<S: Scalar>(
    pair: &CoefficientPair<S>,
    m: &ModelStructure,
    theta: &MixtureParameters<S>,
) -> S {
    subject_scores(pair, m, theta).evaluate(theta).0
}

/// Posterior block `t_kℓ` of one subject, row-major K×L.
pub fn posterior<S: Scalar>(
    pair: &CoefficientPair<S>,
    m: &ModelStructure,
    theta: &MixtureParameters<S>,
) -> Vec<S> {
    subject_scores(pair, m, theta).evaluate(theta).1
}

/// Zero-based MAP labels from the joint posterior and from each marginal mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapLabels {
    pub v: usize,
    pub w: usize,
    pub v_marginal: usize,
    pub w_marginal: usize,
}

pub fn map_rules<S: Scalar>(
    pair: &CoefficientPair<S>,
    m: &ModelStructure,
    theta: &MixtureParameters<S>,
) -> MapLabels {
    let scores = subject_scores(pair, m, theta);
    let (_, post) = scores.evaluate(theta);
    let v_post: Vec<S> = post.chunks(m.l).map(|c| c.iter().copied().sum()).collect();
    let w_post: Vec<S> = (0..m.l)
        .map(|c| (0..m.k).map(|r| post[r * m.l + c]).sum())
        .collect();
    let v_marg: Vec<S> = theta
        .pattern_weights()
        .iter()
        .zip(&scores.pattern)
        .map(|(&p, &a)| p.ln() + a)
        .collect();
    let w_marg: Vec<S> = theta
        .dispersion_weights()
        .iter()
        .zip(&scores.dispersion)
        .map(|(&p, &b)| p.ln() + b)
        .collect();
    MapLabels {
        v: argmax(&v_post),
        w: argmax(&w_post),
        v_marginal: argmax(&v_marg),
        w_marginal: argmax(&w_marg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct PenalizedLikelihood<S> {
    pub loglik: S,
    pub penalty: S,
    pub penalized: S,
}

/// BIC weight `ln(n) / 2`.
pub fn bic_constant(n: usize) -> f64 {
    (n as f64).ln() / 2.0
}

pub fn penalized_log_likelihood<S: Scalar>(
    data: &[CoefficientPair<S>],
    m: &ModelStructure,
    theta: &MixtureParameters<S>,
    c: f64,
) -> PenalizedLikelihood<S> {
    let loglik = data
        .iter()
        .map(|p| joint_log_density(p, m, theta))
        .sum::<S>();
    let penalty = S::from_usize_lossy(m.parameter_count()) * S::lit(c);
    PenalizedLikelihood {
        loglik,
        penalty,
        penalized: loglik - penalty,
    }
}

/// Component orders applied by [`canonicalize`]: `pattern[new] = old`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relabeling {
    pub pattern: Vec<usize>,
    pub dispersion: Vec<usize>,
}

fn stable_order<S: Scalar>(keys: &[S]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .partial_cmp(&keys[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Sorts pattern components by the norm of their relevant means and
/// dispersion components by `Σ_{j∈Γ} mean[0]`, both ascending, permuting
/// π and the posteriors to match.
pub fn canonicalize<S: Scalar>(
    m: &ModelStructure,
    theta: &MixtureParameters<S>,
    fuzzy: &FuzzyPartition<S>,
) -> (MixtureParameters<S>, FuzzyPartition<S>, Relabeling) {
    let pattern_keys: Vec<S> = (0..m.k)
        .map(|k| {
            m.omega_indices()
                .iter()
                .flat_map(|&j| theta.alpha[j].component(k).mean.iter())
                .map(|&v| v * v)
                .sum::<S>()
                .sqrt()
        })
        .collect();
    let dispersion_keys: Vec<S> = (0..m.l)
        .map(|l| {
            m.gamma_indices()
                .iter()
                .map(|&j| theta.beta[j].component(l).mean[0])
                .sum()
        })
        .collect();
    let k_order = stable_order(&pattern_keys);
    let l_order = stable_order(&dispersion_keys);
    let pi = k_order
        .iter()
        .map(|&k| l_order.iter().map(|&l| theta.pi[k][l]).collect())
        .collect();
    let alpha = theta.alpha.iter().map(|d| d.permuted(&k_order)).collect();
    let beta = theta.beta.iter().map(|d| d.permuted(&l_order)).collect();
    (
        MixtureParameters { pi, alpha, beta },
        fuzzy.permuted(&k_order, &l_order),
        Relabeling {
            pattern: k_order,
            dispersion: l_order,
        },
    )
}
