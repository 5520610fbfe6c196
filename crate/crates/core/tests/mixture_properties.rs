use funbipart::basis::{CoefficientPair, FourierBasis};
use funbipart::mixture::{
    canonicalize, joint_log_density, map_rules, penalized_log_likelihood, posterior, DiagGaussian,
    DimParams, FuzzyPartition, MixtureParameters, ModelStructure,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Instance {
    m: ModelStructure,
    theta: MixtureParameters<f64>,
    data: Vec<CoefficientPair<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, size: usize, spread: f64) -> DiagGaussian<f64> {
    let mean = (0..size)
        .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let var = (0..size).map(|_| rng.random_range(0.3..2.0)).collect();
    DiagGaussian::new(mean, var).unwrap()
}

fn block(rng: &mut ChaCha8Rng, relevant: bool, copies: usize, size: usize) -> DimParams<f64> {
    if relevant {
        DimParams::PerComponent((0..copies).map(|_| gaussian(rng, size, 1.5)).collect())
    } else {
        DimParams::Shared(gaussian(rng, size, 1.5))
    }
}

fn flags(rng: &mut ChaCha8Rng, j: usize) -> Vec<bool> {
    let mut f: Vec<bool> = (0..j).map(|_| rng.random()).collect();
    let keep = rng.random_range(0..j);
    f[keep] = true;
    f
}

fn random_pi(rng: &mut ChaCha8Rng, k: usize, l: usize) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..l).map(|_| rng.random_range(0.05..1.0)).collect())
        .collect();
    let total: f64 = raw.iter().flatten().sum();
    raw.into_iter()
        .map(|r| r.into_iter().map(|v| v / total).collect())
        .collect()
}

fn pair(rng: &mut ChaCha8Rng, id: usize, sig: &[usize], res: &[usize]) -> CoefficientPair<f64> {
    let draw = |rng: &mut ChaCha8Rng, g: usize| -> Vec<f64> {
        (0..g)
            .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let spec = |g: usize| FourierBasis::new((g - 1) / 2, 50.0).unwrap();
    CoefficientPair {
        subject_id: format!("s{id}"),
        y: sig.iter().map(|&g| draw(rng, g)).collect(),
        z: res.iter().map(|&g| draw(rng, g)).collect(),
        period_frames: 50.0,
        signal_specs: sig.iter().map(|&g| spec(g)).collect(),
        residual_specs: res.iter().map(|&g| spec(g)).collect(),
    }
}

fn instance(seed: u64, n: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=3);
    let l = rng.random_range(1..=3);
    let j = rng.random_range(1..=3);
    let sig: Vec<usize> = (0..j).map(|_| [3, 5][rng.random_range(0..2)]).collect();
    let res: Vec<usize> = (0..j).map(|_| [3, 5][rng.random_range(0..2)]).collect();
    let (omega, gamma) = (flags(&mut rng, j), flags(&mut rng, j));
    let m =
        ModelStructure::new(k, l, omega.clone(), gamma.clone(), sig.clone(), res.clone()).unwrap();
    let alpha = (0..j)
        .map(|d| block(&mut rng, omega[d], k, sig[d]))
        .collect();
    let beta = (0..j)
        .map(|d| block(&mut rng, gamma[d], l, res[d]))
        .collect();
    let theta = MixtureParameters {
        pi: random_pi(&mut rng, k, l),
        alpha,
        beta,
    };
    theta.validate(&m).unwrap();
    let data = (0..n).map(|i| pair(&mut rng, i, &sig, &res)).collect();
    Instance { m, theta, data }
}

/// `ln π_kℓ + Σ_j ln φ(y_j) + Σ_j ln φ(z_j)` over every dimension, shared ones included.
fn brute_terms(inst: &Instance, p: &CoefficientPair<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..inst.m.k {
        for l in 0..inst.m.l {
            let mut v = inst.theta.pi[k][l].ln();
            for j in 0..inst.m.n_dims() {
                v += inst.theta.alpha[j].component(k).log_density(&p.y[j]);
                v += inst.theta.beta[j].component(l).log_density(&p.z[j]);
            }
            out.push(v);
        }
    }
    out
}

/// Dense Gaussian log-density with covariance `diag(var)` handled as a full matrix.
fn dense_log_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let n = x.len();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { var[i] } else { 0.0 }).collect())
        .collect();
    let mut b: Vec<f64> = x.iter().zip(mean).map(|(x, m)| x - m).collect();
    let d = b.clone();
    // Gaussian elimination for Σ⁻¹ d and det Σ
    let mut det = 1.0;
    for c in 0..n {
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut sol = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * sol[k]).sum();
        sol[r] = (b[r] - s) / a[r][r];
    }
    let quad: f64 = d.iter().zip(&sol).map(|(a, b)| a * b).sum();
    -0.5 * (n as f64 * std::f64::consts::TAU.ln() + det.ln() + quad)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_matches_direct_normalisation(seed in any::<u64>()) {
        let inst = instance(seed, 8);
        for p in &inst.data {
            let post = posterior(p, &inst.m, &inst.theta);
            let terms = brute_terms(&inst, p);
            let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = terms.iter().map(|t| (t - max).exp()).sum();
            prop_assert!((post.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (a, t) in post.iter().zip(&terms) {
                prop_assert!((0.0..=1.0).contains(a));
                prop_assert!((a - (t - max).exp() / total).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn joint_density_invariant_to_component_permutation(seed in any::<u64>()) {
        let inst = instance(seed, 6);
        let (k, l) = (inst.m.k, inst.m.l);
        let kp: Vec<usize> = (0..k).rev().collect();
        let lp: Vec<usize> = (0..l).map(|i| (i + 1) % l).collect();
        let permute = |d: &DimParams<f64>, order: &[usize]| match d {
            DimParams::Shared(g) => DimParams::Shared(g.clone()),
            DimParams::PerComponent(gs) => DimParams::PerComponent(order.iter().map(|&o| gs[o].clone()).collect()),
        };
        let theta = MixtureParameters {
            pi: kp.iter().map(|&a| lp.iter().map(|&b| inst.theta.pi[a][b]).collect()).collect(),
            alpha: inst.theta.alpha.iter().map(|d| permute(d, &kp)).collect(),
            beta: inst.theta.beta.iter().map(|d| permute(d, &lp)).collect(),
        };
        for p in &inst.data {
            let a = joint_log_density(p, &inst.m, &inst.theta);
            let b = joint_log_density(p, &inst.m, &theta);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn canonical_form_preserves_density_and_is_idempotent(seed in any::<u64>()) {
        let inst = instance(seed, 6);
        let rows: Vec<Vec<f64>> = inst.data.iter().map(|p| posterior(p, &inst.m, &inst.theta)).collect();
        let fuzzy = FuzzyPartition::from_rows(inst.m.k, inst.m.l, rows).unwrap();
        let (theta, fz, _) = canonicalize(&inst.m, &inst.theta, &fuzzy);
        for (i, p) in inst.data.iter().enumerate() {
            let a = joint_log_density(p, &inst.m, &inst.theta);
            let b = joint_log_density(p, &inst.m, &theta);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            let post = posterior(p, &inst.m, &theta);
            for (x, y) in post.iter().zip(fz.row(i)) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
        let (again, fz2, relabel) = canonicalize(&inst.m, &theta, &fz);
        prop_assert_eq!(&again, &theta);
        prop_assert_eq!(&fz2, &fz);
        prop_assert_eq!(relabel.pattern, (0..inst.m.k).collect::<Vec<_>>());
    }

    #[test]
    fn penalized_value_is_loglik_minus_penalty(seed in any::<u64>(), c in 0.1f64..5.0) {
        let inst = instance(seed, 10);
        let pl = penalized_log_likelihood(&inst.data, &inst.m, &inst.theta, c);
        let direct: f64 = inst.data.iter().map(|p| joint_log_density(p, &inst.m, &inst.theta)).sum();
        prop_assert!((pl.loglik - direct).abs() <= 1e-12 * direct.abs());
        prop_assert!((pl.penalty - inst.m.parameter_count() as f64 * c).abs() <= 1e-12 * pl.penalty);
        prop_assert!((pl.penalized - (pl.loglik - pl.penalty)).abs() <= 1e-9);
    }
}

#[test]
fn log_density_matches_dense_covariance_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let g = gaussian(&mut rng, 5, 1.0);
        let x: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        let dense = dense_log_density(&x, &g.mean, &g.var);
        assert!((g.log_density(&x) - dense).abs() < 1e-10);
    }
}

#[test]
fn joint_density_matches_linear_space_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sizes = vec![3, 3];
    for _ in 0..20 {
        let m = ModelStructure::full(2, 2, sizes.clone(), sizes.clone()).unwrap();
        let theta = MixtureParameters {
            pi: random_pi(&mut rng, 2, 2),
            alpha: (0..2).map(|_| block(&mut rng, true, 2, 3)).collect(),
            beta: (0..2).map(|_| block(&mut rng, true, 2, 3)).collect(),
        };
        let p = pair(&mut rng, 0, &sizes, &sizes);
        let phi = |g: &DiagGaussian<f64>, x: &[f64]| -> f64 {
            g.mean
                .iter()
                .zip(&g.var)
                .zip(x)
                .map(|((m, v), x)| {
                    (-(x - m).powi(2) / (2.0 * v)).exp() / (std::f64::consts::TAU * v).sqrt()
                })
                .product()
        };
        let mut density = 0.0;
        for k in 0..2 {
            for l in 0..2 {
                let mut term = theta.pi[k][l];
                for j in 0..2 {
                    term *= phi(theta.alpha[j].component(k), &p.y[j]);
                    term *= phi(theta.beta[j].component(l), &p.z[j]);
                }
                density += term;
            }
        }
        let ll = joint_log_density(&p, &m, &theta);
        assert!((ll - density.ln()).abs() <= 1e-9 * ll.abs());
    }
}

#[test]
fn irrelevant_dimensions_factor_out() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sizes = vec![3, 3, 3];
    let relevant = vec![true, false, false];
    let m = ModelStructure::new(
        2,
        3,
        relevant.clone(),
        relevant.clone(),
        sizes.clone(),
        sizes.clone(),
    )
    .unwrap();
    let theta = MixtureParameters {
        pi: random_pi(&mut rng, 2, 3),
        alpha: relevant.iter().map(|&r| block(&mut rng, r, 2, 3)).collect(),
        beta: relevant.iter().map(|&r| block(&mut rng, r, 3, 3)).collect(),
    };
    let reduced_m = ModelStructure::full(2, 3, vec![3], vec![3]).unwrap();
    let reduced = MixtureParameters {
        pi: theta.pi.clone(),
        alpha: vec![theta.alpha[0].clone()],
        beta: vec![theta.beta[0].clone()],
    };
    for i in 0..20 {
        let p = pair(&mut rng, i, &sizes, &sizes);
        let irrelevant: f64 = (1..3)
            .map(|j| {
                theta.alpha[j].component(0).log_density(&p.y[j])
                    + theta.beta[j].component(0).log_density(&p.z[j])
            })
            .sum();
        let q = CoefficientPair {
            y: vec![p.y[0].clone()],
            z: vec![p.z[0].clone()],
            signal_specs: vec![p.signal_specs[0]],
            residual_specs: vec![p.residual_specs[0]],
            ..p.clone()
        };
        let full = joint_log_density(&p, &m, &theta);
        let factored = irrelevant + joint_log_density(&q, &reduced_m, &reduced);
        assert!((full - factored).abs() <= 1e-10 * full.abs());
    }
}

#[test]
fn independent_mixing_makes_rules_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sizes = vec![3, 3];
    let m = ModelStructure::full(3, 2, sizes.clone(), sizes.clone()).unwrap();
    let rho = [0.2, 0.5, 0.3];
    let nu = [0.35, 0.65];
    let theta = MixtureParameters {
        pi: rho
            .iter()
            .map(|r| nu.iter().map(|v| r * v).collect())
            .collect(),
        alpha: (0..2).map(|_| block(&mut rng, true, 3, 3)).collect(),
        beta: (0..2).map(|_| block(&mut rng, true, 2, 3)).collect(),
    };
    for i in 0..1000 {
        let p = pair(&mut rng, i, &sizes, &sizes);
        let r = map_rules(&p, &m, &theta);
        assert_eq!((r.v, r.w), (r.v_marginal, r.w_marginal), "draw {i}");
    }
}

#[test]
fn parameter_counts_by_hand() {
    // (K, L, Ω, Γ, G, H, expected)
    let cases: Vec<(
        usize,
        usize,
        Vec<bool>,
        Vec<bool>,
        Vec<usize>,
        Vec<usize>,
        usize,
    )> = vec![
        // 0 + 2·3·1 + 2·3·1
        (1, 1, vec![true], vec![true], vec![3], vec![3], 12),
        // 3 + (2·6 + 10) + (6 + 2·10)
        (
            2,
            2,
            vec![true, false],
            vec![false, true],
            vec![3, 5],
            vec![3, 5],
            3 + 12 + 10 + 6 + 20,
        ),
        // 8 + 3·10 + 3·10
        (3, 3, vec![true], vec![true], vec![5], vec![5], 8 + 30 + 30),
        // 2 + (3·10 + 3·6) + (6 + 6)
        (
            3,
            1,
            vec![true, true],
            vec![true, true],
            vec![5, 3],
            vec![3, 3],
            2 + 30 + 18 + 6 + 6,
        ),
        // 7 + (2·10 + 6) + (6 + 4·10)
        (
            2,
            4,
            vec![true, false],
            vec![false, true],
            vec![5, 3],
            vec![3, 5],
            7 + 20 + 6 + 6 + 40,
        ),
    ];
    for (k, l, om, ga, g, h, expected) in cases {
        let m = ModelStructure::new(k, l, om, ga, g, h).unwrap();
        assert_eq!(m.parameter_count(), expected, "K={k} L={l}");
    }
}
