use funbipart::basis::{CoefficientPair, FourierBasis};
use funbipart::em::{
    e_step, grid_search, m_step, run_em, CoefficientSet, EmConfig, PenaltyConstant,
};
use funbipart::metrics::adjusted_rand_index;
use funbipart::mixture::{posterior, DimParams, FuzzyPartition};
use funbipart::simulate::{self, SimDesign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

fn pair(id: usize, y: Vec<Vec<f64>>, z: Vec<Vec<f64>>) -> CoefficientPair<f64> {
    let spec = |g: usize| FourierBasis::new((g - 1) / 2, 40.0).unwrap();
    CoefficientPair {
        subject_id: format!("s{id}"),
        signal_specs: y.iter().map(|b| spec(b.len())).collect(),
        residual_specs: z.iter().map(|b| spec(b.len())).collect(),
        y,
        z,
        period_frames: 40.0,
    }
}

/// `n` subjects from a K×L mixture with `dims` dimensions of size 3; the
/// component means sit `sep` standard deviations apart on every coordinate.
fn mixture_data(
    seed: u64,
    n: usize,
    dims: usize,
    k: usize,
    l: usize,
    sep: f64,
) -> (Vec<CoefficientPair<f64>>, Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y_means: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            (0..dims * 3)
                .map(|_| sep * c as f64 + rng.random_range(-0.3..0.3))
                .collect()
        })
        .collect();
    let z_means: Vec<Vec<f64>> = (0..l)
        .map(|c| {
            (0..dims * 3)
                .map(|_| sep * c as f64 + rng.random_range(-0.3..0.3))
                .collect()
        })
        .collect();
    let mut v = Vec::new();
    let mut w = Vec::new();
    let data = (0..n)
        .map(|i| {
            let (a, b) = (rng.random_range(0..k), rng.random_range(0..l));
            v.push(a);
            w.push(b);
            let mut draw = |mean: &[f64]| -> Vec<Vec<f64>> {
                mean.chunks(3)
                    .map(|c| {
                        c.iter()
                            .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect()
            };
            let y = draw(&y_means[a]);
            let z = draw(&z_means[b]);
            pair(i, y, z)
        })
        .collect();
    (data, v, w)
}

fn quick(seed: u64) -> EmConfig {
    EmConfig {
        n_starts: 6,
        n_finalists: 2,
        short_run_iter: 5,
        seed,
        ..EmConfig::default()
    }
}

fn penalized(
    data: &CoefficientSet<'_, f64>,
    fuzzy: &FuzzyPartition<f64>,
    c: f64,
    select: bool,
) -> (FuzzyPartition<f64>, f64) {
    let step = m_step(data, fuzzy, c, select).unwrap();
    let (next, ll) = e_step(data, &step.structure, &step.theta);
    (next, ll - step.structure.parameter_count() as f64 * c)
}

#[test]
fn every_iteration_is_monotone() {
    for seed in 0..100 {
        let (pairs, _, _) = mixture_data(seed, 60, 3, 2, 2, 1.5);
        let data = CoefficientSet::new(&pairs).unwrap();
        let c = (60f64).ln() / 2.0;
        // hand-driven chain from a random fuzzy partition
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let d: Vec<f64> = (0..4).map(|_| rng.sample(Exp1)).collect();
                let s: f64 = d.iter().sum();
                d.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let (mut fuzzy, mut prev) = penalized(
            &data,
            &FuzzyPartition::from_rows(2, 2, rows).unwrap(),
            c,
            false,
        );
        for _ in 0..40 {
            let (next, value) = penalized(&data, &fuzzy, c, true);
            assert!(value - prev >= -1e-8, "seed {seed}: {prev} -> {value}");
            fuzzy = next;
            prev = value;
        }
        // and the trace of the driver's winning chain
        let fit = run_em(&pairs, 2, 2, &quick(seed)).unwrap();
        assert!(
            fit.trace.windows(2).all(|w| w[1] - w[0] >= -1e-8),
            "seed {seed}"
        );
        assert!((fit.penalized - (fit.loglik - fit.penalty)).abs() <= 1e-9);
    }
}

#[test]
fn fits_are_deterministic() {
    let (pairs, _, _) = mixture_data(1, 80, 2, 2, 2, 3.0);
    let a = run_em(&pairs, 2, 2, &quick(5)).unwrap();
    let b = run_em(&pairs, 2, 2, &quick(5)).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let c = pool.install(|| run_em(&pairs, 2, 2, &quick(5)).unwrap());
    assert_eq!(a, c);
}

#[test]
fn subject_order_does_not_matter() {
    let (pairs, _, _) = mixture_data(2, 90, 2, 2, 3, 2.5);
    let fit = run_em(&pairs, 2, 3, &quick(3)).unwrap();
    let order: Vec<usize> = (0..pairs.len()).map(|i| (i * 37) % pairs.len()).collect();
    let shuffled: Vec<CoefficientPair<f64>> = order.iter().map(|&i| pairs[i].clone()).collect();
    let other = run_em(&shuffled, 2, 3, &quick(3)).unwrap();
    assert_eq!(fit.structure, other.structure);
    let flat = |d: &DimParams<f64>| -> Vec<f64> {
        match d {
            DimParams::Shared(g) => g.mean.iter().chain(&g.var).copied().collect(),
            DimParams::PerComponent(gs) => gs
                .iter()
                .flat_map(|g| g.mean.iter().chain(&g.var).copied())
                .collect(),
        }
    };
    for (a, b) in fit
        .theta
        .alpha
        .iter()
        .chain(&fit.theta.beta)
        .zip(other.theta.alpha.iter().chain(&other.theta.beta))
    {
        for (x, y) in flat(a).iter().zip(flat(b)) {
            assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }
    for (new_i, &old_i) in order.iter().enumerate() {
        for (x, y) in other.fuzzy.row(new_i).iter().zip(fit.fuzzy.row(old_i)) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
}

#[test]
fn selection_is_a_fixed_point_at_convergence() {
    for seed in 0..5 {
        let design = SimDesign::new(150, 0.05, 3, seed);
        let sample = simulate::generate(&design).unwrap();
        let pairs = simulate::decompose_sample(&sample, &design).unwrap();
        let fit = run_em(
            &pairs,
            3,
            3,
            &EmConfig {
                seed,
                ..quick(seed)
            },
        )
        .unwrap();
        assert!(fit.converged);
        let data = CoefficientSet::new(&pairs).unwrap();
        let again = m_step(&data, &fit.fuzzy, fit.c, true).unwrap();
        assert_eq!(again.structure.omega, fit.structure.omega, "seed {seed}");
        assert_eq!(again.structure.gamma, fit.structure.gamma, "seed {seed}");
    }
}

#[test]
fn e_step_agrees_with_posterior() {
    let (pairs, _, _) = mixture_data(3, 40, 2, 2, 2, 2.0);
    let fit = run_em(&pairs, 2, 2, &quick(1)).unwrap();
    let data = CoefficientSet::new(&pairs).unwrap();
    let (fuzzy, _) = e_step(&data, &fit.structure, &fit.theta);
    for (i, p) in pairs.iter().enumerate() {
        for (a, b) in fuzzy
            .row(i)
            .iter()
            .zip(posterior(p, &fit.structure, &fit.theta))
        {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn far_components_give_confident_posteriors() {
    let (pairs, v, w) = mixture_data(4, 60, 2, 2, 2, 20.0);
    let fit = run_em(&pairs, 2, 2, &quick(2)).unwrap();
    for i in 0..pairs.len() {
        let (k, l) = (fit.v_hat[i], fit.w_hat[i]);
        assert!(fit.fuzzy.get(i, k, l) > 0.999);
    }
    assert_eq!(adjusted_rand_index(&fit.v_hat, &v).unwrap(), 1.0);
    assert_eq!(adjusted_rand_index(&fit.w_hat, &w).unwrap(), 1.0);
}

#[test]
fn m_step_is_a_local_optimum() {
    let (pairs, _, _) = mixture_data(5, 50, 2, 2, 2, 1.0);
    let data = CoefficientSet::new(&pairs).unwrap();
    let fit = run_em(&pairs, 2, 2, &quick(4)).unwrap();
    let step = m_step(&data, &fit.fuzzy, fit.c, false).unwrap();
    let weights: Vec<Vec<f64>> = (0..2)
        .map(|k| {
            (0..pairs.len())
                .map(|i| fit.fuzzy.pattern_marginal(i)[k])
                .collect()
        })
        .collect();
    for j in 0..2 {
        let DimParams::PerComponent(gs) = &step.theta.alpha[j] else {
            panic!("all dimensions relevant")
        };
        for (k, g) in gs.iter().enumerate() {
            let expected = |g: &funbipart::mixture::DiagGaussian<f64>| -> f64 {
                pairs
                    .iter()
                    .zip(&weights[k])
                    .map(|(p, w)| w * g.log_density(&p.y[j]))
                    .sum()
            };
            let base = expected(g);
            for c in 0..g.dim() {
                for f in [0.99, 1.01] {
                    let mut m = g.clone();
                    m.mean[c] = if m.mean[c] == 0.0 {
                        f - 1.0
                    } else {
                        m.mean[c] * f
                    };
                    assert!(expected(&m) <= base + 1e-9);
                    let mut v = g.clone();
                    v.var[c] *= f;
                    assert!(expected(&v) <= base + 1e-9);
                }
            }
        }
    }
}

#[test]
fn grid_of_one_cell_is_the_single_component_fit() {
    let (pairs, _, _) = mixture_data(6, 30, 2, 1, 1, 0.0);
    let fit = grid_search(&pairs, 1, 1, &quick(0)).unwrap();
    assert_eq!((fit.structure.k, fit.structure.l), (1, 1));
    assert_eq!(fit.bic_trace.len(), 1);
    assert!(fit
        .structure
        .omega
        .iter()
        .chain(&fit.structure.gamma)
        .all(|&b| b));
}

#[test]
fn bic_prefers_one_component_for_homogeneous_data() {
    let (pairs, _, _) = mixture_data(7, 200, 2, 1, 1, 0.0);
    let fit = grid_search(&pairs, 3, 3, &quick(1)).unwrap();
    assert_eq!((fit.structure.k, fit.structure.l), (1, 1));
    assert_eq!(fit.bic_trace.len(), 9);
}

#[test]
fn bic_recovers_two_by_three_structure() {
    let reps = 25;
    let mut hits = 0;
    for seed in 0..reps {
        let (pairs, _, _) = mixture_data(100 + seed, 400, 3, 2, 3, 3.0);
        let config = EmConfig {
            n_starts: 10,
            seed,
            ..EmConfig::default()
        };
        let fit = grid_search(&pairs, 3, 3, &config).unwrap();
        hits += usize::from((fit.structure.k, fit.structure.l) == (2, 3));
    }
    assert!(hits * 2 > reps as usize, "{hits}/{reps}");
}

#[test]
fn simulated_partitions_are_recovered_at_n400() {
    let reps = 25;
    let mut good = 0;
    for rep in 0..reps {
        let design = SimDesign::new(400, 0.0, 0, 1000 + rep);
        let sample = simulate::generate(&design).unwrap();
        let pairs = simulate::decompose_sample(&sample, &design).unwrap();
        let fit = run_em(
            &pairs,
            3,
            3,
            &EmConfig {
                seed: rep,
                ..EmConfig::default()
            },
        )
        .unwrap();
        let av = adjusted_rand_index(&fit.v_hat, &sample.true_v).unwrap();
        let aw = adjusted_rand_index(&fit.w_hat, &sample.true_w).unwrap();
        good += usize::from(av > 0.9 && aw > 0.9);
    }
    assert!(good * 10 >= 9 * reps as usize, "{good}/{reps}");
}

#[test]
fn fixed_penalty_is_used_verbatim() {
    let (pairs, _, _) = mixture_data(8, 40, 2, 2, 2, 2.0);
    let fit = run_em(
        &pairs,
        2,
        2,
        &EmConfig {
            c: PenaltyConstant::Fixed(1.5),
            ..quick(0)
        },
    )
    .unwrap();
    assert_eq!(fit.c, 1.5);
    assert!((fit.penalty - 1.5 * fit.structure.parameter_count() as f64).abs() < 1e-12);
}
