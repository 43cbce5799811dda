use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wframe::checks::random_problem;
use wframe::metrics::{empirical_w2_1d, response_distance};
use wframe::oracle::{brute_force_w2, finite_diff_grad, relative_error};
use wframe::sampler::{langevin_step, ChainState, InitKind, SamplerConfig};
use wframe::{clip_weights, frame_update, wframe_update, FilterBank, FrameError, GridSignal};

fn problem(seed: u64) -> (FilterBank, GridSignal) {
    random_problem(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn signal_like(x: &GridSignal, values: &[f64]) -> GridSignal {
    GridSignal::new(x.shape().to_vec(), values.to_vec()).unwrap()
}

fn batch(x: &GridSignal, rows: &[Vec<f64>]) -> Vec<GridSignal> {
    rows.iter()
        .map(|r| signal_like(x, &r.iter().cycle().take(x.len()).copied().collect::<Vec<_>>()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_is_linear_in_weights(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let (bank, x) = problem(seed);
        let t1 = bank.theta().to_vec();
        let t2: Vec<f64> = t1.iter().map(|v| 0.5 - v * v).collect();
        let mixed: Vec<f64> = t1.iter().zip(&t2).map(|(p, q)| a * p + b * q).collect();
        let lhs = bank.with_theta(mixed).unwrap().energy(&x).unwrap();
        let rhs = a * bank.energy(&x).unwrap() + b * bank.with_theta(t2.clone()).unwrap().energy(&x).unwrap();
        let responses = bank.grad_theta_energy(&x).unwrap();
        let scale = 1.0 + responses
            .iter()
            .zip(t1.iter().zip(&t2))
            .map(|(f, (p, q))| f * ((a * p).abs() + (b * q).abs()))
            .sum::<f64>();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
    }

    #[test]
    fn grad_x_matches_central_differences(seed in any::<u64>()) {
        let (bank, x) = problem(seed);
        let h = 1e-5;
        let reach = bank.filters().iter().flat_map(|f| f.kernel().values()).fold(0.0f64, |m, v| m.max(v.abs())) * h;
        prop_assume!(bank.kink_margin(&x).unwrap() > 10.0 * reach);
        let fd = finite_diff_grad(|v| bank.energy(&signal_like(&x, v)).unwrap(), x.values(), h);
        prop_assert!(relative_error(bank.grad_x_energy(&x).unwrap().values(), &fd) < 1e-5);
    }

    #[test]
    fn gram_identity(seed in any::<u64>()) {
        let (bank, x) = problem(seed);
        let gram = bank.gram_matrix(&x).unwrap();
        let k = bank.len();
        let two_g_theta: Vec<f64> = (0..k)
            .map(|i| 2.0 * (0..k).map(|j| gram[i * k + j] * bank.theta()[j]).sum::<f64>())
            .collect();
        let analytic = bank.grad_theta_sq_grad_norm(&x).unwrap();
        let fd = finite_diff_grad(
            |t| bank.with_theta(t.to_vec()).unwrap().grad_x_energy(&x).unwrap().norm_sq(),
            bank.theta(),
            1e-3,
        );
        prop_assert!(relative_error(&analytic, &two_g_theta) < 1e-12);
        prop_assert!(relative_error(&analytic, &fd) < 1e-6);
    }

    #[test]
    fn log_density_is_quadratic_along_segments(seed in any::<u64>(), step in 1e-4..1e-2f64) {
        let (bank, x) = problem(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let dir: Vec<f64> = (0..x.len()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let points: Vec<GridSignal> = (0..6)
            .map(|i| signal_like(&x, &x.values().iter().zip(&dir).map(|(a, d)| a + step * i as f64 * d).collect::<Vec<_>>()))
            .collect();
        let pattern = bank.activation_pattern(&x).unwrap();
        prop_assume!(points.iter().all(|p| bank.activation_pattern(p).unwrap() == pattern));
        let logp: Vec<f64> = points.iter().map(|p| bank.log_density_unnorm(p).unwrap()).collect();
        let second: Vec<f64> = logp.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect();
        // inside one pattern only the reference term curves: -|step d|^2 / ref_variance
        let expected = -step * step * dir.iter().map(|d| d * d).sum::<f64>() / bank.ref_variance();
        for s in second {
            prop_assert!((s - expected).abs() < 1e-8, "{s} vs {expected}");
        }
    }

    #[test]
    fn response_distance_is_a_pseudometric(seed in any::<u64>(), rows in proptest::collection::vec(proptest::collection::vec(-2.0..2.0f64, 4), 6)) {
        let (bank, x) = problem(seed);
        let all = batch(&x, &rows);
        let (a, b, c) = (&all[0..2], &all[2..4], &all[4..6]);
        let ab = response_distance(&bank, a, b).unwrap();
        let ba = response_distance(&bank, b, a).unwrap();
        let ac = response_distance(&bank, a, c).unwrap();
        let cb = response_distance(&bank, c, b).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert_eq!(response_distance(&bank, a, a).unwrap(), 0.0);
        let scaled = bank.with_theta(bank.theta().iter().map(|t| -7.5 * t).collect()).unwrap();
        prop_assert_eq!(response_distance(&scaled, a, b).unwrap(), ab);
    }

    #[test]
    fn w2_matches_exhaustive_search(pairs in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..=6)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let fast = empirical_w2_1d(&a, &b).unwrap();
        prop_assert!((fast - brute_force_w2(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn w2_is_a_metric_on_sorted_samples(
        v in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..=8),
    ) {
        let a: Vec<f64> = v.iter().map(|t| t.0).collect();
        let b: Vec<f64> = v.iter().map(|t| t.1).collect();
        let c: Vec<f64> = v.iter().map(|t| t.2).collect();
        let ab = empirical_w2_1d(&a, &b).unwrap();
        prop_assert_eq!(ab, empirical_w2_1d(&b, &a).unwrap());
        prop_assert!(ab <= empirical_w2_1d(&a, &c).unwrap() + empirical_w2_1d(&c, &b).unwrap() + 1e-12);
        let mut shuffled = a.clone();
        shuffled.reverse();
        prop_assert_eq!(empirical_w2_1d(&a, &shuffled).unwrap(), 0.0);
        let mut sa = a.clone();
        let mut sb = b.clone();
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        prop_assert_eq!(ab == 0.0, sa == sb);
    }

    #[test]
    fn zero_beta_is_frame(
        v in proptest::collection::vec((-9.0..9.0f64, -9.0..9.0f64, -9.0..9.0f64, -9.0..9.0f64, -9.0..9.0f64), 1..10),
        gamma in 0.0..=1.0f64,
        lambda in 0.0..1.0f64,
    ) {
        let col = |f: fn(&(f64, f64, f64, f64, f64)) -> f64| v.iter().map(f).collect::<Vec<f64>>();
        let (theta, h_obs, h_syn, p_t, p_prev) = (col(|t| t.0), col(|t| t.1), col(|t| t.2), col(|t| t.3), col(|t| t.4));
        let frame = frame_update(&theta, &h_obs, &h_syn, lambda).unwrap();
        let wframe = wframe_update(&theta, &h_obs, &h_syn, &p_t, &p_prev, gamma, 0.0, lambda).unwrap();
        prop_assert_eq!(frame, wframe);
    }

    #[test]
    fn frame_update_ascends(
        v in proptest::collection::vec((-9.0..9.0f64, -9.0..9.0f64, -9.0..9.0f64), 1..10),
        lambda in 1e-3..1.0f64,
    ) {
        let theta: Vec<f64> = v.iter().map(|t| t.0).collect();
        let h_obs: Vec<f64> = v.iter().map(|t| t.1).collect();
        let h_syn: Vec<f64> = v.iter().map(|t| t.2).collect();
        let gap: Vec<f64> = h_obs.iter().zip(&h_syn).map(|(a, b)| a - b).collect();
        prop_assume!(gap.iter().any(|g| g.abs() > 1e-6));
        let next = frame_update(&theta, &h_obs, &h_syn, lambda).unwrap();
        let dot = |t: &[f64]| t.iter().zip(&gap).map(|(a, b)| a * b).sum::<f64>();
        prop_assert!(dot(&next) > dot(&theta));
    }

    #[test]
    fn clipping_is_idempotent(theta in proptest::collection::vec(-10.0..10.0f64, 0..12), lo in -5.0..0.0f64, width in 0.0..5.0f64) {
        let bounds = Some((lo, lo + width));
        let once = clip_weights(&theta, bounds);
        prop_assert_eq!(clip_weights(&once, bounds), once.clone());
        prop_assert!(once.iter().all(|t| *t >= lo && *t <= lo + width));
        prop_assert_eq!(clip_weights(&theta, None), theta);
    }
}

#[test]
fn gram_diagonal_is_field_energy() {
    let (bank, x) = problem(3);
    let fields = bank.filter_grad_fields(&x).unwrap();
    let gram = bank.gram_matrix(&x).unwrap();
    for (k, g) in fields.iter().enumerate() {
        assert_relative_eq!(gram[k * bank.len() + k], g.norm_sq(), max_relative = 1e-14);
    }
}

#[test]
fn chains_are_independent_of_thread_count() {
    let (bank, _) = problem(21);
    let shape = bank.filters()[0].kernel().shape().iter().map(|k| k + 5).collect::<Vec<_>>();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut chains = ChainState::initialize(&shape, 7, 99, InitKind::Gaussian { std: 1.0 }).unwrap();
            let cfg = SamplerConfig { delta: 0.3, ..SamplerConfig::default() };
            for _ in 0..40 {
                langevin_step(&mut chains, &bank, &cfg).unwrap();
            }
            chains
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn reference_drift_diverges_past_the_stability_threshold() {
    let (bank, _) = problem(5);
    let flat = bank.with_theta(vec![0.0; bank.len()]).unwrap();
    let shape = flat.filters()[0].kernel().shape().iter().map(|k| k + 3).collect::<Vec<_>>();
    // |1 - delta^2 / (2 sigma^2)| >= 1 exactly when delta^2 >= 4 sigma^2
    let sigma = flat.ref_variance().sqrt();
    let unstable = SamplerConfig { delta: 2.0 * sigma * 1.05, ..SamplerConfig::default() };
    let mut chains = ChainState::initialize(&shape, 2, 1, InitKind::Gaussian { std: 1.0 }).unwrap();
    let err = (0..100_000).find_map(|_| langevin_step(&mut chains, &flat, &unstable).err());
    assert!(matches!(err, Some(FrameError::Diverged { .. })), "{err:?}");

    let stable = SamplerConfig { delta: 2.0 * sigma * 0.9, ..SamplerConfig::default() };
    let mut chains = ChainState::initialize(&shape, 2, 1, InitKind::Gaussian { std: 1.0 }).unwrap();
    for _ in 0..5000 {
        langevin_step(&mut chains, &flat, &stable).unwrap();
    }
}
