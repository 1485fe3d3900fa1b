use proptest::prelude::*;
use ziacd::distributions::{Family, FamilyTag};
use ziacd::estimation::{aic_value, fit, log_likelihood, FitOptions, StaticParams};
use ziacd::evaluation::{diebold_mariano, forecast_scores_with, interval_log_score};
use ziacd::gas::{reparam_score, run_filter, GasCoefficients, GasModel, LinkTag, ScalingTag};
use ziacd::simulation::{exp_floor_inverse, exp_floor_reparam, rng_for, simulate_path, SimDesign};

fn zinb_design(n_obs: usize, seed: u64) -> SimDesign {
    SimDesign {
        family: Family::ZiNegBinomial {
            alpha: 1.5,
            pi: 0.35,
        },
        coeffs: GasCoefficients::new(0.05, 0.95, 0.08),
        scaling: ScalingTag::Unit,
        link: LinkTag::Log,
        n_obs,
        n_reps: 1,
        rounding: None,
        seed,
    }
}

fn zinb_sample(n_obs: usize, seed: u64) -> Vec<f64> {
    simulate_path(&zinb_design(n_obs, seed), &mut rng_for(seed, 0))
        .unwrap()
        .x
}

fn count_family() -> impl Strategy<Value = Family> {
    prop_oneof![
        Just(Family::Poisson),
        Just(Family::Geometric),
        (0.01f64..4.0).prop_map(|alpha| Family::NegBinomial { alpha }),
        (0.0f64..0.9).prop_map(|pi| Family::ZiPoisson { pi }),
        (0.0f64..0.9).prop_map(|pi| Family::ZiGeometric { pi }),
        (0.01f64..4.0, 0.0f64..0.9).prop_map(|(alpha, pi)| Family::ZiNegBinomial { alpha, pi }),
    ]
}

fn scaling() -> impl Strategy<Value = ScalingTag> {
    prop_oneof![
        Just(ScalingTag::Unit),
        Just(ScalingTag::InvSqrtFisher),
        Just(ScalingTag::InvFisher)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_is_deterministic(seed in 0u64..1000, family in count_family(), scaling in scaling()) {
        let xs = zinb_sample(300, seed);
        let model = GasModel::new(family, scaling, LinkTag::Log);
        let k = GasCoefficients::new(0.02, 0.9, 0.05);
        let a = run_filter(&xs, &model, &k, 1.0).unwrap();
        let b = run_filter(&xs, &model, &k, 1.0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn score_sign_follows_the_residual(x in 1u32..200, f in -3.0f64..4.0, family in count_family(), scaling in scaling()) {
        let model = GasModel::new(family, scaling, LinkTag::Log);
        let s = reparam_score(&model, x as f64, f).unwrap();
        let resid = x as f64 - f.exp();
        prop_assert!(s.signum() == resid.signum() || resid == 0.0);
    }

    #[test]
    fn zinb_without_inflation_scores_like_nb(x in 0u32..200, f in -3.0f64..4.0, alpha in 0.01f64..4.0) {
        let zi = GasModel::new(Family::ZiNegBinomial { alpha, pi: 0.0 }, ScalingTag::Unit, LinkTag::Log);
        let nb = GasModel::new(Family::NegBinomial { alpha }, ScalingTag::Unit, LinkTag::Log);
        let a = reparam_score(&zi, x as f64, f).unwrap();
        let b = reparam_score(&nb, x as f64, f).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn constant_recursion_contracts(c in -1.0f64..1.0, b in -0.95f64..0.95, f1 in -5.0f64..5.0) {
        let model = GasModel::new(Family::Geometric, ScalingTag::Unit, LinkTag::Log);
        let k = GasCoefficients::new(c, b, 0.0);
        let xs = vec![1.0; 1000];
        let path = run_filter(&xs, &model, &k, f1).unwrap();
        prop_assert!((path.f_next - c / (1.0 - b)).abs() < 1e-10);
    }

    #[test]
    fn filter_terms_sum_to_the_likelihood(seed in 0u64..1000, family in count_family(), scaling in scaling()) {
        let xs = zinb_sample(200, seed);
        let p = StaticParams::new(family, scaling, LinkTag::Log, GasCoefficients::new(0.02, 0.9, 0.05));
        let path = run_filter(&xs, &p.model(), &p.coeffs, 0.7).unwrap();
        let ll = log_likelihood(&xs, &p, 0.7).unwrap();
        prop_assert_eq!(path.loglik_sum() / xs.len() as f64, ll);
    }

    #[test]
    fn out_of_sample_scores_are_filter_terms(seed in 0u64..1000, split in 10usize..190) {
        let xs = zinb_sample(200, seed);
        let p = StaticParams::new(
            Family::ZiNegBinomial { alpha: 1.2, pi: 0.3 },
            ScalingTag::Unit,
            LinkTag::Log,
            GasCoefficients::new(0.05, 0.95, 0.08),
        );
        let path = run_filter(&xs, &p.model(), &p.coeffs, 1.0).unwrap();
        let fc = forecast_scores_with(&xs[..split], &xs[split..], &p, 1.0).unwrap();
        for r in &fc {
            prop_assert_eq!(r.log_score, path.loglik_terms[split + r.index]);
        }
    }

    #[test]
    fn dm_is_antisymmetric_and_shift_invariant(
        a in prop::collection::vec(-10.0f64..0.0, 3..200),
        shift in -5.0f64..5.0,
        noise in 0.01f64..2.0,
    ) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + noise * ((i * 7919 % 13) as f64 - 6.0) / 6.0).collect();
        let Ok(ab) = diebold_mariano(&a, &b) else { return Ok(()) };
        let ba = diebold_mariano(&b, &a).unwrap();
        prop_assert_eq!(ab.statistic, -ba.statistic);
        let a2: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let b2: Vec<f64> = b.iter().map(|v| v + shift).collect();
        let shifted = diebold_mariano(&a2, &b2).unwrap();
        prop_assert!((shifted.statistic - ab.statistic).abs() <= 1e-9 * ab.statistic.abs().max(1.0));
    }

    #[test]
    fn interval_scores_form_a_distribution(
        f in -1.0f64..2.5,
        psi in 0.3f64..4.0,
        phi in 0.4f64..3.0,
    ) {
        for family in [Family::Exponential, Family::Weibull { phi }, Family::Gamma { psi }, Family::GenGamma { psi, phi }] {
            let mut total = 0.0;
            for k in 0..20_000 {
                let ls = interval_log_score(k as f64 + 0.5, &family, f, LinkTag::Log).unwrap();
                prop_assert!(ls <= 0.0);
                total += ls.exp();
                if ls < -800.0 { break; }
            }
            prop_assert!((total - 1.0).abs() < 1e-9, "{:?}: {}", family, total);
        }
    }

    #[test]
    fn exp_floor_round_trip(beta in 1e-3f64..1e3) {
        let mu = exp_floor_reparam(beta).unwrap();
        let back = exp_floor_inverse(mu).unwrap();
        prop_assert!((back - beta).abs() <= 1e-12 * beta);
    }

    #[test]
    fn simulation_is_seed_deterministic(seed in 0u64..10_000) {
        let d = zinb_design(300, seed);
        let a = simulate_path(&d, &mut rng_for(seed, 3)).unwrap();
        let b = simulate_path(&d, &mut rng_for(seed, 3)).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn fits_are_stationary_monotone_and_idempotent(seed in 0u64..1000, tag in prop::sample::select(FamilyTag::DISCRETE.to_vec())) {
        let xs = zinb_sample(1500, seed);
        let options = FitOptions { std_errors: false, ..FitOptions::default() };
        let first = fit(&xs, tag, ScalingTag::Unit, LinkTag::Log, None, &options).unwrap();
        let n = xs.len() as f64;
        let tr = &first.optimizer_trace;
        prop_assert!(tr.max_abs_gradient < 1e-4 * (n * first.loglik).abs().max(1.0));
        prop_assert!(first.loglik >= tr.init_loglik);
        prop_assert_eq!(first.aic, aic_value(first.q(), xs.len(), first.loglik));
        prop_assert_eq!(first.aic, 2.0 * first.q() as f64 - 2.0 * n * first.loglik);

        let again = fit(&xs, tag, ScalingTag::Unit, LinkTag::Log, Some(first.params), &options).unwrap();
        prop_assert!(again.loglik >= first.loglik - 1e-9);
        for (a, b) in first.estimates().iter().zip(again.estimates()) {
            prop_assert!((a - b).abs() < 1e-6 * a.abs().max(1.0), "{:?} vs {:?}", first.estimates(), again.estimates());
        }
    }
}
