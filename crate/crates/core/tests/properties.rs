use proptest::prelude::*;

use spde_cpt::coords::{approx_coordinate, partial_qv, QuadraticVariation};
use spde_cpt::cpt::{kolmogorov_cdf, t_statistic};
use spde_cpt::dataset::FieldDataset;
use spde_cpt::estimation::{fit_methodology_b, methodology_b};
use spde_cpt::harness::{run_experiment, run_replication, ExperimentConfig, SweepPoint};
use spde_cpt::model::{NoiseSpec, OperatorParams, SpaceTimeGrid, ThinningPlan, VolatilityProfile};
use spde_cpt::simulate::{assemble_field, simulate_coefficients, InitialState, ModeSet, SimulationConfig};

proptest! {
    #[test]
    fn t_n_is_nonnegative_and_scale_free(
        inc in prop::collection::vec(-5.0f64..5.0, 2..60),
        c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
    ) {
        let qv = QuadraticVariation::from_increments(&inc);
        prop_assume!(qv.total() > 1e-6);
        let t = t_statistic(&qv, qv.total()).unwrap();
        prop_assert!(t.t_n >= 0.0);
        prop_assert!((1..=inc.len()).contains(&t.k_star));
        let scaled: Vec<f64> = inc.iter().map(|v| c * v).collect();
        let qs = QuadraticVariation::from_increments(&scaled);
        let ts = t_statistic(&qs, qs.total()).unwrap();
        prop_assert!((ts.t_n - t.t_n).abs() <= 1e-9 * t.t_n.max(1.0));
    }

    #[test]
    fn kolmogorov_cdf_is_a_cdf(x in 0.0f64..6.0, dx in 1e-6f64..1.0) {
        let (a, b) = (kolmogorov_cdf(x), kolmogorov_cdf(x + dx));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a);
    }
}

#[test]
fn power_grows_with_n_under_a_change() {
    let cfg = ExperimentConfig::fast(SweepPoint::situation2(&[1.4]).unwrap(), vec![100, 400], 200, 77);
    let res = run_experiment(&cfg).unwrap();
    let mut t100 = res.t_values("sigma2=1.4", 100);
    let mut t400 = res.t_values("sigma2=1.4", 400);
    t100.sort_by(f64::total_cmp);
    t400.sort_by(f64::total_cmp);
    assert!(t400[100] > t100[100], "{} vs {}", t400[100], t100[100]);
}

#[test]
fn situation2_replications_reject() {
    let cfg = ExperimentConfig::fast(SweepPoint::situation2(&[1.8]).unwrap(), vec![400], 50, 3);
    let rejected = (0..50).filter(|&r| run_replication(&cfg, 0, r).unwrap().results[0].reject).count();
    assert!(rejected >= 49, "{rejected} of 50");
}

#[test]
fn power_is_monotone_in_effect_and_n_for_most_seeds() {
    let mut effect = Vec::new();
    let mut growth = Vec::new();
    for seed in 0..5 {
        let cfg = ExperimentConfig::fast(SweepPoint::situation2(&[1.2, 1.4]).unwrap(), vec![100, 200], 200, 1000 + seed);
        let t = run_experiment(&cfg).unwrap().table;
        let p = |l: &str, n| t.get(l, n).unwrap().power;
        effect.push(p("sigma2=1.4", 200) - p("sigma2=1.2", 200));
        growth.push(p("sigma2=1.4", 200) - p("sigma2=1.4", 100));
    }
    effect.sort_by(f64::total_cmp);
    growth.sort_by(f64::total_cmp);
    assert!(effect[2] > 0.0 && growth[2] > 0.0, "{effect:?} {growth:?}");
}

#[test]
fn null_size_within_binomial_band() {
    let reps = 1000;
    let cfg = ExperimentConfig::fast(SweepPoint::situation1(), vec![200], reps, 4242);
    let p = run_experiment(&cfg).unwrap().table.rows[0].power;
    let half = 2.576 * (0.05f64 * 0.95 / reps as f64).sqrt();
    assert!((p - 0.05).abs() <= half, "{p}");
}

#[test]
fn saved_dataset_gives_the_same_pipeline() {
    let cfg = SimulationConfig {
        params: OperatorParams::new_1d(0.0, 0.2, 0.2).unwrap(),
        noise: NoiseSpec::cylindrical(),
        profile: VolatilityProfile::single_change(0.5, 1.0, 1.8).unwrap(),
        n_time: 400,
        modes: ModeSet::new(vec![200]).unwrap(),
        seed: 8,
        replication: 0,
        initial: InitialState::Zero,
    };
    let ds = assemble_field(&simulate_coefficients(&cfg).unwrap(), &SpaceTimeGrid::new(400, vec![100]).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.spde");
    ds.save(&path).unwrap();
    let back = FieldDataset::load(&path).unwrap();
    assert_eq!(back.values(), ds.values());

    let plan = ThinningPlan::new(0.1, 16, 400).unwrap();
    let est = fit_methodology_b(&back, &plan, &methodology_b::default_box()).unwrap();
    assert!((est.kappa_hat - 1.0).abs() < 0.5, "{est:?}");
    let x = approx_coordinate(&back, &[1], &[est.kappa_hat], &plan).unwrap();
    let qv = partial_qv(&x).unwrap();
    assert!(t_statistic(&qv, est.v_hat).unwrap().t_n > 1.3581);
}
