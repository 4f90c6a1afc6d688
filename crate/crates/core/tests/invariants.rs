use delayshare::analysis::{alpha_k, chernoff_kl_tail, hoeffding_tail, ratio_r, scs_expected_maxdelay_closed_form};
use delayshare::evaluate::{
    check_dominance, check_sp_exhaustive, count_sampled_manipulations, estimate_delay, grid_profiles, Dominance,
    ManipulationDraw, Objective, ProfileBatch,
};
use delayshare::evolve::{evolve_run, prune, random_monotone_genome, strict_filter, GaConfig, Variant};
use delayshare::rng::keyed_rng;
use delayshare::{
    check_outcome, group_based_run, multiple_deadline_run, optimal_deadline, optimal_deadline_run, scs_run,
    single_deadline_run, DistributionSpec, Genome, Grouping, Mechanism,
};
use proptest::prelude::*;

fn profile(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, 1..=max_n)
}

fn same(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

/// `P(B <= k)` for `B ~ Bin(n, p)` by summing the pmf.
fn binomial_cdf(n: usize, p: f64, k: usize) -> f64 {
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut total = pmf;
    for j in 0..k {
        pmf *= (n - j) as f64 / (j + 1) as f64 * p / (1.0 - p);
        total += pmf;
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn optimal_deadline_is_smallest_funded_deadline(values in profile(10)) {
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut want: f64 = 1.0;
        for k in 1..=sorted.len() {
            if sorted[k - 1] > 0.0 {
                want = want.min(1.0 / (k as f64 * sorted[k - 1]));
            }
        }
        prop_assert!((optimal_deadline(&values) - want).abs() <= 1e-12);
    }

    #[test]
    fn single_deadline_one_is_serial_cost_sharing(values in profile(8)) {
        let a = single_deadline_run(&values, 1.0).unwrap();
        let b = scs_run(&values);
        prop_assert_eq!(a.built, b.built);
        prop_assert!(same(&a.release_times, &b.release_times));
        prop_assert!(same(&a.payments, &b.payments));
    }

    #[test]
    fn equal_deadlines_match_single_deadline(values in profile(8), d in 0.0..=1.0f64) {
        let a = multiple_deadline_run(&values, &vec![d; values.len()]).unwrap();
        let b = single_deadline_run(&values, d).unwrap();
        prop_assert_eq!(a.built, b.built);
        prop_assert!(same(&a.release_times, &b.release_times));
        prop_assert!(same(&a.payments, &b.payments));
    }

    #[test]
    fn outcomes_are_feasible(values in profile(8), d in 0.0..=1.0f64, mask in any::<u64>()) {
        let n = values.len();
        let grouping = Grouping::from_mask(n, mask);
        let mut deadlines: Vec<f64> = (0..n).map(|i| (d + i as f64 * 0.1).min(1.0)).collect();
        deadlines.sort_by(f64::total_cmp);
        let cases = [
            scs_run(&values),
            single_deadline_run(&values, d).unwrap(),
            multiple_deadline_run(&values, &deadlines).unwrap(),
            optimal_deadline_run(&values),
            group_based_run(&values, &grouping).unwrap(),
        ];
        for outcome in cases {
            let report = check_outcome(&values, &outcome, false).unwrap();
            prop_assert!(report.is_clean(), "{:?} -> {:?}", values, report);
        }
    }

    #[test]
    fn group_based_never_funds_both_sides(values in profile(8), mask in any::<u64>()) {
        let n = values.len();
        let grouping = Grouping::from_mask(n, mask);
        let out = group_based_run(&values, &grouping).unwrap();
        let right_pays = grouping.right().iter().any(|&i| out.payments[i] > 0.0);
        let left_pays = grouping.left().iter().any(|&i| out.payments[i] > 0.0);
        prop_assert!(!(right_pays && left_pays));
        if out.built {
            prop_assert!((out.payments.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn binomial_tail_below_both_bounds(n in 1usize..=30, p in 0.05..0.95f64, k in 0usize..30) {
        prop_assume!((k as f64) < n as f64 * p);
        let exact = binomial_cdf(n, p, k);
        prop_assert!(exact <= hoeffding_tail(n, p, k).unwrap().value() * (1.0 + 1e-9));
        if k > 0 {
            prop_assert!(exact <= chernoff_kl_tail(n, p, k).unwrap().value() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn uniform_ratio_is_reciprocal_gap(o in 0.0..0.999f64) {
        let r = ratio_r(&DistributionSpec::Uniform, o).unwrap();
        prop_assert!((r - 1.0 / (1.0 - o)).abs() <= 1e-9 * r.max(1.0));
    }

    #[test]
    fn genome_text_round_trips(seed in any::<u64>(), n in 1usize..=5, len in 1usize..=6) {
        let genome = random_monotone_genome(n, len, &mut keyed_rng(seed, 0, 0));
        let back = Genome::parse_text(&genome.to_text()).unwrap();
        prop_assert_eq!(back.len(), genome.len());
        for (a, b) in back.genes().iter().zip(genome.genes()) {
            prop_assert!(a.l1_distance(b) <= 1e-10);
        }
        let mech = Mechanism::SequentialUnanimous(genome);
        let again: Mechanism = mech.to_string().parse().unwrap();
        prop_assert_eq!(again.to_string(), mech.to_string());
    }

    #[test]
    fn prune_keeps_batch_outcomes(seed in any::<u64>(), len in 1usize..=8) {
        let genome = random_monotone_genome(3, len, &mut keyed_rng(seed, 0, 0));
        let batch = ProfileBatch::sample(&DistributionSpec::Uniform, 3, 300, seed).unwrap();
        let pruned = prune(&genome, &batch, 1e-4);
        prop_assert!(pruned.len() <= genome.len());
        let before = Mechanism::SequentialUnanimous(genome);
        let after = Mechanism::SequentialUnanimous(pruned);
        for (row, _) in batch.iter() {
            let a = before.run(row).unwrap();
            let b = after.run(row).unwrap();
            prop_assert_eq!(a.built, b.built);
            prop_assert!(same(&a.release_times, &b.release_times));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn strict_genomes_are_strategy_proof(seed in any::<u64>(), len in 1usize..=6) {
        let genome = random_monotone_genome(3, len, &mut keyed_rng(seed, 0, 0));
        prop_assert!(strict_filter(&genome));
        let report = check_sp_exhaustive(&Mechanism::SequentialUnanimous(genome), 3, 0.1, u128::MAX).unwrap();
        prop_assert!(report.is_clean(), "{:?}", report.violations.first());
    }
}

#[test]
fn alpha_stays_below_four() {
    for k in 1..=1000 {
        assert!(alpha_k(k).unwrap() < 4.0, "alpha({k})");
    }
}

#[test]
fn scs_closed_form_matches_simulation() {
    for n in [3, 5, 500] {
        let exact = scs_expected_maxdelay_closed_form(&DistributionSpec::Uniform, n).unwrap();
        let r = estimate_delay(
            &Mechanism::Scs,
            &DistributionSpec::Uniform,
            n,
            Objective::MaxDelay,
            20_000,
            3,
        )
        .unwrap();
        assert!(
            (r.estimate - exact).abs() <= 4.0 * r.std_error + 1e-3,
            "n={n}: {} vs {exact}",
            r.estimate
        );
    }
}

#[test]
fn estimates_ignore_worker_count() {
    let mech: Mechanism = "groupopt".parse().unwrap();
    let dist: DistributionSpec = "beta:0.5,0.5".parse().unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_delay(&mech, &dist, 6, Objective::SumDelay, 5000, 11).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one.estimate.to_bits(), four.estimate.to_bits());
    assert_eq!(one.std_error.to_bits(), four.std_error.to_bits());
}

#[test]
fn dominance_is_antisymmetric() {
    let mechs: Vec<Mechanism> = ["scs", "single:0.5", "single:1", "optdeadline", "multi:0.2,0.5,0.9"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let profiles = grid_profiles(3, 0.1).unwrap();
    for objective in [Objective::MaxDelay, Objective::SumDelay] {
        for a in &mechs {
            for b in &mechs {
                let ab = check_dominance(a, b, &profiles, objective).unwrap();
                let ba = check_dominance(b, a, &profiles, objective).unwrap();
                let mirrored = match ab {
                    Dominance::ADominates => Dominance::BDominates,
                    Dominance::BDominates => Dominance::ADominates,
                    other => other,
                };
                assert_eq!(ba, mirrored, "{a} vs {b} ({objective})");
            }
            assert_eq!(check_dominance(a, a, &profiles, objective).unwrap(), Dominance::Equal);
        }
    }
}

#[test]
fn deadline_mechanisms_resist_sampled_manipulation() {
    for m in ["scs", "single:0.4", "multi:0.1,0.3,0.6,0.9"] {
        let mech: Mechanism = m.parse().unwrap();
        let found = count_sampled_manipulations(
            &mech,
            &DistributionSpec::Uniform,
            4,
            5000,
            5,
            ManipulationDraw::EveryAgent,
        )
        .unwrap();
        assert_eq!(found, 0, "{m}");
    }
}

#[test]
fn tga_keeps_strict_population_and_monotone_trace() {
    let mut config = GaConfig::new(DistributionSpec::Uniform, 3, Objective::SumDelay, 4);
    config.population = 40;
    config.rounds = 30;
    config.fitness_samples = 500;
    let result = evolve_run(&config, Variant::Tga).unwrap();
    assert_eq!(result.population.len(), 40);
    assert!(result.population.iter().all(strict_filter));
    assert!(result.trace.windows(2).all(|w| w[1].best <= w[0].best + 1e-12));
    assert!(result.survivor_fraction.is_none());
    let again = evolve_run(&config, Variant::Tga).unwrap();
    assert_eq!(again.best, result.best);
}
