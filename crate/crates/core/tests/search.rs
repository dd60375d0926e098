use eqlab_core::complexity::rmps_model;
use eqlab_core::neural::{Equalizer, Family, TrainConfig};
use eqlab_core::search::{
    baseline_eval, feasible_space, random_search, sweep, trial_plan, Budget, SweepConfig,
};
use eqlab_core::txrx::metrics::EvalResult;
use eqlab_core::txrx::{make_dataset, Dataset, LinkConfig, QValue};
use eqlab_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MEMORY: usize = 9;

fn dataset() -> Dataset {
    make_dataset(&LinkConfig::twc(), 2048, 2048, (5, 6), MEMORY).unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 128,
        ..TrainConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feasible_boxes_respect_the_budget(fam in 0usize..4, exp in 2u32..8, mant in 1u64..10, half in 1usize..21) {
        let family = Family::ALL[fam];
        let budget = Budget::new(mant * 10u64.pow(exp)).unwrap();
        let memory = 2 * half + 1;
        match feasible_space(family, &budget, memory) {
            Ok(bounds) => {
                for arch in [bounds.upper_corner().unwrap(), bounds.lower_corner().unwrap()] {
                    let r = rmps_model(&arch.model_spec(memory).unwrap()).unwrap().total_rmps;
                    prop_assert!(r <= budget.max_rmps, "{arch} costs {r}");
                }
                let mut rng = ChaCha8Rng::seed_from_u64(exp as u64);
                for _ in 0..20 {
                    let arch = bounds.sample(&mut rng).unwrap();
                    let r = rmps_model(&arch.model_spec(memory).unwrap()).unwrap().total_rmps;
                    prop_assert!(r <= budget.max_rmps);
                }
            }
            Err(Error::Infeasible(_)) => {
                // even the smallest member must then be too expensive
                let values = vec![1; family.hyperparameters().len()];
                let arch = eqlab_core::neural::Architecture::from_values(family, &values).unwrap();
                let r = rmps_model(&arch.model_spec(memory).unwrap()).unwrap().total_rmps;
                prop_assert!(r > budget.max_rmps);
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

#[test]
fn one_trial_is_that_configuration_trained() {
    let ds = dataset();
    let budget = Budget::new(10_000).unwrap();
    let out = random_search(Family::Mlp, &budget, &ds, 1, 3, &quick(), MEMORY).unwrap();
    let plan = trial_plan(&out.bounds, 1, 3).unwrap();
    let (arch, seed) = plan[0];
    let (eq, _) =
        Equalizer::fit(arch, MEMORY, &ds.train, &TrainConfig { seed, ..quick() }).unwrap();
    let direct = EvalResult::new(
        eq.equalize(&ds.test).unwrap().count().unwrap(),
        Some(out.baseline.q_db),
    );
    assert_eq!(out.trials.len(), 1);
    assert_eq!(out.best_trial().architecture, arch);
    assert_eq!(out.best_trial().eval, Some(direct));
    assert_eq!(out.model.nets[0].params(), eq.nets[0].params());
}

#[test]
fn best_of_n_never_gets_worse_with_more_trials() {
    let ds = dataset();
    let budget = Budget::new(3_000).unwrap();
    let mut previous = f64::NEG_INFINITY;
    let mut first_trials = Vec::new();
    for n in 1..=4 {
        let out = random_search(Family::CnnMlp, &budget, &ds, n, 17, &quick(), MEMORY).unwrap();
        for t in &out.trials {
            assert!(t.rmps <= budget.max_rmps);
        }
        // trial i is the same run whatever the total
        assert_eq!(out.trials[..n - 1], first_trials[..]);
        first_trials = out.trials.clone();
        let q = out.best_trial().eval.unwrap().q_db.rank();
        assert!(
            q >= previous,
            "best Q fell from {previous} to {q} at {n} trials"
        );
        previous = q;
    }
}

#[test]
fn sweep_grid_rows_and_baselines() {
    let ds = dataset();
    let mut cfg = SweepConfig::new(
        vec![Family::Mlp, Family::Bilstm],
        vec![100, 5_000],
        1,
        4,
        MEMORY,
    );
    cfg.train = quick();
    let result = sweep(&ds, &cfg).unwrap();
    assert_eq!(result.rows.len(), 4 + 2);
    let statuses: Vec<&str> = result.rows.iter().map(|r| r.status.as_str()).collect();
    assert_eq!(
        statuses,
        ["ok", "ok", "infeasible", "ok", "baseline", "baseline"]
    );
    for r in &result.rows[..4] {
        if let (Some(rmps), Some(b)) = (r.rmps, r.budget) {
            assert!(rmps <= b);
        }
    }

    let raw = result
        .rows
        .iter()
        .find(|r| r.family == "unequalized")
        .unwrap();
    assert_eq!(raw.q_gain_db, QValue::Finite(0.0));
    let direct = baseline_eval(&ds, MEMORY).unwrap();
    let recomputed = ds
        .test
        .evaluate_range(MEMORY / 2..ds.test.len() - MEMORY / 2)
        .unwrap();
    assert_eq!(
        (raw.bit_errors, raw.bits),
        (Some(recomputed.errors), Some(recomputed.bits))
    );
    assert_eq!(raw.q_db, direct.q_db);

    // the DBP row does not depend on NN seeds, and reruns are identical
    let mut other = cfg.clone();
    other.seed = 99;
    other.families = vec![Family::Mlp];
    other.budgets = vec![100];
    let second = sweep(&ds, &other).unwrap();
    let dbp = |rows: &[eqlab_core::search::SweepRow]| {
        rows.iter().find(|r| r.family == "dbp").cloned().unwrap()
    };
    assert_eq!(dbp(&result.rows), dbp(&second.rows));
    assert_eq!(sweep(&ds, &cfg).unwrap(), result);
    assert_eq!(
        result.to_csv(Some("abc")),
        sweep(&ds, &cfg).unwrap().to_csv(Some("abc"))
    );
}
