use subspace_core::experiment::{run_in_memory, ExperimentConfig, RunOptions};
use subspace_core::optim::OptimizerKind;
use subspace_core::problems::ProblemSpec;
use subspace_core::subspace::{Mode, TrainerConfig, UpdaterConfig};

fn final_and_first(problem: ProblemSpec, trainer: TrainerConfig) -> (f64, f64) {
    let r = run_in_memory(&ExperimentConfig::new(problem, trainer), &RunOptions::default()).unwrap();
    (r.records[0].loss, r.summary.final_loss)
}

#[test]
fn logistic_regression_trains_in_every_mode() {
    let problem = ProblemSpec::LogisticRegression {
        n_features: 20,
        n_classes: 5,
        n_samples: 200,
        seed: 3,
    };
    for (mode, updater) in [
        (Mode::FullRank, UpdaterConfig::default()),
        (Mode::Dynamic, UpdaterConfig::default()),
        (Mode::Dynamic, UpdaterConfig::PeriodicSvd { period: 50 }),
        (Mode::StaticSubspace, UpdaterConfig::Static),
    ] {
        let mut t = TrainerConfig::new(mode, OptimizerKind::adam(), 3, 0.05, 300);
        t.updater = updater;
        let (first, last) = final_and_first(problem.clone(), t);
        // a frozen rank-3 subspace can only go so far
        let factor = if mode == Mode::StaticSubspace { 0.95 } else { 0.7 };
        assert!(last < factor * first, "{mode:?} {updater:?}: {first} -> {last}");
    }
}

#[test]
fn rosenbrock_approaches_its_minimum() {
    let t = TrainerConfig::new(Mode::FullRank, OptimizerKind::adam(), 1, 0.02, 3000);
    let (first, last) = final_and_first(ProblemSpec::Rosenbrock, t);
    assert!(first > 1.0);
    assert!(last < 1e-3, "{last}");
}

#[test]
fn every_base_optimizer_runs_projected() {
    for kind in [OptimizerKind::gd(), OptimizerKind::momentum(), OptimizerKind::adam(), OptimizerKind::lion()] {
        let t = TrainerConfig::new(Mode::Dynamic, kind, 4, 0.01, 200);
        let (first, last) = final_and_first(ProblemSpec::Quadratic { n: 16, m: 8, seed: 1 }, t);
        assert!(last < first, "{kind:?}: {first} -> {last}");
    }
}
