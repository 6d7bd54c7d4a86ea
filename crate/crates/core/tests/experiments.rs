use fictplay_core::analysis::{
    convergence_experiment, detect_limit, nonconvergence_experiment, ExperimentConfig, StartSpec, Verdict,
};
use fictplay_core::flow::enumerate_pne;
use fictplay_core::games::{t_operator, Game, MixedProfile};
use fictplay_core::response::BestResponseField;
use fictplay_core::stochastic::{run_sfp, RunOptions, SfpStart, StoragePolicy};

fn field(eta: f64) -> BestResponseField {
    BestResponseField::logit(Game::coordination(), eta).unwrap()
}

#[test]
fn unique_pne_attracts_every_run() {
    let f = field(10.0);
    let mut cfg = ExperimentConfig::new(50, 100_000, 21);
    cfg.tol = 1e-2;
    let rep = convergence_experiment(&f, &cfg).unwrap();
    assert_eq!(rep.catalog.len(), 1);
    assert_eq!(rep.aggregate.converged, 50);
    assert_eq!(rep.aggregate.basins[0].count, 50);
}

#[test]
fn radius_zero_and_small_radius_agree() {
    let f = field(0.2);
    let cat = enumerate_pne(&f, 20, 1e-10, 0).unwrap().reports;
    let target = cat.iter().find(|r| r.label.is_unstable()).unwrap();
    let mut cfg = ExperimentConfig::new(60, 200_000, 5);
    cfg.prefix = 10_000;
    let a = nonconvergence_experiment(&f, &cfg, target, 0.0).unwrap();
    let b = nonconvergence_experiment(&f, &cfg, target, 1e-3).unwrap();
    // overlapping 95% intervals
    assert!(a.ci95.0 <= b.ci95.1 && b.ci95.0 <= a.ci95.1);
    assert!(a.fraction <= 0.05 && b.fraction <= 0.05);
}

#[test]
fn highest_start_never_reaches_the_lowest_stable_pne() {
    let f = field(0.2);
    let cat = enumerate_pne(&f, 20, 1e-10, 0).unwrap().reports;
    assert_eq!(cat.len(), 3);
    let unstable = t_operator(&cat[1].point);
    // highest vertex: every player on the last action
    let mut cfg = ExperimentConfig::new(40, 100_000, 9);
    cfg.start = StartSpec::Vertex { profile: vec![1, 1] };
    let top = MixedProfile::vertex(&[2, 2], &[1, 1]).unwrap();
    assert!(t_operator(&top).as_slice().iter().zip(unstable.as_slice()).all(|(a, b)| a > b));
    let rep = convergence_experiment(&f, &cfg).unwrap();
    for r in &rep.runs {
        if let Some(Verdict::ConvergedTo { index, .. }) = r.verdict {
            assert_ne!(index, 0, "run {} fell to the lowest PNE", r.run);
        }
    }
    assert!(rep.aggregate.basins[2].count >= 38);
}

#[test]
fn longer_windows_do_not_flip_a_converged_verdict() {
    let f = field(0.5);
    let cat = enumerate_pne(&f, 10, 1e-10, 0).unwrap().reports;
    let start = SfpStart::interior(MixedProfile::uniform(&[2, 2]), 1000).unwrap();
    let opts = RunOptions {
        storage: StoragePolicy::strided(100, 20_000),
        ..RunOptions::default()
    };
    let run = run_sfp(&f, &start, 500_000, 17, &opts, false).unwrap();
    for w in [1_000, 5_000, 10_000] {
        assert!(matches!(
            detect_limit(&run.trajectory, &cat, w, 1e-2).unwrap(),
            Verdict::ConvergedTo { index: 0, .. }
        ));
    }
}
