//! Small-scale runs of the simulation studies.

use matrixt::experiments::{
    misspecification, nu_recovery, rmse_recovery, run, timing, ExperimentKind, ExperimentSpec, GridCell,
};

#[test]
fn nu_is_consistent_at_large_n() {
    let spec = ExperimentSpec {
        grid: vec![GridCell::t(5, 3, 10_000, 5.0)],
        replicates: 10,
        ..ExperimentSpec::default_for(ExperimentKind::NuRecovery)
    };
    let r = nu_recovery(&spec).unwrap();
    let s = &r.cells[0].summary;
    assert_eq!(s.count, 10);
    assert!((s.median - 5.0).abs() < 0.02 * 5.0, "median {}", s.median);
}

#[test]
fn mean_rmse_shrinks_with_n() {
    let mut grid = Vec::new();
    for nu in [5.0, 10.0, 20.0] {
        grid.push(GridCell::t(5, 3, 35, nu));
        grid.push(GridCell::t(5, 3, 100, nu));
    }
    let spec = ExperimentSpec { grid, replicates: 40, ..ExperimentSpec::default_for(ExperimentKind::Rmse) };
    let r = rmse_recovery(&spec).unwrap();
    for pair in r.cells.chunks(2) {
        assert!(pair[1].rmse_mean < pair[0].rmse_mean, "nu {:?}: {} vs {}", pair[0].cell.nu, pair[1].rmse_mean, pair[0].rmse_mean);
    }
}

#[test]
fn studies_are_bit_reproducible() {
    let rmse = ExperimentSpec {
        grid: vec![GridCell::t(3, 2, 30, 6.0), GridCell::normal(3, 2, 30)],
        replicates: 6,
        ..ExperimentSpec::default_for(ExperimentKind::Rmse)
    };
    assert_eq!(run(&rmse).unwrap(), run(&rmse).unwrap());
    let mut mis = ExperimentSpec::default_for(ExperimentKind::Misspec);
    mis.grid = vec![GridCell::t(3, 4, 50, 6.0)];
    mis.fitted_nu = vec![4.0, 8.0, 30.0];
    let a = misspecification(&mis).unwrap();
    assert_eq!(a, misspecification(&mis).unwrap());
    assert_eq!(a.rows.len(), 4);
}

#[test]
fn timing_grows_with_n() {
    let spec = ExperimentSpec {
        grid: vec![GridCell::t(5, 5, 100, 5.0), GridCell::t(5, 5, 500, 5.0)],
        replicates: 3,
        ..ExperimentSpec::default_for(ExperimentKind::Timing)
    };
    let t = timing(&spec).unwrap();
    let small = t.median_seconds(5, 5, 100).unwrap();
    let large = t.median_seconds(5, 5, 500).unwrap();
    assert!(large > small, "{large} vs {small}");
}
