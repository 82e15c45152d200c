mod common;

use cardiotwin_core::forward::ActivationParams;
use cardiotwin_core::inverse::{coordinate_descent, grid, grid_search_1d, objective, SearchSpec};

use common::{cv, default_params, model, phantoms};

#[test]
fn grid_search_recovers_endocardial_velocity() {
    let (mesh, frame) = phantoms(1).remove(0);
    let mut params = default_params(&mesh);
    params.cv = cv(70.0, 40.0, 35.0, 150.0);
    let fm = model(mesh, frame);
    let (_, target) = fm.simulate(&params).unwrap();

    let values = grid(120.0, 179.0, 1.0);
    let res = grid_search_1d(&fm, &target, &params, 3, &values).unwrap();
    assert_eq!(res.best_value, 150.0);
    assert_eq!(res.best_loss, 0.0);
    let at_truth = res
        .curve
        .iter()
        .find(|p| p.value == 150.0)
        .unwrap()
        .loss
        .unwrap();
    assert!(res.curve.iter().all(|p| p.loss.unwrap() >= at_truth));

    let off: Vec<f64> = values
        .iter()
        .copied()
        .filter(|v| (v - 150.0).abs() > 5.0)
        .collect();
    let res = grid_search_1d(&fm, &target, &params, 3, &off).unwrap();
    assert!(res.best_loss > 0.0);
}

#[test]
fn invalid_grid_points_are_skipped() {
    let (mesh, frame) = phantoms(1).remove(0);
    let mut params = default_params(&mesh);
    params.cv = cv(70.0, 40.0, 35.0, 150.0);
    let fm = model(mesh, frame);
    let (_, target) = fm.simulate(&params).unwrap();
    // sheet above fiber violates the ordering
    let res = grid_search_1d(&fm, &target, &params, 1, &[36.0, 40.0, 80.0]).unwrap();
    assert!(res.curve[2].loss.is_none());
    assert_eq!(res.best_value, 40.0);
}

#[test]
fn descent_trace_never_increases_and_is_deterministic() {
    let (mesh, frame) = phantoms(1).remove(0);
    let mut params = default_params(&mesh);
    params.cv = cv(62.0, 44.0, 31.0, 131.0);
    let fm = model(mesh, frame);
    let (_, target) = fm.simulate(&params).unwrap();
    let spec = SearchSpec {
        max_evals: 400,
        ..SearchSpec::default()
    };
    let a = coordinate_descent(&fm, &target, &params.roots, &spec).unwrap();
    for w in a.trace.windows(2) {
        assert!(w[1].objective <= w[0].objective);
    }
    assert!(a.evaluations <= spec.max_evals + spec.scan_points);
    let start = ActivationParams {
        cv: cardiotwin_core::losses::midpoint_cv(),
        roots: params.roots.clone(),
    };
    assert!(a.objective < objective(&fm, &target, &start).unwrap());
    let b = coordinate_descent(&fm, &target, &params.roots, &spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(objective(&fm, &target, &params).unwrap(), 0.0);
}
