mod common;

use cardiotwin_core::eikonal::ActivationTimeMap;
use cardiotwin_core::forward::ForwardModel;
use cardiotwin_core::pseudo_ecg::{element_vm_gradient, raw_leads, LeadField};
use cardiotwin_core::vec3::{rotation, tet_volume, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{default_params, default_phantom, model};

/// Linear interpolant at `x` through barycentric volume ratios.
fn interpolant(p: [Vec3; 4], vm: [f64; 4], x: Vec3) -> f64 {
    let total = tet_volume(p[0], p[1], p[2], p[3]);
    (0..4)
        .map(|i| {
            let mut q = p;
            q[i] = x;
            vm[i] * tet_volume(q[0], q[1], q[2], q[3]) / total
        })
        .sum()
}

#[test]
fn element_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    while checked < 200 {
        let p: [Vec3; 4] =
            std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        if tet_volume(p[0], p[1], p[2], p[3]).abs() < 1e-2 {
            continue;
        }
        let vm: [f64; 4] = std::array::from_fn(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        let g = element_vm_gradient(p, vm).unwrap();
        let c: Vec3 = std::array::from_fn(|k| (p[0][k] + p[1][k] + p[2][k] + p[3][k]) / 4.0);
        let h = 1e-5;
        for k in 0..3 {
            let (mut a, mut b) = (c, c);
            a[k] += h;
            b[k] -= h;
            let fd = (interpolant(p, vm, a) - interpolant(p, vm, b)) / (2.0 * h);
            assert!(
                (fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0),
                "{fd} vs {}",
                g[k]
            );
        }
        checked += 1;
    }
}

#[test]
fn uniform_activation_gives_zero_leads() {
    let (mesh, frame) = default_phantom();
    let fm = model(mesh, frame);
    let atm = ActivationTimeMap::from_times(vec![0.0; fm.mesh().n_nodes()]);
    let field = LeadField::new(fm.mesh(), &fm.electrodes().positions).unwrap();
    for phi in field.potentials(&atm, 1e-3, 20) {
        assert!(phi.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn einthoven_identity_on_phantom() {
    let (mesh, frame) = default_phantom();
    let params = default_params(&mesh);
    let fm = model(mesh, frame);
    let atm = fm.activation(&params).unwrap();
    let field = LeadField::new(fm.mesh(), &fm.electrodes().positions).unwrap();
    let phi = field.potentials(&atm, 1e-3, 100);
    let leads = raw_leads(&phi);
    for k in 0..100 {
        let iii = phi[2][k] - phi[1][k];
        assert!((iii - (leads[1][k] - leads[0][k])).abs() <= 1e-12 * (1.0 + iii.abs()));
    }
}

#[test]
fn doubling_sources_doubles_raw_potentials() {
    let (mesh, frame) = default_phantom();
    let params = default_params(&mesh);
    let fm = model(mesh, frame);
    let atm = fm.activation(&params).unwrap();
    let field = LeadField::new(fm.mesh(), &fm.electrodes().positions).unwrap();
    let mut doubled = field.clone();
    doubled.scale_sources(2.0);
    let a = field.potentials(&atm, 1e-3, 80);
    let b = doubled.potentials(&atm, 1e-3, 80);
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert_eq!(2.0 * x, *y);
    }
}

#[test]
fn rigid_motion_leaves_record_unchanged() {
    let (mesh, frame) = default_phantom();
    let params = default_params(&mesh);
    let fm = model(mesh.clone(), frame.clone());
    let (_, base) = fm.simulate(&params).unwrap();

    let r = rotation([1.0, 2.0, -0.5], 0.7);
    let shift = [3.0, -1.0, 2.0];
    let moved = ForwardModel::with_electrodes(
        mesh.transformed(&r, shift),
        frame.rotated(&r),
        fm.electrodes().transformed(&r, shift),
        fm.settings().clone(),
    )
    .unwrap();
    let (_, rec) = moved.simulate(&params).unwrap();
    assert_eq!(rec.mask, base.mask);
    for (a, b) in rec.leads.iter().flatten().zip(base.leads.iter().flatten()) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn shifting_activation_shifts_signals() {
    let (mesh, frame) = default_phantom();
    let params = default_params(&mesh);
    let fm = model(mesh, frame);
    let atm = fm.activation(&params).unwrap();
    let field = LeadField::new(fm.mesh(), &fm.electrodes().positions).unwrap();
    let n = 200;
    let a = field.potentials(&atm, 1e-3, n);
    let b = field.potentials(&atm.shifted(10e-3), 1e-3, n);
    for (x, y) in a.iter().zip(&b) {
        for k in 0..n - 10 {
            assert!(
                (x[k] - y[k + 10]).abs() <= 1e-9 * (1.0 + x[k].abs()),
                "sample {k}"
            );
        }
        assert!(y[..10].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn signal_confined_to_activation_window() {
    let (mesh, frame) = default_phantom();
    let params = default_params(&mesh);
    let fm = model(mesh, frame);
    let atm = fm.activation(&params).unwrap();
    let field = LeadField::new(fm.mesh(), &fm.electrodes().positions).unwrap();
    let dt = 1e-3;
    let n = 300;
    let phi = field.potentials(&atm, dt, n);
    for (k, t) in (0..n).map(|k| (k, k as f64 * dt)) {
        if t >= atm.max_time {
            assert!(
                phi.iter().all(|p| p[k] == 0.0),
                "sample {k} after completion"
            );
        }
    }
    let (_, rec) = fm.simulate(&params).unwrap();
    let valid = rec.valid_len();
    assert_eq!(valid, (atm.max_time / dt).ceil() as usize);
    assert!(rec
        .leads
        .iter()
        .all(|l| l[valid..].iter().all(|&v| v == 0.0)));
    assert!((rec.peak() - 1.0).abs() <= 1e-12);
}
