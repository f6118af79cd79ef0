#![allow(clippy::needless_range_loop)]
mod common;

use common::{model, rng};
use qlpv_core::ccpoly::PolytopeTemplate;
use qlpv_core::control::{closed_loop, tracking_control, ControlWeights};
use qlpv_core::plant::{gen_dataset, DuffingPlant, Plant};
use qlpv_core::qp::QpStatus;
use qlpv_core::rci::InputConstraints;
use qlpv_core::Mat;
use rand::Rng;

fn reference(p: &DuffingPlant, x: &[f64], dt: f64) -> Vec<f64> {
    DuffingPlant { substeps: 10_000, ..p.clone() }.step(x, &[0.3], dt).unwrap()
}

fn err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn unforced_energy_never_grows() {
    let p = DuffingPlant::default();
    let mut x = vec![0.1, -0.5];
    let mut e = p.energy(&x);
    for _ in 0..500 {
        x = p.step(&x, &[0.0], 0.1).unwrap();
        let next = p.energy(&x);
        assert!(next <= e * (1.0 + 1e-9), "{next} > {e}");
        e = next;
    }
    assert!(e < 1e-3 * p.energy(&[0.1, -0.5]));
}

#[test]
fn default_step_matches_a_fine_reference() {
    let p = DuffingPlant::default();
    let x = vec![0.05, 0.2];
    assert!(err(&p.step(&x, &[0.3], 0.1).unwrap(), &reference(&p, &x, 0.1)) < 1e-6);
}

#[test]
fn halving_the_substep_cuts_the_error_sixteenfold() {
    let p = DuffingPlant::default();
    let x = vec![0.05, 0.2];
    let dt = 0.1;
    let exact = reference(&p, &x, dt);
    let coarse = err(&DuffingPlant { substeps: 4, ..p.clone() }.step(&x, &[0.3], dt).unwrap(), &exact);
    let fine = err(&DuffingPlant { substeps: 8, ..p.clone() }.step(&x, &[0.3], dt).unwrap(), &exact);
    let ratio = coarse / fine;
    assert!((12.0..20.0).contains(&ratio), "ratio {ratio} ({coarse} / {fine})");
}

#[test]
fn datasets_are_reproducible_and_held() {
    let p = DuffingPlant::default();
    let a = gen_dataset(&p, 5, 200, -1.0, 1.0, 0.1, 4).unwrap();
    let b = gen_dataset(&p, 5, 200, -1.0, 1.0, 0.1, 4).unwrap();
    assert_eq!(a.u.as_slice(), b.u.as_slice());
    assert_eq!(a.y.as_slice(), b.y.as_slice());
    assert_eq!(a.y[(0, 0)], 0.0);
    for t in 0..200 {
        assert_eq!(a.u[(t, 0)], a.u[(t - t % 4, 0)]);
    }
}

#[test]
fn unconstrained_step_is_the_least_squares_input() {
    for seed in 0..20 {
        let m = model(seed, 2, 3, 0.2);
        let mut r = rng(seed + 77);
        let t = PolytopeTemplate::boxed(2).unwrap();
        let big = vec![1e3; t.num_facets()];
        let uset = InputConstraints::boxed(&[-1e3], &[1e3]).unwrap();
        let z = vec![r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)];
        let y = vec![r.gen_range(-0.5..0.5)];
        let target = vec![r.gen_range(-1.0..1.0)];
        let s = tracking_control(&m, &big, &t, &uset, &z, &y, &target, ControlWeights::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        // Affine in u: C z⁺(u) = c0 + g u, so u* = (r - c0) / g.
        let c0 = m.c.matvec(&m.observer_step(&z, &[0.0], &y).unwrap())[0];
        let c1 = m.c.matvec(&m.observer_step(&z, &[1.0], &y).unwrap())[0];
        let u = (target[0] - c0) / (c1 - c0);
        assert!((s.u[0] - u).abs() < 1e-6 * (1.0 + u.abs()), "seed {seed}: {} vs {u}", s.u[0]);
        assert!(s.cost < 1e-10);
    }
}

#[test]
fn closed_loop_respects_the_input_box() {
    let m = model(3, 2, 2, 0.1);
    let t = PolytopeTemplate::boxed(2).unwrap();
    let uset = InputConstraints::boxed(&[-0.2], &[0.2]).unwrap();
    let refs = Mat::from_rows(&[&[0.05], &[-0.05]]);
    let p = DuffingPlant::default();
    let tr = closed_loop(&p, &m, &[1e3; 4], &t, &uset, &refs, &[0.0, 0.0], &[0.0, 0.0], 40, 0.1, ControlWeights::default())
        .unwrap();
    assert_eq!(tr.failed_step, None);
    assert_eq!(tr.len(), 40);
    assert_eq!(tr.x.len(), 41);
    assert!(tr.u.iter().all(|u| uset.contains(u, 1e-9)));
    assert_eq!(tr.r[39], vec![-0.05]);
}
