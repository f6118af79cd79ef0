#![allow(clippy::needless_range_loop)]
mod common;

use common::{model, problem};
use qlpv_core::qlpv::IoDataset;
use qlpv_core::synthesis::{grad_objective, objective, RciContext, RegularizerKind, TrainConfig};
use qlpv_core::Mat;

fn data(seed: u64, n: usize) -> IoDataset {
    let truth = model(seed, 2, 2, 0.0);
    let u = Mat::from_fn(n, 1, |t, _| 0.4 * ((t as f64) * 0.7).sin());
    let y = Mat::from_fn(n, 1, |t, _| truth.simulate(&[0.0, 0.0], &u).unwrap().y[t][0] + 0.01 * ((t * 13) as f64).cos());
    IoDataset::new(u, y, 0.1).unwrap()
}

fn context(seed: u64) -> RciContext {
    RciContext { dw: data(seed + 100, 40), prob: problem(2, 0.5, 0.5, 3) }
}

fn config(tau: f64, kind: RegularizerKind) -> TrainConfig {
    TrainConfig { tau, zeta: 0.05, horizon: 3, regularizer: kind, ..TrainConfig::default() }
}

#[test]
fn zero_tau_is_the_plain_fit() {
    let m = model(1, 2, 2, 0.2);
    let d = data(1, 30);
    let o = objective(&m, &[0.0, 0.0], &d, &[0.3; 4], &context(1), &config(0.0, RegularizerKind::BoundPropagation)).unwrap();
    assert_eq!(o.j, m.fit_loss(&[0.0, 0.0], &d).unwrap());
    assert!(o.r.is_none());
}

#[test]
fn objective_adds_the_weighted_size() {
    let m = model(2, 2, 2, 0.2);
    let d = data(2, 30);
    for kind in [RegularizerKind::Baseline, RegularizerKind::BoundPropagation] {
        let o = objective(&m, &[0.0, 0.0], &d, &[0.3; 4], &context(2), &config(0.1, kind)).unwrap();
        let r = o.r.expect("regularizer solved");
        assert!((o.j - (o.fit + 0.1 * r)).abs() <= 1e-12 * o.j.abs());
    }
}

#[test]
fn single_local_model_has_no_scheduling_gradient() {
    let m = model(4, 2, 1, 0.2);
    let d = data(4, 30);
    let (_, g) = grad_objective(&m, &[0.0, 0.0], &d, &[0.3; 4], &context(4), &config(0.1, RegularizerKind::BoundPropagation)).unwrap();
    let mats = 4 + 2 + 2 + 2;
    let flat = g.model.params();
    assert!(flat[mats..].iter().all(|&v| v == 0.0), "{:?}", &flat[mats..]);
    assert!(flat[..mats].iter().any(|&v| v != 0.0));
}

#[test]
fn gradient_matches_central_differences() {
    let m = model(6, 2, 2, 0.2);
    let x0 = vec![0.01, -0.02];
    let d = data(6, 25);
    let ctx = context(6);
    let q = [0.3; 4];
    let cfg = config(0.5, RegularizerKind::BoundPropagation);
    let (o, g) = grad_objective(&m, &x0, &d, &q, &ctx, &cfg).unwrap();
    assert!(o.r.is_some());
    let j = |p: &[f64], x: &[f64]| objective(&m.with_params(p).unwrap(), x, &d, &q, &ctx, &cfg).unwrap().j;
    let params = m.params();
    let grad = g.flatten();
    let h = 1e-6;
    let mut good = 0;
    let n = params.len() + x0.len();
    for k in 0..n {
        let (mut pp, mut pm) = (params.clone(), params.clone());
        let (mut xp, mut xm) = (x0.clone(), x0.clone());
        if k < params.len() {
            pp[k] += h;
            pm[k] -= h;
        } else {
            xp[k - params.len()] += h;
            xm[k - params.len()] -= h;
        }
        let fd = (j(&pp, &xp) - j(&pm, &xm)) / (2.0 * h);
        if (fd - grad[k]).abs() <= 1e-4 * (1.0 + fd.abs()) {
            good += 1;
        }
    }
    assert!(good * 10 >= n * 9, "{good} of {n} coordinates agree");
}
