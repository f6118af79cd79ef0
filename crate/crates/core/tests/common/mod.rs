#![allow(dead_code)]

use qlpv_core::ccpoly::PolytopeTemplate;
use qlpv_core::qlpv::{Activation, ModelDims, QlpvModel};
use qlpv_core::rci::{DisturbanceBox, InputConstraints, OutputConstraints, RciProblem};
use qlpv_core::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dims(nx: usize, np: usize, hidden: &[usize], activation: Activation) -> ModelDims {
    ModelDims { nx, nu: 1, ny: 1, np, hidden: hidden.to_vec(), activation }
}

/// Random model with nonzero observer gains of size `l_scale`.
pub fn model(seed: u64, nx: usize, np: usize, l_scale: f64) -> QlpvModel {
    let mut r = rng(seed);
    let mut m = QlpvModel::random(&dims(nx, np, &[3], Activation::EluPlusOne), &mut r).unwrap();
    for l in &mut m.l {
        *l = Mat::from_fn(nx, 1, |_, _| r.gen_range(-l_scale..=l_scale));
    }
    m
}

pub fn problem(nx: usize, y: f64, u: f64, horizon: usize) -> RciProblem {
    RciProblem::new(
        PolytopeTemplate::boxed(nx).unwrap(),
        OutputConstraints::interval(-y, y).unwrap(),
        InputConstraints::boxed(&[-u], &[u]).unwrap(),
        horizon,
    )
    .unwrap()
}

pub fn wbox(eps: f64) -> DisturbanceBox {
    DisturbanceBox::new(vec![0.0], vec![eps], 1.01).unwrap()
}

/// Uniform point of the simplex.
pub fn simplex(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - r.gen::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
