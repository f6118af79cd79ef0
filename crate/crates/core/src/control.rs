//! Safe output tracking inside an RCI set.
//!
//! At each step the controller picks `u ∈ 𝕌` minimizing `‖C z⁺ − r‖²` where
//! `z⁺` is the observer update, subject to `z⁺ ∈ X(q)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::ccpoly::PolytopeTemplate;
use crate::error::ensure_dims;
use crate::plant::Plant;
use crate::qlpv::QlpvModel;
use crate::qp::{qp_solve_with, QpSettings, QpStatus, QuadProg};
use crate::rci::InputConstraints;
use crate::{Error, Mat, Result};

/// Tolerance of the `z ∈ X(q)` precondition.
pub const STATE_TOL: f64 = 1e-7;

/// Optional penalties `w_u ‖u‖² + w_z ‖z⁺‖²` added to the tracking cost.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControlWeights {
    pub input: f64,
    pub state: f64,
}

#[derive(Clone, Debug)]
pub struct ControlStep {
    pub u: Vec<f64>,
    pub z_next: Vec<f64>,
    pub status: QpStatus,
    /// `‖C z⁺ − r‖²` at the returned input.
    pub cost: f64,
}

/// One tracking step from observer state `z` with measurement `y` and
/// reference `r`. On an infeasible QP the interior point of `𝕌` is returned
/// with the failing status.
#[allow(clippy::too_many_arguments)]
pub fn tracking_control(
    model: &QlpvModel,
    q: &[f64],
    template: &PolytopeTemplate,
    uset: &InputConstraints,
    z: &[f64],
    y: &[f64],
    r: &[f64],
    weights: ControlWeights,
) -> Result<ControlStep> {
    ensure_dims!(r.len() == model.ny(), "reference has {} entries, expected {}", r.len(), model.ny());
    ensure_dims!(q.len() == template.num_facets(), "q has {} entries, expected {}", q.len(), template.num_facets());
    if !template.contains(z, q, STATE_TOL) {
        return Err(Error::InvalidArgument(format!("observer state {z:?} is outside X(q)")));
    }
    let nu = model.nu();
    // z⁺ = base + B(p) u with the input-free observer update as base.
    let base = model.observer_step(z, &vec![0.0; nu], y)?;
    let p = model.scheduling(z)?;
    let bp = crate::qlpv::blend(&model.b, &p)?;
    let cb = model.c.matmul(&bp);
    let cbase = model.c.matvec(&base);
    let resid: Vec<f64> = cbase.iter().zip(r).map(|(a, b)| a - b).collect();
    let mut hess = cb.transpose().matmul(&cb).scaled(2.0);
    let btb = bp.transpose().matmul(&bp);
    let mut f: Vec<f64> = cb.tr_matvec(&resid).into_iter().map(|v| 2.0 * v).collect();
    let bb = bp.tr_matvec(&base);
    for i in 0..nu {
        hess[(i, i)] += 2.0 * weights.input;
        for j in 0..nu {
            hess[(i, j)] += 2.0 * weights.state * btb[(i, j)];
        }
        f[i] += 2.0 * weights.state * bb[i];
    }
    let fm = template.facets();
    let fb = fm.matmul(&bp);
    let fbase = fm.matvec(&base);
    let rows = fm.rows() + uset.hu.rows();
    let g = Mat::from_fn(rows, nu, |i, j| if i < fm.rows() { fb[(i, j)] } else { uset.hu[(i - fm.rows(), j)] });
    let mut h: Vec<f64> = q.iter().zip(&fbase).map(|(q, fz)| q - fz).collect();
    h.extend_from_slice(&uset.h);
    let qp = QuadProg::inequality(hess, f, g, h)?;
    let sol = qp_solve_with(&qp, &QpSettings::default(), None)?;
    let u = if sol.is_optimal() { uset.pull_inside(&sol.x) } else { uset.interior_point().to_vec() };
    if !sol.is_optimal() {
        log::warn!("tracking QP ended with status {:?} at z = {z:?}", sol.status);
    }
    let bu = bp.matvec(&u);
    let z_next: Vec<f64> = base.iter().zip(bu).map(|(a, b)| a + b).collect();
    let cost = model.c.matvec(&z_next).iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ControlStep { u, z_next, status: sol.status, cost })
}

/// Time series of a closed-loop run; `x` and `z` have one more entry than
/// the per-step sequences.
#[derive(Clone, Debug, Default)]
pub struct ClosedLoopTrace {
    pub x: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub status: Vec<QpStatus>,
    /// First step whose QP was not solved; the run stops there.
    pub failed_step: Option<usize>,
}

impl ClosedLoopTrace {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Runs plant, observer and controller for `steps` samples with the rows of
/// `refs` as references (the last row is repeated if `refs` is shorter).
#[allow(clippy::too_many_arguments)]
pub fn closed_loop<P: Plant + ?Sized>(
    plant: &P,
    model: &QlpvModel,
    q: &[f64],
    template: &PolytopeTemplate,
    uset: &InputConstraints,
    refs: &Mat<f64>,
    z0: &[f64],
    plant_x0: &[f64],
    steps: usize,
    dt: f64,
    weights: ControlWeights,
) -> Result<ClosedLoopTrace> {
    ensure_dims!(plant.nu() == model.nu() && plant.ny() == model.ny(), "plant and model channels differ");
    ensure_dims!(refs.cols() == model.ny(), "references have {} channels, expected {}", refs.cols(), model.ny());
    let mut trace = ClosedLoopTrace { x: vec![plant_x0.to_vec()], z: vec![z0.to_vec()], ..Default::default() };
    if steps == 0 {
        return Ok(trace);
    }
    ensure_dims!(refs.rows() > 0, "empty reference sequence");
    for t in 0..steps {
        let x = trace.x[t].clone();
        let z = trace.z[t].clone();
        let y = plant.output(&x);
        let r = refs.row(t.min(refs.rows() - 1)).to_vec();
        let step = tracking_control(model, q, template, uset, &z, &y, &r, weights)?;
        trace.y.push(y);
        trace.r.push(r);
        trace.status.push(step.status);
        trace.u.push(step.u.clone());
        if step.status != QpStatus::Optimal {
            trace.failed_step = Some(t);
            break;
        }
        trace.x.push(plant.step(&x, &step.u, dt)?);
        trace.z.push(step.z_next);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qlpv::{Activation, Layer, Mlp, SchedulingNet};

    fn scalar(a: f64, b: f64) -> QlpvModel {
        let net = SchedulingNet {
            nets: vec![Mlp { layers: vec![Layer { w: Mat::zeros(1, 1), b: vec![0.0] }] }],
            activation: Activation::Tanh,
        };
        QlpvModel::new(
            vec![Mat::from_rows(&[&[a]])],
            vec![Mat::from_rows(&[&[b]])],
            Mat::identity(1),
            vec![Mat::zeros(1, 1)],
            net,
        )
        .unwrap()
    }

    #[test]
    fn origin_stays() {
        let m = scalar(0.5, 1.0);
        let t = PolytopeTemplate::boxed(1).unwrap();
        let u = InputConstraints::boxed(&[-1.0], &[1.0]).unwrap();
        let s = tracking_control(&m, &[1.0, 1.0], &t, &u, &[0.0], &[0.0], &[0.0], ControlWeights::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.u[0].abs() < 1e-7 && s.cost < 1e-12);
    }

    #[test]
    fn far_reference_saturates() {
        let m = scalar(0.5, 1.0);
        let t = PolytopeTemplate::boxed(1).unwrap();
        let u = InputConstraints::boxed(&[-1.0], &[1.0]).unwrap();
        let s = tracking_control(&m, &[0.8, 0.8], &t, &u, &[0.2], &[0.2], &[5.0], ControlWeights::default()).unwrap();
        // 0.5·0.2 + u <= 0.8 binds before |u| <= 1.
        assert!((s.z_next[0] - 0.8).abs() < 1e-7, "{:?}", s.z_next);
        assert!(u.contains(&s.u, 0.0));
    }

    #[test]
    fn outside_start_is_rejected() {
        let m = scalar(0.5, 1.0);
        let t = PolytopeTemplate::boxed(1).unwrap();
        let u = InputConstraints::boxed(&[-1.0], &[1.0]).unwrap();
        assert!(tracking_control(&m, &[0.8, 0.8], &t, &u, &[0.9], &[0.0], &[0.0], ControlWeights::default()).is_err());
    }
}
