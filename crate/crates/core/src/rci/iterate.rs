use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;

use super::program::size_value;
use super::{bound_prop, build_s, build_shat, tightened_vertices, DisturbanceBox, Layout, RciProblem};
use crate::qlpv::QlpvModel;
use crate::qp::{qp_layer, QpStatus};
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RciStatus {
    Optimal,
    /// The QP of the given (1-based) iteration was not solved; the solution
    /// holds the previous iterate.
    StepFailed { iteration: usize, status: QpStatus },
}

#[derive(Clone, Debug)]
pub struct RciSolution<T = f64> {
    pub q: Vec<T>,
    /// `v_1..v_𝗏` stacked, `n_u` entries each.
    pub v: Vec<T>,
    /// Scheduling lower bounds the RCI rows were tightened with.
    pub a: Vec<T>,
    /// Size `d(Ā, B̄, C, q)` of the returned set.
    pub r: T,
    /// `r_1, r_2, …` of the completed iterations.
    pub trace: Vec<f64>,
    pub status: RciStatus,
    /// Offsets whose bounding box (inflated by `zeta`) certified `a`.
    pub q_tilde: Vec<f64>,
    pub zeta: f64,
    /// Full primal of the last QP, used to warm start the next solve.
    pub x: Vec<f64>,
    pub max_kkt: f64,
    /// One flag per QP layer, set if its reverse pass was degenerate.
    pub degenerate: Vec<Rc<Cell<bool>>>,
}

impl<T: Real> RciSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == RciStatus::Optimal
    }

    pub fn values(&self) -> RciSolution<f64> {
        let v = |x: &[T]| x.iter().map(|e| e.value()).collect();
        RciSolution {
            q: v(&self.q),
            v: v(&self.v),
            a: v(&self.a),
            r: self.r.value(),
            trace: self.trace.clone(),
            status: self.status,
            q_tilde: self.q_tilde.clone(),
            zeta: self.zeta,
            x: self.x.clone(),
            max_kkt: self.max_kkt,
            degenerate: self.degenerate.clone(),
        }
    }

    /// Input `U_j v` of vertex `j` for `nu` inputs.
    pub fn vertex_input(&self, j: usize, nu: usize) -> &[T] {
        &self.v[j * nu..(j + 1) * nu]
    }

    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|d| d.get())
    }
}

/// Baseline regularizer: one QP over the untightened rows, no containment.
/// An infeasible QP means no set of the template family is RCI for this
/// model.
pub fn solve_baseline_r<T: Real>(model: &QlpvModel<T>, w: &DisturbanceBox<T>, prob: &RciProblem) -> Result<RciSolution<T>> {
    prob.check_model(model)?;
    let zeros = vec![T::zero(); model.np()];
    let tight = tightened_vertices(model, &zeros, prob.template.facets(), w)?;
    let (qp, c0) = build_s(&model.c, &tight, w, prob)?;
    let layer = qp_layer(&qp, &prob.settings, None)?;
    if !layer.sol.is_optimal() {
        return Err(Error::Infeasible(format!(
            "baseline RCI program ended with status {:?}; enlarge the output or input sets, change the template, or refine the model",
            layer.sol.status
        )));
    }
    let lay = Layout::of(prob);
    let r = size_value(layer.value, &layer.x, &lay, c0);
    let q: Vec<T> = layer.x[..lay.nf].to_vec();
    Ok(RciSolution {
        q_tilde: q.iter().map(|v| v.value()).collect(),
        q,
        v: layer.x[lay.nf..lay.traj(0)].to_vec(),
        a: zeros,
        trace: vec![r.value()],
        r,
        status: RciStatus::Optimal,
        zeta: 0.0,
        x: layer.sol.x.clone(),
        max_kkt: layer.sol.kkt_residual,
        degenerate: vec![layer.degenerate],
    })
}

/// `k_hat` rounds of: bounds `a` on the scheduling vector over the inflated
/// bounding box of `X(q_k)`, then the combined QP over `𝕊̂(q_k, a)`.
pub fn algorithm1<T: Real>(
    model: &QlpvModel<T>,
    w: &DisturbanceBox<T>,
    prob: &RciProblem,
    q0: &[T],
    k_hat: usize,
    zeta: f64,
) -> Result<RciSolution<T>> {
    algorithm1_from(model, w, prob, q0, k_hat, zeta, None)
}

/// [`algorithm1`] warm started from `prev`, whose `v` and `r` are also
/// returned (as constants) if the very first QP fails.
pub fn algorithm1_from<T: Real>(
    model: &QlpvModel<T>,
    w: &DisturbanceBox<T>,
    prob: &RciProblem,
    q0: &[T],
    k_hat: usize,
    zeta: f64,
    prev: Option<&RciSolution<f64>>,
) -> Result<RciSolution<T>> {
    prob.check_model(model)?;
    if k_hat == 0 {
        return Err(Error::InvalidArgument(String::from("k_hat must be at least 1")));
    }
    if !(zeta >= 0.0) {
        return Err(Error::InvalidArgument(format!("zeta must be nonnegative, got {zeta}")));
    }
    let lay = Layout::of(prob);
    let np = model.np();
    let mut sol = RciSolution {
        q: q0.to_vec(),
        v: match prev {
            Some(p) if p.v.len() == lay.nv * lay.nu => p.v.iter().map(|&x| T::cst(x)).collect(),
            _ => vec![T::zero(); lay.nv * lay.nu],
        },
        a: vec![T::zero(); np],
        r: T::cst(prev.map_or(f64::NAN, |p| p.r)),
        trace: Vec::with_capacity(k_hat),
        status: RciStatus::Optimal,
        q_tilde: q0.iter().map(|v| v.value()).collect(),
        zeta,
        x: prev.map_or(Vec::new(), |p| p.x.clone()),
        max_kkt: 0.0,
        degenerate: Vec::new(),
    };
    for k in 0..k_hat {
        let (a, bbox) = bound_prop(&model.net, &prob.template, &sol.q, zeta)?;
        let tight = tightened_vertices(model, &a, prob.template.facets(), w)?;
        // With one local model the hull is a point whatever a is, so the box
        // certificate is not needed.
        let containment = if np > 1 { Some(&bbox) } else { None };
        let (qp, c0) = build_shat(&model.c, &tight, w, prob, containment)?;
        let warm = (sol.x.len() == lay.n()).then_some(sol.x.as_slice());
        let layer = qp_layer(&qp, &prob.settings, warm)?;
        if !layer.sol.is_optimal() {
            log::warn!("RCI iteration {} ended with status {:?}; keeping the previous iterate", k + 1, layer.sol.status);
            sol.status = RciStatus::StepFailed { iteration: k + 1, status: layer.sol.status };
            break;
        }
        sol.q_tilde = sol.q.iter().map(|v| v.value()).collect();
        sol.r = size_value(layer.value, &layer.x, &lay, c0);
        sol.trace.push(sol.r.value());
        sol.q = layer.x[..lay.nf].to_vec();
        sol.v = layer.x[lay.nf..lay.traj(0)].to_vec();
        sol.a = a;
        sol.x = layer.sol.x.clone();
        sol.max_kkt = sol.max_kkt.max(layer.sol.kkt_residual);
        sol.degenerate.push(layer.degenerate);
    }
    Ok(sol)
}
