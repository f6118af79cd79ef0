//! Assembly of the size QP and of the combined QPs over `(q, v, u)`.
//!
//! Trajectories are condensed: with `z_0 = 0`, `z_t = Σ_{s<t} Ā^{t−1−s} B̄ u_s`,
//! so only the inputs `u^k_0..u^k_{M−1}` of each output vertex `k` are
//! variables.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{DisturbanceBox, RciProblem, TightenedSystem};
use crate::ccpoly::BoundingBox;
use crate::error::ensure_dims;
use crate::linalg::{const_matmul, matmul_const};
use crate::qp::{qp_layer, QpStatus, QuadProg};
use crate::real::sum;
use crate::{Error, Mat, Real, Result};

/// Weight of the proximal term `ε(‖q‖² + ‖v‖²)` that makes the combined QPs
/// strictly convex in `(q, v)`. It is excluded from the reported size.
pub const PROX_WEIGHT: f64 = 1e-6;

/// Variable layout `[q | v_1..v_𝗏 | u^1_0..u^1_{M−1} | … | u^{v_y}_{M−1}]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub nf: usize,
    pub nv: usize,
    pub nu: usize,
    pub vy: usize,
    pub horizon: usize,
}

impl Layout {
    pub fn of(prob: &RciProblem) -> Self {
        Layout {
            nf: prob.template.num_facets(),
            nv: prob.template.num_vertices(),
            nu: prob.u.nu(),
            vy: prob.y.num_vertices(),
            horizon: prob.horizon,
        }
    }

    pub fn v(&self, j: usize) -> usize {
        self.nf + j * self.nu
    }

    pub fn traj(&self, k: usize) -> usize {
        self.nf + self.nv * self.nu + k * self.horizon * self.nu
    }

    pub fn n(&self) -> usize {
        self.traj(self.vy)
    }
}

struct Rows<T> {
    n: usize,
    g: Vec<T>,
    h: Vec<T>,
}

impl<T: Real> Rows<T> {
    fn new(n: usize) -> Self {
        Rows { n, g: Vec::new(), h: Vec::new() }
    }

    fn push(&mut self, entries: impl IntoIterator<Item = (usize, T)>, rhs: T) {
        let start = self.g.len();
        self.g.resize(start + self.n, T::zero());
        for (c, v) in entries {
            self.g[start + c] = v;
        }
        self.h.push(rhs);
    }

    fn finish(self) -> (Mat<T>, Vec<T>) {
        let m = self.h.len();
        (Mat::from_vec(m, self.n, self.g), self.h)
    }
}

/// Condensed size objective for one model: `Σ_k uᵀ H u / 2 + f_kᵀ u + c0`
/// plus the state maps `z_t = Z_t u`.
struct SizeTerms<T> {
    hess: Mat<T>,
    f: Vec<Vec<T>>,
    c0: f64,
    /// `Z_1..Z_{M−1}` (the constraints never involve `z_0 = 0` or `z_M`).
    zmaps: Vec<Mat<T>>,
}

fn size_terms<T: Real>(abar: &Mat<T>, bbar: &Mat<T>, c: &Mat<T>, yv: &[Vec<f64>], m: usize) -> SizeTerms<T> {
    let (nx, nu) = bbar.shape();
    let ny = c.rows();
    let mut powers = Vec::with_capacity(m);
    powers.push(bbar.clone());
    for k in 1..m {
        powers.push(abar.matmul(&powers[k - 1]));
    }
    let zmap = |t: usize| {
        Mat::from_fn(nx, m * nu, |r, col| {
            let s = col / nu;
            if s < t {
                powers[t - 1 - s][(r, col % nu)]
            } else {
                T::zero()
            }
        })
    };
    let gs: Vec<Mat<T>> = (1..=m).map(|t| c.matmul(&zmap(t))).collect();
    let nm = m * nu;
    let hess = Mat::from_fn(nm, nm, |i, j| {
        sum(gs.iter().flat_map(|g| (0..ny).map(move |r| g[(r, i)] * g[(r, j)]))).scale(2.0)
    });
    let f = yv
        .iter()
        .map(|y| {
            (0..nm)
                .map(|i| sum(gs.iter().flat_map(|g| (0..ny).map(move |r| g[(r, i)].scale(y[r])))).scale(-2.0))
                .collect()
        })
        .collect();
    let c0 = m as f64 * yv.iter().map(|y| y.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
    SizeTerms { hess, f, c0, zmaps: (1..m).map(zmap).collect() }
}

/// Objective and trajectory rows shared by the size QP and the combined QPs.
/// `q` occupies the first columns unless `q_fixed` is given.
fn push_trajectories<T: Real>(
    rows: &mut Rows<T>,
    hess: &mut Mat<T>,
    f: &mut [T],
    terms: &SizeTerms<T>,
    prob: &RciProblem,
    lay: &Layout,
    q_fixed: Option<&[T]>,
) {
    let fm = prob.template.facets();
    let (nu, m) = (lay.nu, lay.horizon);
    let fz: Vec<Mat<T>> = terms.zmaps.iter().map(|z| const_matmul(fm, z)).collect();
    for k in 0..lay.vy {
        let off = lay.traj(k);
        for i in 0..m * nu {
            for j in 0..m * nu {
                hess[(off + i, off + j)] = terms.hess[(i, j)];
            }
            f[off + i] = terms.f[k][i];
        }
        if q_fixed.is_none() {
            for r in 0..fm.rows() {
                rows.push([(r, -T::one())], T::zero());
            }
        }
        for fzt in &fz {
            for r in 0..fm.rows() {
                let coeffs = (0..m * nu).filter(|&i| fzt[(r, i)].value() != 0.0).map(|i| (off + i, fzt[(r, i)]));
                match q_fixed {
                    Some(q) => rows.push(coeffs, q[r]),
                    None => rows.push(coeffs.chain([(r, -T::one())]), T::zero()),
                }
            }
        }
        for t in 0..m {
            for r in 0..prob.u.hu.rows() {
                let coeffs = (0..nu).map(|c| (off + t * nu + c, T::cst(prob.u.hu[(r, c)])));
                rows.push(coeffs, T::cst(prob.u.h[r]));
            }
        }
    }
}

/// Optimal value and trajectories of the size QP at fixed `q`.
#[derive(Clone, Debug)]
pub struct SizeSolution<T = f64> {
    pub d: T,
    pub status: QpStatus,
    /// `inputs[k][t]`.
    pub inputs: Vec<Vec<Vec<f64>>>,
    /// `states[k][t]` for `t = 0..=M`.
    pub states: Vec<Vec<Vec<f64>>>,
}

/// `d(Ā, B̄, C, q)`: steer the nominal model from the origin towards each
/// output vertex in `M` steps while staying in `X(q)` with inputs in `𝕌`.
pub fn size_qp<T: Real>(abar: &Mat<T>, bbar: &Mat<T>, c: &Mat<T>, q: &[T], prob: &RciProblem) -> Result<SizeSolution<T>> {
    let lay = Layout::of(prob);
    let nx = prob.template.nx();
    ensure_dims!(abar.shape() == (nx, nx), "Ā is {:?}, expected ({nx}, {nx})", abar.shape());
    ensure_dims!(bbar.shape() == (nx, lay.nu), "B̄ is {:?}, expected ({nx}, {})", bbar.shape(), lay.nu);
    ensure_dims!(c.shape() == (prob.y.ny(), nx), "C is {:?}", c.shape());
    ensure_dims!(q.len() == lay.nf, "q has {} entries, expected {}", q.len(), lay.nf);
    let qv: Vec<f64> = q.iter().map(|v| v.value()).collect();
    if !prob.template.check_config(&qv) {
        return Err(Error::ConfigViolation { max_violation: prob.template.config_violation(&qv) });
    }
    let terms = size_terms(abar, bbar, c, &prob.y.vertices, lay.horizon);
    let mn = lay.horizon * lay.nu;
    let n = lay.vy * mn;
    let sub = Layout { nf: 0, nv: 0, ..lay };
    let mut rows = Rows::new(n);
    let mut hess = Mat::from_fn(n, n, |_, _| T::zero());
    let mut f = vec![T::zero(); n];
    push_trajectories(&mut rows, &mut hess, &mut f, &terms, prob, &sub, Some(q));
    let (g, h) = rows.finish();
    let infeasible = |status| SizeSolution { d: T::cst(f64::INFINITY), status, inputs: Vec::new(), states: Vec::new() };
    // z_0 = 0 must lie in X(q).
    if qv.iter().any(|&v| v < 0.0) {
        return Ok(infeasible(QpStatus::Infeasible));
    }
    let qp = QuadProg::inequality(hess, f, g, h)?;
    let layer = qp_layer(&qp, &prob.settings, None)?;
    if !layer.sol.is_optimal() {
        return Ok(infeasible(layer.sol.status));
    }
    let abar_v = abar.values();
    let bbar_v = bbar.values();
    let mut inputs = Vec::with_capacity(lay.vy);
    let mut states = Vec::with_capacity(lay.vy);
    for k in 0..lay.vy {
        let us: Vec<Vec<f64>> =
            (0..lay.horizon).map(|t| layer.sol.x[k * mn + t * lay.nu..k * mn + (t + 1) * lay.nu].to_vec()).collect();
        let mut zs = vec![vec![0.0; nx]];
        for u in &us {
            let z = zs.last().unwrap();
            let next: Vec<f64> = abar_v.matvec(z).iter().zip(bbar_v.matvec(u)).map(|(a, b)| a + b).collect();
            zs.push(next);
        }
        inputs.push(us);
        states.push(zs);
    }
    Ok(SizeSolution { d: layer.value + T::cst(terms.c0), status: layer.sol.status, inputs, states })
}

/// Combined QP over `(q, v, u)` with the rows of `𝕊̂(q̃, a)`: RCI rows for
/// every tightened system and vertex, output and input rows per vertex, the
/// configuration cone, and, when `containment` is given, `|V_j q − μ| <= σ`
/// for every vertex. Returns the QP and the constant `c0` of the size
/// objective.
pub fn build_shat<T: Real>(
    c: &Mat<T>,
    tight: &TightenedSystem<T>,
    w: &DisturbanceBox<T>,
    prob: &RciProblem,
    containment: Option<&BoundingBox<T>>,
) -> Result<(QuadProg<T>, f64)> {
    let lay = Layout::of(prob);
    let tpl = &prob.template;
    let nx = tpl.nx();
    let fm = tpl.facets();
    ensure_dims!(w.ny() == prob.y.ny(), "disturbance box has {} outputs, expected {}", w.ny(), prob.y.ny());
    ensure_dims!(c.shape() == (prob.y.ny(), nx), "C is {:?}", c.shape());
    for (i, a) in tight.a.iter().enumerate() {
        ensure_dims!(a.shape() == (nx, nx), "Ã_{i} is {:?}", a.shape());
        ensure_dims!(tight.b[i].shape() == (nx, lay.nu), "B̃_{i} is {:?}", tight.b[i].shape());
    }
    let (abar, bbar) = super::mean_system(tight);
    let terms = size_terms(&abar, &bbar, c, &prob.y.vertices, lay.horizon);
    let n = lay.n();
    let mut rows = Rows::new(n);
    let mut hess = Mat::from_fn(n, n, |_, _| T::zero());
    let mut f = vec![T::zero(); n];
    for i in 0..lay.nf + lay.nv * lay.nu {
        hess[(i, i)] = T::cst(2.0 * PROX_WEIGHT);
    }
    // F(Ã_i V_j q + B̃_i v_j) + d̃_i <= q
    for (i, (ai, bi)) in tight.a.iter().zip(&tight.b).enumerate() {
        let fa = const_matmul(fm, ai);
        let fb = const_matmul(fm, bi);
        for (j, vj) in tpl.vertex_maps().iter().enumerate() {
            let fav = matmul_const(&fa, vj);
            for r in 0..lay.nf {
                let qpart = (0..lay.nf).map(|s| (s, if s == r { fav[(r, s)] - T::one() } else { fav[(r, s)] }));
                let vpart = (0..lay.nu).map(|s| (lay.v(j) + s, fb[(r, s)]));
                rows.push(qpart.chain(vpart), -tight.d[i][r]);
            }
        }
    }
    // H_y (C V_j q + c_w) + κ|H_y| ε_w <= h_y
    let hyc = const_matmul(&prob.y.hy, c);
    let radius = w.radius();
    let yrhs: Vec<T> = (0..prob.y.hy.rows())
        .map(|r| {
            let row = prob.y.hy.row(r);
            let shift = sum(row.iter().zip(&w.c_w).map(|(&h, &cw)| cw.scale(h)));
            let spread = sum(row.iter().zip(&radius).map(|(&h, &rw)| rw.scale(h.abs())));
            T::cst(prob.y.h[r]) - shift - spread
        })
        .collect();
    for vj in tpl.vertex_maps() {
        let m = matmul_const(&hyc, vj);
        for r in 0..prob.y.hy.rows() {
            rows.push((0..lay.nf).map(|s| (s, m[(r, s)])), yrhs[r]);
        }
    }
    // U_j v ∈ 𝕌
    for j in 0..lay.nv {
        for r in 0..prob.u.hu.rows() {
            rows.push((0..lay.nu).map(|s| (lay.v(j) + s, T::cst(prob.u.hu[(r, s)]))), T::cst(prob.u.h[r]));
        }
    }
    // E q <= 0
    let e = tpl.cone();
    for r in 0..e.rows() {
        rows.push((0..lay.nf).filter(|&s| e[(r, s)] != 0.0).map(|s| (s, T::cst(e[(r, s)]))), T::zero());
    }
    if let Some(bb) = containment {
        ensure_dims!(bb.center.len() == nx, "containment box has dimension {}", bb.center.len());
        for vj in tpl.vertex_maps() {
            for i in 0..nx {
                let coeff = |sign: f64| (0..lay.nf).filter(|&s| vj[(i, s)] != 0.0).map(move |s| (s, T::cst(sign * vj[(i, s)])));
                rows.push(coeff(1.0), bb.center[i] + bb.half_width[i]);
                rows.push(coeff(-1.0), bb.half_width[i] - bb.center[i]);
            }
        }
    }
    push_trajectories(&mut rows, &mut hess, &mut f, &terms, prob, &lay, None);
    let (g, h) = rows.finish();
    if !g.as_slice().iter().chain(&h).all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("constraint data of the {n}-variable RCI program")));
    }
    Ok((QuadProg::inequality(hess, f, g, h)?, terms.c0))
}

/// The combined QP over the rows of `𝕊` (untightened vertex systems, no
/// containment).
pub fn build_s<T: Real>(
    c: &Mat<T>,
    tight: &TightenedSystem<T>,
    w: &DisturbanceBox<T>,
    prob: &RciProblem,
) -> Result<(QuadProg<T>, f64)> {
    build_shat(c, tight, w, prob, None)
}

/// Size part of the combined objective: the QP value minus the proximal
/// term, plus `c0`.
pub(crate) fn size_value<T: Real>(value: T, x: &[T], lay: &Layout, c0: f64) -> T {
    let prox = sum(x[..lay.nf + lay.nv * lay.nu].iter().map(|&v| v * v)).scale(PROX_WEIGHT);
    value - prox + T::cst(c0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccpoly::PolytopeTemplate;
    use crate::rci::{InputConstraints, OutputConstraints};

    fn scalar_problem(y: f64, umax: f64, m: usize) -> RciProblem {
        let yset = OutputConstraints::interval(-y.abs(), y.abs()).unwrap();
        let yset = OutputConstraints { vertices: vec![vec![y]], ..yset };
        RciProblem::new(PolytopeTemplate::boxed(1).unwrap(), yset, InputConstraints::boxed(&[-umax], &[umax]).unwrap(), m)
            .unwrap()
    }

    #[test]
    fn hand_solved_two_step() {
        // z⁺ = z + u, |u| <= 1, X = [−2, 2], y = 2, M = 2:
        // min (2 − u0)² + (2 − u0 − u1)² with |z_1| <= 2 → u0 = 1, u1 = 1, d = 1.
        let prob = scalar_problem(2.0, 1.0, 2);
        let one = Mat::identity(1);
        let sol = size_qp(&one, &one, &one, &[2.0, 2.0], &prob).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.d - 1.0).abs() < 1e-8, "{}", sol.d);
        assert!((sol.inputs[0][0][0] - 1.0).abs() < 1e-6);
        // Tight box: z_1 <= 0.5 → u0 = 0.5, u1 = 1: (1.5)² + (0.5)² = 2.5.
        let sol = size_qp(&one, &one, &one, &[0.5, 0.5], &prob).unwrap();
        assert!((sol.d - 2.5).abs() < 1e-8, "{}", sol.d);
    }

    #[test]
    fn origin_targets_cost_nothing() {
        let prob = scalar_problem(0.0, 1.0, 5);
        let a = Mat::from_rows(&[&[0.9]]);
        let one = Mat::identity(1);
        let sol = size_qp(&a, &one, &one, &[1.0, 1.0], &prob).unwrap();
        assert!(sol.d.abs() < 1e-9);
        assert!(sol.inputs[0].iter().all(|u| u[0].abs() < 1e-6));
    }

    #[test]
    fn negative_offsets_are_infeasible() {
        let prob = scalar_problem(1.0, 1.0, 2);
        let one = Mat::identity(1);
        let sol = size_qp(&one, &one, &one, &[-0.1, 1.0], &prob).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }
}
