use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{max_violation, tightened_vertices, DisturbanceBox, RciProblem, RciSolution};
use crate::ccpoly::box_of;
use crate::error::ensure_dims;
use crate::qlpv::{blend, QlpvModel};
use crate::Result;

/// Tolerance used for the violation counts.
pub const VERIFY_TOL: f64 = 1e-7;

/// Largest violations (positive means violated) of each row family, and
/// counts of sampled violations above [`VERIFY_TOL`].
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub rci_rows: f64,
    pub output_rows: f64,
    pub input_rows: f64,
    pub cone_rows: f64,
    /// `|V_j q − μ| − σ` against the inflated box of `q_tilde`; `-inf` when
    /// `a = 0` and no certificate is needed.
    pub containment_rows: f64,
    pub samples: usize,
    pub max_state_violation: f64,
    pub state_violations: usize,
    pub max_output_violation: f64,
    pub output_violations: usize,
    pub input_violations: usize,
    /// Largest `a_i − p_i(z)` over samples of the certified box.
    pub max_schedule_violation: f64,
    pub schedule_violations: usize,
}

impl VerifyReport {
    pub fn max_row_violation(&self) -> f64 {
        [self.rci_rows, self.output_rows, self.input_rows, self.cone_rows, self.containment_rows]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sampled_violations(&self) -> usize {
        self.state_violations + self.output_violations + self.input_violations + self.schedule_violations
    }

    pub fn passed(&self) -> bool {
        self.max_row_violation() <= VERIFY_TOL && self.sampled_violations() == 0
    }
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -libm::log(1.0 - rng.gen::<f64>())).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Brute-force invariance check of an RCI solution: every row exactly, then
/// one nonlinear step from sampled states of `X(q)` under the vertex control
/// law and every corner of `𝕎`, then `a <= p(z)` on the certified box.
pub fn verify_rci(
    model: &QlpvModel,
    w: &DisturbanceBox,
    prob: &RciProblem,
    sol: &RciSolution,
    n_samples: usize,
    seed: u64,
) -> Result<VerifyReport> {
    prob.check_model(model)?;
    let tpl = &prob.template;
    let (nx, nu, nf, nv) = (tpl.nx(), prob.u.nu(), tpl.num_facets(), tpl.num_vertices());
    ensure_dims!(sol.q.len() == nf && sol.v.len() == nv * nu, "solution does not match the template");
    let fm = tpl.facets();
    let q = &sol.q;
    let verts: Vec<Vec<f64>> = (0..nv).map(|j| tpl.vertex(j, q)).collect();
    let uv: Vec<&[f64]> = (0..nv).map(|j| sol.vertex_input(j, nu)).collect();
    let tight = tightened_vertices(model, &sol.a, fm, w)?;

    let mut rci_rows = f64::NEG_INFINITY;
    for i in 0..tight.np() {
        for j in 0..nv {
            let next = add(&tight.a[i].matvec(&verts[j]), &tight.b[i].matvec(uv[j]));
            let shifted: Vec<f64> = q.iter().zip(&tight.d[i]).map(|(q, d)| q - d).collect();
            rci_rows = rci_rows.max(max_violation(fm, &shifted, &next));
        }
    }
    let radius = w.radius();
    let hy = &prob.y.hy;
    let yrhs: Vec<f64> = (0..hy.rows())
        .map(|r| {
            let row = hy.row(r);
            prob.y.h[r]
                - row.iter().zip(&w.c_w).map(|(h, c)| h * c).sum::<f64>()
                - row.iter().zip(&radius).map(|(h, e)| h.abs() * e).sum::<f64>()
        })
        .collect();
    let output_rows = verts.iter().map(|v| max_violation(hy, &yrhs, &model.c.matvec(v))).fold(f64::NEG_INFINITY, f64::max);
    let input_rows = uv.iter().map(|u| max_violation(&prob.u.hu, &prob.u.h, u)).fold(f64::NEG_INFINITY, f64::max);
    let cone_rows = tpl.config_violation(q);
    let certified = sol.a.iter().any(|&a| a != 0.0);
    let cert_box = box_of(&(0..nv).map(|j| tpl.vertex(j, &sol.q_tilde)).collect::<Vec<_>>(), sol.zeta);
    let containment_rows = if certified {
        verts
            .iter()
            .flat_map(|v| (0..nx).map(|i| (v[i] - cert_box.center[i]).abs() - cert_box.half_width[i]).collect::<Vec<_>>())
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        f64::NEG_INFINITY
    };

    let mut report = VerifyReport {
        rci_rows,
        output_rows,
        input_rows,
        cone_rows,
        containment_rows,
        samples: 0,
        max_state_violation: f64::NEG_INFINITY,
        state_violations: 0,
        max_output_violation: f64::NEG_INFINITY,
        output_violations: 0,
        input_violations: 0,
        max_schedule_violation: f64::NEG_INFINITY,
        schedule_violations: 0,
    };
    let corners = w.corners();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The vertices themselves first, then Dirichlet hull weights.
    for s in 0..nv + n_samples {
        let lam = if s < nv {
            (0..nv).map(|j| if j == s { 1.0 } else { 0.0 }).collect()
        } else {
            dirichlet(&mut rng, nv)
        };
        let z: Vec<f64> = (0..nx).map(|r| lam.iter().zip(&verts).map(|(l, v)| l * v[r]).sum()).collect();
        let u: Vec<f64> = (0..nu).map(|c| lam.iter().zip(&uv).map(|(l, v)| l * v[c]).sum()).collect();
        if !prob.u.contains(&u, VERIFY_TOL) {
            report.input_violations += 1;
        }
        let p = model.scheduling(&z)?;
        let a = blend(&model.a, &p)?;
        let b = blend(&model.b, &p)?;
        let l = blend(&model.l, &p)?;
        let nominal = add(&a.matvec(&z), &b.matvec(&u));
        let cz = model.c.matvec(&z);
        for wc in &corners {
            let next = add(&nominal, &l.matvec(wc));
            let sv = max_violation(fm, q, &next);
            let ov = max_violation(hy, &prob.y.h, &add(&cz, wc));
            report.max_state_violation = report.max_state_violation.max(sv);
            report.max_output_violation = report.max_output_violation.max(ov);
            report.state_violations += usize::from(sv > VERIFY_TOL);
            report.output_violations += usize::from(ov > VERIFY_TOL);
        }
        report.samples += 1;
    }
    if certified {
        let corners_of_box = 1usize << nx.min(12);
        for s in 0..n_samples + corners_of_box {
            let z: Vec<f64> = (0..nx)
                .map(|i| {
                    let t = if s < corners_of_box { if s >> i & 1 == 1 { 1.0 } else { -1.0 } } else { 2.0 * rng.gen::<f64>() - 1.0 };
                    cert_box.center[i] + t * cert_box.half_width[i]
                })
                .collect();
            let p = model.scheduling(&z)?;
            for (ai, pi) in sol.a.iter().zip(&p) {
                let gap = ai - pi;
                report.max_schedule_violation = report.max_schedule_violation.max(gap);
                report.schedule_violations += usize::from(gap > 1e-12);
            }
        }
    }
    Ok(report)
}
