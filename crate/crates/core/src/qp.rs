//! Dense convex quadratic programming with solution derivatives.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ xᵀ H x + fᵀ x
//! subject to  G x <= h
//!             A x  = b
//! ```
//!
//! [`qp_solve`] runs a Mehrotra predictor-corrector primal-dual interior point
//! method on `H + ρI` with `ρ = 1e-9 · trace(H) / n`, then polishes the result
//! by re-solving the equality-constrained KKT system on the detected active
//! set. [`qp_gradients`] differentiates the solution map through that KKT
//! system and [`qp_value_gradients`] returns the (envelope) derivatives of the
//! optimal value.

use alloc::boxed::Box;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;
use core::fmt;

use crate::error::ensure_dims;
use crate::linalg::{norm_inf, refine, solve_or_lstsq, Cholesky, Lu};
use crate::{Error, Mat, Real, Result};

/// Slack below which an inequality is considered active.
pub const ACTIVE_TOL: f64 = 1e-7;
/// Multiplier below which an active inequality is treated as weakly active.
pub const WEAK_MULTIPLIER_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct QuadProg<T = f64> {
    pub hess: Mat<T>,
    pub f: Vec<T>,
    pub g: Mat<T>,
    pub h: Vec<T>,
    pub aeq: Mat<T>,
    pub beq: Vec<T>,
}

impl<T: Real> QuadProg<T> {
    /// Validates dimensions and symmetrizes `hess`.
    pub fn new(hess: Mat<T>, f: Vec<T>, g: Mat<T>, h: Vec<T>, aeq: Mat<T>, beq: Vec<T>) -> Result<Self> {
        let n = f.len();
        ensure_dims!(hess.shape() == (n, n), "H is {:?}, expected ({n}, {n})", hess.shape());
        ensure_dims!(g.cols() == n || g.rows() == 0, "G has {} columns, expected {n}", g.cols());
        ensure_dims!(g.rows() == h.len(), "G has {} rows but h has {}", g.rows(), h.len());
        ensure_dims!(aeq.cols() == n || aeq.rows() == 0, "Aeq has {} columns, expected {n}", aeq.cols());
        ensure_dims!(aeq.rows() == beq.len(), "Aeq has {} rows but beq has {}", aeq.rows(), beq.len());
        let g = if g.rows() == 0 { Mat::zeros(0, n) } else { g };
        let aeq = if aeq.rows() == 0 { Mat::zeros(0, n) } else { aeq };
        let half = T::cst(0.5);
        let hess = Mat::from_fn(n, n, |i, j| {
            if i == j {
                hess[(i, i)]
            } else if i < j {
                (hess[(i, j)] + hess[(j, i)]) * half
            } else {
                (hess[(j, i)] + hess[(i, j)]) * half
            }
        });
        Ok(QuadProg { hess, f, g, h, aeq, beq })
    }

    /// Problem with inequality constraints only.
    pub fn inequality(hess: Mat<T>, f: Vec<T>, g: Mat<T>, h: Vec<T>) -> Result<Self> {
        let n = f.len();
        Self::new(hess, f, g, h, Mat::zeros(0, n), Vec::new())
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn m(&self) -> usize {
        self.h.len()
    }

    pub fn p(&self) -> usize {
        self.beq.len()
    }

    pub fn values(&self) -> QuadProg<f64> {
        QuadProg {
            hess: self.hess.values(),
            f: self.f.iter().map(|v| v.value()).collect(),
            g: self.g.values(),
            h: self.h.iter().map(|v| v.value()).collect(),
            aeq: self.aeq.values(),
            beq: self.beq.iter().map(|v| v.value()).collect(),
        }
    }
}

impl QuadProg<f64> {
    pub fn objective(&self, x: &[f64]) -> f64 {
        let hx = self.hess.matvec(x);
        0.5 * dotf(x, &hx) + dotf(&self.f, x)
    }

    /// Largest violation of `Gx <= h` and `Ax = b`.
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let gx = self.g.matvec(x);
        let ineq = gx.iter().zip(&self.h).fold(0.0f64, |m, (a, b)| m.max(a - b));
        let ax = self.aeq.matvec(x);
        let eq = ax.iter().zip(&self.beq).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        ineq.max(eq)
    }

    fn is_finite(&self) -> bool {
        self.hess.is_finite()
            && self.g.is_finite()
            && self.aeq.is_finite()
            && self.f.iter().chain(&self.h).chain(&self.beq).all(|v| v.is_finite())
    }
}

/// Plain-text dump for offline inspection: one header line per block
/// (`name rows cols`) followed by its rows.
impl fmt::Display for QuadProg<f64> {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(out, "# quadprog n={} m={} p={}", self.n(), self.m(), self.p())?;
        let mut block = |name: &str, rows: usize, cols: usize, data: &[f64]| -> fmt::Result {
            writeln!(out, "{name} {rows} {cols}")?;
            for i in 0..rows {
                let row: Vec<String> = data[i * cols..(i + 1) * cols].iter().map(|v| format!("{v:e}")).collect();
                writeln!(out, "{}", row.join(" "))?;
            }
            Ok(())
        };
        let n = self.n();
        block("H", n, n, self.hess.as_slice())?;
        block("f", 1, n, &self.f)?;
        block("G", self.m(), n, self.g.as_slice())?;
        block("h", 1, self.m(), &self.h)?;
        block("Aeq", self.p(), n, self.aeq.as_slice())?;
        block("beq", 1, self.p(), &self.beq)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Inequality multipliers.
    pub lam: Vec<f64>,
    /// Equality multipliers.
    pub nu: Vec<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub polished: bool,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Clone, Debug)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings { tol: 1e-8, max_iter: 100, polish: true }
    }
}

fn dotf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ρ = 1e-9 · trace(H) / n`.
pub fn regularization(qp: &QuadProg) -> f64 {
    let n = qp.n();
    if n == 0 {
        0.0
    } else {
        1e-9 * qp.hess.trace() / n as f64
    }
}

fn regularized_hessian(qp: &QuadProg) -> Mat<f64> {
    let rho = regularization(qp);
    let mut hr = qp.hess.clone();
    for i in 0..qp.n() {
        hr[(i, i)] += rho;
    }
    hr
}

pub fn qp_solve(qp: &QuadProg, tol: f64, max_iter: usize) -> Result<QpSolution> {
    qp_solve_with(qp, &QpSettings { tol, max_iter, ..QpSettings::default() }, None)
}

/// Solves with explicit settings and an optional primal warm start.
pub fn qp_solve_with(qp: &QuadProg, settings: &QpSettings, warm: Option<&[f64]>) -> Result<QpSolution> {
    if !(settings.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", settings.tol)));
    }
    if !qp.is_finite() {
        return Err(Error::NonFinite(String::from("QP data")));
    }
    if let Some(w) = warm {
        ensure_dims!(w.len() == qp.n(), "warm start has {} entries, expected {}", w.len(), qp.n());
    }
    let hr = regularized_hessian(qp);
    if qp.n() > 0 && Cholesky::factor(&hr).is_none() {
        return Err(Error::NotPositiveDefinite(String::from("H")));
    }
    let mut sol = if qp.m() == 0 { solve_equality_only(qp, &hr)? } else { interior_point(qp, &hr, settings, warm) };
    if sol.status == QpStatus::MaxIter && warm.is_some() {
        sol = interior_point(qp, &hr, settings, None);
    }
    if sol.status == QpStatus::Optimal && settings.polish && qp.m() > 0 && !sol.polished {
        polish(qp, &hr, &mut sol);
    }
    sol.kkt_residual = kkt_residual(qp, &sol.x, &sol.lam, &sol.nu);
    Ok(sol)
}

fn solve_equality_only(qp: &QuadProg, hr: &Mat<f64>) -> Result<QpSolution> {
    let (n, p) = (qp.n(), qp.p());
    let mut rhs: Vec<f64> = qp.f.iter().map(|v| -v).collect();
    rhs.extend_from_slice(&qp.beq);
    let (mut z, degenerate) = solve_or_lstsq(&kkt_matrix(&qp.hess, &qp.aeq, None), &rhs)?;
    if degenerate {
        z = solve_or_lstsq(&kkt_matrix(hr, &qp.aeq, None), &rhs)?.0;
    }
    let x = z[..n].to_vec();
    let nu = z[n..n + p].to_vec();
    let feasible = qp.infeasibility(&x) <= 1e-8 * (1.0 + norm_inf(&qp.beq));
    Ok(QpSolution {
        x,
        lam: Vec::new(),
        nu,
        status: if feasible { QpStatus::Optimal } else { QpStatus::Infeasible },
        kkt_residual: 0.0,
        iterations: 0,
        polished: false,
    })
}

/// `[[H + Gᵀ D G, Aᵀ], [A, 0]]`, with `D` omitted when `None`.
fn kkt_matrix(hr: &Mat<f64>, aeq: &Mat<f64>, gd: Option<(&Mat<f64>, &[f64])>) -> Mat<f64> {
    let n = hr.rows();
    let p = aeq.rows();
    let mut k = Mat::zeros(n + p, n + p);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = hr[(i, j)];
        }
    }
    if let Some((g, d)) = gd {
        for (r, &dr) in d.iter().enumerate() {
            let row = g.row(r);
            for i in 0..n {
                let gi = row[i] * dr;
                if gi != 0.0 {
                    for j in 0..n {
                        k[(i, j)] += gi * row[j];
                    }
                }
            }
        }
    }
    for r in 0..p {
        for j in 0..n {
            k[(n + r, j)] = aeq[(r, j)];
            k[(j, n + r)] = aeq[(r, j)];
        }
    }
    k
}

enum KktFactor {
    Exact(Lu),
    Regularized { lu: Lu, k: Mat<f64> },
}

impl KktFactor {
    fn new(k: Mat<f64>, n: usize) -> Option<Self> {
        if let Some(lu) = Lu::factor(&k) {
            return Some(KktFactor::Exact(lu));
        }
        let mut kr = k.clone();
        let delta = 1e-10 * (1.0 + k.norm_inf());
        for i in 0..kr.rows() {
            kr[(i, i)] += if i < n { delta } else { -delta };
        }
        Lu::factor(&kr).map(|lu| KktFactor::Regularized { lu, k })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            KktFactor::Exact(lu) => lu.solve(rhs),
            KktFactor::Regularized { lu, k } => {
                let mut x = lu.solve(rhs);
                refine(k, rhs, &mut x, |r| lu.solve(r));
                x
            }
        }
    }
}

struct Iterate {
    x: Vec<f64>,
    s: Vec<f64>,
    lam: Vec<f64>,
    nu: Vec<f64>,
}

struct Residuals {
    rd: Vec<f64>,
    rp: Vec<f64>,
    rg: Vec<f64>,
}

fn residuals(qp: &QuadProg, hr: &Mat<f64>, it: &Iterate) -> Residuals {
    let mut rd = hr.matvec(&it.x);
    for (r, (a, b)) in rd.iter_mut().zip(qp.f.iter().zip(qp.g.tr_matvec(&it.lam))) {
        *r += a + b;
    }
    for (r, a) in rd.iter_mut().zip(qp.aeq.tr_matvec(&it.nu)) {
        *r += a;
    }
    let rp: Vec<f64> = qp.aeq.matvec(&it.x).iter().zip(&qp.beq).map(|(a, b)| a - b).collect();
    let gx = qp.g.matvec(&it.x);
    let rg: Vec<f64> = gx.iter().zip(&it.s).zip(&qp.h).map(|((g, s), h)| g + s - h).collect();
    Residuals { rd, rp, rg }
}

fn initial_point(qp: &QuadProg, hr: &Mat<f64>, warm: Option<&[f64]>) -> Option<Iterate> {
    let (n, m, p) = (qp.n(), qp.m(), qp.p());
    if let Some(w) = warm {
        let gx = qp.g.matvec(w);
        let s: Vec<f64> = gx.iter().zip(&qp.h).map(|(g, h)| (h - g).max(1e-2)).collect();
        let lam = s.iter().map(|&si| 1e-2 / si).collect();
        return Some(Iterate { x: w.to_vec(), s, lam, nu: vec![0.0; p] });
    }
    let ones = vec![1.0; m];
    let k = kkt_matrix(hr, &qp.aeq, Some((&qp.g, &ones)));
    let fac = KktFactor::new(k, n)?;
    let mut rhs: Vec<f64> = qp.g.tr_matvec(&qp.h).iter().zip(&qp.f).map(|(a, b)| a - b).collect();
    rhs.extend_from_slice(&qp.beq);
    let z = fac.solve(&rhs);
    let x = z[..n].to_vec();
    let nu = z[n..].to_vec();
    let gx = qp.g.matvec(&x);
    let mut s: Vec<f64> = qp.h.iter().zip(&gx).map(|(h, g)| h - g).collect();
    let mut lam: Vec<f64> = s.iter().map(|v| -v).collect();
    let shift = |v: &mut Vec<f64>| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        if lo < 1e-8 {
            let a = 1.0 - lo.min(0.0);
            v.iter_mut().for_each(|x| *x = (*x + a).max(1e-8));
        }
    };
    shift(&mut s);
    shift(&mut lam);
    Some(Iterate { x, s, lam, nu })
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter().zip(dv).fold(1.0f64, |a, (&x, &d)| if d < 0.0 { a.min(-x / d) } else { a })
}

fn interior_point(qp: &QuadProg, hr: &Mat<f64>, settings: &QpSettings, warm: Option<&[f64]>) -> QpSolution {
    let (n, m, p) = (qp.n(), qp.m(), qp.p());
    let failed = |it: Option<&Iterate>, status, iterations| QpSolution {
        x: it.map_or_else(|| vec![0.0; n], |i| i.x.clone()),
        lam: it.map_or_else(|| vec![0.0; m], |i| i.lam.clone()),
        nu: it.map_or_else(|| vec![0.0; p], |i| i.nu.clone()),
        status,
        kkt_residual: f64::INFINITY,
        iterations,
        polished: false,
    };
    let Some(mut it) = initial_point(qp, hr, warm) else {
        return failed(None, QpStatus::Infeasible, 0);
    };
    let tol = settings.tol;
    let data_scale = 1.0 + norm_inf(&qp.h).max(norm_inf(&qp.beq));
    let dual_scale = 1.0 + norm_inf(&qp.f);
    let mut status = None;
    let mut iter = 0;
    while iter < settings.max_iter {
        let r = residuals(qp, hr, &it);
        let mu = dotf(&it.s, &it.lam) / m as f64;
        let comp = it.s.iter().zip(&it.lam).fold(0.0f64, |a, (s, l)| a.max(s * l));
        let pres = norm_inf(&r.rp).max(norm_inf(&r.rg));
        let dres = norm_inf(&r.rd);
        if dres <= tol * dual_scale && pres <= tol * data_scale && comp <= tol {
            status = Some(QpStatus::Optimal);
            break;
        }
        // Near the solution the active set is usually settled; an exact
        // KKT solve on it finishes faster and more accurately than further
        // (increasingly ill-conditioned) interior point steps.
        if settings.polish && dres <= 1e-4 * dual_scale && pres <= 1e-4 * data_scale && comp <= 1e-4 {
            let mut trial = failed(Some(&it), QpStatus::Optimal, iter);
            if polish(qp, hr, &mut trial) && kkt_residual(qp, &trial.x, &trial.lam, &trial.nu) <= tol * data_scale.max(dual_scale) {
                return trial;
            }
        }
        if pres > tol * data_scale {
            let dobj = dotf(&qp.h, &it.lam) + dotf(&qp.beq, &it.nu);
            if dobj < 0.0 {
                let mut cert = qp.g.tr_matvec(&it.lam);
                for (c, a) in cert.iter_mut().zip(qp.aeq.tr_matvec(&it.nu)) {
                    *c += a;
                }
                if norm_inf(&cert) <= 1e-7 * -dobj {
                    status = Some(QpStatus::Infeasible);
                    break;
                }
            }
        }
        let d: Vec<f64> = it.lam.iter().zip(&it.s).map(|(l, s)| l / s).collect();
        let Some(fac) = KktFactor::new(kkt_matrix(hr, &qp.aeq, Some((&qp.g, &d))), n) else {
            break;
        };
        let newton = |rc: &[f64]| {
            let t: Vec<f64> = (0..m).map(|i| (rc[i] + it.lam[i] * r.rg[i]) / it.s[i]).collect();
            let gt = qp.g.tr_matvec(&t);
            let mut rhs: Vec<f64> = (0..n).map(|i| -r.rd[i] - gt[i]).collect();
            rhs.extend(r.rp.iter().map(|v| -v));
            let z = fac.solve(&rhs);
            let dx = z[..n].to_vec();
            let dnu = z[n..].to_vec();
            let gdx = qp.g.matvec(&dx);
            let dlam: Vec<f64> = (0..m).map(|i| d[i] * gdx[i] + t[i]).collect();
            let ds: Vec<f64> = (0..m).map(|i| -r.rg[i] - gdx[i]).collect();
            (dx, dnu, dlam, ds)
        };
        let rc_aff: Vec<f64> = it.s.iter().zip(&it.lam).map(|(s, l)| -s * l).collect();
        let (_, _, dlam_a, ds_a) = newton(&rc_aff);
        let alpha_a = max_step(&it.s, &ds_a).min(max_step(&it.lam, &dlam_a));
        let mu_aff = (0..m)
            .map(|i| (it.s[i] + alpha_a * ds_a[i]) * (it.lam[i] + alpha_a * dlam_a[i]))
            .sum::<f64>()
            / m as f64;
        let sigma = { let r = (mu_aff / mu).clamp(0.0, 1.0); r * r * r };
        let rc: Vec<f64> =
            (0..m).map(|i| sigma * mu - it.s[i] * it.lam[i] - ds_a[i] * dlam_a[i]).collect();
        let (dx, dnu, dlam, ds) = newton(&rc);
        let alpha = (0.99 * max_step(&it.s, &ds).min(max_step(&it.lam, &dlam))).min(1.0);
        for i in 0..n {
            it.x[i] += alpha * dx[i];
        }
        for i in 0..p {
            it.nu[i] += alpha * dnu[i];
        }
        for i in 0..m {
            it.s[i] = (it.s[i] + alpha * ds[i]).max(1e-300);
            it.lam[i] = (it.lam[i] + alpha * dlam[i]).max(1e-300);
        }
        iter += 1;
        if !it.x.iter().chain(&it.lam).chain(&it.nu).all(|v| v.is_finite()) {
            break;
        }
    }
    let status = status.unwrap_or_else(|| {
        let r = residuals(qp, hr, &it);
        let pres = norm_inf(&r.rp).max(norm_inf(&r.rg));
        if !(pres <= tol * data_scale) {
            QpStatus::Infeasible
        } else {
            QpStatus::MaxIter
        }
    });
    let mut sol = failed(Some(&it), status, iter);
    if status == QpStatus::Optimal {
        let slack: Vec<f64> = qp.h.iter().zip(qp.g.matvec(&sol.x)).map(|(h, g)| h - g).collect();
        for (l, s) in sol.lam.iter_mut().zip(&slack) {
            if *s > ACTIVE_TOL && *l < WEAK_MULTIPLIER_TOL {
                *l = 0.0;
            }
        }
    }
    sol
}

/// Active-set KKT re-solve. Keeps the interior point result unless the
/// polished point has a smaller KKT residual.
fn polish(qp: &QuadProg, hr: &Mat<f64>, sol: &mut QpSolution) -> bool {
    let slack: Vec<f64> = qp.h.iter().zip(qp.g.matvec(&sol.x)).map(|(h, g)| h - g).collect();
    let all: Vec<usize> = (0..qp.m()).filter(|&i| slack[i] <= ACTIVE_TOL).collect();
    let strong: Vec<usize> = all.iter().copied().filter(|&i| sol.lam[i] > WEAK_MULTIPLIER_TOL).collect();
    let before = kkt_residual(qp, &sol.x, &sol.lam, &sol.nu);
    let mut candidates = vec![all];
    if candidates[0].len() != strong.len() {
        candidates.push(strong);
    }
    for active in candidates {
        let Some((x, lam_a, nu)) =
            active_set_solve(qp, &qp.hess, &active).or_else(|| active_set_solve(qp, hr, &active))
        else {
            continue;
        };
        if lam_a.iter().any(|&l| l < -1e-10 * (1.0 + norm_inf(&lam_a))) {
            continue;
        }
        let mut lam = vec![0.0; qp.m()];
        for (&i, &l) in active.iter().zip(&lam_a) {
            lam[i] = l.max(0.0);
        }
        let after = kkt_residual(qp, &x, &lam, &nu);
        if after <= before {
            sol.x = x;
            sol.lam = lam;
            sol.nu = nu;
            sol.polished = true;
            return true;
        }
    }
    false
}

/// Solves the KKT system with the given inequality rows held as equalities.
fn active_set_solve(qp: &QuadProg, hess: &Mat<f64>, active: &[usize]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (n, p) = (qp.n(), qp.p());
    let k = active.len();
    let kkt = active_kkt(qp, hess, active);
    let mut rhs: Vec<f64> = qp.f.iter().map(|v| -v).collect();
    rhs.extend(active.iter().map(|&r| qp.h[r]));
    rhs.extend_from_slice(&qp.beq);
    let lu = Lu::factor(&kkt)?;
    let mut z = lu.solve(&rhs);
    refine(&kkt, &rhs, &mut z, |r| lu.solve(r));
    if !z.iter().all(|v| v.is_finite()) {
        return None;
    }
    debug_assert_eq!(z.len(), n + k + p);
    Some((z[..n].to_vec(), z[n..n + k].to_vec(), z[n + k..].to_vec()))
}

/// `[[H, G_Aᵀ, Aᵀ], [G_A, 0, 0], [A, 0, 0]]` for the active rows `G_A`.
fn active_kkt(qp: &QuadProg, hess: &Mat<f64>, active: &[usize]) -> Mat<f64> {
    let (n, p) = (qp.n(), qp.p());
    let k = active.len();
    let dim = n + k + p;
    let mut kkt = Mat::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            kkt[(i, j)] = hess[(i, j)];
        }
    }
    for (r, &row) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = qp.g[(row, j)];
            kkt[(j, n + r)] = qp.g[(row, j)];
        }
    }
    for r in 0..p {
        for j in 0..n {
            kkt[(n + k + r, j)] = qp.aeq[(r, j)];
            kkt[(j, n + k + r)] = qp.aeq[(r, j)];
        }
    }
    kkt
}

/// Largest of the stationarity, primal feasibility and complementarity
/// residuals (with the unregularized `H`).
pub fn kkt_residual(qp: &QuadProg, x: &[f64], lam: &[f64], nu: &[f64]) -> f64 {
    let mut rd = qp.hess.matvec(x);
    for (r, (a, b)) in rd.iter_mut().zip(qp.f.iter().zip(qp.g.tr_matvec(lam))) {
        *r += a + b;
    }
    for (r, a) in rd.iter_mut().zip(qp.aeq.tr_matvec(nu)) {
        *r += a;
    }
    let gx = qp.g.matvec(x);
    let comp = gx.iter().zip(&qp.h).zip(lam).fold(0.0f64, |m, ((g, h), l)| m.max((l * (g - h)).abs()));
    let dual_sign = lam.iter().fold(0.0f64, |m, l| m.max(-l));
    norm_inf(&rd).max(qp.infeasibility(x)).max(comp).max(dual_sign)
}

/// Derivatives of a scalar loss with respect to every QP data entry.
#[derive(Clone, Debug)]
pub struct QpGradients {
    pub hess: Mat<f64>,
    pub f: Vec<f64>,
    pub g: Mat<f64>,
    pub h: Vec<f64>,
    pub aeq: Mat<f64>,
    pub beq: Vec<f64>,
    /// The KKT system was singular and a least-squares pseudo-solution was used.
    pub degenerate: bool,
    /// Number of constraints with zero slack and (near-)zero multiplier that
    /// were treated as inactive.
    pub weakly_active: usize,
}

impl QpGradients {
    pub fn zeros(qp: &QuadProg) -> Self {
        let (n, m, p) = (qp.n(), qp.m(), qp.p());
        QpGradients {
            hess: Mat::zeros(n, n),
            f: vec![0.0; n],
            g: Mat::zeros(m, n),
            h: vec![0.0; m],
            aeq: Mat::zeros(p, n),
            beq: vec![0.0; p],
            degenerate: false,
            weakly_active: 0,
        }
    }

    pub fn add_assign(&mut self, o: &QpGradients) {
        self.add_scaled(o, 1.0);
    }

    pub fn add_scaled(&mut self, o: &QpGradients, c: f64) {
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
        add(self.hess.as_mut_slice(), o.hess.as_slice());
        add(&mut self.f, &o.f);
        add(self.g.as_mut_slice(), o.g.as_slice());
        add(&mut self.h, &o.h);
        add(self.aeq.as_mut_slice(), o.aeq.as_slice());
        add(&mut self.beq, &o.beq);
        self.degenerate |= o.degenerate;
        self.weakly_active = self.weakly_active.max(o.weakly_active);
    }

    /// Entries in the order `H, f, G, h, Aeq, beq` (row-major matrices).
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(self.hess.as_slice());
        v.extend_from_slice(&self.f);
        v.extend_from_slice(self.g.as_slice());
        v.extend_from_slice(&self.h);
        v.extend_from_slice(self.aeq.as_slice());
        v.extend_from_slice(&self.beq);
        v
    }
}

/// Flattens QP data in the same order as [`QpGradients::flatten`].
pub fn flatten_data<T: Real>(qp: &QuadProg<T>) -> Vec<T> {
    let mut v = Vec::new();
    v.extend_from_slice(qp.hess.as_slice());
    v.extend_from_slice(&qp.f);
    v.extend_from_slice(qp.g.as_slice());
    v.extend_from_slice(&qp.h);
    v.extend_from_slice(qp.aeq.as_slice());
    v.extend_from_slice(&qp.beq);
    v
}

/// Implicit differentiation of `L(x*)` given `dL/dx*`, using the KKT system
/// restricted to the strongly active constraints.
pub fn qp_gradients(qp: &QuadProg, sol: &QpSolution, dl_dx: &[f64]) -> Result<QpGradients> {
    if sol.status != QpStatus::Optimal {
        return Err(Error::InvalidArgument(String::from("qp_gradients needs an optimal solution")));
    }
    let (n, m, p) = (qp.n(), qp.m(), qp.p());
    ensure_dims!(dl_dx.len() == n, "dL/dx has {} entries, expected {n}", dl_dx.len());
    let slack: Vec<f64> = qp.h.iter().zip(qp.g.matvec(&sol.x)).map(|(h, g)| h - g).collect();
    let mut weakly_active = 0;
    let mut active = Vec::new();
    for i in 0..m {
        if slack[i] <= ACTIVE_TOL {
            if sol.lam[i] > WEAK_MULTIPLIER_TOL {
                active.push(i);
            } else {
                weakly_active += 1;
            }
        }
    }
    let k = active.len();
    let dim = n + k + p;
    let mut rhs = vec![0.0; dim];
    rhs[..n].copy_from_slice(dl_dx);
    // The exact Hessian matches the polished solution; the regularized one
    // is the fallback when H is only semidefinite.
    let kkt = active_kkt(qp, &qp.hess, &active);
    let (adj, degenerate) = match Lu::factor(&kkt) {
        Some(lu) => {
            let mut z = lu.solve(&rhs);
            refine(&kkt, &rhs, &mut z, |r| lu.solve(r));
            (z, false)
        }
        None => solve_or_lstsq(&active_kkt(qp, &regularized_hessian(qp), &active), &rhs)?,
    };
    let ax = &adj[..n];
    let al = &adj[n..n + k];
    let an = &adj[n + k..];
    let x = &sol.x;

    let mut out = QpGradients::zeros(qp);
    out.degenerate = degenerate;
    out.weakly_active = weakly_active;
    for i in 0..n {
        for j in 0..n {
            out.hess[(i, j)] = -0.5 * (ax[i] * x[j] + x[i] * ax[j]);
        }
        out.f[i] = -ax[i];
    }
    for (r, &row) in active.iter().enumerate() {
        for j in 0..n {
            out.g[(row, j)] = -(sol.lam[row] * ax[j] + al[r] * x[j]);
        }
        out.h[row] = al[r];
    }
    for r in 0..p {
        for j in 0..n {
            out.aeq[(r, j)] = -(sol.nu[r] * ax[j] + an[r] * x[j]);
        }
        out.beq[r] = an[r];
    }
    Ok(out)
}

/// Derivatives of the optimal value `½x*ᵀHx* + fᵀx*` with respect to the
/// data, from the Lagrangian at the primal-dual optimum.
pub fn qp_value_gradients(qp: &QuadProg, sol: &QpSolution) -> QpGradients {
    let (n, m, p) = (qp.n(), qp.m(), qp.p());
    let x = &sol.x;
    let mut out = QpGradients::zeros(qp);
    for i in 0..n {
        for j in 0..n {
            out.hess[(i, j)] = 0.5 * x[i] * x[j];
        }
        out.f[i] = x[i];
    }
    for r in 0..m {
        for j in 0..n {
            out.g[(r, j)] = sol.lam[r] * x[j];
        }
        out.h[r] = -sol.lam[r];
    }
    for r in 0..p {
        for j in 0..n {
            out.aeq[(r, j)] = sol.nu[r] * x[j];
        }
        out.beq[r] = -sol.nu[r];
    }
    out
}

/// Result of [`qp_layer`].
pub struct QpLayer<T> {
    pub sol: QpSolution,
    /// Primal optimizer as differentiable scalars.
    pub x: Vec<T>,
    /// `½ x*ᵀ H x* + fᵀ x*` as a differentiable scalar.
    pub value: T,
    /// Set during the reverse sweep when the KKT system had to be solved in
    /// the least-squares sense.
    pub degenerate: Rc<Cell<bool>>,
}

/// Solves a QP whose data may be tape variables. The optimizer and the
/// optimal value are recorded as one block whose adjoint combines
/// [`qp_gradients`] (through `x*`) and [`qp_value_gradients`] (through the
/// value). Non-optimal solves return untracked constants.
pub fn qp_layer<T: Real>(qp: &QuadProg<T>, settings: &QpSettings, warm: Option<&[f64]>) -> Result<QpLayer<T>> {
    let data = qp.values();
    let sol = qp_solve_with(&data, settings, warm)?;
    let value = data.objective(&sol.x);
    let degenerate = Rc::new(Cell::new(false));
    if sol.status != QpStatus::Optimal {
        return Ok(QpLayer {
            x: sol.x.iter().map(|&v| T::cst(v)).collect(),
            value: T::cst(value),
            sol,
            degenerate,
        });
    }
    let mut outputs = sol.x.clone();
    outputs.push(value);
    let inputs = flatten_data(qp);
    let (qpc, solc, flag) = (data, sol.clone(), degenerate.clone());
    let backward = Box::new(move |adj: &[f64]| {
        let n = qpc.n();
        let (gx, gv) = (&adj[..n], adj[n]);
        let mut g = QpGradients::zeros(&qpc);
        if gx.iter().any(|v| *v != 0.0) {
            match qp_gradients(&qpc, &solc, gx) {
                Ok(d) => {
                    flag.set(flag.get() || d.degenerate);
                    g = d;
                }
                Err(_) => flag.set(true),
            }
        }
        if gv != 0.0 {
            g.add_scaled(&qp_value_gradients(&qpc, &solc), gv);
        }
        g.flatten()
    });
    let mut outs = T::block(&inputs, &outputs, backward);
    let value = outs.pop().expect("value output");
    Ok(QpLayer { sol, x: outs, value, degenerate })
}

/// Convex-hull membership: is there `λ >= 0`, `Σλ = 1` with
/// `‖Σ λ_k g_k − point‖∞ <= tol`?
pub fn lp_membership(point: &[f64], generators: &[Vec<f64>], tol: f64) -> Result<bool> {
    if generators.is_empty() {
        return Err(Error::InvalidArgument(String::from("lp_membership needs at least one generator")));
    }
    let d = point.len();
    for (k, g) in generators.iter().enumerate() {
        ensure_dims!(g.len() == d, "generator {k} has dimension {}, expected {d}", g.len());
    }
    for c in 0..d {
        let lo = generators.iter().map(|g| g[c]).fold(f64::INFINITY, f64::min);
        let hi = generators.iter().map(|g| g[c]).fold(f64::NEG_INFINITY, f64::max);
        if point[c] < lo - tol || point[c] > hi + tol {
            return Ok(false);
        }
    }
    // min t s.t. |Σλ_k g_k − point| <= t, λ >= 0, Σλ = 1, with a small
    // ridge on (λ, t) so the solver sees a strictly convex problem.
    let k = generators.len();
    let n = k + 1;
    let mut g = Mat::zeros(2 * d + k, n);
    let mut h = vec![0.0; 2 * d + k];
    for c in 0..d {
        for (j, gen) in generators.iter().enumerate() {
            g[(c, j)] = gen[c];
            g[(d + c, j)] = -gen[c];
        }
        g[(c, k)] = -1.0;
        g[(d + c, k)] = -1.0;
        h[c] = point[c];
        h[d + c] = -point[c];
    }
    for j in 0..k {
        g[(2 * d + j, j)] = -1.0;
    }
    let mut f = vec![0.0; n];
    f[k] = 1.0;
    let mut aeq = Mat::zeros(1, n);
    for j in 0..k {
        aeq[(0, j)] = 1.0;
    }
    let qp = QuadProg::new(Mat::identity(n).scaled(1e-10), f, g, h, aeq, vec![1.0])?;
    let sol = qp_solve_with(&qp, &QpSettings { tol: 1e-11, max_iter: 200, polish: true }, None)?;
    let lam = &sol.x[..k];
    let mut dist = 0.0f64;
    for c in 0..d {
        let v: f64 = generators.iter().zip(lam).map(|(gen, l)| gen[c] * l.max(0.0)).sum::<f64>()
            / lam.iter().map(|l| l.max(0.0)).sum::<f64>();
        dist = dist.max((v - point[c]).abs());
    }
    Ok(dist <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unconstrained(hess: Mat<f64>, f: Vec<f64>) -> QuadProg {
        let n = f.len();
        QuadProg::inequality(hess, f, Mat::zeros(0, n), Vec::new()).unwrap()
    }

    #[test]
    fn unconstrained_minimizer() {
        // min |x - c|^2 = ½ xᵀ(2I)x - 2cᵀx
        let qp = unconstrained(Mat::identity(2).scaled(2.0), vec![-2.0, 4.0]);
        let sol = qp_solve(&qp, 1e-9, 50).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-8 && (sol.x[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn scalar_bound_multiplier() {
        // min x² s.t. x >= 1  ->  ½(2)x², -x <= -1
        let qp = QuadProg::inequality(Mat::identity(1).scaled(2.0), vec![0.0], Mat::from_vec(1, 1, vec![-1.0]), vec![-1.0])
            .unwrap();
        let sol = qp_solve(&qp, 1e-9, 50).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.lam[0] - 2.0).abs() < 1e-7);
        assert!(sol.kkt_residual < 1e-9);
    }

    #[test]
    fn detects_infeasibility() {
        // x <= -1 and x >= 1
        let qp = QuadProg::inequality(Mat::identity(1), vec![0.0], Mat::from_vec(2, 1, vec![1.0, -1.0]), vec![-1.0, -1.0])
            .unwrap();
        let sol = qp_solve(&qp, 1e-9, 100).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let qp = QuadProg::new(
            Mat::identity(2),
            vec![0.0, 0.0],
            Mat::zeros(0, 2),
            vec![],
            Mat::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]),
            vec![1.0, 2.0],
        )
        .unwrap();
        assert_eq!(qp_solve(&qp, 1e-9, 50).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let err = QuadProg::inequality(Mat::identity(2), vec![0.0], Mat::zeros(0, 1), vec![]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn indefinite_hessian_is_error() {
        let qp = unconstrained(Mat::from_rows(&[&[1.0, 0.0], &[0.0, -1.0]]), vec![0.0, 0.0]);
        assert_eq!(qp_solve(&qp, 1e-9, 10).unwrap_err(), Error::NotPositiveDefinite("H".into()));
    }

    #[test]
    fn hessian_is_symmetrized() {
        let qp = unconstrained(Mat::from_rows(&[&[2.0, 1.0], &[0.0, 2.0]]), vec![0.0, 0.0]);
        assert_eq!(qp.hess[(0, 1)], 0.5);
        assert_eq!(qp.hess[(1, 0)], 0.5);
    }

    #[test]
    fn unconstrained_gradient_is_minus_h_inverse() {
        let hess = Mat::from_rows(&[&[3.0, 1.0], &[1.0, 2.0]]);
        let qp = unconstrained(hess.clone(), vec![1.0, -1.0]);
        let sol = qp_solve(&qp, 1e-10, 50).unwrap();
        let dl = [0.3, -0.7];
        let g = qp_gradients(&qp, &sol, &dl).unwrap();
        let expect = hess.inverse().unwrap().matvec(&dl);
        for i in 0..2 {
            assert!((g.f[i] + expect[i]).abs() < 1e-7, "{:?} vs {:?}", g.f, expect);
        }
    }

    #[test]
    fn pinned_scalar_gradients() {
        // min ½x² s.t. x >= b with b = 1: x* = b, dx*/db = 1, dx*/df = 0.
        let qp = QuadProg::inequality(Mat::identity(1), vec![0.0], Mat::from_vec(1, 1, vec![-1.0]), vec![-1.0]).unwrap();
        let sol = qp_solve(&qp, 1e-10, 50).unwrap();
        let g = qp_gradients(&qp, &sol, &[1.0]).unwrap();
        // the bound enters as h = -b
        assert!((-g.h[0] - 1.0).abs() < 1e-9);
        assert!(g.f[0].abs() < 1e-9);
        assert!(!g.degenerate);
    }

    #[test]
    fn membership_basics() {
        let gens = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]];
        assert!(lp_membership(&[0.0, 0.0], &gens, 1e-9).unwrap());
        assert!(lp_membership(&[1.0, 0.0], &gens, 1e-9).unwrap());
        assert!(lp_membership(&[0.5, 0.5], &gens, 1e-9).unwrap());
        assert!(!lp_membership(&[1.5, 1.5], &gens, 1e-9).unwrap());
        assert!(!lp_membership(&[3.0, 0.0], &gens, 1e-9).unwrap());
        assert!(lp_membership(&[1.0 + 1e-10, 1.0], &gens, 1e-9).unwrap());
    }

    #[test]
    fn debug_dump_lists_blocks() {
        let qp = unconstrained(Mat::identity(2), vec![1.0, 2.0]);
        let s = alloc::format!("{qp}");
        assert!(s.starts_with("# quadprog n=2 m=0 p=0"));
        assert!(s.contains("H 2 2") && s.contains("beq 1 0"));
    }
}
