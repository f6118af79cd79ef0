//! Concurrent identification and invariant-set synthesis.
//!
//! The training objective is `𝒥(Θ, x0; q̃) = fit(Θ, x0) + τ r(Θ; q̃)` where
//! `r` is either the baseline RCI value or the value after `k̂` iterations of
//! [`algorithm1`] started at `q̃`. Gradients of `r` flow through the
//! disturbance box, the interval bounds and every QP of the unrolled
//! iterations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::qlpv::{fit_gradients, IoDataset, ModelDims, ModelGradient, QlpvModel};
use crate::rci::{algorithm1_from, characterize_w, solve_baseline_r, DisturbanceBox, RciProblem, RciSolution, RciStatus};
use crate::tape::Tape;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegularizerKind {
    /// One QP over the untightened vertex systems.
    Baseline,
    /// [`algorithm1`] with interval-bound tightening.
    BoundPropagation,
}

impl RegularizerKind {
    pub fn name(self) -> &'static str {
        match self {
            RegularizerKind::Baseline => "baseline",
            RegularizerKind::BoundPropagation => "bound_propagation",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(RegularizerKind::Baseline),
            "bound_propagation" => Some(RegularizerKind::BoundPropagation),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub tau: f64,
    pub kappa: f64,
    pub zeta: f64,
    pub k_hat: usize,
    pub l_hat: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Size-QP horizon `M`.
    pub horizon: usize,
    pub pretrain_iters: usize,
    pub pretrain_lr: f64,
    pub regularizer: RegularizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 5e-4,
            kappa: 1.01,
            zeta: 0.05,
            k_hat: 1,
            l_hat: 100,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            horizon: 5,
            pretrain_iters: 1000,
            pretrain_lr: 1e-2,
            regularizer: RegularizerKind::BoundPropagation,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("training config: {what}")));
        if !(self.tau >= 0.0) {
            return bad("tau must be nonnegative");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        if !(self.zeta > 0.0) {
            return bad("zeta must be positive");
        }
        if self.k_hat == 0 || self.l_hat == 0 || self.horizon == 0 {
            return bad("k_hat, l_hat and the horizon must be at least 1");
        }
        if !(self.lr > 0.0) || !(self.pretrain_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam constants out of range");
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> Adam {
        Adam { lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates and the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, adam: &Adam) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "Adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - libm::pow(adam.beta1, state.t as f64);
    let c2 = 1.0 - libm::pow(adam.beta2, state.t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = adam.beta1 * state.m[i] + (1.0 - adam.beta1) * g;
        state.v[i] = adam.beta2 * state.v[i] + (1.0 - adam.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= adam.lr * mh / (libm::sqrt(vh) + adam.eps);
    }
    Ok(())
}

fn flat(model: &QlpvModel, x0: &[f64]) -> Vec<f64> {
    let mut v = model.params();
    v.extend_from_slice(x0);
    v
}

fn unflat(model: &QlpvModel, v: &[f64]) -> Result<(QlpvModel, Vec<f64>)> {
    let np = model.num_params();
    Ok((model.with_params(&v[..np])?, v[np..].to_vec()))
}

fn check_finite(loss: f64, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} is {loss}; reduce the learning rate")))
    }
}

/// Output of [`pretrain`].
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub model: QlpvModel,
    pub x0: Vec<f64>,
    pub adam: AdamState,
    /// Fit loss before each update.
    pub history: Vec<f64>,
}

/// Random initial model for `data`: as [`QlpvModel::random`] with `C` scaled
/// by the output standard deviation.
pub fn initial_model(data: &IoDataset, dims: &ModelDims, seed: u64) -> Result<QlpvModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = QlpvModel::random(dims, &mut rng)?;
    for (r, sd) in output_std(data).into_iter().enumerate() {
        let s = 2.0 * sd.max(1e-6);
        model.c.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }
    Ok(model)
}

/// Adam on the fit loss alone, from [`initial_model`], with `L_i = 0`.
pub fn pretrain(data: &IoDataset, dims: &ModelDims, config: &TrainConfig) -> Result<Pretrained> {
    config.validate()?;
    let model = initial_model(data, dims, config.seed)?;
    let x0 = vec![0.0; dims.nx];
    let adam = AdamState::new(model.num_params() + dims.nx);
    let mut out = Pretrained { model, x0, adam, history: Vec::with_capacity(config.pretrain_iters) };
    let opt = config.adam(config.pretrain_lr);
    for _ in 0..config.pretrain_iters {
        let loss = fit_step(&mut out.model, &mut out.x0, &mut out.adam, data, &opt)?;
        out.history.push(loss);
    }
    Ok(out)
}

/// One Adam step on the fit loss; returns the loss before the step.
pub fn fit_step(model: &mut QlpvModel, x0: &mut Vec<f64>, state: &mut AdamState, data: &IoDataset, adam: &Adam) -> Result<f64> {
    let (loss, g) = fit_gradients(model, x0, data)?;
    check_finite(loss, "fit loss")?;
    let mut p = flat(model, x0);
    adam_step(&mut p, &g.flatten(), state, adam)?;
    let (m, x) = unflat(model, &p)?;
    *model = m;
    *x0 = x;
    Ok(loss)
}

/// Calibration data and RCI ingredients for the regularizer.
#[derive(Clone, Debug)]
pub struct RciContext {
    /// Disturbance dataset for the observer residual box.
    pub dw: IoDataset,
    pub prob: RciProblem,
}

/// Value of the training objective and the RCI solution it used.
#[derive(Clone, Debug)]
pub struct Objective {
    pub j: f64,
    pub fit: f64,
    /// `None` when `τ = 0` skipped the regularizer or its QP failed.
    pub r: Option<f64>,
    pub rci: Option<RciSolution<f64>>,
    pub w: Option<DisturbanceBox<f64>>,
    /// Some QP reverse pass needed a least-squares solve.
    pub degenerate: bool,
}

fn regularizer<T: Real>(
    model: &QlpvModel<T>,
    ctx: &RciContext,
    q_tilde: &[f64],
    config: &TrainConfig,
    prev: Option<&RciSolution<f64>>,
) -> Result<(Option<RciSolution<T>>, DisturbanceBox<T>)> {
    let mut prob = ctx.prob.clone();
    prob.horizon = config.horizon;
    let w = characterize_w(model, &ctx.dw, config.kappa)?;
    let sol = match config.regularizer {
        RegularizerKind::Baseline => match solve_baseline_r(model, &w, &prob) {
            Ok(s) => Some(s),
            Err(Error::Infeasible(msg)) => {
                log::debug!("baseline regularizer skipped: {msg}");
                None
            }
            Err(e) => return Err(e),
        },
        RegularizerKind::BoundPropagation => {
            let q0: Vec<T> = q_tilde.iter().map(|&v| T::cst(v)).collect();
            let s = algorithm1_from(model, &w, &prob, &q0, config.k_hat, config.zeta, prev)?;
            if s.trace.is_empty() {
                None
            } else {
                Some(s)
            }
        }
    };
    Ok((sol, w))
}

/// `𝒥(Θ, x0; q̃)` without warm starts.
pub fn objective(
    model: &QlpvModel,
    x0: &[f64],
    data: &IoDataset,
    q_tilde: &[f64],
    ctx: &RciContext,
    config: &TrainConfig,
) -> Result<Objective> {
    let fit = model.fit_loss(x0, data)?;
    if config.tau == 0.0 {
        return Ok(Objective { j: fit, fit, r: None, rci: None, w: None, degenerate: false });
    }
    let (sol, w) = regularizer(model, ctx, q_tilde, config, None)?;
    let r = sol.as_ref().map(|s| s.r);
    Ok(Objective { j: fit + config.tau * r.unwrap_or(0.0), fit, r, rci: sol, w: Some(w), degenerate: false })
}

/// [`objective`] and its exact gradient with respect to every model parameter
/// and `x0`.
pub fn grad_objective(
    model: &QlpvModel,
    x0: &[f64],
    data: &IoDataset,
    q_tilde: &[f64],
    ctx: &RciContext,
    config: &TrainConfig,
) -> Result<(Objective, ModelGradient)> {
    grad_objective_from(model, x0, data, q_tilde, ctx, config, None)
}

fn grad_objective_from(
    model: &QlpvModel,
    x0: &[f64],
    data: &IoDataset,
    q_tilde: &[f64],
    ctx: &RciContext,
    config: &TrainConfig,
    prev: Option<&RciSolution<f64>>,
) -> Result<(Objective, ModelGradient)> {
    if config.tau == 0.0 {
        let (fit, g) = fit_gradients(model, x0, data)?;
        return Ok((Objective { j: fit, fit, r: None, rci: None, w: None, degenerate: false }, g));
    }
    let tape = Tape::new();
    let params: Vec<_> = model.params().iter().map(|&v| tape.var(v)).collect();
    let xv: Vec<_> = x0.iter().map(|&v| tape.var(v)).collect();
    let m = model.with_params(&params)?;
    let fit = m.fit_loss(&xv, data)?;
    let (sol, w) = regularizer(&m, ctx, q_tilde, config, prev)?;
    let total = match &sol {
        Some(s) => fit + s.r.scale(config.tau),
        None => fit,
    };
    let adj = tape.gradient(&[(total, 1.0)]);
    let g: Vec<f64> = params.iter().map(|&p| adj.of(p)).collect();
    let grad = ModelGradient { model: model.with_params(&g)?, x0: xv.iter().map(|&v| adj.of(v)).collect() };
    let rci = sol.as_ref().map(|s| s.values());
    let degenerate = rci.as_ref().is_some_and(|s| s.any_degenerate());
    let obj = Objective {
        j: total.value(),
        fit: fit.value(),
        r: rci.as_ref().map(|s| s.r),
        rci,
        w: Some(w.values()),
        degenerate,
    };
    Ok((obj, grad))
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub outer_iter: usize,
    pub fit: f64,
    /// `NaN` when the regularizer was skipped.
    pub r: f64,
    pub total: f64,
    pub max_kkt: f64,
    pub degenerate: bool,
    /// The update of the observer gains was undone to keep `r` finite.
    pub observer_held: bool,
}

/// Everything needed to resume training bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: QlpvModel,
    pub x0: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// Scheduling bounds of the last RCI solve.
    pub a: Vec<f64>,
    /// RCI value at `(Θ, q)`.
    pub r: f64,
    /// Primal of the last RCI QP, used as warm start.
    pub warm: Vec<f64>,
    pub outer_iter: usize,
    pub loss_history: Vec<LossRecord>,
    pub adam: AdamState,
}

/// Outer loop state.
pub struct Trainer<'a> {
    data: &'a IoDataset,
    ctx: &'a RciContext,
    pub config: TrainConfig,
    pub model: QlpvModel,
    pub x0: Vec<f64>,
    pub adam: AdamState,
    pub rci: RciSolution<f64>,
    pub w: DisturbanceBox<f64>,
    pub history: Vec<LossRecord>,
    pub outer_iter: usize,
}

impl<'a> Trainer<'a> {
    /// Starts from `init` with `q_0` from the baseline program on `Θ_0`.
    pub fn new(data: &'a IoDataset, ctx: &'a RciContext, config: TrainConfig, init: Pretrained) -> Result<Self> {
        config.validate()?;
        let mut prob = ctx.prob.clone();
        prob.horizon = config.horizon;
        let w = characterize_w(&init.model, &ctx.dw, config.kappa)?;
        let rci = solve_baseline_r(&init.model, &w, &prob).map_err(|e| match e {
            Error::Infeasible(msg) => Error::Infeasible(format!(
                "no RCI set for the initial model ({msg}); try larger output or input sets, another template, or more pretraining"
            )),
            other => other,
        })?;
        Ok(Trainer {
            data,
            ctx,
            config,
            model: init.model,
            x0: init.x0,
            adam: init.adam,
            rci,
            w,
            history: Vec::new(),
            outer_iter: 0,
        })
    }

    pub fn resume(data: &'a IoDataset, ctx: &'a RciContext, config: TrainConfig, ck: Checkpoint) -> Result<Self> {
        config.validate()?;
        let w = characterize_w(&ck.model, &ctx.dw, config.kappa)?;
        let rci = RciSolution {
            q_tilde: ck.q.clone(),
            q: ck.q,
            v: ck.v,
            a: ck.a,
            r: ck.r,
            trace: Vec::new(),
            status: RciStatus::Optimal,
            zeta: config.zeta,
            x: ck.warm,
            max_kkt: 0.0,
            degenerate: Vec::new(),
        };
        Ok(Trainer {
            data,
            ctx,
            config,
            model: ck.model,
            x0: ck.x0,
            adam: ck.adam,
            rci,
            w,
            history: ck.loss_history,
            outer_iter: ck.outer_iter,
        })
    }

    /// Gradient step on `𝒥(Θ_l, x0_l; q_l)`, then `q_{l+1}` from the
    /// regularizer at `Θ_{l+1}` started at `q_l`.
    pub fn step(&mut self) -> Result<LossRecord> {
        let q = self.rci.q.clone();
        let (obj, grad) =
            grad_objective_from(&self.model, &self.x0, self.data, &q, self.ctx, &self.config, Some(&self.rci))?;
        check_finite(obj.j, "training objective")?;
        let mut p = flat(&self.model, &self.x0);
        adam_step(&mut p, &grad.flatten(), &mut self.adam, &self.config.adam(self.config.lr))?;
        let (mut model, x0) = unflat(&self.model, &p)?;
        let (mut sol, mut w) = regularizer(&model, self.ctx, &q, &self.config, Some(&self.rci))?;
        let mut observer_held = false;
        if sol.is_none() && obj.r.is_some() {
            // Moving L off a set that only just fits can leave no RCI set at
            // all; retry with the previous gains before giving up the term.
            let mut held = model.clone();
            held.l = self.model.l.clone();
            let (s, wh) = regularizer(&held, self.ctx, &q, &self.config, Some(&self.rci))?;
            if s.is_some() {
                log::debug!("outer iteration {}: observer gains held to keep the RCI program feasible", self.outer_iter);
                (model, sol, w, observer_held) = (held, s, wh, true);
            }
        }
        self.model = model;
        self.x0 = x0;
        self.w = w;
        if let Some(s) = sol {
            self.rci = s;
        }
        let rec = LossRecord {
            outer_iter: self.outer_iter,
            fit: obj.fit,
            r: obj.r.unwrap_or(f64::NAN),
            total: obj.j,
            max_kkt: obj.rci.as_ref().map_or(0.0, |s| s.max_kkt),
            degenerate: obj.degenerate,
            observer_held,
        };
        self.history.push(rec.clone());
        self.outer_iter += 1;
        Ok(rec)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            x0: self.x0.clone(),
            q: self.rci.q.clone(),
            v: self.rci.v.clone(),
            a: self.rci.a.clone(),
            r: self.rci.r,
            warm: self.rci.x.clone(),
            outer_iter: self.outer_iter,
            loss_history: self.history.clone(),
            adam: self.adam.clone(),
        }
    }
}

/// Runs `l_hat` outer iterations from a pretrained model, calling
/// `on_step` after each one.
pub fn algorithm2(
    data: &IoDataset,
    ctx: &RciContext,
    config: &TrainConfig,
    init: Pretrained,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<Checkpoint> {
    let mut tr = Trainer::new(data, ctx, config.clone(), init)?;
    for _ in 0..config.l_hat {
        let rec = tr.step()?;
        on_step(&rec);
    }
    Ok(tr.checkpoint())
}

/// Output-channel standard deviations, used for reporting scales.
pub fn output_std(data: &IoDataset) -> Vec<f64> {
    let n = data.len().max(1) as f64;
    (0..data.ny())
        .map(|r| {
            let col: Vec<f64> = (0..data.len()).map(|t| data.y[(t, r)]).collect();
            let mean = col.iter().sum::<f64>() / n;
            libm::sqrt(col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step() {
        let adam = Adam { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.5, -4.0, 0.0], &mut s, &adam).unwrap();
        // m̂ = g, v̂ = g²: each nonzero coordinate moves by lr·sign(g).
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 1.9).abs() < 1e-7);
        assert_eq!(p[2], 3.0);
        adam_step(&mut p, &[0.0; 3], &mut s, &adam).unwrap();
        assert!((s.m[0] - 0.045).abs() < 1e-15 && s.t == 2);
    }

    #[test]
    fn adam_on_quadratic() {
        let adam = Adam { lr: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = vec![3.0];
        let mut s = AdamState::new(1);
        let mut vals = Vec::new();
        for _ in 0..300 {
            vals.push(p[0] * p[0]);
            let g = 2.0 * p[0];
            adam_step(&mut p, &[g], &mut s, &adam).unwrap();
        }
        assert!(vals[299] < 1e-2 * vals[0]);
        assert!(vals[..40].windows(2).all(|w| w[1] <= w[0]));
    }
}
