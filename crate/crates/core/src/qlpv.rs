//! Softmax-scheduled quasi-LPV models.
//!
//! ```text
//! x⁺ = A(p(x)) x + B(p(x)) u,   ŷ = C x,   A(p) = Σ p_i A_i
//! p(x) = softmax(N(x; θ_1), …, N(x; θ_np))
//! ```
//!
//! with the observer `z⁺ = A(p(z))z + B(p(z))u + L(p(z))(y − Cz)`.
//! Everything is generic over [`Real`] so the same code runs on `f64` and on
//! tape variables.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::ensure_dims;
use crate::real::{dot, sum};
use crate::tape::Tape;
use crate::{Error, Mat, Real, Result};
use rand::Rng;

/// States with a larger Euclidean norm abort a simulation.
pub const DIVERGENCE_BOUND: f64 = 1e9;
/// Tolerance on `Σp = 1` and `p >= 0` in [`blend`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Hidden-layer activation. Both are monotone increasing, which interval
/// bound propagation relies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// `elu(x) + 1`: `x + 1` for `x > 0`, `e^x` otherwise.
    EluPlusOne,
    Tanh,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::EluPlusOne => {
                if x.value() > 0.0 {
                    x + T::one()
                } else {
                    x.exp()
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::EluPlusOne => "elu_plus_one",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "elu_plus_one" => Some(Activation::EluPlusOne),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f64> {
    pub w: Mat<T>,
    pub b: Vec<T>,
}

/// Feedforward network with a scalar output; the activation is applied after
/// every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T = f64> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn eval(&self, x: &[T], act: Activation) -> T {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.matvec(&h);
            for (zi, &bi) in z.iter_mut().zip(&layer.b) {
                *zi = *zi + bi;
            }
            if k < last {
                z.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            h = z;
        }
        h[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulingNet<T = f64> {
    pub nets: Vec<Mlp<T>>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QlpvModel<T = f64> {
    pub a: Vec<Mat<T>>,
    pub b: Vec<Mat<T>>,
    pub c: Mat<T>,
    pub l: Vec<Mat<T>>,
    pub net: SchedulingNet<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IoDataset {
    /// `N × n_u`.
    pub u: Mat<f64>,
    /// `N × n_y`.
    pub y: Mat<f64>,
    pub dt: f64,
}

impl IoDataset {
    pub fn new(u: Mat<f64>, y: Mat<f64>, dt: f64) -> Result<Self> {
        ensure_dims!(u.rows() == y.rows(), "u has {} samples but y has {}", u.rows(), y.rows());
        if !u.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite(String::from("dataset entries")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("sampling interval must be positive, got {dt}")));
        }
        Ok(IoDataset { u, y, dt })
    }

    pub fn len(&self) -> usize {
        self.u.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nu(&self) -> usize {
        self.u.cols()
    }

    pub fn ny(&self) -> usize {
        self.y.cols()
    }

    /// Samples `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> IoDataset {
        let end = end.min(self.len());
        let start = start.min(end);
        let rows = |m: &Mat<f64>| Mat::from_vec(end - start, m.cols(), m.as_slice()[start * m.cols()..end * m.cols()].to_vec());
        IoDataset { u: rows(&self.u), y: rows(&self.y), dt: self.dt }
    }
}

/// State and output trajectories; `x` has one more entry than `y`.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub x: Vec<Vec<T>>,
    pub y: Vec<Vec<T>>,
}

/// `Σ p_i M_i`, after checking that `p` lies in the simplex.
pub fn blend<T: Real>(mats: &[Mat<T>], p: &[T]) -> Result<Mat<T>> {
    ensure_dims!(mats.len() == p.len() && !p.is_empty(), "{} matrices but {} weights", mats.len(), p.len());
    let total: f64 = p.iter().map(|v| v.value()).sum();
    let min = p.iter().map(|v| v.value()).fold(f64::INFINITY, f64::min);
    if !(min >= -SIMPLEX_TOL) || !((total - 1.0).abs() <= SIMPLEX_TOL) {
        return Err(Error::SimplexViolation(format!("weights sum to {total} with minimum {min}")));
    }
    let shape = mats[0].shape();
    for m in mats {
        ensure_dims!(m.shape() == shape, "blend of {:?} and {:?} matrices", shape, m.shape());
    }
    Ok(Mat::from_fn(shape.0, shape.1, |i, j| sum(mats.iter().zip(p).map(|(m, &w)| m[(i, j)] * w))))
}

/// Softmax with max-subtraction.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut k = 0;
    for (i, v) in logits.iter().enumerate() {
        if v.value() > logits[k].value() {
            k = i;
        }
    }
    // The shift is a detached constant: softmax is invariant to it.
    let shift = T::cst(logits[k].value());
    let e: Vec<T> = logits.iter().map(|&v| (v - shift).exp()).collect();
    let total = sum(e.iter().copied());
    e.into_iter().map(|v| v / total).collect()
}

fn check_state<T: Real>(x: &[T], step: usize) -> Result<()> {
    let norm = libm::sqrt(x.iter().map(|v| v.value() * v.value()).sum::<f64>());
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("state at step {step}")));
    }
    if norm > DIVERGENCE_BOUND {
        return Err(Error::Divergence { step, norm });
    }
    Ok(())
}

impl<T: Real> QlpvModel<T> {
    pub fn new(a: Vec<Mat<T>>, b: Vec<Mat<T>>, c: Mat<T>, l: Vec<Mat<T>>, net: SchedulingNet<T>) -> Result<Self> {
        let model = QlpvModel { a, b, c, l, net };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let np = self.a.len();
        ensure_dims!(np > 0, "model needs at least one local model");
        ensure_dims!(
            self.b.len() == np && self.l.len() == np && self.net.nets.len() == np,
            "list lengths A={np} B={} L={} nets={}",
            self.b.len(),
            self.l.len(),
            self.net.nets.len()
        );
        let nx = self.a[0].rows();
        let nu = self.b[0].cols();
        let ny = self.c.rows();
        ensure_dims!(self.c.cols() == nx, "C is {:?}, expected n_x = {nx} columns", self.c.shape());
        for i in 0..np {
            ensure_dims!(self.a[i].shape() == (nx, nx), "A_{i} is {:?}, expected ({nx}, {nx})", self.a[i].shape());
            ensure_dims!(self.b[i].shape() == (nx, nu), "B_{i} is {:?}, expected ({nx}, {nu})", self.b[i].shape());
            ensure_dims!(self.l[i].shape() == (nx, ny), "L_{i} is {:?}, expected ({nx}, {ny})", self.l[i].shape());
            let layers = &self.net.nets[i].layers;
            ensure_dims!(!layers.is_empty(), "network {i} has no layers");
            let mut width = nx;
            for (k, layer) in layers.iter().enumerate() {
                ensure_dims!(layer.w.cols() == width, "network {i} layer {k} expects {} inputs, got {width}", layer.w.cols());
                ensure_dims!(layer.b.len() == layer.w.rows(), "network {i} layer {k} bias length");
                width = layer.w.rows();
            }
            ensure_dims!(width == 1, "network {i} has {width} outputs, expected 1");
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.c.cols()
    }

    pub fn nu(&self) -> usize {
        self.b[0].cols()
    }

    pub fn ny(&self) -> usize {
        self.c.rows()
    }

    pub fn np(&self) -> usize {
        self.a.len()
    }

    pub fn logits(&self, x: &[T]) -> Vec<T> {
        self.net.nets.iter().map(|n| n.eval(x, self.net.activation)).collect()
    }

    pub fn scheduling(&self, x: &[T]) -> Result<Vec<T>> {
        ensure_dims!(x.len() == self.nx(), "state has {} entries, expected {}", x.len(), self.nx());
        let logits = self.logits(x);
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(String::from("scheduling network output")));
        }
        Ok(softmax(&logits))
    }

    pub fn output(&self, x: &[T]) -> Vec<T> {
        self.c.matvec(x)
    }

    /// `A(p) x + B(p) u` for a given scheduling vector.
    pub fn frozen_step(&self, p: &[T], x: &[T], u: &[T]) -> Result<Vec<T>> {
        ensure_dims!(u.len() == self.nu(), "input has {} entries, expected {}", u.len(), self.nu());
        let ax = blend(&self.a, p)?.matvec(x);
        let bu = blend(&self.b, p)?.matvec(u);
        Ok(ax.into_iter().zip(bu).map(|(a, b)| a + b).collect())
    }

    pub fn step(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        let p = self.scheduling(x)?;
        self.frozen_step(&p, x, u)
    }

    pub fn observer_step(&self, z: &[T], u: &[T], y: &[T]) -> Result<Vec<T>> {
        ensure_dims!(y.len() == self.ny(), "output has {} entries, expected {}", y.len(), self.ny());
        let p = self.scheduling(z)?;
        let w: Vec<T> = y.iter().zip(self.output(z)).map(|(&a, b)| a - b).collect();
        let mut next = self.frozen_step(&p, z, u)?;
        let lw = blend(&self.l, &p)?.matvec(&w);
        for (n, v) in next.iter_mut().zip(lw) {
            *n = *n + v;
        }
        Ok(next)
    }

    /// Free-run simulation over the rows of `u`.
    pub fn simulate(&self, x0: &[T], u: &Mat<f64>) -> Result<Trajectory<T>> {
        ensure_dims!(x0.len() == self.nx(), "x0 has {} entries, expected {}", x0.len(), self.nx());
        ensure_dims!(u.cols() == self.nu(), "inputs have {} channels, expected {}", u.cols(), self.nu());
        check_state(x0, 0)?;
        let mut xs = Vec::with_capacity(u.rows() + 1);
        let mut ys = Vec::with_capacity(u.rows());
        xs.push(x0.to_vec());
        for t in 0..u.rows() {
            let x = &xs[t];
            ys.push(self.output(x));
            let ut: Vec<T> = u.row(t).iter().map(|&v| T::cst(v)).collect();
            let next = self.step(x, &ut)?;
            check_state(&next, t + 1)?;
            xs.push(next);
        }
        Ok(Trajectory { x: xs, y: ys })
    }

    /// Observer run from `z0` driven by measured inputs and outputs.
    pub fn observe(&self, z0: &[T], data: &IoDataset) -> Result<Trajectory<T>> {
        ensure_dims!(z0.len() == self.nx(), "z0 has {} entries, expected {}", z0.len(), self.nx());
        ensure_dims!(data.nu() == self.nu() && data.ny() == self.ny(), "dataset channels do not match the model");
        let mut zs = Vec::with_capacity(data.len() + 1);
        let mut ys = Vec::with_capacity(data.len());
        zs.push(z0.to_vec());
        for t in 0..data.len() {
            let z = &zs[t];
            ys.push(self.output(z));
            let ut: Vec<T> = data.u.row(t).iter().map(|&v| T::cst(v)).collect();
            let yt: Vec<T> = data.y.row(t).iter().map(|&v| T::cst(v)).collect();
            let next = self.observer_step(z, &ut, &yt)?;
            check_state(&next, t + 1)?;
            zs.push(next);
        }
        Ok(Trajectory { x: zs, y: ys })
    }

    /// `(1/N) Σ_t ‖y_t − C x_t‖²` along the free-run simulation from `x0`.
    pub fn fit_loss(&self, x0: &[T], data: &IoDataset) -> Result<T> {
        ensure_dims!(data.ny() == self.ny(), "dataset has {} outputs, expected {}", data.ny(), self.ny());
        ensure_dims!(!data.is_empty(), "empty dataset");
        let traj = self.simulate(x0, &data.u)?;
        let total = sum(traj.y.iter().enumerate().flat_map(|(t, yhat)| {
            data.y.row(t).iter().zip(yhat).map(|(&y, &yh)| {
                let e = T::cst(y) - yh;
                e * e
            })
        }));
        Ok(total.scale(1.0 / data.len() as f64))
    }

    pub fn values(&self) -> QlpvModel<f64> {
        self.map(|v| v.value())
    }

    /// Applies `f` to every parameter in [`Self::params`] order, keeping the
    /// structure.
    pub fn map<U: Real>(&self, mut f: impl FnMut(T) -> U) -> QlpvModel<U> {
        let mm = |m: &Mat<T>, f: &mut dyn FnMut(T) -> U| m.map(|&v| f(v));
        let a = self.a.iter().map(|m| mm(m, &mut f)).collect();
        let b = self.b.iter().map(|m| mm(m, &mut f)).collect();
        let c = mm(&self.c, &mut f);
        let l = self.l.iter().map(|m| mm(m, &mut f)).collect();
        let nets = self
            .net
            .nets
            .iter()
            .map(|n| Mlp {
                layers: n
                    .layers
                    .iter()
                    .map(|layer| {
                        let w = mm(&layer.w, &mut f);
                        Layer { w, b: layer.b.iter().map(|&v| f(v)).collect() }
                    })
                    .collect(),
            })
            .collect();
        QlpvModel { a, b, c, l, net: SchedulingNet { nets, activation: self.net.activation } }
    }

    /// Parameters in the fixed order `A_1..A_np, B_1..B_np, C, L_1..L_np`,
    /// then for each network its layers as `(W row-major, b)`.
    pub fn params(&self) -> Vec<T> {
        let mut v = Vec::new();
        for m in self.a.iter().chain(&self.b).chain(core::iter::once(&self.c)).chain(&self.l) {
            v.extend_from_slice(m.as_slice());
        }
        for n in &self.net.nets {
            for layer in &n.layers {
                v.extend_from_slice(layer.w.as_slice());
                v.extend_from_slice(&layer.b);
            }
        }
        v
    }

    pub fn num_params(&self) -> usize {
        let mats: usize = self.a.iter().chain(&self.b).chain(core::iter::once(&self.c)).chain(&self.l).map(|m| m.as_slice().len()).sum();
        let nets: usize = self.net.nets.iter().flat_map(|n| &n.layers).map(|l| l.w.as_slice().len() + l.b.len()).sum();
        mats + nets
    }

    /// Same structure with parameters taken from `params` (see [`Self::params`]).
    pub fn with_params<U: Real>(&self, params: &[U]) -> Result<QlpvModel<U>> {
        ensure_dims!(params.len() == self.num_params(), "{} parameters, expected {}", params.len(), self.num_params());
        let mut it = params.iter().copied();
        Ok(self.map(|_| it.next().expect("parameter count checked")))
    }
}

/// Sizes of a model family.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub nx: usize,
    pub nu: usize,
    pub ny: usize,
    pub np: usize,
    /// Hidden layer widths of each scheduling network.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl QlpvModel<f64> {
    /// Random initial model: `A_i = 0.5 I + U(−0.1, 0.1)`, `B_i`, `C` with
    /// `U(−0.5, 0.5)` entries, `L_i = 0`, and Glorot-uniform networks with
    /// zero biases.
    pub fn random<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Result<Self> {
        let (nx, nu, ny) = (dims.nx, dims.nu, dims.ny);
        let mut unif = |r: usize, c: usize, s: f64| Mat::from_fn(r, c, |_, _| rng.gen_range(-s..=s));
        let a = (0..dims.np)
            .map(|_| {
                let mut m = unif(nx, nx, 0.1);
                (0..nx).for_each(|i| m[(i, i)] += 0.5);
                m
            })
            .collect();
        let b = (0..dims.np).map(|_| unif(nx, nu, 0.5)).collect();
        let c = unif(ny, nx, 0.5);
        let l = (0..dims.np).map(|_| Mat::zeros(nx, ny)).collect();
        let nets = (0..dims.np)
            .map(|_| {
                let mut widths = alloc::vec![nx];
                widths.extend_from_slice(&dims.hidden);
                widths.push(1);
                Mlp {
                    layers: widths
                        .windows(2)
                        .map(|w| {
                            let s = libm::sqrt(6.0 / (w[0] + w[1]) as f64);
                            Layer { w: unif(w[1], w[0], s), b: alloc::vec![0.0; w[1]] }
                        })
                        .collect(),
                }
            })
            .collect();
        QlpvModel::new(a, b, c, l, SchedulingNet { nets, activation: dims.activation })
    }

    /// The same input/output behaviour in coordinates `ξ = G x`; `x0` maps to
    /// `G x0`.
    pub fn transformed(&self, g: &Mat<f64>) -> Result<Self> {
        ensure_dims!(g.shape() == (self.nx(), self.nx()), "transform is {:?}, expected {n}x{n}", g.shape(), n = self.nx());
        let gi = g.inverse().ok_or_else(|| Error::InvalidArgument(String::from("state transform is singular")))?;
        let mut net = self.net.clone();
        for mlp in &mut net.nets {
            mlp.layers[0].w = mlp.layers[0].w.matmul(&gi);
        }
        QlpvModel::new(
            self.a.iter().map(|a| g.matmul(a).matmul(&gi)).collect(),
            self.b.iter().map(|b| g.matmul(b)).collect(),
            self.c.matmul(&gi),
            self.l.iter().map(|l| g.matmul(l)).collect(),
            net,
        )
    }

    pub fn dims(&self) -> ModelDims {
        let layers = &self.net.nets[0].layers;
        ModelDims {
            nx: self.nx(),
            nu: self.nu(),
            ny: self.ny(),
            np: self.np(),
            hidden: layers[..layers.len() - 1].iter().map(|l| l.w.rows()).collect(),
            activation: self.net.activation,
        }
    }
}

/// Gradient of a scalar with respect to the model parameters and `x0`.
#[derive(Clone, Debug)]
pub struct ModelGradient {
    pub model: QlpvModel<f64>,
    pub x0: Vec<f64>,
}

impl ModelGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.model.params();
        v.extend_from_slice(&self.x0);
        v
    }
}

/// Loss and exact reverse-mode gradient of [`QlpvModel::fit_loss`].
pub fn fit_gradients(model: &QlpvModel, x0: &[f64], data: &IoDataset) -> Result<(f64, ModelGradient)> {
    let tape = Tape::new();
    let params: Vec<_> = model.params().iter().map(|&v| tape.var(v)).collect();
    let xv: Vec<_> = x0.iter().map(|&v| tape.var(v)).collect();
    let m = model.with_params(&params)?;
    let loss = m.fit_loss(&xv, data)?;
    let adj = tape.gradient(&[(loss, 1.0)]);
    let g: Vec<f64> = params.iter().map(|&p| adj.of(p)).collect();
    Ok((
        loss.value(),
        ModelGradient { model: model.with_params(&g)?, x0: xv.iter().map(|&v| adj.of(v)).collect() },
    ))
}

/// Best fit rate in percent, `100 (1 − ‖y − ŷ‖ / ‖y − mean(y)‖)`, clipped at 0.
pub fn bfr(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    ensure_dims!(y_true.len() == y_pred.len(), "{} targets but {} predictions", y_true.len(), y_pred.len());
    if y_true.len() < 2 {
        return Err(Error::InvalidArgument(String::from("BFR needs at least two samples")));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let den = libm::sqrt(y_true.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>());
    if den == 0.0 {
        return Err(Error::InvalidArgument(String::from("BFR of a constant signal is undefined")));
    }
    let num = libm::sqrt(y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
    Ok((100.0 * (1.0 - num / den)).max(0.0))
}

/// Per-channel BFR of `N × n_y` output matrices.
pub fn bfr_channels(y_true: &Mat<f64>, y_pred: &Mat<f64>) -> Result<Vec<f64>> {
    ensure_dims!(y_true.shape() == y_pred.shape(), "{:?} vs {:?}", y_true.shape(), y_pred.shape());
    (0..y_true.cols())
        .map(|c| {
            let col = |m: &Mat<f64>| (0..m.rows()).map(|t| m[(t, c)]).collect::<Vec<_>>();
            bfr(&col(y_true), &col(y_pred))
        })
        .collect()
}

/// Stacks output vectors into an `N × n_y` matrix.
pub fn stack_rows(rows: &[Vec<f64>]) -> Mat<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    Mat::from_vec(rows.len(), cols, rows.iter().flatten().copied().collect())
}

/// `‖x‖₂`.
pub fn norm2<T: Real>(x: &[T]) -> f64 {
    libm::sqrt(dot(x, x).value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;

    fn scalar_lti(a: f64, b: f64) -> QlpvModel {
        let net = SchedulingNet {
            nets: vec![Mlp { layers: vec![Layer { w: Mat::zeros(1, 1), b: vec![0.0] }] }],
            activation: Activation::EluPlusOne,
        };
        QlpvModel::new(
            vec![Mat::from_vec(1, 1, vec![a])],
            vec![Mat::from_vec(1, 1, vec![b])],
            Mat::identity(1),
            vec![Mat::zeros(1, 1)],
            net,
        )
        .unwrap()
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[libm::log(2.0), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[1000.0, 1000.0, 1000.0]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn lti_geometric_series() {
        let m = scalar_lti(0.5, 1.0);
        let u = Mat::from_vec(10, 1, vec![1.0; 10]);
        let traj = m.simulate(&[0.0], &u).unwrap();
        assert_eq!(traj.x.len(), 11);
        for (t, x) in traj.x.iter().enumerate() {
            assert!((x[0] - 2.0 * (1.0 - libm::pow(0.5, t as f64))).abs() < 1e-14);
        }
    }

    #[test]
    fn divergence_names_step() {
        let m = scalar_lti(10.0, 0.0);
        let u = Mat::zeros(20, 1);
        match m.simulate(&[1.0], &u) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn blend_rules() {
        let a1 = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let a2 = a1.scaled(-1.0);
        assert_eq!(blend(&[a1.clone(), a2.clone()], &[1.0, 0.0]).unwrap(), a1);
        assert_eq!(blend(&[a1.clone(), a2.clone()], &[0.5, 0.5]).unwrap(), Mat::zeros(2, 2));
        assert!(matches!(blend(&[a1, a2], &[0.7, 0.7]), Err(Error::SimplexViolation(_))));
    }

    #[test]
    fn bfr_values() {
        assert_eq!(bfr(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap(), 100.0);
        assert_eq!(bfr(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]).unwrap(), 0.0);
        let v = bfr(&[0.0, 1.0, 2.0], &[0.0, 1.0, 1.0]).unwrap();
        assert!((v - 100.0 * (1.0 - 1.0 / libm::sqrt(2.0))).abs() < 1e-12);
        assert!(bfr(&[1.0, 1.0], &[0.0, 1.0]).is_err());
        assert_eq!(bfr(&[0.0, 1.0], &[10.0, -10.0]).unwrap(), 0.0);
    }

    #[test]
    fn two_step_hand_gradient() {
        // x1 = a x0 + b u0, loss = ½((y0 - x0)² + (y1 - x1)²)
        let (a, b, x0, u0, y0, y1) = (0.7, 0.3, 0.4, 1.5, 0.1, 0.9);
        let m = scalar_lti(a, b);
        let data = IoDataset::new(Mat::from_vec(2, 1, vec![u0, 0.0]), Mat::from_vec(2, 1, vec![y0, y1]), 1.0).unwrap();
        let (loss, g) = fit_gradients(&m, &[x0], &data).unwrap();
        let x1 = a * x0 + b * u0;
        let (e0, e1) = (y0 - x0, y1 - x1);
        assert!((loss - 0.5 * (e0 * e0 + e1 * e1)).abs() < 1e-15);
        assert!((g.model.a[0][(0, 0)] - (-e1 * x0)).abs() < 1e-14);
        assert!((g.model.b[0][(0, 0)] - (-e1 * u0)).abs() < 1e-14);
        assert!((g.x0[0] - (-e0 - e1 * a)).abs() < 1e-14);
        // C enters both residuals
        assert!((g.model.c[(0, 0)] - (-e0 * x0 - e1 * x1)).abs() < 1e-14);
    }

    #[test]
    fn params_round_trip() {
        let m = scalar_lti(0.5, 1.0);
        let p = m.params();
        assert_eq!(p.len(), m.num_params());
        assert_eq!(m.with_params(&p).unwrap(), m);
        let dims = ModelDims { nx: 2, nu: 1, ny: 1, np: 3, hidden: vec![3, 2], activation: Activation::Tanh };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = QlpvModel::random(&dims, &mut rng).unwrap();
        let idx: Vec<f64> = (0..m.num_params()).map(|i| i as f64).collect();
        assert_eq!(m.with_params(&idx).unwrap().params(), idx);
    }
}
