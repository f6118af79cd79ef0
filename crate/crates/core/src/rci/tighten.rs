use alloc::format;
use alloc::vec::Vec;

use super::DisturbanceBox;
use crate::error::ensure_dims;
use crate::linalg::const_matmul;
use crate::qlpv::QlpvModel;
use crate::real::sum;
use crate::{Error, Mat, Real, Result};

/// Vertex systems of the tightened uncertainty hull for a lower bound `a` on
/// the scheduling vector.
#[derive(Clone, Debug)]
pub struct TightenedSystem<T = f64> {
    pub a: Vec<Mat<T>>,
    pub b: Vec<Mat<T>>,
    pub l: Vec<Mat<T>>,
    /// `d̃_i = F L̃_i c_w + κ |F L̃_i| ε_w`, one entry per facet.
    pub d: Vec<Vec<T>>,
}

impl<T: Real> TightenedSystem<T> {
    pub fn np(&self) -> usize {
        self.a.len()
    }

    pub fn values(&self) -> TightenedSystem<f64> {
        let v = |ms: &[Mat<T>]| ms.iter().map(|m| m.values()).collect();
        TightenedSystem {
            a: v(&self.a),
            b: v(&self.b),
            l: v(&self.l),
            d: self.d.iter().map(|d| d.iter().map(|x| x.value()).collect()).collect(),
        }
    }
}

fn tighten_list<T: Real>(mats: &[Mat<T>], a: &[T], rest: T) -> Vec<Mat<T>> {
    if a.iter().all(|v| v.value() == 0.0) {
        return mats.to_vec();
    }
    let (r, c) = mats[0].shape();
    let common = Mat::from_fn(r, c, |i, j| sum(mats.iter().zip(a).map(|(m, &w)| m[(i, j)] * w)));
    mats.iter()
        .map(|m| Mat::from_fn(r, c, |i, j| m[(i, j)] * rest + common[(i, j)]))
        .collect()
}

/// `(Ã_i, B̃_i, L̃_i) = (1 − Σa)(A_i, B_i, L_i) + Σ_j a_j (A_j, B_j, L_j)` and the
/// disturbance offsets `d̃_i` for the facet matrix `f`.
pub fn tightened_vertices<T: Real>(
    model: &QlpvModel<T>,
    a: &[T],
    f: &Mat<f64>,
    w: &DisturbanceBox<T>,
) -> Result<TightenedSystem<T>> {
    ensure_dims!(a.len() == model.np(), "a has {} entries, expected n_p = {}", a.len(), model.np());
    ensure_dims!(f.cols() == model.nx(), "facet matrix has {} columns, expected {}", f.cols(), model.nx());
    ensure_dims!(w.ny() == model.ny(), "disturbance box has {} outputs, expected {}", w.ny(), model.ny());
    let total: f64 = a.iter().map(|v| v.value()).sum();
    let min = a.iter().map(|v| v.value()).fold(f64::INFINITY, f64::min);
    if !(min >= 0.0) || !(total <= 1.0 + 1e-12) {
        return Err(Error::SimplexViolation(format!("lower bounds sum to {total} with minimum {min}")));
    }
    let rest = T::one() - sum(a.iter().copied());
    let at = tighten_list(&model.a, a, rest);
    let bt = tighten_list(&model.b, a, rest);
    let lt = tighten_list(&model.l, a, rest);
    let radius = w.radius();
    let d = lt
        .iter()
        .map(|l| {
            let fl = const_matmul(f, l);
            let center = fl.matvec(&w.c_w);
            let spread = fl.abs().matvec(&radius);
            center.into_iter().zip(spread).map(|(c, s)| c + s).collect()
        })
        .collect();
    Ok(TightenedSystem { a: at, b: bt, l: lt, d })
}

/// Arithmetic means `(Ā, B̄)` of the vertex systems.
pub fn mean_system<T: Real>(tight: &TightenedSystem<T>) -> (Mat<T>, Mat<T>) {
    let inv = 1.0 / tight.np() as f64;
    let mean = |ms: &[Mat<T>]| {
        let (r, c) = ms[0].shape();
        Mat::from_fn(r, c, |i, j| sum(ms.iter().map(|m| m[(i, j)])).scale(inv))
    };
    (mean(&tight.a), mean(&tight.b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qlpv::{Activation, Layer, Mlp, SchedulingNet};
    use alloc::vec;

    fn model() -> QlpvModel {
        let net = |b: f64| Mlp { layers: vec![Layer { w: Mat::zeros(1, 1), b: vec![b] }] };
        QlpvModel::new(
            vec![Mat::from_rows(&[&[1.0]]), Mat::from_rows(&[&[3.0]])],
            vec![Mat::from_rows(&[&[0.0]]), Mat::from_rows(&[&[2.0]])],
            Mat::identity(1),
            vec![Mat::from_rows(&[&[1.0]]), Mat::from_rows(&[&[-1.0]])],
            SchedulingNet { nets: vec![net(0.0), net(1.0)], activation: Activation::Tanh },
        )
        .unwrap()
    }

    #[test]
    fn zero_bounds_keep_vertices() {
        let m = model();
        let f = Mat::from_rows(&[&[1.0], &[-1.0]]);
        let w = DisturbanceBox::new(vec![0.5], vec![1.0], 2.0).unwrap();
        let t = tightened_vertices(&m, &[0.0, 0.0], &f, &w).unwrap();
        assert_eq!(t.a, m.a);
        assert_eq!(t.b, m.b);
        assert_eq!(t.l, m.l);
        // L_1 = 1: F L c = (0.5, −0.5), |F L| κ ε = (2, 2)
        assert_eq!(t.d[0], vec![2.5, 1.5]);
        assert_eq!(t.d[1], vec![1.5, 2.5]);
    }

    #[test]
    fn full_bounds_collapse() {
        let m = model();
        let f = Mat::from_rows(&[&[1.0]]);
        let w = DisturbanceBox::new(vec![0.0], vec![0.0], 1.0).unwrap();
        let t = tightened_vertices(&m, &[0.25, 0.75], &f, &w).unwrap();
        for i in 0..2 {
            assert!((t.a[i][(0, 0)] - 2.5).abs() < 1e-15);
            assert!((t.b[i][(0, 0)] - 1.5).abs() < 1e-15);
            assert!((t.l[i][(0, 0)] + 0.5).abs() < 1e-15);
        }
        assert!(tightened_vertices(&m, &[0.5, 0.6], &f, &w).is_err());
        assert!(tightened_vertices(&m, &[-0.1, 0.6], &f, &w).is_err());
    }

    #[test]
    fn means() {
        let m = model();
        let f = Mat::from_rows(&[&[1.0]]);
        let w = DisturbanceBox::new(vec![0.0], vec![0.0], 1.0).unwrap();
        let t = tightened_vertices(&m, &[0.0, 0.0], &f, &w).unwrap();
        let (a, b) = mean_system(&t);
        assert_eq!(a[(0, 0)], 2.0);
        assert_eq!(b[(0, 0)], 1.0);
    }
}
