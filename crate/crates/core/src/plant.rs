//! Data-generating plants.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::qlpv::IoDataset;
use crate::{Error, Mat, Result};

/// A sampled-data system with zero-order-hold inputs.
pub trait Plant {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn ny(&self) -> usize;
    /// State after holding `u` for `dt`.
    fn step(&self, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>>;
    fn output(&self, x: &[f64]) -> Vec<f64>;
}

/// `m ÿ + c ẏ + k y + k3 y³ = u`, state `(y, ẏ)`, output `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct DuffingPlant {
    pub m: f64,
    pub c: f64,
    pub k: f64,
    pub k3: f64,
    /// RK4 substeps per sample.
    pub substeps: usize,
}

impl Default for DuffingPlant {
    fn default() -> Self {
        DuffingPlant { m: 1.5, c: 1.0, k: 1.0, k3: 1000.0, substeps: 10 }
    }
}

impl DuffingPlant {
    pub fn new(m: f64, c: f64, k: f64, k3: f64, substeps: usize) -> Result<Self> {
        if ![m, c, k, k3].iter().all(|v| v.is_finite()) || !(m > 0.0) {
            return Err(Error::InvalidArgument(format!("bad Duffing coefficients m={m} c={c} k={k} k3={k3}")));
        }
        if substeps == 0 {
            return Err(Error::InvalidArgument(String::from("substeps must be at least 1")));
        }
        Ok(DuffingPlant { m, c, k, k3, substeps })
    }

    fn deriv(&self, y: f64, v: f64, u: f64) -> (f64, f64) {
        (v, (u - self.c * v - self.k * y - self.k3 * y * y * y) / self.m)
    }

    /// `½ m ẏ² + ½ k y² + ¼ k3 y⁴`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let (y, v) = (x[0], x[1]);
        0.5 * self.m * v * v + 0.5 * self.k * y * y + 0.25 * self.k3 * y * y * y * y
    }
}

impl Plant for DuffingPlant {
    fn nx(&self) -> usize {
        2
    }

    fn nu(&self) -> usize {
        1
    }

    fn ny(&self) -> usize {
        1
    }

    fn step(&self, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
        if !(dt > 0.0) || !u[0].is_finite() || !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("plant step with state {x:?}, input {u:?}, dt {dt}")));
        }
        let h = dt / self.substeps as f64;
        let (mut y, mut v) = (x[0], x[1]);
        for _ in 0..self.substeps {
            let k1 = self.deriv(y, v, u[0]);
            let k2 = self.deriv(y + 0.5 * h * k1.0, v + 0.5 * h * k1.1, u[0]);
            let k3 = self.deriv(y + 0.5 * h * k2.0, v + 0.5 * h * k2.1, u[0]);
            let k4 = self.deriv(y + h * k3.0, v + h * k3.1, u[0]);
            y += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        if !y.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite(String::from("plant state")));
        }
        Ok(vec![y, v])
    }

    fn output(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0]]
    }
}

/// Input/output data from rest: inputs i.i.d. uniform in `[u_lo, u_hi]`,
/// each held for `hold` samples; `y_t` is the output at the start of sample
/// `t`, before `u_t` acts.
pub fn gen_dataset<P: Plant + ?Sized>(
    plant: &P,
    seed: u64,
    n: usize,
    u_lo: f64,
    u_hi: f64,
    dt: f64,
    hold: usize,
) -> Result<IoDataset> {
    if !(u_lo <= u_hi) || n == 0 || hold == 0 {
        return Err(Error::InvalidArgument(format!("bad dataset request n={n} range=[{u_lo}, {u_hi}] hold={hold}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nu, ny) = (plant.nu(), plant.ny());
    let mut u = Mat::zeros(n, nu);
    let mut current = vec![0.0; nu];
    for t in 0..n {
        if t % hold == 0 {
            current.iter_mut().for_each(|c| *c = if u_lo == u_hi { u_lo } else { rng.gen_range(u_lo..=u_hi) });
        }
        u.row_mut(t).copy_from_slice(&current);
    }
    let mut y = Mat::zeros(n, ny);
    let mut x = vec![0.0; plant.nx()];
    for t in 0..n {
        y.row_mut(t).copy_from_slice(&plant.output(&x));
        x = plant.step(&x, u.row(t), dt)?;
    }
    IoDataset::new(u, y, dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_is_an_equilibrium() {
        let p = DuffingPlant::default();
        assert_eq!(p.step(&[0.0, 0.0], &[0.0], 0.1).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn same_seed_same_data() {
        let p = DuffingPlant::default();
        let a = gen_dataset(&p, 3, 50, -0.5, 0.5, 0.1, 1).unwrap();
        let b = gen_dataset(&p, 3, 50, -0.5, 0.5, 0.1, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.y[(0, 0)], 0.0);
        assert!(a.u.as_slice().iter().all(|v| (-0.5..=0.5).contains(v)));
    }

    #[test]
    fn full_hold_is_one_forced_run() {
        let p = DuffingPlant::default();
        let d = gen_dataset(&p, 9, 30, -0.5, 0.5, 0.1, 30).unwrap();
        let u0 = d.u[(0, 0)];
        assert!(d.u.as_slice().iter().all(|&v| v == u0));
        let mut x = vec![0.0, 0.0];
        for t in 0..30 {
            assert_eq!(d.y[(t, 0)], x[0]);
            x = p.step(&x, &[u0], 0.1).unwrap();
        }
    }
}
