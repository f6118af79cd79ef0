use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ccpoly::{BoundingBox, PolytopeTemplate};
use crate::error::ensure_dims;
use crate::qlpv::{Mlp, SchedulingNet};
use crate::real::sum;
use crate::{Error, Real, Result};

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval<T = f64> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Interval<T> {
    pub fn values(&self) -> Interval<f64> {
        Interval { lo: self.lo.value(), hi: self.hi.value() }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo.value() <= x && x <= self.hi.value()
    }
}

fn mlp_bounds<T: Real>(net: &Mlp<T>, act: crate::qlpv::Activation, mu: &[T], rad: &[T]) -> Result<Interval<T>> {
    let half = T::cst(0.5);
    let (mut mu, mut rad) = (mu.to_vec(), rad.to_vec());
    let last = net.layers.len() - 1;
    for (k, layer) in net.layers.iter().enumerate() {
        ensure_dims!(layer.w.cols() == mu.len(), "layer {k} expects {} inputs, got {}", layer.w.cols(), mu.len());
        let c: Vec<T> = layer.w.matvec(&mu).into_iter().zip(&layer.b).map(|(v, &b)| v + b).collect();
        let r = layer.w.abs().matvec(&rad);
        let (mut lo, mut hi): (Vec<T>, Vec<T>) = c.iter().zip(&r).map(|(&c, &r)| (c - r, c + r)).unzip();
        if k < last {
            lo.iter_mut().for_each(|v| *v = act.apply(*v));
            hi.iter_mut().for_each(|v| *v = act.apply(*v));
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("interval bounds after layer {k}")));
        }
        if k == last {
            return Ok(Interval { lo: lo[0], hi: hi[0] });
        }
        mu = lo.iter().zip(&hi).map(|(&l, &h)| (l + h) * half).collect();
        rad = lo.iter().zip(&hi).map(|(&l, &h)| (h - l) * half).collect();
    }
    unreachable!("network has at least one layer")
}

/// Interval enclosures of the logits `𝒩(z; θ_i)` over the box
/// `|z − center| <= radius`.
pub fn ibp_logits<T: Real>(net: &SchedulingNet<T>, center: &[T], radius: &[T]) -> Result<Vec<Interval<T>>> {
    ensure_dims!(center.len() == radius.len(), "box center has {} entries, radius {}", center.len(), radius.len());
    if radius.iter().any(|r| !(r.value() >= 0.0)) {
        return Err(Error::InvalidArgument(String::from("box radius must be nonnegative")));
    }
    net.nets.iter().map(|n| mlp_bounds(n, net.activation, center, radius)).collect()
}

/// Interval enclosures of `exp(𝒩(z; θ_i))` over a box.
pub fn ibp_forward<T: Real>(net: &SchedulingNet<T>, bbox: &BoundingBox<T>) -> Result<Vec<Interval<T>>> {
    let logits = ibp_logits(net, &bbox.center, &bbox.half_width)?;
    let out: Vec<Interval<T>> = logits.iter().map(|i| Interval { lo: i.lo.exp(), hi: i.hi.exp() }).collect();
    if out.iter().any(|i| !i.lo.is_finite() || !i.hi.is_finite()) {
        return Err(Error::NonFinite(String::from("exponentiated logit bounds overflow")));
    }
    Ok(out)
}

/// `a_i = N̲_i / (N̲_i + Σ_{j≠i} N̄_j)`, written as `1 / (1 + Σ_{j≠i} N̄_j / N̲_i)`.
/// A zero lower bound gives `a_i = 0`.
pub fn softmax_lower_bounds<T: Real>(intervals: &[Interval<T>]) -> Result<Vec<T>> {
    check_intervals(intervals)?;
    for iv in intervals {
        if !(iv.lo.value() >= 0.0) {
            return Err(Error::InvalidArgument(format!("exponential bounds must be nonnegative, got {}", iv.lo.value())));
        }
    }
    Ok((0..intervals.len())
        .map(|i| {
            let lo = intervals[i].lo;
            if lo.value() == 0.0 {
                log::warn!("softmax lower bound {i}: zero denominator, using a_{i} = 0");
                return T::zero();
            }
            let others = sum(intervals.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, iv)| iv.hi / lo));
            T::one() / (T::one() + others)
        })
        .collect())
}

/// Same bound from logit intervals: `a_i = 1 / (1 + Σ_{j≠i} exp(h_j − l_i))`.
pub fn softmax_lower_bounds_logit<T: Real>(intervals: &[Interval<T>]) -> Result<Vec<T>> {
    check_intervals(intervals)?;
    Ok((0..intervals.len())
        .map(|i| {
            let lo = intervals[i].lo;
            let others = sum(intervals.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, iv)| (iv.hi - lo).exp()));
            let den = T::one() + others;
            if !den.is_finite() {
                log::warn!("softmax lower bound {i}: denominator overflow, using a_{i} = 0");
                return T::zero();
            }
            T::one() / den
        })
        .collect())
}

fn check_intervals<T: Real>(intervals: &[Interval<T>]) -> Result<()> {
    ensure_dims!(!intervals.is_empty(), "no intervals");
    for (i, iv) in intervals.iter().enumerate() {
        if !(iv.lo.value() <= iv.hi.value()) {
            return Err(Error::InvalidArgument(format!("interval {i} has lo {} > hi {}", iv.lo.value(), iv.hi.value())));
        }
    }
    Ok(())
}

/// Lower bounds on the scheduling vector over the bounding box of `X(q)`
/// inflated by `zeta`. Returns the bounds and the box they hold on.
pub fn bound_prop<T: Real>(
    net: &SchedulingNet<T>,
    template: &PolytopeTemplate,
    q: &[T],
    zeta: f64,
) -> Result<(Vec<T>, BoundingBox<T>)> {
    let bbox = template.bounding_box(q, zeta)?;
    let logits = ibp_logits(net, &bbox.center, &bbox.half_width)?;
    Ok((softmax_lower_bounds_logit(&logits)?, bbox))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qlpv::{Activation, Layer};
    use crate::Mat;
    use alloc::vec;

    #[test]
    fn affine_corners() {
        let net = SchedulingNet {
            nets: vec![Mlp { layers: vec![Layer { w: Mat::from_rows(&[&[1.0, -1.0]]), b: vec![0.0] }] }],
            activation: Activation::Tanh,
        };
        let b = ibp_logits(&net, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(b[0], Interval { lo: -2.0, hi: 2.0 });
    }

    #[test]
    fn uniform_bounds() {
        for n in 1..8 {
            let iv = vec![Interval { lo: 0.7, hi: 0.7 }; n];
            let a = softmax_lower_bounds(&iv).unwrap();
            assert!(a.iter().all(|&v| v == 1.0 / n as f64));
            let lg = vec![Interval { lo: -0.3, hi: -0.3 }; n];
            let a = softmax_lower_bounds_logit(&lg).unwrap();
            assert!(a.iter().all(|&v| v == 1.0 / n as f64));
        }
        let a = softmax_lower_bounds(&[Interval { lo: 1.0, hi: 2.0 }, Interval { lo: 1.0, hi: 2.0 }]).unwrap();
        assert!((a[0] - 1.0 / 3.0).abs() < 1e-15 && (a[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_lower_bound() {
        let a = softmax_lower_bounds(&[Interval { lo: 0.0, hi: 1.0 }, Interval { lo: 1.0, hi: 1.0 }]).unwrap();
        assert_eq!(a, vec![0.0, 0.5]);
        assert!(softmax_lower_bounds(&[Interval { lo: 2.0, hi: 1.0 }]).is_err());
    }
}
