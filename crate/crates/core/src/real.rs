use alloc::vec::Vec;
use core::fmt::Debug;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::tape::Backward;

/// Scalar abstraction shared by plain `f64` evaluation and the reverse-mode
/// tape ([`crate::tape::Var`]).
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Untracked constant.
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn abs(self) -> Self;
    fn tanh(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    fn scale(self, c: f64) -> Self {
        self * Self::cst(c)
    }

    fn is_finite(self) -> bool {
        self.value().is_finite()
    }

    /// Multi-output operation with a closed-form adjoint: `outputs` are the
    /// forward values and `backward` maps output adjoints to one adjoint per
    /// input. Plain scalars ignore `backward`.
    fn block(inputs: &[Self], outputs: &[f64], backward: Backward) -> Vec<Self>;
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn abs(self) -> Self {
        libm::fabs(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        libm::tanh(self)
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }

    fn block(_: &[Self], outputs: &[f64], _: Backward) -> Vec<Self> {
        outputs.to_vec()
    }
}

/// Sum of an iterator of scalars, starting from zero.
pub fn sum<T: Real>(it: impl IntoIterator<Item = T>) -> T {
    let mut acc: Option<T> = None;
    for v in it {
        acc = Some(match acc {
            None => v,
            Some(a) => a + v,
        });
    }
    acc.unwrap_or_else(T::zero)
}

/// Dot product.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}
