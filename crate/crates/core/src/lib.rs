//! Identification of quasi-LPV models with guaranteed robust control
//! invariant (RCI) polytopes.
//!
//! The crate is `no_std` and only needs an allocator. It contains:
//!
//! * [`qp`]: a dense primal-dual interior point QP solver with implicit
//!   differentiation of the KKT conditions,
//! * [`ccpoly`]: configuration-constrained polytope templates,
//! * [`qlpv`]: the softmax-scheduled qLPV model family, its observer and the
//!   simulation/fitting machinery,
//! * [`rci`]: disturbance sets, tightened uncertainty via interval bound
//!   propagation, the size QP and the iterative RCI evaluation,
//! * [`synthesis`]: the concurrent training loop,
//! * [`control`]: the safe tracking controller and closed-loop harness,
//! * [`plant`]: the Duffing oscillator used to generate data.
//!
//! Derivatives are computed with the reverse-mode tape in [`tape`]; every
//! numeric routine that needs gradients is generic over [`Real`].

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod ccpoly;
pub mod control;
mod error;
pub mod linalg;
pub mod plant;
pub mod qlpv;
pub mod qp;
pub mod rci;
mod real;
pub mod synthesis;
pub mod tape;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use real::Real;
