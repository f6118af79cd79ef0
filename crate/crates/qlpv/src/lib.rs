//! File formats, configuration, plots and the command pipeline on top of
//! `qlpv-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub use qlpv_core as core;

pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod svg;
