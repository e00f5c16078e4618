//! Spatial causal-inference toolkit for measuring how soybean crush plants
//! move local soybean basis.
//!
//! Two pipelines are provided: synthetic difference-in-differences around
//! new-plant startups, and monthly near/far interaction regressions around
//! existing plants. [`simulate`] generates panels with known effects for
//! validation.

pub mod cli;
pub mod data;
pub mod estimators;
pub mod feedstock;
pub mod geo;
pub mod io;
pub mod month;
pub mod simulate;

pub use month::YearMonth;
