//! Robust, time-aware trust prediction on dynamic directed graphs.

pub mod attack;
pub mod autodiff;
pub mod datasets;
mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod predictor;
pub mod spatial;
pub mod synth;
pub mod temporal;
pub mod train;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/robust-aggregation.md")]
    mod robust_aggregation {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/attacks.md")]
    mod attacks {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
