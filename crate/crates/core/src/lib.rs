//! Multi-scale lesion segmentation fusion.
//!
//! Three probability maps of the same volume, produced at different patch
//! scales, are fused by a three-weight net with the SinAct activation and
//! trained directly on soft Dice. Small and large lesions get separate nets.
//!
//! Start with [`pipeline`] for the end-to-end flow, [`ensemble`] for the net
//! itself and [`metrics`] for evaluation. The guide in `book/` walks through
//! each piece with runnable examples.

pub mod activation;
pub mod cli;
pub mod components;
pub mod config;
pub mod dice;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod metrics;
pub mod patching;
pub mod phantom;
pub mod pipeline;
pub mod provider;
pub mod report;
pub mod volume;

pub use error::{Error, Result};

// The guide's code blocks run as doc-tests so they cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    mod volumes {}
    #[doc = include_str!("../../../book/src/patching.md")]
    mod patching {}
    #[doc = include_str!("../../../book/src/dice.md")]
    mod dice {}
    #[doc = include_str!("../../../book/src/sinact.md")]
    mod sinact {}
    #[doc = include_str!("../../../book/src/components.md")]
    mod components {}
    #[doc = include_str!("../../../book/src/ensemble.md")]
    mod ensemble {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cross-validation.md")]
    mod cross_validation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
