//! Command-level simulation of RowHammer and RowPress read disturbance in a
//! single DRAM bank.

pub mod bank;
pub mod characterize;
pub mod command;
pub mod controller;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fixed;
pub mod mitigation;
pub mod pattern;
pub mod profile;
pub mod sim;
pub mod timing;
pub mod tracegen;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/disturbance-model.md")]
    mod disturbance_model {}
    #[doc = include_str!("../../../book/src/traces.md")]
    mod traces {}
    #[doc = include_str!("../../../book/src/characterization.md")]
    mod characterization {}
    #[doc = include_str!("../../../book/src/mitigations.md")]
    mod mitigations {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
