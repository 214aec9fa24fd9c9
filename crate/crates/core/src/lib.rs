//! Surgical-noise simulator for hybrid 8T-6T SRAM DNN accelerators.
//!
//! The crate couples a bit-error model of voltage-scaled 6T cells
//! ([`faultmodel`]) with an 8-bit quantized CNN engine ([`nn`], [`quant`]) and
//! builds two pipelines on top: a layer search that injects noise into
//! activation banks to harden a model against FGSM ([`robustness`]) and a
//! white-box weight attack that picks the parameter section whose sampled
//! noise best follows the loss gradient ([`weight_attack`]). [`hwcost`]
//! compares the energy and area of the resulting memory designs.

pub mod attacks;
pub mod cli;
pub mod error;
pub mod faultmodel;
pub mod hwcost;
pub mod nn;
pub mod quant;
pub mod rng;
pub mod robustness;
pub mod weight_attack;
pub mod zoo;

pub use error::{Error, Result};
