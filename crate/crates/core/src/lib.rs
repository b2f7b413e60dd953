//! Topology-only training of spiking neural networks whose weights are the
//! random conductances of a simulated memristor crossbar.
//!
//! The crate covers the whole pipeline: electroforming random differential
//! pairs ([`device`]), the iLIF spiking core with a BPTT tape ([`snn`]),
//! pop-up score pruning with straight-through updates ([`pruning`]),
//! input-aware early-stop inference ([`dynamic`]), the classifier and
//! spiking-VAE architectures ([`models`]), comparison arms ([`baselines`]),
//! dataset ingestion ([`data`]) and metrics, checkpoints and run
//! configuration ([`metrics`], [`checkpoint`], [`config`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod device;
pub mod dynamic;
pub mod error;
pub mod metrics;
pub mod models;
pub mod pruning;
pub mod snn;
pub mod tensor;

pub use device::{DeviceConfig, DifferentialCrossbar, PairState};
pub use error::{Error, Result};
pub use snn::{ConvGeometry, LifParams, LifState, Tape};
pub use tensor::Tensor;
