//! Feedback control of the KL weight in variational autoencoder training.
//!
//! A nonlinear PI controller ([`controller::PiController`]) reads the KL
//! divergence (or total correlation) of each training batch and sets the
//! weight β(t) on that term so the divergence tracks a set point. The crate
//! also carries everything needed to exercise it at desk scale: a dense
//! network engine ([`nn`]), the VAE objectives ([`vae`]), a surrogate plant
//! ([`plant`]), synthetic data ([`data`]), metrics ([`metrics`]), set-point
//! tools ([`schedule`]) and an experiment runner ([`harness`]).

pub mod controller;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod plant;
pub mod rng;
pub mod schedule;
pub mod trace;
pub mod vae;

pub use controller::{
    validate_gains, ControlError, Controller, FixedBeta, GainReport, LagrangeController,
    PiController, WeightController,
};
pub use data::{generate_gauss_mixture, generate_mini_shapes, Dataset, FactorTable};
pub use error::{Error, Result};
pub use metrics::{mig, mutual_info_discrete, trace_stats, MigReport, TraceStats};
pub use nn::{AdamConfig, AdamState, Tensor2};
pub use plant::{closed_loop, FirstOrderPlant, PlantConfig};
pub use schedule::{
    advise_set_point, reconstruction_gap_bound, CapacitySchedule, SetPoint, SetPointAdvice,
};
pub use trace::TraceRecord;
pub use vae::{ElboBreakdown, LatentStats, Likelihood, VaeModel, VaeSpec};
