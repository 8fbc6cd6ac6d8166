//! First-order surrogate of how KL responds to β, for exercising controllers
//! without training a network.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::controller::{ControlError, WeightController};
use crate::error::{invalid, Result};
use crate::rng::{seeded, SeededRng};
use crate::trace::TraceRecord;

/// Steady-state KL as a function of β: `g(β) = a / (1 + c·β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyMap {
    pub a: f64,
    pub c: f64,
}

impl SteadyMap {
    pub fn eval(&self, beta: f64) -> f64 {
        self.a / (1.0 + self.c * beta)
    }

    /// β that yields `kl` at steady state.
    pub fn inverse(&self, kl: f64) -> f64 {
        (self.a / kl - 1.0) / self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub a: f64,
    pub c: f64,
    /// Fraction of the gap to steady state closed per step, in `(0, 1]`.
    pub eta: f64,
    pub noise_sigma: f64,
    pub initial_kl: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            a: 40.0,
            c: 3.0,
            eta: 0.05,
            noise_sigma: 0.0,
            initial_kl: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FirstOrderPlant {
    kl_state: f64,
    eta: f64,
    map: SteadyMap,
    noise_sigma: f64,
    rng: SeededRng,
}

impl FirstOrderPlant {
    pub fn new(config: PlantConfig, seed: u64) -> Result<Self> {
        let PlantConfig {
            a,
            c,
            eta,
            noise_sigma,
            initial_kl,
        } = config;
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(invalid("eta", format!("must lie in (0, 1], got {eta}")));
        }
        if !(a > 0.0 && c >= 0.0) {
            return Err(invalid("a/c", "need a > 0 and c >= 0"));
        }
        if !(noise_sigma >= 0.0) || !(initial_kl >= 0.0) {
            return Err(invalid("noise_sigma/initial_kl", "must be >= 0"));
        }
        Ok(Self {
            kl_state: initial_kl,
            eta,
            map: SteadyMap { a, c },
            noise_sigma,
            rng: seeded(seed),
        })
    }

    pub fn kl(&self) -> f64 {
        self.kl_state
    }

    pub fn steady_map(&self) -> SteadyMap {
        self.map
    }

    /// Relaxes the KL toward `g(beta)` and returns the observation.
    pub fn step(&mut self, beta: f64) -> f64 {
        let target = self.map.eval(beta.max(0.0));
        let noise = if self.noise_sigma > 0.0 {
            self.noise_sigma * self.rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        self.kl_state = (self.kl_state + self.eta * (target - self.kl_state) + noise).max(0.0);
        self.kl_state
    }
}

/// Alternates measurement, controller update and plant relaxation for
/// `steps` iterations. Record `t` holds the KL observed at `t`, the weight the
/// controller computed from it, and the set point in force.
pub fn closed_loop<C, S>(
    plant: &mut FirstOrderPlant,
    controller: &mut C,
    set_point: S,
    steps: u64,
) -> Result<Vec<TraceRecord>>
where
    C: WeightController + ?Sized,
    S: Fn(u64) -> f64,
{
    let mut trace = Vec::with_capacity(steps as usize);
    for t in 0..steps {
        let kl = plant.kl();
        let sp = set_point(t);
        let beta = controller.update(ControlError::from_measurement(sp, kl, t)?)?;
        trace.push(TraceRecord::control(t, kl, beta, sp));
        plant.step(beta);
    }
    Ok(trace)
}
