//! Set points: the stepwise capacity schedule and the advisor that bounds how
//! far above a plain-VAE KL the set point may go while still improving the ELBO.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Set point that rises by `step_size` every `interval` steps, from `c_start`
/// up to `c_target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacitySchedule {
    #[serde(default = "default_c_start")]
    pub c_start: f64,
    pub c_target: f64,
    pub step_size: f64,
    pub interval: u64,
}

fn default_c_start() -> f64 {
    0.5
}

impl CapacitySchedule {
    pub fn new(c_start: f64, c_target: f64, step_size: f64, interval: u64) -> Result<Self> {
        let s = Self {
            c_start,
            c_target,
            step_size,
            interval,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_start.is_finite() && self.c_target.is_finite()) {
            return Err(invalid("c_start/c_target", "must be finite"));
        }
        if self.c_start > self.c_target {
            return Err(invalid(
                "c_start",
                format!("{} exceeds c_target {}", self.c_start, self.c_target),
            ));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid("step_size", format!("must be > 0, got {}", self.step_size)));
        }
        if self.interval == 0 {
            return Err(invalid("interval", "must be >= 1"));
        }
        Ok(())
    }

    pub fn set_point_at(&self, t: u64) -> f64 {
        let increments = (t / self.interval) as f64;
        (self.c_start + increments * self.step_size).min(self.c_target)
    }

    /// First step at which the schedule reaches `c_target`.
    pub fn saturation_step(&self) -> u64 {
        let n = ((self.c_target - self.c_start) / self.step_size).ceil().max(0.0) as u64;
        n * self.interval
    }
}

/// A constant or scheduled set point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SetPoint {
    Constant { value: f64 },
    Schedule { schedule: CapacitySchedule },
}

impl SetPoint {
    pub fn constant(value: f64) -> Self {
        SetPoint::Constant { value }
    }

    pub fn at(&self, t: u64) -> f64 {
        match self {
            SetPoint::Constant { value } => *value,
            SetPoint::Schedule { schedule } => schedule.set_point_at(t),
        }
    }

    /// Value the set point settles at.
    pub fn final_value(&self) -> f64 {
        match self {
            SetPoint::Constant { value } => *value,
            SetPoint::Schedule { schedule } => schedule.c_target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetPointAdvice {
    pub kl_vae: f64,
    pub d_max: f64,
    /// `[kl_vae, kl_vae + d_max]`: set points expected to improve the ELBO.
    pub recommended_range: (f64, f64),
    /// Lipschitz constant assumed for the decoder.
    pub lipschitz_k: f64,
}

impl SetPointAdvice {
    pub fn contains(&self, set_point: f64) -> bool {
        set_point >= self.recommended_range.0 && set_point <= self.recommended_range.1
    }
}

/// Largest admissible KL increase `d` over a plain VAE with KL `kl_vae`:
/// the positive root of `d² = 4(2·kl_vae + d)`.
pub fn advise_set_point(kl_vae: f64) -> Result<SetPointAdvice> {
    if !(kl_vae.is_finite() && kl_vae >= 0.0) {
        return Err(invalid("kl_vae", format!("must be finite and >= 0, got {kl_vae}")));
    }
    let d_max = 2.0 + 2.0 * (2.0 * kl_vae + 1.0).sqrt();
    Ok(SetPointAdvice {
        kl_vae,
        d_max,
        recommended_range: (kl_vae, kl_vae + d_max),
        lipschitz_k: 1.0,
    })
}

/// Upper bound on how much the reconstruction term can differ between a
/// controlled model with KL `kl_vae + d` and the plain VAE (unit Lipschitz
/// decoder).
pub fn reconstruction_gap_bound(kl_vae: f64, d: f64) -> f64 {
    (4.0 * (2.0 * kl_vae + d)).sqrt()
}
