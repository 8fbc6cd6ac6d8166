//! Feedback controllers that produce the KL weight β(t) each training step.
//!
//! [`PiController`] is the nonlinear PI law: a sigmoidal proportional term on
//! the error plus an integral term with conditional-integration anti-windup,
//! clamped to `[beta_min, beta_max]`. [`LagrangeController`] is gradient ascent
//! on a KL-equality multiplier, which coincides with the bare integral term.
//! [`FixedBeta`] covers the plain VAE (β = 1) and β-VAE baselines.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Errors beyond this magnitude saturate the sigmoid; clamping keeps `exp` finite.
pub const ERROR_EXP_CLAMP: f64 = 50.0;

/// The control error `e(t) = set_point − measured` in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlError {
    value: f64,
    step: u64,
}

impl ControlError {
    pub fn new(value: f64, step: u64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: "control error",
                step,
                value,
            });
        }
        Ok(Self { value, step })
    }

    /// Builds the error from a set point and a measured KL (or TC).
    pub fn from_measurement(set_point: f64, measured: f64, step: u64) -> Result<Self> {
        if !measured.is_finite() {
            return Err(Error::NonFinite {
                what: "measured divergence",
                step,
                value: measured,
            });
        }
        Self::new(set_point - measured, step)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Anything that turns a stream of control errors into a loss weight.
pub trait WeightController {
    /// Consumes one error sample and returns the weight to apply this step.
    fn update(&mut self, error: ControlError) -> Result<f64>;

    /// Weight emitted by the most recent update (or the initial weight).
    fn weight(&self) -> f64;
}

/// Nonlinear PI controller with output clamping and anti-windup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiController {
    kp: f64,
    ki: f64,
    beta_min: f64,
    beta_max: f64,
    integral: f64,
    last_beta: f64,
    /// Output before clamping on the previous step; `None` before the first step.
    last_unclamped: Option<f64>,
    step_count: u64,
    #[serde(default = "default_true")]
    anti_windup: bool,
}

fn default_true() -> bool {
    true
}

impl PiController {
    pub fn new(kp: f64, ki: f64, beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(kp.is_finite() && kp >= 0.0) {
            return Err(invalid("kp", format!("must be finite and >= 0, got {kp}")));
        }
        if !(ki.is_finite() && ki >= 0.0) {
            return Err(invalid("ki", format!("must be finite and >= 0, got {ki}")));
        }
        if !(beta_min.is_finite() && beta_min >= 0.0) {
            return Err(invalid(
                "beta_min",
                format!("must be finite and >= 0, got {beta_min}"),
            ));
        }
        if !(beta_max > beta_min) {
            return Err(invalid(
                "beta_max",
                format!("must exceed beta_min ({beta_min}), got {beta_max}"),
            ));
        }
        Ok(Self {
            kp,
            ki,
            beta_min,
            beta_max,
            integral: 0.0,
            last_beta: beta_min,
            last_unclamped: None,
            step_count: 0,
            anti_windup: true,
        })
    }

    /// Disables (or re-enables) the integral freeze. Only useful for
    /// measuring what anti-windup buys; production runs keep it on.
    pub fn set_anti_windup(&mut self, enabled: bool) {
        self.anti_windup = enabled;
    }

    pub fn anti_windup(&self) -> bool {
        self.anti_windup
    }

    pub fn kp(&self) -> f64 {
        self.kp
    }

    pub fn ki(&self) -> f64 {
        self.ki
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn last_beta(&self) -> f64 {
        self.last_beta
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Whether the previous step's unclamped output left `[beta_min, beta_max]`.
    pub fn was_saturated(&self) -> bool {
        self.last_unclamped
            .is_some_and(|u| u < self.beta_min || u > self.beta_max)
    }

    /// Sigmoidal proportional term `kp / (1 + exp(e))`, in `(0, kp)`.
    pub fn proportional(&self, error: f64) -> f64 {
        let e = error.clamp(-ERROR_EXP_CLAMP, ERROR_EXP_CLAMP);
        self.kp / (1.0 + e.exp())
    }

    /// True when integrating `error` would push an already saturated output
    /// further out of range.
    fn integral_frozen(&self, error: f64) -> bool {
        if !self.anti_windup {
            return false;
        }
        match self.last_unclamped {
            // I decreases for positive errors, so only a low-saturated output
            // freezes on e > 0, and vice versa.
            Some(u) if u < self.beta_min => error > 0.0,
            Some(u) if u > self.beta_max => error < 0.0,
            _ => false,
        }
    }

    /// One controller update; returns the clamped β(t).
    pub fn step(&mut self, error: ControlError) -> f64 {
        let e = error.value();
        let p = self.proportional(e);
        if !self.integral_frozen(e) {
            self.integral -= self.ki * e;
        }
        let unclamped = p + self.integral + self.beta_min;
        let beta = unclamped.clamp(self.beta_min, self.beta_max);
        self.last_unclamped = Some(unclamped);
        self.last_beta = beta;
        self.step_count += 1;
        beta
    }
}

impl WeightController for PiController {
    fn update(&mut self, error: ControlError) -> Result<f64> {
        Ok(self.step(error))
    }

    fn weight(&self) -> f64 {
        self.last_beta
    }
}

/// Multiplier of the constraint `KL = set_point`, updated by gradient ascent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangeController {
    lambda_val: f64,
    alpha: f64,
    step_count: u64,
}

impl LagrangeController {
    pub fn new(alpha: f64) -> Result<Self> {
        Self::with_initial(alpha, 0.0)
    }

    pub fn with_initial(alpha: f64, lambda0: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid("alpha", format!("must be finite and > 0, got {alpha}")));
        }
        if !lambda0.is_finite() {
            return Err(invalid("lambda0", "must be finite"));
        }
        Ok(Self {
            lambda_val: lambda0,
            alpha,
            step_count: 0,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda_val
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn step(&mut self, error: ControlError) -> f64 {
        self.lambda_val -= self.alpha * error.value();
        self.step_count += 1;
        self.lambda_val
    }
}

impl WeightController for LagrangeController {
    fn update(&mut self, error: ControlError) -> Result<f64> {
        Ok(self.step(error))
    }

    fn weight(&self) -> f64 {
        self.lambda_val
    }
}

/// Constant weight, ignoring the error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedBeta {
    beta: f64,
}

impl FixedBeta {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(invalid("beta", format!("must be finite and >= 0, got {beta}")));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl WeightController for FixedBeta {
    fn update(&mut self, _error: ControlError) -> Result<f64> {
        Ok(self.beta)
    }

    fn weight(&self) -> f64 {
        self.beta
    }
}

/// Serializable union of the controllers, used by the harness and for
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Controller {
    Pi(PiController),
    Lagrange(LagrangeController),
    Fixed(FixedBeta),
}

impl Controller {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl WeightController for Controller {
    fn update(&mut self, error: ControlError) -> Result<f64> {
        match self {
            Controller::Pi(c) => c.update(error),
            Controller::Lagrange(c) => c.update(error),
            Controller::Fixed(c) => c.update(error),
        }
    }

    fn weight(&self) -> f64 {
        match self {
            Controller::Pi(c) => c.weight(),
            Controller::Lagrange(c) => c.weight(),
            Controller::Fixed(c) => c.weight(),
        }
    }
}

/// Advisory check of PI gains against the small-P-at-zero-KL rule and the
/// empirically stable integral band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    /// Largest `kp` that keeps `kp / (1 + exp(v_kl)) <= epsilon`.
    pub kp_bound: f64,
    pub kp_ok: bool,
    /// P term when the measured KL is zero.
    pub p_at_zero_kl: f64,
    pub ki_in_band: bool,
}

pub const KI_BAND: (f64, f64) = (1e-4, 1e-3);

pub fn validate_gains(kp: f64, ki: f64, v_kl: f64, epsilon: f64) -> GainReport {
    let kp_bound = (1.0 + v_kl.min(ERROR_EXP_CLAMP).exp()) * epsilon;
    GainReport {
        kp_bound,
        kp_ok: kp <= kp_bound,
        p_at_zero_kl: kp / (1.0 + v_kl.min(ERROR_EXP_CLAMP).exp()),
        ki_in_band: (KI_BAND.0..=KI_BAND.1).contains(&ki),
    }
}

impl GainReport {
    pub fn passed(&self) -> bool {
        self.kp_ok && self.ki_in_band
    }
}
