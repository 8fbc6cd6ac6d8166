use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode};
use crate::controller::{
    ControlError, Controller, FixedBeta, LagrangeController, PiController, WeightController,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{mig, trace_stats, MigReport, TraceStats};
use crate::nn::{AdamState, Tensor2};
use crate::plant::{closed_loop, FirstOrderPlant};
use crate::rng::{substream, SeededRng};
use crate::schedule::SetPoint;
use crate::trace::{TraceRecord, TraceWriter};
use crate::vae::{ElboBreakdown, Objective, VaeModel, WeightTarget};

// substream purposes
const INIT: u64 = 1;
const BATCHES: u64 = 2;
const NOISE: u64 = 3;
const EVAL: u64 = 4;
const PLANT: u64 = 5;

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MODEL_FILE: &str = "model.bin";
pub const CONTROLLER_FILE: &str = "controller.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Builds the weight controller a mode calls for.
pub fn build_controller(cfg: &ExperimentConfig) -> Result<Controller> {
    let c = &cfg.controller;
    let req = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| Error::Config(format!("controller.{name} is required")))
    };
    Ok(match cfg.mode {
        Mode::Controlvae | Mode::ControlFactorvae | Mode::PlantOnly => {
            let mut pi = PiController::new(
                req(c.kp, "kp")?,
                req(c.ki, "ki")?,
                req(c.beta_min, "beta_min")?,
                req(c.beta_max, "beta_max")?,
            )?;
            pi.set_anti_windup(c.anti_windup);
            Controller::Pi(pi)
        }
        Mode::PlainVae => Controller::Fixed(FixedBeta::new(1.0)?),
        Mode::BetaVae => Controller::Fixed(FixedBeta::new(req(c.beta, "beta")?)?),
        Mode::Lagrange => {
            Controller::Lagrange(LagrangeController::with_initial(req(c.alpha, "alpha")?, c.lambda0)?)
        }
    })
}

/// Endless stream of sample indices, reshuffled at every epoch boundary.
#[derive(Debug, Clone)]
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: SeededRng,
}

impl Batcher {
    fn new(n: usize, rng: SeededRng) -> Self {
        let mut b = Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        };
        b.refill();
        b
    }

    fn refill(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.refill();
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// One network training run, advanced a step at a time.
pub struct Trainer {
    model: VaeModel,
    adam: AdamState,
    controller: Controller,
    set_point: Option<SetPoint>,
    target: WeightTarget,
    data: Tensor2,
    batch_size: usize,
    batcher: Batcher,
    noise: SeededRng,
    ema: f64,
    smoothed: Option<f64>,
    step: u64,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Self> {
        if cfg.mode == Mode::PlantOnly {
            return Err(Error::Config("plant_only runs have no network to train".into()));
        }
        if dataset.is_empty() {
            return Err(Error::InvalidData("dataset is empty".into()));
        }
        let spec = cfg.model.spec(dataset.dim());
        let model = VaeModel::new(&spec, &mut substream(cfg.seed, INIT))?;
        Ok(Self {
            model,
            adam: AdamState::new(cfg.optimizer)?,
            controller: build_controller(cfg)?,
            set_point: cfg.set_point.filter(|_| cfg.mode.needs_set_point()),
            target: if cfg.mode == Mode::ControlFactorvae {
                WeightTarget::Tc
            } else {
                WeightTarget::Kl
            },
            data: dataset.data.clone(),
            batch_size: cfg.batch_size,
            batcher: Batcher::new(dataset.len(), substream(cfg.seed, BATCHES)),
            noise: substream(cfg.seed, NOISE),
            ema: cfg.controller.kl_ema,
            smoothed: None,
            step: 0,
        })
    }

    pub fn model(&self) -> &VaeModel {
        &self.model
    }

    pub fn into_model(self) -> VaeModel {
        self.model
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    fn objective(&self) -> Objective {
        let beta = self.controller.weight();
        match self.target {
            WeightTarget::Kl => Objective::KlWeighted { beta },
            WeightTarget::Tc => Objective::TcWeighted { beta },
        }
    }

    /// Draws a batch, lets the controller pick the weight from the batch's
    /// measured divergence, backpropagates with it and takes an Adam step.
    pub fn step(&mut self) -> Result<TraceRecord> {
        let t = self.step;
        let idx = self.batcher.next(self.batch_size);
        let batch = self.data.select_rows(&idx);
        let set_point = self.set_point.map(|s| s.at(t));
        let target = self.target;
        let ema = self.ema;
        let smoothed = &mut self.smoothed;
        let controller = &mut self.controller;
        let outcome = self.model.forward_backward(&batch, target, &mut self.noise, |m| {
            let raw = match target {
                WeightTarget::Kl => m.kl,
                WeightTarget::Tc => m.tc,
            };
            let measured = match *smoothed {
                Some(prev) if ema > 0.0 => ema * prev + (1.0 - ema) * raw,
                _ => raw,
            };
            *smoothed = Some(measured);
            let beta = match set_point {
                Some(sp) => controller.update(ControlError::from_measurement(sp, measured, t)?)?,
                None => controller.weight(),
            };
            if beta.is_finite() {
                Ok(beta)
            } else {
                Err(Error::NonFinite {
                    what: "weight",
                    step: t,
                    value: beta,
                })
            }
        });
        let bd = outcome.map_err(|e| self.diverged(t, f64::NAN, e.to_string()))?;
        for (what, v) in [("kl", bd.kl), ("recon", bd.recon), ("loss", bd.weighted_loss)] {
            if !v.is_finite() {
                return Err(self.diverged(t, bd.kl, format!("non-finite {what} ({v})")));
            }
        }
        if !(bd.kl_mu_slack_min >= 0.0) {
            return Err(Error::Invariant {
                step: t,
                what: format!(
                    "per-sample KL fell below half the squared mean norm by {}",
                    -bd.kl_mu_slack_min
                ),
            });
        }
        self.adam
            .step(&mut self.model)
            .map_err(|e| self.diverged(t, bd.kl, e.to_string()))?;
        self.step += 1;
        Ok(TraceRecord {
            step: t,
            kl: bd.kl,
            tc: (target == WeightTarget::Tc).then_some(bd.tc),
            beta: bd.beta,
            recon: Some(bd.recon),
            elbo: Some(bd.elbo),
            set_point,
        })
    }

    fn diverged(&self, step: u64, kl: f64, reason: String) -> Error {
        Error::Diverged {
            step,
            beta: self.controller.weight(),
            kl,
            reason,
        }
    }

    /// Objective terms on the whole dataset with the current weight.
    pub fn evaluate_full(&self, seed: u64) -> Result<ElboBreakdown> {
        let mut rng = substream(seed, EVAL);
        self.model.evaluate(&self.data, self.objective(), &mut rng)
    }
}

/// Means over the final stretch of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMeans {
    pub steps: usize,
    pub kl: f64,
    pub beta: f64,
    pub tc: Option<f64>,
    pub recon: Option<f64>,
    pub elbo: Option<f64>,
}

pub fn tail_means(trace: &[TraceRecord], window_pct: f64) -> Option<TailMeans> {
    if trace.is_empty() {
        return None;
    }
    let n = ((trace.len() as f64 * window_pct / 100.0).ceil() as usize).clamp(1, trace.len());
    let tail = &trace[trace.len() - n..];
    let mean = |f: &dyn Fn(&TraceRecord) -> f64| tail.iter().map(f).sum::<f64>() / n as f64;
    let opt_mean = |f: &dyn Fn(&TraceRecord) -> Option<f64>| {
        tail.iter()
            .map(f)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n as f64)
    };
    Some(TailMeans {
        steps: n,
        kl: mean(&|r| r.kl),
        beta: mean(&|r| r.beta),
        tc: opt_mean(&|r| r.tc),
        recon: opt_mean(&|r| r.recon),
        elbo: opt_mean(&|r| r.elbo),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub steps: u64,
    pub final_set_point: Option<f64>,
    /// KL of the last recorded batch.
    pub final_kl: f64,
    pub tail: TailMeans,
    /// Control quality of the controlled quantity against the final set
    /// point.
    pub trace_stats: Option<TraceStats>,
    /// Objective terms over the whole dataset after training.
    pub full_data: Option<ElboBreakdown>,
    pub mig: Option<MigReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub trace: Vec<TraceRecord>,
    pub controller: Controller,
    pub model: Option<VaeModel>,
}

fn summarize(cfg: &ExperimentConfig, trace: &[TraceRecord]) -> Result<RunSummary> {
    let last = trace
        .last()
        .ok_or_else(|| Error::Config("run produced no steps; set steps > 0".into()))?;
    let tail = tail_means(trace, cfg.metrics.window_pct).expect("non-empty trace");
    let final_set_point = cfg
        .set_point
        .filter(|_| cfg.mode.needs_set_point())
        .map(|s| s.final_value());
    let trace_stats = match final_set_point {
        Some(sp) => {
            let values: Vec<f64> = trace.iter().map(TraceRecord::controlled_value).collect();
            Some(trace_stats(&values, sp, cfg.metrics.band_pct, cfg.metrics.window_pct)?)
        }
        None => None,
    };
    Ok(RunSummary {
        mode: cfg.mode,
        seed: cfg.seed,
        steps: trace.len() as u64,
        final_set_point,
        final_kl: last.kl,
        tail,
        trace_stats,
        full_data: None,
        mig: None,
    })
}

fn prepare_dir(cfg: &ExperimentConfig) -> Result<Option<PathBuf>> {
    let Some(dir) = &cfg.output_dir else {
        return Ok(None);
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string()?)?;
    Ok(Some(dir.clone()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Runs one experiment end to end. With an output directory the trace is
/// streamed to CSV as it is produced, so an aborted run leaves a readable
/// prefix; summary, checkpoint and controller state are written at the end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    if cfg.mode == Mode::PlantOnly {
        return run_plant(cfg);
    }
    let dataset = cfg.dataset.load()?;
    let dir = prepare_dir(cfg)?;
    let mut writer = match &dir {
        Some(d) => Some(TraceWriter::create(d.join(TRACE_FILE))?),
        None => None,
    };
    let mut trainer = Trainer::new(cfg, &dataset)?;
    let mut trace = Vec::with_capacity(cfg.steps as usize);
    for _ in 0..cfg.steps {
        let rec = trainer.step()?;
        if let Some(w) = writer.as_mut() {
            w.write(&rec)?;
        }
        trace.push(rec);
    }
    if let Some(w) = writer {
        w.finish()?;
    }

    let mut summary = summarize(cfg, &trace)?;
    summary.full_data = Some(trainer.evaluate_full(cfg.seed)?);
    if cfg.metrics.mig {
        let factors = dataset.factors.as_ref().ok_or_else(|| {
            Error::Config("metrics.mig needs a dataset with factor labels".into())
        })?;
        let means = trainer.model().encode(&dataset.data)?.mu;
        summary.mig = Some(mig(&means, factors, cfg.metrics.bins)?);
    }
    let controller = trainer.controller().clone();
    let model = trainer.into_model();
    if let Some(d) = &dir {
        write_json(&d.join(SUMMARY_FILE), &summary)?;
        fs::write(d.join(CONTROLLER_FILE), controller.to_json()?)?;
        model.save(d.join(MODEL_FILE))?;
    }
    Ok(RunOutcome {
        summary,
        trace,
        controller,
        model: Some(model),
    })
}

fn run_plant(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let set_point = cfg
        .set_point
        .ok_or_else(|| Error::Config("plant_only requires a set_point".into()))?;
    let mut plant = FirstOrderPlant::new(cfg.plant, substream_seed(cfg.seed, PLANT))?;
    let mut controller = build_controller(cfg)?;
    let trace = closed_loop(&mut plant, &mut controller, |t| set_point.at(t), cfg.steps)?;
    let summary = summarize(cfg, &trace)?;
    if let Some(d) = prepare_dir(cfg)? {
        crate::trace::write_trace(d.join(TRACE_FILE), &trace)?;
        write_json(&d.join(SUMMARY_FILE), &summary)?;
        fs::write(d.join(CONTROLLER_FILE), controller.to_json()?)?;
    }
    Ok(RunOutcome {
        summary,
        trace,
        controller,
        model: None,
    })
}

fn substream_seed(seed: u64, purpose: u64) -> u64 {
    use rand::Rng;
    substream(seed, purpose).random()
}

/// Result of training a plain VAE until its ELBO stops moving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceKl {
    /// Mean batch KL over the final window.
    pub kl_vae: f64,
    /// Mean batch ELBO over the final window.
    pub elbo: f64,
    pub steps: u64,
    /// False when `max_steps` ran out first; `kl_vae` is then the best
    /// available estimate.
    pub converged: bool,
}

/// Trains `mode = plain_vae` on the same data and model as `cfg` until the
/// window-mean ELBO changes by less than `reference.rel_tol` (relative)
/// between consecutive windows, or `reference.max_steps` is reached.
pub fn measure_reference_kl(cfg: &ExperimentConfig) -> Result<ReferenceKl> {
    let mut plain = cfg.clone();
    plain.mode = Mode::PlainVae;
    plain.set_point = None;
    plain.validate()?;
    let dataset = plain.dataset.load()?;
    let mut trainer = Trainer::new(&plain, &dataset)?;
    let window = plain.reference.window;
    let max_steps = plain.reference.max_steps;
    let (mut kl_sum, mut elbo_sum, mut filled) = (0.0, 0.0, 0u64);
    let mut prev_elbo: Option<f64> = None;
    let mut last = None;
    while trainer.steps_done() < max_steps {
        let rec = trainer.step()?;
        kl_sum += rec.kl;
        elbo_sum += rec.elbo.unwrap_or_default();
        filled += 1;
        if filled < window {
            continue;
        }
        let (kl, elbo) = (kl_sum / filled as f64, elbo_sum / filled as f64);
        last = Some((kl, elbo));
        (kl_sum, elbo_sum, filled) = (0.0, 0.0, 0);
        if let Some(p) = prev_elbo {
            if ((elbo - p) / p.abs().max(f64::MIN_POSITIVE)).abs() < plain.reference.rel_tol {
                return Ok(ReferenceKl {
                    kl_vae: kl,
                    elbo,
                    steps: trainer.steps_done(),
                    converged: true,
                });
            }
        }
        prev_elbo = Some(elbo);
    }
    // fall back to a partial window when max_steps < window
    let (kl, elbo) = last.unwrap_or_else(|| {
        let n = filled.max(1) as f64;
        (kl_sum / n, elbo_sum / n)
    });
    Ok(ReferenceKl {
        kl_vae: kl,
        elbo,
        steps: trainer.steps_done(),
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;

    fn small(mode: &str, extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            r#"
mode = "{mode}"
seed = 3
steps = 40
batch_size = 16
dataset = {{ kind = "gauss_mixture", k = 3, dim = 6, n = 60, seed = 1 }}
model = {{ hidden = [8], latent_dim = 2, likelihood = "gaussian" }}
optimizer = {{ lr = 0.01 }}
{extra}
"#
        ))
        .unwrap()
    }

    #[test]
    fn batcher_covers_each_epoch_once() {
        let mut b = Batcher::new(10, substream(1, 2));
        let mut first: Vec<usize> = b.next(4);
        first.extend(b.next(4));
        first.extend(b.next(2));
        first.sort();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        assert_eq!(b.next(25).len(), 25);
    }

    #[test]
    fn plain_equals_beta_one() {
        let a = run_experiment(&small("plain_vae", "")).unwrap();
        let b = run_experiment(&small("beta_vae", "controller = { beta = 1.0 }")).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.iter().all(|r| r.beta == 1.0 && r.set_point.is_none()));
    }

    #[test]
    fn controller_sees_the_batch_it_weights() {
        let cfg = small(
            "controlvae",
            "set_point = { value = 0.5 }\ncontroller = { kp = 0.01, ki = 0.001, beta_min = 0.0, beta_max = 1.0 }",
        );
        let out = run_experiment(&cfg).unwrap();
        let mut pi = PiController::new(0.01, 0.001, 0.0, 1.0).unwrap();
        for r in &out.trace {
            let e = ControlError::from_measurement(0.5, r.kl, r.step).unwrap();
            assert_eq!(pi.step(e).to_bits(), r.beta.to_bits());
        }
    }

    #[test]
    fn tail_means_use_the_last_fraction() {
        let trace: Vec<_> = (0..20)
            .map(|i| TraceRecord::control(i, i as f64, 1.0, 0.0))
            .collect();
        let t = tail_means(&trace, 10.0).unwrap();
        assert_eq!(t.steps, 2);
        assert_eq!(t.kl, 18.5);
        assert_eq!(t.tc, None);
        assert!(tail_means(&[], 10.0).is_none());
    }

    #[test]
    fn reference_kl_reports_non_convergence() {
        let mut cfg = small("plain_vae", "");
        cfg.reference.window = 10;
        cfg.reference.max_steps = 30;
        cfg.reference.rel_tol = 0.0;
        let r = measure_reference_kl(&cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.steps, 30);
        assert_eq!(r, measure_reference_kl(&cfg).unwrap());
        cfg.reference.rel_tol = 10.0;
        let r = measure_reference_kl(&cfg).unwrap();
        assert!(r.converged && r.steps == 20);
    }
}
