//! Gaussian-encoder VAE with a Bernoulli or fixed-variance Gaussian decoder.
//!
//! The training objective weights the closed-form KL term by a
//! controller-supplied β ([`VaeModel::controlvae_loss`]) or keeps the KL at
//! unit weight and weights a batch total-correlation estimate instead
//! ([`VaeModel::control_factorvae_loss`]). Both compute exact gradients into
//! the model's buffers.

pub mod tc;

pub use tc::{total_correlation_gaussian, total_correlation_with_grad, TcEstimate, TC_RIDGE};

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::io::{read_layers, write_layers, LayerRole};
use crate::nn::{Activation, Mlp, ParamView, Parameterized, Tensor2};

/// Bounds applied to the encoder's log-variance output.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    #[default]
    Bernoulli,
    /// Unit-variance Gaussian around the decoder output.
    Gaussian,
}

/// Posterior parameters for a batch: one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mu: Tensor2,
    pub log_var: Tensor2,
}

/// `x − 1 − ln x` written through `ln x`; never negative.
#[inline]
pub fn variance_excess(log_var: f64) -> f64 {
    (log_var.exp_m1() - log_var).max(0.0)
}

impl LatentStats {
    pub fn new(mu: Tensor2, log_var: Tensor2) -> Result<Self> {
        if mu.shape() != log_var.shape() {
            return Err(Error::ShapeMismatch {
                op: "LatentStats::new",
                left: mu.shape(),
                right: log_var.shape(),
            });
        }
        Ok(Self { mu, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    pub fn batch_size(&self) -> usize {
        self.mu.rows()
    }

    /// Per-sample `½ Σ_n (μ² + σ² − 1 − log σ²)`.
    pub fn kl_per_sample(&self) -> Vec<f64> {
        self.mu
            .iter_rows()
            .zip(self.log_var.iter_rows())
            .map(|(mu, lv)| {
                let mu_sq: f64 = mu.iter().map(|m| m * m).sum();
                let excess: f64 = lv.iter().map(|&l| variance_excess(l)).sum();
                0.5 * (mu_sq + excess)
            })
            .collect()
    }

    /// Per-sample `½ ‖μ‖²`, the lower bound of the per-sample KL.
    pub fn half_mu_norm_sq(&self) -> Vec<f64> {
        self.mu
            .iter_rows()
            .map(|mu| 0.5 * mu.iter().map(|m| m * m).sum::<f64>())
            .collect()
    }

    /// Batch mean of the closed-form KL against a unit Gaussian prior.
    pub fn kl_closed_form(&self) -> f64 {
        let kl = self.kl_per_sample();
        kl.iter().sum::<f64>() / kl.len().max(1) as f64
    }
}

/// Draws `z = μ + ε·exp(½ log σ²)` with `ε ~ N(0, I)`; returns `(z, ε)`.
/// Log-variances are clamped to `[LOG_VAR_MIN, LOG_VAR_MAX]` first.
pub fn reparameterize<R: Rng + ?Sized>(stats: &LatentStats, rng: &mut R) -> (Tensor2, Tensor2) {
    let (n, d) = stats.mu.shape();
    let mut eps = Tensor2::zeros(n, d);
    eps.as_mut_slice()
        .iter_mut()
        .for_each(|e| *e = rng.sample(StandardNormal));
    let z = Tensor2::from_vec(
        n,
        d,
        stats
            .mu
            .as_slice()
            .iter()
            .zip(stats.log_var.as_slice())
            .zip(eps.as_slice())
            .map(|((&m, &lv), &e)| m + e * (0.5 * lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).exp())
            .collect(),
    )
    .expect("same shape");
    (z, eps)
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Terms of one objective evaluation (all per-sample means, in nats).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    /// `E[log p(x|z)]`
    pub recon: f64,
    pub kl: f64,
    /// Batch total correlation; 0 when the objective does not use it.
    pub tc: f64,
    pub beta: f64,
    /// `recon − kl`, unweighted.
    pub elbo: f64,
    /// Value of the minimized objective.
    pub weighted_loss: f64,
    pub tc_ridged: bool,
    /// Smallest per-sample `KL − ½‖μ‖²` in the batch (never negative).
    pub kl_mu_slack_min: f64,
}

/// Divergences measured on a batch before the weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub kl: f64,
    pub tc: f64,
}

/// Term that carries the controller weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightTarget {
    Kl,
    Tc,
}

/// Which divergence carries the controller weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `−(recon − β·KL)`
    KlWeighted { beta: f64 },
    /// `−(recon − KL − β·TC)`
    TcWeighted { beta: f64 },
}

impl Objective {
    fn beta(&self) -> f64 {
        match *self {
            Objective::KlWeighted { beta } | Objective::TcWeighted { beta } => beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    #[serde(default)]
    pub likelihood: Likelihood,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    encoder: Mlp,
    decoder: Mlp,
    latent_dim: usize,
    likelihood: Likelihood,
}

impl VaeModel {
    pub fn new<R: Rng + ?Sized>(spec: &VaeSpec, rng: &mut R) -> Result<Self> {
        if spec.latent_dim == 0 || spec.input_dim == 0 {
            return Err(invalid("latent_dim/input_dim", "must be positive"));
        }
        let mut enc_sizes = vec![spec.input_dim];
        enc_sizes.extend(&spec.hidden);
        enc_sizes.push(2 * spec.latent_dim);
        let mut dec_sizes = vec![spec.latent_dim];
        dec_sizes.extend(spec.hidden.iter().rev());
        dec_sizes.push(spec.input_dim);
        let encoder = Mlp::new(&enc_sizes, spec.activation, Activation::Identity, rng)?;
        let decoder = Mlp::new(&dec_sizes, spec.activation, Activation::Identity, rng)?;
        Self::from_parts(encoder, decoder, spec.likelihood)
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp, likelihood: Likelihood) -> Result<Self> {
        let latent_dim = decoder.input_dim();
        if encoder.output_dim() != 2 * latent_dim {
            return Err(Error::ShapeMismatch {
                op: "VaeModel::from_parts (encoder out vs 2 * latent)",
                left: (encoder.output_dim(), 1),
                right: (2 * latent_dim, 1),
            });
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "VaeModel::from_parts (decoder out vs input)",
                left: (decoder.output_dim(), 1),
                right: (encoder.input_dim(), 1),
            });
        }
        Ok(Self {
            encoder,
            decoder,
            latent_dim,
            likelihood,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut Mlp {
        &mut self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    fn split_encoder_output(&self, out: &Tensor2) -> LatentStats {
        let n = self.latent_dim;
        let mu = out.columns(0, n);
        let log_var = out.columns(n, n).map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX));
        LatentStats { mu, log_var }
    }

    /// Posterior parameters for a batch (no state retained).
    pub fn encode(&self, batch: &Tensor2) -> Result<LatentStats> {
        let out = self.encoder.infer(batch)?;
        Ok(self.split_encoder_output(&out))
    }

    /// Decoder output: logits (Bernoulli) or means (Gaussian).
    pub fn decode(&self, z: &Tensor2) -> Result<Tensor2> {
        self.decoder.infer(z)
    }

    /// Mean over the batch of `log p(x|z)`.
    pub fn reconstruction_log_likelihood(&self, batch: &Tensor2, z: &Tensor2) -> Result<f64> {
        let out = self.decode(z)?;
        let per_sample = self.log_likelihood_per_sample(batch, &out)?;
        Ok(per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64)
    }

    fn log_likelihood_per_sample(&self, batch: &Tensor2, out: &Tensor2) -> Result<Vec<f64>> {
        if batch.shape() != out.shape() {
            return Err(Error::ShapeMismatch {
                op: "reconstruction",
                left: batch.shape(),
                right: out.shape(),
            });
        }
        match self.likelihood {
            Likelihood::Bernoulli => {
                if let Some(&x) = batch
                    .as_slice()
                    .iter()
                    .find(|&&x| !(0.0..=1.0).contains(&x))
                {
                    return Err(Error::InvalidData(format!(
                        "Bernoulli targets must lie in [0, 1], found {x}"
                    )));
                }
                Ok(batch
                    .iter_rows()
                    .zip(out.iter_rows())
                    .map(|(x, l)| x.iter().zip(l).map(|(&x, &l)| x * l - softplus(l)).sum())
                    .collect())
            }
            Likelihood::Gaussian => {
                let c = -0.5 * batch.cols() as f64 * (2.0 * PI).ln();
                Ok(batch
                    .iter_rows()
                    .zip(out.iter_rows())
                    .map(|(x, m)| {
                        c - 0.5
                            * x.iter()
                                .zip(m)
                                .map(|(&x, &m)| (x - m) * (x - m))
                                .sum::<f64>()
                    })
                    .collect())
            }
        }
    }

    /// Loss `−(E[log p(x|z)] − β·KL)` and its gradient.
    pub fn controlvae_loss<R: Rng + ?Sized>(
        &mut self,
        batch: &Tensor2,
        beta: f64,
        rng: &mut R,
    ) -> Result<ElboBreakdown> {
        if !(beta >= 0.0) {
            return Err(invalid("beta", format!("must be >= 0, got {beta}")));
        }
        self.loss_and_grad(batch, Objective::KlWeighted { beta }, rng)
    }

    /// Loss `−(E[log p(x|z)] − KL − β·TC)` and its gradient, with TC estimated
    /// on the reparameterized batch.
    pub fn control_factorvae_loss<R: Rng + ?Sized>(
        &mut self,
        batch: &Tensor2,
        beta_tc: f64,
        rng: &mut R,
    ) -> Result<ElboBreakdown> {
        if !(beta_tc >= 0.0) {
            return Err(invalid("beta_tc", format!("must be >= 0, got {beta_tc}")));
        }
        self.loss_and_grad(batch, Objective::TcWeighted { beta: beta_tc }, rng)
    }

    /// Evaluates `objective` on `batch`, overwriting the gradient buffers.
    ///
    /// Weights are allowed to be negative here (the Lagrange multiplier is
    /// not clamped); the public loss functions reject negative β.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &mut self,
        batch: &Tensor2,
        objective: Objective,
        rng: &mut R,
    ) -> Result<ElboBreakdown> {
        let (target, beta) = match objective {
            Objective::KlWeighted { beta } => (WeightTarget::Kl, beta),
            Objective::TcWeighted { beta } => (WeightTarget::Tc, beta),
        };
        self.forward_backward(batch, target, rng, |_| Ok(beta))
    }

    /// Forward pass, then `choose_weight` sees the measured divergences and
    /// returns the weight for `target`, then the backward pass runs with it.
    /// This lets a controller react to the KL (or TC) of the very batch it
    /// weights.
    pub fn forward_backward<R, F>(
        &mut self,
        batch: &Tensor2,
        target: WeightTarget,
        rng: &mut R,
        choose_weight: F,
    ) -> Result<ElboBreakdown>
    where
        R: Rng + ?Sized,
        F: FnOnce(&Measurement) -> Result<f64>,
    {
        self.zero_grad();
        let b = batch.rows();
        if b == 0 {
            return Err(invalid("batch", "empty batch"));
        }
        let inv_b = 1.0 / b as f64;
        let n = self.latent_dim;

        let enc_out = self.encoder.forward(batch)?;
        let raw_log_var = enc_out.columns(n, n);
        let stats = self.split_encoder_output(&enc_out);
        let (z, eps) = reparameterize(&stats, rng);
        let out = self.decoder.forward(&z)?;

        let log_lik = self.log_likelihood_per_sample(batch, &out)?;
        let recon = log_lik.iter().sum::<f64>() * inv_b;
        let kl_each = stats.kl_per_sample();
        let kl = kl_each.iter().sum::<f64>() * inv_b;
        let (tc, tc_ridged, tc_grad) = match target {
            WeightTarget::Tc => {
                let (est, g) = total_correlation_with_grad(&z)?;
                (est.value, est.ridged, Some(g))
            }
            WeightTarget::Kl => (0.0, false, None),
        };
        let beta = choose_weight(&Measurement { kl, tc })?;
        let (kl_weight, tc_weight) = match target {
            WeightTarget::Kl => (beta, 0.0),
            WeightTarget::Tc => (1.0, beta),
        };
        let weighted_loss = -recon + kl_weight * kl + tc_weight * tc;
        let kl_mu_slack_min = kl_each
            .iter()
            .zip(stats.half_mu_norm_sq())
            .map(|(k, h)| k - h)
            .fold(f64::INFINITY, f64::min);

        // d loss / d decoder output
        let mut d_out = Tensor2::zeros(out.rows(), out.cols());
        for ((d, &x), &o) in d_out
            .as_mut_slice()
            .iter_mut()
            .zip(batch.as_slice())
            .zip(out.as_slice())
        {
            let dlogp = match self.likelihood {
                Likelihood::Bernoulli => x - crate::nn::sigmoid(o),
                Likelihood::Gaussian => x - o,
            };
            *d = -dlogp * inv_b;
        }
        let mut dz = self.decoder.backward(&d_out)?;
        if let Some(g) = tc_grad {
            crate::nn::axpy(tc_weight, g.as_slice(), dz.as_mut_slice());
        }

        let mut d_enc = Tensor2::zeros(b, 2 * n);
        for i in 0..b {
            for j in 0..n {
                let mu = stats.mu[(i, j)];
                let lv = stats.log_var[(i, j)];
                let raw = raw_log_var[(i, j)];
                let sigma = (0.5 * lv).exp();
                let g = dz[(i, j)];
                d_enc[(i, j)] = g + kl_weight * mu * inv_b;
                d_enc[(i, n + j)] = if raw > LOG_VAR_MIN && raw < LOG_VAR_MAX {
                    g * eps[(i, j)] * 0.5 * sigma + kl_weight * 0.5 * lv.exp_m1() * inv_b
                } else {
                    0.0
                };
            }
        }
        self.encoder.backward(&d_enc)?;

        Ok(ElboBreakdown {
            recon,
            kl,
            tc,
            beta,
            elbo: recon - kl,
            weighted_loss,
            tc_ridged,
            kl_mu_slack_min,
        })
    }

    /// Objective terms without touching gradients (one reparameterized draw).
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        batch: &Tensor2,
        objective: Objective,
        rng: &mut R,
    ) -> Result<ElboBreakdown> {
        let stats = self.encode(batch)?;
        let (z, _) = reparameterize(&stats, rng);
        let out = self.decode(&z)?;
        let log_lik = self.log_likelihood_per_sample(batch, &out)?;
        let b = batch.rows() as f64;
        let recon = log_lik.iter().sum::<f64>() / b;
        let kl_each = stats.kl_per_sample();
        let kl = kl_each.iter().sum::<f64>() / b;
        let kl_mu_slack_min = kl_each
            .iter()
            .zip(stats.half_mu_norm_sq())
            .map(|(k, h)| k - h)
            .fold(f64::INFINITY, f64::min);
        let (tc, tc_ridged, kl_w, tc_w) = match objective {
            Objective::KlWeighted { beta } => (0.0, false, beta, 0.0),
            Objective::TcWeighted { beta } => {
                let est = total_correlation_gaussian(&z)?;
                (est.value, est.ridged, 1.0, beta)
            }
        };
        Ok(ElboBreakdown {
            recon,
            kl,
            tc,
            beta: objective.beta(),
            elbo: recon - kl,
            weighted_loss: -recon + kl_w * kl + tc_w * tc,
            tc_ridged,
            kl_mu_slack_min,
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let dec_role = match self.likelihood {
            Likelihood::Bernoulli => LayerRole::DecoderBernoulli,
            Likelihood::Gaussian => LayerRole::DecoderGaussian,
        };
        let layers: Vec<(LayerRole, &crate::nn::DenseLayer)> = self
            .encoder
            .layers()
            .iter()
            .map(|l| (LayerRole::Encoder, l))
            .chain(self.decoder.layers().iter().map(|l| (dec_role, l)))
            .collect();
        write_layers(w, &layers)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let layers = read_layers(r)?;
        let mut enc = Vec::new();
        let mut dec = Vec::new();
        let mut likelihood = None;
        for (role, layer) in layers {
            match role {
                LayerRole::Encoder if dec.is_empty() => enc.push(layer),
                LayerRole::DecoderBernoulli | LayerRole::DecoderGaussian => {
                    let l = if role == LayerRole::DecoderBernoulli {
                        Likelihood::Bernoulli
                    } else {
                        Likelihood::Gaussian
                    };
                    if likelihood.is_some_and(|p| p != l) {
                        return Err(Error::Format("mixed decoder likelihoods".into()));
                    }
                    likelihood = Some(l);
                    dec.push(layer);
                }
                other => {
                    return Err(Error::Format(format!("unexpected layer role {other:?}")));
                }
            }
        }
        if enc.is_empty() || dec.is_empty() {
            return Err(Error::Format("checkpoint lacks encoder or decoder".into()));
        }
        Self::from_parts(
            Mlp::from_layers(enc)?,
            Mlp::from_layers(dec)?,
            likelihood.unwrap_or_default(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

impl Parameterized for VaeModel {
    fn params(&mut self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        self.encoder.push_params("encoder", &mut out);
        self.decoder.push_params("decoder", &mut out);
        out
    }
}
