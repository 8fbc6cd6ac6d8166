use super::Parameterized;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Floor on the denominator of the relative error, so that gradients
    /// which are numerically zero are compared in absolute terms.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-5,
            abs_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Entry with the largest relative error.
    pub worst: Option<GradCheckEntry>,
    /// Every entry above tolerance.
    pub failures: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Names of parameters with at least one failing entry.
    pub fn offending_params(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.failures.iter().map(|f| f.param.as_str()).collect();
        names.dedup();
        names
    }
}

/// Compares the gradients written by `loss` against central differences of
/// its return value, entry by entry.
///
/// `loss` must recompute the loss from the current parameters, overwrite the
/// model's gradient buffers, and be deterministic (clone any RNG it uses).
pub fn grad_check<M, F>(model: &mut M, mut loss: F, config: GradCheckConfig) -> GradCheckReport
where
    M: Parameterized + ?Sized,
    F: FnMut(&mut M) -> f64,
{
    loss(model);
    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .into_iter()
        .map(|p| (p.name, p.grad.to_vec()))
        .collect();

    let h = config.step;
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        failures: Vec::new(),
    };
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for (idx, &a) in grads.iter().enumerate() {
            let original = model.params()[pi].value[idx];
            model.params()[pi].value[idx] = original + h;
            let plus = loss(model);
            model.params()[pi].value[idx] = original - h;
            let minus = loss(model);
            model.params()[pi].value[idx] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let denom = a.abs().max(numeric.abs()).max(config.abs_floor);
            let rel_error = (a - numeric).abs() / denom;
            let entry = GradCheckEntry {
                param: name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_error,
            };
            report.checked += 1;
            if rel_error > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel_error;
                report.worst = Some(entry.clone());
            }
            if rel_error > config.tolerance || !rel_error.is_finite() {
                report.failures.push(entry);
            }
        }
    }
    // leave the analytic gradients in place
    loss(model);
    report
}
