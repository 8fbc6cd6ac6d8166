//! Disentanglement (mutual information gap) and control-quality statistics.

use serde::{Deserialize, Serialize};

use crate::data::FactorTable;
use crate::error::{invalid, Error, Result};
use crate::nn::Tensor2;

pub const DEFAULT_BINS: usize = 20;

/// Assigns each value to one of `bins` quantile bins. Bin edges are taken
/// from the sorted values, so equal values share a bin and the assignment
/// depends only on ranks.
pub fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins).map(|j| sorted[j * n / bins]).collect();
    values
        .iter()
        .map(|v| edges.partition_point(|e| e.total_cmp(v).is_le()))
        .collect()
}

fn entropy_of(labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    let n = labels.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in mutual information (nats) between two discrete label vectors.
pub fn mutual_info_labels(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let ka = a.iter().copied().max().unwrap_or(0) + 1;
    let kb = b.iter().copied().max().unwrap_or(0) + 1;
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / nf;
            mi += pxy * (c as f64 * nf / (ca[x] as f64 * cb[y] as f64)).ln();
        }
    }
    mi.max(0.0)
}

/// Histogram mutual information between a continuous latent (quantile
/// binned) and a discrete factor.
pub fn mutual_info_discrete(latent: &[f64], factor: &[usize], bins: usize) -> Result<f64> {
    if latent.len() != factor.len() {
        return Err(invalid(
            "latent/factor",
            format!("length mismatch {} vs {}", latent.len(), factor.len()),
        ));
    }
    if bins < 2 {
        return Err(invalid("bins", format!("need >= 2, got {bins}")));
    }
    Ok(mutual_info_labels(&quantile_bins(latent, bins), factor))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorGap {
    pub factor: String,
    pub entropy: f64,
    /// `(MI(top1) − MI(top2)) / H(factor)`
    pub gap: f64,
    pub top_latent: usize,
    pub runner_up_latent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigReport {
    pub per_factor_gap: Vec<FactorGap>,
    pub overall: f64,
    /// `mi_matrix[factor][latent]` in nats
    pub mi_matrix: Vec<Vec<f64>>,
    pub bins: usize,
}

impl MigReport {
    pub fn gap(&self, factor: &str) -> Option<f64> {
        self.per_factor_gap
            .iter()
            .find(|f| f.factor == factor)
            .map(|f| f.gap)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Mutual information gap of a code (`samples × latents`) against the factor
/// table.
pub fn mig(latents: &Tensor2, factors: &FactorTable, bins: usize) -> Result<MigReport> {
    let (n, l) = latents.shape();
    if l < 2 {
        return Err(invalid("latents", format!("MIG needs >= 2 latents, got {l}")));
    }
    if n != factors.len() {
        return Err(Error::ShapeMismatch {
            op: "mig",
            left: latents.shape(),
            right: (factors.len(), factors.num_factors()),
        });
    }
    let binned: Vec<Vec<usize>> = (0..l)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| latents[(i, j)]).collect();
            quantile_bins(&col, bins.max(2))
        })
        .collect();

    let mut per_factor_gap = Vec::with_capacity(factors.num_factors());
    let mut mi_matrix = Vec::with_capacity(factors.num_factors());
    for (f, name) in factors.names.iter().enumerate() {
        let labels = factors.column(f);
        let h = entropy_of(&labels);
        let row: Vec<f64> = binned.iter().map(|b| mutual_info_labels(b, &labels)).collect();
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let gap = if h > 0.0 {
            ((row[order[0]] - row[order[1]]) / h).clamp(0.0, 1.0)
        } else {
            0.0
        };
        per_factor_gap.push(FactorGap {
            factor: name.clone(),
            entropy: h,
            gap,
            top_latent: order[0],
            runner_up_latent: order[1],
        });
        mi_matrix.push(row);
    }
    let overall = per_factor_gap.iter().map(|g| g.gap).sum::<f64>()
        / per_factor_gap.len().max(1) as f64;
    Ok(MigReport {
        per_factor_gap,
        overall,
        mi_matrix,
        bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    /// First step after which every sample stays inside the band; `None`
    /// when the trace ends outside it.
    pub settling_time: Option<usize>,
    /// `max(value) − set_point`, floored at zero.
    pub overshoot: f64,
    /// Mean `|value − set_point|` over the final window.
    pub steady_state_error: f64,
}

impl TraceStats {
    pub fn settled(&self) -> bool {
        self.settling_time.is_some()
    }
}

/// Control-quality statistics of `values` against a fixed set point.
/// `band_pct` and `window_pct` are percentages (e.g. 1.0 for ±1%).
pub fn trace_stats(values: &[f64], set_point: f64, band_pct: f64, window_pct: f64) -> Result<TraceStats> {
    if values.is_empty() {
        return Err(invalid("trace", "empty trace"));
    }
    let band = set_point.abs() * band_pct / 100.0;
    let settling_time = match values.iter().rposition(|v| (v - set_point).abs() > band) {
        None => Some(0),
        Some(last_out) if last_out + 1 < values.len() => Some(last_out + 1),
        Some(_) => None,
    };
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let window = ((values.len() as f64 * window_pct / 100.0).ceil() as usize).clamp(1, values.len());
    let tail = &values[values.len() - window..];
    let steady_state_error = tail.iter().map(|v| (v - set_point).abs()).sum::<f64>() / window as f64;
    Ok(TraceStats {
        settling_time,
        overshoot: (max - set_point).max(0.0),
        steady_state_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_mini_shapes;
    use crate::rng::seeded;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn quantile_bins_keep_ties_together() {
        let v = [3.0, 1.0, 1.0, 2.0, 3.0, 1.0];
        let b = quantile_bins(&v, 3);
        assert_eq!(b[1], b[2]);
        assert_eq!(b[1], b[5]);
        assert!(b[3] >= b[1] && b[0] > b[3]);
    }

    #[test]
    fn identical_latent_recovers_factor_entropy() {
        let shapes = generate_mini_shapes();
        for f in 0..4 {
            let labels = shapes.factors.column(f);
            let latent: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            let mi = mutual_info_discrete(&latent, &labels, 20).unwrap();
            assert!((mi - entropy_of(&labels)).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_noise_has_small_mi() {
        let shapes = generate_mini_shapes();
        let labels = shapes.factors.column(0);
        let mut rng = seeded(17);
        let noise: Vec<f64> = (0..labels.len()).map(|_| rng.random::<f64>()).collect();
        let mi = mutual_info_discrete(&noise, &labels, 20).unwrap();
        assert!(mi < 0.05, "{mi}");
    }

    #[test]
    fn mi_invariant_to_relabeling() {
        let shapes = generate_mini_shapes();
        let labels = shapes.factors.column(2);
        let relabeled: Vec<usize> = labels.iter().map(|&l| 7 - l).collect();
        let mut rng = seeded(3);
        let latent: Vec<f64> = labels.iter().map(|&l| l as f64 + rng.random::<f64>() * 3.0).collect();
        let a = mutual_info_discrete(&latent, &labels, 20).unwrap();
        let b = mutual_info_discrete(&latent, &relabeled, 20).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mi_rejects_bad_input() {
        assert!(mutual_info_discrete(&[1.0], &[0, 1], 10).is_err());
        assert!(mutual_info_discrete(&[1.0], &[0], 1).is_err());
        assert_eq!(mutual_info_discrete(&[2.0; 10], &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 5).unwrap(), 0.0);
    }

    /// One latent per factor, followed by `extra` latents that are either
    /// uniform noise or, when `noise` is false, collapsed to a constant.
    fn disentangled_code(extra: usize, noise: bool, seed: u64) -> (Tensor2, FactorTable) {
        let shapes = generate_mini_shapes();
        let f = shapes.factors;
        let mut rng = seeded(seed);
        let rows: Vec<Vec<f64>> = f
            .labels
            .iter()
            .map(|l| {
                let mut r: Vec<f64> = l.iter().map(|&v| v as f64).collect();
                r.extend((0..extra).map(|_| if noise { rng.random::<f64>() } else { 0.0 }));
                r
            })
            .collect();
        (Tensor2::from_rows(&rows).unwrap(), f)
    }

    #[test]
    fn perfect_code_scores_one() {
        let (code, f) = disentangled_code(6, false, 1);
        let r = mig(&code, &f, 20).unwrap();
        for g in &r.per_factor_gap {
            assert!((g.gap - 1.0).abs() < 1e-12, "{}: {}", g.factor, g.gap);
        }
        assert!(r.overall >= 0.95);
        assert!(r.mi_matrix.iter().flatten().all(|&m| m >= 0.0));
    }

    #[test]
    fn noisy_spare_latents_cost_only_estimator_bias() {
        // 20 bins against an 8-valued factor at n = 384 leave a plug-in bias of
        // roughly (20 - 1)(8 - 1) / (2 * 384) nats on a pure-noise latent.
        let (code, f) = disentangled_code(6, true, 1);
        let r = mig(&code, &f, 20).unwrap();
        for g in &r.per_factor_gap {
            assert!(g.gap > 0.85, "{}: {}", g.factor, g.gap);
        }
        assert!(r.gap("shape").unwrap() > 0.95);
    }

    #[test]
    fn duplicated_latent_closes_the_gap() {
        let (code, f) = disentangled_code(6, true, 1);
        let mut rows: Vec<Vec<f64>> = code.iter_rows().map(<[f64]>::to_vec).collect();
        for r in &mut rows {
            r[5] = r[2]; // copy pos_x latent over a noise latent
        }
        let r = mig(&Tensor2::from_rows(&rows).unwrap(), &f, 20).unwrap();
        assert!(r.gap("pos_x").unwrap() < 0.01);
        assert!(r.gap("shape").unwrap() > 0.9);
    }

    #[test]
    fn monotone_transform_invariance() {
        let (code, f) = disentangled_code(3, true, 2);
        let mut rng = seeded(5);
        let rows: Vec<Vec<f64>> = code
            .iter_rows()
            .map(|r| r.iter().map(|&v| (v + 0.1 * rng.random::<f64>()).exp() * 3.0 - 1.0).collect())
            .collect();
        let noisy = Tensor2::from_rows(&rows).unwrap();
        let squashed = noisy.map(|v| v.atan());
        let a = mig(&noisy, &f, 20).unwrap();
        let b = mig(&squashed, &f, 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_noise_code_scores_near_zero() {
        let shapes = generate_mini_shapes();
        let mut rng = seeded(8);
        let code = Tensor2::from_vec(384, 10, (0..3840).map(|_| rng.random::<f64>()).collect()).unwrap();
        let r = mig(&code, &shapes.factors, 20).unwrap();
        assert!(r.overall <= 0.05, "{}", r.overall);
        // permuting a perfect code also destroys it
        let (code, f) = disentangled_code(0, false, 1);
        let mut idx: Vec<usize> = (0..384).collect();
        idx.shuffle(&mut rng);
        let r = mig(&code.select_rows(&idx), &f, 20).unwrap();
        assert!(r.overall <= 0.05, "{}", r.overall);
    }

    #[test]
    fn single_latent_is_rejected() {
        let shapes = generate_mini_shapes();
        assert!(mig(&Tensor2::zeros(384, 1), &shapes.factors, 20).is_err());
    }

    #[test]
    fn trace_stats_constant_at_set_point() {
        let s = trace_stats(&[5.0; 100], 5.0, 1.0, 10.0).unwrap();
        assert_eq!(s.settling_time, Some(0));
        assert_eq!(s.overshoot, 0.0);
        assert_eq!(s.steady_state_error, 0.0);
    }

    #[test]
    fn trace_stats_never_settles() {
        let s = trace_stats(&[1.0; 50], 5.0, 1.0, 10.0).unwrap();
        assert!(!s.settled());
        assert!((s.steady_state_error - 4.0).abs() < 1e-12);
        assert!(trace_stats(&[], 1.0, 1.0, 10.0).is_err());
    }

    #[test]
    fn trace_stats_by_hand() {
        let v = [0.0, 5.0, 12.0, 10.5, 9.95, 10.02, 10.0];
        let s = trace_stats(&v, 10.0, 1.0, 50.0).unwrap();
        assert_eq!(s.settling_time, Some(4));
        assert!((s.overshoot - 2.0).abs() < 1e-12);
    }
}
