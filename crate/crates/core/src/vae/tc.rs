//! Total correlation of a batch of latent samples under a full-covariance
//! Gaussian fit: `½ (Σ_j log Σ_jj − log det Σ)`.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{invalid, Result};
use crate::nn::Tensor2;

/// Ridge added to the covariance diagonal when it is not positive definite.
pub const TC_RIDGE: f64 = 1e-6;

/// A Cholesky pivot this small relative to its variance means the column is
/// a linear combination of earlier ones up to rounding.
const PIVOT_RTOL: f64 = 1e-10;

fn well_conditioned(chol: &Cholesky<f64, nalgebra::Dyn>, cov: &DMatrix<f64>) -> bool {
    let l = chol.l_dirty();
    (0..cov.nrows()).all(|j| l[(j, j)] * l[(j, j)] > PIVOT_RTOL * cov[(j, j)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcEstimate {
    pub value: f64,
    /// Set when the sample covariance needed the ridge to factorize.
    pub ridged: bool,
}

struct Fit {
    centered: DMatrix<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    ridged: bool,
}

fn fit(z: &Tensor2) -> Result<Fit> {
    let (n, d) = z.shape();
    if n <= d + 1 {
        return Err(invalid(
            "batch size",
            format!("total correlation needs more than {} samples, got {n}", d + 1),
        ));
    }
    let means = z.column_means();
    let centered = DMatrix::from_fn(n, d, |i, j| z[(i, j)] - means[j]);
    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    if let Some(chol) = Cholesky::new(cov.clone()).filter(|c| well_conditioned(c, &cov)) {
        return Ok(Fit {
            centered,
            cov,
            chol,
            ridged: false,
        });
    }
    let cov = cov + DMatrix::identity(d, d) * TC_RIDGE;
    let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
        invalid("latent batch", "covariance is not positive definite even after ridge")
    })?;
    Ok(Fit {
        centered,
        cov,
        chol,
        ridged: true,
    })
}

fn value_of(f: &Fit) -> f64 {
    let d = f.cov.nrows();
    let log_diag: f64 = (0..d).map(|j| f.cov[(j, j)].ln()).sum();
    let log_det: f64 = 2.0 * f.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    // Hadamard's inequality makes this non-negative up to rounding.
    (0.5 * (log_diag - log_det)).max(0.0)
}

pub fn total_correlation_gaussian(z: &Tensor2) -> Result<TcEstimate> {
    let f = fit(z)?;
    Ok(TcEstimate {
        value: value_of(&f),
        ridged: f.ridged,
    })
}

/// Estimate together with its gradient with respect to every sample.
///
/// With `c_i` the centered samples, `dTC/dz_i = (D⁻¹ − Σ⁻¹) c_i / (n − 1)`
/// where `D` is the diagonal of `Σ`.
pub fn total_correlation_with_grad(z: &Tensor2) -> Result<(TcEstimate, Tensor2)> {
    let f = fit(z)?;
    let (n, d) = z.shape();
    let mut m = -f.chol.inverse();
    for j in 0..d {
        m[(j, j)] += 1.0 / f.cov[(j, j)];
    }
    let g = &f.centered * m / (n - 1) as f64;
    let grad = Tensor2::from_vec(n, d, (0..n * d).map(|k| g[(k / d, k % d)]).collect())?;
    Ok((
        TcEstimate {
            value: value_of(&f),
            ridged: f.ridged,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn correlated(n: usize, rho: f64, seed: u64) -> Tensor2 {
        let mut rng = seeded(seed);
        let s = (1.0 - rho * rho).sqrt();
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            data.push(a);
            data.push(rho * a + s * b);
        }
        Tensor2::from_vec(n, 2, data).unwrap()
    }

    #[test]
    fn bivariate_closed_form() {
        let tc = total_correlation_gaussian(&correlated(100_000, 0.5, 7)).unwrap();
        let expected = -0.5 * (1.0f64 - 0.25).ln();
        assert!((tc.value - expected).abs() < 0.01, "{} vs {expected}", tc.value);
        assert!(!tc.ridged);
    }

    #[test]
    fn independent_samples_have_near_zero_tc() {
        let tc = total_correlation_gaussian(&correlated(50_000, 0.0, 8)).unwrap();
        assert!(tc.value < 1e-3, "{}", tc.value);
    }

    #[test]
    fn singular_covariance_is_ridged() {
        // second column duplicates the first
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, i as f64, (i * i) as f64]).collect();
        let z = Tensor2::from_rows(&rows).unwrap();
        let tc = total_correlation_gaussian(&z).unwrap();
        assert!(tc.ridged);
        assert!(tc.value.is_finite() && tc.value > 0.0);
    }

    #[test]
    fn rejects_small_batches() {
        assert!(total_correlation_gaussian(&Tensor2::zeros(3, 2)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded(11);
        let data: Vec<f64> = (0..12 * 3).map(|_| rng.sample(StandardNormal)).collect();
        let z = Tensor2::from_vec(12, 3, data).unwrap();
        let (_, grad) = total_correlation_with_grad(&z).unwrap();
        let h = 1e-6;
        for k in 0..z.as_slice().len() {
            let mut zp = z.clone();
            zp.as_mut_slice()[k] += h;
            let mut zm = z.clone();
            zm.as_mut_slice()[k] -= h;
            let num = (total_correlation_gaussian(&zp).unwrap().value
                - total_correlation_gaussian(&zm).unwrap().value)
                / (2.0 * h);
            let a = grad.as_slice()[k];
            assert!((a - num).abs() <= 1e-6 * a.abs().max(1e-3), "{k}: {a} vs {num}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tc_non_negative(seed in 0u64..1000, rho in -0.99..0.99f64) {
                let tc = total_correlation_gaussian(&correlated(20, rho, seed)).unwrap();
                prop_assert!(tc.value >= 0.0);
            }
        }
    }
}
