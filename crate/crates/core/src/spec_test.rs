//! Hausman-type test of the extra instruments: compare the estimate using all
//! instruments with the one using only a baseline subset assumed valid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::first_stage::{predict, Dataset, FirstStageMethod};
use crate::inference::{cross_moment, estimate_beta, residuals};
use crate::numerics::{chi2_quantile, chi2_sf, derive_seed, dot, solve_linear, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecTestResult {
    #[serde(rename = "J")]
    pub j_stat: f64,
    pub dof: usize,
    pub alpha: f64,
    #[serde(rename = "critical")]
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub beta_full: Vec<f64>,
    pub beta_baseline: Vec<f64>,
    pub sigma2_tilde: f64,
}

/// Assembles the statistic from fitted instruments on the full set (`x_hat`)
/// and on the baseline set (`x_tilde`).
///
/// `J = n/σ̃² · dᵀ[(n⁻¹ΣX̃Xᵀ)⁻¹ − (n⁻¹ΣX̂Xᵀ)⁻¹]⁻¹d` with `d = β̂ − β̃` and
/// `σ̃²` the mean squared residual at `β̃`. The bracket is symmetrized and must
/// be positive definite.
pub fn hausman_statistic(
    x_hat: &Matrix,
    x_tilde: &Matrix,
    x: &Matrix,
    y: &[f64],
    alpha: f64,
) -> Result<SpecTestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = y.len() as f64;
    let q = x.cols();
    let beta_full = estimate_beta(x_hat, x, y)?;
    let beta_baseline = estimate_beta(x_tilde, x, y)?;
    let eps = residuals(x, y, &beta_baseline)?;
    let sigma2_tilde = eps.iter().map(|e| e * e).sum::<f64>() / n;
    let full_inv = cross_moment(x_hat, x)?.scale(1.0 / n).inverse()?;
    let base_inv = cross_moment(x_tilde, x)?.scale(1.0 / n).inverse()?;
    let inner = base_inv.sub(&full_inv)?.symmetrize();
    inner.cholesky().map_err(|min_pivot| Error::NonPositiveInner { min_pivot })?;
    let diff: Vec<f64> = beta_full.iter().zip(&beta_baseline).map(|(a, b)| a - b).collect();
    let solved = solve_linear(&inner, &Matrix::column(&diff))?.into_vec();
    let j_stat = if sigma2_tilde > 0.0 { n / sigma2_tilde * dot(&diff, &solved) } else { 0.0 };
    let critical_value = chi2_quantile(q, alpha)?;
    Ok(SpecTestResult {
        j_stat,
        dof: q,
        alpha,
        critical_value,
        p_value: chi2_sf(q, j_stat),
        reject: j_stat > critical_value,
        beta_full,
        beta_baseline,
        sigma2_tilde,
    })
}

/// Fits the first stage on all `d` instruments and on the first `baseline`
/// of them (independent seeds derived from `seed`) and runs the test.
pub fn hausman_test(
    data: &Dataset,
    baseline: usize,
    method: &FirstStageMethod,
    alpha: f64,
    seed: u64,
) -> Result<SpecTestResult> {
    if baseline == 0 || baseline >= data.d() {
        return Err(Error::Domain(format!(
            "baseline instrument count must lie in [1, {}), got {baseline}",
            data.d()
        )));
    }
    let reduced = data.leading_instruments(baseline)?;
    let (full_model, base_model) = rayon::join(
        || method.fit(data, derive_seed(&[seed, 1])),
        || method.fit(&reduced, derive_seed(&[seed, 2])),
    );
    let x_hat = predict(&full_model?, &data.z)?;
    let x_tilde = predict(&base_model?, &reduced.z)?;
    hausman_statistic(&x_hat, &x_tilde, &data.x, &data.y, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn design(seed: u64, n: usize, invalid: bool) -> Dataset {
        let mut rng = RngStream::new(seed, 0);
        let eps: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let z = Matrix::from_fn(n, 3, |i, j| {
            if j < 2 {
                rng.uniform_range(-3.0, 3.0)
            } else if invalid {
                eps[i] + rng.standard_normal()
            } else {
                rng.uniform_range(-3.0, 3.0)
            }
        });
        let x = Matrix::from_fn(n, 1, |i, _| z[(i, 0)] + 0.5 * z[(i, 1)] + z[(i, 2)] + eps[i]);
        let y = (0..n).map(|i| 3.0 * x[(i, 0)] + 2.0 * eps[i]).collect();
        Dataset::new(y, x, z, None).unwrap()
    }

    #[test]
    fn equal_estimates_give_zero() {
        let data = design(1, 100, false);
        let x_hat = data.z.leading_cols(1);
        let x_tilde = x_hat.scale(2.0);
        // scaling the fitted instrument leaves β unchanged
        let r = hausman_statistic(&x_tilde, &x_hat, &data.x, &data.y, 0.05).unwrap();
        assert!(r.j_stat.abs() < 1e-18);
        assert!(!r.reject);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_pd_inner_is_reported() {
        let data = design(2, 100, false);
        let x_hat = data.z.leading_cols(1);
        let err = hausman_statistic(&x_hat, &x_hat.scale(2.0), &data.x, &data.y, 0.05).unwrap_err();
        assert!(matches!(err, Error::NonPositiveInner { .. }));
    }

    #[test]
    fn baseline_bounds() {
        let data = design(3, 50, false);
        assert!(hausman_test(&data, 3, &FirstStageMethod::Linear, 0.05, 0).is_err());
        assert!(hausman_test(&data, 0, &FirstStageMethod::Linear, 0.05, 0).is_err());
    }

    #[test]
    fn decision_matches_critical_value() {
        let data = design(4, 500, true);
        let r = hausman_test(&data, 2, &FirstStageMethod::Linear, 0.05, 0).unwrap();
        assert_eq!(r.reject, r.j_stat > r.critical_value);
        assert!((r.critical_value - 3.841458820694124).abs() < 1e-9);
        assert!((r.p_value - chi2_sf(1, r.j_stat)).abs() < 1e-15);
        assert!(r.reject, "J = {}", r.j_stat);
    }

    #[test]
    fn linear_size_and_power() {
        let reps = 200;
        let mut size = 0;
        let mut power = 0;
        for s in 0..reps {
            if hausman_test(&design(100 + s, 1000, false), 2, &FirstStageMethod::Linear, 0.05, s).unwrap().reject {
                size += 1;
            }
            if hausman_test(&design(900 + s, 1000, true), 2, &FirstStageMethod::Linear, 0.05, s).unwrap().reject {
                power += 1;
            }
        }
        let size = size as f64 / reps as f64;
        let power = power as f64 / reps as f64;
        assert!((0.01..=0.10).contains(&size), "size {size}");
        assert!(power >= 0.9, "power {power}");
    }

    #[test]
    fn json_keys() {
        let data = design(5, 200, false);
        let r = hausman_test(&data, 2, &FirstStageMethod::Linear, 0.05, 0).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["J", "dof", "alpha", "critical", "p_value", "reject", "beta_full", "beta_baseline"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn invariant_to_response_scale(seed in 0u64..10_000, c in 0.1f64..20.0) {
                let data = design(seed, 200, seed % 2 == 0);
                let base = hausman_test(&data, 2, &FirstStageMethod::Linear, 0.05, 0);
                let mut scaled = data.clone();
                scaled.y.iter_mut().for_each(|v| *v *= c);
                let other = hausman_test(&scaled, 2, &FirstStageMethod::Linear, 0.05, 0);
                match (base, other) {
                    (Ok(a), Ok(b)) => {
                        prop_assert!((a.j_stat - b.j_stat).abs() <= 1e-8 * (1.0 + a.j_stat));
                        prop_assert!(a.j_stat >= 0.0);
                    }
                    (Err(Error::NonPositiveInner { .. }), Err(Error::NonPositiveInner { .. })) => {}
                    (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
                }
            }
        }
    }
}
