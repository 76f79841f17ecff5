//! Cross-fitted estimator: split in two, fit a first stage on each half,
//! truncate, predict each half with the other half's model, and pool.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::first_stage::{predict, truncate_model, Dataset, FirstStageMethod, FirstStageModel};
use crate::inference::{cross_moment, residuals, BetaEstimate};
use crate::mlp::TrainConfig;
use crate::numerics::{derive_seed, solve_linear, Matrix, RngStream};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub indices_a: Vec<usize>,
    pub indices_b: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    /// The same partition with the group labels exchanged.
    pub fn swapped(&self) -> SplitPlan {
        SplitPlan { indices_a: self.indices_b.clone(), indices_b: self.indices_a.clone(), seed: self.seed }
    }
}

/// Uniform random partition into groups of sizes `⌊n/2⌋` and `⌈n/2⌉`.
pub fn split(data: &Dataset, seed: u64) -> Result<SplitPlan> {
    let n = data.n();
    if n < 4 {
        return Err(Error::Domain(format!("sample splitting needs n ≥ 4, got {n}")));
    }
    let perm = RngStream::new(seed, 0).permutation(n);
    let n_a = n / 2;
    let mut indices_a = perm[..n_a].to_vec();
    let mut indices_b = perm[n_a..].to_vec();
    indices_a.sort_unstable();
    indices_b.sort_unstable();
    Ok(SplitPlan { indices_a, indices_b, seed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEstimate {
    /// Pooled estimate `β̌ᵃᵇ` with its covariance.
    #[serde(flatten)]
    pub combined: BetaEstimate,
    pub beta_a: Vec<f64>,
    pub beta_b: Vec<f64>,
    pub c_n: f64,
    pub split_seed: u64,
}

/// Per-group pieces of the cross-fit: truncated predictions from the other
/// group's model, and the group's own regressors and response.
struct Group {
    x_check: Matrix,
    x: Matrix,
    y: Vec<f64>,
}

impl Group {
    fn build(data: &Dataset, idx: &[usize], other_model: &FirstStageModel) -> Result<Group> {
        let part = data.subset(idx);
        Ok(Group { x_check: predict(other_model, &part.z)?, x: part.x, y: part.y })
    }

    fn moment(&self) -> Result<Matrix> {
        cross_moment(&self.x_check, &self.x)
    }

    fn score(&self) -> Result<Matrix> {
        self.x_check.transpose().matmul(&Matrix::column(&self.y))
    }
}

fn singular(group: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::SingularMatrix(_) => Error::SingularMatrix(format!(
            "truncated cross-fitted moment matrix is singular ({group}); instruments too weak or truncation too tight"
        )),
        other => other,
    }
}

/// `(Σ_a X̌ᵃXᵃᵀ + Σ_b X̌ᵇXᵇᵀ)⁻¹ (Σ_a |ε̌ᵃ|² + Σ_b |ε̌ᵇ|²)` with residuals at `beta_ab`.
pub fn split_vcov(
    x_check_a: &Matrix,
    x_a: &Matrix,
    y_a: &[f64],
    x_check_b: &Matrix,
    x_b: &Matrix,
    y_b: &[f64],
    beta_ab: &[f64],
) -> Result<Matrix> {
    let m = cross_moment(x_check_a, x_a)?.add(&cross_moment(x_check_b, x_b)?)?;
    let ss: f64 = residuals(x_a, y_a, beta_ab)?
        .iter()
        .chain(residuals(x_b, y_b, beta_ab)?.iter())
        .map(|e| e * e)
        .sum();
    Ok(m.inverse().map_err(singular("pooled"))?.scale(ss).symmetrize())
}

/// Stages 2–4 given the two group models (`model_a` was fitted on group a).
pub fn cross_fit(
    data: &Dataset,
    plan: &SplitPlan,
    model_a: &FirstStageModel,
    model_b: &FirstStageModel,
    c_n: f64,
) -> Result<SplitEstimate> {
    let trunc_a = truncate_model(model_a, c_n)?;
    let trunc_b = truncate_model(model_b, c_n)?;
    let ga = Group::build(data, &plan.indices_a, &trunc_b)?;
    let gb = Group::build(data, &plan.indices_b, &trunc_a)?;
    let (ma, mb) = (ga.moment()?, gb.moment()?);
    let beta_a = solve_linear(&ma, &ga.score()?).map_err(singular("group a"))?;
    let beta_b = solve_linear(&mb, &gb.score()?).map_err(singular("group b"))?;
    let pooled = ma.add(&mb)?;
    let rhs = ma.matmul(&beta_a)?.add(&mb.matmul(&beta_b)?)?;
    let beta_ab = solve_linear(&pooled, &rhs).map_err(singular("pooled"))?.into_vec();
    let vcov = split_vcov(&ga.x_check, &ga.x, &ga.y, &gb.x_check, &gb.x, &gb.y, &beta_ab)?;
    let n = data.n();
    let ss: f64 = residuals(&data.x, &data.y, &beta_ab)?.iter().map(|e| e * e).sum();
    Ok(SplitEstimate {
        combined: BetaEstimate::new(beta_ab, vcov, n, ss / n as f64),
        beta_a: beta_a.into_vec(),
        beta_b: beta_b.into_vec(),
        c_n,
        split_seed: plan.seed,
    })
}

/// Full split-sample estimator with an arbitrary first-stage fitter.
///
/// The two fits get seeds derived from the plan seed and run concurrently.
/// Returns the estimate and the group models `(model_a, model_b)`.
pub fn fit_split_with<F>(
    data: &Dataset,
    seed: u64,
    c_n: f64,
    fitter: F,
) -> Result<(SplitEstimate, FirstStageModel, FirstStageModel)>
where
    F: Fn(&Dataset, u64) -> Result<FirstStageModel> + Sync,
{
    if !(c_n > 0.0) {
        return Err(Error::Domain(format!("truncation level must be positive, got {c_n}")));
    }
    let plan = split(data, seed)?;
    let part_a = data.subset(&plan.indices_a);
    let part_b = data.subset(&plan.indices_b);
    let (model_a, model_b) = rayon::join(
        || fitter(&part_a, derive_seed(&[seed, 1])),
        || fitter(&part_b, derive_seed(&[seed, 2])),
    );
    let (model_a, model_b) = (model_a?, model_b?);
    let est = cross_fit(data, &plan, &model_a, &model_b, c_n)?;
    Ok((est, model_a, model_b))
}

/// Split-sample estimator with a depth-`depth`, width-`width` network first stage.
pub fn fit_split_estimator(
    data: &Dataset,
    depth: usize,
    width: usize,
    c_n: f64,
    cfg: &TrainConfig,
) -> Result<SplitEstimate> {
    let method = FirstStageMethod::Dnn { depth, width, train: cfg.clone() };
    fit_split_with(data, cfg.seed, c_n, |d, s| method.fit(d, s)).map(|(e, _, _)| e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::first_stage::{fit_linear, KnownFunction, Predictor};
    use crate::inference::estimate_beta;

    fn sample(seed: u64, n: usize) -> Dataset {
        let mut rng = RngStream::new(seed, 0);
        let z = Matrix::from_fn(n, 2, |_, _| rng.uniform_range(-3.0, 3.0));
        let eps: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let x = Matrix::from_fn(n, 1, |i, _| 2.0 * z[(i, 0)] - z[(i, 1)] + eps[i]);
        let y = (0..n).map(|i| 3.0 * x[(i, 0)] + 2.0 * eps[i]).collect();
        Dataset::new(y, x, z, None).unwrap()
    }

    fn linear(intercept: f64, coef: &[f64]) -> FirstStageModel {
        FirstStageModel::new(Predictor::Linear(KnownFunction::Linear {
            intercept: vec![intercept],
            coefficients: vec![coef.to_vec()],
        }))
        .unwrap()
    }

    #[test]
    fn plan_sizes_and_determinism() {
        for n in [4, 5, 11, 100] {
            let data = sample(1, n);
            let plan = split(&data, 7).unwrap();
            assert_eq!(plan.indices_a.len(), n / 2);
            assert_eq!(plan.indices_b.len(), n - n / 2);
            let mut all: Vec<usize> = plan.indices_a.iter().chain(&plan.indices_b).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            assert_eq!(plan, split(&data, 7).unwrap());
        }
        let data = sample(1, 100);
        assert_ne!(split(&data, 7).unwrap(), split(&data, 8).unwrap());
        assert!(split(&sample(1, 3), 0).is_err());
    }

    #[test]
    fn shared_model_hand_case() {
        let z = Matrix::from_rows(&[[0.0], [1.0], [2.0], [-1.0], [0.5], [3.0]]).unwrap();
        let x = Matrix::column(&[1.0, 2.0, 2.5, -0.5, 1.0, 4.0]);
        let y = vec![2.0, 4.5, 5.0, -1.0, 2.5, 8.0];
        let data = Dataset::new(y.clone(), x.clone(), z.clone(), None).unwrap();
        let plan = SplitPlan { indices_a: vec![0, 2, 4], indices_b: vec![1, 3, 5], seed: 0 };
        let model = linear(0.5, &[1.0]);
        let est = cross_fit(&data, &plan, &model, &model, 100.0).unwrap();
        // by hand: x̌ = 0.5 + z in each group
        let grp = |idx: &[usize]| {
            let (mut sxx, mut sxy) = (0.0, 0.0);
            for &i in idx {
                let xc = 0.5 + z[(i, 0)];
                sxx += xc * x[(i, 0)];
                sxy += xc * y[i];
            }
            (sxx, sxy)
        };
        let (ma, sa) = grp(&plan.indices_a);
        let (mb, sb) = grp(&plan.indices_b);
        assert!((est.beta_a[0] - sa / ma).abs() < 1e-12);
        assert!((est.beta_b[0] - sb / mb).abs() < 1e-12);
        let pooled = (ma * est.beta_a[0] + mb * est.beta_b[0]) / (ma + mb);
        assert!((est.combined.beta[0] - pooled).abs() < 1e-12);
        // with a shared model the pooled estimate is the full-sample one
        let full_hat = Matrix::from_fn(6, 1, |i, _| 0.5 + z[(i, 0)]);
        let full = estimate_beta(&full_hat, &x, &y).unwrap();
        assert!((est.combined.beta[0] - full[0]).abs() < 1e-12);
    }

    #[test]
    fn combination_identity_and_vcov_scalar() {
        let data = sample(2, 200);
        let (est, ma, mb) = fit_split_with(&data, 3, 50.0, |d, _| fit_linear(d)).unwrap();
        let plan = split(&data, 3).unwrap();
        let xa_check = predict(&mb, &data.subset(&plan.indices_a).z).unwrap();
        let xb_check = predict(&ma, &data.subset(&plan.indices_b).z).unwrap();
        let pa = data.subset(&plan.indices_a);
        let pb = data.subset(&plan.indices_b);
        let m_a = cross_moment(&xa_check, &pa.x).unwrap()[(0, 0)];
        let m_b = cross_moment(&xb_check, &pb.x).unwrap()[(0, 0)];
        let lhs = (m_a + m_b) * est.combined.beta[0];
        let rhs = m_a * est.beta_a[0] + m_b * est.beta_b[0];
        assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        let ss: f64 = residuals(&data.x, &data.y, &est.combined.beta).unwrap().iter().map(|e| e * e).sum();
        assert!((est.combined.vcov[(0, 0)] - ss / (m_a + m_b)).abs() < 1e-10);
        assert!((est.combined.beta[0] - 3.0).abs() < 0.2);
    }

    #[test]
    fn zero_residuals_zero_vcov() {
        let n = 20;
        let mut rng = RngStream::new(4, 0);
        let z = Matrix::from_fn(n, 1, |_, _| rng.uniform_range(-3.0, 3.0));
        let x = Matrix::from_fn(n, 1, |i, _| z[(i, 0)] + 0.1 * rng.standard_normal());
        let y = x.col(0).iter().map(|v| 2.0 * v).collect();
        let data = Dataset::new(y, x, z, None).unwrap();
        let (est, _, _) = fit_split_with(&data, 1, 50.0, |d, _| fit_linear(d)).unwrap();
        assert!(est.combined.vcov.max_abs() < 1e-20);
    }

    #[test]
    fn label_swap_invariance() {
        let data = sample(5, 300);
        let plan = split(&data, 9).unwrap();
        let ma = fit_linear(&data.subset(&plan.indices_a)).unwrap();
        let mb = fit_linear(&data.subset(&plan.indices_b)).unwrap();
        let est = cross_fit(&data, &plan, &ma, &mb, 50.0).unwrap();
        let swapped = cross_fit(&data, &plan.swapped(), &mb, &ma, 50.0).unwrap();
        assert!((est.combined.beta[0] - swapped.combined.beta[0]).abs() < 1e-10);
    }

    #[test]
    fn group_model_ignores_other_group() {
        let data = sample(6, 100);
        let plan = split(&data, 11).unwrap();
        let mut perturbed = data.clone();
        for &i in &plan.indices_a {
            perturbed.x[(i, 0)] += 10.0;
        }
        let fitter = |d: &Dataset, _| fit_linear(d);
        let (_, _, mb) = fit_split_with(&data, 11, 50.0, fitter).unwrap();
        let (_, ma2, mb2) = fit_split_with(&perturbed, 11, 50.0, fitter).unwrap();
        // group a is predicted by the group-b model, which never saw group a
        assert_eq!(mb, mb2);
        let (_, ma, _) = fit_split_with(&data, 11, 50.0, fitter).unwrap();
        assert_ne!(ma, ma2);
    }

    #[test]
    fn tight_truncation_is_singular() {
        let data = sample(7, 40);
        let model = linear(100.0, &[0.0, 0.0]);
        let plan = split(&data, 0).unwrap();
        let err = cross_fit(&data, &plan, &model, &model, 5.0).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix(_)));
    }

    #[test]
    fn dnn_split_runs_and_serializes() {
        let data = sample(8, 200);
        let cfg = TrainConfig { max_epochs: 30, seed: 4, ..TrainConfig::default() };
        let est = fit_split_estimator(&data, 2, 8, crate::first_stage::default_truncation(200, 3.0), &cfg).unwrap();
        assert_eq!(est, fit_split_estimator(&data, 2, 8, est.c_n, &cfg).unwrap());
        let v = serde_json::to_value(&est).unwrap();
        for key in ["beta", "se", "vcov", "n", "sigma2", "beta_a", "beta_b", "c_n", "split_seed"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: SplitEstimate = serde_json::from_value(v).unwrap();
        assert_eq!(back, est);
    }
}
