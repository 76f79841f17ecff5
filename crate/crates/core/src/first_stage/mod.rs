//! First-stage regressions of the endogenous regressors on the instruments.
//!
//! Four fitted families (network, tensor spline lasso, additive spline lasso,
//! linear) plus a known-function oracle, all behind [`FirstStageModel`].

pub mod lasso;
pub mod spline;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{self, MlpNetwork, TrainConfig, TrainReport};
use crate::numerics::{solve_linear, Matrix, RngStream};

pub use lasso::{cv_lasso, lambda_grid, lasso_coordinate_descent, CvConfig, CvPath, LassoFit};
pub use spline::{additive_basis, spline_basis_1d, tensor_basis, Interaction, SplineSpec, DEFAULT_BASIS_CAP};

/// Observed sample: response `y`, endogenous `x` (n×q), instruments `z` (n×d)
/// and optional exogenous regressors `r` (n×q₂).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: Matrix,
    pub z: Matrix,
    pub r: Option<Matrix>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Matrix, z: Matrix, r: Option<Matrix>) -> Result<Self> {
        let data = Self { y, x, z, r };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::Domain("dataset has no rows".into()));
        }
        if self.x.cols() == 0 || self.z.cols() == 0 {
            return Err(Error::Domain("need at least one endogenous regressor and one instrument".into()));
        }
        let mut parts = vec![("x", &self.x), ("z", &self.z)];
        if let Some(r) = &self.r {
            parts.push(("r", r));
        }
        for (name, m) in parts {
            if m.rows() != n {
                return Err(Error::ShapeMismatch(format!("{name} has {} rows, y has {n}", m.rows())));
            }
            if !m.is_finite() {
                return Err(Error::Domain(format!("{name} contains non-finite values")));
            }
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("y contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of endogenous regressors.
    pub fn q(&self) -> usize {
        self.x.cols()
    }

    /// Number of instruments.
    pub fn d(&self) -> usize {
        self.z.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            x: self.x.select_rows(idx),
            z: self.z.select_rows(idx),
            r: self.r.as_ref().map(|r| r.select_rows(idx)),
        }
    }

    /// Same sample with the instrument matrix replaced.
    pub fn with_instruments(&self, z: Matrix) -> Result<Dataset> {
        Dataset::new(self.y.clone(), self.x.clone(), z, self.r.clone())
    }

    /// Same sample keeping only the first `k` instruments.
    pub fn leading_instruments(&self, k: usize) -> Result<Dataset> {
        if k == 0 || k > self.d() {
            return Err(Error::Domain(format!("cannot keep {k} of {} instruments", self.d())));
        }
        self.with_instruments(self.z.leading_cols(k))
    }
}

/// Closed-form conditional means used as oracle first stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnownFunction {
    /// `z₁ sin z₂ + z₃ z₄`
    Dgp1,
    /// `3z₁ + 4z₂ − 2z₃ + z₄`
    Dgp2,
    /// `intercept + coefficients · z`, one row of coefficients per output.
    Linear { intercept: Vec<f64>, coefficients: Vec<Vec<f64>> },
}

impl KnownFunction {
    pub fn input_dim(&self) -> usize {
        match self {
            KnownFunction::Dgp1 | KnownFunction::Dgp2 => 4,
            KnownFunction::Linear { coefficients, .. } => coefficients.first().map_or(0, Vec::len),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            KnownFunction::Dgp1 | KnownFunction::Dgp2 => 1,
            KnownFunction::Linear { intercept, .. } => intercept.len(),
        }
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        match self {
            KnownFunction::Dgp1 => vec![z[0] * z[1].sin() + z[2] * z[3]],
            KnownFunction::Dgp2 => vec![3.0 * z[0] + 4.0 * z[1] - 2.0 * z[2] + z[3]],
            KnownFunction::Linear { intercept, coefficients } => intercept
                .iter()
                .zip(coefficients)
                .map(|(b, c)| b + crate::numerics::dot(c, z))
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let KnownFunction::Linear { intercept, coefficients } = self {
            let d = self.input_dim();
            if intercept.is_empty() || intercept.len() != coefficients.len() || d == 0 {
                return Err(Error::ShapeMismatch("linear function needs one coefficient row per output".into()));
            }
            if coefficients.iter().any(|c| c.len() != d) {
                return Err(Error::ShapeMismatch("ragged linear coefficient rows".into()));
            }
        }
        Ok(())
    }
}

/// Spline series predictor: `intercepts[s] + coefficients[s] · basis(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplinePayload {
    pub spec: SplineSpec,
    pub input_dim: usize,
    pub basis_cap: usize,
    pub intercepts: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "payload", rename_all = "snake_case")]
pub enum Predictor {
    Dnn(MlpNetwork),
    TensorSpline(SplinePayload),
    AdditiveSpline(SplinePayload),
    Linear(KnownFunction),
    Oracle(KnownFunction),
}

/// A fitted map `R^d → R^q`, optionally truncated to `[−C, C]` by zeroing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstStageModel {
    #[serde(flatten)]
    predictor: Predictor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truncation: Option<f64>,
}

impl FirstStageModel {
    pub fn new(predictor: Predictor) -> Result<Self> {
        match &predictor {
            Predictor::Linear(f) | Predictor::Oracle(f) => f.validate()?,
            Predictor::TensorSpline(s) | Predictor::AdditiveSpline(s) => {
                s.spec.validate()?;
                let p = s.spec.design_len(s.input_dim);
                if s.intercepts.len() != s.coefficients.len() || s.coefficients.iter().any(|c| c.len() != p) {
                    return Err(Error::ShapeMismatch("spline coefficients do not match the basis".into()));
                }
            }
            Predictor::Dnn(_) => {}
        }
        Ok(Self { predictor, truncation: None })
    }

    pub fn oracle(f: KnownFunction) -> Result<Self> {
        Self::new(Predictor::Oracle(f))
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    pub fn truncation(&self) -> Option<f64> {
        self.truncation
    }

    pub fn family(&self) -> &'static str {
        match self.predictor {
            Predictor::Dnn(_) => "dnn",
            Predictor::TensorSpline(_) => "tensor_spline",
            Predictor::AdditiveSpline(_) => "additive_spline",
            Predictor::Linear(_) => "linear",
            Predictor::Oracle(_) => "oracle",
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.predictor {
            Predictor::Dnn(net) => net.input_dim(),
            Predictor::TensorSpline(s) | Predictor::AdditiveSpline(s) => s.input_dim,
            Predictor::Linear(f) | Predictor::Oracle(f) => f.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.predictor {
            Predictor::Dnn(net) => net.output_dim(),
            Predictor::TensorSpline(s) | Predictor::AdditiveSpline(s) => s.intercepts.len(),
            Predictor::Linear(f) | Predictor::Oracle(f) => f.output_dim(),
        }
    }

    /// Prediction at one instrument vector.
    pub fn predict_row(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} instruments, got {}",
                self.input_dim(),
                z.len()
            )));
        }
        let mut out = match &self.predictor {
            Predictor::Dnn(net) => net.forward(z)?,
            Predictor::TensorSpline(s) | Predictor::AdditiveSpline(s) => {
                let b = s.spec.basis(z, s.basis_cap)?;
                s.intercepts
                    .iter()
                    .zip(&s.coefficients)
                    .map(|(b0, c)| b0 + crate::numerics::dot(c, &b))
                    .collect()
            }
            Predictor::Linear(f) | Predictor::Oracle(f) => f.eval(z),
        };
        if let Some(c) = self.truncation {
            for v in out.iter_mut() {
                if v.abs() > c {
                    *v = 0.0;
                }
            }
        }
        Ok(out)
    }
}

/// `f̂(Z_i)` for every row of `z`.
pub fn predict(model: &FirstStageModel, z: &Matrix) -> Result<Matrix> {
    if z.cols() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} instruments, got {}",
            model.input_dim(),
            z.cols()
        )));
    }
    let q = model.output_dim();
    let mut out = Matrix::zeros(z.rows(), q);
    for i in 0..z.rows() {
        let row = model.predict_row(z.row(i))?;
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

/// Replaces each output `f̂_s` by `f̂_s · 1{|f̂_s| ≤ c}`.
pub fn truncate_model(model: &FirstStageModel, c: f64) -> Result<FirstStageModel> {
    if !(c > 0.0) {
        return Err(Error::Domain(format!("truncation level must be positive, got {c}")));
    }
    let mut out = model.clone();
    out.truncation = Some(model.truncation.map_or(c, |old| old.min(c)));
    Ok(out)
}

/// `c · ln n`.
pub fn default_truncation(n: usize, c: f64) -> f64 {
    c * (n as f64).ln()
}

fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    (0..m.cols())
        .map(|j| {
            let c = m.col(j);
            let mean = c.iter().sum::<f64>() / n;
            let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            (mean, if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 })
        })
        .unzip()
}

fn standardize(m: &Matrix, mean: &[f64], scale: &[f64]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| (m[(i, j)] - mean[j]) / scale[j])
}

const DEAD_START_RETRIES: u64 = 4;
const STALL_RATIO: f64 = 0.95;

/// One network with `q` outputs fitted to `X` on `Z`.
pub fn fit_dnn(data: &Dataset, depth: usize, width: usize, cfg: &TrainConfig) -> Result<FirstStageModel> {
    fit_dnn_with_report(data, depth, width, cfg).map(|(m, _)| m)
}

/// [`fit_dnn`] plus the training report.
///
/// Training runs on standardized `Z` and `X`; the scalings are folded back
/// into the first and last layers so the returned network acts on raw data.
pub fn fit_dnn_with_report(
    data: &Dataset,
    depth: usize,
    width: usize,
    cfg: &TrainConfig,
) -> Result<(FirstStageModel, TrainReport)> {
    data.validate()?;
    let (z_mean, z_scale) = column_moments(&data.z);
    let (x_mean, x_scale) = column_moments(&data.x);
    let zs = standardize(&data.z, &z_mean, &z_scale);
    let xs = standardize(&data.x, &x_mean, &x_scale);
    // a network with dead ReLU layers barely moves off its initial test loss;
    // redraw it from the next stream a few times
    let mut attempt = 0;
    let (net, report) = loop {
        let mut rng = RngStream::new(cfg.seed, 2 + attempt);
        let init = MlpNetwork::init(data.d(), data.q(), depth, width, &mut rng)?;
        let (net, report) = mlp::train(&init, &xs, &zs, cfg)?;
        attempt += 1;
        let stalled = report.best_test_loss > STALL_RATIO * report.initial_test_loss;
        if !stalled || cfg.max_epochs == 0 || attempt >= DEAD_START_RETRIES {
            break (net, report);
        }
    };
    let net = net.fold_affine(&z_mean, &z_scale, &x_mean, &x_scale)?;
    Ok((FirstStageModel::new(Predictor::Dnn(net))?, report))
}

/// Per-output OLS of `X` on `(1, Z)`.
pub fn fit_linear(data: &Dataset) -> Result<FirstStageModel> {
    data.validate()?;
    let (n, d, q) = (data.n(), data.d(), data.q());
    let design = Matrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { data.z[(i, j - 1)] });
    let xt = design.transpose();
    let gram = xt.matmul(&design)?;
    let cross = xt.matmul(&data.x)?;
    let coef = solve_linear(&gram, &cross).map_err(|e| match e {
        Error::SingularMatrix(_) => Error::SingularMatrix("instruments with an intercept are collinear".into()),
        other => other,
    })?;
    let intercept = (0..q).map(|s| coef[(0, s)]).collect();
    let coefficients = (0..q).map(|s| (1..=d).map(|j| coef[(j, s)]).collect()).collect();
    FirstStageModel::new(Predictor::Linear(KnownFunction::Linear { intercept, coefficients }))
}

/// Spline series lasso, one cross-validated fit per output column.
pub fn fit_spline_lasso(
    data: &Dataset,
    spec: &SplineSpec,
    basis_cap: usize,
    cv: &CvConfig,
) -> Result<FirstStageModel> {
    data.validate()?;
    spec.validate()?;
    let (n, d) = (data.n(), data.d());
    let p = spec.design_len(d);
    if spec.interaction == Interaction::Tensor && p > basis_cap {
        return Err(Error::BasisTooLarge { size: p, cap: basis_cap });
    }
    let mut cols = vec![Vec::with_capacity(n); p];
    for i in 0..n {
        let b = spec.basis(data.z.row(i), basis_cap)?;
        for (c, v) in cols.iter_mut().zip(b) {
            c.push(v);
        }
    }
    let mut intercepts = Vec::with_capacity(data.q());
    let mut coefficients = Vec::with_capacity(data.q());
    let mut lambdas = Vec::with_capacity(data.q());
    for s in 0..data.q() {
        let (fit, _) = cv_lasso(&cols, &data.x.col(s), cv)?;
        intercepts.push(fit.intercept);
        coefficients.push(fit.coefficients);
        lambdas.push(fit.lambda);
    }
    let payload = SplinePayload { spec: spec.clone(), input_dim: d, basis_cap, intercepts, coefficients, lambdas };
    let predictor = match spec.interaction {
        Interaction::Tensor => Predictor::TensorSpline(payload),
        Interaction::Additive => Predictor::AdditiveSpline(payload),
    };
    FirstStageModel::new(predictor)
}

/// Configured first-stage family, ready to fit on a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FirstStageMethod {
    Dnn {
        depth: usize,
        width: usize,
        #[serde(default)]
        train: TrainConfig,
    },
    Spline {
        interaction: Interaction,
        knots: usize,
        /// Knot range; the sample range of `Z` when absent.
        #[serde(default)]
        domain: Option<(f64, f64)>,
        #[serde(default)]
        cv: CvConfig,
    },
    Linear,
    Oracle { function: KnownFunction },
}

impl FirstStageMethod {
    pub fn dnn(depth: usize, width: usize) -> Self {
        FirstStageMethod::Dnn { depth, width, train: TrainConfig::default() }
    }

    /// Tensor spline lasso with `knots` knots on `[lo, hi]`.
    pub fn tensor_spline(knots: usize, domain: (f64, f64)) -> Self {
        FirstStageMethod::Spline {
            interaction: Interaction::Tensor,
            knots,
            domain: Some(domain),
            cv: CvConfig::default(),
        }
    }

    pub fn additive_spline(knots: usize, domain: (f64, f64)) -> Self {
        FirstStageMethod::Spline {
            interaction: Interaction::Additive,
            knots,
            domain: Some(domain),
            cv: CvConfig::default(),
        }
    }

    /// Fits on `data`; `seed` drives any randomness (network init, batching).
    pub fn fit(&self, data: &Dataset, seed: u64) -> Result<FirstStageModel> {
        match self {
            FirstStageMethod::Dnn { depth, width, train } => fit_dnn(data, *depth, *width, &train.with_seed(seed)),
            FirstStageMethod::Spline { interaction, knots, domain, cv } => {
                let domain = match domain {
                    Some(dom) => *dom,
                    None => sample_range(&data.z),
                };
                let spec = SplineSpec::equally_spaced(*knots, domain, *interaction)?;
                fit_spline_lasso(data, &spec, DEFAULT_BASIS_CAP, cv)
            }
            FirstStageMethod::Linear => fit_linear(data),
            FirstStageMethod::Oracle { function } => {
                if function.input_dim() != data.d() || function.output_dim() != data.q() {
                    return Err(Error::ShapeMismatch("oracle function does not match the data dimensions".into()));
                }
                FirstStageModel::oracle(function.clone())
            }
        }
    }
}

fn sample_range(z: &Matrix) -> (f64, f64) {
    let lo = z.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}
