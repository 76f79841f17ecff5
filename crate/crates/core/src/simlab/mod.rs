//! Monte Carlo laboratory: the two simulation designs, the competing
//! estimators, and a deterministic parallel replication runner.

pub mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::first_stage::{
    default_truncation, predict, Dataset, FirstStageMethod, FirstStageModel, KnownFunction,
};
use crate::inference::{confidence_interval, second_stage, BetaEstimate};
use crate::mlp::TrainConfig;
use crate::numerics::{derive_seed, Matrix, RngStream};
use crate::split_sample::fit_split_with;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpKind {
    /// `f0 = z₁ sin z₂ + z₃ z₄` (no linear or additive signal).
    Dgp1,
    /// `f0 = 3z₁ + 4z₂ − 2z₃ + z₄`.
    Dgp2,
    Custom { function: KnownFunction },
}

impl DgpKind {
    pub fn name(&self) -> &'static str {
        match self {
            DgpKind::Dgp1 => "dgp1",
            DgpKind::Dgp2 => "dgp2",
            DgpKind::Custom { .. } => "custom",
        }
    }

    pub fn function(&self) -> KnownFunction {
        match self {
            DgpKind::Dgp1 => KnownFunction::Dgp1,
            DgpKind::Dgp2 => KnownFunction::Dgp2,
            DgpKind::Custom { function } => function.clone(),
        }
    }
}

/// An instrument appended after the design's own `d` columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtraInstrument {
    /// Independent `U[lo, hi]`: valid but irrelevant.
    Valid,
    /// `ε + N(0, 1)`: correlated with the structural error.
    Endogenous,
}

/// `Z ~ U[lo, hi]^d`, `ε ~ N(0, 1)`, `X = f0(Z) + ε`, `Y = β₀X + scale·ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    #[serde(flatten)]
    pub kind: DgpKind,
    pub n: usize,
    #[serde(default = "default_beta0")]
    pub beta0: f64,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default = "default_z_low")]
    pub z_low: f64,
    #[serde(default = "default_z_high")]
    pub z_high: f64,
    #[serde(default)]
    pub extra_instrument: Option<ExtraInstrument>,
}

fn default_beta0() -> f64 {
    3.0
}

fn default_noise_scale() -> f64 {
    20.0
}

fn default_z_low() -> f64 {
    -3.0
}

fn default_z_high() -> f64 {
    3.0
}

impl DgpSpec {
    pub fn new(kind: DgpKind, n: usize) -> Self {
        Self {
            kind,
            n,
            beta0: default_beta0(),
            noise_scale: default_noise_scale(),
            z_low: default_z_low(),
            z_high: default_z_high(),
            extra_instrument: None,
        }
    }

    pub fn with_extra(mut self, extra: ExtraInstrument) -> Self {
        self.extra_instrument = Some(extra);
        self
    }

    /// Instruments the conditional mean depends on.
    pub fn d(&self) -> usize {
        self.kind.function().input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Domain("sample size must be positive".into()));
        }
        if !(self.z_low < self.z_high) {
            return Err(Error::Domain("instrument range is empty".into()));
        }
        if self.kind.function().output_dim() != 1 || self.d() == 0 {
            return Err(Error::Domain("simulation designs have one endogenous regressor".into()));
        }
        Ok(())
    }
}

/// Population quantities of a generated design.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub f0: KnownFunction,
    pub beta0: f64,
}

impl Truth {
    /// The known conditional mean as a first-stage model on the design's own `d` columns.
    pub fn model(&self) -> FirstStageModel {
        FirstStageModel::oracle(self.f0.clone()).expect("built-in functions are valid")
    }
}

/// Draws one sample. Row-wise order of draws: `Z` (all rows), then `ε`, then any extra instrument.
pub fn gen_dgp(spec: &DgpSpec, rng: &mut RngStream) -> Result<(Dataset, Truth)> {
    spec.validate()?;
    let f0 = spec.kind.function();
    let (n, d) = (spec.n, spec.d());
    let z = Matrix::from_fn(n, d, |_, _| rng.uniform_range(spec.z_low, spec.z_high));
    let eps: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
    let x = Matrix::from_fn(n, 1, |i, _| f0.eval(z.row(i))[0] + eps[i]);
    let y = (0..n).map(|i| spec.beta0 * x[(i, 0)] + spec.noise_scale * eps[i]).collect();
    let z = match spec.extra_instrument {
        None => z,
        Some(extra) => {
            let col: Vec<f64> = match extra {
                ExtraInstrument::Valid => (0..n).map(|_| rng.uniform_range(spec.z_low, spec.z_high)).collect(),
                ExtraInstrument::Endogenous => eps.iter().map(|e| e + rng.standard_normal()).collect(),
            };
            z.hstack(&Matrix::column(&col))?
        }
    };
    Ok((Dataset::new(y, x, z, None)?, Truth { f0, beta0: spec.beta0 }))
}

/// Regression of `Y` on `X` ignoring endogeneity.
pub fn ols_estimator(data: &Dataset) -> Result<BetaEstimate> {
    second_stage(&data.x, &data.x, &data.y)
}

/// Second stage with the true conditional mean as the fitted instrument.
pub fn oracle_estimator(data: &Dataset, f0: &KnownFunction) -> Result<BetaEstimate> {
    let model = FirstStageModel::oracle(f0.clone())?;
    let z = data.z.leading_cols(f0.input_dim());
    second_stage(&predict(&model, &z)?, &data.x, &data.y)
}

/// `sqrt(mean_i (f̂_s(Z_i) − f0_s(Z_i))²)`, averaged over outputs `s`.
pub fn first_stage_rmse(model: &FirstStageModel, f0: &KnownFunction, eval_z: &Matrix) -> Result<f64> {
    let fitted = predict(model, eval_z)?;
    let q = fitted.cols();
    if f0.output_dim() != q {
        return Err(Error::ShapeMismatch("model and truth differ in output dimension".into()));
    }
    let m = eval_z.rows() as f64;
    let mut sq = vec![0.0; q];
    for i in 0..eval_z.rows() {
        let truth = f0.eval(&eval_z.row(i)[..f0.input_dim()]);
        for s in 0..q {
            sq[s] += (fitted[(i, s)] - truth[s]).powi(2);
        }
    }
    Ok(sq.iter().map(|v| (v / m).sqrt()).sum::<f64>() / q as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Dnn,
    Pspline,
    Aspline,
    Lr,
    Ols,
    Oracle,
    /// Cross-fitted network estimator.
    Split,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Dnn => "dnn",
            EstimatorKind::Pspline => "pspline",
            EstimatorKind::Aspline => "aspline",
            EstimatorKind::Lr => "lr",
            EstimatorKind::Ols => "ols",
            EstimatorKind::Oracle => "oracle",
            EstimatorKind::Split => "split",
        }
    }

    fn uses_network(self) -> bool {
        matches!(self, EstimatorKind::Dnn | EstimatorKind::Split)
    }
}

/// Network shape `(L, W)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub depth: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    /// Label recorded with the results (`desk`, `full`, ...).
    pub profile: String,
    pub dgp: DgpKind,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub estimators: Vec<EstimatorKind>,
    pub architectures: Vec<Architecture>,
    pub ci_level: f64,
    pub master_seed: u64,
    pub eval_points: usize,
    pub train: TrainConfig,
    pub tensor_knots: usize,
    pub additive_knots: usize,
    /// `C_n = c · ln n` for the cross-fitted estimator.
    pub truncation_c: f64,
    /// Worker threads; `DEEPIV_THREADS` or all cores when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            profile: "desk".into(),
            dgp: DgpKind::Dgp2,
            sample_sizes: vec![100, 200, 500, 1000, 2000],
            replications: 200,
            estimators: vec![
                EstimatorKind::Dnn,
                EstimatorKind::Pspline,
                EstimatorKind::Aspline,
                EstimatorKind::Lr,
                EstimatorKind::Ols,
                EstimatorKind::Oracle,
            ],
            architectures: vec![Architecture { depth: 3, width: 10 }],
            ci_level: 0.95,
            master_seed: 20240101,
            eval_points: 10_000,
            train: TrainConfig::default(),
            tensor_knots: 5,
            additive_knots: 20,
            truncation_c: 3.0,
            threads: None,
        }
    }
}

impl McConfig {
    /// Full-scale grid: 1000 replications, 20 tensor knots, nine architectures.
    pub fn full_scale(dgp: DgpKind) -> Self {
        let architectures = [3, 5, 10]
            .iter()
            .flat_map(|&depth| [5, 10, 20].iter().map(move |&width| Architecture { depth, width }))
            .collect();
        Self {
            profile: "full".into(),
            dgp,
            replications: 1000,
            tensor_knots: 20,
            architectures,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Domain("replications must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("sample sizes must be nonempty and strictly increasing".into()));
        }
        if self.sample_sizes[0] < 4 {
            return Err(Error::Domain("sample sizes must be at least 4".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Domain("estimator list is empty".into()));
        }
        if self.estimators.iter().any(|e| e.uses_network()) && self.architectures.is_empty() {
            return Err(Error::Domain("network estimators need at least one architecture".into()));
        }
        if self.architectures.iter().any(|a| a.depth == 0 || a.width == 0) {
            return Err(Error::Domain("network depth and width must be positive".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Domain(format!("ci_level must lie in (0, 1), got {}", self.ci_level)));
        }
        if self.eval_points == 0 {
            return Err(Error::Domain("eval_points must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Domain("threads must be positive".into()));
        }
        if !(self.truncation_c > 0.0) {
            return Err(Error::Domain("truncation_c must be positive".into()));
        }
        self.train.validate()?;
        DgpSpec::new(self.dgp.clone(), self.sample_sizes[0]).validate()
    }

    /// One cell per estimator, and per architecture for the network estimators.
    pub fn cells(&self) -> Vec<(EstimatorKind, Option<Architecture>)> {
        let mut out = Vec::new();
        for &e in &self.estimators {
            if e.uses_network() {
                out.extend(self.architectures.iter().map(|&a| (e, Some(a))));
            } else {
                out.push((e, None));
            }
        }
        out
    }

    fn method(&self, kind: EstimatorKind, arch: Option<Architecture>) -> Option<FirstStageMethod> {
        let dom = (-3.0, 3.0);
        match kind {
            EstimatorKind::Dnn | EstimatorKind::Split => {
                let a = arch.expect("network cells carry an architecture");
                Some(FirstStageMethod::Dnn { depth: a.depth, width: a.width, train: self.train.clone() })
            }
            EstimatorKind::Pspline => Some(FirstStageMethod::tensor_spline(self.tensor_knots, dom)),
            EstimatorKind::Aspline => Some(FirstStageMethod::additive_spline(self.additive_knots, dom)),
            EstimatorKind::Lr => Some(FirstStageMethod::Linear),
            EstimatorKind::Ols | EstimatorKind::Oracle => None,
        }
    }
}

/// Outcome of one estimator on one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub beta: f64,
    pub covered: bool,
    pub fs_rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dgp: String,
    pub estimator: EstimatorKind,
    pub n: usize,
    pub architecture: Option<Architecture>,
    /// Successful replications.
    pub rep_count: usize,
    pub beta_mean: f64,
    pub beta_sd: f64,
    pub beta_rmse: f64,
    pub fs_rmse: Option<f64>,
    pub fs_rmse_sd: Option<f64>,
    pub coverage: f64,
    pub coverage_se: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub profile: String,
    pub cells: Vec<CellResult>,
}

impl McResult {
    pub fn cell(&self, estimator: EstimatorKind, n: usize, arch: Option<Architecture>) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.estimator == estimator && c.n == n && c.architecture == arch)
    }
}

/// Worker count: explicit request, else `DEEPIV_THREADS`, else all cores.
pub fn worker_count(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var("DEEPIV_THREADS").ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Evaluates `work(0..count)` on `threads` workers; results come back in index order.
pub fn parallel_map<T, F>(count: usize, threads: Option<usize>, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(threads))
        .build()
        .expect("thread pool");
    pool.install(|| (0..count).into_par_iter().map(&work).collect())
}

/// Generator for replication `rep` at sample size `n`.
pub fn replication_rng(master_seed: u64, n: usize, rep: usize) -> RngStream {
    RngStream::new(derive_seed(&[master_seed, n as u64]), rep as u64)
}

/// Runs every cell of `cfg` on replication `rep` of sample size `n`.
pub fn run_replication(
    cfg: &McConfig,
    n: usize,
    rep: usize,
) -> Result<Vec<Result<RepOutcome>>> {
    let mut rng = replication_rng(cfg.master_seed, n, rep);
    let spec = DgpSpec::new(cfg.dgp.clone(), n);
    let (data, truth) = gen_dgp(&spec, &mut rng)?;
    let eval_z = Matrix::from_fn(cfg.eval_points, spec.d(), |_, _| rng.uniform_range(spec.z_low, spec.z_high));
    let alpha = 1.0 - cfg.ci_level;
    let outcomes = cfg
        .cells()
        .into_iter()
        .enumerate()
        .map(|(k, (kind, arch))| {
            let seed = derive_seed(&[cfg.master_seed, n as u64, rep as u64, k as u64]);
            let (est, model) = match kind {
                EstimatorKind::Ols => (ols_estimator(&data)?, None),
                EstimatorKind::Oracle => (oracle_estimator(&data, &truth.f0)?, Some(truth.model())),
                EstimatorKind::Split => {
                    let method = cfg.method(kind, arch).expect("network method");
                    let c_n = default_truncation(n, cfg.truncation_c);
                    let (est, _, _) = fit_split_with(&data, seed, c_n, |d, s| method.fit(d, s))?;
                    (est.combined, None)
                }
                _ => {
                    let method = cfg.method(kind, arch).expect("first-stage method");
                    let (est, model) = crate::inference::estimate(&data, &method, seed)?;
                    (est, Some(model))
                }
            };
            outcome(&est, model.as_ref(), &truth, &eval_z, alpha)
        })
        .collect();
    Ok(outcomes)
}

fn outcome(
    est: &BetaEstimate,
    model: Option<&FirstStageModel>,
    truth: &Truth,
    eval_z: &Matrix,
    alpha: f64,
) -> Result<RepOutcome> {
    let beta = est.beta[0];
    if !beta.is_finite() || !est.se[0].is_finite() {
        return Err(Error::SingularMatrix("non-finite estimate".into()));
    }
    let ci = confidence_interval(est, alpha)?;
    let fs_rmse = model.map(|m| first_stage_rmse(m, &truth.f0, eval_z)).transpose()?;
    Ok(RepOutcome { beta, covered: ci.covers(0, truth.beta0), fs_rmse })
}

/// Full campaign. Deterministic given `master_seed`, whatever the worker count.
pub fn run_monte_carlo(cfg: &McConfig) -> Result<McResult> {
    cfg.validate()?;
    let units: Vec<(usize, usize)> = cfg
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..cfg.replications).map(move |r| (n, r)))
        .collect();
    let raw = parallel_map(units.len(), cfg.threads, |u| {
        let (n, r) = units[u];
        run_replication(cfg, n, r)
    });
    let cells = cfg.cells();
    let beta0 = DgpSpec::new(cfg.dgp.clone(), 1).beta0;
    let mut results = Vec::new();
    for (si, &n) in cfg.sample_sizes.iter().enumerate() {
        let reps = &raw[si * cfg.replications..(si + 1) * cfg.replications];
        for (k, &(estimator, architecture)) in cells.iter().enumerate() {
            let mut ok = Vec::new();
            let mut failures = 0;
            for rep in reps {
                match rep {
                    Err(e) => return Err(Error::Domain(format!("data generation failed: {e}"))),
                    Ok(outcomes) => match &outcomes[k] {
                        Ok(o) => ok.push(o.clone()),
                        Err(_) => failures += 1,
                    },
                }
            }
            results.push(aggregate(cfg.dgp.name(), estimator, n, architecture, &ok, failures, beta0));
        }
    }
    Ok(McResult { profile: cfg.profile.clone(), cells: results })
}

/// Cell summary from the successful replications, folded in replication order.
pub fn aggregate(
    dgp: &str,
    estimator: EstimatorKind,
    n: usize,
    architecture: Option<Architecture>,
    outcomes: &[RepOutcome],
    failures: usize,
    beta0: f64,
) -> CellResult {
    let m = outcomes.len() as f64;
    let betas: Vec<f64> = outcomes.iter().map(|o| o.beta).collect();
    let beta_mean = betas.iter().sum::<f64>() / m;
    let beta_sd = if outcomes.len() > 1 {
        (betas.iter().map(|b| (b - beta_mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    let beta_rmse = (betas.iter().map(|b| (b - beta0).powi(2)).sum::<f64>() / m).sqrt();
    let coverage = outcomes.iter().filter(|o| o.covered).count() as f64 / m;
    let fs: Vec<f64> = outcomes.iter().filter_map(|o| o.fs_rmse).collect();
    let (fs_rmse, fs_rmse_sd) = if fs.is_empty() {
        (None, None)
    } else {
        let k = fs.len() as f64;
        let mean = fs.iter().sum::<f64>() / k;
        let sd = if fs.len() > 1 {
            (fs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            f64::NAN
        };
        (Some(mean), Some(sd))
    };
    CellResult {
        dgp: dgp.to_string(),
        estimator,
        n,
        architecture,
        rep_count: outcomes.len(),
        beta_mean,
        beta_sd,
        beta_rmse,
        fs_rmse,
        fs_rmse_sd,
        coverage,
        coverage_se: (coverage * (1.0 - coverage) / m).sqrt(),
        failures,
    }
}
