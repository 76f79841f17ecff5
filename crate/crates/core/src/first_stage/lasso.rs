//! Lasso by cyclic coordinate descent, with warm-started paths and K-fold
//! cross-validation over a log-spaced penalty grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    /// Coefficients on the original design columns.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub fit_intercept: bool,
    pub lambda: f64,
    /// Coordinate sweeps performed.
    pub iterations: usize,
    /// Max absolute subgradient-condition residual at the returned point.
    pub kkt_violation: f64,
    pub converged: bool,
}

/// Centered (and column-scaled) design stored column-major.
///
/// Column `j` holds `(x_j − mean_j) / scale_j`; constant columns get scale 0
/// and are never updated.
pub(crate) struct ColumnDesign {
    pub cols: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub n: usize,
}

impl ColumnDesign {
    pub fn from_columns(mut cols: Vec<Vec<f64>>, n: usize) -> Self {
        let mut mean = Vec::with_capacity(cols.len());
        let mut scale = Vec::with_capacity(cols.len());
        for c in cols.iter_mut() {
            let m = c.iter().sum::<f64>() / n as f64;
            let mut ss = 0.0;
            for v in c.iter_mut() {
                *v -= m;
                ss += *v * *v;
            }
            let s = (ss / n as f64).sqrt();
            // relative threshold: a column constant up to rounding is constant
            let s = if s > 1e-12 * (1.0 + m.abs()) { s } else { 0.0 };
            if s > 0.0 {
                c.iter_mut().for_each(|v| *v /= s);
            } else {
                c.iter_mut().for_each(|v| *v = 0.0);
            }
            mean.push(m);
            scale.push(s);
        }
        Self { cols, mean, scale, n }
    }

    pub fn from_matrix(design: &Matrix) -> Self {
        let cols = (0..design.cols()).map(|j| design.col(j)).collect();
        Self::from_columns(cols, design.rows())
    }

    pub fn p(&self) -> usize {
        self.cols.len()
    }
}

const ACTIVE_PASSES: usize = 50;

/// Columns above this count use residual updates instead of a Gram matrix.
const GRAM_MAX_COLS: usize = 3000;

/// Largest active set solved exactly when no Gram matrix is kept.
const RESIDUAL_POLISH_MAX: usize = 400;

enum GradientState {
    /// Residual vector; gradients are recomputed in O(n).
    Residual(Vec<f64>),
    /// `G = X_sᵀX_s/n` (row-major), `c = X_sᵀy_c/n` and the maintained
    /// gradient `X_sᵀr/n = c − Gγ`.
    Gram { gram: Vec<f64>, corr: Vec<f64>, grad: Vec<f64> },
}

/// Coordinate-descent state on a [`ColumnDesign`] for a fixed centered response.
///
/// Minimizes `(1/2n)‖y_c − X_s γ‖² + Σ_j w_j |γ_j|` where `X_s` is the scaled
/// design and `w_j = λ · penalty_scale_j`.
pub(crate) struct CoordinateDescent<'a> {
    design: &'a ColumnDesign,
    penalty_scale: Vec<f64>,
    pub gamma: Vec<f64>,
    state: GradientState,
    pub iterations: usize,
    /// Penalty of the previous solve, for strong-rule screening.
    last_lambda: Option<f64>,
}

impl<'a> CoordinateDescent<'a> {
    pub fn new(design: &'a ColumnDesign, y_centered: Vec<f64>, penalty_scale: Vec<f64>) -> Self {
        let p = design.p();
        let n = design.n as f64;
        let state = if p <= GRAM_MAX_COLS && p <= design.n {
            let mut gram = vec![0.0; p * p];
            for j in 0..p {
                for k in j..p {
                    let v = crate::numerics::dot(&design.cols[j], &design.cols[k]) / n;
                    gram[j * p + k] = v;
                    gram[k * p + j] = v;
                }
            }
            let corr: Vec<f64> = design.cols.iter().map(|c| crate::numerics::dot(c, &y_centered) / n).collect();
            GradientState::Gram { gram, grad: corr.clone(), corr }
        } else {
            GradientState::Residual(y_centered)
        };
        Self { design, penalty_scale, gamma: vec![0.0; p], state, iterations: 0, last_lambda: None }
    }

    fn grad(&self, j: usize) -> f64 {
        match &self.state {
            GradientState::Residual(r) => crate::numerics::dot(&self.design.cols[j], r) / self.design.n as f64,
            GradientState::Gram { grad, .. } => grad[j],
        }
    }

    fn active(&self, j: usize) -> bool {
        self.design.scale[j] > 0.0
    }

    /// Largest λ with a nonzero solution.
    pub fn lambda_max(&self) -> f64 {
        (0..self.design.p())
            .filter(|&j| self.active(j) && self.penalty_scale[j] > 0.0)
            .map(|j| self.grad(j).abs() / self.penalty_scale[j])
            .fold(0.0, f64::max)
    }

    fn update(&mut self, j: usize, lambda: f64) -> f64 {
        if !self.active(j) {
            return 0.0;
        }
        let old = self.gamma[j];
        // unit mean-square columns: the partial-residual correlation is grad + old
        let rho = self.grad(j) + old;
        let new = soft_threshold(rho, lambda * self.penalty_scale[j]);
        let delta = new - old;
        if delta != 0.0 {
            self.gamma[j] = new;
            match &mut self.state {
                GradientState::Residual(r) => {
                    for (ri, x) in r.iter_mut().zip(&self.design.cols[j]) {
                        *ri -= delta * x;
                    }
                }
                GradientState::Gram { gram, grad, .. } => {
                    let p = grad.len();
                    for (g, gjk) in grad.iter_mut().zip(&gram[j * p..(j + 1) * p]) {
                        *g -= delta * gjk;
                    }
                }
            }
        }
        delta.abs()
    }

    fn violation(&self, j: usize, lambda: f64) -> f64 {
        let g = self.grad(j);
        let ps = self.penalty_scale[j];
        let w = lambda * ps;
        let v = if self.gamma[j] != 0.0 {
            (g - w * self.gamma[j].signum()).abs()
        } else {
            (g.abs() - w).max(0.0)
        };
        if ps > 0.0 {
            v / ps
        } else {
            v
        }
    }

    /// KKT residual measured on the coordinates the penalty is defined on.
    pub fn kkt(&self, lambda: f64) -> f64 {
        (0..self.design.p())
            .filter(|&j| self.active(j))
            .map(|j| self.violation(j, lambda))
            .fold(0.0, f64::max)
    }

    /// Sweeps at `lambda` until the KKT residual is at most `tol` or
    /// `max_iter` sweeps have been spent. Returns `(kkt, converged)`.
    ///
    /// Sweeps run over a working set screened by the sequential strong rule
    /// and grow it whenever a coordinate outside it violates the conditions.
    pub fn solve(&mut self, lambda: f64, tol: f64, max_iter: usize) -> (f64, bool) {
        let p = self.design.p();
        let start = self.iterations;
        let cut = self.last_lambda.map_or(lambda, |prev| 2.0 * lambda - prev);
        self.last_lambda = Some(lambda);
        let mut working: Vec<usize> = (0..p)
            .filter(|&j| {
                let ps = self.penalty_scale[j];
                self.active(j) && (self.gamma[j] != 0.0 || ps == 0.0 || self.grad(j).abs() >= cut * ps)
            })
            .collect();
        let mut in_working = vec![false; p];
        for &j in &working {
            in_working[j] = true;
        }
        loop {
            for &j in &working {
                self.update(j, lambda);
            }
            self.iterations += 1;
            let local = working.iter().map(|&j| self.violation(j, lambda)).fold(0.0, f64::max);
            if local <= tol {
                let outside: Vec<usize> = (0..p)
                    .filter(|&j| self.active(j) && !in_working[j] && self.violation(j, lambda) > tol)
                    .collect();
                if outside.is_empty() {
                    return (self.kkt(lambda), true);
                }
                for &j in &outside {
                    in_working[j] = true;
                }
                working.extend(outside);
                working.sort_unstable();
                continue;
            }
            if self.iterations - start >= max_iter {
                return (self.kkt(lambda), false);
            }
            if self.settle(lambda) {
                continue;
            }
            // no exact solve available: cycle on the active set until it settles
            let active: Vec<usize> = (0..p).filter(|&j| self.gamma[j] != 0.0).collect();
            for _ in 0..ACTIVE_PASSES {
                let mut max_delta: f64 = 0.0;
                for &j in &active {
                    max_delta = max_delta.max(self.update(j, lambda));
                }
                self.iterations += 1;
                if max_delta < 1e-3 * tol || self.iterations - start >= max_iter {
                    break;
                }
            }
        }
    }

    /// Repeats feature-sign steps until one lands on the exact minimizer of the
    /// current sign pattern. Each partial step zeroes at least one coefficient.
    fn settle(&mut self, lambda: f64) -> bool {
        let p = self.design.p();
        loop {
            let active: Vec<usize> = (0..p).filter(|&j| self.gamma[j] != 0.0).collect();
            match self.polish(lambda, &active) {
                Polish::Full => return true,
                Polish::Partial => {}
                Polish::Unavailable => return false,
            }
        }
    }

    /// Feature-sign step on the active set: moves toward the exact minimizer
    /// for the current sign pattern, stopping where the first coefficient
    /// reaches zero. The objective decreases along that segment.
    fn polish(&mut self, lambda: f64, active: &[usize]) -> Polish {
        let k = active.len();
        if k == 0 || (matches!(self.state, GradientState::Residual(_)) && k > RESIDUAL_POLISH_MAX) {
            return Polish::Unavailable;
        }
        let n = self.design.n as f64;
        let sub_gram = match &self.state {
            GradientState::Gram { gram, .. } => {
                let p = self.design.p();
                Matrix::from_fn(k, k, |r, c| gram[active[r] * p + active[c]])
            }
            GradientState::Residual(_) => {
                let mut m = Matrix::zeros(k, k);
                for r in 0..k {
                    for c in r..k {
                        let v = crate::numerics::dot(&self.design.cols[active[r]], &self.design.cols[active[c]]) / n;
                        m[(r, c)] = v;
                        m[(c, r)] = v;
                    }
                }
                m
            }
        };
        // X_Aᵀy/n = ∇_A + G_AA γ_A since γ vanishes off the active set
        let b = Matrix::from_fn(k, 1, |r, _| {
            let j = active[r];
            let g_gamma: f64 = (0..k).map(|c| sub_gram[(r, c)] * self.gamma[active[c]]).sum();
            self.grad(j) + g_gamma - lambda * self.penalty_scale[j] * self.gamma[j].signum()
        });
        let Ok(sol) = crate::numerics::solve_linear(&sub_gram, &b) else {
            return Polish::Unavailable;
        };
        let sol = sol.into_vec();
        if sol.iter().any(|v| !v.is_finite()) {
            return Polish::Unavailable;
        }
        let mut t = 1.0;
        for (v, &j) in sol.iter().zip(active) {
            let g = self.gamma[j];
            if v.signum() != g.signum() || *v == 0.0 {
                t = f64::min(t, g / (g - v));
            }
        }
        let mut deltas = Vec::with_capacity(k);
        for (v, &j) in sol.iter().zip(active) {
            let g = self.gamma[j];
            let mut next = g + t * (v - g);
            if next.signum() != g.signum() || (t < 1.0 && (next.abs() <= 1e-14 * g.abs() || g / (g - v) == t)) {
                next = 0.0;
            }
            deltas.push(next - g);
            self.gamma[j] = next;
        }
        match &mut self.state {
            GradientState::Gram { gram, corr, grad } => {
                let p = corr.len();
                for (j, g) in grad.iter_mut().enumerate() {
                    let row = &gram[j * p..(j + 1) * p];
                    *g = corr[j] - active.iter().map(|&a| row[a] * self.gamma[a]).sum::<f64>();
                }
            }
            GradientState::Residual(r) => {
                for (d, &j) in deltas.iter().zip(active) {
                    if *d != 0.0 {
                        for (ri, x) in r.iter_mut().zip(&self.design.cols[j]) {
                            *ri -= d * x;
                        }
                    }
                }
            }
        }
        if t < 1.0 {
            Polish::Partial
        } else {
            Polish::Full
        }
    }
}

enum Polish {
    Full,
    Partial,
    Unavailable,
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Minimizes `(1/(2n))‖response − design·β − β₀‖² + λ‖β‖₁` with an unpenalized
/// intercept `β₀`.
///
/// Columns are centered and scaled internally for conditioning; the penalty
/// still applies to the coefficients of the columns as given. A fit that
/// exhausts `max_iter` sweeps is returned with `converged = false`.
pub fn lasso_coordinate_descent(
    design: &Matrix,
    response: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LassoFit> {
    if design.rows() != response.len() {
        return Err(Error::ShapeMismatch(format!(
            "design has {} rows, response has {}",
            design.rows(),
            response.len()
        )));
    }
    if design.rows() == 0 {
        return Err(Error::Domain("lasso on an empty sample".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    let cd_design = ColumnDesign::from_matrix(design);
    let (y_mean, yc) = center(response);
    // penalty on β_j = γ_j / scale_j  ⇒  weight λ / scale_j on γ_j
    let penalty_scale = cd_design.scale.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect();
    let mut cd = CoordinateDescent::new(&cd_design, yc, penalty_scale);
    let (kkt, converged) = cd.solve(lambda, tol, max_iter);
    let (coefficients, intercept) = back_transform(&cd_design, &cd.gamma, y_mean);
    Ok(LassoFit {
        coefficients,
        intercept,
        fit_intercept: true,
        lambda,
        iterations: cd.iterations,
        kkt_violation: kkt,
        converged,
    })
}

pub(crate) fn center(v: &[f64]) -> (f64, Vec<f64>) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, v.iter().map(|x| x - m).collect())
}

pub(crate) fn back_transform(design: &ColumnDesign, gamma: &[f64], y_mean: f64) -> (Vec<f64>, f64) {
    let beta: Vec<f64> = gamma
        .iter()
        .zip(&design.scale)
        .map(|(g, s)| if *s > 0.0 { g / s } else { 0.0 })
        .collect();
    let intercept = y_mean - beta.iter().zip(&design.mean).map(|(b, m)| b * m).sum::<f64>();
    (beta, intercept)
}

/// `count` penalties log-spaced from `lambda_max` down to `ratio · lambda_max`.
pub fn lambda_grid(lambda_max: f64, count: usize, ratio: f64) -> Vec<f64> {
    if count <= 1 || lambda_max <= 0.0 {
        return vec![lambda_max.max(0.0)];
    }
    let lo = ratio.ln();
    (0..count)
        .map(|k| lambda_max * (lo * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Penalty selection by K-fold cross-validation on a log-spaced grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub grid_len: usize,
    /// Smallest grid penalty as a fraction of `lambda_max`.
    pub min_ratio: f64,
    /// The same when columns outnumber training-fold rows.
    pub min_ratio_wide: f64,
    /// KKT tolerance relative to the response standard deviation.
    pub tol: f64,
    /// Sweep budget per grid point.
    pub max_iter: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, grid_len: 50, min_ratio: 1e-4, min_ratio_wide: 1e-2, tol: 1e-6, max_iter: 100_000 }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Domain(format!("need at least 2 folds, got {}", self.folds)));
        }
        let ratio_ok = |r: f64| r > 0.0 && r < 1.0;
        if self.grid_len == 0 || !ratio_ok(self.min_ratio) || !ratio_ok(self.min_ratio_wide) {
            return Err(Error::Domain("lambda grid needs grid_len ≥ 1 and min_ratio in (0, 1)".into()));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Domain("tolerance and iteration budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPath {
    pub lambdas: Vec<f64>,
    pub cv_mse: Vec<f64>,
    pub best: usize,
}

/// Lasso on standardized columns (penalty on standardized coefficients) with
/// λ picked by K-fold cross-validation; row `i` belongs to fold `i % K`.
///
/// `cols` are the raw design columns. The returned coefficients apply to them.
pub fn cv_lasso(cols: &[Vec<f64>], y: &[f64], cfg: &CvConfig) -> Result<(LassoFit, CvPath)> {
    cfg.validate()?;
    let n = y.len();
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::ShapeMismatch("design columns and response differ in length".into()));
    }
    if n < 2 * cfg.folds {
        return Err(Error::Domain(format!("{n} rows are too few for {}-fold cross-validation", cfg.folds)));
    }
    let p = cols.len();
    let full = ColumnDesign::from_columns(cols.to_vec(), n);
    let (y_mean, yc) = center(y);
    let y_sd = (yc.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let tol = cfg.tol * y_sd.max(f64::MIN_POSITIVE);
    let mut cd = CoordinateDescent::new(&full, yc, vec![1.0; p]);
    let lambda_max = cd.lambda_max();
    if lambda_max == 0.0 {
        let fit = LassoFit {
            coefficients: vec![0.0; p],
            intercept: y_mean,
            fit_intercept: true,
            lambda: 0.0,
            iterations: 0,
            kkt_violation: 0.0,
            converged: true,
        };
        return Ok((fit, CvPath { lambdas: vec![0.0], cv_mse: vec![mean_sq_dev(y)], best: 0 }));
    }
    // wide when the smallest training fold has fewer rows than columns
    let train_rows = n - n.div_ceil(cfg.folds);
    let ratio = if p > train_rows { cfg.min_ratio_wide } else { cfg.min_ratio };
    let grid = lambda_grid(lambda_max, cfg.grid_len, ratio);

    let mut sse = vec![0.0; grid.len()];
    for k in 0..cfg.folds {
        let train: Vec<usize> = (0..n).filter(|i| i % cfg.folds != k).collect();
        let valid: Vec<usize> = (k..n).step_by(cfg.folds).collect();
        let fold_cols: Vec<Vec<f64>> = cols.iter().map(|c| train.iter().map(|&i| c[i]).collect()).collect();
        let fold_design = ColumnDesign::from_columns(fold_cols, train.len());
        let fold_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let (fold_mean, fold_yc) = center(&fold_y);
        let mut fold_cd = CoordinateDescent::new(&fold_design, fold_yc, vec![1.0; p]);
        for (l, &lambda) in grid.iter().enumerate() {
            fold_cd.solve(lambda, tol, cfg.max_iter);
            let (beta, b0) = back_transform(&fold_design, &fold_cd.gamma, fold_mean);
            let nonzero: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
            for &i in &valid {
                let pred = b0 + nonzero.iter().map(|&j| beta[j] * cols[j][i]).sum::<f64>();
                sse[l] += (y[i] - pred).powi(2);
            }
        }
    }
    let cv_mse: Vec<f64> = sse.iter().map(|s| s / n as f64).collect();
    let best = cv_mse
        .iter()
        .enumerate()
        .fold(0, |b, (l, v)| if *v < cv_mse[b] { l } else { b });

    let mut last = (0.0, true);
    for &lambda in &grid[..=best] {
        last = cd.solve(lambda, tol, cfg.max_iter);
    }
    let (kkt, converged) = last;
    if !converged {
        return Err(Error::NonConvergence { iterations: cd.iterations, kkt_violation: kkt });
    }
    let (coefficients, intercept) = back_transform(&full, &cd.gamma, y_mean);
    let fit = LassoFit {
        coefficients,
        intercept,
        fit_intercept: true,
        lambda: grid[best],
        iterations: cd.iterations,
        kkt_violation: kkt,
        converged,
    };
    Ok((fit, CvPath { lambdas: grid, cv_mse, best }))
}

fn mean_sq_dev(y: &[f64]) -> f64 {
    let (_, yc) = center(y);
    yc.iter().map(|v| v * v).sum::<f64>() / y.len() as f64
}
