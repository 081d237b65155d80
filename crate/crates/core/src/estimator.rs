//! Penalized profiled estimating equation: the profiled score, the composite
//! gradient iteration with soft-thresholding and L1-ball projection, and
//! K-fold cross-validation of the penalty.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Coefficient, Dataset, ModifiedResponse};
use crate::error::{Error, Result};
use crate::kernel::{bandwidth, nw_predict, KernelConfig, LooKernel};
use crate::rng::{stream, Domain};

/// How the L1 penalty enters the proximal step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdConvention {
    /// Threshold `lambda / gamma`, the exact minimizer of the surrogate.
    Scaled,
    /// Threshold `lambda` regardless of the step size.
    #[default]
    Raw,
}

/// Units of the initial step-size parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepScale {
    /// `gamma0` is used as given.
    Absolute,
    /// `gamma0` multiplies the average score curvature
    /// `n^{-1} sum_i G1_i^2 ||x_{i,-1}||^2 / (p - 1)` at the starting value.
    #[default]
    Curvature,
}

/// Where the cross-validation error is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    /// Training-fold fit, held-out squared error.
    #[default]
    OutOfFold,
    /// Full-sample fit scored by its own leave-one-out residuals.
    InSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub lambda: f64,
    /// L1 budget for `beta_{-1}`.
    pub rho: f64,
    pub gamma0: f64,
    pub step_scale: StepScale,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub cv_folds: usize,
    pub cv_mode: CvMode,
    pub seed: u64,
    pub threshold: ThresholdConvention,
    pub bandwidth_floor: f64,
    /// Ridge penalty of the starting value, as a multiple of `n`.
    pub init_ridge: f64,
    /// Soft-threshold applied to the rescaled ridge start.
    pub init_threshold: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            rho: 10.0,
            gamma0: 0.5,
            step_scale: StepScale::Curvature,
            max_iter: 200,
            rel_tol: 0.01,
            cv_folds: 5,
            cv_mode: CvMode::OutOfFold,
            seed: 2024,
            threshold: ThresholdConvention::Raw,
            bandwidth_floor: KernelConfig::default().bandwidth_floor,
            init_ridge: 1.0,
            init_threshold: 0.2,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and nonnegative");
        }
        if !(self.rho > 0.0) {
            return bad("rho must be positive");
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return bad("gamma0 must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if !(self.rel_tol > 0.0) {
            return bad("rel_tol must be positive");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2");
        }
        if !(self.bandwidth_floor > 0.0) {
            return bad("bandwidth floor must be positive");
        }
        if !(self.init_ridge > 0.0) || !(self.init_threshold >= 0.0) {
            return bad("initial-value ridge must be positive and threshold nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Coefficient,
    pub lambda_used: f64,
    pub iterations: usize,
    /// Leave-one-out mean squared residual at each iterate.
    pub model_err_trace: Vec<f64>,
    pub converged: bool,
}

/// Componentwise `sign(v) max(|v| - t, 0)`.
pub fn soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    v.map(|x| x.signum() * (x.abs() - t).max(0.0))
}

/// Euclidean projection onto `{w : ||w||_1 <= rho}` by sorting magnitudes
/// and soft-thresholding at the level that exhausts the budget.
pub fn project_l1(v: &DVector<f64>, rho: f64) -> DVector<f64> {
    let delta = l1_projection_threshold(v, rho);
    if delta == 0.0 {
        v.clone()
    } else {
        soft_threshold(v, delta)
    }
}

/// The threshold `delta >= 0` used by [`project_l1`]; zero inside the ball.
pub fn l1_projection_threshold(v: &DVector<f64>, rho: f64) -> f64 {
    if v.lp_norm(1) <= rho {
        return 0.0;
    }
    let mut b: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    b.sort_by(|a, c| c.total_cmp(a));
    let mut cum = 0.0;
    let mut delta = 0.0;
    for (j, bj) in b.iter().enumerate() {
        cum += bj;
        let cand = (cum - rho) / (j + 1) as f64;
        if bj - cand > 0.0 {
            delta = cand;
        }
    }
    delta.max(0.0)
}

/// One composite-gradient update of `beta_{-1}`; the first coordinate stays 1.
pub fn proximal_step(
    beta: &Coefficient,
    s: &DVector<f64>,
    gamma: f64,
    lambda: f64,
    rho: f64,
    convention: ThresholdConvention,
) -> Coefficient {
    let z = beta.rest() - s / gamma;
    let t = match convention {
        ThresholdConvention::Scaled => lambda / gamma,
        ThresholdConvention::Raw => lambda,
    };
    let shrunk = soft_threshold(&z, t);
    let rest = if rho.is_finite() {
        project_l1(&shrunk, rho)
    } else {
        shrunk
    };
    Coefficient::new(rest)
}

/// Profiled score `S_n(beta)` with leave-one-out smoothing at bandwidth `h`.
pub fn score(
    beta: &Coefficient,
    d: &Dataset,
    ytilde: &ModifiedResponse,
    h: f64,
) -> Result<DVector<f64>> {
    check_dims(beta, d, &ytilde.values)?;
    let u = beta.index_values(d.covariates());
    let kern = LooKernel::new(u.as_slice(), h)?;
    let (g, g1) = kern.smooth(ytilde.values.as_slice());
    Ok(score_from_parts(d.covariates(), &ytilde.values, &g, &g1, &kern))
}

fn check_dims(beta: &Coefficient, d: &Dataset, y: &DVector<f64>) -> Result<()> {
    if beta.p() != d.p() || y.len() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient length {}, data {}x{}, response {}",
            beta.p(),
            d.n(),
            d.p(),
            y.len()
        )));
    }
    Ok(())
}

/// `-n^{-1} sum_i c_i (x_{i,-1} - E_{i,-1})` with `c_i = (y_i - G_i) G1_i`,
/// using `sum_i c_i E_i = (W^T c)^T X` so the conditional means are never
/// formed explicitly.
pub(crate) fn score_from_parts(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    g: &DVector<f64>,
    g1: &DVector<f64>,
    kern: &LooKernel,
) -> DVector<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let c = (y - g).component_mul(g1);
    let wc = kern.transpose_apply(&c);
    let diff = c - wc;
    let tail = x.columns(1, p - 1);
    -(tail.transpose() * diff) / n as f64
}

/// Ridge start rescaled so the first coefficient is one, then
/// soft-thresholded and projected into the L1 ball. Falls back to zero when
/// the first ridge coefficient vanishes.
pub fn initial_beta(d: &Dataset, ytilde: &ModifiedResponse, cfg: &EstimatorConfig) -> Coefficient {
    initial_from(d.covariates(), &ytilde.values, cfg)
}

fn initial_from(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &EstimatorConfig) -> Coefficient {
    let (n, p) = x.shape();
    let means = x.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &means;
    }
    let yc = y.add_scalar(-y.mean());
    let kappa = cfg.init_ridge * n as f64;
    let b = if p <= n {
        let mut gram = xc.transpose() * &xc;
        for i in 0..p {
            gram[(i, i)] += kappa;
        }
        gram.cholesky().map(|ch| ch.solve(&(xc.transpose() * &yc)))
    } else {
        let mut gram = &xc * xc.transpose();
        for i in 0..n {
            gram[(i, i)] += kappa;
        }
        gram.cholesky().map(|ch| xc.transpose() * ch.solve(&yc))
    };
    let zero = Coefficient::zeros(p);
    let Some(b) = b else { return zero };
    let lead = b[0];
    if !(lead.abs() > 1e-12 * b.norm()) || !lead.is_finite() {
        return zero;
    }
    let rest = b.rows(1, p - 1) / lead;
    Coefficient::new(project_l1(&soft_threshold(&rest, cfg.init_threshold), cfg.rho))
}

/// Runs the composite gradient iteration from `beta0` with penalty
/// `cfg.lambda`.
///
/// Each iteration recomputes the bandwidth and leave-one-out smoother at the
/// current iterate, records the mean squared residual, takes a proximal step
/// and doubles the step-size parameter. The loop continues while the
/// coefficient change exceeds `rel_tol` times the previous norm or the
/// residual is still decreasing.
pub fn fit(
    d: &Dataset,
    ytilde: &ModifiedResponse,
    cfg: &EstimatorConfig,
    beta0: &Coefficient,
) -> Result<FitResult> {
    cfg.validate()?;
    check_dims(beta0, d, &ytilde.values)?;
    fit_raw(d.covariates(), &ytilde.values, cfg, cfg.lambda, beta0)
}

fn fit_raw(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &EstimatorConfig,
    lambda: f64,
    beta0: &Coefficient,
) -> Result<FitResult> {
    let n = y.len() as f64;
    let mean = y.mean();
    let var_y = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);

    let mut beta = beta0.clone();
    let mut prev_norm = beta.full().norm();
    let mut coef_err = prev_norm + 1.0;
    let (mut err_last, mut err_before) = (var_y, var_y);
    let mut gamma = cfg.gamma0;
    let mut trace = Vec::new();
    let mut iterations = 0;

    while coef_err > cfg.rel_tol * prev_norm || err_last < err_before {
        if iterations == cfg.max_iter {
            return Ok(FitResult {
                beta,
                lambda_used: lambda,
                iterations,
                model_err_trace: trace,
                converged: false,
            });
        }
        let u = beta.index_values(x);
        let h = bandwidth(u.as_slice(), cfg.bandwidth_floor);
        let kern = LooKernel::new(u.as_slice(), h)?;
        let (g, g1) = kern.smooth(y.as_slice());
        let model_err = (y - &g).norm_squared() / n;
        trace.push(model_err);
        let s = score_from_parts(x, y, &g, &g1, &kern);
        if iterations == 0 && cfg.step_scale == StepScale::Curvature {
            let curv = curvature(x, &g1);
            if curv > 0.0 && curv.is_finite() {
                gamma *= curv;
            }
        }
        let next = proximal_step(&beta, &s, gamma, lambda, cfg.rho, cfg.threshold);
        iterations += 1;
        if next.rest().iter().any(|v| !v.is_finite()) || !model_err.is_finite() {
            return Err(Error::NonFinite(iterations));
        }
        coef_err = (next.rest() - beta.rest()).norm();
        prev_norm = beta.full().norm();
        err_before = err_last;
        err_last = model_err;
        beta = next;
        gamma *= 2.0;
    }
    Ok(FitResult {
        beta,
        lambda_used: lambda,
        iterations,
        model_err_trace: trace,
        converged: true,
    })
}

fn curvature(x: &DMatrix<f64>, g1: &DVector<f64>) -> f64 {
    let (n, p) = x.shape();
    let tail = x.columns(1, p - 1);
    let total: f64 = (0..n).map(|i| g1[i] * g1[i] * tail.row(i).norm_squared()).sum();
    total / (n * (p - 1)) as f64
}

/// Geometric grid from `lambda_max` down to `lambda_max * ratio`.
pub fn lambda_grid(lambda_max: f64, ratio: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![lambda_max];
    }
    (0..len)
        .map(|k| lambda_max * ratio.powf(k as f64 / (len - 1) as f64))
        .collect()
}

/// Sup-norm of the score at the starting value.
pub fn lambda_max(d: &Dataset, ytilde: &ModifiedResponse, cfg: &EstimatorConfig) -> Result<f64> {
    let beta0 = initial_beta(d, ytilde, cfg);
    let u = beta0.index_values(d.covariates());
    let h = bandwidth(u.as_slice(), cfg.bandwidth_floor);
    Ok(score(&beta0, d, ytilde, h)?.amax())
}

/// Default search grid: 10 points from `lambda_max / 10` spanning three
/// decades.
pub fn default_lambda_grid(
    d: &Dataset,
    ytilde: &ModifiedResponse,
    cfg: &EstimatorConfig,
) -> Result<Vec<f64>> {
    Ok(lambda_grid(0.1 * lambda_max(d, ytilde, cfg)?, 1e-3, 10))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub lambda: f64,
    /// Deduplicated grid, descending.
    pub grid: Vec<f64>,
    /// Mean held-out error per grid value; infinite when every fold failed.
    pub mse: Vec<f64>,
}

/// Fold labels from a seeded uniform permutation; fold sizes differ by at
/// most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, Domain::Folds, 0));
    let mut label = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        label[i] = pos % folds;
    }
    label
}

/// Chooses `lambda` from `grid` by K-fold cross-validation; ties go to the
/// larger value.
pub fn cross_validate(
    d: &Dataset,
    ytilde: &ModifiedResponse,
    grid: &[f64],
    cfg: &EstimatorConfig,
) -> Result<CvOutcome> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut lambdas: Vec<f64> = grid.to_vec();
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidConfig("lambda grid values must be finite and nonnegative".into()));
    }
    lambdas.sort_by(|a, b| b.total_cmp(a));
    lambdas.dedup();
    if lambdas.len() == 1 {
        return Ok(CvOutcome {
            lambda: lambdas[0],
            grid: lambdas,
            mse: vec![f64::NAN],
        });
    }
    let x = d.covariates();
    let y = &ytilde.values;
    let n = d.n();

    let mse = match cfg.cv_mode {
        CvMode::InSample => {
            let beta0 = initial_from(x, y, cfg);
            lambdas
                .par_iter()
                .map(|&lam| {
                    fit_raw(x, y, cfg, lam, &beta0)
                        .and_then(|f| loo_residual_mse(x, y, &f.beta, cfg))
                        .unwrap_or(f64::INFINITY)
                })
                .collect::<Vec<_>>()
        }
        CvMode::OutOfFold => {
            let k = cfg.cv_folds;
            if n < 2 * k {
                return Err(Error::TooFewRows {
                    needed: 2 * k,
                    found: n,
                });
            }
            let labels = fold_assignment(n, k, cfg.seed);
            let splits: Vec<(Dataset, Dataset)> = (0..k)
                .map(|f| {
                    let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
                    let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
                    (d.subset(&train), d.subset(&test))
                })
                .collect();
            let ys: Vec<(DVector<f64>, DVector<f64>)> = (0..k)
                .map(|f| {
                    let tr: Vec<f64> = (0..n).filter(|&i| labels[i] != f).map(|i| y[i]).collect();
                    let te: Vec<f64> = (0..n).filter(|&i| labels[i] == f).map(|i| y[i]).collect();
                    (DVector::from_vec(tr), DVector::from_vec(te))
                })
                .collect();
            let starts: Vec<Coefficient> = (0..k)
                .map(|f| initial_from(splits[f].0.covariates(), &ys[f].0, cfg))
                .collect();
            let cells: Vec<(usize, usize)> = (0..lambdas.len())
                .flat_map(|l| (0..k).map(move |f| (l, f)))
                .collect();
            let errs: Vec<f64> = cells
                .par_iter()
                .map(|&(l, f)| {
                    let (train, test) = &splits[f];
                    let (ytr, yte) = &ys[f];
                    fit_raw(train.covariates(), ytr, cfg, lambdas[l], &starts[f])
                        .and_then(|fit| held_out_mse(train, ytr, test, yte, &fit.beta, cfg))
                        .unwrap_or(f64::INFINITY)
                })
                .collect();
            errs.chunks(k)
                .map(|c| c.iter().sum::<f64>() / k as f64)
                .collect()
        }
    };

    let mut best = 0;
    for l in 1..lambdas.len() {
        // strict improvement only, so ties keep the larger lambda
        if mse[l] < mse[best] {
            best = l;
        }
    }
    if !mse[best].is_finite() {
        return Err(Error::NonFinite(0));
    }
    Ok(CvOutcome {
        lambda: lambdas[best],
        grid: lambdas,
        mse,
    })
}

fn held_out_mse(
    train: &Dataset,
    ytr: &DVector<f64>,
    test: &Dataset,
    yte: &DVector<f64>,
    beta: &Coefficient,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let u_tr = beta.index_values(train.covariates());
    let h = bandwidth(u_tr.as_slice(), cfg.bandwidth_floor);
    let u_te = beta.index_values(test.covariates());
    let mut total = 0.0;
    for (t, yv) in u_te.iter().zip(yte.iter()) {
        let g = nw_predict(*t, u_tr.as_slice(), ytr.as_slice(), h)?;
        total += (yv - g).powi(2);
    }
    Ok(total / yte.len() as f64)
}

fn loo_residual_mse(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &Coefficient,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let u = beta.index_values(x);
    let h = bandwidth(u.as_slice(), cfg.bandwidth_floor);
    let kern = LooKernel::new(u.as_slice(), h)?;
    let (g, _) = kern.smooth(y.as_slice());
    Ok((y - g).norm_squared() / y.len() as f64)
}

/// Cross-validates `lambda` over `grid` (or the default grid when `None`)
/// and refits on the full sample from the full-sample starting value.
pub fn fit_cv(
    d: &Dataset,
    ytilde: &ModifiedResponse,
    grid: Option<&[f64]>,
    cfg: &EstimatorConfig,
) -> Result<(FitResult, CvOutcome)> {
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            owned = default_lambda_grid(d, ytilde, cfg)?;
            &owned
        }
    };
    let cv = cross_validate(d, ytilde, grid, cfg)?;
    let cfg = EstimatorConfig {
        lambda: cv.lambda,
        ..cfg.clone()
    };
    let beta0 = initial_beta(d, ytilde, &cfg);
    Ok((fit(d, ytilde, &cfg, &beta0)?, cv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{modify_response, ResponseMode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_vec(v.to_vec())
    }

    // bracket the budget-exhausting level on a grid, then bisect
    fn projection_oracle(v: &DVector<f64>, rho: f64) -> DVector<f64> {
        if v.lp_norm(1) <= rho {
            return v.clone();
        }
        let l1 = |d: f64| v.iter().map(|x| (x.abs() - d).max(0.0)).sum::<f64>();
        let top = v.amax();
        let steps = 1000;
        let mut lo = 0.0;
        let mut hi = top;
        for k in 0..=steps {
            let d = top * k as f64 / steps as f64;
            if l1(d) <= rho {
                hi = d;
                break;
            }
            lo = d;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if l1(mid) > rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        v.map(|x| x.signum() * (x.abs() - hi).max(0.0))
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&dv(&[0.5]), 1.0), dv(&[0.0]));
        assert_eq!(soft_threshold(&dv(&[2.0, -2.0]), 0.5), dv(&[1.5, -1.5]));
        let v = dv(&[0.3, -7.0, 0.0, 1e-300]);
        assert_eq!(soft_threshold(&v, 0.0), v);
    }

    #[test]
    fn projection_examples() {
        let inside = dv(&[0.2, -0.3]);
        assert_eq!(project_l1(&inside, 1.0), inside);
        assert_eq!(project_l1(&dv(&[1.0, 1.0]), 1.0), dv(&[0.5, 0.5]));
        let w = project_l1(&dv(&[3.0, 1.0, 0.0]), 2.0);
        assert!((w - dv(&[2.0, 0.0, 0.0])).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn projection_matches_oracle_and_kkt(
            v in prop::collection::vec(-5.0f64..5.0, 1..12),
            rho in 0.05f64..8.0,
        ) {
            let v = DVector::from_vec(v);
            let w = project_l1(&v, rho);
            prop_assert!((&w - projection_oracle(&v, rho)).amax() < 1e-8);
            prop_assert!(w.lp_norm(1) <= rho + 1e-12);
            let delta = l1_projection_threshold(&v, rho);
            prop_assert!(delta >= 0.0);
            prop_assert!((&w - soft_threshold(&v, delta)).amax() < 1e-12);
            prop_assert!(((w.lp_norm(1) - rho) * delta).abs() < 1e-10);
        }

        #[test]
        fn soft_threshold_identities(
            v in prop::collection::vec(-5.0f64..5.0, 1..12),
            t in 0.0f64..3.0,
        ) {
            let v = DVector::from_vec(v);
            let s = soft_threshold(&v, t);
            for (a, b) in v.iter().zip(s.iter()) {
                prop_assert!(b.abs() <= a.abs());
                prop_assert!(*b == 0.0 || b.signum() == a.signum());
                prop_assert!(*b == 0.0 || (a.abs() - b.abs() - t).abs() < 1e-12);
                prop_assert!(*b != 0.0 || a.abs() <= t);
            }
            prop_assert_eq!(soft_threshold(&v, 0.0), v);
        }
    }

    fn surrogate(b: &DVector<f64>, beta: &DVector<f64>, s: &DVector<f64>, gamma: f64, lambda: f64) -> f64 {
        let d = b - beta;
        0.5 * gamma * d.norm_squared() + s.dot(&d) + lambda * b.lp_norm(1)
    }

    #[test]
    fn proximal_step_minimizes_surrogate_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let beta = dv(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let s = dv(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
            let gamma = rng.gen_range(0.5..4.0);
            let lambda = rng.gen_range(0.0..2.0);
            let rho = rng.gen_range(0.2..3.0);
            let out = proximal_step(&Coefficient::new(beta.clone()), &s, gamma, lambda, rho, ThresholdConvention::Scaled);
            let got = surrogate(out.rest(), &beta, &s, gamma, lambda);
            let mut best = f64::INFINITY;
            let mut arg = dv(&[0.0, 0.0]);
            let m = 400;
            for a in 0..=m {
                for b in 0..=m {
                    let c = dv(&[
                        -rho + 2.0 * rho * a as f64 / m as f64,
                        -rho + 2.0 * rho * b as f64 / m as f64,
                    ]);
                    if c.lp_norm(1) > rho {
                        continue;
                    }
                    let f = surrogate(&c, &beta, &s, gamma, lambda);
                    if f < best {
                        best = f;
                        arg = c;
                    }
                }
            }
            assert!(out.rest().lp_norm(1) <= rho + 1e-10);
            assert!(got <= best + 1e-12, "step {got} worse than grid {best}");
            assert!((out.rest() - arg).amax() < 4.0 * rho / m as f64 + 1e-3);
        }
    }

    #[test]
    fn proximal_step_limits() {
        let beta = Coefficient::new(dv(&[0.3, -0.2]));
        let zero = dv(&[0.0, 0.0]);
        let out = proximal_step(&beta, &zero, 2.0, 1.0, 10.0, ThresholdConvention::Scaled);
        assert_eq!(out.rest(), &zero);
        let s = dv(&[1.0, -4.0]);
        let out = proximal_step(&beta, &s, 2.0, 0.0, f64::INFINITY, ThresholdConvention::Scaled);
        assert_eq!(out.rest(), &(beta.rest() - &s / 2.0));
        let raw = proximal_step(&beta, &zero, 4.0, 0.25, 10.0, ThresholdConvention::Raw);
        assert!((raw.rest() - dv(&[0.05, 0.0])).amax() < 1e-15);
        assert_eq!(out.first(), 1.0);
    }

    fn gauss(z: f64) -> f64 {
        (-0.5 * z * z).exp()
    }

    // direct leave-one-out sums with the derivative from the quotient rule
    fn score_oracle(x: &DMatrix<f64>, y: &[f64], beta: &[f64], h: f64) -> Vec<f64> {
        let (n, p) = x.shape();
        let u: Vec<f64> = (0..n).map(|i| (0..p).map(|j| x[(i, j)] * beta[j]).sum()).collect();
        let mut s = vec![0.0; p - 1];
        for i in 0..n {
            let (mut sw, mut swy, mut sdw, mut sdwy) = (0.0, 0.0, 0.0, 0.0);
            let mut swx = vec![0.0; p];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let z = (u[i] - u[j]) / h;
                let w = gauss(z);
                let dw = -z * gauss(z) / h;
                sw += w;
                swy += w * y[j];
                sdw += dw;
                sdwy += dw * y[j];
                for k in 0..p {
                    swx[k] += w * x[(j, k)];
                }
            }
            let g = swy / sw;
            let g1 = (sdwy * sw - swy * sdw) / (sw * sw);
            for k in 1..p {
                s[k - 1] -= (y[i] - g) * g1 * (x[(i, k)] - swx[k] / sw) / n as f64;
            }
        }
        s
    }

    fn toy(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.5..1.5));
        let a = DVector::from_fn(n, |i, _| (i % 2) as f64);
        let y = DVector::from_fn(n, |i, _| {
            let u = x[(i, 0)] - 0.5 * x[(i, 1)];
            (a[i] - 0.5) * 4.0 * u + rng.gen_range(-0.5..0.5)
        });
        Dataset::new(x, a, y, None).unwrap()
    }

    #[test]
    fn score_matches_direct_summation() {
        let x = DMatrix::from_row_slice(3, 2, &[0.3, -1.2, 1.1, 0.4, -0.7, 0.9]);
        let d = Dataset::new(x.clone(), dv(&[1.0, 0.0, 1.0]), dv(&[1.5, -0.2, 0.7]), None).unwrap();
        let yt = modify_response(&d, ResponseMode::Randomized, None).unwrap();
        let beta = Coefficient::new(dv(&[0.6]));
        let s = score(&beta, &d, &yt, 0.8).unwrap();
        let o = score_oracle(&x, yt.values.as_slice(), &[1.0, 0.6], 0.8);
        assert!((s[0] - o[0]).abs() < 1e-12, "{} vs {}", s[0], o[0]);

        let d = toy(40, 5, 3);
        let yt = modify_response(&d, ResponseMode::Randomized, None).unwrap();
        let b = [1.0, -0.4, 0.2, 0.0, 0.1];
        let s = score(&Coefficient::from_full(&b).unwrap(), &d, &yt, 0.45).unwrap();
        let o = score_oracle(d.covariates(), yt.values.as_slice(), &b, 0.45);
        for k in 0..4 {
            assert!((s[k] - o[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicated_sample_matches_oracle() {
        let d = toy(15, 3, 8);
        let idx: Vec<usize> = (0..15).chain(0..15).collect();
        let dd = d.subset(&idx);
        let yt = modify_response(&dd, ResponseMode::Randomized, None).unwrap();
        let b = [1.0, 0.3, -0.2];
        let s = score(&Coefficient::from_full(&b).unwrap(), &dd, &yt, 0.6).unwrap();
        let o = score_oracle(dd.covariates(), yt.values.as_slice(), &b, 0.6);
        for k in 0..2 {
            assert!((s[k] - o[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_residuals_give_zero_score() {
        let d = toy(12, 3, 1);
        let beta = Coefficient::new(dv(&[0.2, -0.1]));
        let u = beta.index_values(d.covariates());
        let h = bandwidth(u.as_slice(), 1e-6);
        let yt = modify_response(&d, ResponseMode::Randomized, None).unwrap();
        let constant = ModifiedResponse {
            values: DVector::from_element(12, 2.5),
            ..yt
        };
        let s = score(&beta, &d, &constant, h).unwrap();
        assert!(s.amax() < 1e-12);
    }

    #[test]
    fn large_penalty_keeps_zero() {
        let d = toy(60, 6, 4);
        let yt = modify_response(&d, ResponseMode::Randomized, None).unwrap();
        for threshold in [ThresholdConvention::Scaled, ThresholdConvention::Raw] {
            let cfg = EstimatorConfig {
                lambda: 1e6,
                threshold,
                ..Default::default()
            };
            let f = fit(&d, &yt, &cfg, &Coefficient::zeros(6)).unwrap();
            assert!(f.beta.rest().iter().all(|v| *v == 0.0));
            assert!(f.converged);
        }
    }

    #[test]
    fn fit_is_deterministic_and_feasible() {
        let d = toy(80, 8, 5);
        let yt = modify_response(&d, ResponseMode::Randomized, None).unwrap();
        let cfg = EstimatorConfig {
            lambda: 0.05,
            rho: 0.6,
            ..Default::default()
        };
        let b0 = initial_beta(&d, &yt, &cfg);
        let f1 = fit(&d, &yt, &cfg, &b0).unwrap();
        let f2 = fit(&d, &yt, &cfg, &b0).unwrap();
        assert_eq!(f1, f2);
        assert!(f1.beta.rest().lp_norm(1) <= 0.6 + 1e-10);
        assert_eq!(f1.model_err_trace.len(), f1.iterations);
    }

    #[test]
    fn linear_link_recovers_direction() {
        let d = toy(300, 4, 9);
        let yt = modify_response(&d, ResponseMode::Randomized, None).unwrap();
        let cfg = EstimatorConfig {
            lambda: 0.0,
            ..Default::default()
        };
        let b0 = initial_beta(&d, &yt, &cfg);
        let f = fit(&d, &yt, &cfg, &b0).unwrap();
        let truth = dv(&[-0.5, 0.0, 0.0]);
        assert!((f.beta.rest() - truth).norm() < 0.15, "{:?}", f.beta.rest());
    }

    #[test]
    fn config_validation() {
        assert!(EstimatorConfig::default().validate().is_ok());
        let bad = [
            EstimatorConfig { rho: 0.0, ..Default::default() },
            EstimatorConfig { gamma0: -1.0, ..Default::default() },
            EstimatorConfig { lambda: f64::NAN, ..Default::default() },
            EstimatorConfig { cv_folds: 1, ..Default::default() },
            EstimatorConfig { init_threshold: -0.1, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn grid_shape() {
        let g = lambda_grid(2.0, 0.01, 5);
        assert_eq!(g.len(), 5);
        assert!((g[0] - 2.0).abs() < 1e-15 && (g[4] - 0.02).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(lambda_grid(3.0, 0.5, 1), vec![3.0]);
    }

    #[test]
    fn folds_are_balanced() {
        let l = fold_assignment(23, 5, 7);
        let mut counts = [0; 5];
        for f in &l {
            counts[*f] += 1;
        }
        assert!(counts.iter().all(|c| *c == 4 || *c == 5));
        assert_eq!(l, fold_assignment(23, 5, 7));
        assert_ne!(l, fold_assignment(23, 5, 8));
    }

    #[test]
    fn cv_grid_edge_cases() {
        let d = toy(50, 4, 2);
        let yt = modify_response(&d, ResponseMode::Randomized, None).unwrap();
        let cfg = EstimatorConfig::default();
        assert_eq!(cross_validate(&d, &yt, &[0.3], &cfg).unwrap().lambda, 0.3);
        assert!(matches!(cross_validate(&d, &yt, &[], &cfg), Err(Error::EmptyGrid)));
        let a = cross_validate(&d, &yt, &[0.5, 0.05, 0.005], &cfg).unwrap();
        let b = cross_validate(&d, &yt, &[0.05, 0.5, 0.005, 0.05, 0.5], &cfg).unwrap();
        assert_eq!(a, b);
        let c = CvMode::InSample;
        let ins = cross_validate(&d, &yt, &[0.5, 0.05], &EstimatorConfig { cv_mode: c, ..cfg }).unwrap();
        assert!(ins.mse.iter().all(|m| m.is_finite()));
    }
}
