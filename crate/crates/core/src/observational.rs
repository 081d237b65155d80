//! Observational data: an L1-penalized logistic propensity model and the
//! pipeline that plugs its fitted values into the modified response.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{modify_response, Dataset, ModifiedResponse, ResponseMode};
use crate::error::{Error, Result};
use crate::estimator::{fit_cv, CvOutcome, EstimatorConfig, FitResult};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    /// Intercept followed by the `p` slopes.
    pub xi: DVector<f64>,
    pub lambda_p: f64,
    pub fitted: DVector<f64>,
    pub iterations: usize,
    /// Penalized objective after each accepted step.
    pub objective_trace: Vec<f64>,
}

impl PropensityFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        linear_predictor(x, &self.xi).map(logistic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropensityConfig {
    pub max_iter: usize,
    /// Stop when the sup-norm of the minimal subgradient falls below this.
    pub tol: f64,
    pub cv_folds: usize,
    pub grid_len: usize,
    pub grid_ratio: f64,
    pub seed: u64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            max_iter: 50_000,
            tol: 1e-6,
            cv_folds: 5,
            grid_len: 10,
            grid_ratio: 0.01,
            seed: 2024,
        }
    }
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn linear_predictor(x: &DMatrix<f64>, xi: &DVector<f64>) -> DVector<f64> {
    let p = x.ncols();
    (x * xi.rows(1, p)).add_scalar(xi[0])
}

fn loss(x: &DMatrix<f64>, a: &DVector<f64>, xi: &DVector<f64>) -> f64 {
    let eta = linear_predictor(x, xi);
    eta.iter()
        .zip(a.iter())
        .map(|(e, ai)| softplus(*e) - ai * e)
        .sum::<f64>()
        / a.len() as f64
}

fn gradient(x: &DMatrix<f64>, a: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
    let n = a.len() as f64;
    let r = linear_predictor(x, xi).map(logistic) - a;
    let mut g = DVector::zeros(xi.len());
    g[0] = r.sum() / n;
    g.rows_mut(1, x.ncols()).copy_from(&(x.tr_mul(&r) / n));
    g
}

fn penalty(xi: &DVector<f64>, lambda: f64) -> f64 {
    lambda * xi.rows(1, xi.len() - 1).lp_norm(1)
}

/// Sup-norm of the minimal subgradient of the penalized loss.
fn stationarity(g: &DVector<f64>, xi: &DVector<f64>, lambda: f64) -> f64 {
    let mut worst = g[0].abs();
    for j in 1..xi.len() {
        let v = if xi[j] != 0.0 {
            (g[j] + lambda * xi[j].signum()).abs()
        } else {
            (g[j].abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn logit(m: f64) -> f64 {
    (m / (1.0 - m)).ln()
}

/// Minimizes the mean logistic loss plus `lambda_p ||slopes||_1` by
/// proximal gradient with backtracking; the intercept is unpenalized.
pub fn fit_propensity(
    x: &DMatrix<f64>,
    a: &DVector<f64>,
    lambda_p: f64,
    cfg: &PropensityConfig,
) -> Result<PropensityFit> {
    let (n, p) = x.shape();
    if a.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} treatments", a.len())));
    }
    if !(lambda_p >= 0.0 && lambda_p.is_finite()) {
        return Err(Error::InvalidConfig("propensity penalty must be finite and nonnegative".into()));
    }
    let mean = a.mean();
    if mean == 0.0 || mean == 1.0 {
        return Err(Error::ConstantTreatment);
    }
    let mut xi = DVector::zeros(p + 1);
    xi[0] = logit(mean);
    let mut obj = loss(x, a, &xi) + penalty(&xi, lambda_p);
    let mut trace = vec![obj];
    let mut step = 1.0;
    for it in 0..cfg.max_iter {
        let g = gradient(x, a, &xi);
        if stationarity(&g, &xi, lambda_p) <= cfg.tol {
            let fitted = linear_predictor(x, &xi).map(logistic);
            return Ok(PropensityFit {
                xi,
                lambda_p,
                fitted,
                iterations: it,
                objective_trace: trace,
            });
        }
        let f0 = obj - penalty(&xi, lambda_p);
        step *= 2.0;
        let next = loop {
            let mut cand = &xi - &g * step;
            for j in 1..=p {
                let v = cand[j];
                cand[j] = v.signum() * (v.abs() - step * lambda_p).max(0.0);
            }
            let d = &cand - &xi;
            let f1 = loss(x, a, &cand);
            if f1 <= f0 + g.dot(&d) + d.norm_squared() / (2.0 * step) {
                break cand;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(Error::NonConvergence(it));
            }
        };
        xi = next;
        obj = loss(x, a, &xi) + penalty(&xi, lambda_p);
        trace.push(obj);
        if lambda_p == 0.0 && separates(x, a, &xi) {
            return Err(Error::Separation);
        }
    }
    Err(Error::NonConvergence(cfg.max_iter))
}

/// The linear predictor strictly separates treated from control, so the
/// unpenalized likelihood has no finite maximizer.
fn separates(x: &DMatrix<f64>, a: &DVector<f64>, xi: &DVector<f64>) -> bool {
    linear_predictor(x, xi)
        .iter()
        .zip(a.iter())
        .all(|(e, ai)| (2.0 * ai - 1.0) * e > 0.0)
}

/// Smallest penalty at which every slope is zero.
pub fn propensity_lambda_max(x: &DMatrix<f64>, a: &DVector<f64>) -> f64 {
    let r = a.add_scalar(-a.mean());
    (x.tr_mul(&r) / a.len() as f64).amax()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityCv {
    pub lambda_p: f64,
    pub grid: Vec<f64>,
    pub deviance: Vec<f64>,
}

/// K-fold CV of the propensity penalty on held-out deviance; ties go to the
/// larger penalty.
pub fn cross_validate_propensity(
    x: &DMatrix<f64>,
    a: &DVector<f64>,
    cfg: &PropensityConfig,
) -> Result<PropensityCv> {
    let n = x.nrows();
    let k = cfg.cv_folds;
    if n < 2 * k {
        return Err(Error::TooFewRows { needed: 2 * k, found: n });
    }
    let top = propensity_lambda_max(x, a);
    let grid: Vec<f64> = (0..cfg.grid_len)
        .map(|i| top * cfg.grid_ratio.powf(i as f64 / (cfg.grid_len.max(2) - 1) as f64))
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(cfg.seed, Domain::PropensityFolds, 0));
    let mut label = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        label[i] = pos % k;
    }
    let rows = |f: usize, inside: bool| -> Vec<usize> {
        (0..n).filter(|&i| (label[i] == f) != inside).collect()
    };
    let mut deviance = vec![0.0; grid.len()];
    for f in 0..k {
        let tr = rows(f, true);
        let te = rows(f, false);
        let xtr = x.select_rows(&tr);
        let atr = DVector::from_fn(tr.len(), |i, _| a[tr[i]]);
        if atr.mean() == 0.0 || atr.mean() == 1.0 {
            return Err(Error::ConstantTreatment);
        }
        let xte = x.select_rows(&te);
        for (l, &lam) in grid.iter().enumerate() {
            let fit = fit_propensity(&xtr, &atr, lam, cfg)?;
            let pr = fit.predict(&xte);
            let dev: f64 = te
                .iter()
                .zip(pr.iter())
                .map(|(&i, &q)| {
                    let q = q.clamp(1e-12, 1.0 - 1e-12);
                    -2.0 * (a[i] * q.ln() + (1.0 - a[i]) * (1.0 - q).ln())
                })
                .sum();
            deviance[l] += dev / n as f64;
        }
    }
    let mut best = 0;
    for l in 1..grid.len() {
        if deviance[l] < deviance[best] {
            best = l;
        }
    }
    Ok(PropensityCv {
        lambda_p: grid[best],
        grid,
        deviance,
    })
}

/// Overlap diagnostic threshold on `min pi (1 - pi)`.
pub const OVERLAP_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalFit {
    pub propensity: PropensityFit,
    pub propensity_cv: Option<PropensityCv>,
    pub ytilde: ModifiedResponse,
    pub fit: FitResult,
    pub cv: CvOutcome,
    pub min_overlap: f64,
    /// `min pi (1 - pi) < 1e-3`.
    pub poor_overlap: bool,
}

/// Fits the propensity model (penalty chosen by CV when `lambda_p` is
/// `None`), forms `4(A - pi)Y` and runs the cross-validated profiled fit.
pub fn obs_pipeline(
    d: &Dataset,
    lambda_p: Option<f64>,
    cfg: &EstimatorConfig,
    pcfg: &PropensityConfig,
) -> Result<ObservationalFit> {
    let (lam, pcv) = match lambda_p {
        Some(l) => (l, None),
        None => {
            let cv = cross_validate_propensity(d.covariates(), d.treatment(), pcfg)?;
            (cv.lambda_p, Some(cv))
        }
    };
    let prop = fit_propensity(d.covariates(), d.treatment(), lam, pcfg)?;
    let mut out = pipeline_with_propensity(d, &prop.fitted, cfg)?;
    out.propensity = prop;
    out.propensity_cv = pcv;
    Ok(out)
}

/// The observational pipeline with given propensities.
pub fn pipeline_with_propensity(
    d: &Dataset,
    pi: &DVector<f64>,
    cfg: &EstimatorConfig,
) -> Result<ObservationalFit> {
    let ytilde = modify_response(d, ResponseMode::Observational, Some(pi))?;
    let (fit, cv) = fit_cv(d, &ytilde, None, cfg)?;
    let min_overlap = pi.iter().map(|q| q * (1.0 - q)).fold(f64::INFINITY, f64::min);
    Ok(ObservationalFit {
        propensity: PropensityFit {
            xi: DVector::zeros(0),
            lambda_p: f64::NAN,
            fitted: pi.clone(),
            iterations: 0,
            objective_trace: Vec::new(),
        },
        propensity_cv: None,
        ytilde,
        fit,
        cv,
        min_overlap,
        poor_overlap: min_overlap < OVERLAP_FLOOR,
    })
}
