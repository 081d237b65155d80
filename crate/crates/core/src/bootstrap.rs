//! Gaussian multiplier bootstrap for simultaneous tests of coefficient groups.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debias::{DebiasResult, NodewiseInverse};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// Null hypothesis `beta_j = 0` for every `j` in `group`, with `j` a
/// coefficient position in `2..=p` (position 1 is fixed at one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTestSpec {
    pub group: Vec<usize>,
    pub alpha: f64,
    pub draws: usize,
    pub seed: u64,
}

impl GroupTestSpec {
    pub fn new(group: Vec<usize>) -> Self {
        Self {
            group,
            alpha: 0.05,
            draws: 1000,
            seed: 2024,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.group.is_empty() {
            return Err(Error::EmptyGroup);
        }
        let mut seen = vec![false; p + 1];
        for &j in &self.group {
            if j < 2 || j > p {
                return Err(Error::GroupIndexOutOfRange(j));
            }
            if seen[j] {
                return Err(Error::DuplicateGroupIndex(j));
            }
            seen[j] = true;
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        if self.draws == 0 {
            return Err(Error::InvalidConfig("bootstrap needs at least one draw".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTestResult {
    pub group: Vec<usize>,
    pub statistic: f64,
    pub c_star: f64,
    pub reject: bool,
    pub p_value: f64,
    pub draw_maxima: Vec<f64>,
}

/// Per-subject pieces of the debiased score.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapContext {
    /// `(Ytilde_i - G_i) G1_i`.
    pub residual_terms: DVector<f64>,
    /// `xhat_{i,-1}' theta_j`, column `j - 2` for coefficient `j`.
    pub xhat_theta: DMatrix<f64>,
    pub beta_tilde: DVector<f64>,
}

impl BootstrapContext {
    pub fn new(inv: &NodewiseInverse, debiased: &DebiasResult) -> Self {
        let s = &inv.smoother;
        let p = s.xhat.ncols();
        Self {
            residual_terms: s.residual.component_mul(&s.g1),
            xhat_theta: s.xhat.columns(1, p - 1) * &inv.theta,
            beta_tilde: debiased.beta_tilde.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.residual_terms.len()
    }

    /// Number of coefficients including the fixed first one.
    pub fn p(&self) -> usize {
        self.beta_tilde.len() + 1
    }

    /// Columns of `xhat_theta` for the group.
    pub fn group_columns(&self, group: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), group.len(), |i, k| self.xhat_theta[(i, group[k] - 2)])
    }
}

/// `delta*_j` for draw `b` is `n^{-1} sum_i r_i^b residual_terms_i xhat_theta_ij`
/// with multipliers from the stream keyed by `(seed, b)`. Returns a
/// `B x |G|` matrix.
pub fn bootstrap_draws(
    residual_terms: &DVector<f64>,
    xhat_theta: &DMatrix<f64>,
    draws: usize,
    seed: u64,
) -> DMatrix<f64> {
    let n = residual_terms.len();
    let g = xhat_theta.ncols();
    let rows: Vec<DVector<f64>> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, Domain::Bootstrap, b as u64);
            let w = DVector::from_fn(n, |i, _| rng.sample::<f64, _>(StandardNormal) * residual_terms[i]);
            xhat_theta.tr_mul(&w) / n as f64
        })
        .collect();
    DMatrix::from_fn(draws, g, |b, j| rows[b][j])
}

/// The `ceil((1 - alpha) B)`-th smallest draw.
pub fn critical_value(draw_maxima: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if draw_maxima.is_empty() {
        return Err(Error::InvalidConfig("no bootstrap draws".into()));
    }
    let b = draw_maxima.len();
    let mut sorted = draw_maxima.to_vec();
    sorted.sort_by(f64::total_cmp);
    // guard against (1 - alpha) B landing a rounding error above an integer
    let k = (((1.0 - alpha) * b as f64) - 1e-9).ceil().clamp(1.0, b as f64) as usize;
    Ok(sorted[k - 1])
}

pub fn group_test(ctx: &BootstrapContext, spec: &GroupTestSpec) -> Result<GroupTestResult> {
    spec.validate(ctx.p())?;
    let root_n = (ctx.n() as f64).sqrt();
    let statistic = root_n
        * spec
            .group
            .iter()
            .map(|&j| ctx.beta_tilde[j - 2].abs())
            .fold(0.0, f64::max);
    let cols = ctx.group_columns(&spec.group);
    let deltas = bootstrap_draws(&ctx.residual_terms, &cols, spec.draws, spec.seed);
    let draw_maxima: Vec<f64> = deltas.row_iter().map(|r| root_n * r.amax()).collect();
    let c_star = critical_value(&draw_maxima, spec.alpha)?;
    let hits = draw_maxima.iter().filter(|m| **m >= statistic).count();
    Ok(GroupTestResult {
        group: spec.group.clone(),
        statistic,
        c_star,
        reject: statistic > c_star,
        p_value: hits as f64 / spec.draws as f64,
        draw_maxima,
    })
}
