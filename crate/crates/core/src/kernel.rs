//! Gaussian-kernel Nadaraya-Watson smoothing along a single index.
//!
//! The fitted link `G(t)`, its derivative `G'(t)` and the conditional mean
//! `E(x | x'beta)` are all evaluated at the sample index points with the
//! point itself left out.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_BANDWIDTH_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub bandwidth_floor: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth_floor: DEFAULT_BANDWIDTH_FLOOR,
        }
    }
}

/// Standard normal density.
pub fn gaussian(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn gaussian_derivative(z: f64) -> f64 {
    -z * gaussian(z)
}

/// Linear-interpolation sample quantile of sorted data (R's default type).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Rule-of-thumb bandwidth `0.9 n^{-1/6} min(sd, IQR/1.34)`, never below
/// `floor`.
pub fn bandwidth(index_values: &[f64], floor: f64) -> f64 {
    let n = index_values.len();
    if n < 2 {
        return floor;
    }
    let nf = n as f64;
    let mean = index_values.iter().sum::<f64>() / nf;
    let sd = (index_values.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let mut sorted = index_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let h = 0.9 * nf.powf(-1.0 / 6.0) * sd.min(iqr / 1.34);
    if h.is_finite() {
        h.max(floor)
    } else {
        floor
    }
}

/// Nadaraya-Watson weights of `index_values` at target `t`.
pub fn nw_weights(t: f64, index_values: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut w: Vec<f64> = index_values.iter().map(|u| gaussian((t - u) / h)).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateDenominator(0));
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Nadaraya-Watson estimate at a new point `t` using every training point.
pub fn nw_predict(t: f64, index_values: &[f64], response: &[f64], h: f64) -> Result<f64> {
    let w = nw_weights(t, index_values, h)?;
    Ok(w.iter().zip(response).map(|(w, y)| w * y).sum())
}

/// Leave-one-out smoother output at the sample index points.
#[derive(Debug, Clone)]
pub struct SmootherEval {
    pub ghat: DVector<f64>,
    pub g1hat: DVector<f64>,
    /// Row `i` is `E(x | x_i'beta)` with subject `i` left out.
    pub ehat: DMatrix<f64>,
    pub bandwidth: f64,
}

pub fn loo_smooth(
    index_values: &DVector<f64>,
    ytilde: &DVector<f64>,
    covariates: &DMatrix<f64>,
    h: f64,
) -> Result<SmootherEval> {
    if covariates.nrows() != index_values.len() || ytilde.len() != index_values.len() {
        return Err(Error::DimensionMismatch(
            "index values, response and covariates disagree in length".into(),
        ));
    }
    let kern = LooKernel::new(index_values.as_slice(), h)?;
    let (ghat, g1hat) = kern.smooth(ytilde.as_slice());
    let ehat = kern.conditional_mean(covariates);
    Ok(SmootherEval {
        ghat,
        g1hat,
        ehat,
        bandwidth: h,
    })
}

/// Row-normalized leave-one-out weight matrix (zero diagonal).
pub fn loo_weights(index_values: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let kern = LooKernel::new(index_values, h)?;
    let n = index_values.len();
    Ok(DMatrix::from_fn(n, n, |i, j| kern.k[(i, j)] / kern.denom[i]))
}

/// Pairwise kernel values with the diagonal removed, plus the row sums and
/// the row sums of the t-derivative.
///
/// Kernel constants cancel in every ratio, so `k_ij = exp(-z_ij^2 / 2)`.
pub(crate) struct LooKernel {
    u: Vec<f64>,
    h: f64,
    k: DMatrix<f64>,
    denom: Vec<f64>,
    /// `sum_j dK/dt` for row `i`, in units of `1/h`.
    ddenom: Vec<f64>,
}

impl LooKernel {
    pub(crate) fn new(u: &[f64], h: f64) -> Result<Self> {
        let n = u.len();
        if n < 2 {
            return Err(Error::TooFewRows { needed: 2, found: n });
        }
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in (j + 1)..n {
                let z = (u[i] - u[j]) / h;
                let v = (-0.5 * z * z).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        let mut denom = vec![0.0; n];
        let mut ddenom = vec![0.0; n];
        for i in 0..n {
            let (mut s, mut ds) = (0.0, 0.0);
            for j in 0..n {
                if j != i {
                    let kij = k[(i, j)];
                    s += kij;
                    ds -= (u[i] - u[j]) / h * kij;
                }
            }
            if !(s > 0.0) {
                return Err(Error::DegenerateDenominator(i));
            }
            denom[i] = s;
            ddenom[i] = ds / h;
        }
        Ok(Self {
            u: u.to_vec(),
            h,
            k,
            denom,
            ddenom,
        })
    }

    /// Leave-one-out `G` and its exact t-derivative by the quotient rule.
    ///
    /// Values are shifted by a reference response from another subject so
    /// constants are reproduced exactly.
    pub(crate) fn smooth(&self, y: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let n = y.len();
        let mut g = DVector::zeros(n);
        let mut g1 = DVector::zeros(n);
        for i in 0..n {
            let r = y[if i == 0 { 1 } else { 0 }];
            let (mut num, mut dnum) = (0.0, 0.0);
            for j in 0..n {
                if j != i {
                    let kij = self.k[(i, j)];
                    let dy = y[j] - r;
                    num += kij * dy;
                    dnum -= (self.u[i] - self.u[j]) / self.h * kij * dy;
                }
            }
            let shifted = num / self.denom[i];
            g[i] = r + shifted;
            g1[i] = (dnum / self.h - shifted * self.ddenom[i]) / self.denom[i];
        }
        (g, g1)
    }

    /// Leave-one-out weighted means of the rows of `x`.
    pub(crate) fn conditional_mean(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let ref0 = x.row(0).clone_owned();
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= &ref0;
        }
        let mut e = &self.k * &centered;
        for i in 1..n {
            let mut row = e.row_mut(i);
            row /= self.denom[i];
            row += &ref0;
        }
        // row 0 cannot use itself as the reference
        let ref1 = x.row(1).clone_owned();
        let mut acc = nalgebra::RowDVector::zeros(x.ncols());
        for j in 1..n {
            acc += (x.row(j) - &ref1) * self.k[(0, j)];
        }
        e.set_row(0, &(acc / self.denom[0] + ref1));
        e
    }

    /// `W^T c` where `W_ij = k_ij / denom_i`.
    pub(crate) fn transpose_apply(&self, c: &DVector<f64>) -> DVector<f64> {
        let scaled = DVector::from_fn(c.len(), |i, _| c[i] / self.denom[i]);
        &self.k * scaled
    }
}
