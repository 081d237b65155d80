//! Nodewise Dantzig approximate inverse of the score Jacobian, the debiased
//! estimator, its sandwich variance and marginal confidence intervals.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Coefficient, Dataset, ModifiedResponse};
use crate::error::{Error, Result};
use crate::kernel::{bandwidth, KernelConfig, LooKernel};
use crate::lp::{solve_dual, LinearProgram, Relation};

/// Constraint slack of the nodewise programs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eta {
    /// `eta = c * h` with `h` the bandwidth at the fitted index.
    BandwidthMultiple(f64),
    Fixed(f64),
}

impl Default for Eta {
    fn default() -> Self {
        Eta::BandwidthMultiple(25.0)
    }
}

impl Eta {
    pub fn resolve(self, h: f64) -> Result<f64> {
        let eta = match self {
            Eta::BandwidthMultiple(c) => c * h,
            Eta::Fixed(v) => v,
        };
        if eta > 0.0 && eta.is_finite() {
            Ok(eta)
        } else {
            Err(Error::InvalidConfig(format!("eta must be positive and finite, got {eta}")))
        }
    }
}

/// Smoother quantities at the fitted coefficient, shared by the debiasing
/// and bootstrap steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedSmoother {
    pub bandwidth: f64,
    pub ghat: DVector<f64>,
    pub g1: DVector<f64>,
    /// `x_i - E(x_i | x_i'beta)`, all `p` columns.
    pub xhat: DMatrix<f64>,
    /// `Ytilde_i - G_i`.
    pub residual: DVector<f64>,
    /// `S_n` at the fitted coefficient.
    pub score: DVector<f64>,
    /// `n^{-1} sum_i G1_i^2 xhat_{i,-1} xhat_{i,-1}'`.
    pub j1: DMatrix<f64>,
}

impl FittedSmoother {
    pub fn new(beta: &Coefficient, d: &Dataset, ytilde: &ModifiedResponse) -> Result<Self> {
        if beta.p() != d.p() || ytilde.values.len() != d.n() {
            return Err(Error::DimensionMismatch(
                "coefficient, data and response disagree".into(),
            ));
        }
        let x = d.covariates();
        let (n, p) = x.shape();
        let u = beta.index_values(x);
        let h = bandwidth(u.as_slice(), KernelConfig::default().bandwidth_floor);
        let kern = LooKernel::new(u.as_slice(), h)?;
        let (ghat, g1) = kern.smooth(ytilde.values.as_slice());
        let xhat = x - kern.conditional_mean(x);
        let residual = &ytilde.values - &ghat;
        let tail = xhat.columns(1, p - 1);
        let c = residual.component_mul(&g1);
        let score = -(tail.transpose() * c) / n as f64;
        let mut weighted = tail.clone_owned();
        for i in 0..n {
            let w = g1[i];
            weighted.row_mut(i).scale_mut(w);
        }
        let j1 = weighted.transpose() * &weighted / n as f64;
        if !j1.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(0));
        }
        Ok(Self {
            bandwidth: h,
            ghat,
            g1,
            xhat,
            residual,
            score,
            j1,
        })
    }

    pub fn n(&self) -> usize {
        self.xhat.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodewiseInverse {
    /// Row `a` is the Dantzig solution for coefficient `a + 2`, over the
    /// other `p - 2` coordinates of `beta_{-1}` in order.
    pub d: DMatrix<f64>,
    /// Column `a` is `phi` for coefficient `a + 2`.
    pub phi: DMatrix<f64>,
    pub tau2: DVector<f64>,
    /// Column `a` is `phi_a / tau2_a`.
    pub theta: DMatrix<f64>,
    pub eta: f64,
    pub smoother: FittedSmoother,
}

fn others(a: usize, q: usize) -> impl Iterator<Item = usize> {
    (0..q).filter(move |&k| k != a)
}

/// Dantzig program for position `a` of `beta_{-1}` (coefficient `a + 2`):
/// minimize `||v||_1` subject to `|J1[k, a] - J1[k, -a] v| <= eta` for every
/// `k != a`, with `v` split into nonnegative parts.
pub fn nodewise_program(j1: &DMatrix<f64>, a: usize, eta: f64) -> LinearProgram {
    let q = j1.nrows();
    let idx: Vec<usize> = others(a, q).collect();
    let m = idx.len();
    let mut lp = LinearProgram::new(vec![1.0; 2 * m]);
    for &k in &idx {
        let mut row = Vec::with_capacity(2 * m);
        row.extend(idx.iter().map(|&l| j1[(k, l)]));
        row.extend(idx.iter().map(|&l| -j1[(k, l)]));
        let b = j1[(k, a)];
        lp = lp
            .constrain(row.clone(), Relation::Ge, b - eta)
            .constrain(row, Relation::Le, b + eta);
    }
    lp
}

/// Largest constraint violation measure `max_k |J1[k, a] - J1[k, -a] v|`.
pub fn nodewise_residual(j1: &DMatrix<f64>, a: usize, v: &[f64]) -> f64 {
    let q = j1.nrows();
    let idx: Vec<usize> = others(a, q).collect();
    idx.iter()
        .map(|&k| {
            let fit: f64 = idx.iter().zip(v).map(|(&l, vl)| j1[(k, l)] * vl).sum();
            (j1[(k, a)] - fit).abs()
        })
        .fold(0.0, f64::max)
}

pub fn nodewise_dantzig(j1: &DMatrix<f64>, a: usize, eta: f64) -> Result<DVector<f64>> {
    let q = j1.nrows();
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig("eta must be positive".into()));
    }
    let m = q - 1;
    if m == 0 {
        return Ok(DVector::zeros(0));
    }
    let fail = |reason: String| Error::SolverFailure {
        coord: a + 2,
        reason,
    };
    let sol = solve_dual(&nodewise_program(j1, a, eta)).map_err(|e| fail(e.code().to_string()))?;
    let v: Vec<f64> = (0..m).map(|k| sol.x[k] - sol.x[m + k]).collect();
    let resid = nodewise_residual(j1, a, &v);
    if resid > eta + 1e-8 {
        return Err(fail(format!("constraint residual {resid} exceeds eta {eta}")));
    }
    Ok(DVector::from_vec(v))
}

/// Builds the approximate inverse at the fitted coefficient.
pub fn build_theta(
    beta: &Coefficient,
    d: &Dataset,
    ytilde: &ModifiedResponse,
    eta: Eta,
) -> Result<NodewiseInverse> {
    let smoother = FittedSmoother::new(beta, d, ytilde)?;
    let eta = eta.resolve(smoother.bandwidth)?;
    theta_from_smoother(smoother, eta)
}

pub fn theta_from_smoother(smoother: FittedSmoother, eta: f64) -> Result<NodewiseInverse> {
    let j1 = &smoother.j1;
    let q = j1.nrows();
    let sols: Vec<DVector<f64>> = (0..q)
        .into_par_iter()
        .map(|a| nodewise_dantzig(j1, a, eta))
        .collect::<Result<_>>()?;
    let mut dmat = DMatrix::zeros(q, q.saturating_sub(1));
    let mut phi = DMatrix::zeros(q, q);
    let mut tau2 = DVector::zeros(q);
    for (a, v) in sols.iter().enumerate() {
        dmat.row_mut(a).copy_from(&v.transpose());
        phi[(a, a)] = 1.0;
        for (pos, k) in others(a, q).enumerate() {
            phi[(k, a)] = -v[pos];
        }
        let t = j1.row(a).dot(&phi.column(a).transpose());
        if !(t.abs() >= 1e-12) {
            return Err(Error::ZeroTau { coord: a + 2, value: t });
        }
        tau2[a] = t;
    }
    let mut theta = phi.clone();
    for a in 0..q {
        theta.column_mut(a).unscale_mut(tau2[a]);
    }
    Ok(NodewiseInverse {
        d: dmat,
        phi,
        tau2,
        theta,
        eta,
        smoother,
    })
}

impl NodewiseInverse {
    /// `Theta' J1`; its diagonal is one by construction.
    pub fn theta_j1(&self) -> DMatrix<f64> {
        self.theta.transpose() * &self.smoother.j1
    }

    /// Largest violation of the row bounds
    /// `|(I - Theta'J1)[a, k]| <= eta / tau2_a` over `k != a`.
    pub fn max_row_excess(&self) -> f64 {
        let m = self.theta_j1();
        let q = m.nrows();
        let mut worst = f64::NEG_INFINITY;
        for a in 0..q {
            for k in others(a, q) {
                worst = worst.max(m[(a, k)].abs() - self.eta / self.tau2[a].abs());
            }
        }
        worst
    }
}

/// `beta_{-1} - Theta' s`.
pub fn debias(beta_rest: &DVector<f64>, theta: &DMatrix<f64>, s: &DVector<f64>) -> DVector<f64> {
    beta_rest - theta.transpose() * s
}

/// `n^{-1} sum_i (Ytilde_i - G_i)^2 G1_i^2 xhat_{i,-1} xhat_{i,-1}'`.
pub fn score_covariance(smoother: &FittedSmoother) -> DMatrix<f64> {
    let (n, p) = smoother.xhat.shape();
    let mut w = smoother.xhat.columns(1, p - 1).clone_owned();
    for i in 0..n {
        let c = smoother.residual[i] * smoother.g1[i];
        w.row_mut(i).scale_mut(c);
    }
    w.transpose() * &w / n as f64
}

/// `Theta' V Theta`, symmetrized.
pub fn estimate_variance(inv: &NodewiseInverse) -> DMatrix<f64> {
    let v = score_covariance(&inv.smoother);
    let s = inv.theta.transpose() * v * &inv.theta;
    (&s + s.transpose()) * 0.5
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasResult {
    pub beta_tilde: DVector<f64>,
    pub sigma_diag: DVector<f64>,
    pub intervals: Vec<(f64, f64)>,
    pub alpha: f64,
    pub n: usize,
}

pub fn marginal_ci(
    beta_tilde: &DVector<f64>,
    sigma_diag: &DVector<f64>,
    n: usize,
    alpha: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    Ok(beta_tilde
        .iter()
        .zip(sigma_diag.iter())
        .map(|(b, s)| {
            let half = z * (s.max(0.0) / n as f64).sqrt();
            (b - half, b + half)
        })
        .collect())
}

/// Debiased estimate, variance diagonal and intervals from a built inverse.
pub fn infer(beta: &Coefficient, inv: &NodewiseInverse, alpha: f64) -> Result<DebiasResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let beta_tilde = debias(beta.rest(), &inv.theta, &inv.smoother.score);
    let sigma_diag = estimate_variance(inv).diagonal();
    let n = inv.smoother.n();
    let intervals = marginal_ci(&beta_tilde, &sigma_diag, n, alpha)?;
    Ok(DebiasResult {
        beta_tilde,
        sigma_diag,
        intervals,
        alpha,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{modify_response, ResponseMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, p: usize, seed: u64) -> (Dataset, ModifiedResponse) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.5..1.5));
        let a = DVector::from_fn(n, |i, _| (i % 2) as f64);
        let y = DVector::from_fn(n, |i, _| {
            let u: f64 = x[(i, 0)] - 0.5 * x[(i, 1)];
            (a[i] - 0.5) * 6.0 * u.tanh() + rng.gen_range(-0.5..0.5)
        });
        let d = Dataset::new(x, a, y, None).unwrap();
        let yt = modify_response(&d, ResponseMode::Randomized, None).unwrap();
        (d, yt)
    }

    fn random_spd(q: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(q + 3, q, |_, _| rng.gen_range(-1.0..1.0));
        b.transpose() * b / 3.0
    }

    #[test]
    fn quantile_reference_values() {
        // references from mpmath at 40 digits
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054_2).abs() < 1e-12);
        assert!((normal_quantile(1e-10) / -6.361_340_902_404_056 - 1.0).abs() < 1e-9);
        assert!(normal_quantile(0.5).abs() < 1e-15);
        assert!((normal_quantile(0.841_344_746_068_542_9) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn large_eta_gives_zero_and_diagonal_theta() {
        let (d, yt) = toy(60, 5, 1);
        let beta = Coefficient::new(DVector::from_vec(vec![-0.5, 0.0, 0.0, 0.0]));
        let inv = build_theta(&beta, &d, &yt, Eta::Fixed(1e6)).unwrap();
        assert!(inv.d.iter().all(|v| *v == 0.0));
        for a in 0..4 {
            assert!((inv.tau2[a] - inv.smoother.j1[(a, a)]).abs() < 1e-12);
            for k in 0..4 {
                if k != a {
                    assert_eq!(inv.theta[(k, a)], 0.0);
                }
            }
        }
    }

    #[test]
    fn orthogonal_moments_give_zero() {
        let j1 = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 1.5]));
        for a in 0..3 {
            assert!(nodewise_dantzig(&j1, a, 1e-3).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn small_eta_solution_is_feasible_and_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let j1 = random_spd(4, &mut rng);
            let eta = rng.gen_range(0.01..0.3);
            for a in 0..4 {
                let v = nodewise_dantzig(&j1, a, eta).unwrap();
                assert!(nodewise_residual(&j1, a, v.as_slice()) <= eta + 1e-8);
                // the exact regression solution is feasible, so cannot beat it
                let idx: Vec<usize> = (0..4).filter(|&k| k != a).collect();
                let m = DMatrix::from_fn(3, 3, |r, c| j1[(idx[r], idx[c])]);
                let b = DVector::from_fn(3, |r, _| j1[(idx[r], a)]);
                let exact = m.lu().solve(&b).unwrap();
                assert!(v.lp_norm(1) <= exact.lp_norm(1) + 1e-9);
            }
        }
    }

    #[test]
    fn theta_identities_on_data() {
        let (d, yt) = toy(120, 6, 2);
        let beta = Coefficient::new(DVector::from_vec(vec![-0.45, 0.05, 0.0, 0.0, 0.0]));
        for eta in [Eta::Fixed(0.05), Eta::Fixed(0.5), Eta::BandwidthMultiple(25.0)] {
            let inv = build_theta(&beta, &d, &yt, eta).unwrap();
            let m = inv.theta_j1();
            for a in 0..5 {
                assert!((m[(a, a)] - 1.0).abs() < 1e-8);
            }
            assert!(inv.max_row_excess() <= 1e-8);
        }
    }

    #[test]
    fn debias_arithmetic() {
        let b = DVector::from_vec(vec![0.3, -0.2, 0.0]);
        let eye = DMatrix::identity(3, 3);
        assert_eq!(debias(&b, &eye, &DVector::zeros(3)), b);
        let s = DVector::from_element(3, 0.1);
        let out = debias(&b, &eye, &s);
        assert!((out - b.add_scalar(-0.1)).amax() < 1e-15);
    }

    #[test]
    fn variance_is_psd_and_zero_without_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..20 {
            let (d, yt) = toy(50, 5, seed);
            let rest: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.6..0.6)).collect();
            let inv = build_theta(&Coefficient::new(DVector::from_vec(rest)), &d, &yt, Eta::Fixed(0.3)).unwrap();
            let s = estimate_variance(&inv);
            assert!((&s - s.transpose()).amax() < 1e-10);
            assert!(s.clone().symmetric_eigenvalues().min() >= -1e-10);
            assert!(s.diagonal().iter().all(|v| *v >= 0.0));
            let mut z = inv.clone();
            z.smoother.residual.fill(0.0);
            assert_eq!(estimate_variance(&z).amax(), 0.0);
            z = inv.clone();
            z.theta = DMatrix::identity(4, 4);
            assert!((estimate_variance(&z) - score_covariance(&inv.smoother)).amax() < 1e-12);
        }
    }

    #[test]
    fn interval_examples() {
        let b = DVector::from_vec(vec![0.5, -1.0]);
        let s = DVector::from_vec(vec![0.0, 40.0]);
        let alpha = 1.0 - 0.682_689_492_137_085_9;
        let ci = marginal_ci(&b, &s, 40, alpha).unwrap();
        assert_eq!(ci[0], (0.5, 0.5));
        assert!((ci[1].0 + 2.0).abs() < 1e-9 && ci[1].1.abs() < 1e-9);
        assert_eq!(marginal_ci(&b, &s, 40, 0.0), Err(Error::AlphaOutOfRange(0.0)));
        assert_eq!(marginal_ci(&b, &s, 40, 1.0), Err(Error::AlphaOutOfRange(1.0)));
    }
}
