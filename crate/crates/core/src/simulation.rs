//! Simulation designs, replicate scoring and seeded Monte Carlo campaigns.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::bootstrap::{group_test, BootstrapContext, GroupTestSpec};
use crate::data::{modify_response, Coefficient, Dataset, ResponseMode};
use crate::debias::{infer, theta_from_smoother, Eta, FittedSmoother};
use crate::error::{Error, Result};
use crate::estimator::{fit_cv, EstimatorConfig};
use crate::kernel::{bandwidth, nw_predict, KernelConfig};
use crate::observational::{obs_pipeline, PropensityConfig};
use crate::rng::{derive_seed, stream, Domain};

/// `20 (logistic(u) - 1/2)`.
pub fn f0_logistic20(u: f64) -> f64 {
    20.0 * (1.0 / (1.0 + (-u).exp()) - 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Independent standard normal covariates, quadratic main effect.
    GaussianIid,
    /// AR(0.5) normal covariates with three discrete `{-1, 0, 1}` columns at
    /// positions 5, p-1 and p; quadratic main effect.
    ArDiscrete,
    /// Independent `U(-1, 1)` covariates, linear main effect plus one.
    UniformNonindex,
}

impl Design {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gaussian_iid" => Ok(Design::GaussianIid),
            "ar_discrete" => Ok(Design::ArDiscrete),
            "uniform_nonindex" => Ok(Design::UniformNonindex),
            other => Err(Error::UnknownDesign(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Design::GaussianIid => "gaussian_iid",
            Design::ArDiscrete => "ar_discrete",
            Design::UniformNonindex => "uniform_nonindex",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logistic20,
    /// `20 (1 - x1^2 - x2^2)(x1^2 + x2^2 - 0.36)`; not an index model.
    NonindexRing,
    Linear,
}

impl Link {
    /// Treatment-covariate interaction `f0` at covariate row `x`.
    pub fn effect(self, x: &[f64], beta0: &Coefficient) -> f64 {
        match self {
            Link::Logistic20 => f0_logistic20(index_of(x, beta0)),
            Link::Linear => index_of(x, beta0),
            Link::NonindexRing => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                20.0 * (1.0 - r2) * (r2 - 0.36)
            }
        }
    }
}

fn index_of(x: &[f64], beta: &Coefficient) -> f64 {
    x[0] + beta
        .rest()
        .iter()
        .zip(&x[1..])
        .map(|(b, v)| b * v)
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentMechanism {
    /// `A ~ Bernoulli(1/2)`.
    Randomized,
    /// `P(A = 1 | x) = logistic(x' xi)`.
    Logistic { xi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub design: Design,
    pub n: usize,
    pub p: usize,
    pub beta0: Coefficient,
    pub eta_main: DVector<f64>,
    pub link: Link,
    pub treatment: TreatmentMechanism,
    pub seed: u64,
}

fn padded(head: &[f64], len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[..head.len()].copy_from_slice(head);
    v
}

impl ScenarioSpec {
    /// The main index-model design with standard normal covariates.
    pub fn setting_a(n: usize, p: usize, seed: u64) -> Self {
        Self {
            design: Design::GaussianIid,
            n,
            p,
            beta0: Coefficient::from_full(&padded(&[1.0, -1.0, -0.5, 0.4, -0.3], p)).unwrap(),
            eta_main: DVector::from_vec(padded(&[0.5, 0.5, -0.5, -0.5], p)),
            link: Link::Logistic20,
            treatment: TreatmentMechanism::Randomized,
            seed,
        }
    }

    /// Correlated design with three discrete covariates.
    pub fn correlated_discrete(n: usize, p: usize, seed: u64) -> Self {
        Self {
            design: Design::ArDiscrete,
            beta0: Coefficient::from_full(&padded(&[1.0, -1.0, -0.8, 0.6, -0.5], p)).unwrap(),
            ..Self::setting_a(n, p, seed)
        }
    }

    /// Uniform covariates with a ring-shaped, non-index interaction.
    pub fn nonindex(n: usize, p: usize, seed: u64) -> Self {
        Self {
            design: Design::UniformNonindex,
            eta_main: DVector::from_vec(padded(&[2.0, 1.0, 0.5], p)),
            link: Link::NonindexRing,
            ..Self::setting_a(n, p, seed)
        }
    }

    /// Setting A with treatment assigned by a logistic propensity.
    pub fn observational(n: usize, p: usize, seed: u64) -> Self {
        Self {
            treatment: TreatmentMechanism::Logistic {
                xi: padded(&[0.2, 0.2, -0.4], p),
            },
            ..Self::setting_a(n, p, seed)
        }
    }

    /// Linear interaction with no main effect.
    pub fn linear(n: usize, p: usize, seed: u64) -> Self {
        Self {
            eta_main: DVector::zeros(p),
            link: Link::Linear,
            ..Self::setting_a(n, p, seed)
        }
    }

    pub fn from_design(design: &str, n: usize, p: usize, seed: u64) -> Result<Self> {
        Ok(match Design::parse(design)? {
            Design::GaussianIid => Self::setting_a(n, p, seed),
            Design::ArDiscrete => Self::correlated_discrete(n, p, seed),
            Design::UniformNonindex => Self::nonindex(n, p, seed),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 5 || self.n < 2 {
            return Err(Error::InvalidConfig(format!(
                "scenario needs n >= 2 and p >= 5, got n = {}, p = {}",
                self.n, self.p
            )));
        }
        if self.beta0.p() != self.p || self.eta_main.len() != self.p {
            return Err(Error::DimensionMismatch("scenario vectors disagree with p".into()));
        }
        if let TreatmentMechanism::Logistic { xi } = &self.treatment {
            if xi.len() != self.p {
                return Err(Error::DimensionMismatch("xi length differs from p".into()));
            }
        }
        Ok(())
    }

    /// Draws `m` covariate rows from the design distribution.
    pub fn sample_covariates(&self, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let p = self.p;
        match self.design {
            Design::GaussianIid => {
                DMatrix::from_fn(m, p, |_, _| rng.sample::<f64, _>(StandardNormal))
            }
            Design::UniformNonindex => DMatrix::from_fn(m, p, |_, _| rng.gen_range(-1.0..1.0)),
            Design::ArDiscrete => {
                let q = p - 3;
                let sigma = DMatrix::from_fn(q, q, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
                let chol = sigma.cholesky().expect("AR(0.5) covariance is positive definite");
                let l = chol.l();
                let discrete = [4, p - 2, p - 1];
                let continuous: Vec<usize> = (0..p).filter(|j| !discrete.contains(j)).collect();
                let mut x = DMatrix::zeros(m, p);
                let mut z = DVector::zeros(q);
                for i in 0..m {
                    for v in z.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    let w = &l * &z;
                    for (k, &j) in continuous.iter().enumerate() {
                        x[(i, j)] = w[k];
                    }
                    for &j in &discrete {
                        x[(i, j)] = rng.gen_range(-1i32..=1) as f64;
                    }
                }
                x
            }
        }
    }

    fn main_effect(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.eta_main.iter().zip(x).map(|(e, v)| e * v).sum();
        match self.design {
            Design::GaussianIid | Design::ArDiscrete => lin * lin,
            Design::UniformNonindex => 1.0 + lin,
        }
    }

    /// Interaction `f0` at each covariate row.
    pub fn effects(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                self.link.effect(&row, &self.beta0)
            })
            .collect()
    }

    /// `P(A = 1 | x)` for each row.
    pub fn propensities(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match &self.treatment {
            TreatmentMechanism::Randomized => vec![0.5; x.nrows()],
            TreatmentMechanism::Logistic { xi } => (0..x.nrows())
                .map(|i| {
                    let s: f64 = x.row(i).iter().zip(xi).map(|(a, b)| a * b).sum();
                    1.0 / (1.0 + (-s).exp())
                })
                .collect(),
        }
    }
}

/// Replicate `rep` of the scenario; identical for identical `(seed, rep)`.
pub fn generate(spec: &ScenarioSpec, rep: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Domain::Replicate, rep);
    let n = spec.n;
    let x = spec.sample_covariates(n, &mut rng);
    let probs = spec.propensities(&x);
    let a: Vec<f64> = probs
        .iter()
        .map(|&pr| if rng.gen::<f64>() < pr { 1.0 } else { 0.0 })
        .collect();
    let effects = spec.effects(&x);
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let eps: f64 = rng.sample(StandardNormal);
            spec.main_effect(&row) + (a[i] - 0.5) * effects[i] + eps
        })
        .collect();
    Dataset::new(x, DVector::from_vec(a), DVector::from_vec(y), None)
}

impl ScenarioSpec {
    /// Value of the optimal rule where a reference exists: 3.423 for the
    /// Gaussian index design and 2.443 for the ring design, both randomized.
    pub fn reference_value(&self) -> Option<f64> {
        if self.treatment != TreatmentMechanism::Randomized {
            return None;
        }
        match (self.design, self.link) {
            (Design::GaussianIid, Link::Logistic20) => Some(3.423),
            (Design::UniformNonindex, Link::NonindexRing) => Some(2.443),
            _ => None,
        }
    }

    /// `1(f0 > 0)` at each row.
    pub fn optimal_rule(&self, x: &DMatrix<f64>) -> Vec<bool> {
        self.effects(x).into_iter().map(|f| f > 0.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub l1: f64,
    pub l2: f64,
    pub false_negatives: usize,
    pub false_positives: usize,
}

/// Errors over all `p` coordinates and selection counts; zero means exactly 0.
pub fn support_metrics(beta_hat: &Coefficient, beta0: &Coefficient) -> Result<SupportMetrics> {
    if beta_hat.p() != beta0.p() {
        return Err(Error::LengthMismatch {
            left: beta_hat.p(),
            right: beta0.p(),
        });
    }
    let (bh, b0) = (beta_hat.full(), beta0.full());
    let diff = &bh - &b0;
    let pairs = || bh.iter().zip(b0.iter());
    Ok(SupportMetrics {
        l1: diff.lp_norm(1),
        l2: diff.norm(),
        false_negatives: pairs().filter(|(h, t)| **t != 0.0 && **h == 0.0).count(),
        false_positives: pairs().filter(|(h, t)| **t == 0.0 && **h != 0.0).count(),
    })
}

/// Mean outcome among subjects whose treatment agrees with the rule.
pub fn value_estimate(d: &Dataset, rule: &[bool]) -> Result<f64> {
    if rule.len() != d.n() {
        return Err(Error::LengthMismatch {
            left: rule.len(),
            right: d.n(),
        });
    }
    let (mut total, mut count) = (0.0, 0usize);
    for (i, &r) in rule.iter().enumerate() {
        if (d.treatment()[i] == 1.0) == r {
            total += d.outcome()[i];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoMatches);
    }
    Ok(total / count as f64)
}

/// The plug-in rule `1(G(x'beta) > 0)` with the smoother of the training
/// sample.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRule {
    pub beta: Coefficient,
    pub index: Vec<f64>,
    pub response: Vec<f64>,
    pub bandwidth: f64,
}

impl IndexRule {
    pub fn new(beta: &Coefficient, d: &Dataset, ytilde: &DVector<f64>) -> Self {
        let index: Vec<f64> = beta.index_values(d.covariates()).iter().copied().collect();
        let bandwidth = bandwidth(&index, KernelConfig::default().bandwidth_floor);
        Self {
            beta: beta.clone(),
            index,
            response: ytilde.iter().copied().collect(),
            bandwidth,
        }
    }

    pub fn link_estimates(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.beta
            .index_values(x)
            .iter()
            .map(|&t| nw_predict(t, &self.index, &self.response, self.bandwidth))
            .collect()
    }

    pub fn recommend(&self, x: &DMatrix<f64>) -> Result<Vec<bool>> {
        Ok(self.link_estimates(x)?.into_iter().map(|g| g > 0.0).collect())
    }
}

/// Evaluation sample of `eval_n` fresh covariate rows for `seed`.
pub fn evaluation_sample(spec: &ScenarioSpec, eval_n: usize, seed: u64) -> DMatrix<f64> {
    spec.sample_covariates(eval_n, &mut stream(seed, Domain::Evaluation, 0))
}

/// Share of a fresh sample on which `rule` agrees with `1(f0 > 0)`.
pub fn match_ratio<F>(spec: &ScenarioSpec, rule: F, eval_n: usize, seed: u64) -> Result<f64>
where
    F: Fn(&DMatrix<f64>) -> Result<Vec<bool>>,
{
    if eval_n == 0 {
        return Err(Error::InvalidConfig("evaluation sample must be nonempty".into()));
    }
    let x = evaluation_sample(spec, eval_n, seed);
    let truth = spec.optimal_rule(&x);
    let pred = rule(&x)?;
    if pred.len() != eval_n {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: eval_n,
        });
    }
    let agree = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / eval_n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSettings {
    /// Multiples of the bandwidth used for eta.
    pub eta_multiples: Vec<f64>,
    /// Groups of coefficient positions in `2..=p`.
    pub groups: Vec<Vec<usize>>,
    pub alpha: f64,
    pub draws: usize,
    /// Coefficient positions whose marginal interval coverage is recorded.
    pub coverage: Vec<usize>,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            eta_multiples: vec![25.0],
            groups: vec![vec![6, 7, 8, 9], vec![2, 6, 7, 8, 9]],
            alpha: 0.05,
            draws: 500,
            coverage: vec![2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub reps: usize,
    pub estimator: EstimatorConfig,
    pub inference: Option<InferenceSettings>,
    /// Size of the fresh sample for the match ratio; zero skips value and
    /// match ratio.
    pub eval_n: usize,
    /// Estimate the propensity instead of using `1/2`.
    pub observational: bool,
    pub propensity_lambda: Option<f64>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            reps: 100,
            estimator: EstimatorConfig::default(),
            inference: None,
            eval_n: 10_000,
            observational: false,
            propensity_lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaRecord {
    pub eta_multiple: f64,
    pub eta: f64,
    pub reject: Vec<bool>,
    pub p_values: Vec<f64>,
    pub statistics: Vec<f64>,
    pub covered: Vec<bool>,
    pub beta_tilde: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: u64,
    pub lambda: f64,
    pub metrics: SupportMetrics,
    pub beta: Vec<f64>,
    pub value: Option<f64>,
    pub match_ratio: Option<f64>,
    pub propensity_lambda: Option<f64>,
    pub poor_overlap: bool,
    pub inference: Vec<EtaRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: u64,
    pub code: String,
    pub message: String,
}

/// One replicate: generate, fit, score and optionally test.
pub fn run_replicate(spec: &ScenarioSpec, cfg: &MonteCarloConfig, rep: u64) -> Result<RepRecord> {
    let d = generate(spec, rep)?;
    let est = EstimatorConfig {
        seed: derive_seed(cfg.estimator.seed, Domain::Folds, rep),
        ..cfg.estimator.clone()
    };
    let (ytilde, fit, prop_lambda, poor_overlap) = if cfg.observational {
        let pcfg = PropensityConfig {
            seed: derive_seed(cfg.estimator.seed, Domain::PropensityFolds, rep),
            ..PropensityConfig::default()
        };
        let o = obs_pipeline(&d, cfg.propensity_lambda, &est, &pcfg)?;
        (o.ytilde, o.fit, Some(o.propensity.lambda_p), o.poor_overlap)
    } else {
        let y = modify_response(&d, ResponseMode::Randomized, None)?;
        let (f, _) = fit_cv(&d, &y, None, &est)?;
        (y, f, None, false)
    };
    let metrics = support_metrics(&fit.beta, &spec.beta0)?;
    let (value, mr) = if cfg.eval_n > 0 {
        let rule = IndexRule::new(&fit.beta, &d, &ytilde.values);
        let v = value_estimate(&d, &rule.recommend(d.covariates())?)?;
        let eval_seed = derive_seed(spec.seed, Domain::Evaluation, rep);
        let m = match_ratio(spec, |x| rule.recommend(x), cfg.eval_n, eval_seed)?;
        (Some(v), Some(m))
    } else {
        (None, None)
    };
    let mut inference = Vec::new();
    if let Some(inf) = &cfg.inference {
        let smoother = FittedSmoother::new(&fit.beta, &d, &ytilde)?;
        let truth = spec.beta0.full();
        for &m in &inf.eta_multiples {
            let eta = Eta::BandwidthMultiple(m).resolve(smoother.bandwidth)?;
            let inv = theta_from_smoother(smoother.clone(), eta)?;
            let deb = infer(&fit.beta, &inv, inf.alpha)?;
            let ctx = BootstrapContext::new(&inv, &deb);
            let mut rec = EtaRecord {
                eta_multiple: m,
                eta,
                reject: Vec::new(),
                p_values: Vec::new(),
                statistics: Vec::new(),
                covered: Vec::new(),
                beta_tilde: Vec::new(),
            };
            for g in &inf.groups {
                let t = group_test(
                    &ctx,
                    &GroupTestSpec {
                        group: g.clone(),
                        alpha: inf.alpha,
                        draws: inf.draws,
                        seed: derive_seed(cfg.estimator.seed, Domain::Bootstrap, rep),
                    },
                )?;
                rec.reject.push(t.reject);
                rec.p_values.push(t.p_value);
                rec.statistics.push(t.statistic);
            }
            for &j in &inf.coverage {
                if j < 2 || j > spec.p {
                    return Err(Error::GroupIndexOutOfRange(j));
                }
                let (lo, hi) = deb.intervals[j - 2];
                rec.covered.push(lo <= truth[j - 1] && truth[j - 1] <= hi);
                rec.beta_tilde.push(deb.beta_tilde[j - 2]);
            }
            inference.push(rec);
        }
    }
    Ok(RepRecord {
        rep,
        lambda: fit.lambda_used,
        metrics,
        beta: fit.beta.full().iter().copied().collect(),
        value,
        match_ratio: mr,
        propensity_lambda: prop_lambda,
        poor_overlap,
        inference,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    /// Mean and `sd / sqrt(m)`; `se = 0` for a single value.
    pub fn of(values: &[f64]) -> Option<Self> {
        let m = values.len();
        if m == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let se = if m > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, se })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSummary {
    pub eta_multiple: f64,
    /// Per group, in the order of the settings.
    pub rejection_rate: Vec<f64>,
    /// Per coverage coordinate.
    pub coverage: Vec<f64>,
    pub beta_tilde_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub design: Design,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub reps: usize,
    pub failures: usize,
    pub l1: Option<MeanSe>,
    pub l2: Option<MeanSe>,
    pub false_negatives: Option<MeanSe>,
    pub false_positives: Option<MeanSe>,
    pub value: Option<MeanSe>,
    /// `V - reference` when the scenario has a reference value.
    pub value_bias: Option<MeanSe>,
    pub match_ratio: Option<MeanSe>,
    pub inference: Vec<EtaSummary>,
}

/// Aggregates replicate records; the result does not depend on their order.
pub fn aggregate(spec: &ScenarioSpec, records: &[RepRecord], failures: usize) -> MonteCarloReport {
    let mut recs: Vec<&RepRecord> = records.iter().collect();
    recs.sort_by_key(|r| r.rep);
    let col = |f: &dyn Fn(&RepRecord) -> Option<f64>| -> Vec<f64> { recs.iter().filter_map(|r| f(r)).collect() };
    let values = col(&|r| r.value);
    let reference = spec.reference_value();
    let bias: Vec<f64> = match reference {
        Some(v0) => values.iter().map(|v| v - v0).collect(),
        None => Vec::new(),
    };
    let mut inference = Vec::new();
    if let Some(first) = recs.first() {
        for (k, e) in first.inference.iter().enumerate() {
            let rate = |pick: &dyn Fn(&EtaRecord) -> &Vec<bool>, i: usize| {
                recs.iter().filter(|r| pick(&r.inference[k])[i]).count() as f64 / recs.len() as f64
            };
            inference.push(EtaSummary {
                eta_multiple: e.eta_multiple,
                rejection_rate: (0..e.reject.len()).map(|i| rate(&|x| &x.reject, i)).collect(),
                coverage: (0..e.covered.len()).map(|i| rate(&|x| &x.covered, i)).collect(),
                beta_tilde_mean: (0..e.beta_tilde.len())
                    .map(|i| recs.iter().map(|r| r.inference[k].beta_tilde[i]).sum::<f64>() / recs.len() as f64)
                    .collect(),
            });
        }
    }
    MonteCarloReport {
        design: spec.design,
        n: spec.n,
        p: spec.p,
        seed: spec.seed,
        reps: recs.len(),
        failures,
        l1: MeanSe::of(&col(&|r| Some(r.metrics.l1))),
        l2: MeanSe::of(&col(&|r| Some(r.metrics.l2))),
        false_negatives: MeanSe::of(&col(&|r| Some(r.metrics.false_negatives as f64))),
        false_positives: MeanSe::of(&col(&|r| Some(r.metrics.false_positives as f64))),
        value: MeanSe::of(&values),
        value_bias: MeanSe::of(&bias),
        match_ratio: MeanSe::of(&col(&|r| r.match_ratio)),
        inference,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub report: MonteCarloReport,
    pub records: Vec<RepRecord>,
    pub failures: Vec<RepFailure>,
}

/// Runs replicates `0..reps` in parallel; a failed replicate is recorded
/// and the campaign continues.
pub fn run_monte_carlo(spec: &ScenarioSpec, cfg: &MonteCarloConfig) -> Result<Campaign> {
    if cfg.reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    spec.validate()?;
    cfg.estimator.validate()?;
    let outcomes: Vec<(u64, Result<RepRecord>)> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| (rep, run_replicate(spec, cfg, rep)))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, o) in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(e) => failures.push(RepFailure {
                rep,
                code: e.code().to_string(),
                message: e.to_string(),
            }),
        }
    }
    let report = aggregate(spec, &records, failures.len());
    Ok(Campaign {
        report,
        records,
        failures,
    })
}

fn csv_cell(m: Option<MeanSe>) -> [String; 2] {
    match m {
        Some(m) => [m.mean.to_string(), m.se.to_string()],
        None => [String::new(), String::new()],
    }
}

/// One CSV row per scenario.
pub fn write_report_csv<W: std::io::Write>(reports: &[MonteCarloReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "design", "n", "p", "seed", "reps", "failures", "l1_mean", "l1_se", "l2_mean", "l2_se", "fn_mean", "fn_se",
        "fp_mean", "fp_se", "value_mean", "value_se", "value_bias_mean", "value_bias_se", "match_ratio_mean",
        "match_ratio_se", "rejection_rate",
    ])?;
    for r in reports {
        let mut row = vec![
            r.design.name().to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.seed.to_string(),
            r.reps.to_string(),
            r.failures.to_string(),
        ];
        for m in [r.l1, r.l2, r.false_negatives, r.false_positives, r.value, r.value_bias, r.match_ratio] {
            row.extend(csv_cell(m));
        }
        let rates: Vec<String> = r
            .inference
            .iter()
            .map(|e| {
                let g: Vec<String> = e.rejection_rate.iter().map(|v| v.to_string()).collect();
                format!("{}h:{}", e.eta_multiple, g.join("/"))
            })
            .collect();
        row.push(rates.join(";"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// File stem embedding scenario, n, p and seed.
pub fn report_stem(report: &MonteCarloReport) -> String {
    format!("{}_n{}_p{}_seed{}", report.design.name(), report.n, report.p, report.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn link_values() {
        assert_eq!(f0_logistic20(0.0), 0.0);
        assert!((f0_logistic20(1.0) - 4.6211715726000976).abs() < 1e-12);
        assert!((f0_logistic20(-1.0) + 4.6211715726000976).abs() < 1e-12);
        let b = Coefficient::from_full(&[1.0, 2.0]).unwrap();
        assert_eq!(Link::Linear.effect(&[1.0, 1.0], &b), 3.0);
        assert!((Link::NonindexRing.effect(&[0.5, 0.5], &b) - 20.0 * 0.5 * 0.14).abs() < 1e-12);
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
        let h = (b - a) / m as f64;
        let mut s = f(a) + f(b);
        for k in 1..m {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn reference_values_match_quadrature() {
        // V = E main + E|f0| / 2 with the index x'beta0 ~ N(0, 2.5)
        let sd = 2.5f64.sqrt();
        let dens = |u: f64| (-0.5 * (u / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let v = 1.0 + 0.5 * simpson(|u| f0_logistic20(u).abs() * dens(u), -12.0 * sd, 12.0 * sd, 20_000);
        let spec = ScenarioSpec::setting_a(10, 10, 0);
        // references come from 1e7-draw simulations, standard error about 1e-3
        assert!((v - spec.reference_value().unwrap()).abs() < 2e-3, "{v}");
        // ring design: 1 + E|f0(x1, x2)| / 2 over the uniform square
        let ring = simpson(
            |a| simpson(|b| Link::NonindexRing.effect(&[a, b], &spec.beta0).abs() / 4.0, -1.0, 1.0, 400),
            -1.0,
            1.0,
            400,
        );
        let v2 = 1.0 + 0.5 * ring;
        assert!((v2 - ScenarioSpec::nonindex(10, 10, 0).reference_value().unwrap()).abs() < 2e-3, "{v2}");
        assert_eq!(ScenarioSpec::observational(10, 10, 0).reference_value(), None);
    }

    #[test]
    fn generated_moments() {
        let spec = ScenarioSpec::setting_a(10_000, 6, 4);
        let d = generate(&spec, 0).unwrap();
        assert!((d.treatment().mean() - 0.5).abs() < 0.02);
        // E Y = E (x'eta)^2 = ||eta||^2 = 1
        assert!((d.outcome().mean() - 1.0).abs() < 0.06);
        for j in 0..6 {
            let c = d.covariates().column(j);
            assert!(c.mean().abs() < 0.04);
            assert!((c.variance() - 1.0).abs() < 0.05);
        }
        let obs = generate(&ScenarioSpec::observational(10_000, 6, 4), 0).unwrap();
        // logistic(x'xi) averages to one half by symmetry
        assert!((obs.treatment().mean() - 0.5).abs() < 0.02);
        let x = obs.covariates();
        let lift: f64 = (0..10_000).map(|i| (obs.treatment()[i] - 0.5) * x[(i, 2)]).sum::<f64>() / 1e4;
        assert!(lift < -0.03);
    }

    #[test]
    fn correlated_design_structure() {
        let spec = ScenarioSpec::correlated_discrete(5000, 10, 1);
        let d = generate(&spec, 0).unwrap();
        let x = d.covariates();
        for j in [4, 8, 9] {
            assert!(x.column(j).iter().all(|v| [-1.0, 0.0, 1.0].contains(v)));
        }
        let cor = |a: usize, b: usize| {
            let (ca, cb) = (x.column(a), x.column(b));
            let (ma, mb) = (ca.mean(), cb.mean());
            let cov: f64 = ca.iter().zip(cb.iter()).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / 5000.0;
            cov / (ca.variance() * cb.variance()).sqrt()
        };
        assert!((cor(0, 1) - 0.5).abs() < 0.05);
        assert!((cor(0, 2) - 0.25).abs() < 0.05);
        // continuous neighbours across the discrete column keep their AR lag
        assert!((cor(3, 5) - 0.5).abs() < 0.05);
        assert!(cor(4, 3).abs() < 0.05);
        let u = generate(&ScenarioSpec::nonindex(2000, 5, 1), 0).unwrap();
        assert!(u.covariates().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn generation_is_keyed() {
        let spec = ScenarioSpec::setting_a(20, 5, 9);
        assert_eq!(generate(&spec, 3).unwrap(), generate(&spec, 3).unwrap());
        let mut seen = HashSet::new();
        for rep in 0..100 {
            let d = generate(&spec, rep).unwrap();
            let bits: Vec<u64> = d.outcome().iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(bits));
        }
        let other = ScenarioSpec::setting_a(20, 5, 10);
        assert_ne!(generate(&spec, 0).unwrap(), generate(&other, 0).unwrap());
    }

    #[test]
    fn support_metric_examples() {
        let b0 = Coefficient::from_full(&[1.0, -1.0, 0.5, 0.0, 0.0]).unwrap();
        let m = support_metrics(&b0, &b0).unwrap();
        assert_eq!(m, SupportMetrics { l1: 0.0, l2: 0.0, false_negatives: 0, false_positives: 0 });
        let bh = Coefficient::from_full(&[1.0, 0.0, 0.5, 0.3, -0.4]).unwrap();
        let m = support_metrics(&bh, &b0).unwrap();
        assert_eq!(m.false_negatives, 1);
        assert_eq!(m.false_positives, 2);
        assert!((m.l1 - 1.7).abs() < 1e-12);
        assert!((m.l2 - (1.0f64 + 0.09 + 0.16).sqrt()).abs() < 1e-12);
        let short = Coefficient::from_full(&[1.0, 0.0]).unwrap();
        assert_eq!(support_metrics(&short, &b0), Err(Error::LengthMismatch { left: 2, right: 5 }));
    }

    #[test]
    fn value_examples() {
        let d = generate(&ScenarioSpec::setting_a(200, 5, 2), 0).unwrap();
        let follow: Vec<bool> = d.treatment().iter().map(|a| *a == 1.0).collect();
        assert!((value_estimate(&d, &follow).unwrap() - d.outcome().mean()).abs() < 1e-12);
        let against: Vec<bool> = follow.iter().map(|b| !b).collect();
        assert_eq!(value_estimate(&d, &against), Err(Error::NoMatches));
        let treated = d.treatment().sum() as usize;
        let v1 = value_estimate(&d, &[true; 200]).unwrap();
        let v0 = value_estimate(&d, &[false; 200]).unwrap();
        assert!(v1.is_finite() && v0.is_finite());
        let mix = (v1 * treated as f64 + v0 * (200 - treated) as f64) / 200.0;
        assert!((mix - d.outcome().mean()).abs() < 1e-12);
    }

    #[test]
    fn match_ratio_examples() {
        let spec = ScenarioSpec::setting_a(50, 6, 3);
        let truth = |x: &DMatrix<f64>| Ok(spec.optimal_rule(x));
        let flip = |x: &DMatrix<f64>| Ok(spec.optimal_rule(x).into_iter().map(|b| !b).collect());
        assert_eq!(match_ratio(&spec, truth, 1000, 1).unwrap(), 1.0);
        assert_eq!(match_ratio(&spec, flip, 1000, 1).unwrap(), 0.0);
        let d = generate(&spec, 0).unwrap();
        let y = modify_response(&d, ResponseMode::Randomized, None).unwrap();
        let rule = IndexRule::new(&spec.beta0, &d, &y.values);
        let a = match_ratio(&spec, |x| rule.recommend(x), 2000, 7).unwrap();
        let b = match_ratio(&spec, |x| Ok(rule.recommend(x)?.into_iter().map(|v| !v).collect()), 2000, 7).unwrap();
        assert_eq!(a + b, 1.0);
        assert!(a > 0.8);
        assert!(match_ratio(&spec, truth, 0, 1).is_err());
    }

    fn quick_config() -> MonteCarloConfig {
        MonteCarloConfig {
            reps: 3,
            inference: Some(InferenceSettings {
                eta_multiples: vec![25.0, 1.0],
                groups: vec![vec![5, 6], vec![2, 5, 6]],
                draws: 50,
                ..InferenceSettings::default()
            }),
            eval_n: 200,
            ..MonteCarloConfig::default()
        }
    }

    #[test]
    fn campaign_is_deterministic_and_order_free() {
        let spec = ScenarioSpec::setting_a(80, 6, 5);
        let cfg = quick_config();
        let a = run_monte_carlo(&spec, &cfg).unwrap();
        let b = run_monte_carlo(&spec, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.report.reps + a.report.failures, 3);
        let mut shuffled = a.records.clone();
        shuffled.reverse();
        assert_eq!(aggregate(&spec, &shuffled, a.report.failures), a.report);
        let r = &a.report;
        assert_eq!(r.inference.len(), 2);
        for e in &r.inference {
            assert!(e.rejection_rate.iter().chain(&e.coverage).all(|v| (0.0..=1.0).contains(v)));
        }
        let mut buf = Vec::new();
        write_report_csv(std::slice::from_ref(&a.report), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(report_stem(r), "gaussian_iid_n80_p6_seed5");
    }

    #[test]
    fn single_rep_report() {
        let spec = ScenarioSpec::setting_a(80, 6, 6);
        let cfg = MonteCarloConfig {
            reps: 1,
            eval_n: 100,
            ..MonteCarloConfig::default()
        };
        let c = run_monte_carlo(&spec, &cfg).unwrap();
        let rec = run_replicate(&spec, &cfg, 0).unwrap();
        assert_eq!(c.records, vec![rec.clone()]);
        assert_eq!(c.report.l2, Some(MeanSe { mean: rec.metrics.l2, se: 0.0 }));
        assert_eq!(c.report.value_bias.unwrap().mean, rec.value.unwrap() - 3.423);
        assert!(run_monte_carlo(&spec, &MonteCarloConfig { reps: 0, ..cfg }).is_err());
    }

    #[test]
    fn failures_are_counted() {
        let spec = ScenarioSpec::setting_a(80, 6, 6);
        let cfg = MonteCarloConfig {
            reps: 2,
            eval_n: 0,
            inference: Some(InferenceSettings {
                coverage: vec![9],
                ..InferenceSettings::default()
            }),
            ..MonteCarloConfig::default()
        };
        let c = run_monte_carlo(&spec, &cfg).unwrap();
        assert_eq!(c.report.failures, 2);
        assert_eq!(c.report.reps, 0);
        assert_eq!(c.failures[0].rep, 0);
        assert_eq!(c.report.l2, None);
    }
}
