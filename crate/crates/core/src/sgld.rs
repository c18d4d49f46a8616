//! Stochastic-gradient Langevin dynamics over the natural parameters, driven
//! by the debiased estimator of the log-posterior gradient
//! M·Π(m̂ − φ | λ) + ∇log P(λ), with decreasing steps δ_n ∝ n^{-1/3} and
//! δ-weighted posterior averages.
//!
//! The debiased gradient draws one level per step, shared across all J
//! coordinates, and uses the full-data moments m̂ (no minibatching): the
//! stochasticity is in the estimator, not the data. The truncation bias of
//! the level cap is inherited from the debias layer and reported there.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::debias::{single_term_estimate, LevelPlan};
use crate::error::{Error, Result};
use crate::model::{BitState, FeatureSet, MomentVector, Oracle, ParamVector};
use crate::rng::{phase, stream_id, StreamSeed};
use crate::smc::{smc_run, FeatureSchedule, MutationKernelConfig, SmcConfig};

/// Prior over λ with a closed-form log-density gradient.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    /// P(λ) ∝ 1; gradient identically zero.
    FlatImproper,
    /// Isotropic Gaussian with the given mean and σ²·I covariance.
    Gaussian { mean: Vec<f64>, variance: f64 },
}

impl Prior {
    pub fn grad_log(&self, lambda: &ParamVector) -> Result<Vec<f64>> {
        match self {
            Prior::FlatImproper => Ok(vec![0.0; lambda.len()]),
            Prior::Gaussian { mean, variance } => {
                if mean.len() != lambda.len() {
                    return Err(Error::DimensionMismatch {
                        context: "prior mean",
                        expected: lambda.len(),
                        actual: mean.len(),
                    });
                }
                if !(*variance > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "prior variance {variance} must be positive"
                    )));
                }
                Ok(lambda
                    .values()
                    .iter()
                    .zip(mean)
                    .map(|(l, mu)| -(l - mu) / variance)
                    .collect())
            }
        }
    }
}

/// A gradient estimate with its cost and, when applicable, the level drawn.
#[derive(Clone, Debug)]
pub struct GradientSample {
    pub value: Vec<f64>,
    pub cost_evals: u64,
    pub level: Option<usize>,
}

/// Source of (estimates of) the log-posterior gradient at a given λ.
pub trait GradientSource: Send + Sync {
    fn param_len(&self) -> usize;
    fn estimate(&self, lambda: &ParamVector, seed: StreamSeed) -> Result<GradientSample>;
}

/// The debiased gradient M/p_L·Δ_L(m̂ − φ | λ) + ∇log P(λ).
pub struct DebiasedGradient {
    pub features: Arc<dyn FeatureSet>,
    pub empirical: MomentVector,
    pub observations: usize,
    pub prior: Prior,
    pub plan: LevelPlan,
    pub kernel: MutationKernelConfig,
}

impl DebiasedGradient {
    fn misfit_fn<'a>(
        features: &'a Arc<dyn FeatureSet>,
        m_hat: &'a [f64],
    ) -> impl Fn(&BitState) -> Vec<f64> + 'a {
        move |x| {
            let mut v = features.eval_vec(x);
            for (vj, mj) in v.iter_mut().zip(m_hat) {
                *vj = mj - *vj;
            }
            v
        }
    }
}

impl GradientSource for DebiasedGradient {
    fn param_len(&self) -> usize {
        self.features.len()
    }

    fn estimate(&self, lambda: &ParamVector, seed: StreamSeed) -> Result<GradientSample> {
        let mut value = self.prior.grad_log(lambda)?;
        if self.observations == 0 {
            return Ok(GradientSample { value, cost_evals: 0, level: None });
        }
        let schedule = FeatureSchedule::new(Arc::clone(&self.features), lambda.clone())?;
        let est = single_term_estimate(
            Self::misfit_fn(&self.features, self.empirical.values()),
            &schedule,
            &self.kernel,
            &self.plan,
            seed,
        )?;
        let m = self.observations as f64;
        for (g, e) in value.iter_mut().zip(&est.value) {
            *g += m * e;
        }
        Ok(GradientSample { value, cost_evals: est.cost_evals, level: Some(est.level) })
    }
}

/// Exact gradient by enumeration. For tests and sanity chains at small d.
pub struct OracleGradient {
    pub features: Arc<dyn FeatureSet>,
    pub empirical: MomentVector,
    pub observations: usize,
    pub prior: Prior,
    pub oracle_cap: usize,
}

impl GradientSource for OracleGradient {
    fn param_len(&self) -> usize {
        self.features.len()
    }

    fn estimate(&self, lambda: &ParamVector, _seed: StreamSeed) -> Result<GradientSample> {
        let mut value = self.prior.grad_log(lambda)?;
        if self.observations == 0 {
            return Ok(GradientSample { value, cost_evals: 0, level: None });
        }
        let oracle = Oracle::with_cap(self.features.as_ref(), self.oracle_cap);
        let moments = oracle.moments(lambda)?;
        let m = self.observations as f64;
        for ((g, m_hat), pi) in value
            .iter_mut()
            .zip(self.empirical.values())
            .zip(moments.values())
        {
            *g += m * (m_hat - pi);
        }
        Ok(GradientSample {
            value,
            cost_evals: 1 << self.features.dim(),
            level: None,
        })
    }
}

/// Biased-but-consistent drift M·η^N_J(m̂ − φ | λ) + ∇log P(λ) from a plain
/// SMC run. Experimental: convergence of SGLD with this drift has no
/// supporting theory; it is provided for comparison only.
pub struct ConsistentGradient {
    pub features: Arc<dyn FeatureSet>,
    pub empirical: MomentVector,
    pub observations: usize,
    pub prior: Prior,
    pub smc: SmcConfig,
}

impl GradientSource for ConsistentGradient {
    fn param_len(&self) -> usize {
        self.features.len()
    }

    fn estimate(&self, lambda: &ParamVector, seed: StreamSeed) -> Result<GradientSample> {
        let mut value = self.prior.grad_log(lambda)?;
        if self.observations == 0 {
            return Ok(GradientSample { value, cost_evals: 0, level: None });
        }
        let schedule = FeatureSchedule::new(Arc::clone(&self.features), lambda.clone())?;
        let pop = smc_run(&schedule, &self.smc, seed)?;
        let est = pop.estimate_target(DebiasedGradient::misfit_fn(
            &self.features,
            self.empirical.values(),
        ));
        let m = self.observations as f64;
        for (g, e) in value.iter_mut().zip(&est) {
            *g += m * e;
        }
        Ok(GradientSample { value, cost_evals: pop.cost_evals(), level: None })
    }
}

/// Chain configuration: K steps of
/// λ^{n+1} = λ^n + (δ_n/2)·ĝ(λ^n) + N(0, δ_n·I), δ_n = δ_0·n^{-exponent}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainConfig {
    pub steps: usize,
    pub delta0: f64,
    pub exponent: f64,
    pub divergence_bound: f64,
    /// Multiplier on the injected noise; a test hook (1.0 in ordinary use).
    pub noise_scale: f64,
}

impl ChainConfig {
    pub fn new(steps: usize) -> Self {
        ChainConfig {
            steps,
            delta0: 0.01,
            exponent: 1.0 / 3.0,
            divergence_bound: 50.0,
            noise_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("chain needs at least one step".into()));
        }
        if !(self.delta0 > 0.0 && self.delta0.is_finite()) {
            return Err(Error::InvalidConfig(format!("delta0 = {} must be positive", self.delta0)));
        }
        if !(self.exponent > 0.0 && self.exponent < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "step exponent {} outside (0,1)",
                self.exponent
            )));
        }
        Ok(())
    }

    pub fn delta(&self, n: usize) -> f64 {
        self.delta0 * (n as f64).powf(-self.exponent)
    }
}

/// One chain sample: the iterate λ^n and its weight δ_n.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightedSample {
    pub n: usize,
    pub weight: f64,
    pub lambda: Vec<f64>,
}

/// A completed chain.
#[derive(Clone, Debug)]
pub struct ChainRun {
    pub samples: Vec<WeightedSample>,
    pub total_cost: u64,
}

/// Euler-Maruyama SGLD with the given gradient source. Deterministic given
/// the seed.
pub fn run_chain(
    lambda0: &ParamVector,
    source: &dyn GradientSource,
    config: &ChainConfig,
    seed: StreamSeed,
) -> Result<ChainRun> {
    config.validate()?;
    if lambda0.len() != source.param_len() {
        return Err(Error::DimensionMismatch {
            context: "chain initial point",
            expected: source.param_len(),
            actual: lambda0.len(),
        });
    }
    let mut lambda = lambda0.values().to_vec();
    let mut samples = Vec::with_capacity(config.steps);
    let mut total_cost = 0u64;

    for n in 1..=config.steps {
        let delta = config.delta(n);
        let grad = source.estimate(&ParamVector::new(lambda.clone())?, seed.child(n as u64))?;
        total_cost += grad.cost_evals;
        let mut noise_rng = seed.rng(stream_id(n, 0, phase::NOISE));
        let noise_sd = delta.sqrt() * config.noise_scale;
        for (l, g) in lambda.iter_mut().zip(&grad.value) {
            let xi: f64 = StandardNormal.sample(&mut noise_rng);
            *l += 0.5 * delta * g + noise_sd * xi;
        }

        let sup = lambda.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        samples.push(WeightedSample { n, weight: delta, lambda: lambda.clone() });
        if !sup.is_finite() || sup > config.divergence_bound {
            return Err(Error::ChainDiverged {
                iteration: n,
                sup_norm: sup,
                bound: config.divergence_bound,
                samples: Box::new(samples),
            });
        }
    }

    Ok(ChainRun { samples, total_cost })
}

/// δ-weighted posterior mean of φ(λ) over the given samples:
/// Σ δ_n φ(λ^n) / Σ δ_n.
pub fn weighted_mean<F>(samples: &[WeightedSample], f: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut acc: Option<Vec<f64>> = None;
    let mut total = 0.0;
    for s in samples {
        total += s.weight;
        let v = f(&s.lambda);
        match &mut acc {
            None => acc = Some(v.into_iter().map(|x| x * s.weight).collect()),
            Some(a) => {
                for (slot, x) in a.iter_mut().zip(v) {
                    *slot += s.weight * x;
                }
            }
        }
    }
    let mut a = acc.expect("nonempty sample set");
    for slot in &mut a {
        *slot /= total;
    }
    a
}

/// Weighted quantile of coordinate `coord`: the smallest sample value whose
/// cumulative normalized weight reaches q.
pub fn weighted_quantile(samples: &[WeightedSample], coord: usize, q: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut pairs: Vec<(f64, f64)> =
        samples.iter().map(|s| (s.lambda[coord], s.weight)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (value, weight) in &pairs {
        acc += weight / total;
        if acc >= q {
            return Some(*value);
        }
    }
    Some(pairs.last().unwrap().0)
}

/// One-dimensional histogram over weight-resampled draws.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Histogram1d {
    pub coord: usize,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

/// Two-dimensional histogram (row-major over `bins × bins` cells).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Histogram2d {
    pub coords: (usize, usize),
    pub lo: (f64, f64),
    pub hi: (f64, f64),
    pub bins: usize,
    pub counts: Vec<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorSummary {
    /// δ-weighted mean of λ over the post-burn-in samples.
    pub weighted_mean: Vec<f64>,
    /// δ-weighted covariance.
    pub weighted_cov: Vec<Vec<f64>>,
    pub marginals: Vec<Histogram1d>,
    pub pairwise: Vec<Histogram2d>,
    pub samples_used: usize,
}

#[derive(Clone, Debug)]
pub struct SummaryConfig {
    /// Fraction of the chain discarded from the front.
    pub burn_in: f64,
    pub bins: usize,
    /// Number of weight-proportional resampled draws behind the histograms;
    /// defaults to the post-burn-in sample count.
    pub resample_draws: Option<usize>,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        SummaryConfig { burn_in: 0.5, bins: 40, resample_draws: None }
    }
}

/// Histograms by weight-proportional resampling plus weighted summary
/// statistics over the post-burn-in samples. `coords` selects the
/// coordinates to histogram (pairwise over all selected pairs).
pub fn posterior_summary(
    samples: &[WeightedSample],
    coords: &[usize],
    config: &SummaryConfig,
    seed: StreamSeed,
) -> Result<PosteriorSummary> {
    if !(0.0..1.0).contains(&config.burn_in) {
        return Err(Error::InvalidConfig(format!(
            "burn-in fraction {} outside [0,1)",
            config.burn_in
        )));
    }
    if config.bins == 0 {
        return Err(Error::InvalidConfig("histograms need at least one bin".into()));
    }
    let start = (samples.len() as f64 * config.burn_in).floor() as usize;
    let kept = &samples[start.min(samples.len())..];
    if kept.is_empty() {
        return Err(Error::InvalidConfig("no samples left after burn-in".into()));
    }
    let j = kept[0].lambda.len();
    if coords.iter().any(|&c| c >= j) {
        return Err(Error::DimensionMismatch {
            context: "summary coordinates",
            expected: j,
            actual: *coords.iter().max().unwrap(),
        });
    }

    let mean = weighted_mean(kept, |l| l.to_vec());
    let mut cov = vec![vec![0.0; j]; j];
    let total_w: f64 = kept.iter().map(|s| s.weight).sum();
    for s in kept {
        for a in 0..j {
            let da = s.lambda[a] - mean[a];
            for b in 0..j {
                cov[a][b] += s.weight * da * (s.lambda[b] - mean[b]);
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= total_w;
        }
    }

    // Weight-proportional resampling for the histograms.
    let draws = config.resample_draws.unwrap_or(kept.len());
    let weights: Vec<f64> = kept.iter().map(|s| s.weight / total_w).collect();
    let mut rng = seed.rng(stream_id(0, 0, phase::RESAMPLE));
    let picks = crate::smc::resample_indices_n(&weights, draws, &mut rng);

    let range_of = |coord: usize| -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in &picks {
            let v = kept[i].lambda[coord];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo == hi {
            // degenerate spread: widen so every draw lands in one bin
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let bin_of = |v: f64, lo: f64, hi: f64| -> usize {
        (((v - lo) / (hi - lo) * config.bins as f64) as usize).min(config.bins - 1)
    };

    let mut marginals = Vec::with_capacity(coords.len());
    for &c in coords {
        let (lo, hi) = range_of(c);
        let mut counts = vec![0u64; config.bins];
        for &i in &picks {
            counts[bin_of(kept[i].lambda[c], lo, hi)] += 1;
        }
        marginals.push(Histogram1d { coord: c, lo, hi, counts });
    }

    let mut pairwise = Vec::new();
    for (ai, &a) in coords.iter().enumerate() {
        for &b in &coords[ai + 1..] {
            let (lo_a, hi_a) = range_of(a);
            let (lo_b, hi_b) = range_of(b);
            let mut counts = vec![0u64; config.bins * config.bins];
            for &i in &picks {
                let ra = bin_of(kept[i].lambda[a], lo_a, hi_a);
                let rb = bin_of(kept[i].lambda[b], lo_b, hi_b);
                counts[ra * config.bins + rb] += 1;
            }
            pairwise.push(Histogram2d {
                coords: (a, b),
                lo: (lo_a, lo_b),
                hi: (hi_a, hi_b),
                bins: config.bins,
                counts,
            });
        }
    }

    Ok(PosteriorSummary {
        weighted_mean: mean,
        weighted_cov: cov,
        marginals,
        pairwise,
        samples_used: kept.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PairFeatures;
    use rand::Rng;

    struct ZeroGradient {
        j: usize,
    }

    impl GradientSource for ZeroGradient {
        fn param_len(&self) -> usize {
            self.j
        }
        fn estimate(&self, _lambda: &ParamVector, _seed: StreamSeed) -> Result<GradientSample> {
            Ok(GradientSample { value: vec![0.0; self.j], cost_evals: 0, level: None })
        }
    }

    fn uniform_moments(d: usize) -> MomentVector {
        let feats = PairFeatures::new(d);
        Oracle::new(&feats).moments(&ParamVector::zeros(feats.len())).unwrap()
    }

    #[test]
    fn prior_gradients_are_exact() {
        let lam = ParamVector::new(vec![1.0, -2.0]).unwrap();
        assert_eq!(Prior::FlatImproper.grad_log(&lam).unwrap(), vec![0.0, 0.0]);
        let g = Prior::Gaussian { mean: vec![0.5, 0.5], variance: 0.25 }
            .grad_log(&lam)
            .unwrap();
        assert_eq!(g, vec![-(1.0 - 0.5) / 0.25, -(-2.0 - 0.5) / 0.25]);
        assert!(Prior::Gaussian { mean: vec![0.0], variance: 0.25 }.grad_log(&lam).is_err());
    }

    #[test]
    fn gradient_with_no_data_is_the_prior_gradient() {
        let d = 2;
        let features: Arc<dyn FeatureSet> = Arc::new(PairFeatures::new(d));
        let source = DebiasedGradient {
            features,
            empirical: uniform_moments(d),
            observations: 0,
            prior: Prior::Gaussian { mean: vec![0.0; 3], variance: 4.0 },
            plan: LevelPlan::defaults(),
            kernel: MutationKernelConfig::defaults_for(d),
        };
        let lam = ParamVector::new(vec![2.0, -1.0, 0.5]).unwrap();
        let g = source.estimate(&lam, StreamSeed::new(1)).unwrap();
        assert_eq!(g.value, vec![-0.5, 0.25, -0.125]);
        assert_eq!(g.cost_evals, 0);
    }

    #[test]
    fn gradient_centers_at_zero_for_uniform_mle() {
        // m̂ = uniform moments, λ = 0: the MLE gradient vanishes in expectation
        let d = 2;
        let features: Arc<dyn FeatureSet> = Arc::new(PairFeatures::new(d));
        let source = DebiasedGradient {
            features,
            empirical: uniform_moments(d),
            observations: 100,
            prior: Prior::FlatImproper,
            plan: LevelPlan::new(8, 4, 4).unwrap(),
            kernel: MutationKernelConfig::defaults_for(d),
        };
        let lam = ParamVector::zeros(3);
        let root = StreamSeed::new(2);
        let replicates = 500;
        let mut sums = vec![0.0; 3];
        let mut sq = vec![0.0; 3];
        for r in 0..replicates {
            let g = source.estimate(&lam, root.child(r as u64)).unwrap();
            for (jj, v) in g.value.iter().enumerate() {
                sums[jj] += v;
                sq[jj] += v * v;
            }
        }
        for jj in 0..3 {
            let mean = sums[jj] / replicates as f64;
            let var =
                (sq[jj] - sums[jj] * sums[jj] / replicates as f64) / (replicates as f64 - 1.0);
            let se = (var / replicates as f64).sqrt();
            assert!(mean.abs() < 4.0 * se, "coord {jj}: mean {mean}, se {se}");
        }
    }

    #[test]
    fn frozen_dynamics_keeps_the_chain_at_its_start() {
        let lam0 = ParamVector::new(vec![0.7, -0.3]).unwrap();
        let mut config = ChainConfig::new(100);
        config.noise_scale = 0.0;
        let run =
            run_chain(&lam0, &ZeroGradient { j: 2 }, &config, StreamSeed::new(3)).unwrap();
        for s in &run.samples {
            assert_eq!(s.lambda, vec![0.7, -0.3]);
        }
    }

    #[test]
    fn step_schedule_arithmetic() {
        let mut config = ChainConfig::new(10);
        config.delta0 = 0.4;
        assert!((config.delta(8) - 0.2).abs() < 1e-12);
        assert!((config.delta(1) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn weighting_identities() {
        let samples = vec![
            WeightedSample { n: 1, weight: 1.0, lambda: vec![1.0] },
            WeightedSample { n: 2, weight: 3.0, lambda: vec![5.0] },
        ];
        // Eq-32 ratio applied to the constant 1 is exactly 1
        let ones = weighted_mean(&samples, |_| vec![1.0]);
        assert_eq!(ones[0], 1.0);
        // two samples (a,1), (b,3) → (a+3b)/4
        let mean = weighted_mean(&samples, |l| l.to_vec());
        assert_eq!(mean[0], 4.0);
        // equal weights reduce to the plain mean
        let eq = vec![
            WeightedSample { n: 1, weight: 2.0, lambda: vec![1.0] },
            WeightedSample { n: 2, weight: 2.0, lambda: vec![2.0] },
            WeightedSample { n: 3, weight: 2.0, lambda: vec![6.0] },
        ];
        assert_eq!(weighted_mean(&eq, |l| l.to_vec())[0], 3.0);
    }

    #[test]
    fn weighted_quantiles() {
        let samples = vec![
            WeightedSample { n: 1, weight: 1.0, lambda: vec![0.0] },
            WeightedSample { n: 2, weight: 1.0, lambda: vec![1.0] },
            WeightedSample { n: 3, weight: 2.0, lambda: vec![2.0] },
        ];
        assert_eq!(weighted_quantile(&samples, 0, 0.2), Some(0.0));
        assert_eq!(weighted_quantile(&samples, 0, 0.5), Some(1.0));
        assert_eq!(weighted_quantile(&samples, 0, 0.9), Some(2.0));
        assert_eq!(weighted_quantile(&[], 0, 0.5), None);
    }

    #[test]
    fn summary_histograms_account_for_every_draw() {
        let mut samples = Vec::new();
        let mut rng = StreamSeed::new(4).rng(0);
        for n in 1..=400 {
            samples.push(WeightedSample {
                n,
                weight: 1.0 / (n as f64).cbrt(),
                lambda: vec![rng.random::<f64>(), rng.random::<f64>() * 2.0],
            });
        }
        let config = SummaryConfig { burn_in: 0.5, bins: 10, resample_draws: Some(1000) };
        let summary = posterior_summary(&samples, &[0, 1], &config, StreamSeed::new(5)).unwrap();
        assert_eq!(summary.samples_used, 200);
        for h in &summary.marginals {
            assert_eq!(h.counts.iter().sum::<u64>(), 1000);
        }
        assert_eq!(summary.pairwise.len(), 1);
        assert_eq!(summary.pairwise[0].counts.iter().sum::<u64>(), 1000);
        // deterministic given the seed
        let again = posterior_summary(&samples, &[0, 1], &config, StreamSeed::new(5)).unwrap();
        assert_eq!(summary.marginals[0].counts, again.marginals[0].counts);
    }

    #[test]
    fn divergence_guard_reports_partial_samples() {
        struct HugeGradient;
        impl GradientSource for HugeGradient {
            fn param_len(&self) -> usize {
                1
            }
            fn estimate(&self, _l: &ParamVector, _s: StreamSeed) -> Result<GradientSample> {
                Ok(GradientSample { value: vec![1e6], cost_evals: 0, level: None })
            }
        }
        let config = ChainConfig::new(100);
        let err = run_chain(&ParamVector::zeros(1), &HugeGradient, &config, StreamSeed::new(6))
            .unwrap_err();
        match err {
            Error::ChainDiverged { iteration, samples, .. } => {
                assert_eq!(iteration, 1);
                assert_eq!(samples.len(), 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn chain_is_deterministic() {
        let d = 2;
        let features: Arc<dyn FeatureSet> = Arc::new(PairFeatures::new(d));
        let source = DebiasedGradient {
            features,
            empirical: uniform_moments(d),
            observations: 50,
            prior: Prior::FlatImproper,
            plan: LevelPlan::new(8, 4, 3).unwrap(),
            kernel: MutationKernelConfig::defaults_for(d),
        };
        let mut config = ChainConfig::new(50);
        config.delta0 = 1e-3;
        let a = run_chain(&ParamVector::zeros(3), &source, &config, StreamSeed::new(7)).unwrap();
        let b = run_chain(&ParamVector::zeros(3), &source, &config, StreamSeed::new(7)).unwrap();
        assert_eq!(a.samples.last().unwrap().lambda, b.samples.last().unwrap().lambda);
        assert_eq!(a.total_cost, b.total_cost);
    }
}
