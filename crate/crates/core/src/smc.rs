//! Sequential Monte Carlo sampler over annealed binary-state targets, the
//! resampling-free AIS variant, and the target / normalizing-constant
//! estimators.
//!
//! The sampler runs J steps of weight → resample → mutate along a schedule of
//! intermediate log-densities γ_0..γ_J. The initial target γ_0 is always the
//! uniform *probability* 2^{-d}, so the unnormalized estimator
//! Γ^N_J(f) = Π_j η^N_j(G_j) · η^N_J(f) is unbiased for Q(f|λ)/2^d; callers
//! needing the counting-measure value Q(f|λ) request the 2^d scaling
//! explicitly via [`GammaBase::Counting`].
//!
//! All weight arithmetic is in log-space with max-subtraction. Per-particle
//! randomness comes from streams derived from the master seed and the
//! (step, particle, phase) triple, so results are bit-identical regardless of
//! how the work is scheduled.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BitState, FeatureSet, ParamVector};
use crate::rng::{phase, stream_id, StreamSeed};

/// Stable log(Σ exp(v)) with max-subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// A schedule of J+1 pointwise-evaluable log-densities γ_0..γ_J over bit
/// states. The base target must be the uniform probability: implementations
/// guarantee `log_gamma(0, x) = -d·ln 2` for every x, and every consecutive
/// ratio G_j = γ_{j+1}/γ_j must be finite and strictly positive.
pub trait AnnealingSchedule: Send + Sync {
    /// State dimension d.
    fn dim(&self) -> usize;

    /// Number of annealing steps J.
    fn num_steps(&self) -> usize;

    /// log γ_j(x) for j in 0..=J.
    fn log_gamma(&self, j: usize, x: &BitState) -> f64;

    /// log G_j(x) = log γ_{j+1}(x) − log γ_j(x) for j in 0..J.
    fn log_increment(&self, j: usize, x: &BitState) -> f64 {
        self.log_gamma(j + 1, x) - self.log_gamma(j, x)
    }
}

/// The default one-constraint-per-step schedule:
/// γ_j(x) = 2^{-d} · exp(Σ_{i≤j} λ_i φ_i(x)), so G_j(x) = exp(λ_{j+1} φ_{j+1}(x))
/// and the final target is q(x|λ)/2^d. J equals the number of features.
pub struct FeatureSchedule {
    features: Arc<dyn FeatureSet>,
    lambda: ParamVector,
    log_base: f64,
}

impl FeatureSchedule {
    pub fn new(features: Arc<dyn FeatureSet>, lambda: ParamVector) -> Result<Self> {
        if lambda.len() != features.len() {
            return Err(Error::DimensionMismatch {
                context: "FeatureSchedule",
                expected: features.len(),
                actual: lambda.len(),
            });
        }
        let log_base = -(features.dim() as f64) * std::f64::consts::LN_2;
        Ok(FeatureSchedule { features, lambda, log_base })
    }

    pub fn lambda(&self) -> &ParamVector {
        &self.lambda
    }

    pub fn features(&self) -> &Arc<dyn FeatureSet> {
        &self.features
    }
}

impl AnnealingSchedule for FeatureSchedule {
    fn dim(&self) -> usize {
        self.features.dim()
    }

    fn num_steps(&self) -> usize {
        self.features.len()
    }

    fn log_gamma(&self, j: usize, x: &BitState) -> f64 {
        debug_assert!(j <= self.num_steps());
        self.log_base + self.features.weighted_prefix_sum(self.lambda.values(), j, x)
    }

    fn log_increment(&self, j: usize, x: &BitState) -> f64 {
        debug_assert!(j < self.num_steps());
        self.lambda.values()[j] * self.features.eval(j, x)
    }
}

/// Mutation kernel configuration. Each configured kernel leaves its step's
/// target η_j invariant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MutationKernelConfig {
    pub kind: KernelKind,
    /// Number of kernel applications per SMC step.
    pub sweeps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    /// Metropolis with the symmetric proposal that flips each bit
    /// independently with probability `beta`.
    MetropolisBitflip { beta: f64 },
    /// Systematic-scan Gibbs: one sweep resamples every site from its exact
    /// conditional.
    GibbsSweep,
}

impl MutationKernelConfig {
    pub fn bitflip(beta: f64, sweeps: usize) -> Self {
        MutationKernelConfig { kind: KernelKind::MetropolisBitflip { beta }, sweeps }
    }

    pub fn gibbs(sweeps: usize) -> Self {
        MutationKernelConfig { kind: KernelKind::GibbsSweep, sweeps }
    }

    /// β = 0.6 with d sweeps per SMC step.
    pub fn defaults_for(d: usize) -> Self {
        Self::bitflip(0.6, d)
    }

    pub fn validate(&self) -> Result<()> {
        if let KernelKind::MetropolisBitflip { beta } = self.kind {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "bit-flip probability beta = {beta} outside (0,1)"
                )));
            }
        }
        Ok(())
    }

    /// Density evaluations per particle per SMC step under this kernel
    /// (weighting included). Mutation cost is deterministic by construction:
    /// every proposal is evaluated.
    pub fn evals_per_particle_step(&self, d: usize) -> u64 {
        match self.kind {
            KernelKind::MetropolisBitflip { .. } => 1 + self.sweeps as u64,
            KernelKind::GibbsSweep => 1 + 2 * (d as u64) * self.sweeps as u64,
        }
    }

    /// Apply `sweeps` kernel applications targeting γ_step. `log_gamma` is the
    /// particle's cached log-density at that step and is kept current;
    /// `evals` counts the density evaluations spent.
    pub fn apply<R: Rng>(
        &self,
        schedule: &dyn AnnealingSchedule,
        step: usize,
        state: &mut BitState,
        log_gamma: &mut f64,
        rng: &mut R,
        evals: &mut u64,
    ) {
        let d = schedule.dim();
        match self.kind {
            KernelKind::MetropolisBitflip { beta } => {
                for _ in 0..self.sweeps {
                    let mut proposal = *state;
                    for i in 0..d {
                        if rng.random_bool(beta) {
                            proposal.flip(i);
                        }
                    }
                    let proposal_lg = schedule.log_gamma(step, &proposal);
                    *evals += 1;
                    let u: f64 = rng.random();
                    if u.ln() < proposal_lg - *log_gamma {
                        *state = proposal;
                        *log_gamma = proposal_lg;
                    }
                }
            }
            KernelKind::GibbsSweep => {
                for _ in 0..self.sweeps {
                    for i in 0..d {
                        let mut zero = *state;
                        zero.set(i, false);
                        let mut one = *state;
                        one.set(i, true);
                        let l0 = schedule.log_gamma(step, &zero);
                        let l1 = schedule.log_gamma(step, &one);
                        *evals += 2;
                        let p_one = 1.0 / (1.0 + (l0 - l1).exp());
                        let u: f64 = rng.random();
                        if u < p_one {
                            *state = one;
                            *log_gamma = l1;
                        } else {
                            *state = zero;
                            *log_gamma = l0;
                        }
                    }
                }
            }
        }
    }
}

/// Resampling scheme for the SMC sampler. Multinomial matches the
/// unbiasedness argument for Γ^N_J exactly and is the default; systematic
/// resampling has lower variance but alters the argument's conditions (the
/// normalizing-constant estimator remains unbiased).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    Multinomial,
    Systematic,
}

/// Full SMC sampler configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmcConfig {
    /// Particle count N ≥ 2.
    pub particles: usize,
    pub kernel: MutationKernelConfig,
    pub resampling: Resampling,
}

impl SmcConfig {
    /// N = 2d, β = 0.6, d sweeps, multinomial resampling.
    pub fn defaults_for(d: usize) -> Self {
        SmcConfig {
            particles: 2 * d,
            kernel: MutationKernelConfig::defaults_for(d),
            resampling: Resampling::Multinomial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::InvalidConfig(format!(
                "particle count {} below minimum of 2",
                self.particles
            )));
        }
        self.kernel.validate()
    }
}

/// Which base measure an unnormalized estimate refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaBase {
    /// Relative to the uniform probability γ_0 = 2^{-d}: estimates Q(f|λ)/2^d.
    Uniform,
    /// Counting measure: estimates Q(f|λ) (the uniform-base value times 2^d).
    Counting,
}

/// Final state of an SMC run: particles, per-step normalizing increments,
/// and diagnostics.
pub struct ParticlePopulation {
    states: Vec<BitState>,
    log_weights: Vec<f64>,
    log_z_increments: Vec<f64>,
    ess: Vec<f64>,
    dim: usize,
    cost_evals: u64,
}

impl ParticlePopulation {
    pub fn states(&self) -> &[BitState] {
        &self.states
    }

    /// Normalized log-weights of the current particles. Uniform after the
    /// final resample/mutate.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Per-step values log η^N_j(G_j), j = 0..J-1.
    pub fn log_z_increments(&self) -> &[f64] {
        &self.log_z_increments
    }

    /// Effective sample size recorded at each weighting step.
    pub fn ess_trace(&self) -> &[f64] {
        &self.ess
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total density evaluations spent.
    pub fn cost_evals(&self) -> u64 {
        self.cost_evals
    }

    /// log Π_j η^N_j(G_j), the log of the γ_0-relative normalizing-constant
    /// estimate.
    pub fn log_normalizer(&self) -> f64 {
        self.log_z_increments.iter().sum()
    }

    /// η^N_J(f): the equally-weighted particle average of a vector function
    /// (post-resampling convention: final weights are uniform).
    pub fn estimate_target<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&BitState) -> Vec<f64>,
    {
        average(self.states.iter().map(f), self.states.len())
    }

    /// Γ^N_J(f) = Π_j η^N_j(G_j) · η^N_J(f), unbiased for Q(f|λ)/2^d under
    /// [`GammaBase::Uniform`] and for Q(f|λ) under [`GammaBase::Counting`].
    pub fn estimate_unnormalized<F>(&self, f: F, base: GammaBase) -> Vec<f64>
    where
        F: Fn(&BitState) -> Vec<f64>,
    {
        let scale = self.log_normalizer().exp() * base_factor(base, self.dim);
        let mut out = self.estimate_target(f);
        for v in &mut out {
            *v *= scale;
        }
        out
    }
}

fn base_factor(base: GammaBase, d: usize) -> f64 {
    match base {
        GammaBase::Uniform => 1.0,
        GammaBase::Counting => (1u64 << d) as f64,
    }
}

fn average<I>(values: I, count: usize) -> Vec<f64>
where
    I: Iterator<Item = Vec<f64>>,
{
    let mut acc: Option<Vec<f64>> = None;
    for v in values {
        match &mut acc {
            None => acc = Some(v),
            Some(a) => {
                assert_eq!(a.len(), v.len(), "inconsistent function output length");
                for (s, x) in a.iter_mut().zip(v) {
                    *s += x;
                }
            }
        }
    }
    let mut a = acc.expect("empty population");
    for s in &mut a {
        *s /= count as f64;
    }
    a
}

/// Normalized weights and ESS from raw log-weights.
fn normalize_weights(raw: &[f64]) -> (Vec<f64>, f64) {
    let lse = log_sum_exp(raw);
    assert!(
        lse.is_finite(),
        "total particle weight degenerate (log-sum {lse}); schedule increments must be finite and positive"
    );
    let weights: Vec<f64> = raw.iter().map(|&l| (l - lse).exp()).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    (weights, ess)
}

/// Draw resampling indices for the given normalized weights. Multinomial
/// draws an inverse-CDF lookup from a single uniform per particle;
/// systematic uses a single stratified uniform.
pub fn resample_indices<R: Rng>(
    weights: &[f64],
    scheme: Resampling,
    rng: &mut R,
) -> Vec<usize> {
    let n = weights.len();
    let cumulative = cumsum(weights);
    let pick = |u: f64| -> usize { cumulative.partition_point(|&c| c <= u).min(n - 1) };
    match scheme {
        Resampling::Multinomial => (0..n).map(|_| pick(rng.random())).collect(),
        Resampling::Systematic => {
            let u0: f64 = rng.random::<f64>() / n as f64;
            (0..n).map(|i| pick(u0 + i as f64 / n as f64)).collect()
        }
    }
}

/// Multinomial draw of `count` indices proportional to the given weights.
pub fn resample_indices_n<R: Rng>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let cumulative = cumsum(weights);
    (0..count)
        .map(|_| {
            let u: f64 = rng.random();
            cumulative.partition_point(|&c| c <= u).min(n - 1)
        })
        .collect()
}

fn cumsum(weights: &[f64]) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cumulative.push(acc);
    }
    cumulative
}

/// Run the SMC sampler: initialize from the uniform base target, then J
/// steps of weight / resample / mutate. Deterministic given the seed.
pub fn smc_run(
    schedule: &dyn AnnealingSchedule,
    config: &SmcConfig,
    seed: StreamSeed,
) -> Result<ParticlePopulation> {
    config.validate()?;
    let n = config.particles;
    let d = schedule.dim();
    let steps = schedule.num_steps();
    let mut evals = 0u64;

    let mut states: Vec<BitState> = (0..n)
        .map(|i| BitState::random_uniform(d, &mut seed.rng(stream_id(0, i, phase::INIT))))
        .collect();
    // Cached log γ_j per particle; γ_0 is the uniform probability by contract.
    let mut log_gammas = vec![-(d as f64) * std::f64::consts::LN_2; n];

    let mut log_z_increments = Vec::with_capacity(steps);
    let mut ess_trace = Vec::with_capacity(steps);

    for j in 0..steps {
        // Weight with G_j evaluated at the current (step-j) particles.
        let raw: Vec<f64> = states.iter().map(|x| schedule.log_increment(j, x)).collect();
        evals += n as u64;
        log_z_increments.push(log_sum_exp(&raw) - (n as f64).ln());
        let (weights, ess) = normalize_weights(&raw);
        ess_trace.push(ess);

        // Resample; carry each survivor's cached density forward to level j+1.
        let idx = resample_indices(
            &weights,
            config.resampling,
            &mut seed.rng(stream_id(j + 1, 0, phase::RESAMPLE)),
        );
        let prev_states = states.clone();
        let prev_gammas = log_gammas.clone();
        for (slot, &pick) in idx.iter().enumerate() {
            states[slot] = prev_states[pick];
            log_gammas[slot] = prev_gammas[pick] + raw[pick];
        }

        // Mutate targeting η_{j+1}.
        for (i, (state, lg)) in states.iter_mut().zip(log_gammas.iter_mut()).enumerate() {
            let mut rng = seed.rng(stream_id(j + 1, i, phase::MUTATE));
            config.kernel.apply(schedule, j + 1, state, lg, &mut rng, &mut evals);
        }
    }

    // Weights are uniform after the final resample/mutate.
    Ok(ParticlePopulation {
        states,
        log_weights: vec![-(n as f64).ln(); n],
        log_z_increments,
        ess: ess_trace,
        dim: d,
        cost_evals: evals,
    })
}

/// One weighted AIS particle: the cumulative log-weight Σ_j log G_j(x_j) and
/// the final state.
#[derive(Clone, Copy, Debug)]
pub struct AisParticle {
    pub log_weight: f64,
    pub state: BitState,
}

/// Output of an AIS run: N mutually independent weighted particles, in
/// generation order. Particle i depends only on streams derived from
/// (seed, i), so the first n particles of an N-particle run are distributed
/// exactly as an independent n-particle run with the same seed.
pub struct AisRun {
    particles: Vec<AisParticle>,
    dim: usize,
    cost_evals: u64,
}

impl AisRun {
    pub fn particles(&self) -> &[AisParticle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cost_evals(&self) -> u64 {
        self.cost_evals
    }

    /// (1/N) Σ_i W^i f(x^i): unbiased for Q(f|λ)/2^d (or Q(f|λ) under
    /// [`GammaBase::Counting`]).
    pub fn unnormalized_estimate<F>(&self, f: F, base: GammaBase) -> Vec<f64>
    where
        F: Fn(&BitState) -> Vec<f64>,
    {
        let scale = base_factor(base, self.dim);
        let n = self.particles.len();
        let max_lw = self
            .particles
            .iter()
            .fold(f64::NEG_INFINITY, |m, p| m.max(p.log_weight));
        let mut acc = average(
            self.particles
                .iter()
                .map(|p| scaled(f(&p.state), (p.log_weight - max_lw).exp())),
            n,
        );
        let factor = max_lw.exp() * scale;
        for v in &mut acc {
            *v *= factor;
        }
        acc
    }

    /// The self-normalized ratio estimator over the first `subset` particles:
    /// Σ_{i≤subset} W^i f(x^i) / Σ_{i≤subset} W^i. Consistent for η_J(f), with
    /// O(1/subset) bias.
    pub fn ratio_estimate<F>(&self, f: F, subset: usize) -> Result<Vec<f64>>
    where
        F: Fn(&BitState) -> Vec<f64>,
    {
        if subset == 0 || subset > self.particles.len() {
            return Err(Error::InvalidConfig(format!(
                "ratio estimator subset {subset} outside 1..={}",
                self.particles.len()
            )));
        }
        let part = &self.particles[..subset];
        let max_lw = part.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p.log_weight));
        let mut numerator: Option<Vec<f64>> = None;
        let mut denominator = 0.0;
        for p in part {
            let w = (p.log_weight - max_lw).exp();
            denominator += w;
            let contrib = scaled(f(&p.state), w);
            match &mut numerator {
                None => numerator = Some(contrib),
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(contrib) {
                        *a += c;
                    }
                }
            }
        }
        let mut out = numerator.expect("nonempty subset");
        for v in &mut out {
            *v /= denominator;
        }
        Ok(out)
    }
}

fn scaled(mut v: Vec<f64>, factor: f64) -> Vec<f64> {
    for x in &mut v {
        *x *= factor;
    }
    v
}

/// Annealed importance sampling: the SMC sampler with the resampling step
/// omitted. Particles never interact, so they are i.i.d. weighted draws.
pub fn ais_run(
    schedule: &dyn AnnealingSchedule,
    n_particles: usize,
    kernel: &MutationKernelConfig,
    seed: StreamSeed,
) -> Result<AisRun> {
    if n_particles == 0 {
        return Err(Error::InvalidConfig("AIS needs at least one particle".into()));
    }
    kernel.validate()?;
    let d = schedule.dim();
    let steps = schedule.num_steps();
    let base = -(d as f64) * std::f64::consts::LN_2;
    let mut evals = 0u64;

    let particles = (0..n_particles)
        .map(|i| {
            let mut state =
                BitState::random_uniform(d, &mut seed.rng(stream_id(0, i, phase::INIT)));
            let mut log_gamma = base;
            let mut log_weight = 0.0;
            for j in 0..steps {
                let inc = schedule.log_increment(j, &state);
                evals += 1;
                log_weight += inc;
                log_gamma += inc;
                let mut rng = seed.rng(stream_id(j + 1, i, phase::MUTATE));
                kernel.apply(schedule, j + 1, &mut state, &mut log_gamma, &mut rng, &mut evals);
            }
            AisParticle { log_weight, state }
        })
        .collect();

    Ok(AisRun { particles, dim: d, cost_evals: evals })
}
