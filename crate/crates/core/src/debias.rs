//! Randomized-truncation debiasing of the self-normalized AIS estimator.
//!
//! The coupled increments Δ_l = η̃^{N_l}(f) − η̃^{N_l/g}(f) are built from one
//! AIS realization with N_l particles, the sub-estimator using the first
//! N_l/g of them (particles are independent, so the leading block of a large
//! run has exactly the law of a smaller run). Because Σ_{l≤L} E Δ_l equals
//! the expectation of the level-L estimator, drawing a random level L and
//! weighting by its probability gives estimators of η_J(f) that are unbiased
//! up to the truncation remainder Σ_{l>L_max} E Δ_l, which is reported rather
//! than ignored:
//!
//! * single-term: Δ_L / p_L with L ~ p,
//! * multi-term:  Σ_{l≤L} Δ_l / t_l with L ~ p̃ and t_l the tail Σ_{k≥l} p̃_k.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BitState;
use crate::rng::{phase, stream_id, StreamSeed};
use crate::smc::{ais_run, AnnealingSchedule, MutationKernelConfig};

/// Particle counts per level and the level-draw distributions.
///
/// N_l = N_0·growth^l. The default level weights are
/// (l+2)·log(l+2)/N_l, normalized over 0..=L_max: the canonical
/// N_l⁻¹·l·log l shape regularized so that levels 0 and 1 keep positive
/// probability. The same shape is used for the single-term pmf and the
/// multi-term pmf.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelPlan {
    n0: usize,
    growth: usize,
    l_max: usize,
    p_single: Vec<f64>,
    p_multi: Vec<f64>,
}

impl LevelPlan {
    pub fn new(n0: usize, growth: usize, l_max: usize) -> Result<Self> {
        let weights: Vec<f64> = (0..=l_max)
            .map(|l| {
                let lf = (l + 2) as f64;
                lf * lf.ln() / (n0 as f64 * (growth as f64).powi(l as i32))
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Self::with_pmfs(n0, growth, l_max, p.clone(), p)
    }

    pub fn with_pmfs(
        n0: usize,
        growth: usize,
        l_max: usize,
        p_single: Vec<f64>,
        p_multi: Vec<f64>,
    ) -> Result<Self> {
        if n0 == 0 {
            return Err(Error::InvalidConfig("level plan needs N_0 ≥ 1".into()));
        }
        if growth < 2 {
            return Err(Error::InvalidConfig("level growth must be at least 2".into()));
        }
        let top = (n0 as u128) * (growth as u128).pow(l_max as u32);
        if top > 1 << 40 {
            return Err(Error::InvalidConfig(format!(
                "top-level particle count {top} is unreasonably large"
            )));
        }
        for (name, p) in [("single-term", &p_single), ("multi-term", &p_multi)] {
            if p.len() != l_max + 1 {
                return Err(Error::DimensionMismatch {
                    context: "level pmf",
                    expected: l_max + 1,
                    actual: p.len(),
                });
            }
            if p.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::InvalidConfig(format!(
                    "{name} level pmf must be strictly positive on every level"
                )));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "{name} level pmf sums to {sum}, not 1"
                )));
            }
        }
        Ok(LevelPlan { n0, growth, l_max, p_single, p_multi })
    }

    /// N_0 = 16, growth 4, L_max = 6.
    pub fn defaults() -> Self {
        Self::new(16, 4, 6).expect("default plan is valid")
    }

    pub fn base_particles(&self) -> usize {
        self.n0
    }

    pub fn growth(&self) -> usize {
        self.growth
    }

    pub fn max_level(&self) -> usize {
        self.l_max
    }

    /// N_l.
    pub fn particles_at(&self, level: usize) -> usize {
        self.n0 * self.growth.pow(level as u32)
    }

    pub fn single_pmf(&self) -> &[f64] {
        &self.p_single
    }

    pub fn multi_pmf(&self) -> &[f64] {
        &self.p_multi
    }

    /// Tail probabilities t_l = Σ_{k≥l} p̃_k of the multi-term pmf, computed
    /// by backward accumulation so that the telescoping identity holds
    /// exactly in floating point.
    pub fn tail_probabilities(&self) -> Vec<f64> {
        let mut tails = vec![0.0; self.l_max + 1];
        let mut acc = 0.0;
        for l in (0..=self.l_max).rev() {
            acc += self.p_multi[l];
            tails[l] = acc;
        }
        tails
    }

    fn draw_level<R: Rng>(pmf: &[f64], rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (l, &p) in pmf.iter().enumerate() {
            acc += p;
            if u < acc {
                return l;
            }
        }
        pmf.len() - 1
    }

    /// Nominal cost C(Δ_l) in density evaluations of one level-l increment.
    pub fn level_cost(&self, level: usize, schedule_steps: usize, kernel: &MutationKernelConfig, d: usize) -> u64 {
        (self.particles_at(level) * schedule_steps) as u64 * kernel.evals_per_particle_step(d)
    }

    /// Σ_l p_l·C(Δ_l): the expected cost of one single-term draw.
    pub fn expected_single_cost(
        &self,
        schedule_steps: usize,
        kernel: &MutationKernelConfig,
        d: usize,
    ) -> f64 {
        self.p_single
            .iter()
            .enumerate()
            .map(|(l, p)| p * self.level_cost(l, schedule_steps, kernel, d) as f64)
            .sum()
    }
}

/// One coupled increment Δ_l with its level and cost.
#[derive(Clone, Debug)]
pub struct Increment {
    pub level: usize,
    pub value: Vec<f64>,
    pub cost_evals: u64,
}

/// A debiased estimate with the level it drew and the cost it spent.
#[derive(Clone, Debug)]
pub struct DebiasedEstimate {
    pub value: Vec<f64>,
    pub level: usize,
    pub cost_evals: u64,
}

/// Run ONE AIS realization with N_l particles and form
/// Δ_l = η̃^{N_l}(f) − η̃^{N_l/g}(f) over the shared particles (generation
/// order). For l = 0 there is no subtraction: Δ_0 = η̃^{N_0}(f).
pub fn coupled_increment<F>(
    level: usize,
    schedule: &dyn AnnealingSchedule,
    kernel: &MutationKernelConfig,
    f: F,
    plan: &LevelPlan,
    seed: StreamSeed,
) -> Result<Increment>
where
    F: Fn(&BitState) -> Vec<f64>,
{
    if level > plan.max_level() {
        return Err(Error::InvalidConfig(format!(
            "level {level} above the plan's maximum {}",
            plan.max_level()
        )));
    }
    let n = plan.particles_at(level);
    let run = ais_run(schedule, n, kernel, seed)?;
    let full = run.ratio_estimate(&f, n)?;
    let value = if level == 0 {
        full
    } else {
        let coarse = run.ratio_estimate(&f, n / plan.growth())?;
        full.iter().zip(coarse).map(|(a, b)| a - b).collect()
    };
    Ok(Increment { level, value, cost_evals: run.cost_evals() })
}

/// Single-term estimator: draw L ~ p, return Δ_L/p_L.
pub fn single_term_estimate<F>(
    f: F,
    schedule: &dyn AnnealingSchedule,
    kernel: &MutationKernelConfig,
    plan: &LevelPlan,
    seed: StreamSeed,
) -> Result<DebiasedEstimate>
where
    F: Fn(&BitState) -> Vec<f64>,
{
    let mut rng = seed.rng(stream_id(0, 0, phase::DRAW));
    let level = LevelPlan::draw_level(plan.single_pmf(), &mut rng);
    let inc = coupled_increment(level, schedule, kernel, f, plan, seed.child(1 + level as u64))?;
    let p = plan.single_pmf()[level];
    let value = inc.value.iter().map(|v| v / p).collect();
    Ok(DebiasedEstimate { value, level, cost_evals: inc.cost_evals })
}

/// Multi-term estimator: draw L ~ p̃, return Σ_{l≤L} Δ_l/t_l with independent
/// increments per level and t the tail probabilities of p̃.
pub fn multi_term_estimate<F>(
    f: F,
    schedule: &dyn AnnealingSchedule,
    kernel: &MutationKernelConfig,
    plan: &LevelPlan,
    seed: StreamSeed,
) -> Result<DebiasedEstimate>
where
    F: Fn(&BitState) -> Vec<f64>,
{
    let mut rng = seed.rng(stream_id(0, 0, phase::DRAW));
    let level = LevelPlan::draw_level(plan.multi_pmf(), &mut rng);
    let tails = plan.tail_probabilities();
    let mut value: Option<Vec<f64>> = None;
    let mut cost = 0u64;
    for l in 0..=level {
        let inc = coupled_increment(l, schedule, kernel, &f, plan, seed.child(1 + l as u64))?;
        cost += inc.cost_evals;
        match &mut value {
            None => value = Some(inc.value.iter().map(|v| v / tails[l]).collect()),
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(inc.value) {
                    *a += v / tails[l];
                }
            }
        }
    }
    Ok(DebiasedEstimate { value: value.expect("at least level 0"), level, cost_evals: cost })
}

/// Per-level replication summary: empirical mean, variance, and cost of Δ_l.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelDiagnostic {
    pub level: usize,
    pub particles: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mean_cost: f64,
}

/// Replicate Δ_l at each level and summarize. Also returns the empirical
/// Σ_l E[Δ_l²]/p_l (the variance-finiteness functional for the single-term
/// estimator).
pub fn level_diagnostics<F>(
    f: F,
    schedule: &dyn AnnealingSchedule,
    kernel: &MutationKernelConfig,
    plan: &LevelPlan,
    replicates: usize,
    seed: StreamSeed,
) -> Result<(Vec<LevelDiagnostic>, f64)>
where
    F: Fn(&BitState) -> Vec<f64> + Sync,
{
    let mut diags = Vec::with_capacity(plan.max_level() + 1);
    let mut weighted_second_moment = 0.0;
    for level in 0..=plan.max_level() {
        let level_seed = seed.child(level as u64);
        let mut sums: Option<Vec<f64>> = None;
        let mut sq: Option<Vec<f64>> = None;
        let mut cost = 0u64;
        for r in 0..replicates {
            let inc =
                coupled_increment(level, schedule, kernel, &f, plan, level_seed.child(r as u64))?;
            cost += inc.cost_evals;
            match (&mut sums, &mut sq) {
                (None, None) => {
                    sq = Some(inc.value.iter().map(|v| v * v).collect());
                    sums = Some(inc.value);
                }
                (Some(s), Some(q)) => {
                    for ((a, b), v) in s.iter_mut().zip(q.iter_mut()).zip(inc.value) {
                        *a += v;
                        *b += v * v;
                    }
                }
                _ => unreachable!(),
            }
        }
        let n = replicates as f64;
        let sums = sums.expect("replicates >= 1");
        let sq = sq.expect("replicates >= 1");
        let mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
        let variance: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0) * n / (n - 1.0).max(1.0))
            .collect();
        let second_moment_total: f64 = sq.iter().map(|q| q / n).sum();
        weighted_second_moment += second_moment_total / plan.single_pmf()[level];
        diags.push(LevelDiagnostic {
            level,
            particles: plan.particles_at(level),
            mean,
            variance,
            mean_cost: cost as f64 / n,
        });
    }
    Ok((diags, weighted_second_moment))
}

/// Empirical bound on the truncation bias Σ_{l>L_max} |E Δ_l|: the mean of
/// Δ_{L_max+1} over `replicates` runs, extrapolated by the geometric factor
/// g/(g−1) implied by the E Δ_l ∝ N_l⁻¹ decay.
pub fn truncation_remainder<F>(
    f: F,
    schedule: &dyn AnnealingSchedule,
    kernel: &MutationKernelConfig,
    plan: &LevelPlan,
    replicates: usize,
    seed: StreamSeed,
) -> Result<Vec<f64>>
where
    F: Fn(&BitState) -> Vec<f64>,
{
    let probe = LevelPlan::new(plan.base_particles(), plan.growth(), plan.max_level() + 1)?;
    let level = plan.max_level() + 1;
    let mut sums: Option<Vec<f64>> = None;
    for r in 0..replicates {
        let inc = coupled_increment(level, schedule, kernel, &f, &probe, seed.child(r as u64))?;
        match &mut sums {
            None => sums = Some(inc.value),
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(inc.value) {
                    *a += v;
                }
            }
        }
    }
    let g = plan.growth() as f64;
    let factor = g / (g - 1.0) / replicates as f64;
    Ok(sums
        .ok_or_else(|| Error::InvalidConfig("remainder estimate needs replicates ≥ 1".into()))?
        .iter()
        .map(|s| (s * factor).abs())
        .collect())
}
