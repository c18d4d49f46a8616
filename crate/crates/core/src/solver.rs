//! Robbins-Monro stochastic approximation for the MaxEnt root
//! Q(m − φ | λ) = 0 and the MLE root with empirical moments.
//!
//! Each iteration draws a fresh, independent SMC estimate of the drift. Under
//! the two-phase schedule the early iterations use the normalized misfit
//! m − η^N_J(φ) as the descent direction, then switch to the unbiased
//! unnormalized estimator Γ^N_J(m − φ | λ) with the step size rescaled by the
//! normalizing-constant estimate captured at the switch; this keeps early
//! fluctuations of Γ^N_J(1|λ) from destabilizing the iteration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BitState, FeatureSet, MomentVector, Oracle, ParamVector};
use crate::rng::StreamSeed;
use crate::smc::{smc_run, FeatureSchedule, GammaBase, SmcConfig};

/// Robbins-Monro step-size schedule. Both kinds satisfy Σ δ_n = ∞ and
/// Σ δ_n² < ∞.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepSchedule {
    pub kind: StepScheduleKind,
    /// Scale ε.
    pub epsilon: f64,
    /// Offset n_0: δ_n = ε·n_0/(n_0 + n).
    pub n0: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepScheduleKind {
    Harmonic,
    /// Phase 1 (n ≤ switch): normalized-misfit drift with the base step.
    /// Phase 2 (n > switch): unnormalized drift with the base step divided by
    /// the normalizing-constant estimate captured at the switch.
    TwoPhase { switch: usize },
}

impl StepSchedule {
    pub fn harmonic(epsilon: f64, n0: f64) -> Self {
        StepSchedule { kind: StepScheduleKind::Harmonic, epsilon, n0 }
    }

    pub fn two_phase(epsilon: f64, n0: f64, switch: usize) -> Self {
        StepSchedule { kind: StepScheduleKind::TwoPhase { switch }, epsilon, n0 }
    }

    /// ε = 1, n_0 = 5d, switch at 2d.
    pub fn defaults_for(d: usize) -> Self {
        Self::two_phase(1.0, 5.0 * d as f64, 2 * d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if !(self.n0 > 0.0 && self.n0.is_finite()) {
            return Err(Error::InvalidConfig(format!("n0 = {} must be positive", self.n0)));
        }
        Ok(())
    }

    /// Base step δ_n = ε·n_0/(n_0 + n), before any phase-2 rescaling.
    pub fn base_delta(&self, n: usize) -> f64 {
        self.epsilon * self.n0 / (self.n0 + n as f64)
    }

    fn in_phase_one(&self, n: usize) -> bool {
        matches!(self.kind, StepScheduleKind::TwoPhase { switch } if n <= switch)
    }

    fn switch(&self) -> Option<usize> {
        match self.kind {
            StepScheduleKind::TwoPhase { switch } => Some(switch),
            StepScheduleKind::Harmonic => None,
        }
    }
}

/// Solver configuration on top of the SMC sampler settings.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub smc: SmcConfig,
    pub schedule: StepSchedule,
    /// Iteration budget K.
    pub iterations: usize,
    /// Abort when ‖λ‖∞ exceeds this bound.
    pub divergence_bound: f64,
    /// Base measure for the phase-2 drift. `Counting` multiplies the drift by
    /// 2^d, which rescales but does not move the root.
    pub drift_scale: GammaBase,
    /// Record the oracle moment misfit each iteration (requires d within the
    /// oracle cap).
    pub track_misfit: bool,
    pub oracle_cap: usize,
    /// Stop early when the moving average of ‖drift‖∞ over `window`
    /// iterations falls below `tol`.
    pub early_stop: Option<EarlyStop>,
}

#[derive(Clone, Copy, Debug)]
pub struct EarlyStop {
    pub window: usize,
    pub tol: f64,
}

impl SolverConfig {
    pub fn defaults_for(d: usize) -> Self {
        SolverConfig {
            smc: SmcConfig::defaults_for(d),
            schedule: StepSchedule::defaults_for(d),
            iterations: 10_000,
            divergence_bound: 50.0,
            drift_scale: GammaBase::Uniform,
            track_misfit: false,
            oracle_cap: crate::model::DEFAULT_ORACLE_CAP,
            early_stop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.smc.validate()?;
        self.schedule.validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iteration budget must be at least 1".into()));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(Error::InvalidConfig("divergence bound must be positive".into()));
        }
        Ok(())
    }
}

/// One Robbins-Monro iteration record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub n: usize,
    pub delta: f64,
    /// Iterate λ^n after the update.
    pub lambda: Vec<f64>,
    /// Drift estimate used for the update.
    pub drift: Vec<f64>,
    /// Oracle moment misfit ‖Π(φ|λ^n) − m‖∞, when tracked.
    pub misfit: Option<f64>,
    /// Cumulative cost in target-density evaluations.
    pub cost_evals: u64,
}

impl TraceRecord {
    pub fn drift_sup_norm(&self) -> f64 {
        self.drift.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Every iteration of a solve, plus the phase-switch event when one occurred.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
    /// (iteration, Γ^N_J(1) estimate) captured at the two-phase switch.
    pub rescale: Option<(usize, f64)>,
    /// Iteration at which the early-stop rule fired, if it did.
    pub stopped_at: Option<usize>,
}

/// Result of a MaxEnt solve.
#[derive(Clone, Debug)]
pub struct SolverRun {
    pub lambda: ParamVector,
    pub trace: SolverTrace,
}

/// Result of an MLE solve: the fit plus the empirical moments it targeted and
/// any boundary features (m̂_j ∈ {0,1}), for which the MLE may not exist.
#[derive(Clone, Debug)]
pub struct MleRun {
    pub run: SolverRun,
    pub empirical: MomentVector,
    pub boundary_features: Vec<usize>,
}

/// Arithmetic mean of the feature vectors of the observations.
pub fn empirical_moments(
    observations: &[BitState],
    features: &dyn FeatureSet,
) -> Result<MomentVector> {
    if observations.is_empty() {
        return Err(Error::InvalidConfig("empirical moments need at least one observation".into()));
    }
    let d = features.dim();
    let j = features.len();
    let mut acc = vec![0.0; j];
    let mut feat = vec![0.0; j];
    for y in observations {
        if y.len() != d {
            return Err(Error::DimensionMismatch {
                context: "observation",
                expected: d,
                actual: y.len(),
            });
        }
        features.eval_into(y, &mut feat);
        for (a, f) in acc.iter_mut().zip(feat.iter()) {
            *a += f;
        }
    }
    let m = observations.len() as f64;
    for a in &mut acc {
        *a /= m;
    }
    MomentVector::new(acc)
}

/// Solve Π(φ|λ) = m by stochastic approximation with a fresh SMC drift
/// estimate at every iteration. Returns the final iterate and the full trace;
/// on divergence the error carries the partial trace.
pub fn solve_maxent(
    m: &MomentVector,
    features: &Arc<dyn FeatureSet>,
    lambda0: &ParamVector,
    config: &SolverConfig,
    seed: StreamSeed,
) -> Result<SolverRun> {
    config.validate()?;
    let j = features.len();
    if m.len() != j {
        return Err(Error::DimensionMismatch {
            context: "target moments",
            expected: j,
            actual: m.len(),
        });
    }
    if lambda0.len() != j {
        return Err(Error::DimensionMismatch {
            context: "initial parameters",
            expected: j,
            actual: lambda0.len(),
        });
    }
    if config.track_misfit && features.dim() > config.oracle_cap {
        return Err(Error::InvalidConfig(format!(
            "misfit tracking needs enumeration; d = {} exceeds the oracle cap {}",
            features.dim(),
            config.oracle_cap
        )));
    }

    let mut lambda = lambda0.values().to_vec();
    let mut trace = SolverTrace::default();
    let mut rescale: Option<f64> = None;
    let mut total_cost = 0u64;
    let mut drift_window: Vec<f64> = Vec::new();
    let m_values = m.values().to_vec();

    for n in 1..=config.iterations {
        let schedule = FeatureSchedule::new(
            Arc::clone(features),
            ParamVector::new(lambda.clone())?,
        )?;
        let pop = smc_run(&schedule, &config.smc, seed.child(n as u64))?;
        total_cost += pop.cost_evals();

        let misfit_f = |x: &BitState| -> Vec<f64> {
            let mut v = features.eval_vec(x);
            for (vj, mj) in v.iter_mut().zip(m_values.iter()) {
                *vj = mj - *vj;
            }
            v
        };

        let phase_one = config.schedule.in_phase_one(n);
        if let Some(switch) = config.schedule.switch() {
            if n == switch + 1 && rescale.is_none() {
                // Γ^N_J(1 | λ^switch) from the same run that drives this update.
                let z = pop.log_normalizer().exp()
                    * match config.drift_scale {
                        GammaBase::Uniform => 1.0,
                        GammaBase::Counting => (1u64 << features.dim()) as f64,
                    };
                rescale = Some(z);
                trace.rescale = Some((n, z));
            }
        }

        let drift = if phase_one {
            pop.estimate_target(misfit_f)
        } else {
            pop.estimate_unnormalized(misfit_f, config.drift_scale)
        };

        let delta = if phase_one {
            config.schedule.base_delta(n)
        } else {
            config.schedule.base_delta(n) / rescale.unwrap_or(1.0)
        };

        for (l, g) in lambda.iter_mut().zip(drift.iter()) {
            *l += delta * g;
        }

        let sup = lambda.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let misfit = if config.track_misfit {
            let lam = ParamVector::new(lambda.clone()).map_err(|_| Error::Diverged {
                iteration: n,
                sup_norm: sup,
                bound: config.divergence_bound,
                trace: Box::new(trace.clone()),
            })?;
            let oracle = Oracle::with_cap(features.as_ref(), config.oracle_cap);
            Some(oracle.moments(&lam)?.sup_distance(m))
        } else {
            None
        };

        let drift_sup = drift.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        trace.records.push(TraceRecord {
            n,
            delta,
            lambda: lambda.clone(),
            drift,
            misfit,
            cost_evals: total_cost,
        });

        if !sup.is_finite() || sup > config.divergence_bound {
            return Err(Error::Diverged {
                iteration: n,
                sup_norm: sup,
                bound: config.divergence_bound,
                trace: Box::new(trace),
            });
        }

        if let Some(stop) = config.early_stop {
            drift_window.push(drift_sup);
            if drift_window.len() > stop.window {
                drift_window.remove(0);
            }
            if drift_window.len() == stop.window {
                let avg = drift_window.iter().sum::<f64>() / stop.window as f64;
                if avg < stop.tol {
                    trace.stopped_at = Some(n);
                    break;
                }
            }
        }
    }

    Ok(SolverRun { lambda: ParamVector::new(lambda)?, trace })
}

/// Maximum-likelihood fit: empirical moments of the observations fed through
/// [`solve_maxent`]. Boundary moments are flagged, not rejected.
pub fn solve_mle(
    observations: &[BitState],
    features: &Arc<dyn FeatureSet>,
    lambda0: &ParamVector,
    config: &SolverConfig,
    seed: StreamSeed,
) -> Result<MleRun> {
    let empirical = empirical_moments(observations, features.as_ref())?;
    let boundary_features = empirical
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 0.0 || v == 1.0)
        .map(|(j, _)| j)
        .collect();
    let run = solve_maxent(&empirical, features, lambda0, config, seed)?;
    Ok(MleRun { run, empirical, boundary_features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PairFeatures;

    /// The single pair feature x1·x2 on d = 2, for closed-form root tests.
    #[derive(Clone)]
    struct CrossFeature;

    impl FeatureSet for CrossFeature {
        fn dim(&self) -> usize {
            2
        }
        fn len(&self) -> usize {
            1
        }
        fn eval(&self, _j: usize, x: &BitState) -> f64 {
            (x.bit(0) && x.bit(1)) as u8 as f64
        }
        fn describe(&self, _j: usize) -> String {
            "x1*x2".into()
        }
    }

    fn arc<F: FeatureSet + 'static>(f: F) -> Arc<dyn FeatureSet> {
        Arc::new(f)
    }

    #[test]
    fn schedule_deltas() {
        let s = StepSchedule::harmonic(1.0, 10.0);
        assert!((s.base_delta(0) - 1.0).abs() < 1e-15);
        assert!((s.base_delta(10) - 0.5).abs() < 1e-15);
        let t = StepSchedule::defaults_for(4);
        assert_eq!(t.switch(), Some(8));
        assert!(t.in_phase_one(8));
        assert!(!t.in_phase_one(9));
    }

    #[test]
    fn robbins_monro_summability() {
        // Σ δ_n grows without bound (log-like), Σ δ_n² converges.
        let s = StepSchedule::harmonic(1.0, 5.0);
        let sum_to = |k: usize| -> f64 { (1..=k).map(|n| s.base_delta(n)).sum() };
        let sum_sq_tail = |from: usize, to: usize| -> f64 {
            (from..=to).map(|n| s.base_delta(n).powi(2)).sum()
        };
        // doubling the horizon keeps adding ~ ε·n0·ln 2
        let growth = sum_to(200_000) - sum_to(100_000);
        assert!((growth - 5.0 * std::f64::consts::LN_2).abs() < 0.01);
        // squared tail is tiny and shrinking
        assert!(sum_sq_tail(100_000, 200_000) < 1e-3);
        assert!(sum_sq_tail(100_000, 200_000) < sum_sq_tail(10_000, 100_000));
    }

    #[test]
    fn stays_at_root_when_already_solved() {
        let d = 3;
        let features = arc(PairFeatures::new(d));
        let m = {
            let feats = PairFeatures::new(d);
            Oracle::new(&feats).moments(&ParamVector::zeros(6)).unwrap()
        };
        let mut config = SolverConfig::defaults_for(d);
        config.iterations = 1000;
        config.track_misfit = true;
        let run = solve_maxent(&m, &features, &ParamVector::zeros(6), &config, StreamSeed::new(1))
            .unwrap();
        assert!(run.lambda.sup_norm() < 0.5, "lambda {:?}", run.lambda);
        let last = run.trace.records.last().unwrap();
        assert!(last.misfit.unwrap() < 0.05, "misfit {:?}", last.misfit);
    }

    #[test]
    fn single_feature_uniform_root() {
        // m = 1/4 is the uniform moment of x1·x2, so the root is λ = 0.
        let features = arc(CrossFeature);
        let m = MomentVector::new(vec![0.25]).unwrap();
        let mut config = SolverConfig::defaults_for(2);
        config.iterations = 5000;
        let run = solve_maxent(
            &m,
            &features,
            &ParamVector::zeros(1),
            &config,
            StreamSeed::new(2),
        )
        .unwrap();
        assert!(run.lambda.values()[0].abs() < 0.06, "lambda {:?}", run.lambda);
    }

    #[test]
    fn single_feature_closed_form_root() {
        // Π(x1x2|λ) = e^λ/(3+e^λ) = 1/2  ⇔  λ = ln 3.
        let features = arc(CrossFeature);
        let m = MomentVector::new(vec![0.5]).unwrap();
        let mut config = SolverConfig::defaults_for(2);
        config.iterations = 10_000;
        let run = solve_maxent(
            &m,
            &features,
            &ParamVector::zeros(1),
            &config,
            StreamSeed::new(3),
        )
        .unwrap();
        let err = (run.lambda.values()[0] - 3f64.ln()).abs();
        assert!(err < 0.05, "lambda {} vs ln3 {}", run.lambda.values()[0], 3f64.ln());
    }

    #[test]
    fn drift_scale_does_not_move_the_root() {
        let features = arc(CrossFeature);
        let m = MomentVector::new(vec![0.5]).unwrap();
        for scale in [GammaBase::Uniform, GammaBase::Counting] {
            let mut config = SolverConfig::defaults_for(2);
            config.iterations = 10_000;
            config.drift_scale = scale;
            let run = solve_maxent(
                &m,
                &features,
                &ParamVector::zeros(1),
                &config,
                StreamSeed::new(4),
            )
            .unwrap();
            let feats = CrossFeature;
            let fitted = Oracle::new(&feats).moments(&run.lambda).unwrap();
            assert!(
                (fitted.values()[0] - 0.5).abs() < 0.05,
                "scale {scale:?}: moment {:?}",
                fitted.values()
            );
        }
    }

    #[test]
    fn rescale_event_is_recorded() {
        let d = 2;
        let features = arc(PairFeatures::new(d));
        let feats = PairFeatures::new(d);
        let m = Oracle::new(&feats)
            .moments(&ParamVector::new(vec![0.5, -0.3, 0.2]).unwrap())
            .unwrap();
        let mut config = SolverConfig::defaults_for(d);
        config.iterations = 50;
        let run = solve_maxent(&m, &features, &ParamVector::zeros(3), &config, StreamSeed::new(5))
            .unwrap();
        let (at, value) = run.trace.rescale.expect("two-phase run must record the rescale");
        assert_eq!(at, 2 * d + 1);
        assert!(value > 0.0 && value.is_finite());
        // phase-2 deltas are divided by the captured estimate
        let r4 = &run.trace.records[2 * d - 1];
        let r5 = &run.trace.records[2 * d];
        assert!((r4.delta - config.schedule.base_delta(2 * d)).abs() < 1e-15);
        assert!((r5.delta - config.schedule.base_delta(2 * d + 1) / value).abs() < 1e-15);
    }

    #[test]
    fn infeasible_moments_trigger_divergence_guard() {
        let features = arc(CrossFeature);
        // no λ satisfies Π(x1x2|λ) = 1.2
        let m = MomentVector::new(vec![1.2]).unwrap();
        let mut config = SolverConfig::defaults_for(2);
        config.iterations = 100_000;
        config.divergence_bound = 5.0;
        let err = solve_maxent(
            &m,
            &features,
            &ParamVector::zeros(1),
            &config,
            StreamSeed::new(6),
        )
        .unwrap_err();
        match err {
            Error::Diverged { iteration, sup_norm, bound, trace } => {
                assert!(sup_norm > bound);
                assert_eq!(trace.records.len(), iteration);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn early_stop_fires_at_the_root() {
        let d = 2;
        let features = arc(PairFeatures::new(d));
        let feats = PairFeatures::new(d);
        let m = Oracle::new(&feats).moments(&ParamVector::zeros(3)).unwrap();
        let mut config = SolverConfig::defaults_for(d);
        config.iterations = 10_000;
        config.early_stop = Some(EarlyStop { window: 100, tol: 0.9 });
        let run = solve_maxent(&m, &features, &ParamVector::zeros(3), &config, StreamSeed::new(7))
            .unwrap();
        let stopped = run.trace.stopped_at.expect("loose tolerance must stop early");
        assert!(stopped < 10_000);
        assert_eq!(run.trace.records.len(), stopped);
    }

    #[test]
    fn empirical_moment_examples() {
        let feats = PairFeatures::new(2);
        let y = BitState::from_bits(&[1, 0]).unwrap();
        let single = empirical_moments(&[y], &feats).unwrap();
        assert_eq!(single.values(), feats.eval_vec(&y).as_slice());

        let y2 = [
            BitState::from_bits(&[1, 1]).unwrap(),
            BitState::from_bits(&[1, 0]).unwrap(),
        ];
        let m = empirical_moments(&y2, &feats).unwrap();
        assert_eq!(m.values(), &[1.0, 0.5, 0.5]);

        assert!(empirical_moments(&[], &feats).is_err());
        let bad = [BitState::from_bits(&[1, 0, 1]).unwrap()];
        assert!(empirical_moments(&bad, &feats).is_err());
    }

    #[test]
    fn empirical_moments_clt_check() {
        let d = 3;
        let feats = PairFeatures::new(d);
        let sampler = Oracle::new(&feats).sampler(&ParamVector::zeros(6)).unwrap();
        let mut rng = StreamSeed::new(8).rng(0);
        let m_count = 100_000;
        let ys = sampler.sample_many(m_count, &mut rng);
        let m = empirical_moments(&ys, &feats).unwrap();
        let uniform = Oracle::new(&feats).moments(&ParamVector::zeros(6)).unwrap();
        let se = (0.25_f64 / m_count as f64).sqrt();
        for (a, b) in m.values().iter().zip(uniform.values()) {
            assert!((a - b).abs() < 4.0 * se);
        }
    }

    #[test]
    fn mle_on_full_state_census_recovers_uniform() {
        let d = 2;
        let features = arc(PairFeatures::new(d));
        let ys: Vec<BitState> = (0..4).map(|i| BitState::from_index(i, d)).collect();
        let mut config = SolverConfig::defaults_for(d);
        config.iterations = 2000;
        let fit = solve_mle(&ys, &features, &ParamVector::zeros(3), &config, StreamSeed::new(9))
            .unwrap();
        assert_eq!(fit.empirical.values(), &[0.5, 0.25, 0.5]);
        assert!(fit.boundary_features.is_empty());
        assert!(fit.run.lambda.sup_norm() < 0.5, "lambda {:?}", fit.run.lambda);
    }

    #[test]
    fn mle_flags_boundary_moments() {
        let d = 2;
        let features = arc(PairFeatures::new(d));
        let ys = [
            BitState::from_bits(&[1, 1]).unwrap(),
            BitState::from_bits(&[1, 0]).unwrap(),
        ];
        let mut config = SolverConfig::defaults_for(d);
        config.iterations = 50;
        let fit = solve_mle(&ys, &features, &ParamVector::zeros(3), &config, StreamSeed::new(10))
            .unwrap();
        assert_eq!(fit.empirical.values(), &[1.0, 0.5, 0.5]);
        assert_eq!(fit.boundary_features, vec![0]);
    }

    #[test]
    fn mle_end_to_end_against_sampling_oracle() {
        let d = 4;
        let feats = PairFeatures::new(d);
        let features = arc(PairFeatures::new(d));
        let mut rng = StreamSeed::new(11).rng(0);
        let truth = ParamVector::random_uniform(feats.len(), -1.0, 1.0, &mut rng);
        let sampler = Oracle::new(&feats).sampler(&truth).unwrap();
        let ys = sampler.sample_many(10_000, &mut rng);

        let mut config = SolverConfig::defaults_for(d);
        config.iterations = 10_000;
        let fit = solve_mle(&ys, &features, &ParamVector::zeros(10), &config, StreamSeed::new(12))
            .unwrap();
        let fitted_moments = Oracle::new(&feats).moments(&fit.run.lambda).unwrap();
        let misfit = fitted_moments.sup_distance(&fit.empirical);
        assert!(misfit < 0.03, "misfit {misfit}");
    }
}
