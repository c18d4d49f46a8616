//! Data simulation, file formats, and the experiment runners behind the
//! `maxent` CLI: `simulate`, `maxent`, `mle`, `posterior`, and `oracle`.
//!
//! Every runner resolves its configuration (CLI overrides already applied),
//! stamps outputs with (seed, config hash, version), and is deterministic
//! given the seed. Replicate sweeps fan out across threads with derived
//! per-replicate seeds and merge in seed order.

pub mod config;
pub mod obsfile;
pub mod output;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::debias::LevelPlan;
use crate::error::{Error, Result};
use crate::model::{BitState, FeatureSet, MomentVector, Oracle, PairFeatures, ParamVector};
use crate::rng::{phase, stream_id, StreamSeed};
use crate::sgld::{
    posterior_summary, run_chain, weighted_quantile, ChainConfig, ConsistentGradient,
    DebiasedGradient, GradientSource, SummaryConfig,
};
use crate::smc::{AnnealingSchedule, MutationKernelConfig, SmcConfig};
use crate::solver::{solve_maxent, SolverConfig, SolverTrace, StepSchedule};

pub use config::{ExperimentConfig, GradientKind, Mode, Overrides, ScheduleKind};
pub use obsfile::ObservationFile;
pub use output::{FitResult, Meta, OracleResult, PosteriorResult, ReplicateSummary};

// Seed-tree tags: λ* draw, data generation, solve/chain, summary resampling.
const TAG_LAMBDA: u64 = 0;
const TAG_DATA: u64 = 1;
const TAG_SOLVE: u64 = 2;
const TAG_SUMMARY: u64 = 3;

/// Run the configured experiment, returning the paths written.
pub fn run(cfg: &ExperimentConfig, replicates: usize) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if replicates == 0 {
        return Err(Error::InvalidConfig("replicates must be at least 1".into()));
    }
    if replicates > 1 && !matches!(cfg.mode, Mode::MaxentExact | Mode::Mle) {
        return Err(Error::InvalidConfig(format!(
            "--replicates applies to maxent_exact and mle runs, not {}",
            cfg.mode.name()
        )));
    }
    let out_dir = cfg.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)?;

    // Echo the resolved configuration next to the results.
    let resolved_path = out_dir.join("config.resolved.json");
    std::fs::write(&resolved_path, cfg.to_json() + "\n")?;

    let mut written = vec![resolved_path];
    match cfg.mode {
        Mode::Simulate => written.extend(run_simulate(cfg, &out_dir)?),
        Mode::MaxentExact | Mode::Mle => written.extend(run_fit(cfg, &out_dir, replicates)?),
        Mode::Posterior => written.extend(run_posterior(cfg, &out_dir)?),
        Mode::Oracle => written.extend(run_oracle(cfg, &out_dir)?),
    }
    Ok(written)
}

fn features_for(cfg: &ExperimentConfig) -> Arc<dyn FeatureSet> {
    Arc::new(PairFeatures::new(cfg.d))
}

/// The generating / target parameters: explicit when given, else drawn
/// uniformly from `lambda_range` under the λ subtree of the seed.
fn resolve_lambda(cfg: &ExperimentConfig, features: &dyn FeatureSet) -> Result<ParamVector> {
    match &cfg.lambda_true {
        Some(values) => ParamVector::new(values.clone()),
        None => {
            let mut rng = StreamSeed::new(cfg.seed).child(TAG_LAMBDA).rng(0);
            Ok(ParamVector::random_uniform(
                features.len(),
                cfg.lambda_range.0,
                cfg.lambda_range.1,
                &mut rng,
            ))
        }
    }
}

fn solver_config(cfg: &ExperimentConfig) -> Result<SolverConfig> {
    let d = cfg.d;
    let schedule = match cfg.schedule.kind {
        ScheduleKind::Harmonic => StepSchedule::harmonic(
            cfg.schedule.epsilon,
            cfg.schedule.n0.unwrap_or(5.0 * d as f64),
        ),
        ScheduleKind::TwoPhase => StepSchedule::two_phase(
            cfg.schedule.epsilon,
            cfg.schedule.n0.unwrap_or(5.0 * d as f64),
            cfg.schedule.switch.unwrap_or(2 * d),
        ),
    };
    let config = SolverConfig {
        smc: smc_config(cfg),
        schedule,
        iterations: cfg.iterations,
        track_misfit: cfg.track_misfit,
        oracle_cap: cfg.d_cap,
        ..SolverConfig::defaults_for(d)
    };
    config.validate()?;
    Ok(config)
}

fn smc_config(cfg: &ExperimentConfig) -> SmcConfig {
    let d = cfg.d;
    SmcConfig {
        particles: cfg.smc.particles.unwrap_or(2 * d),
        kernel: MutationKernelConfig::bitflip(cfg.smc.beta, cfg.smc.sweeps.unwrap_or(d)),
        resampling: cfg.smc.resampling,
    }
}

// ---------------------------------------------------------------------------
// simulate

/// The full unnormalized target log q(x|λ) as a zero-step schedule, so the
/// mutation kernels can target it directly.
struct FullTarget {
    features: Arc<dyn FeatureSet>,
    lambda: ParamVector,
}

impl AnnealingSchedule for FullTarget {
    fn dim(&self) -> usize {
        self.features.dim()
    }
    fn num_steps(&self) -> usize {
        0
    }
    fn log_gamma(&self, _j: usize, x: &BitState) -> f64 {
        self.features.weighted_sum(self.lambda.values(), x)
    }
}

/// Approximate sampling for d beyond the enumeration cap: a Gibbs chain on
/// the full target with the configured burn-in and thinning.
fn gibbs_simulate(
    features: &Arc<dyn FeatureSet>,
    lambda: &ParamVector,
    count: usize,
    burn_in_sweeps: usize,
    thin_sweeps: usize,
    seed: StreamSeed,
) -> Vec<BitState> {
    let target = FullTarget { features: Arc::clone(features), lambda: lambda.clone() };
    let d = features.dim();
    let mut rng = seed.rng(stream_id(0, 0, phase::MUTATE));
    let mut state = BitState::random_uniform(d, &mut rng);
    let mut log_gamma = target.log_gamma(0, &state);
    let mut evals = 0u64;
    let burn = MutationKernelConfig::gibbs(burn_in_sweeps.max(1));
    burn.apply(&target, 0, &mut state, &mut log_gamma, &mut rng, &mut evals);
    let thin = MutationKernelConfig::gibbs(thin_sweeps.max(1));
    (0..count)
        .map(|_| {
            thin.apply(&target, 0, &mut state, &mut log_gamma, &mut rng, &mut evals);
            state
        })
        .collect()
}

fn run_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let features = features_for(cfg);
    let lambda = resolve_lambda(cfg, features.as_ref())?;
    let count = cfg.m_count.expect("validated");
    let seed = StreamSeed::new(cfg.seed).child(TAG_DATA);

    let states = if cfg.d <= cfg.d_cap {
        let oracle = Oracle::with_cap(features.as_ref(), cfg.d_cap);
        let sampler = oracle.sampler(&lambda)?;
        sampler.sample_many(count, &mut seed.rng(0))
    } else {
        // validated: mcmc_sampling is set. Approximate sampler.
        gibbs_simulate(
            &features,
            &lambda,
            count,
            cfg.mcmc.burn_in_sweeps,
            cfg.mcmc.thin_sweeps,
            seed,
        )
    };

    let mut file = ObservationFile::new(cfg.d, states)?;
    file.seed = Some(cfg.seed);
    file.generator = Some(lambda);
    let path = out_dir.join(if cfg.packed { "observations.bin" } else { "observations.txt" });
    file.write_to_path(&path, cfg.packed)?;
    Ok(vec![path])
}

// ---------------------------------------------------------------------------
// maxent / mle

struct FitInput {
    target: MomentVector,
    lambda_true: Option<ParamVector>,
    boundary: Vec<usize>,
}

fn fit_input(cfg: &ExperimentConfig, features: &Arc<dyn FeatureSet>) -> Result<FitInput> {
    match cfg.mode {
        Mode::MaxentExact => {
            if let Some(m) = &cfg.moments {
                return Ok(FitInput {
                    target: MomentVector::new(m.clone())?,
                    lambda_true: cfg.lambda_true.clone().map(ParamVector::new).transpose()?,
                    boundary: Vec::new(),
                });
            }
            let lambda = resolve_lambda(cfg, features.as_ref())?;
            let oracle = Oracle::with_cap(features.as_ref(), cfg.d_cap);
            Ok(FitInput {
                target: oracle.moments(&lambda)?,
                lambda_true: Some(lambda),
                boundary: Vec::new(),
            })
        }
        Mode::Mle => {
            let path = cfg.observations.as_ref().expect("validated");
            let file = ObservationFile::read_from_path(path)?;
            if file.dim != cfg.d {
                return Err(Error::DimensionMismatch {
                    context: "observation file dimension",
                    expected: cfg.d,
                    actual: file.dim,
                });
            }
            let target = crate::solver::empirical_moments(&file.states, features.as_ref())?;
            let boundary = target
                .values()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 0.0 || v == 1.0)
                .map(|(j, _)| j)
                .collect();
            Ok(FitInput { target, lambda_true: file.generator, boundary })
        }
        _ => unreachable!("fit_input is only called for fit modes"),
    }
}

fn fit_result(
    cfg: &ExperimentConfig,
    features: &Arc<dyn FeatureSet>,
    input: &FitInput,
    lambda: &ParamVector,
    trace: &SolverTrace,
    meta: Meta,
) -> Result<FitResult> {
    let pair = PairFeatures::new(cfg.d);
    let (fitted, misfit) = if cfg.d <= cfg.d_cap {
        let oracle = Oracle::with_cap(features.as_ref(), cfg.d_cap);
        let fitted = oracle.moments(lambda)?;
        let misfit = fitted.sup_distance(&input.target);
        (Some(fitted.values().to_vec()), Some(misfit))
    } else {
        (None, None)
    };
    let lambda_max_error = input.lambda_true.as_ref().map(|truth| {
        lambda
            .values()
            .iter()
            .zip(truth.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    });
    Ok(FitResult {
        meta,
        mode: cfg.mode.name().to_string(),
        d: cfg.d,
        feature_count: features.len(),
        feature_names: (0..features.len()).map(|j| features.describe(j)).collect(),
        lambda: lambda.values().to_vec(),
        lambda_matrix: pair.matrix_of(lambda)?,
        target_moments: input.target.values().to_vec(),
        fitted_moments: fitted,
        misfit_sup: misfit,
        lambda_max_error,
        lambda_true: input.lambda_true.as_ref().map(|l| l.values().to_vec()),
        boundary_features: input.boundary.clone(),
        rescale: trace.rescale,
        iterations_run: trace.records.len(),
        total_cost_evals: trace.records.last().map_or(0, |r| r.cost_evals),
    })
}

fn run_fit(cfg: &ExperimentConfig, out_dir: &Path, replicates: usize) -> Result<Vec<PathBuf>> {
    let features = features_for(cfg);
    let input = fit_input(cfg, &features)?;
    let solver_cfg = solver_config(cfg)?;
    let hash = cfg.sha256();
    let lambda0 = ParamVector::zeros(features.len());

    if replicates == 1 {
        let seed = StreamSeed::new(cfg.seed).child(TAG_SOLVE);
        let meta = Meta::new(cfg.seed, hash.clone());
        let trace_path = out_dir.join("trace.csv");
        let run = match solve_maxent(&input.target, &features, &lambda0, &solver_cfg, seed) {
            Ok(run) => run,
            Err(Error::Diverged { iteration, sup_norm, bound, trace }) => {
                // leave the partial trace behind for inspection
                output::write_trace_csv_path(&trace_path, &trace, &meta)?;
                return Err(Error::Diverged { iteration, sup_norm, bound, trace });
            }
            Err(e) => return Err(e),
        };
        output::write_trace_csv_path(&trace_path, &run.trace, &meta)?;
        let result = fit_result(cfg, &features, &input, &run.lambda, &run.trace, meta)?;
        let result_path = out_dir.join("result.json");
        output::write_json(&result_path, &result)?;
        return Ok(vec![result_path, trace_path]);
    }

    // Replicate sweep: derived seeds, parallel execution, seed-order merge.
    let root = StreamSeed::new(cfg.seed).child(TAG_SOLVE);
    let seeds: Vec<u64> = (0..replicates).map(|r| root.child(r as u64).value()).collect();
    let runs: Vec<Result<(ParamVector, SolverTrace)>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            solve_maxent(&input.target, &features, &lambda0, &solver_cfg, root.child(r as u64))
                .map(|run| (run.lambda, run.trace))
        })
        .collect();

    let mut written = Vec::new();
    let mut misfits = Vec::with_capacity(replicates);
    for (r, outcome) in runs.into_iter().enumerate() {
        let (lambda, trace) = outcome?;
        let meta = Meta::new(seeds[r], hash.clone());
        let result = fit_result(cfg, &features, &input, &lambda, &trace, meta.clone())?;
        misfits.push(result.misfit_sup);
        let result_path = out_dir.join(format!("result_r{r:03}.json"));
        let trace_path = out_dir.join(format!("trace_r{r:03}.csv"));
        output::write_json(&result_path, &result)?;
        output::write_trace_csv_path(&trace_path, &trace, &meta)?;
        written.push(result_path);
        written.push(trace_path);
    }
    let known: Vec<f64> = misfits.iter().flatten().copied().collect();
    let summary = ReplicateSummary {
        meta: Meta::new(cfg.seed, hash),
        replicates,
        seeds,
        misfits,
        mean_misfit: if known.is_empty() {
            None
        } else {
            Some(known.iter().sum::<f64>() / known.len() as f64)
        },
    };
    let summary_path = out_dir.join("summary.json");
    output::write_json(&summary_path, &summary)?;
    written.push(summary_path);
    Ok(written)
}

// ---------------------------------------------------------------------------
// posterior

fn run_posterior(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let features = features_for(cfg);
    let path = cfg.observations.as_ref().expect("validated");
    let file = ObservationFile::read_from_path(path)?;
    if file.dim != cfg.d {
        return Err(Error::DimensionMismatch {
            context: "observation file dimension",
            expected: cfg.d,
            actual: file.dim,
        });
    }
    let empirical = crate::solver::empirical_moments(&file.states, features.as_ref())?;
    let observation_count = file.states.len();

    let post = &cfg.posterior;
    let plan = LevelPlan::new(post.plan.n0, post.plan.growth, post.plan.l_max)?;
    let kernel = smc_config(cfg).kernel;
    let source: Box<dyn GradientSource> = match post.gradient {
        GradientKind::Debiased => Box::new(DebiasedGradient {
            features: Arc::clone(&features),
            empirical: empirical.clone(),
            observations: observation_count,
            prior: post.prior.clone(),
            plan,
            kernel,
        }),
        GradientKind::Consistent => Box::new(ConsistentGradient {
            features: Arc::clone(&features),
            empirical: empirical.clone(),
            observations: observation_count,
            prior: post.prior.clone(),
            smc: smc_config(cfg),
        }),
    };

    let chain_cfg = ChainConfig {
        steps: post.steps,
        delta0: post.delta0,
        exponent: post.exponent,
        ..ChainConfig::new(post.steps)
    };
    let meta = Meta::new(cfg.seed, cfg.sha256());
    let seed = StreamSeed::new(cfg.seed).child(TAG_SOLVE);
    let samples_path = out_dir.join("samples.csv");
    let chain =
        match run_chain(&ParamVector::zeros(features.len()), source.as_ref(), &chain_cfg, seed) {
            Ok(chain) => chain,
            Err(Error::ChainDiverged { iteration, sup_norm, bound, samples }) => {
                output::write_samples_csv_path(&samples_path, &samples, &meta)?;
                return Err(Error::ChainDiverged { iteration, sup_norm, bound, samples });
            }
            Err(e) => return Err(e),
        };
    output::write_samples_csv_path(&samples_path, &chain.samples, &meta)?;

    let pair = PairFeatures::new(cfg.d);
    let diag = pair.diagonal_indices();
    let summary_cfg =
        SummaryConfig { burn_in: post.burn_in, bins: post.bins, resample_draws: None };
    let summary = posterior_summary(
        &chain.samples,
        &diag,
        &summary_cfg,
        StreamSeed::new(cfg.seed).child(TAG_SUMMARY),
    )?;
    let start = (chain.samples.len() as f64 * post.burn_in).floor() as usize;
    let kept = &chain.samples[start.min(chain.samples.len())..];
    let intervals_99: Vec<(f64, f64)> = diag
        .iter()
        .map(|&c| {
            (
                weighted_quantile(kept, c, 0.005).expect("nonempty"),
                weighted_quantile(kept, c, 0.995).expect("nonempty"),
            )
        })
        .collect();

    let result = PosteriorResult {
        meta,
        d: cfg.d,
        feature_count: features.len(),
        observation_count,
        steps: post.steps,
        weighted_mean: summary.weighted_mean.clone(),
        weighted_cov: summary.weighted_cov.clone(),
        diag_indices: diag,
        marginals: summary.marginals,
        pairwise: summary.pairwise,
        intervals_99,
        lambda_true: file.generator.map(|l| l.values().to_vec()),
        total_cost_evals: chain.total_cost,
    };
    let posterior_path = out_dir.join("posterior.json");
    output::write_json(&posterior_path, &result)?;
    Ok(vec![samples_path, posterior_path])
}

// ---------------------------------------------------------------------------
// oracle

fn run_oracle(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let features = features_for(cfg);
    let lambda = resolve_lambda(cfg, features.as_ref())?;
    let oracle = Oracle::with_cap(features.as_ref(), cfg.d_cap);
    let log_partition = oracle.log_partition(&lambda)?;
    let result = OracleResult {
        meta: Meta::new(cfg.seed, cfg.sha256()),
        d: cfg.d,
        feature_count: features.len(),
        feature_names: (0..features.len()).map(|j| features.describe(j)).collect(),
        lambda: lambda.values().to_vec(),
        log_partition,
        partition: log_partition.exp(),
        moments: oracle.moments(&lambda)?.values().to_vec(),
        entropy: oracle.entropy(&lambda)?,
    };
    let path = out_dir.join("oracle.json");
    output::write_json(&path, &result)?;
    Ok(vec![path])
}
