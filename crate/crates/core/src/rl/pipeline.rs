//! Iterative prune, rewind and retrain, with dense and delta evaluation of
//! every resulting network.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::delta::DeltaEvent;
use crate::error::Result;
use crate::network::{NetworkSpec, WeightSet};
use crate::pruning::{PrunableWeights, SparsityReport};
use crate::report::RunRecord;
use crate::rl::agent::{train, TrainReport};
use crate::rl::env::EnvSpec;
use crate::rl::eval::{evaluate, EvalMode, EvalOptions, EvalResult};

/// Seed offset separating evaluation rollouts from training.
const EVAL_SEED_SALT: u64 = 0xE7A1_0000;

/// Everything measured for one trained network.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub iteration: u32,
    pub sparsity: SparsityReport,
    pub train: TrainReport,
    pub dense: EvalResult,
    /// One run record per configured threshold, in configuration order.
    pub records: Vec<RunRecord>,
    /// Events of the first episode at the operating threshold, if requested.
    pub trace: Vec<DeltaEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub reward_dense: f64,
    pub train: TrainReport,
}

/// Dense evaluation plus one delta evaluation per threshold.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_network(
    cfg: &ExperimentConfig,
    env: &EnvSpec,
    spec: &NetworkSpec,
    weights: &WeightSet,
    iteration: u32,
    sparsity: &SparsityReport,
    thresholds: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<(EvalResult, Vec<RunRecord>, Vec<DeltaEvent>)> {
    let opts = EvalOptions {
        episodes,
        seed,
        epsilon: cfg.eval.epsilon,
        trace_first_episode: false,
        resync_every: cfg.delta.resync_every,
    };
    let dense = evaluate(env, spec, weights, &EvalMode::Dense, &opts)?;
    let operating = thresholds.iter().copied().reduce(f64::max);
    let mut records = Vec::with_capacity(thresholds.len());
    let mut trace = Vec::new();
    for &t in thresholds {
        let want_trace = cfg.delta.trace && Some(t) == operating && trace.is_empty();
        let mode = EvalMode::Delta(cfg.delta.thresholds_for(t, spec.num_layers()));
        let run = evaluate(
            env,
            spec,
            weights,
            &mode,
            &EvalOptions {
                trace_first_episode: want_trace,
                ..opts.clone()
            },
        )?;
        let counter = run.counter.as_ref().expect("delta mode always counts");
        records.push(RunRecord::from_measurements(
            iteration,
            t,
            spec,
            sparsity,
            counter,
            dense.mean_reward,
            run.mean_reward,
        )?);
        if want_trace {
            trace = run.trace;
        }
    }
    Ok((dense, records, trace))
}

/// Trains the baseline, then runs `cfg.pruning.iterations` rounds of
/// prune, rewind to the initial weights and retrain.
///
/// `on_baseline` sees the trained unpruned network; `on_iteration` sees
/// every pruned network after evaluation. Both may abort the run.
pub fn lottery_pipeline(
    cfg: &ExperimentConfig,
    mut on_baseline: impl FnMut(&BaselineSummary, &PrunableWeights) -> Result<()>,
    mut on_iteration: impl FnMut(&IterationOutcome, &PrunableWeights) -> Result<()>,
) -> Result<Vec<IterationOutcome>> {
    cfg.validate()?;
    let env = cfg.env_spec()?;
    let spec = cfg.network_spec()?;
    let init = WeightSet::init_uniform(&spec, cfg.seed);
    let mut weights = PrunableWeights::new(init, cfg.pruning.rate, cfg.prune_scope(&spec))?;
    let eval_seed = cfg.seed ^ EVAL_SEED_SALT;

    let base_train = train(&env, &spec, &mut weights, &cfg.training, cfg.seed)?;
    let base_opts = EvalOptions {
        episodes: cfg.eval.episodes,
        seed: eval_seed,
        epsilon: cfg.eval.epsilon,
        ..EvalOptions::default()
    };
    let base_eval = evaluate(&env, &spec, weights.live(), &EvalMode::Dense, &base_opts)?;
    on_baseline(
        &BaselineSummary {
            reward_dense: base_eval.mean_reward,
            train: base_train,
        },
        &weights,
    )?;

    let mut outcomes = Vec::with_capacity(cfg.pruning.iterations as usize);
    for _ in 0..cfg.pruning.iterations {
        weights.prune_step()?;
        weights.rewind();
        let iteration = weights.iteration();
        let trained = train(
            &env,
            &spec,
            &mut weights,
            &cfg.training,
            cfg.seed.wrapping_add(iteration as u64),
        )?;
        let sparsity = weights.report_sparsity();
        let (dense, records, trace) = evaluate_network(
            cfg,
            &env,
            &spec,
            weights.live(),
            iteration,
            &sparsity,
            &cfg.delta.thresholds,
            cfg.eval.episodes,
            eval_seed,
        )?;
        let outcome = IterationOutcome {
            iteration,
            sparsity,
            train: trained,
            dense,
            records,
            trace,
        };
        on_iteration(&outcome, &weights)?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}
