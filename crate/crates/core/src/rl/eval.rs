//! Greedy evaluation with either dense or event-driven inference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::delta::{DeltaEvent, DeltaNetwork, OpCounter, Thresholds};
use crate::error::{Error, Result};
use crate::network::{NetworkSpec, WeightSet};
use crate::rl::agent::greedy_action;
use crate::rl::env::EnvSpec;
use crate::rl::qnet::{forward_cached, ForwardCache};

#[derive(Debug, Clone, PartialEq)]
pub enum EvalMode {
    Dense,
    Delta(Thresholds),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seed: u64,
    /// Probability of a uniformly random action instead of the greedy one.
    pub epsilon: f64,
    /// Keep every transmitted event of the first episode (delta mode only).
    pub trace_first_episode: bool,
    /// Resynchronise delta accumulators every this many steps; 0 never.
    pub resync_every: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            episodes: 10,
            seed: 0,
            epsilon: 0.0,
            trace_first_episode: false,
            resync_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_reward: f64,
    pub episode_rewards: Vec<f64>,
    pub episode_lengths: Vec<usize>,
    /// Actions taken in each episode.
    pub actions: Vec<Vec<usize>>,
    /// Operation counts, delta mode only.
    pub counter: Option<OpCounter>,
    pub trace: Vec<DeltaEvent>,
}

/// Seed of episode `e`; the same for both inference modes so their runs are
/// comparable.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    let mut z = seed ^ (episode as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn evaluate(
    env_spec: &EnvSpec,
    spec: &NetworkSpec,
    weights: &WeightSet,
    mode: &EvalMode,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    if opts.episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    if spec.input_shape() != env_spec.kind.state_shape() || spec.n_output() != env_spec.kind.n_actions() {
        return Err(Error::InvalidArchitecture(format!(
            "network {:?} -> {} does not fit {} ({:?} -> {})",
            spec.input_shape(),
            spec.n_output(),
            env_spec.kind,
            env_spec.kind.state_shape(),
            env_spec.kind.n_actions()
        )));
    }
    weights.check_against(spec)?;

    let mut delta = match mode {
        EvalMode::Dense => None,
        EvalMode::Delta(t) => Some(DeltaNetwork::new(spec.clone(), weights.clone(), t.clone())?),
    };
    let mut counter = delta.as_ref().map(DeltaNetwork::new_counter);
    let mut cache = ForwardCache::new(spec);
    let mut trace = Vec::new();
    let mut result = EvalResult {
        mean_reward: 0.0,
        episode_rewards: Vec::with_capacity(opts.episodes),
        episode_lengths: Vec::with_capacity(opts.episodes),
        actions: Vec::with_capacity(opts.episodes),
        counter: None,
        trace: Vec::new(),
    };

    for e in 0..opts.episodes {
        let s = episode_seed(opts.seed, e);
        let mut env = env_spec.make(s);
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0xA5A5_A5A5);
        let n_actions = env.n_actions();
        if let Some(net) = delta.as_mut() {
            net.reset();
        }
        let mut state = env.reset();
        let mut total = 0.0;
        let mut actions = Vec::new();
        loop {
            let greedy = match (delta.as_mut(), counter.as_mut()) {
                (Some(net), Some(c)) => {
                    if opts.resync_every > 0 && !actions.is_empty() && actions.len() % opts.resync_every == 0 {
                        net.resync();
                    }
                    let out = if opts.trace_first_episode && e == 0 {
                        net.step_traced(&state, c, &mut |ev| trace.push(ev))?
                    } else {
                        net.step(&state, c)?
                    };
                    greedy_action(out.data())
                }
                _ => greedy_action(forward_cached(spec, weights, state.data(), &mut cache)),
            };
            let action = if opts.epsilon > 0.0 && rng.gen::<f64>() < opts.epsilon {
                rng.gen_range(0..n_actions)
            } else {
                greedy
            };
            actions.push(action);
            let out = env.step(action)?;
            total += out.reward;
            if out.done() {
                break;
            }
            state = out.state;
        }
        result.episode_rewards.push(total);
        result.episode_lengths.push(actions.len());
        result.actions.push(actions);
    }
    result.mean_reward = result.episode_rewards.iter().sum::<f64>() / opts.episodes as f64;
    result.counter = counter;
    result.trace = trace;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, LayerSpec};
    use crate::rl::env::EnvKind;

    fn setup() -> (EnvSpec, NetworkSpec, WeightSet) {
        let env = EnvSpec::new(EnvKind::MiniBreakout, 60);
        let spec = NetworkSpec::new(
            env.kind.state_shape(),
            vec![
                LayerSpec::conv2d(4, 4, (3, 3), 1, Activation::Relu),
                LayerSpec::dense(256, 16, Activation::Relu),
                LayerSpec::dense(16, 3, Activation::Identity),
            ],
        )
        .unwrap();
        let ws = WeightSet::init_uniform(&spec, 11);
        (env, spec, ws)
    }

    #[test]
    fn zero_threshold_delta_acts_like_dense() {
        let (env, spec, ws) = setup();
        let opts = EvalOptions {
            episodes: 5,
            seed: 3,
            ..EvalOptions::default()
        };
        let dense = evaluate(&env, &spec, &ws, &EvalMode::Dense, &opts).unwrap();
        let delta = evaluate(&env, &spec, &ws, &EvalMode::Delta(Thresholds::uniform(0.0, 3)), &opts).unwrap();
        assert_eq!(dense.actions, delta.actions);
        assert_eq!(dense.episode_rewards, delta.episode_rewards);
        assert!(dense.counter.is_none());
        let c = delta.counter.unwrap();
        assert_eq!(c.timesteps as usize, dense.episode_lengths.iter().sum::<usize>());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (env, spec, ws) = setup();
        let opts = EvalOptions {
            episodes: 3,
            seed: 8,
            epsilon: 0.2,
            ..EvalOptions::default()
        };
        let mode = EvalMode::Delta(Thresholds::uniform(0.01, 3));
        let a = evaluate(&env, &spec, &ws, &mode, &opts).unwrap();
        let b = evaluate(&env, &spec, &ws, &mode, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn huge_threshold_sends_almost_nothing() {
        let (env, spec, ws) = setup();
        let opts = EvalOptions {
            episodes: 2,
            ..EvalOptions::default()
        };
        let small = evaluate(&env, &spec, &ws, &EvalMode::Delta(Thresholds::uniform(0.0, 3)), &opts).unwrap();
        let huge = evaluate(&env, &spec, &ws, &EvalMode::Delta(Thresholds::uniform(1e9, 3)), &opts).unwrap();
        let (s, h) = (small.counter.unwrap(), huge.counter.unwrap());
        assert!(h.total_multiplications() < s.total_multiplications());
        // Only the first frame of each episode is forced through.
        assert_eq!(h.input_events, 0);
    }

    #[test]
    fn trace_covers_first_episode_only() {
        let (env, spec, ws) = setup();
        let opts = EvalOptions {
            episodes: 2,
            trace_first_episode: true,
            ..EvalOptions::default()
        };
        let r = evaluate(&env, &spec, &ws, &EvalMode::Delta(Thresholds::uniform(0.0, 3)), &opts).unwrap();
        assert!(!r.trace.is_empty());
        let len0 = r.episode_lengths[0] as u64;
        assert!(r.trace.iter().all(|e| e.timestep < len0 + 1));
    }

    #[test]
    fn rejects_zero_episodes_and_wrong_network() {
        let (env, spec, ws) = setup();
        let opts = EvalOptions {
            episodes: 0,
            ..EvalOptions::default()
        };
        assert!(evaluate(&env, &spec, &ws, &EvalMode::Dense, &opts).is_err());
        let other = EnvSpec::new(EnvKind::MiniInvaders, 10);
        assert!(evaluate(&other, &spec, &ws, &EvalMode::Dense, &EvalOptions::default()).is_err());
    }
}
