//! Double-DQN training with masked weights.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkSpec, WeightSet};
use crate::pruning::PrunableWeights;
use crate::rl::env::EnvSpec;
use crate::rl::eval::{evaluate, EvalMode, EvalOptions};
use crate::rl::qnet::{forward_cached, q_loss_and_grad, zero_grads, Adam, AdamParams, ForwardCache, QSample};
use crate::rl::replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Environment steps.
    pub steps: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Steps of pure data collection before the first update.
    pub learning_starts: usize,
    pub train_every: usize,
    pub target_sync_every: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    /// Greedy evaluation period for the reward curve; 0 disables it.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Return the weights with the best periodic evaluation instead of the
    /// final ones. Has no effect when `eval_every` is 0.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 50_000,
            batch_size: 32,
            replay_capacity: 20_000,
            learning_starts: 1_000,
            train_every: 4,
            target_sync_every: 1_000,
            gamma: 0.99,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 20_000,
            eval_every: 5_000,
            eval_episodes: 20,
            keep_best: true,
        }
    }
}

impl TrainConfig {
    /// Linear anneal from `epsilon_start` to `epsilon_end`.
    pub fn epsilon_at(&self, step: usize) -> f64 {
        if self.epsilon_decay_steps == 0 || step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                errs.push(format!("training.{msg}"));
            }
        };
        check(self.batch_size >= 1, "batch_size must be >= 1");
        check(
            self.replay_capacity >= self.batch_size,
            "replay_capacity must be >= batch_size",
        );
        check(self.train_every >= 1, "train_every must be >= 1");
        check(self.target_sync_every >= 1, "target_sync_every must be >= 1");
        check(self.gamma > 0.0 && self.gamma < 1.0, "gamma must be in (0, 1)");
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be > 0",
        );
        check((0.0..1.0).contains(&self.adam_beta1), "adam_beta1 must be in [0, 1)");
        check((0.0..1.0).contains(&self.adam_beta2), "adam_beta2 must be in [0, 1)");
        check(self.adam_epsilon > 0.0, "adam_epsilon must be > 0");
        check(
            (0.0..=1.0).contains(&self.epsilon_start),
            "epsilon_start must be in [0, 1]",
        );
        check((0.0..=1.0).contains(&self.epsilon_end), "epsilon_end must be in [0, 1]");
        check(
            self.eval_every == 0 || self.eval_episodes >= 1,
            "eval_episodes must be >= 1 when eval_every > 0",
        );
        errs
    }

    fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Index of the largest value; the first one wins ties.
pub fn greedy_action(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// `r` for terminal transitions, otherwise
/// `r + gamma * Q_target(s', argmax_a Q_online(s', a))`.
pub fn double_q_value(reward: f64, done: bool, gamma: f64, q_online_next: &[f64], q_target_next: &[f64]) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q_target_next[greedy_action(q_online_next)]
    }
}

/// Online network, target network and the discount they are combined with.
#[derive(Debug, Clone)]
pub struct AgentParams<'a> {
    pub spec: &'a NetworkSpec,
    pub online: &'a WeightSet,
    pub target: &'a WeightSet,
    pub gamma: f64,
}

pub fn double_q_target(batch: &[&Transition], params: &AgentParams<'_>) -> Vec<f64> {
    let mut online_cache = ForwardCache::new(params.spec);
    let mut target_cache = ForwardCache::new(params.spec);
    batch
        .iter()
        .map(|t| {
            if t.done {
                return t.reward;
            }
            let s = t.next_state.data();
            let q_online = forward_cached(params.spec, params.online, s, &mut online_cache);
            let q_target = forward_cached(params.spec, params.target, s, &mut target_cache);
            double_q_value(t.reward, false, params.gamma, q_online, q_target)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `(environment step, mean greedy reward)` pairs.
    pub curve: Vec<(usize, f64)>,
    pub episode_returns: Vec<f64>,
    pub updates: usize,
    pub final_loss: Option<f64>,
    /// Step of the returned weights when `keep_best` picked a periodic
    /// snapshot.
    pub selected_step: Option<usize>,
}

/// Trains `weights.live()` in place. Masked weights are never updated and
/// stay exactly zero.
pub fn train(
    env_spec: &EnvSpec,
    spec: &NetworkSpec,
    weights: &mut PrunableWeights,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    if spec.input_shape() != env_spec.kind.state_shape() {
        return Err(Error::shape(&env_spec.kind.state_shape(), &spec.input_shape()));
    }
    if spec.n_output() != env_spec.kind.n_actions() {
        return Err(Error::shape(&[env_spec.kind.n_actions()], &[spec.n_output()]));
    }
    weights.live().check_against(spec)?;
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = env_spec.make(seed);
    let n_actions = env.n_actions();
    let masks = weights.masks().to_vec();
    let mut online = weights.live().clone();
    let mut target = online.clone();
    let mut adam = Adam::new(cfg.adam(), &online);
    let mut grads = zero_grads(&online);
    let mut replay = ReplayBuffer::new(cfg.replay_capacity)?;
    let mut cache = ForwardCache::new(spec);
    let mut report = TrainReport::default();

    let mut best: Option<(f64, usize, WeightSet)> = None;
    let mut state = Arc::new(env.reset());
    let mut episode_return = 0.0;
    for step in 0..cfg.steps {
        let action = if rng.gen::<f64>() < cfg.epsilon_at(step) {
            rng.gen_range(0..n_actions)
        } else {
            greedy_action(forward_cached(spec, &online, state.data(), &mut cache))
        };
        let out = env.step(action)?;
        episode_return += out.reward;
        let next = Arc::new(out.state);
        replay.push(Transition {
            state: state.clone(),
            action,
            reward: out.reward,
            next_state: next.clone(),
            done: out.terminal,
        });
        if out.terminal || out.truncated {
            report.episode_returns.push(episode_return);
            episode_return = 0.0;
            state = Arc::new(env.reset());
        } else {
            state = next;
        }

        if step >= cfg.learning_starts && step % cfg.train_every == 0 && replay.len() >= cfg.batch_size {
            let batch = replay.sample(cfg.batch_size, &mut rng)?;
            let targets = double_q_target(
                &batch,
                &AgentParams {
                    spec,
                    online: &online,
                    target: &target,
                    gamma: cfg.gamma,
                },
            );
            let samples: Vec<QSample<'_>> = batch
                .iter()
                .zip(&targets)
                .map(|(t, &y)| QSample {
                    state: &t.state,
                    action: t.action,
                    target: y,
                })
                .collect();
            let loss = q_loss_and_grad(spec, &online, &samples, &mut cache, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss is {loss}"),
                });
            }
            adam.step(&mut online, &grads, &masks);
            if !online.all_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: "non-finite weights after update".into(),
                });
            }
            report.updates += 1;
            report.final_loss = Some(loss);
        }
        if (step + 1) % cfg.target_sync_every == 0 {
            target.clone_from(&online);
        }
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            let opts = EvalOptions {
                episodes: cfg.eval_episodes,
                seed: seed ^ 0x5eed_0000_0000,
                ..EvalOptions::default()
            };
            let r = evaluate(env_spec, spec, &online, &EvalMode::Dense, &opts)?;
            report.curve.push((step + 1, r.mean_reward));
            if cfg.keep_best && best.as_ref().is_none_or(|(b, _, _)| r.mean_reward > *b) {
                best = Some((r.mean_reward, step + 1, online.clone()));
            }
        }
    }
    if let Some((_, step, ws)) = best {
        report.selected_step = Some(step);
        online = ws;
    }
    weights.set_live(online)?;
    Ok(report)
}
