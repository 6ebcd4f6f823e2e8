//! On-policy training loop on the toy environment.
//!
//! Each step samples `K` queries with `m` completions apiece, runs the
//! reward pipeline, and takes one Adam step along the advantage-weighted
//! score-function gradient
//!
//! ```text
//! g = 1/(K m) * sum_groups sum_i A_i * grad log pi(O_i)
//! ```

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::env::{grad_logprob, sample_completion, sample_query_pool, trajectory_logprob, EnvConfig, PolicyParams, ToyQuery};
use crate::error::{Error, Result};
use crate::metrics::{MetricsSink, StepMetrics};
use crate::pipeline::process_batch;
use crate::reward::{Group, RewardConfig};
use crate::seed;
use crate::selector::Batch;

const POOL_STREAM: u64 = 0x706f_6f6c;
const DRAW_STREAM: u64 = 0x6472_6177;
const ROLLOUT_STREAM: u64 = 0x726f_6c6c;

/// Relative tolerance for the optional finite-difference check of each update.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-3;
const GRAD_CHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub queries_per_batch: usize,
    pub samples_per_query: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Multiplies the learning rate of the answer head (`skill_base`,
    /// `skill_per_step`) relative to the stop head.
    pub skill_lr_scale: f64,
    /// Verify every update against finite differences of the surrogate.
    pub debug_grad_check: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            queries_per_batch: 32,
            samples_per_query: 8,
            learning_rate: 1e-2,
            steps: 6000,
            seed: 0,
            adam: AdamConfig::default(),
            skill_lr_scale: 0.2,
            debug_grad_check: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queries_per_batch == 0 {
            return Err(Error::config("train.queries_per_batch", "must be positive"));
        }
        if self.samples_per_query == 0 {
            return Err(Error::config("train.samples_per_query", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "train.learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if !(self.skill_lr_scale >= 0.0 && self.skill_lr_scale.is_finite()) {
            return Err(Error::config(
                "train.skill_lr_scale",
                format!("must be non-negative, got {}", self.skill_lr_scale),
            ));
        }
        let AdamConfig { beta1, beta2, epsilon } = self.adam;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::config("train.adam", "betas must lie in [0, 1)"));
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::config("train.adam.epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// A sampled, scored batch plus the queries it was drawn from.
struct Rollout {
    batch: Batch,
    queries: Vec<ToyQuery>,
}

pub struct Trainer {
    config: TrainConfig,
    reward: RewardConfig,
    env: EnvConfig,
    pool: Vec<ToyQuery>,
    params: PolicyParams,
    adam: Adam<3>,
    step: usize,
    baseline_length: Option<f64>,
    last_batch: Option<Batch>,
}

impl Trainer {
    pub fn new(config: TrainConfig, reward: RewardConfig, env: EnvConfig, init: PolicyParams) -> Result<Self> {
        config.validate()?;
        reward.validate()?;
        env.validate()?;
        let pool = sample_query_pool(&env, env.pool_size, seed::derive(config.seed, &[POOL_STREAM]));
        Self::with_pool(config, reward, env, init, pool)
    }

    pub fn with_pool(
        config: TrainConfig,
        reward: RewardConfig,
        env: EnvConfig,
        init: PolicyParams,
        pool: Vec<ToyQuery>,
    ) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyQueryPool);
        }
        if !init.is_finite() {
            return Err(Error::config("init", "policy parameters must be finite"));
        }
        Ok(Trainer {
            adam: Adam::with_rates(
                [
                    config.learning_rate,
                    config.learning_rate * config.skill_lr_scale,
                    config.learning_rate * config.skill_lr_scale,
                ],
                config.adam,
            ),
            config,
            reward,
            env,
            pool,
            params: init,
            step: 0,
            baseline_length: None,
            last_batch: None,
        })
    }

    pub fn params(&self) -> PolicyParams {
        self.params
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// The scored batch from the most recent step.
    pub fn last_batch(&self) -> Option<&Batch> {
        self.last_batch.as_ref()
    }

    fn draw_queries(&self) -> Vec<ToyQuery> {
        let k = self.config.queries_per_batch;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.config.seed, &[DRAW_STREAM, self.step as u64]));
        let n = self.pool.len();
        if k <= n {
            index::sample(&mut rng, n, k)
                .into_iter()
                .map(|i| self.pool[i].clone())
                .collect()
        } else {
            use rand::Rng;
            (0..k).map(|_| self.pool[rng.gen_range(0..n)].clone()).collect()
        }
    }

    fn rollout(&self) -> Result<Rollout> {
        let queries = self.draw_queries();
        let m = self.config.samples_per_query;
        let step = self.step as u64;
        let base = self.config.seed;
        let groups: Vec<Group> = queries
            .par_iter()
            .enumerate()
            .map(|(slot, q)| {
                let completions = (0..m)
                    .map(|j| {
                        let s = seed::derive(base, &[ROLLOUT_STREAM, step, slot as u64, j as u64]);
                        sample_completion(&self.params, q, &self.env, s)
                    })
                    .collect();
                Group::new(q.query_id.clone(), completions)
            })
            .collect();
        let mut batch = Batch::new(groups);
        process_batch(&mut batch, &self.reward)?;
        Ok(Rollout { batch, queries })
    }

    /// Advantage-weighted mean of the score function over the batch.
    fn policy_gradient(&self, rollout: &Rollout) -> Result<[f64; 3]> {
        let per_group: Vec<[f64; 3]> = rollout
            .batch
            .groups
            .par_iter()
            .zip(&rollout.queries)
            .map(|(g, q)| {
                let mut acc = [0.0; 3];
                for c in &g.completions {
                    let a = c.advantage.ok_or(Error::RewardsNotAssigned)?;
                    if a == 0.0 {
                        continue;
                    }
                    let grad = grad_logprob(&self.params, c, q, &self.env)?.to_array();
                    for (slot, gi) in acc.iter_mut().zip(grad) {
                        *slot += a * gi;
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let n = (self.config.queries_per_batch * self.config.samples_per_query) as f64;
        let mut g = [0.0; 3];
        for acc in per_group {
            for (slot, v) in g.iter_mut().zip(acc) {
                *slot += v;
            }
        }
        for v in &mut g {
            *v /= n;
        }
        Ok(g)
    }

    /// Surrogate `1/(K m) * sum A_i log pi_params(O_i)` with advantages held fixed.
    fn surrogate(&self, rollout: &Rollout, params: &PolicyParams) -> Result<f64> {
        let mut total = 0.0;
        for (g, q) in rollout.batch.groups.iter().zip(&rollout.queries) {
            for c in &g.completions {
                let a = c.advantage.ok_or(Error::RewardsNotAssigned)?;
                if a != 0.0 {
                    total += a * trajectory_logprob(params, c, q, &self.env)?;
                }
            }
        }
        Ok(total / (self.config.queries_per_batch * self.config.samples_per_query) as f64)
    }

    fn check_gradient(&self, rollout: &Rollout, g: &[f64; 3]) -> Result<()> {
        let base = self.params.to_array();
        let mut fd = [0.0; 3];
        for i in 0..3 {
            let mut hi = base;
            let mut lo = base;
            hi[i] += GRAD_CHECK_STEP;
            lo[i] -= GRAD_CHECK_STEP;
            let f_hi = self.surrogate(rollout, &PolicyParams::from_array(hi))?;
            let f_lo = self.surrogate(rollout, &PolicyParams::from_array(lo))?;
            fd[i] = (f_hi - f_lo) / (2.0 * GRAD_CHECK_STEP);
        }
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = g.iter().chain(&fd).map(|v| v.abs()).fold(1e-6, f64::max);
        let rel_err = diff / scale;
        if rel_err > GRAD_CHECK_TOLERANCE {
            return Err(Error::GradientCheck {
                step: self.step,
                rel_err,
                tolerance: GRAD_CHECK_TOLERANCE,
            });
        }
        Ok(())
    }

    /// Samples, scores and updates once. Metrics describe the batch that
    /// was sampled before the update.
    pub fn run_step(&mut self) -> Result<StepMetrics> {
        let rollout = self.rollout()?;
        let g = self.policy_gradient(&rollout)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { step: self.step });
        }
        if self.config.debug_grad_check {
            self.check_gradient(&rollout, &g)?;
        }

        let metrics = self.metrics(&rollout.batch);

        let mut p = self.params.to_array();
        self.adam.ascend(&mut p, &g);
        let next = PolicyParams::from_array(p);
        if !next.is_finite() {
            return Err(Error::NonFiniteGradient { step: self.step });
        }
        self.params = next;
        self.step += 1;
        self.last_batch = Some(rollout.batch);
        Ok(metrics)
    }

    fn metrics(&mut self, batch: &Batch) -> StepMetrics {
        let k = batch.groups.len();
        let completions = batch.groups.iter().flat_map(|g| &g.completions);
        let (mut n, mut correct, mut length, mut reward, mut adv_mag) = (0usize, 0usize, 0usize, 0.0, 0.0);
        for c in completions {
            n += 1;
            correct += c.correct as usize;
            length += c.length;
            reward += c.reward.unwrap_or(0.0);
            adv_mag += c.advantage.unwrap_or(0.0).abs();
        }
        let nf = n as f64;
        let mean_length = length as f64 / nf;
        let baseline = *self.baseline_length.get_or_insert(mean_length);
        StepMetrics {
            step: self.step,
            mean_accuracy: correct as f64 / nf,
            mean_length,
            compression_rate: if baseline > 0.0 { mean_length / baseline } else { 1.0 },
            selected_fraction: batch.selected_count as f64 / k as f64,
            mean_reward: reward / nf,
            mean_advantage_magnitude: adv_mag / nf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub metrics: Vec<StepMetrics>,
    pub final_params: PolicyParams,
}

/// Runs `config.steps` steps, handing each step's metrics to `sink` as
/// soon as it completes.
pub fn run_experiment(
    config: TrainConfig,
    reward: RewardConfig,
    env: EnvConfig,
    init: PolicyParams,
    sink: &mut dyn MetricsSink,
) -> Result<ExperimentResult> {
    let mut trainer = Trainer::new(config, reward, env, init)?;
    let mut metrics = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let m = trainer.run_step()?;
        sink.record(&m)?;
        metrics.push(m);
    }
    sink.finish()?;
    Ok(ExperimentResult {
        metrics,
        final_params: trainer.params(),
    })
}
