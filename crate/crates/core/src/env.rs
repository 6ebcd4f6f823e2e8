//! Toy reasoning-length environment.
//!
//! A three-parameter stochastic policy thinks for a geometric number of
//! steps and then answers. Longer thinking raises the answer-quality logit
//! up to a saturation cap, past which extra steps are pure overthinking:
//!
//! ```text
//! P(stop at each step)  = logistic(stop_logit)
//! P(correct | L steps)  = logistic(skill_base + skill_per_step * min(L, cap) - difficulty)
//! ```
//!
//! Trajectory log-probabilities and their gradients are exact.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{logistic, Action, Completion, QueryId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub stop_logit: f64,
    pub skill_base: f64,
    pub skill_per_step: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            stop_logit: -2.75,
            skill_base: 0.0,
            skill_per_step: 0.5,
        }
    }
}

impl PolicyParams {
    pub const DIM: usize = 3;

    pub fn to_array(self) -> [f64; 3] {
        [self.stop_logit, self.skill_base, self.skill_per_step]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        PolicyParams {
            stop_logit: v[0],
            skill_base: v[1],
            skill_per_step: v[2],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Gradient with respect to each field of [`PolicyParams`].
pub type ParamGrad = PolicyParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyQuery {
    pub query_id: QueryId,
    pub difficulty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Hard cap on completion length (THINK steps plus the answer token).
    pub max_len: usize,
    /// THINK steps beyond this add nothing to answer quality.
    pub skill_cap: usize,
    pub difficulty_min: f64,
    pub difficulty_max: f64,
    /// Number of distinct queries training draws from.
    pub pool_size: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            max_len: 256,
            skill_cap: 32,
            difficulty_min: 0.8,
            difficulty_max: 9.3,
            pool_size: 512,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::config("env.max_len", "must be at least 1"));
        }
        if !(self.difficulty_min.is_finite() && self.difficulty_max.is_finite()) {
            return Err(Error::config("env.difficulty_min", "difficulty bounds must be finite"));
        }
        if self.difficulty_min > self.difficulty_max {
            return Err(Error::config(
                "env.difficulty_max",
                format!("{} is below difficulty_min {}", self.difficulty_max, self.difficulty_min),
            ));
        }
        if self.pool_size == 0 {
            return Err(Error::config("env.pool_size", "must be positive"));
        }
        Ok(())
    }

    fn max_think(&self) -> usize {
        self.max_len - 1
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(logistic(x))`.
fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn quality_logit(params: &PolicyParams, query: &ToyQuery, think: usize, env: &EnvConfig) -> f64 {
    let useful = think.min(env.skill_cap) as f64;
    params.skill_base + params.skill_per_step * useful - query.difficulty
}

/// Probability that the answer after `think` THINK steps is correct.
pub fn answer_probability(params: &PolicyParams, query: &ToyQuery, think: usize, env: &EnvConfig) -> f64 {
    logistic(quality_logit(params, query, think, env))
}

pub fn sample_completion(params: &PolicyParams, query: &ToyQuery, env: &EnvConfig, seed: u64) -> Completion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_stop = logistic(params.stop_logit);
    let mut think = 0;
    while think < env.max_think() {
        if rng.gen::<f64>() < p_stop {
            break;
        }
        think += 1;
    }
    let q = logistic(quality_logit(params, query, think, env));
    let correct = rng.gen::<f64>() < q;

    let mut actions = vec![Action::Think; think];
    actions.push(Action::Answer);
    let mut completion = Completion {
        length: actions.len(),
        actions,
        correct,
        logprob: 0.0,
        reward: None,
        advantage: None,
    };
    // Well-formed by construction.
    completion.logprob = trajectory_logprob(params, &completion, query, env).unwrap_or(f64::NAN);
    completion
}

/// Number of THINK steps, after checking the action sequence.
fn think_steps(completion: &Completion, env: &EnvConfig) -> Result<usize> {
    let actions = &completion.actions;
    let (last, body) = actions
        .split_last()
        .ok_or_else(|| Error::MalformedTrajectory("no actions".into()))?;
    if *last != Action::Answer {
        return Err(Error::MalformedTrajectory("last action is not ANSWER".into()));
    }
    if let Some(pos) = body.iter().position(|a| *a != Action::Think) {
        return Err(Error::MalformedTrajectory(format!("ANSWER before the end at position {pos}")));
    }
    if completion.length != actions.len() {
        return Err(Error::MalformedTrajectory(format!(
            "length {} disagrees with {} actions",
            completion.length,
            actions.len()
        )));
    }
    if body.len() > env.max_think() {
        return Err(Error::MalformedTrajectory(format!(
            "{} THINK steps exceed the cap of {}",
            body.len(),
            env.max_think()
        )));
    }
    Ok(body.len())
}

/// Exact log-probability of a completion: CONTINUE/STOP decisions plus the
/// answer outcome. A STOP forced by the length cap contributes nothing.
pub fn trajectory_logprob(
    params: &PolicyParams,
    completion: &Completion,
    query: &ToyQuery,
    env: &EnvConfig,
) -> Result<f64> {
    let think = think_steps(completion, env)?;
    let mut lp = 0.0;
    if think > 0 {
        lp += think as f64 * log_sigmoid(-params.stop_logit);
    }
    if think < env.max_think() {
        lp += log_sigmoid(params.stop_logit);
    }
    let u = quality_logit(params, query, think, env);
    lp += if completion.correct {
        log_sigmoid(u)
    } else {
        log_sigmoid(-u)
    };
    Ok(lp)
}

/// Analytic gradient of [`trajectory_logprob`].
pub fn grad_logprob(
    params: &PolicyParams,
    completion: &Completion,
    query: &ToyQuery,
    env: &EnvConfig,
) -> Result<ParamGrad> {
    let think = think_steps(completion, env)?;
    let p_stop = logistic(params.stop_logit);

    let mut d_stop = 0.0;
    if think > 0 {
        d_stop -= think as f64 * p_stop;
    }
    if think < env.max_think() {
        d_stop += 1.0 - p_stop;
    }

    let q = logistic(quality_logit(params, query, think, env));
    let d_quality = if completion.correct { 1.0 - q } else { -q };

    Ok(PolicyParams {
        stop_logit: d_stop,
        skill_base: d_quality,
        skill_per_step: d_quality * think.min(env.skill_cap) as f64,
    })
}

/// Draws `n` queries with difficulty uniform on the configured range.
pub fn sample_query_pool(env: &EnvConfig, n: usize, seed: u64) -> Vec<ToyQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(env.difficulty_min, env.difficulty_max);
    (0..n)
        .map(|i| ToyQuery {
            query_id: QueryId(format!("q{i:05}")),
            difficulty: dist.sample(&mut rng),
        })
        .collect()
}

/// Fraction of `queries` whose correct count over `samples` draws lands in
/// `band` (inclusive). Mirrors the 2-of-8 to 6-of-8 training-data filter.
pub fn in_band_fraction(
    params: &PolicyParams,
    env: &EnvConfig,
    queries: &[ToyQuery],
    samples: usize,
    band: (usize, usize),
    seed: u64,
) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let hits = queries
        .iter()
        .enumerate()
        .filter(|(qi, q)| {
            let correct = (0..samples)
                .filter(|&s| {
                    let s = crate::seed::derive(seed, &[*qi as u64, s as u64]);
                    sample_completion(params, q, env, s).correct
                })
                .count();
            (band.0..=band.1).contains(&correct)
        })
        .count();
    hits as f64 / queries.len() as f64
}
