//! Single-step PPO on the toy world.
//!
//! Each episode is one prompt and one response, so the return of an
//! experience is its shaped reward
//!
//! ```text
//! shaped(x, a) = r(x, a) - β · (ln π_θ(a|x) - ln π_0(a|x))
//! ```
//!
//! and the advantage is `shaped - V(x)`. The actor maximizes the clipped
//! surrogate `min(ρ Â, clip(ρ, 1-ε, 1+ε) Â)` with `ρ = π_θ / π_behavior`; the
//! critic regresses onto the shaped reward. Advantages are not normalized
//! unless asked, so an all-zero advantage batch produces an exactly zero
//! actor gradient.

use serde::{Deserialize, Serialize};

use crate::ensemble::RewardSignal;
use crate::error::{ensure_finite, Error, Result};
use crate::numerics::{l2_norm, log_softmax, one_hot, softmax, AdamConfig, AdamState, FeedForwardNet, Matrix, NetConfig, Rng};
use crate::toyworld::{policy_accuracy, ToyWorld};

/// Categorical policy `π(·|x) = softmax(net(one_hot(x)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub k: usize,
    pub net: FeedForwardNet,
}

impl PolicyModel {
    pub fn new(k: usize, cfg: &NetConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            k,
            net: FeedForwardNet::from_config(k, k, cfg, rng)?,
        })
    }

    pub fn logits(&self, prompt: usize) -> Vec<f64> {
        self.net.predict(&one_hot(prompt, self.k)).expect("one-hot matches input dim")
    }

    pub fn probs(&self, prompt: usize) -> Vec<f64> {
        softmax(&self.logits(prompt)).expect("policy logits are finite")
    }

    pub fn log_probs(&self, prompt: usize) -> Vec<f64> {
        log_softmax(&self.logits(prompt)).expect("policy logits are finite")
    }

    /// `π(a|x)` in row `x`.
    pub fn matrix(&self) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..self.k).map(|x| self.probs(x)).collect();
        Matrix::from_rows(&rows).expect("square policy matrix")
    }

    /// Adds `delta` to the output bias of `response`, shifting that logit for
    /// every prompt.
    pub fn perturb_logit(&mut self, response: usize, delta: f64) {
        let last = self.net.n_layers() - 1;
        self.net.bias_mut(last)[response] += delta;
    }
}

/// Exact `KL(π(·|x) ‖ ρ(·|x))` averaged over uniformly drawn prompts.
pub fn mean_kl(policy: &PolicyModel, reference: &PolicyModel) -> f64 {
    let total: f64 = (0..policy.k)
        .map(|x| {
            let lp = policy.log_probs(x);
            let lq = reference.log_probs(x);
            lp.iter().zip(&lq).map(|(p, q)| p.exp() * (p - q)).sum::<f64>()
        })
        .sum();
    (total / policy.k as f64).max(0.0)
}

/// State-value estimate `V(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriticModel {
    Learned { k: usize, net: FeedForwardNet },
    /// Returns `value` for every prompt and is never trained.
    Exact { value: f64 },
}

impl CriticModel {
    pub fn learned(k: usize, cfg: &NetConfig, rng: &mut Rng) -> Result<Self> {
        Ok(CriticModel::Learned {
            k,
            net: FeedForwardNet::from_config(k, 1, cfg, rng)?,
        })
    }

    pub fn value(&self, prompt: usize) -> f64 {
        match self {
            CriticModel::Learned { k, net } => net.predict(&one_hot(prompt, *k)).expect("one-hot matches input dim")[0],
            CriticModel::Exact { value } => *value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    /// KL penalty coefficient.
    pub beta: f64,
    /// Discount; only used by the constant-return check, episodes are single-step.
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs_per_batch: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub normalize_advantages: bool,
    pub policy_net: NetConfig,
    pub critic_net: NetConfig,
    /// When set, the critic is the constant `exact_critic` instead of a network.
    pub exact_critic: Option<f64>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            beta: 0.05,
            gamma: 0.0,
            batch_size: 128,
            epochs_per_batch: 4,
            actor_lr: 1e-2,
            critic_lr: 1e-2,
            normalize_advantages: false,
            // one hidden layer; a zero output layer makes π_0 exactly uniform
            policy_net: NetConfig {
                hidden_width: 64,
                hidden_layers: 1,
                output_init_scale: 0.0,
                ..NetConfig::default()
            },
            // V ≡ 0 at start: an untouched reference policy under zero reward
            // then sees exactly zero advantages
            critic_net: NetConfig {
                output_init_scale: 0.0,
                ..NetConfig::default()
            },
            exact_critic: None,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0) {
            return Err(Error::Config(format!("clip_eps must be > 0, got {}", self.clip_eps)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.epochs_per_batch == 0 {
            return Err(Error::Config("batch_size and epochs_per_batch must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub prompt: usize,
    pub action: usize,
    pub behavior_logprob: f64,
    pub shaped_reward: f64,
    /// Integrated reward before the KL penalty.
    pub raw_reward: f64,
    /// `β · (ln π_θ - ln π_0)`, subtracted from `raw_reward`.
    pub kl_penalty: f64,
}

/// Draws `batch_size` single-step episodes. Prompts are uniform; responses
/// come from `policy`. Reward queries use `reward_rng` so that the sampling
/// stream is unaffected by how many draws a reward source consumes.
pub fn collect(
    policy: &PolicyModel,
    reference: &PolicyModel,
    signal: &RewardSignal,
    config: &PpoConfig,
    rng: &mut Rng,
    reward_rng: &mut Rng,
) -> Result<Vec<Experience>> {
    let k = policy.k;
    let mut out = Vec::with_capacity(config.batch_size);
    for _ in 0..config.batch_size {
        let prompt = rng.below(k);
        let logp = policy.log_probs(prompt);
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let action = rng.categorical(&probs);
        let ref_logp = reference.log_probs(prompt)[action];
        let raw_reward = signal.score(prompt, action, reward_rng)?;
        let kl_penalty = config.beta * (logp[action] - ref_logp);
        let shaped_reward = ensure_finite(raw_reward - kl_penalty, || format!("shaped reward at ({prompt}, {action})"))?;
        out.push(Experience {
            prompt,
            action,
            behavior_logprob: logp[action].min(0.0),
            shaped_reward,
            raw_reward,
            kl_penalty,
        });
    }
    Ok(out)
}

/// `Â = shaped_reward - V(x)` for every experience.
pub fn advantages(experiences: &[Experience], critic: &CriticModel) -> Vec<f64> {
    experiences.iter().map(|e| e.shaped_reward - critic.value(e.prompt)).collect()
}

/// Mean clipped surrogate over the batch and its gradient with respect to
/// the policy parameters.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub value: f64,
    pub grads: Vec<f64>,
    /// Experiences whose clipped branch was selected with a non-zero advantage.
    pub clipped: usize,
}

pub fn surrogate(policy: &PolicyModel, experiences: &[Experience], advantages: &[f64], clip_eps: f64) -> Result<Surrogate> {
    if experiences.len() != advantages.len() {
        return Err(Error::DimensionMismatch {
            context: "surrogate (advantages)",
            expected: experiences.len(),
            got: advantages.len(),
        });
    }
    if experiences.is_empty() {
        return Err(Error::Empty("surrogate batch"));
    }
    let n = experiences.len() as f64;
    let mut value = 0.0;
    let mut clipped = 0;
    let mut grads = vec![0.0; policy.net.param_count()];
    for (e, &adv) in experiences.iter().zip(advantages) {
        let (logits, tape) = policy.net.forward(&one_hot(e.prompt, policy.k))?;
        let probs = softmax(&logits)?;
        let logp = log_softmax(&logits)?[e.action];
        let ratio = (logp - e.behavior_logprob).exp();
        let clipped_ratio = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
        let unclipped_term = ratio * adv;
        let clipped_term = clipped_ratio * adv;
        value += unclipped_term.min(clipped_term) / n;
        // the clipped branch is flat in θ; it is the one selected exactly
        // when the ratio has left the trust region in the advantage's favour
        let flat = (adv > 0.0 && ratio > 1.0 + clip_eps) || (adv < 0.0 && ratio < 1.0 - clip_eps);
        if flat {
            clipped += 1;
            continue;
        }
        // d(ρ Â)/dz = Â ρ (e_a - π)
        let scale = adv * ratio / n;
        let out_grad: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, p)| scale * (f64::from(u8::from(j == e.action)) - p))
            .collect();
        policy.net.backward_into(&tape, &out_grad, &mut grads)?;
    }
    ensure_finite(value, || "ppo surrogate".into())?;
    Ok(Surrogate { value, grads, clipped })
}

/// Mean squared error of a learned critic on the shaped rewards, with gradient.
pub fn critic_loss(net: &FeedForwardNet, k: usize, experiences: &[Experience]) -> Result<(f64, Vec<f64>)> {
    if experiences.is_empty() {
        return Err(Error::Empty("critic batch"));
    }
    let n = experiences.len() as f64;
    let mut loss = 0.0;
    let mut grads = vec![0.0; net.param_count()];
    for e in experiences {
        let (v, tape) = net.forward(&one_hot(e.prompt, k))?;
        let diff = v[0] - e.shaped_reward;
        loss += diff * diff / n;
        net.backward_into(&tape, &[2.0 * diff / n], &mut grads)?;
    }
    Ok((ensure_finite(loss, || "critic loss".into())?, grads))
}

/// Policy, critic and their optimizer states for one run.
#[derive(Debug, Clone)]
pub struct PpoLearner {
    pub policy: PolicyModel,
    pub critic: CriticModel,
    actor_opt: AdamState,
    critic_opt: Option<AdamState>,
}

impl PpoLearner {
    pub fn new(policy: PolicyModel, critic: CriticModel, config: &PpoConfig) -> Self {
        let actor_opt = AdamState::new(policy.net.param_count(), AdamConfig::with_lr(config.actor_lr));
        let critic_opt = match &critic {
            CriticModel::Learned { net, .. } => Some(AdamState::new(net.param_count(), AdamConfig::with_lr(config.critic_lr))),
            CriticModel::Exact { .. } => None,
        };
        Self {
            policy,
            critic,
            actor_opt,
            critic_opt,
        }
    }

    /// `epochs_per_batch` full-batch passes of surrogate ascent and critic
    /// regression. Returns the first-pass actor gradient norm.
    pub fn update(&mut self, experiences: &[Experience], advantages: &[f64], config: &PpoConfig) -> Result<f64> {
        let advantages = if config.normalize_advantages {
            normalized(advantages)
        } else {
            advantages.to_vec()
        };
        let mut first_norm = None;
        for epoch in 0..config.epochs_per_batch {
            let s = surrogate(&self.policy, experiences, &advantages, config.clip_eps).map_err(|e| diverged(e, "ppo actor", epoch))?;
            let norm = l2_norm(&s.grads);
            first_norm.get_or_insert(norm);
            if norm > 0.0 {
                let ascent: Vec<f64> = s.grads.iter().map(|g| -g).collect();
                self.actor_opt.step(self.policy.net.params_mut(), &ascent)?;
            }
            if let (CriticModel::Learned { k, net }, Some(opt)) = (&mut self.critic, &mut self.critic_opt) {
                let (_, grads) = critic_loss(net, *k, experiences).map_err(|e| diverged(e, "ppo critic", epoch))?;
                opt.step(net.params_mut(), &grads)?;
            }
        }
        Ok(first_norm.unwrap_or(0.0))
    }
}

fn diverged(err: Error, stage: &'static str, step: usize) -> Error {
    match err {
        Error::NonFinite(_) => Error::Diverged { stage, step, loss: f64::NAN },
        other => other,
    }
}

fn normalized(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    values.iter().map(|v| (v - mean) / (var.sqrt() + 1e-8)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub accuracy: f64,
    /// Mean shaped reward of the batch.
    pub mean_reward: f64,
    pub kl: f64,
    pub grad_norm: f64,
    /// Smallest and largest integrated reward in the batch.
    pub reward_min: f64,
    pub reward_max: f64,
    pub reward_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config: PpoConfig,
    pub initial_accuracy: f64,
    pub steps: Vec<StepMetrics>,
    pub final_policy: Matrix,
}

#[derive(Serialize)]
struct CsvRow {
    step: usize,
    accuracy: f64,
    mean_reward: f64,
    kl: f64,
    grad_norm: f64,
    reward_min: f64,
    reward_max: f64,
}

impl RunRecord {
    pub fn final_accuracy(&self) -> f64 {
        self.steps.last().map_or(self.initial_accuracy, |s| s.accuracy)
    }

    pub fn final_kl(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.kl)
    }

    pub fn accuracy_at(&self, step: usize) -> Option<f64> {
        self.steps.iter().find(|s| s.step == step).map(|s| s.accuracy)
    }

    /// One row per step: `step,accuracy,mean_reward,kl,grad_norm,reward_min,reward_max`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.steps {
            w.serialize(CsvRow {
                step: s.step,
                accuracy: s.accuracy,
                mean_reward: s.mean_reward,
                kl: s.kl,
                grad_norm: s.grad_norm,
                reward_min: s.reward_min,
                reward_max: s.reward_max,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Runs `steps` collect → advantage → update iterations from `policy`,
/// which also becomes the frozen reference.
pub fn train(policy: PolicyModel, signal: &RewardSignal, world: &ToyWorld, config: &PpoConfig, steps: usize, seed: u64) -> Result<(RunRecord, PpoLearner)> {
    let reference = policy.clone();
    train_from(policy, reference, signal, world, config, steps, seed)
}

/// Like [`train`] with an explicit reference policy.
pub fn train_from(
    policy: PolicyModel,
    reference: PolicyModel,
    signal: &RewardSignal,
    world: &ToyWorld,
    config: &PpoConfig,
    steps: usize,
    seed: u64,
) -> Result<(RunRecord, PpoLearner)> {
    config.validate()?;
    if steps == 0 {
        return Err(Error::InvalidArgument("train needs steps >= 1".into()));
    }
    if policy.k != world.k() || reference.k != world.k() {
        return Err(Error::DimensionMismatch {
            context: "train (policy k)",
            expected: world.k(),
            got: policy.k,
        });
    }
    let critic = match config.exact_critic {
        Some(value) => CriticModel::Exact { value },
        None => CriticModel::learned(world.k(), &config.critic_net, &mut Rng::derive(seed, "critic-init"))?,
    };
    let mut sample_rng = Rng::derive(seed, "collect");
    let mut reward_rng = Rng::derive(seed, "reward");
    let initial_accuracy = policy_accuracy(&policy.matrix(), world)?;
    let mut learner = PpoLearner::new(policy, critic, config);
    let mut metrics = Vec::with_capacity(steps);
    for step in 1..=steps {
        let batch = collect(&learner.policy, &reference, signal, config, &mut sample_rng, &mut reward_rng)?;
        let adv = advantages(&batch, &learner.critic);
        let grad_norm = learner.update(&batch, &adv, config)?;
        let raw: Vec<f64> = batch.iter().map(|e| e.raw_reward).collect();
        let n = raw.len() as f64;
        let raw_mean = raw.iter().sum::<f64>() / n;
        let reward_std = if raw.len() > 1 {
            (raw.iter().map(|r| (r - raw_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        metrics.push(StepMetrics {
            step,
            accuracy: policy_accuracy(&learner.policy.matrix(), world)?,
            mean_reward: batch.iter().map(|e| e.shaped_reward).sum::<f64>() / n,
            kl: mean_kl(&learner.policy, &reference),
            grad_norm,
            reward_min: raw.iter().copied().fold(f64::INFINITY, f64::min),
            reward_max: raw.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            reward_std,
        });
    }
    Ok((
        RunRecord {
            seed,
            config: config.clone(),
            initial_accuracy,
            steps: metrics,
            final_policy: learner.policy.matrix(),
        },
        learner,
    ))
}

/// Discounted return of the reward stream `c, c, c, …`.
pub fn constant_return(c: f64, gamma: f64) -> f64 {
    c / (1.0 - gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Outcome {
    pub q_value: f64,
    pub advantage_max_abs: f64,
    pub grad_norm: f64,
    /// `|c + γ Q - Q|`, relative to `max(1, |Q|)`.
    pub bellman_residual: f64,
}

/// Constant reward `c` with the exact critic and no KL term: every action's
/// value equals the state's value, so advantages vanish and the surrogate
/// gradient is zero.
///
/// Both `Q(x, a)` and `V(x)` are the discounted return of a constant
/// stream, evaluated by the same expression.
pub fn lemma1_check(policy: &PolicyModel, c: f64, gamma: f64, batch_size: usize, seed: u64) -> Result<Lemma1Outcome> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    let config = PpoConfig {
        beta: 0.0,
        gamma,
        batch_size,
        exact_critic: Some(constant_return(c, gamma)),
        ..PpoConfig::default()
    };
    let signal = RewardSignal::single(crate::ensemble::RewardSource::Constant { id: "constant".into(), value: c });
    let critic = CriticModel::Exact { value: constant_return(c, gamma) };
    let batch = collect(policy, policy, &signal, &config, &mut Rng::derive(seed, "collect"), &mut Rng::derive(seed, "reward"))?;
    let q: Vec<f64> = batch.iter().map(|e| constant_return(e.shaped_reward, gamma)).collect();
    let adv: Vec<f64> = batch.iter().zip(&q).map(|(e, q)| q - critic.value(e.prompt)).collect();
    let s = surrogate(policy, &batch, &adv, config.clip_eps)?;
    let q_value = q.first().copied().unwrap_or_else(|| constant_return(c, gamma));
    Ok(Lemma1Outcome {
        q_value,
        advantage_max_abs: adv.iter().fold(0.0, |m, a| m.max(a.abs())),
        grad_norm: l2_norm(&s.grads),
        bellman_residual: (c + gamma * q_value - q_value).abs() / q_value.abs().max(1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftOutcome {
    pub initial_kl: f64,
    pub final_kl: f64,
    pub kl_trajectory: Vec<f64>,
}

/// Trains a perturbed policy under zero reward with a learned critic and
/// reports how far it stays from `reference`.
pub fn drift_probe(perturbed: &PolicyModel, reference: &PolicyModel, world: &ToyWorld, config: &PpoConfig, steps: usize, seed: u64) -> Result<DriftOutcome> {
    let config = PpoConfig {
        exact_critic: None,
        ..config.clone()
    };
    let signal = RewardSignal::single(crate::ensemble::RewardSource::Constant { id: "zero".into(), value: 0.0 });
    let (record, _) = train_from(perturbed.clone(), reference.clone(), &signal, world, &config, steps, seed)?;
    Ok(DriftOutcome {
        initial_kl: mean_kl(perturbed, reference),
        final_kl: record.final_kl(),
        kl_trajectory: record.steps.iter().map(|s| s.kl).collect(),
    })
}
