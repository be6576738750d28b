//! Multi-head Gaussian reward ensemble.
//!
//! A shared trunk maps the encoded `(prompt, response)` pair to features;
//! each head maps the features to `(mu, raw_sigma)` with
//! `sigma = softplus(raw_sigma) + sigma_floor`. Heads are trained on disjoint
//! random partitions of the preference data against targets derived from a
//! frozen stage-1 model, sampling rewards through the reparameterization
//! `r = mu + eps * sigma`.
//!
//! With `k = p_hat - 1/2` the per-head loss is
//!
//! ```text
//! LossMode::Separated:  (r⁺ - αk)² + (r⁻ + αk)²
//! LossMode::Literal:    (r⁺ - αk)² + (r⁻ - αk)²
//! ```
//!
//! `Literal` gives both responses the same target, so it cannot separate
//! them; `Separated` is the default.

use serde::{Deserialize, Serialize};

use super::{bt_prob, encode_pair, ScalarRewardModel};
use crate::error::{ensure_finite, Error, Result};
use crate::numerics::{sigmoid, softplus, AdamConfig, AdamState, FeedForwardNet, NetConfig, Rng};
use crate::toyworld::{PreferenceDataset, ToyWorld};

/// One head's reward distribution for one `(prompt, response)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianReward {
    pub mu: f64,
    pub sigma: f64,
    pub head_id: usize,
}

/// `mu + eps * sigma`.
pub fn reparam_sample(g: &GaussianReward, eps: f64) -> f64 {
    g.mu + eps * g.sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Rejected target is `-α(p̂ - ½)`.
    #[default]
    Separated,
    /// Both targets are `α(p̂ - ½)`.
    Literal,
}

/// Loss value and its partial derivatives with respect to the four
/// distribution parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseHeadLoss {
    pub loss: f64,
    pub d_mu_plus: f64,
    pub d_sigma_plus: f64,
    pub d_mu_minus: f64,
    pub d_sigma_minus: f64,
}

fn targets(p_hat: f64, alpha: f64, mode: LossMode) -> (f64, f64) {
    let k = p_hat - 0.5;
    match mode {
        LossMode::Separated => (alpha * k, -alpha * k),
        LossMode::Literal => (alpha * k, alpha * k),
    }
}

pub fn mse_head_loss(
    plus: &GaussianReward,
    minus: &GaussianReward,
    p_hat: f64,
    alpha: f64,
    eps_plus: f64,
    eps_minus: f64,
    mode: LossMode,
) -> Result<MseHeadLoss> {
    if !(p_hat > 0.0 && p_hat < 1.0) {
        return Err(Error::InvalidArgument(format!("p_hat must lie in (0, 1), got {p_hat}")));
    }
    let (t_plus, t_minus) = targets(p_hat, alpha, mode);
    let res_plus = reparam_sample(plus, eps_plus) - t_plus;
    let res_minus = reparam_sample(minus, eps_minus) - t_minus;
    let loss = ensure_finite(res_plus * res_plus + res_minus * res_minus, || {
        "mse head loss".into()
    })?;
    Ok(MseHeadLoss {
        loss,
        d_mu_plus: 2.0 * res_plus,
        d_sigma_plus: 2.0 * eps_plus * res_plus,
        d_mu_minus: 2.0 * res_minus,
        d_sigma_minus: 2.0 * eps_minus * res_minus,
    })
}

/// `E_eps[loss]` in closed form for independent standard-normal noise.
pub fn expected_head_loss(
    plus: &GaussianReward,
    minus: &GaussianReward,
    p_hat: f64,
    alpha: f64,
    mode: LossMode,
) -> f64 {
    let (t_plus, t_minus) = targets(p_hat, alpha, mode);
    (plus.mu - t_plus).powi(2) + plus.sigma.powi(2) + (minus.mu - t_minus).powi(2) + minus.sigma.powi(2)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaGradEstimate {
    pub plus: McEstimate,
    pub minus: McEstimate,
}

/// Smallest sample count accepted by [`sigma_grad_expectation`].
pub const MIN_SIGMA_GRAD_SAMPLES: usize = 10_000;

/// Monte Carlo estimate of `E_eps[∂loss/∂sigma]` for both responses.
/// The analytic value is `2 sigma` in either loss mode.
pub fn sigma_grad_expectation(
    plus: &GaussianReward,
    minus: &GaussianReward,
    p_hat: f64,
    alpha: f64,
    mode: LossMode,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<SigmaGradEstimate> {
    if n_samples < MIN_SIGMA_GRAD_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "sigma gradient estimate needs >= {MIN_SIGMA_GRAD_SAMPLES} samples, got {n_samples}"
        )));
    }
    // Welford accumulators for the two derivatives
    let mut acc = [(0.0f64, 0.0f64); 2];
    for i in 0..n_samples {
        let out = mse_head_loss(plus, minus, p_hat, alpha, rng.normal(), rng.normal(), mode)?;
        for (slot, g) in acc.iter_mut().zip([out.d_sigma_plus, out.d_sigma_minus]) {
            let delta = g - slot.0;
            slot.0 += delta / (i + 1) as f64;
            slot.1 += delta * (g - slot.0);
        }
    }
    let finish = |(mean, m2): (f64, f64)| McEstimate {
        mean,
        std_err: (m2 / (n_samples - 1) as f64 / n_samples as f64).sqrt(),
        samples: n_samples,
    };
    Ok(SigmaGradEstimate {
        plus: finish(acc[0]),
        minus: finish(acc[1]),
    })
}

/// `mu` of the head with the smallest `sigma`; ties go to the lowest head id.
pub fn nominal_reward(predictions: &[GaussianReward]) -> Result<f64> {
    let first = predictions.first().ok_or(Error::Empty("nominal_reward predictions"))?;
    let best = predictions.iter().fold(first, |best, p| {
        if p.sigma < best.sigma || (p.sigma == best.sigma && p.head_id < best.head_id) {
            p
        } else {
            best
        }
    });
    Ok(best.mu)
}

/// Which head trains on which example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadAssignment {
    pub n_heads: usize,
    /// `heads[i]` is the head that trains on example `i`.
    pub heads: Vec<usize>,
}

impl HeadAssignment {
    pub fn members(&self, head: usize) -> Vec<usize> {
        self.heads
            .iter()
            .enumerate()
            .filter(|(_, h)| **h == head)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn shares(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_heads];
        for h in &self.heads {
            counts[*h] += 1;
        }
        counts
    }
}

/// Assigns every example to a uniformly random head. If a head ends up
/// empty, the highest-index example of the currently largest head (lowest
/// id on ties) moves to it, repeating until every head has an example.
pub fn partition_dataset(n_examples: usize, n_heads: usize, rng: &mut Rng) -> Result<HeadAssignment> {
    if n_heads == 0 {
        return Err(Error::InvalidArgument("partition needs at least one head".into()));
    }
    if n_examples < n_heads {
        return Err(Error::InvalidArgument(format!(
            "cannot partition {n_examples} examples over {n_heads} heads"
        )));
    }
    let mut heads: Vec<usize> = (0..n_examples).map(|_| rng.below(n_heads)).collect();
    loop {
        let mut counts = vec![0usize; n_heads];
        for h in &heads {
            counts[*h] += 1;
        }
        let Some(empty) = counts.iter().position(|c| *c == 0) else {
            break;
        };
        let largest = (0..n_heads).fold(0, |b, h| if counts[h] > counts[b] { h } else { b });
        let donor = heads.iter().rposition(|h| *h == largest).expect("largest head is non-empty");
        heads[donor] = empty;
    }
    Ok(HeadAssignment { n_heads, heads })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrmeConfig {
    pub n_heads: usize,
    /// Trunk shape; the trunk's last hidden layer feeds every head.
    pub trunk: NetConfig,
    pub sigma_floor: f64,
    /// Initial bias of every head's `raw_sigma` output.
    pub initial_raw_sigma: f64,
    /// Start the trunk from the stage-1 model's hidden layers instead of a
    /// fresh initialization (the trunk shape then follows the stage-1 net).
    pub warm_start_trunk: bool,
}

impl Default for BrmeConfig {
    fn default() -> Self {
        Self {
            n_heads: 5,
            trunk: NetConfig::default(),
            sigma_floor: 1e-4,
            // softplus(0.5413) ≈ 1
            initial_raw_sigma: 0.5413,
            warm_start_trunk: true,
        }
    }
}

/// Shared-trunk Gaussian reward ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrmeModel {
    pub k: usize,
    /// Maps the encoded pair to features; the hidden activation is applied
    /// to its (otherwise linear) output.
    pub trunk: FeedForwardNet,
    /// One linear `features -> (mu, raw_sigma)` map per head.
    pub heads: Vec<FeedForwardNet>,
    pub sigma_floor: f64,
    pub loss_mode: LossMode,
    pub alpha: f64,
    pub seed: u64,
}

struct HeadPass {
    trunk_tape: crate::numerics::Tape,
    trunk_pre: Vec<f64>,
    head_tape: crate::numerics::Tape,
    out: GaussianReward,
    raw_sigma: f64,
}

impl BrmeModel {
    pub fn new(k: usize, cfg: &BrmeConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.n_heads < 2 {
            return Err(Error::InvalidArgument(format!(
                "an ensemble needs at least 2 heads, got {}",
                cfg.n_heads
            )));
        }
        if !(cfg.sigma_floor > 0.0) {
            return Err(Error::InvalidArgument("sigma_floor must be positive".into()));
        }
        let mut trunk_dims = vec![2 * k];
        trunk_dims.extend(std::iter::repeat_n(cfg.trunk.hidden_width, cfg.trunk.hidden_layers.max(1)));
        let trunk = FeedForwardNet::init(trunk_dims, cfg.trunk.activation, 1.0, rng)?;
        Self::with_trunk(k, trunk, cfg, rng)
    }

    /// Ensemble on top of an existing trunk; heads are freshly initialized.
    pub fn with_trunk(k: usize, trunk: FeedForwardNet, cfg: &BrmeConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.n_heads < 2 {
            return Err(Error::InvalidArgument(format!(
                "an ensemble needs at least 2 heads, got {}",
                cfg.n_heads
            )));
        }
        if trunk.input_dim() != 2 * k {
            return Err(Error::DimensionMismatch {
                context: "BrmeModel::with_trunk",
                expected: 2 * k,
                got: trunk.input_dim(),
            });
        }
        let width = trunk.output_dim();
        let heads = (0..cfg.n_heads)
            .map(|_| {
                let mut head = FeedForwardNet::init(vec![width, 2], trunk.activation(), cfg.trunk.output_init_scale, rng)?;
                head.bias_mut(0)[1] = cfg.initial_raw_sigma;
                Ok(head)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k,
            trunk,
            heads,
            sigma_floor: cfg.sigma_floor,
            loss_mode: LossMode::default(),
            alpha: 2.0,
            seed: rng.seed(),
        })
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    fn features(&self, prompt: usize, response: usize) -> Vec<f64> {
        let act = self.trunk.activation();
        self.trunk
            .predict(&encode_pair(prompt, response, self.k))
            .expect("encoding matches trunk input")
            .into_iter()
            .map(|v| act.apply(v))
            .collect()
    }

    fn to_gaussian(&self, out: &[f64], head_id: usize) -> GaussianReward {
        GaussianReward {
            mu: out[0],
            sigma: softplus(out[1]) + self.sigma_floor,
            head_id,
        }
    }

    /// Every head's distribution for `(prompt, response)`.
    pub fn predict(&self, prompt: usize, response: usize) -> Vec<GaussianReward> {
        let features = self.features(prompt, response);
        self.heads
            .iter()
            .enumerate()
            .map(|(h, head)| self.to_gaussian(&head.predict(&features).expect("feature width"), h))
            .collect()
    }

    /// Mean of the smallest-sigma head.
    pub fn nominal(&self, prompt: usize, response: usize) -> f64 {
        nominal_reward(&self.predict(prompt, response)).expect("at least two heads")
    }

    fn head_pass(&self, head: usize, prompt: usize, response: usize) -> Result<HeadPass> {
        let act = self.trunk.activation();
        let (trunk_pre, trunk_tape) = self.trunk.forward(&encode_pair(prompt, response, self.k))?;
        let features: Vec<f64> = trunk_pre.iter().map(|v| act.apply(*v)).collect();
        let (out, head_tape) = self.heads[head].forward(&features)?;
        Ok(HeadPass {
            trunk_tape,
            trunk_pre,
            head_tape,
            out: self.to_gaussian(&out, head),
            raw_sigma: out[1],
        })
    }

    /// Backpropagates `(dL/dmu, dL/dsigma)` through one head and the trunk.
    fn accumulate(
        &self,
        pass: &HeadPass,
        head: usize,
        d_mu: f64,
        d_sigma: f64,
        trunk_grads: &mut [f64],
        head_grads: &mut [f64],
    ) -> Result<()> {
        // dsigma/draw = sigmoid(raw)
        let out_grad = [d_mu, d_sigma * sigmoid(pass.raw_sigma)];
        let feature_grad = self.heads[head].backward_into(&pass.head_tape, &out_grad, head_grads)?;
        let act = self.trunk.activation();
        let trunk_out_grad: Vec<f64> = feature_grad
            .iter()
            .zip(&pass.trunk_pre)
            .map(|(g, z)| g * act.derivative(*z))
            .collect();
        self.trunk.backward_into(&pass.trunk_tape, &trunk_out_grad, trunk_grads)?;
        Ok(())
    }

    /// Mean sigma of every head over the chosen and rejected responses of
    /// the dataset.
    pub fn mean_sigma_per_head(&self, dataset: &PreferenceDataset) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_heads()];
        for e in &dataset.examples {
            for resp in [e.chosen, e.rejected] {
                for g in self.predict(e.prompt, resp) {
                    sums[g.head_id] += g.sigma;
                }
            }
        }
        let n = (2 * dataset.len()) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }
}

/// Loss and parameter gradients of one stage-2 step at fixed noise.
#[derive(Debug, Clone)]
pub struct Stage2Batch {
    pub loss: f64,
    pub trunk_grads: Vec<f64>,
    pub head_grads: Vec<Vec<f64>>,
    pub min_sigma: f64,
}

/// Noise for one example: `(eps_plus, eps_minus)`.
pub type PairNoise = (f64, f64);

/// Sum over heads of each head's mean loss on its own partition, with
/// gradients, for fixed per-example noise.
pub fn stage2_loss(
    brme: &BrmeModel,
    dataset: &PreferenceDataset,
    p_hat: &[f64],
    assignment: &HeadAssignment,
    noise: &[PairNoise],
) -> Result<Stage2Batch> {
    let mut trunk_grads = vec![0.0; brme.trunk.param_count()];
    let mut head_grads: Vec<Vec<f64>> = brme.heads.iter().map(|h| vec![0.0; h.param_count()]).collect();
    let mut loss = 0.0;
    let mut min_sigma = f64::INFINITY;
    for head in 0..brme.n_heads() {
        let members = assignment.members(head);
        let scale = 1.0 / members.len() as f64;
        for i in members {
            let e = dataset.examples[i];
            let plus = brme.head_pass(head, e.prompt, e.chosen)?;
            let minus = brme.head_pass(head, e.prompt, e.rejected)?;
            min_sigma = min_sigma.min(plus.out.sigma).min(minus.out.sigma);
            let (eps_plus, eps_minus) = noise[i];
            let out = mse_head_loss(&plus.out, &minus.out, p_hat[i], brme.alpha, eps_plus, eps_minus, brme.loss_mode)?;
            loss += scale * out.loss;
            brme.accumulate(&plus, head, scale * out.d_mu_plus, scale * out.d_sigma_plus, &mut trunk_grads, &mut head_grads[head])?;
            brme.accumulate(&minus, head, scale * out.d_mu_minus, scale * out.d_sigma_minus, &mut trunk_grads, &mut head_grads[head])?;
        }
    }
    Ok(Stage2Batch {
        loss,
        trunk_grads,
        head_grads,
        min_sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub brme: BrmeConfig,
    pub alpha: f64,
    pub loss_mode: LossMode,
    pub adam: AdamConfig,
    pub steps: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            brme: BrmeConfig::default(),
            alpha: 2.0,
            loss_mode: LossMode::Separated,
            adam: AdamConfig::with_lr(5e-3),
            steps: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub initial_mean_sigma: Vec<f64>,
    pub final_mean_sigma: Vec<f64>,
    /// Closed-form expected loss of each head on its partition.
    pub initial_expected_loss: Vec<f64>,
    pub final_expected_loss: Vec<f64>,
    /// Smallest sigma emitted at any training step.
    pub min_sigma_seen: f64,
    pub shares: Vec<usize>,
}

fn expected_loss_per_head(
    brme: &BrmeModel,
    dataset: &PreferenceDataset,
    p_hat: &[f64],
    assignment: &HeadAssignment,
) -> Vec<f64> {
    (0..brme.n_heads())
        .map(|head| {
            let members = assignment.members(head);
            members
                .iter()
                .map(|&i| {
                    let e = dataset.examples[i];
                    let plus = brme.predict(e.prompt, e.chosen)[head];
                    let minus = brme.predict(e.prompt, e.rejected)[head];
                    expected_head_loss(&plus, &minus, p_hat[i], brme.alpha, brme.loss_mode)
                })
                .sum::<f64>()
                / members.len() as f64
        })
        .collect()
}

/// Builds a fresh ensemble and trains it against the frozen stage-1 model.
/// Each head only sees its own partition; fresh noise is drawn every step.
pub fn train_stage2(
    world: &ToyWorld,
    stage1: &ScalarRewardModel,
    dataset: &PreferenceDataset,
    assignment: &HeadAssignment,
    config: &Stage2Config,
    rng: &mut Rng,
) -> Result<(BrmeModel, Stage2Report)> {
    if assignment.heads.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            context: "train_stage2 (assignment)",
            expected: dataset.len(),
            got: assignment.heads.len(),
        });
    }
    if assignment.n_heads != config.brme.n_heads || assignment.shares().contains(&0) {
        return Err(Error::InvalidArgument("head assignment does not cover every head".into()));
    }
    let mut brme = if config.brme.warm_start_trunk {
        let mut m = BrmeModel::with_trunk(world.k(), stage1.net.without_output_layer()?, &config.brme, rng)?;
        // every head's mean starts as the stage-1 readout
        let last = stage1.net.n_layers() - 1;
        let readout = stage1.net.weights(last);
        let bias = stage1.net.bias(last)[0];
        for head in &mut m.heads {
            head.weights_mut(0)[..readout.cols()].copy_from_slice(readout.row(0));
            head.bias_mut(0)[0] = bias;
        }
        m
    } else {
        BrmeModel::new(world.k(), &config.brme, rng)?
    };
    brme.alpha = config.alpha;
    brme.loss_mode = config.loss_mode;
    // frozen stage-1 preference probabilities, computed once
    let p_hat: Vec<f64> = dataset
        .examples
        .iter()
        .map(|e| bt_prob(stage1.reward(e.prompt, e.chosen), stage1.reward(e.prompt, e.rejected)))
        .collect();

    let initial_mean_sigma = brme.mean_sigma_per_head(dataset);
    let initial_expected_loss = expected_loss_per_head(&brme, dataset, &p_hat, assignment);
    let mut trunk_adam = AdamState::new(brme.trunk.param_count(), config.adam.clone());
    let mut head_adams: Vec<AdamState> = brme
        .heads
        .iter()
        .map(|h| AdamState::new(h.param_count(), config.adam.clone()))
        .collect();
    let mut min_sigma_seen = f64::INFINITY;
    for step in 0..config.steps {
        let noise: Vec<PairNoise> = (0..dataset.len()).map(|_| (rng.normal(), rng.normal())).collect();
        let batch = stage2_loss(&brme, dataset, &p_hat, assignment, &noise).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged { stage: "stage-2 ensemble", step, loss: f64::NAN },
            other => other,
        })?;
        min_sigma_seen = min_sigma_seen.min(batch.min_sigma);
        trunk_adam.step(brme.trunk.params_mut(), &batch.trunk_grads)?;
        for ((head, adam), grads) in brme.heads.iter_mut().zip(&mut head_adams).zip(&batch.head_grads) {
            adam.step(head.params_mut(), grads)?;
        }
    }
    let final_mean_sigma = brme.mean_sigma_per_head(dataset);
    min_sigma_seen = final_mean_sigma.iter().copied().fold(min_sigma_seen, f64::min);
    let final_expected_loss = expected_loss_per_head(&brme, dataset, &p_hat, assignment);
    Ok((
        brme,
        Stage2Report {
            initial_mean_sigma,
            final_mean_sigma,
            initial_expected_loss,
            final_expected_loss,
            min_sigma_seen,
            shares: assignment.shares(),
        },
    ))
}
