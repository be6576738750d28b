//! Reward models trained from preference pairs.
//!
//! Stage 1 is a scalar Bradley-Terry model fit by maximum likelihood. Stage 2
//! ([`brme`]) distills the frozen stage-1 preference probabilities into a
//! shared-trunk, multi-head model where every head emits a Gaussian reward.

pub mod brme;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numerics::{log_sigmoid, sigmoid, AdamConfig, AdamState, FeedForwardNet, Matrix, NetConfig, Rng};
use crate::toyworld::{rm_matrix, PreferenceDataset, PreferenceExample, ToyWorld};

pub use brme::{
    mse_head_loss, nominal_reward, partition_dataset, reparam_sample, sigma_grad_expectation,
    train_stage2, BrmeConfig, BrmeModel, GaussianReward, HeadAssignment, LossMode, McEstimate,
    MseHeadLoss, SigmaGradEstimate, Stage2Config, Stage2Report,
};

/// Reward-network input for `(prompt, response)`: one-hot prompt followed by
/// one-hot response, length `2k`.
pub fn encode_pair(prompt: usize, response: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; 2 * k];
    v[prompt] = 1.0;
    v[k + response] = 1.0;
    v
}

/// Bradley-Terry probability that the first response is preferred.
pub fn bt_prob(r_plus: f64, r_minus: f64) -> f64 {
    sigmoid(r_plus - r_minus)
}

/// Scalar reward model `r(x, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarRewardModel {
    pub k: usize,
    pub net: FeedForwardNet,
    pub seed: u64,
}

impl ScalarRewardModel {
    pub fn new(k: usize, cfg: &NetConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            k,
            net: FeedForwardNet::from_config(2 * k, 1, cfg, rng)?,
            seed: rng.seed(),
        })
    }

    pub fn reward(&self, prompt: usize, response: usize) -> f64 {
        self.net
            .predict(&encode_pair(prompt, response, self.k))
            .expect("encoding matches input dim")[0]
    }

    /// The model evaluated on every cell of the world.
    pub fn matrix(&self, world: &ToyWorld) -> Result<Matrix> {
        rm_matrix(|x, a| self.reward(x, a), world)
    }
}

/// Negative log-likelihood of a batch and its parameter gradient.
#[derive(Debug, Clone)]
pub struct MleLoss {
    pub loss: f64,
    pub grads: Vec<f64>,
}

/// `-Σ ln σ(r(x,a⁺) - r(x,a⁻))` over the batch, with gradient.
pub fn mle_loss(rm: &ScalarRewardModel, batch: &[PreferenceExample]) -> Result<MleLoss> {
    if batch.is_empty() {
        return Err(Error::Empty("mle_loss batch"));
    }
    let mut loss = 0.0;
    let mut grads = vec![0.0; rm.net.param_count()];
    for e in batch {
        let (plus, tape_plus) = rm.net.forward(&encode_pair(e.prompt, e.chosen, rm.k))?;
        let (minus, tape_minus) = rm.net.forward(&encode_pair(e.prompt, e.rejected, rm.k))?;
        let margin = plus[0] - minus[0];
        loss -= log_sigmoid(margin);
        // d/dmargin of -ln σ(margin) = -σ(-margin)
        let g = -sigmoid(-margin);
        rm.net.backward_into(&tape_plus, &[g], &mut grads)?;
        rm.net.backward_into(&tape_minus, &[-g], &mut grads)?;
    }
    ensure_finite(loss, || "mle loss".into())?;
    Ok(MleLoss { loss, grads })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub net: NetConfig,
    pub adam: AdamConfig,
    /// Full-batch optimizer steps.
    pub steps: usize,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            net: NetConfig {
                hidden_width: 64,
                hidden_layers: 1,
                ..NetConfig::default()
            },
            adam: AdamConfig::with_lr(1e-2),
            steps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Report {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
}

/// Fits a scalar reward model to the dataset by full-batch Adam on the
/// Bradley-Terry negative log-likelihood.
pub fn train_stage1(
    world: &ToyWorld,
    dataset: &PreferenceDataset,
    config: &Stage1Config,
    rng: &mut Rng,
) -> Result<(ScalarRewardModel, Stage1Report)> {
    if dataset.is_empty() {
        return Err(Error::Empty("stage-1 dataset"));
    }
    if dataset.k != world.k() {
        return Err(Error::DimensionMismatch {
            context: "train_stage1 (dataset k)",
            expected: world.k(),
            got: dataset.k,
        });
    }
    let mut rm = ScalarRewardModel::new(world.k(), &config.net, rng)?;
    let mut adam = AdamState::new(rm.net.param_count(), config.adam.clone());
    let mut initial_loss = None;
    for step in 0..config.steps {
        let MleLoss { loss, grads } = mle_loss(&rm, &dataset.examples)
            .map_err(|_| Error::Diverged { stage: "stage-1 reward model", step, loss: f64::NAN })?;
        initial_loss.get_or_insert(loss);
        adam.step(rm.net.params_mut(), &grads)?;
    }
    let final_loss = mle_loss(&rm, &dataset.examples)
        .map_err(|_| Error::Diverged {
            stage: "stage-1 reward model",
            step: config.steps,
            loss: f64::NAN,
        })?
        .loss;
    Ok((
        rm,
        Stage1Report {
            initial_loss: initial_loss.unwrap_or(final_loss),
            final_loss,
            steps: config.steps,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradient;
    use crate::numerics::tolerance::{FD_MAX_RELATIVE_ERROR, RECOMPUTE_TOL};
    use crate::toyworld::{annotate, make_world, rm_ranking_accuracy};
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn bt_prob_examples() {
        for c in [-3.0, 0.0, 2.5] {
            assert_eq!(bt_prob(c, c), 0.5);
        }
        assert!((bt_prob(3f64.ln(), 0.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn encoding_layout() {
        assert_eq!(encode_pair(1, 2, 3), vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    fn small_rm(seed: u64) -> ScalarRewardModel {
        ScalarRewardModel::new(4, &NetConfig::default(), &mut Rng::new(seed)).unwrap()
    }

    fn batch4() -> Vec<PreferenceExample> {
        [(0, 0, 1), (1, 1, 3), (2, 2, 0), (3, 3, 2)]
            .into_iter()
            .map(|(prompt, chosen, rejected)| PreferenceExample { prompt, chosen, rejected })
            .collect()
    }

    #[test]
    fn mle_loss_constant_rewards_is_n_ln2() {
        let mut rm = small_rm(1);
        rm.net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let out = mle_loss(&rm, &batch4()).unwrap();
        assert!((out.loss - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mle_loss_saturates_to_zero() {
        // hidden unit i fires iff prompt == response == i; output = scale · Σ hidden
        let diagonal_rm = |scale: f64| {
            let mut net = FeedForwardNet::zeros(vec![8, 4, 1], crate::numerics::Activation::Relu).unwrap();
            let w0 = net.weights_mut(0);
            for i in 0..4 {
                w0[i * 8 + i] = 1.0;
                w0[i * 8 + 4 + i] = 1.0;
            }
            net.bias_mut(0).iter_mut().for_each(|b| *b = -1.0);
            net.weights_mut(1).iter_mut().for_each(|w| *w = scale);
            ScalarRewardModel { k: 4, net, seed: 0 }
        };
        let mut previous = f64::INFINITY;
        for scale in [1.0, 10.0, 100.0, 1000.0] {
            let loss = mle_loss(&diagonal_rm(scale), &batch4()).unwrap().loss;
            assert!(loss > 0.0 || scale >= 100.0);
            assert!(loss < previous);
            previous = loss;
        }
        assert!(previous < 1e-100);
    }

    #[test]
    fn mle_loss_matches_direct_sum() {
        let rm = small_rm(7);
        let batch = batch4();
        let direct: f64 = batch
            .iter()
            .map(|e| {
                let d = rm.reward(e.prompt, e.chosen) - rm.reward(e.prompt, e.rejected);
                -(1.0 / (1.0 + (-d).exp())).ln()
            })
            .sum();
        assert!((mle_loss(&rm, &batch).unwrap().loss - direct).abs() < RECOMPUTE_TOL);
        assert!(mle_loss(&rm, &[]).is_err());
    }

    #[test]
    fn mle_gradient_matches_finite_differences() {
        let mut rng = Rng::new(99);
        for seed in 0..5 {
            let rm = small_rm(seed);
            let batch = batch4();
            let analytic = mle_loss(&rm, &batch).unwrap().grads;
            let check = check_gradient(rm.net.params(), &analytic, 100, &mut rng, |p| {
                let mut probe = rm.clone();
                probe.net.params_mut().copy_from_slice(p);
                mle_loss(&probe, &batch).unwrap().loss
            });
            assert!(check.max_relative_error < FD_MAX_RELATIVE_ERROR, "{check:?}");
        }
    }

    #[test]
    fn stage1_learns_training_pairs() {
        let world = make_world(8).unwrap();
        let data = annotate(&world, &mut Rng::new(3));
        let (rm, report) = train_stage1(&world, &data, &Stage1Config::default(), &mut Rng::new(4)).unwrap();
        assert!(report.final_loss < report.initial_loss);
        let acc = rm_ranking_accuracy(|x, a| rm.reward(x, a), &data.examples).unwrap();
        assert!(acc >= 0.9, "{acc}");
    }

    #[test]
    fn stage1_is_deterministic() {
        let world = make_world(8).unwrap();
        let data = annotate(&world, &mut Rng::new(3));
        let cfg = Stage1Config { steps: 30, ..Stage1Config::default() };
        let a = train_stage1(&world, &data, &cfg, &mut Rng::new(11)).unwrap().0;
        let b = train_stage1(&world, &data, &cfg, &mut Rng::new(11)).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn stage1_divergence_is_reported() {
        let world = make_world(4).unwrap();
        let data = annotate(&world, &mut Rng::new(3));
        let cfg = Stage1Config {
            adam: AdamConfig::with_lr(f64::INFINITY),
            steps: 5,
            ..Stage1Config::default()
        };
        let err = train_stage1(&world, &data, &cfg, &mut Rng::new(1)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. } | Error::NonFinite(_)), "{err}");
    }

    proptest! {
        #[test]
        fn bt_antisymmetry(u in -40.0f64..40.0, v in -40.0f64..40.0) {
            prop_assert!((bt_prob(u, v) + bt_prob(v, u) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn bt_translation_invariance(u in -10.0f64..10.0, v in -10.0f64..10.0, t in -10.0f64..10.0) {
            prop_assert!((bt_prob(u + t, v + t) - bt_prob(u, v)).abs() < 1e-12);
        }
    }
}
