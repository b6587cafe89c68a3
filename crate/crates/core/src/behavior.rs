//! Actor-critic learning on imagined rollouts.
//!
//! The actor is trained by backpropagating λ-returns through the frozen world
//! model; the critic regresses the same λ-returns under stop-gradient.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::nn::{Activation, Mlp};
use crate::optim::{Adam, AdamConfig};
use crate::param::{Binding, Bound, ParamStore};
use crate::scalar::Scalar;
use crate::world_model::{LatentState, WorldModel, WorldModelError, WorldModelState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BehaviorError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    WorldModel(#[from] WorldModelError),
    #[error("λ-targets need {expected} values for {rewards} rewards, got {got}")]
    Length {
        rewards: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid behavior parameter: {0}")]
    Config(String),
    #[error("imagined rollout diverged before its first step")]
    EmptyRollout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpace {
    /// One-hot actions over `n` choices.
    Discrete(usize),
    /// Actions in `[-1, 1]^d`.
    Continuous(usize),
}

impl ActionSpace {
    /// Width of the action vector fed to the world model.
    pub fn dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete(n) | ActionSpace::Continuous(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorConfig {
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// Entropy regularization coefficient η.
    pub eta: f64,
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Lower bound on the pre-squash std of continuous policies.
    pub min_std: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            action_space: ActionSpace::Discrete(4),
            horizon: 15,
            gamma: 0.99,
            lambda: 0.95,
            eta: 1e-4,
            hidden: 128,
            actor_lr: 8e-5,
            critic_lr: 8e-5,
            min_std: 0.1,
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<(), BehaviorError> {
        let bad = |m: String| Err(BehaviorError::Config(m));
        if self.horizon == 0 {
            return bad("imagination horizon must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!(
                "γ = {} and λ = {} must lie in [0, 1]",
                self.gamma, self.lambda
            ));
        }
        if !(self.eta >= 0.0) || !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return bad("η must be ≥ 0 and learning rates > 0".into());
        }
        if self.action_space.dim() == 0 {
            return bad("action space is empty".into());
        }
        Ok(())
    }
}

/// Policy head `π_ψ(a | s)` on world-model features.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: Mlp,
    pub space: ActionSpace,
    pub min_std: f64,
}

/// One policy evaluation on the tape.
#[derive(Debug, Clone, Copy)]
pub struct PolicyOutput {
    /// Action fed to the dynamics. For discrete spaces this is the
    /// straight-through one-hot `onehot + p - sg(p)`.
    pub action: Var,
    /// Per-row policy entropy, shape `[N, 1]`.
    pub entropy: Var,
}

impl Policy {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        features: usize,
        config: &BehaviorConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let out = match config.action_space {
            ActionSpace::Discrete(n) => n,
            ActionSpace::Continuous(d) => 2 * d,
        };
        let h = config.hidden;
        Self {
            net: Mlp::new(
                store,
                "actor",
                &[features, h, h, out],
                Activation::Tanh,
                rng,
            ),
            space: config.action_space,
            min_std: config.min_std,
        }
    }

    /// Evaluates the policy on `features`. `noise` drives sampling (uniform
    /// per row for discrete spaces, standard normal per dimension otherwise);
    /// `None` selects the mode action.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        features: Var,
        noise: Option<&Tensor<S>>,
    ) -> Result<PolicyOutput, AutodiffError> {
        let out = self.net.forward(tape, p, features)?;
        match self.space {
            ActionSpace::Discrete(n) => {
                let (probs, log_probs) = softmax(tape, out)?;
                let plogp = tape.mul(probs, log_probs)?;
                let neg_entropy = tape.sum_last(plogp)?;
                let entropy = tape.neg(neg_entropy)?;
                let pv = tape.value(probs);
                let rows = pv.shape()[0];
                let mut onehot = Tensor::zeros(&[rows, n]);
                for i in 0..rows {
                    let k = match noise {
                        Some(u) => sample_index(pv.row(i), u.data()[i]),
                        None => argmax(pv.row(i)),
                    };
                    onehot.data_mut()[i * n + k] = S::one();
                }
                let onehot = tape.constant(onehot);
                let frozen = tape.stop_gradient(probs)?;
                let delta = tape.sub(probs, frozen)?;
                let action = tape.add(onehot, delta)?;
                Ok(PolicyOutput { action, entropy })
            }
            ActionSpace::Continuous(d) => {
                let mean = tape.slice(out, 1, 0, d)?;
                let raw = tape.slice(out, 1, d, 2 * d)?;
                let std = tape.softplus(raw)?;
                let std = tape.shift(std, S::lit(self.min_std))?;
                let pre = match noise {
                    Some(eps) => {
                        let eps = tape.constant(eps.clone());
                        let jitter = tape.mul(std, eps)?;
                        tape.add(mean, jitter)?
                    }
                    None => mean,
                };
                let action = tape.tanh(pre)?;
                // Gaussian entropy before the squashing: Σ_d ½log(2πe) + log σ_d
                let log_std = tape.log(std)?;
                let entropy = tape.sum_last(log_std)?;
                let c = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() * d as f64;
                let entropy = tape.shift(entropy, S::lit(c))?;
                Ok(PolicyOutput { action, entropy })
            }
        }
    }
}

/// Row-wise `(softmax(x), log_softmax(x))` of a rank-2 tensor.
pub fn softmax<S: Scalar>(tape: &mut Tape<S>, logits: Var) -> Result<(Var, Var), AutodiffError> {
    let v = tape.value(logits);
    let (rows, _) = v.dims2().ok_or_else(|| AutodiffError::Invalid {
        op: "softmax",
        msg: format!("expected a matrix, got shape {:?}", v.shape()),
    })?;
    let maxes: Vec<S> = (0..rows)
        .map(|i| v.row(i).iter().fold(S::neg_infinity(), |m, &x| m.max(x)))
        .collect();
    let maxes = tape.constant(Tensor::new(vec![rows, 1], maxes)?);
    let shifted = tape.sub(logits, maxes)?;
    let e = tape.exp(shifted)?;
    let z = tape.sum_last(e)?;
    let probs = tape.div(e, z)?;
    let log_z = tape.log(z)?;
    let log_probs = tape.sub(shifted, log_z)?;
    Ok((probs, log_probs))
}

fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (k, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = k;
        }
    }
    best
}

/// Inverse-CDF draw from a probability row given `u ∈ [0, 1)`.
fn sample_index<S: Scalar>(row: &[S], u: S) -> usize {
    let mut acc = S::zero();
    for (k, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    row.len() - 1
}

/// Pre-drawn randomness for one imagined rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutNoise<S> {
    /// Standard-normal latent noise per step, `[N, stoch]`.
    pub latent: Vec<Tensor<S>>,
    /// Policy noise per step; `None` for mode actions.
    pub action: Option<Vec<Tensor<S>>>,
}

impl<S: Scalar> RolloutNoise<S> {
    pub fn sample(
        rng: &mut impl Rng,
        rows: usize,
        stoch: usize,
        space: ActionSpace,
        horizon: usize,
    ) -> Self {
        let mut latent = Vec::with_capacity(horizon);
        let mut action = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            latent.push(standard_normal(rng, &[rows, stoch]));
            action.push(match space {
                ActionSpace::Discrete(_) => {
                    Tensor::from_fn(&[rows, 1], |_| S::lit(rng.random::<f64>()))
                }
                ActionSpace::Continuous(d) => standard_normal(rng, &[rows, d]),
            });
        }
        Self {
            latent,
            action: Some(action),
        }
    }

    /// Zero latent noise and mode actions: a fully deterministic rollout.
    pub fn deterministic(rows: usize, stoch: usize, horizon: usize) -> Self {
        Self {
            latent: vec![Tensor::zeros(&[rows, stoch]); horizon],
            action: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.latent.len()
    }
}

pub fn standard_normal<S: Scalar>(rng: &mut impl Rng, shape: &[usize]) -> Tensor<S> {
    Tensor::from_fn(shape, |_| {
        let x: f64 = StandardNormal.sample(rng);
        S::lit(x)
    })
}

/// Trajectory imagined from a batch of start states.
///
/// `states`, `features` and `values` have `H + 1` entries; `actions`,
/// `rewards` and `entropies` have `H`. `rewards[τ]` is predicted at the state
/// reached by `actions[τ]`.
#[derive(Debug, Clone)]
pub struct ImaginedRollout {
    pub states: Vec<LatentState>,
    pub features: Vec<Var>,
    pub actions: Vec<Var>,
    pub rewards: Vec<Var>,
    pub entropies: Vec<Var>,
    pub values: Vec<Var>,
}

impl ImaginedRollout {
    pub fn horizon(&self) -> usize {
        self.rewards.len()
    }
}

/// Parameters and optimizers for the actor ψ and the critic ξ.
#[derive(Debug, Clone)]
pub struct ActorCritic<S> {
    pub config: BehaviorConfig,
    pub actor_params: ParamStore<S>,
    pub critic_params: ParamStore<S>,
    pub policy: Policy,
    pub critic: Mlp,
    actor_opt: Adam<S>,
    critic_opt: Adam<S>,
}

/// Scalars reported by one behavior update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorReport {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub actor_entropy: f64,
    pub lambda_target_mean: f64,
}

impl<S: Scalar> ActorCritic<S> {
    pub fn new(features: usize, config: BehaviorConfig, rng: &mut impl Rng) -> Self {
        let mut actor_params = ParamStore::new();
        let policy = Policy::new(&mut actor_params, features, &config, rng);
        let mut critic_params = ParamStore::new();
        let h = config.hidden;
        let critic = Mlp::new(
            &mut critic_params,
            "critic",
            &[features, h, h, 1],
            Activation::Tanh,
            rng,
        );
        Self {
            actor_opt: Adam::new(AdamConfig::with_lr(config.actor_lr)),
            critic_opt: Adam::new(AdamConfig::with_lr(config.critic_lr)),
            config,
            actor_params,
            critic_params,
            policy,
            critic,
        }
    }

    /// Picks one action per row of `state`; `None` noise selects the mode.
    pub fn act(
        &self,
        state: &WorldModelState<S>,
        noise: Option<&Tensor<S>>,
    ) -> Result<Tensor<S>, BehaviorError> {
        let mut tape = Tape::new();
        let p = self.actor_params.bind(&mut tape, Binding::Frozen);
        let f = tape.constant(state.features());
        let out = self.policy.forward(&mut tape, &p, f, noise)?;
        Ok(tape.value(out.action).clone())
    }

    /// Draws policy noise for `rows` action choices.
    pub fn action_noise(&self, rng: &mut impl Rng, rows: usize) -> Tensor<S> {
        match self.config.action_space {
            ActionSpace::Discrete(_) => {
                Tensor::from_fn(&[rows, 1], |_| S::lit(rng.random::<f64>()))
            }
            ActionSpace::Continuous(d) => standard_normal(rng, &[rows, d]),
        }
    }

    /// One actor step and one critic step on rollouts imagined from `start`
    /// (typically the detached posterior states of a training batch).
    pub fn update(
        &mut self,
        wm: &WorldModel<S>,
        start: &WorldModelState<S>,
        rng: &mut impl Rng,
    ) -> Result<BehaviorReport, BehaviorError> {
        self.config.validate()?;
        let rows = start.batch();
        let noise = RolloutNoise::sample(
            rng,
            rows,
            wm.config.stoch,
            self.config.action_space,
            self.config.horizon,
        );

        let mut tape = Tape::new();
        let wm_p = wm.params.bind(&mut tape, Binding::Frozen);
        let actor_p = self.actor_params.bind(&mut tape, Binding::Tracked);
        let critic_frozen = self.critic_params.bind(&mut tape, Binding::Frozen);
        let critic_p = self.critic_params.bind(&mut tape, Binding::Tracked);

        let start = start.to_tape(&mut tape);
        let rollout = imagine(
            &mut tape,
            wm,
            &wm_p,
            &self.policy,
            &actor_p,
            &self.critic,
            &critic_frozen,
            &start,
            &noise,
        )?;
        let targets = lambda_targets_on_tape(
            &mut tape,
            &rollout.rewards,
            &rollout.values,
            self.config.gamma,
            self.config.lambda,
        )?;
        let actor_loss = actor_loss(&mut tape, &rollout, &targets, self.config.eta)?;
        let critic_loss = critic_loss(&mut tape, &self.critic, &critic_p, &rollout, &targets)?;

        let actor_grads = tape.backward(actor_loss)?;
        let actor_grads = actor_p.grads(&actor_grads);
        self.actor_opt
            .step(self.actor_params.values_mut(), &actor_grads);
        let critic_grads = tape.backward(critic_loss)?;
        let critic_grads = critic_p.grads(&critic_grads);
        self.critic_opt
            .step(self.critic_params.values_mut(), &critic_grads);

        let h = rollout.horizon() as f64;
        let entropy = rollout
            .entropies
            .iter()
            .map(|&e| tape.value(e).data().iter().map(|x| x.as_f64()).sum::<f64>() / rows as f64)
            .sum::<f64>()
            / h;
        let target_mean = targets
            .iter()
            .map(|&t| tape.value(t).data().iter().map(|x| x.as_f64()).sum::<f64>() / rows as f64)
            .sum::<f64>()
            / h;
        Ok(BehaviorReport {
            actor_loss: tape.item(actor_loss).as_f64(),
            critic_loss: tape.item(critic_loss).as_f64(),
            actor_entropy: entropy,
            lambda_target_mean: target_mean,
        })
    }
}

/// Rolls the policy through the world model's prior from `start`.
///
/// Gradients reach the actor through actions, transitions and predicted
/// rewards. Which other parameters see gradients depends on how `wm_p` and
/// `critic_p` were bound. A non-finite state ends the rollout early.
#[allow(clippy::too_many_arguments)]
pub fn imagine<S: Scalar>(
    tape: &mut Tape<S>,
    wm: &WorldModel<S>,
    wm_p: &Bound,
    policy: &Policy,
    actor_p: &Bound,
    critic: &Mlp,
    critic_p: &Bound,
    start: &LatentState,
    noise: &RolloutNoise<S>,
) -> Result<ImaginedRollout, BehaviorError> {
    let start = start.detach(tape)?;
    let f0 = start.features(tape)?;
    let mut rollout = ImaginedRollout {
        states: vec![start],
        features: vec![f0],
        actions: Vec::new(),
        rewards: Vec::new(),
        entropies: Vec::new(),
        values: Vec::new(),
    };
    for tau in 0..noise.horizon() {
        let state = rollout.states[tau];
        let f = rollout.features[tau];
        let action_noise = noise.action.as_ref().map(|a| &a[tau]);
        let pol = policy.forward(tape, actor_p, f, action_noise)?;
        let eps = tape.constant(noise.latent[tau].clone());
        let next = match wm.imagine_step(tape, wm_p, &state, pol.action, eps) {
            Ok(s) => s,
            Err(WorldModelError::NonFinite(what)) => {
                warn!("imagination: non-finite {what} at step {tau}; rollout truncated");
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let nf = next.features(tape)?;
        let reward = wm.predict_reward(tape, wm_p, nf)?;
        if !tape.value(nf).is_finite() || !tape.value(reward).is_finite() {
            warn!("imagination: non-finite features at step {tau}; rollout truncated");
            break;
        }
        rollout.actions.push(pol.action);
        rollout.entropies.push(pol.entropy);
        rollout.rewards.push(reward);
        rollout.states.push(next);
        rollout.features.push(nf);
    }
    if rollout.rewards.is_empty() {
        return Err(BehaviorError::EmptyRollout);
    }
    for &f in &rollout.features {
        let v = critic.forward(tape, critic_p, f)?;
        rollout.values.push(v);
    }
    Ok(rollout)
}

fn check_lengths(
    rewards: usize,
    values: usize,
    gamma: f64,
    lambda: f64,
) -> Result<(), BehaviorError> {
    if values != rewards + 1 || rewards == 0 {
        return Err(BehaviorError::Length {
            rewards,
            expected: rewards + 1,
            got: values,
        });
    }
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(BehaviorError::Config(format!(
            "γ = {gamma}, λ = {lambda} outside [0, 1]"
        )));
    }
    Ok(())
}

/// `V_τ = r_τ + γ[(1-λ) v_{τ+1} + λ V_{τ+1}]` with `V_{H-1} = r_{H-1} + γ v_H`.
pub fn lambda_targets<S: Scalar>(
    rewards: &[S],
    values: &[S],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<S>, BehaviorError> {
    check_lengths(rewards.len(), values.len(), gamma, lambda)?;
    let h = rewards.len();
    let (g, l) = (S::lit(gamma), S::lit(lambda));
    let mut out = vec![S::zero(); h];
    out[h - 1] = rewards[h - 1] + g * values[h];
    for t in (0..h - 1).rev() {
        out[t] = rewards[t] + g * ((S::one() - l) * values[t + 1] + l * out[t + 1]);
    }
    Ok(out)
}

/// The same recursion over per-row tensors on the tape.
pub fn lambda_targets_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    rewards: &[Var],
    values: &[Var],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<Var>, BehaviorError> {
    check_lengths(rewards.len(), values.len(), gamma, lambda)?;
    let h = rewards.len();
    let mut out = vec![rewards[0]; h];
    let boot = tape.scale(values[h], S::lit(gamma))?;
    out[h - 1] = tape.add(rewards[h - 1], boot)?;
    for t in (0..h - 1).rev() {
        let v = tape.scale(values[t + 1], S::lit(gamma * (1.0 - lambda)))?;
        let next = tape.scale(out[t + 1], S::lit(gamma * lambda))?;
        let mix = tape.add(v, next)?;
        out[t] = tape.add(rewards[t], mix)?;
    }
    Ok(out)
}

/// `mean_τ ½(v_ξ(sg(s_τ)) - sg(V_τ))²` over `τ ∈ [0, H)`.
pub fn critic_loss<S: Scalar>(
    tape: &mut Tape<S>,
    critic: &Mlp,
    critic_p: &Bound,
    rollout: &ImaginedRollout,
    targets: &[Var],
) -> Result<Var, BehaviorError> {
    let h = rollout.horizon();
    if targets.len() != h {
        return Err(BehaviorError::Length {
            rewards: h,
            expected: h,
            got: targets.len(),
        });
    }
    let f = tape.concat(&rollout.features[..h], 0)?;
    let f = tape.stop_gradient(f)?;
    let t = tape.concat(targets, 0)?;
    let t = tape.stop_gradient(t)?;
    let v = critic.forward(tape, critic_p, f)?;
    let d = tape.sub(v, t)?;
    let sq = tape.square(d)?;
    let m = tape.mean(sq)?;
    Ok(tape.scale(m, S::lit(0.5))?)
}

/// `mean_τ (-V_τ - η H[π(·|s_τ)])`.
pub fn actor_loss<S: Scalar>(
    tape: &mut Tape<S>,
    rollout: &ImaginedRollout,
    targets: &[Var],
    eta: f64,
) -> Result<Var, BehaviorError> {
    let h = rollout.horizon();
    if targets.len() != h {
        return Err(BehaviorError::Length {
            rewards: h,
            expected: h,
            got: targets.len(),
        });
    }
    let t = tape.concat(targets, 0)?;
    let e = tape.concat(&rollout.entropies, 0)?;
    let e = tape.scale(e, S::lit(eta))?;
    let obj = tape.add(t, e)?;
    let m = tape.mean(obj)?;
    Ok(tape.neg(m)?)
}
