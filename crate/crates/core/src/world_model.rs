//! Recurrent state-space world model with Gaussian latents.
//!
//! Components: an observation encoder, a GRU-style deterministic carry
//! `h_t = f(h_{t-1}, z_{t-1}, a_{t-1})`, a prior head `p(ẑ_t | h_t)`, a
//! posterior head `q(z_t | h_t, e_t)`, an observation decoder and a reward
//! head on the features `[h_t, z_t]`. Decoder and reward head are unit-variance
//! Gaussians, so their negative log-likelihoods are plain half squared errors.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::harmonizer::LossTriple;
use crate::nn::{Activation, Linear, Mlp};
use crate::param::{Bound, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("standard deviation {value} below floor {floor}")]
    StdBelowFloor { value: f64, floor: f64 },
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldModelConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub deter: usize,
    pub stoch: usize,
    pub hidden: usize,
    pub std_floor: f64,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            obs_dim: 3 * 16 * 16,
            action_dim: 4,
            deter: 64,
            stoch: 16,
            hidden: 128,
            std_floor: 1e-2,
        }
    }
}

impl WorldModelConfig {
    pub fn feature_dim(&self) -> usize {
        self.deter + self.stoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlMode {
    /// `KL[q ‖ p]`.
    Plain,
    /// `α·max(fb, KL[sg(q) ‖ p]) + (1-α)·max(fb, KL[q ‖ sg(p)])`.
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlConfig {
    pub mode: KlMode,
    pub alpha: f64,
    pub free_bits: f64,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self {
            mode: KlMode::Plain,
            alpha: 0.8,
            free_bits: 1.0,
        }
    }
}

impl KlConfig {
    pub fn split(alpha: f64) -> Self {
        Self {
            mode: KlMode::Split,
            alpha,
            free_bits: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), WorldModelError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(WorldModelError::Config(format!(
                "KL balancing coefficient must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Batch of latent states on a tape; every field has one row per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentState {
    pub h: Var,
    pub z: Var,
    pub post_mean: Var,
    pub post_std: Var,
    pub prior_mean: Var,
    pub prior_std: Var,
}

impl LatentState {
    /// `[h, z]` along the feature axis.
    pub fn features<S: Scalar>(&self, tape: &mut Tape<S>) -> Result<Var, AutodiffError> {
        tape.concat(&[self.h, self.z], 1)
    }

    /// Concatenates states along the batch axis.
    pub fn stack<S: Scalar>(
        tape: &mut Tape<S>,
        states: &[LatentState],
    ) -> Result<Self, AutodiffError> {
        let pick = |f: fn(&LatentState) -> Var| states.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            h: tape.concat(&pick(|s| s.h), 0)?,
            z: tape.concat(&pick(|s| s.z), 0)?,
            post_mean: tape.concat(&pick(|s| s.post_mean), 0)?,
            post_std: tape.concat(&pick(|s| s.post_std), 0)?,
            prior_mean: tape.concat(&pick(|s| s.prior_mean), 0)?,
            prior_std: tape.concat(&pick(|s| s.prior_std), 0)?,
        })
    }

    /// Same values, cut off from every upstream gradient.
    pub fn detach<S: Scalar>(&self, tape: &mut Tape<S>) -> Result<Self, AutodiffError> {
        Ok(Self {
            h: tape.stop_gradient(self.h)?,
            z: tape.stop_gradient(self.z)?,
            post_mean: tape.stop_gradient(self.post_mean)?,
            post_std: tape.stop_gradient(self.post_std)?,
            prior_mean: tape.stop_gradient(self.prior_mean)?,
            prior_std: tape.stop_gradient(self.prior_std)?,
        })
    }

    pub fn values<S: Scalar>(&self, tape: &Tape<S>) -> WorldModelState<S> {
        WorldModelState {
            h: tape.value(self.h).clone(),
            z: tape.value(self.z).clone(),
            post_mean: tape.value(self.post_mean).clone(),
            post_std: tape.value(self.post_std).clone(),
            prior_mean: tape.value(self.prior_mean).clone(),
            prior_std: tape.value(self.prior_std).clone(),
        }
    }
}

/// Value snapshot of a batch of latent states.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModelState<S> {
    pub h: Tensor<S>,
    pub z: Tensor<S>,
    pub post_mean: Tensor<S>,
    pub post_std: Tensor<S>,
    pub prior_mean: Tensor<S>,
    pub prior_std: Tensor<S>,
}

impl<S: Scalar> WorldModelState<S> {
    /// The zero initial state: `h = 0`, `z = 0`, unit Gaussians.
    pub fn initial(batch: usize, config: &WorldModelConfig) -> Self {
        let zs = Tensor::zeros(&[batch, config.stoch]);
        let ones = Tensor::full(&[batch, config.stoch], S::one());
        Self {
            h: Tensor::zeros(&[batch, config.deter]),
            z: zs.clone(),
            post_mean: zs.clone(),
            post_std: ones.clone(),
            prior_mean: zs,
            prior_std: ones,
        }
    }

    pub fn batch(&self) -> usize {
        self.h.shape()[0]
    }

    /// Places the snapshot on a tape as constants.
    pub fn to_tape(&self, tape: &mut Tape<S>) -> LatentState {
        LatentState {
            h: tape.constant(self.h.clone()),
            z: tape.constant(self.z.clone()),
            post_mean: tape.constant(self.post_mean.clone()),
            post_std: tape.constant(self.post_std.clone()),
            prior_mean: tape.constant(self.prior_mean.clone()),
            prior_std: tape.constant(self.prior_std.clone()),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            h: self.h.select_rows(rows),
            z: self.z.select_rows(rows),
            post_mean: self.post_mean.select_rows(rows),
            post_std: self.post_std.select_rows(rows),
            prior_mean: self.prior_mean.select_rows(rows),
            prior_std: self.prior_std.select_rows(rows),
        }
    }

    /// `[h, z]` for each row.
    pub fn features(&self) -> Tensor<S> {
        let (b, dh) = self.h.dims2().unwrap();
        let dz = self.z.shape()[1];
        let mut data = Vec::with_capacity(b * (dh + dz));
        for i in 0..b {
            data.extend_from_slice(self.h.row(i));
            data.extend_from_slice(self.z.row(i));
        }
        Tensor::new(vec![b, dh + dz], data).unwrap()
    }
}

/// Time-major sequence batch: row `t * batch + b` holds step `t` of
/// sequence `b`. `actions[t]` is the action taken *before* `obs[t]` (zero at
/// episode starts) and `rewards[t]` the reward received on arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch<S> {
    pub steps: usize,
    pub batch: usize,
    pub obs: Tensor<S>,
    pub actions: Tensor<S>,
    pub rewards: Tensor<S>,
}

impl<S: Scalar> SequenceBatch<S> {
    pub fn validate(&self, config: &WorldModelConfig) -> Result<(), WorldModelError> {
        let n = self.steps * self.batch;
        let check = |what, t: &Tensor<S>, cols| {
            if t.shape() != [n, cols] {
                Err(WorldModelError::Shape {
                    what,
                    expected: vec![n, cols],
                    got: t.shape().to_vec(),
                })
            } else {
                Ok(())
            }
        };
        check("observations", &self.obs, config.obs_dim)?;
        check("actions", &self.actions, config.action_dim)?;
        check("rewards", &self.rewards, 1)?;
        if n == 0 {
            return Err(WorldModelError::Config("empty sequence batch".into()));
        }
        Ok(())
    }

    /// Rows belonging to time step `t`.
    pub fn rows(&self, t: usize) -> std::ops::Range<usize> {
        t * self.batch..(t + 1) * self.batch
    }
}

/// Gated recurrent cell over `(h, [z, a])`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruCell {
    pub input: Linear,
    pub gates: Linear,
    pub candidate: Linear,
    pub deter: usize,
}

impl GruCell {
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        h: Var,
        z: Var,
        a: Var,
    ) -> Result<Var, AutodiffError> {
        let za = tape.concat(&[z, a], 1)?;
        let x = self.input.forward(tape, p, za)?;
        let x = tape.tanh(x)?;
        let xh = tape.concat(&[x, h], 1)?;
        let g = self.gates.forward(tape, p, xh)?;
        let g = tape.sigmoid(g)?;
        let reset = tape.slice(g, 1, 0, self.deter)?;
        let update = tape.slice(g, 1, self.deter, 2 * self.deter)?;
        let rh = tape.mul(reset, h)?;
        let xrh = tape.concat(&[x, rh], 1)?;
        let c = self.candidate.forward(tape, p, xrh)?;
        let c = tape.tanh(c)?;
        // h' = h + u ⊙ (c - h)
        let diff = tape.sub(c, h)?;
        let step = tape.mul(update, diff)?;
        tape.add(h, step)
    }
}

/// World-model parameters θ and the layer layout that reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel<S> {
    pub config: WorldModelConfig,
    pub params: ParamStore<S>,
    pub encoder: Mlp,
    pub cell: GruCell,
    pub prior: Mlp,
    pub posterior: Mlp,
    pub decoder: Mlp,
    pub reward: Mlp,
}

/// Output of rolling the model over a [`SequenceBatch`].
#[derive(Debug, Clone)]
pub struct SequenceOutput {
    pub losses: LossTriple,
    /// Posterior states per time step.
    pub states: Vec<LatentState>,
    /// All posterior states stacked time-major, one row per `(t, b)`.
    pub stacked: LatentState,
}

impl<S: Scalar> WorldModel<S> {
    pub fn new(config: WorldModelConfig, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let c = &config;
        let act = Activation::Tanh;
        let encoder = Mlp::new(
            &mut params,
            "wm.encoder",
            &[c.obs_dim, c.hidden, c.hidden],
            act,
            rng,
        );
        let cell = GruCell {
            input: Linear::new(
                &mut params,
                "wm.cell.input",
                c.stoch + c.action_dim,
                c.hidden,
                rng,
            ),
            gates: Linear::new(
                &mut params,
                "wm.cell.gates",
                c.hidden + c.deter,
                2 * c.deter,
                rng,
            ),
            candidate: Linear::new(
                &mut params,
                "wm.cell.candidate",
                c.hidden + c.deter,
                c.deter,
                rng,
            ),
            deter: c.deter,
        };
        let prior = Mlp::new(
            &mut params,
            "wm.prior",
            &[c.deter, c.hidden, 2 * c.stoch],
            act,
            rng,
        );
        let posterior = Mlp::new(
            &mut params,
            "wm.posterior",
            &[c.deter + c.hidden, c.hidden, 2 * c.stoch],
            act,
            rng,
        );
        let decoder = Mlp::new(
            &mut params,
            "wm.decoder",
            &[c.feature_dim(), c.hidden, c.obs_dim],
            act,
            rng,
        );
        let reward = Mlp::new(
            &mut params,
            "wm.reward",
            &[c.feature_dim(), c.hidden, 1],
            act,
            rng,
        );
        Self {
            config,
            params,
            encoder,
            cell,
            prior,
            posterior,
            decoder,
            reward,
        }
    }

    pub fn encode(&self, tape: &mut Tape<S>, p: &Bound, obs: Var) -> Result<Var, WorldModelError> {
        let e = self.encoder.forward(tape, p, obs)?;
        Ok(tape.tanh(e)?)
    }

    /// Splits a head output into `(mean, softplus(raw) + floor)`.
    fn gaussian(
        &self,
        tape: &mut Tape<S>,
        raw: Var,
        what: &'static str,
    ) -> Result<(Var, Var), WorldModelError> {
        if !tape.value(raw).is_finite() {
            return Err(WorldModelError::NonFinite(what));
        }
        let k = self.config.stoch;
        let mean = tape.slice(raw, 1, 0, k)?;
        let std_raw = tape.slice(raw, 1, k, 2 * k)?;
        let std = tape.softplus(std_raw)?;
        let std = tape.shift(std, S::lit(self.config.std_floor))?;
        Ok((mean, std))
    }

    fn sample(
        &self,
        tape: &mut Tape<S>,
        mean: Var,
        std: Var,
        noise: Var,
    ) -> Result<Var, WorldModelError> {
        let eps = tape.mul(std, noise)?;
        Ok(tape.add(mean, eps)?)
    }

    fn advance(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        prev: &LatentState,
        action: Var,
    ) -> Result<(Var, Var, Var), WorldModelError> {
        let h = self.cell.forward(tape, p, prev.h, prev.z, action)?;
        if !tape.value(h).is_finite() {
            return Err(WorldModelError::NonFinite("recurrent state"));
        }
        let raw = self.prior.forward(tape, p, h)?;
        let (mean, std) = self.gaussian(tape, raw, "prior head")?;
        Ok((h, mean, std))
    }

    /// One filtering step from an already-encoded observation.
    pub fn observe_embedded(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        prev: &LatentState,
        action: Var,
        embed: Var,
        noise: Var,
    ) -> Result<LatentState, WorldModelError> {
        let (h, prior_mean, prior_std) = self.advance(tape, p, prev, action)?;
        let he = tape.concat(&[h, embed], 1)?;
        let raw = self.posterior.forward(tape, p, he)?;
        let (post_mean, post_std) = self.gaussian(tape, raw, "posterior head")?;
        let z = self.sample(tape, post_mean, post_std, noise)?;
        Ok(LatentState {
            h,
            z,
            post_mean,
            post_std,
            prior_mean,
            prior_std,
        })
    }

    /// One filtering step: `z_t ~ q(z_t | h_t, o_t)` by reparameterization.
    pub fn observe_step(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        prev: &LatentState,
        action: Var,
        observation: Var,
        noise: Var,
    ) -> Result<LatentState, WorldModelError> {
        let embed = self.encode(tape, p, observation)?;
        self.observe_embedded(tape, p, prev, action, embed, noise)
    }

    /// Value-only filtering step for acting: no gradients are recorded.
    /// Zero `noise` selects the posterior mean.
    pub fn filter(
        &self,
        prev: &WorldModelState<S>,
        action: &Tensor<S>,
        observation: &Tensor<S>,
        noise: &Tensor<S>,
    ) -> Result<WorldModelState<S>, WorldModelError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, crate::param::Binding::Frozen);
        let prev = prev.to_tape(&mut tape);
        let a = tape.constant(action.clone());
        let o = tape.constant(observation.clone());
        let eps = tape.constant(noise.clone());
        let next = self.observe_step(&mut tape, &p, &prev, a, o, eps)?;
        Ok(next.values(&tape))
    }

    /// One prediction step: `ẑ_t ~ p(ẑ_t | h_t)`; posterior fields copy the prior.
    pub fn imagine_step(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        prev: &LatentState,
        action: Var,
        noise: Var,
    ) -> Result<LatentState, WorldModelError> {
        let (h, prior_mean, prior_std) = self.advance(tape, p, prev, action)?;
        let z = self.sample(tape, prior_mean, prior_std, noise)?;
        Ok(LatentState {
            h,
            z,
            post_mean: prior_mean,
            post_std: prior_std,
            prior_mean,
            prior_std,
        })
    }

    pub fn decode(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        features: Var,
    ) -> Result<Var, WorldModelError> {
        Ok(self.decoder.forward(tape, p, features)?)
    }

    pub fn predict_reward(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        features: Var,
    ) -> Result<Var, WorldModelError> {
        Ok(self.reward.forward(tape, p, features)?)
    }

    /// `½ Σ_pixels (decoded - o)²`, averaged over rows.
    pub fn observation_loss(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        state: &LatentState,
        observation: Var,
    ) -> Result<Var, WorldModelError> {
        let f = state.features(tape)?;
        let decoded = self.decode(tape, p, f)?;
        half_squared_error(tape, decoded, observation, "observation")
    }

    /// `½ (r̂ - r)²`, averaged over rows.
    pub fn reward_loss(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        state: &LatentState,
        reward: Var,
    ) -> Result<Var, WorldModelError> {
        let f = state.features(tape)?;
        let predicted = self.predict_reward(tape, p, f)?;
        half_squared_error(tape, predicted, reward, "reward")
    }

    /// Dynamics loss between posterior and prior of `state`, averaged over rows.
    pub fn dynamics_loss(
        &self,
        tape: &mut Tape<S>,
        state: &LatentState,
        kl: &KlConfig,
    ) -> Result<Var, WorldModelError> {
        dynamics_loss(tape, state, kl, self.config.std_floor)
    }

    /// Rolls the posterior over the whole batch from a zero initial state and
    /// returns the three losses averaged over batch and time.
    ///
    /// `noise` holds one standard-normal row per `(t, b)`, time-major.
    pub fn sequence_losses(
        &self,
        tape: &mut Tape<S>,
        p: &Bound,
        batch: &SequenceBatch<S>,
        noise: &Tensor<S>,
        kl: &KlConfig,
    ) -> Result<SequenceOutput, WorldModelError> {
        batch.validate(&self.config)?;
        kl.validate()?;
        let n = batch.steps * batch.batch;
        if noise.shape() != [n, self.config.stoch] {
            return Err(WorldModelError::Shape {
                what: "noise",
                expected: vec![n, self.config.stoch],
                got: noise.shape().to_vec(),
            });
        }
        let obs = tape.constant(batch.obs.clone());
        let actions = tape.constant(batch.actions.clone());
        let rewards = tape.constant(batch.rewards.clone());
        let noise = tape.constant(noise.clone());
        let embed = self.encode(tape, p, obs)?;

        let init = WorldModelState::initial(batch.batch, &self.config);
        let mut prev = init.to_tape(tape);
        let mut states = Vec::with_capacity(batch.steps);
        for t in 0..batch.steps {
            let r = batch.rows(t);
            let a = tape.slice(actions, 0, r.start, r.end)?;
            let e = tape.slice(embed, 0, r.start, r.end)?;
            let eps = tape.slice(noise, 0, r.start, r.end)?;
            let s = self.observe_embedded(tape, p, &prev, a, e, eps)?;
            states.push(s);
            prev = s;
        }
        let stacked = LatentState::stack(tape, &states)?;
        let observation = self.observation_loss(tape, p, &stacked, obs)?;
        let reward = self.reward_loss(tape, p, &stacked, rewards)?;
        let dynamics = self.dynamics_loss(tape, &stacked, kl)?;
        Ok(SequenceOutput {
            losses: LossTriple {
                observation,
                reward,
                dynamics,
            },
            states,
            stacked,
        })
    }
}

fn half_squared_error<S: Scalar>(
    tape: &mut Tape<S>,
    predicted: Var,
    target: Var,
    what: &'static str,
) -> Result<Var, WorldModelError> {
    if tape.shape(predicted) != tape.shape(target) {
        return Err(WorldModelError::Shape {
            what,
            expected: tape.shape(predicted).to_vec(),
            got: tape.shape(target).to_vec(),
        });
    }
    let rows = tape.shape(predicted).first().copied().unwrap_or(1).max(1);
    let d = tape.sub(predicted, target)?;
    let sq = tape.square(d)?;
    let total = tape.sum(sq)?;
    Ok(tape.scale(total, S::lit(0.5 / rows as f64))?)
}

/// Closed-form `KL[N(μq, σq) ‖ N(μp, σp)]` summed over the last axis.
pub fn gaussian_kl<S: Scalar>(
    tape: &mut Tape<S>,
    q_mean: Var,
    q_std: Var,
    p_mean: Var,
    p_std: Var,
) -> Result<Var, AutodiffError> {
    let log_p = tape.log(p_std)?;
    let log_q = tape.log(q_std)?;
    let log_ratio = tape.sub(log_p, log_q)?;
    let q_var = tape.square(q_std)?;
    let diff = tape.sub(q_mean, p_mean)?;
    let diff_sq = tape.square(diff)?;
    let num = tape.add(q_var, diff_sq)?;
    let p_var = tape.square(p_std)?;
    let two_p_var = tape.scale(p_var, S::lit(2.0))?;
    let frac = tape.div(num, two_p_var)?;
    let per_dim = tape.add(log_ratio, frac)?;
    let per_dim = tape.shift(per_dim, S::lit(-0.5))?;
    tape.sum_last(per_dim)
}

fn check_floor<S: Scalar>(tape: &Tape<S>, std: Var, floor: f64) -> Result<(), WorldModelError> {
    let min = tape
        .value(std)
        .data()
        .iter()
        .fold(S::infinity(), |m, &v| m.min(v));
    // one ulp-scale slack for softplus(x) + floor rounding
    if !(min.as_f64() >= floor * (1.0 - 1e-12)) {
        return Err(WorldModelError::StdBelowFloor {
            value: min.as_f64(),
            floor,
        });
    }
    Ok(())
}

/// Dynamics loss on the posterior/prior pair carried by `state`.
pub fn dynamics_loss<S: Scalar>(
    tape: &mut Tape<S>,
    state: &LatentState,
    kl: &KlConfig,
    std_floor: f64,
) -> Result<Var, WorldModelError> {
    kl.validate()?;
    check_floor(tape, state.post_std, std_floor)?;
    check_floor(tape, state.prior_std, std_floor)?;
    match kl.mode {
        KlMode::Plain => {
            let k = gaussian_kl(
                tape,
                state.post_mean,
                state.post_std,
                state.prior_mean,
                state.prior_std,
            )?;
            Ok(tape.mean(k)?)
        }
        KlMode::Split => {
            let (dyn_term, rep_term) = split_kl_terms(tape, state, kl)?;
            let a = tape.scale(dyn_term, S::lit(kl.alpha))?;
            let b = tape.scale(rep_term, S::lit(1.0 - kl.alpha))?;
            Ok(tape.add(a, b)?)
        }
    }
}

/// The two free-bits-clipped KL terms of split mode, each averaged over rows:
/// `max(fb, KL[sg(q) ‖ p])` trains the prior, `max(fb, KL[q ‖ sg(p)])` the posterior.
pub fn split_kl_terms<S: Scalar>(
    tape: &mut Tape<S>,
    state: &LatentState,
    kl: &KlConfig,
) -> Result<(Var, Var), WorldModelError> {
    let fb = S::lit(kl.free_bits);
    let sq_mean = tape.stop_gradient(state.post_mean)?;
    let sq_std = tape.stop_gradient(state.post_std)?;
    let sp_mean = tape.stop_gradient(state.prior_mean)?;
    let sp_std = tape.stop_gradient(state.prior_std)?;
    let dyn_kl = gaussian_kl(tape, sq_mean, sq_std, state.prior_mean, state.prior_std)?;
    let dyn_kl = tape.clamp_min(dyn_kl, fb)?;
    let dyn_term = tape.mean(dyn_kl)?;
    let rep_kl = gaussian_kl(tape, state.post_mean, state.post_std, sp_mean, sp_std)?;
    let rep_kl = tape.clamp_min(rep_kl, fb)?;
    let rep_term = tape.mean(rep_kl)?;
    Ok((dyn_term, rep_term))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Binding;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> WorldModelConfig {
        WorldModelConfig {
            obs_dim: 6,
            action_dim: 2,
            deter: 4,
            stoch: 3,
            hidden: 5,
            std_floor: 1e-2,
        }
    }

    fn zero_model() -> WorldModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut wm = WorldModel::new(small_config(), &mut rng);
        for t in wm.params.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        wm
    }

    #[test]
    fn zero_network_observe() {
        let wm = zero_model();
        let c = wm.config;
        let mut tape = Tape::new();
        let p = wm.params.bind(&mut tape, Binding::Frozen);
        let prev = WorldModelState::initial(2, &c).to_tape(&mut tape);
        let a = tape.constant(Tensor::zeros(&[2, c.action_dim]));
        let o = tape.constant(Tensor::full(&[2, c.obs_dim], 0.3));
        let noise = tape.constant(Tensor::zeros(&[2, c.stoch]));
        let s = wm.observe_step(&mut tape, &p, &prev, a, o, noise).unwrap();
        assert!(tape.value(s.h).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(s.post_mean).data().iter().all(|&v| v == 0.0));
        let want = 2f64.ln() + 0.01;
        assert!(tape
            .value(s.post_std)
            .data()
            .iter()
            .all(|&v| (v - want).abs() < 1e-15));
        assert_eq!(tape.value(s.z), tape.value(s.post_mean));

        let im = wm.imagine_step(&mut tape, &p, &prev, a, noise).unwrap();
        assert!(tape.value(im.prior_mean).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_noise_sample_is_posterior_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let wm = WorldModel::<f64>::new(small_config(), &mut rng);
        let c = wm.config;
        let mut tape = Tape::new();
        let p = wm.params.bind(&mut tape, Binding::Frozen);
        let prev = WorldModelState::initial(3, &c).to_tape(&mut tape);
        let a = tape.constant(Tensor::full(&[3, c.action_dim], 1.0));
        let o = tape.constant(Tensor::from_fn(&[3, c.obs_dim], |i| {
            (i as f64 * 0.37).sin() * 0.5
        }));
        let noise = tape.constant(Tensor::zeros(&[3, c.stoch]));
        let s = wm.observe_step(&mut tape, &p, &prev, a, o, noise).unwrap();
        assert_eq!(tape.value(s.z), tape.value(s.post_mean));
        let im = wm.imagine_step(&mut tape, &p, &prev, a, noise).unwrap();
        assert_eq!(tape.value(im.post_mean), tape.value(im.prior_mean));
        assert_eq!(tape.value(im.h), tape.value(s.h));
    }

    #[test]
    fn kl_of_unit_gaussians() {
        let mut tape = Tape::<f64>::new();
        let zero = tape.constant(Tensor::zeros(&[1, 3]));
        let one = tape.constant(Tensor::full(&[1, 3], 1.0));
        let k = gaussian_kl(&mut tape, zero, one, one, one).unwrap();
        assert!((tape.value(k).item() - 1.5).abs() < 1e-15);
        let same = gaussian_kl(&mut tape, one, one, one, one).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);
    }

    #[test]
    fn split_mode_identical_gaussians_hit_free_bits() {
        let mut tape = Tape::<f64>::new();
        let m = tape.constant(Tensor::zeros(&[4, 3]));
        let s = tape.constant(Tensor::full(&[4, 3], 0.5));
        let state = LatentState {
            h: m,
            z: m,
            post_mean: m,
            post_std: s,
            prior_mean: m,
            prior_std: s,
        };
        let plain = dynamics_loss(&mut tape, &state, &KlConfig::default(), 1e-2).unwrap();
        assert_eq!(tape.item(plain), 0.0);
        let split = dynamics_loss(&mut tape, &state, &KlConfig::split(0.8), 1e-2).unwrap();
        assert!((tape.item(split) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn std_below_floor_rejected() {
        let mut tape = Tape::<f64>::new();
        let m = tape.constant(Tensor::zeros(&[1, 2]));
        let bad = tape.constant(Tensor::full(&[1, 2], 1e-3));
        let ok = tape.constant(Tensor::full(&[1, 2], 1.0));
        let state = LatentState {
            h: m,
            z: m,
            post_mean: m,
            post_std: bad,
            prior_mean: m,
            prior_std: ok,
        };
        assert!(matches!(
            dynamics_loss(&mut tape, &state, &KlConfig::default(), 1e-2),
            Err(WorldModelError::StdBelowFloor { .. })
        ));
    }

    #[test]
    fn alpha_outside_unit_interval_rejected() {
        assert!(KlConfig::split(1.5).validate().is_err());
        assert!(KlConfig::split(0.0).validate().is_ok());
    }

    #[test]
    fn observation_loss_reference_value() {
        // decoded ≡ 0 against o ≡ 0.5 on 768 pixels: ½ · 768 · 0.25 = 96
        let mut tape = Tape::<f64>::new();
        let decoded = tape.constant(Tensor::zeros(&[2, 768]));
        let o = tape.constant(Tensor::full(&[2, 768], 0.5));
        let l = half_squared_error(&mut tape, decoded, o, "observation").unwrap();
        assert_eq!(tape.item(l), 96.0);
        let l = half_squared_error(&mut tape, o, o, "observation").unwrap();
        assert_eq!(tape.item(l), 0.0);
    }

    #[test]
    fn reward_loss_reference_value() {
        let mut tape = Tape::<f64>::new();
        let r_hat = tape.constant(Tensor::zeros(&[1, 1]));
        let r = tape.constant(Tensor::full(&[1, 1], 1.0));
        let l = half_squared_error(&mut tape, r_hat, r, "reward").unwrap();
        assert_eq!(tape.item(l), 0.5);
    }

    #[test]
    fn mismatched_target_shape_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 4]));
        let b = tape.constant(Tensor::zeros(&[2, 5]));
        assert!(matches!(
            half_squared_error(&mut tape, a, b, "observation"),
            Err(WorldModelError::Shape { .. })
        ));
    }
}
