//! Dynamic loss weighting for the observation, reward and dynamics losses.
//!
//! A harmonizer is one learnable log-scale `s` per task with `σ = exp(s)`.
//! The harmonious term `L/σ + log σ` is minimized at `σ = E[L]`, so every
//! task's loss is rescaled to unit magnitude. The rectified term
//! `L/σ + log(1 + σ)` has its minimum at `σ = (E[L] + sqrt(E[L]² + 4E[L]))/2`,
//! which caps the learned weight `1/σ` for small losses.
//!
//! Baselines sharing the same interface: fixed weights, stop-gradient
//! reciprocal weights, uncertainty weighting with the observation
//! regularizer scaled by the pixel count, and dynamic weight averaging.

use log::warn;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::param::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Bounds on the log-scale parameters; σ spans roughly e^±10.
pub const LOG_SCALE_MIN: f64 = -10.0;
pub const LOG_SCALE_MAX: f64 = 10.0;

/// Floor applied to a loss before taking its reciprocal.
pub const RECIPROCAL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Observation,
    Reward,
    Dynamics,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Observation, Task::Reward, Task::Dynamics];

    pub fn index(self) -> usize {
        match self {
            Task::Observation => 0,
            Task::Reward => 1,
            Task::Dynamics => 2,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Task::Observation => "o",
            Task::Reward => "r",
            Task::Dynamics => "d",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarmonizerError {
    #[error("non-finite {task:?} loss ({value})")]
    NonFinite { task: Task, value: f64 },
    #[error("negative {task:?} loss ({value})")]
    NegativeLoss { task: Task, value: f64 },
    #[error("mean loss must be non-negative, got {0}")]
    NegativeMean(f64),
    #[error("weighting scheme {0} requires log-scale parameters")]
    MissingScales(&'static str),
    #[error("invalid weighting parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// The three world-model losses as scalar nodes on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTriple {
    pub observation: Var,
    pub reward: Var,
    pub dynamics: Var,
}

impl LossTriple {
    pub fn get(&self, task: Task) -> Var {
        match task {
            Task::Observation => self.observation,
            Task::Reward => self.reward,
            Task::Dynamics => self.dynamics,
        }
    }

    pub fn values<S: Scalar>(&self, tape: &Tape<S>) -> [S; 3] {
        Task::ALL.map(|t| tape.item(self.get(t)))
    }
}

/// How the three losses are combined into one objective.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightingScheme {
    /// `w_o L_o + w_r L_r + w_d L_d`.
    Fixed { wo: f64, wr: f64, wd: f64 },
    /// `w_i = sg(1 / max(L_i, ε))`.
    Reciprocal,
    /// Sum of harmonious (or rectified) terms. With `learn_dynamics = false`
    /// the dynamics loss keeps weight 1 and has no harmonizer term.
    Harmony {
        rectified: bool,
        learn_dynamics: bool,
    },
    /// Uncertainty weighting with the observation regularizer scaled by the
    /// number of observation dimensions.
    UncertaintyWeighting,
    /// Dynamic weight averaging with the given softmax temperature.
    Dwa { temperature: f64 },
}

impl WeightingScheme {
    pub fn harmony(rectified: bool) -> Self {
        WeightingScheme::Harmony {
            rectified,
            learn_dynamics: true,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightingScheme::Fixed { .. } => "fixed",
            WeightingScheme::Reciprocal => "reciprocal",
            WeightingScheme::Harmony {
                rectified: false, ..
            } => "harmony",
            WeightingScheme::Harmony {
                rectified: true, ..
            } => "harmony-rectified",
            WeightingScheme::UncertaintyWeighting => "uw",
            WeightingScheme::Dwa { .. } => "dwa",
        }
    }

    pub fn uses_log_scales(&self) -> bool {
        matches!(
            self,
            WeightingScheme::Harmony { .. } | WeightingScheme::UncertaintyWeighting
        )
    }

    pub fn validate(&self) -> Result<(), HarmonizerError> {
        match *self {
            WeightingScheme::Fixed { wo, wr, wd } => {
                if [wo, wr, wd].iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(HarmonizerError::InvalidParameter(format!(
                        "fixed weights must be finite and >= 0, got ({wo}, {wr}, {wd})"
                    )));
                }
            }
            WeightingScheme::Dwa { temperature } if !(temperature > 0.0) => {
                return Err(HarmonizerError::InvalidParameter(format!(
                    "DWA temperature must be positive, got {temperature}"
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Learnable log-scales `s_o, s_r, s_d`, initialized at zero (σ = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LogScales<S> {
    pub params: ParamStore<S>,
    ids: [ParamId; 3],
}

impl<S: Scalar> Default for LogScales<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> LogScales<S> {
    pub fn new() -> Self {
        let mut params = ParamStore::new();
        let ids = Task::ALL.map(|t| {
            params.add(
                format!("harmonizer.s_{}", t.suffix()),
                Tensor::scalar(S::zero()),
            )
        });
        Self { params, ids }
    }

    pub fn log_scale(&self, task: Task) -> S {
        self.params.get(self.ids[task.index()]).item()
    }

    pub fn set_log_scale(&mut self, task: Task, s: S) {
        self.params.get_mut(self.ids[task.index()]).data_mut()[0] = s;
    }

    pub fn sigma(&self, task: Task) -> S {
        self.log_scale(task).exp()
    }

    pub fn sigmas(&self) -> [S; 3] {
        Task::ALL.map(|t| self.sigma(t))
    }

    /// Bound variables for each task, in `o, r, d` order.
    pub fn vars(&self, bound: &Bound) -> [Var; 3] {
        self.ids.map(|id| bound[id])
    }

    /// Projects every `s` back into `[LOG_SCALE_MIN, LOG_SCALE_MAX]`.
    pub fn clamp(&mut self) {
        let (lo, hi) = (S::lit(LOG_SCALE_MIN), S::lit(LOG_SCALE_MAX));
        for t in self.params.values_mut() {
            for v in t.data_mut() {
                *v = v.max(lo).min(hi);
            }
        }
    }
}

fn check_loss<S: Scalar>(tape: &Tape<S>, loss: Var, task: Task) -> Result<(), HarmonizerError> {
    let v = tape.item(loss);
    if !v.is_finite() {
        return Err(HarmonizerError::NonFinite {
            task,
            value: v.as_f64(),
        });
    }
    if v < S::zero() {
        return Err(HarmonizerError::NegativeLoss {
            task,
            value: v.as_f64(),
        });
    }
    Ok(())
}

fn scaled_loss<S: Scalar>(tape: &mut Tape<S>, loss: Var, s: Var) -> Result<Var, AutodiffError> {
    let neg_s = tape.neg(s)?;
    let inv_sigma = tape.exp(neg_s)?;
    tape.mul(inv_sigma, loss)
}

/// `exp(-s)·L + s`, i.e. `L/σ + log σ`.
pub fn harmonious_term<S: Scalar>(
    tape: &mut Tape<S>,
    loss: Var,
    s: Var,
) -> Result<Var, HarmonizerError> {
    harmonious_term_for(tape, loss, s, Task::Observation)
}

/// `exp(-s)·L + log(1 + exp(s))`, i.e. `L/σ + log(1 + σ)`.
pub fn rectified_term<S: Scalar>(
    tape: &mut Tape<S>,
    loss: Var,
    s: Var,
) -> Result<Var, HarmonizerError> {
    rectified_term_for(tape, loss, s, Task::Observation)
}

fn harmonious_term_for<S: Scalar>(
    tape: &mut Tape<S>,
    loss: Var,
    s: Var,
    task: Task,
) -> Result<Var, HarmonizerError> {
    check_loss(tape, loss, task)?;
    let scaled = scaled_loss(tape, loss, s)?;
    Ok(tape.add(scaled, s)?)
}

fn rectified_term_for<S: Scalar>(
    tape: &mut Tape<S>,
    loss: Var,
    s: Var,
    task: Task,
) -> Result<Var, HarmonizerError> {
    check_loss(tape, loss, task)?;
    let scaled = scaled_loss(tape, loss, s)?;
    let reg = tape.softplus(s)?;
    Ok(tape.add(scaled, reg)?)
}

/// Minimizer of the expected (rectified) harmonious term for a loss with
/// mean `mean_loss`.
pub fn stationary_sigma<S: Scalar>(mean_loss: S, rectified: bool) -> Result<S, HarmonizerError> {
    if !(mean_loss >= S::zero()) {
        return Err(HarmonizerError::NegativeMean(mean_loss.as_f64()));
    }
    if !rectified {
        return Ok(mean_loss);
    }
    let two = S::lit(2.0);
    let four = S::lit(4.0);
    Ok((mean_loss + (mean_loss * mean_loss + four * mean_loss).sqrt()) / two)
}

/// Learned weight `1/σ*` at the stationary point.
pub fn stationary_weight<S: Scalar>(mean_loss: S, rectified: bool) -> Result<S, HarmonizerError> {
    Ok(S::one() / stationary_sigma(mean_loss, rectified)?)
}

/// Harmonized loss scale `E[L]/σ*`: exactly 1 unrectified, and
/// `2/(1 + sqrt(1 + 4/E[L])) < 1` rectified.
pub fn harmonized_scale<S: Scalar>(mean_loss: S, rectified: bool) -> Result<S, HarmonizerError> {
    if mean_loss == S::zero() {
        return Ok(if rectified { S::zero() } else { S::one() });
    }
    if !rectified {
        stationary_sigma(mean_loss, false)?;
        return Ok(S::one());
    }
    let two = S::lit(2.0);
    let four = S::lit(4.0);
    Ok(two / (S::one() + (S::one() + four / mean_loss).sqrt()))
}

/// Gradient of the (rectified) harmonious term with respect to `s`.
pub fn log_scale_gradient<S: Scalar>(loss: S, s: S, rectified: bool) -> S {
    let reg = if rectified {
        S::one() / (S::one() + (-s).exp())
    } else {
        S::one()
    };
    reg - (-s).exp() * loss
}

/// Extra inputs for [`combine`] that some schemes need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombineAux {
    /// Observation dimensionality H·W·C for uncertainty weighting.
    pub obs_dims: usize,
    /// Current DWA weights.
    pub dwa_weights: [f64; 3],
}

impl Default for CombineAux {
    fn default() -> Self {
        Self {
            obs_dims: 1,
            dwa_weights: [1.0; 3],
        }
    }
}

/// Total objective plus the effective per-task weights it applied.
#[derive(Debug, Clone, Copy)]
pub struct Combined<S> {
    pub total: Var,
    pub weights: [S; 3],
}

fn weighted_sum<S: Scalar>(
    tape: &mut Tape<S>,
    losses: &LossTriple,
    weights: [S; 3],
) -> Result<Var, AutodiffError> {
    let mut total: Option<Var> = None;
    for (task, w) in Task::ALL.into_iter().zip(weights) {
        let term = tape.scale(losses.get(task), w)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.expect("three tasks"))
}

fn sum_terms<S: Scalar>(tape: &mut Tape<S>, terms: &[Var]) -> Result<Var, AutodiffError> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Combines the three losses under `scheme`.
///
/// `log_scales` holds the bound `s_o, s_r, s_d` (required for the harmony
/// and uncertainty-weighting schemes).
pub fn combine<S: Scalar>(
    tape: &mut Tape<S>,
    losses: &LossTriple,
    scheme: &WeightingScheme,
    log_scales: Option<[Var; 3]>,
    aux: &CombineAux,
) -> Result<Combined<S>, HarmonizerError> {
    scheme.validate()?;
    for task in Task::ALL {
        check_loss(tape, losses.get(task), task)?;
    }
    match *scheme {
        WeightingScheme::Fixed { wo, wr, wd } => {
            let weights = [S::lit(wo), S::lit(wr), S::lit(wd)];
            let total = weighted_sum(tape, losses, weights)?;
            Ok(Combined { total, weights })
        }
        WeightingScheme::Reciprocal => {
            let eps = S::lit(RECIPROCAL_EPS);
            let weights = losses.values(tape).map(|l| S::one() / l.max(eps));
            let total = weighted_sum(tape, losses, weights)?;
            Ok(Combined { total, weights })
        }
        WeightingScheme::Dwa { .. } => {
            let weights = aux.dwa_weights.map(S::lit);
            let total = weighted_sum(tape, losses, weights)?;
            Ok(Combined { total, weights })
        }
        WeightingScheme::Harmony {
            rectified,
            learn_dynamics,
        } => {
            let s = log_scales.ok_or(HarmonizerError::MissingScales(scheme.name()))?;
            let mut terms = Vec::with_capacity(3);
            let mut weights = [S::one(); 3];
            for task in Task::ALL {
                let i = task.index();
                let loss = losses.get(task);
                if task == Task::Dynamics && !learn_dynamics {
                    terms.push(loss);
                    continue;
                }
                let term = if rectified {
                    rectified_term_for(tape, loss, s[i], task)?
                } else {
                    harmonious_term_for(tape, loss, s[i], task)?
                };
                weights[i] = (-tape.item(s[i])).exp();
                terms.push(term);
            }
            let total = sum_terms(tape, &terms)?;
            Ok(Combined { total, weights })
        }
        WeightingScheme::UncertaintyWeighting => {
            let s = log_scales.ok_or(HarmonizerError::MissingScales(scheme.name()))?;
            let total = uw_loss(tape, losses, s, aux.obs_dims)?;
            let weights = s.map(|v| (-tape.item(v)).exp());
            Ok(Combined { total, weights })
        }
    }
}

/// Uncertainty weighting: `L_o/σ_o + HWC·log σ_o + Σ_{r,d} (L_i/σ_i + log σ_i)`.
pub fn uw_loss<S: Scalar>(
    tape: &mut Tape<S>,
    losses: &LossTriple,
    log_scales: [Var; 3],
    obs_dims: usize,
) -> Result<Var, HarmonizerError> {
    if obs_dims == 0 {
        return Err(HarmonizerError::InvalidParameter(
            "observation dimensionality must be at least 1".into(),
        ));
    }
    let mut terms = Vec::with_capacity(3);
    for task in Task::ALL {
        let i = task.index();
        let loss = losses.get(task);
        check_loss(tape, loss, task)?;
        let scaled = scaled_loss(tape, loss, log_scales[i])?;
        let reg = if task == Task::Observation {
            tape.scale(log_scales[i], S::lit(obs_dims as f64))?
        } else {
            log_scales[i]
        };
        terms.push(tape.add(scaled, reg)?);
    }
    Ok(sum_terms(tape, &terms)?)
}

/// DWA weights `K · softmax(r_i / T)` with `r_i = L_i(t-1) / L_i(t-2)`.
///
/// `history[0]` holds the epoch means from `t-2`, `history[1]` from `t-1`.
pub fn dwa_weights(history: &[[f64; 3]; 2], temperature: f64) -> Result<[f64; 3], HarmonizerError> {
    if !(temperature > 0.0) {
        return Err(HarmonizerError::InvalidParameter(format!(
            "DWA temperature must be positive, got {temperature}"
        )));
    }
    if temperature.is_infinite() {
        return Ok([1.0; 3]);
    }
    let ratios: [f64; 3] = std::array::from_fn(|i| {
        let (older, newer) = (history[0][i], history[1][i]);
        if older == 0.0 || !older.is_finite() {
            warn!("dwa: zero or non-finite loss denominator for task {i}; ratio treated as 1");
            1.0
        } else {
            newer / older
        }
    });
    let logits = ratios.map(|r| r / temperature);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|l| (l - max).exp());
    let z: f64 = exps.iter().sum();
    Ok(exps.map(|e| 3.0 * e / z))
}

/// Epoch-mean bookkeeping for DWA over fixed windows of updates.
#[derive(Debug, Clone, PartialEq)]
pub struct DwaTracker {
    window: usize,
    sums: [f64; 3],
    count: usize,
    completed: Vec<[f64; 3]>,
}

impl DwaTracker {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "DWA window must be positive");
        Self {
            window,
            sums: [0.0; 3],
            count: 0,
            completed: Vec::new(),
        }
    }

    pub fn record(&mut self, losses: [f64; 3]) {
        for (s, l) in self.sums.iter_mut().zip(losses) {
            *s += l;
        }
        self.count += 1;
        if self.count == self.window {
            let n = self.window as f64;
            self.completed.push(self.sums.map(|s| s / n));
            if self.completed.len() > 2 {
                self.completed.remove(0);
            }
            self.sums = [0.0; 3];
            self.count = 0;
        }
    }

    /// Equal weights until two complete epochs exist.
    pub fn weights(&self, temperature: f64) -> Result<[f64; 3], HarmonizerError> {
        match self.completed.as_slice() {
            [older, newer] => dwa_weights(&[*older, *newer], temperature),
            _ => Ok([1.0; 3]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Binding;

    fn scalar_loss(tape: &mut Tape<f64>, v: f64) -> Var {
        tape.constant(Tensor::scalar(v))
    }

    #[test]
    fn harmonious_term_value_and_slope() {
        let mut tape = Tape::new();
        let l = scalar_loss(&mut tape, 2.0);
        let s = tape.leaf(Tensor::scalar(0.0));
        let h = harmonious_term(&mut tape, l, s).unwrap();
        assert_eq!(tape.item(h), 2.0);
        let g = tape.backward(h).unwrap();
        assert_eq!(g.wrt(s).item(), -1.0);
        assert_eq!(log_scale_gradient(2.0, 0.0, false), -1.0);
    }

    #[test]
    fn gradient_reaches_loss_parents() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let l = tape.square(x).unwrap();
        let s = tape.leaf(Tensor::scalar(1.0_f64.ln()));
        let h = rectified_term(&mut tape, l, s).unwrap();
        let g = tape.backward(h).unwrap();
        assert!((g.wrt(x).item() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_rejected() {
        let mut tape = Tape::new();
        let l = scalar_loss(&mut tape, f64::NAN);
        let s = tape.leaf(Tensor::scalar(0.0));
        assert!(matches!(
            harmonious_term(&mut tape, l, s),
            Err(HarmonizerError::NonFinite { .. })
        ));
    }

    #[test]
    fn stationary_sigma_closed_forms() {
        assert_eq!(stationary_sigma(4.0, false).unwrap(), 4.0);
        let r = stationary_sigma(4.0, true).unwrap();
        assert!((r - (4.0 + 32f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!((r - 4.828427).abs() < 1e-6);
        assert!((4.0 / r - 2.0 / (1.0 + 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(stationary_sigma(0.0, false).unwrap(), 0.0);
        assert_eq!(stationary_sigma(0.0, true).unwrap(), 0.0);
        assert!(stationary_sigma(-1.0, true).is_err());
        assert!((stationary_sigma(1.0f64, true).unwrap() - 1.618034).abs() < 1e-6);
        assert!((stationary_weight(0.01f64, true).unwrap() - 9.5125).abs() < 1e-4);
        assert!((stationary_weight(0.01f64, false).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_point_zeroes_the_slope() {
        for &l in &[1e-3f64, 0.01, 0.5, 1.0, 4.0, 100.0] {
            for rectified in [false, true] {
                let s = stationary_sigma(l, rectified).unwrap().ln();
                assert!(log_scale_gradient(l, s, rectified).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn f32_closed_form() {
        let r: f32 = stationary_sigma(1.0f32, true).unwrap();
        assert!((r - 1.618034).abs() < 1e-6);
    }

    #[test]
    fn fixed_and_reciprocal_combination() {
        let mut tape = Tape::<f64>::new();
        let losses = LossTriple {
            observation: scalar_loss(&mut tape, 2.0),
            reward: scalar_loss(&mut tape, 0.01),
            dynamics: scalar_loss(&mut tape, 0.5),
        };
        let aux = CombineAux::default();
        let fixed = WeightingScheme::Fixed {
            wo: 1.0,
            wr: 1.0,
            wd: 1.0,
        };
        let c = combine(&mut tape, &losses, &fixed, None, &aux).unwrap();
        assert!((tape.item(c.total) - 2.51).abs() < 1e-12);

        let c = combine(&mut tape, &losses, &WeightingScheme::Reciprocal, None, &aux).unwrap();
        assert!((c.weights[0] - 0.5).abs() < 1e-12);
        assert!((c.weights[1] - 100.0).abs() < 1e-9);
        assert!((c.weights[2] - 2.0).abs() < 1e-12);
        assert!((tape.item(c.total) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn reciprocal_weights_carry_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let l = tape.square(x).unwrap();
        let losses = LossTriple {
            observation: l,
            reward: l,
            dynamics: l,
        };
        let c = combine(
            &mut tape,
            &losses,
            &WeightingScheme::Reciprocal,
            None,
            &CombineAux::default(),
        )
        .unwrap();
        let g = tape.backward(c.total).unwrap();
        // d/dx [3 · sg(1/x²) · x²] = 3 · 2x / x² = 6/x
        assert!((g.wrt(x).item() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn harmony_requires_scales() {
        let mut tape = Tape::<f64>::new();
        let l = scalar_loss(&mut tape, 1.0);
        let losses = LossTriple {
            observation: l,
            reward: l,
            dynamics: l,
        };
        let err = combine(
            &mut tape,
            &losses,
            &WeightingScheme::harmony(true),
            None,
            &CombineAux::default(),
        );
        assert!(matches!(
            err,
            Err(HarmonizerError::MissingScales("harmony-rectified"))
        ));
    }

    #[test]
    fn frozen_unit_sigma_matches_unit_weights() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[3], &[0.3, -1.2, 2.0]).unwrap());
        let sq = tape.square(x).unwrap();
        let lo = tape.sum(sq).unwrap();
        let lr = tape.mean(sq).unwrap();
        let e = tape.exp(x).unwrap();
        let ld = tape.sum(e).unwrap();
        let losses = LossTriple {
            observation: lo,
            reward: lr,
            dynamics: ld,
        };
        let scales = LogScales::<f64>::new();
        let bound = scales.params.bind(&mut tape, Binding::Frozen);
        let aux = CombineAux::default();
        let fixed = combine(
            &mut tape,
            &losses,
            &WeightingScheme::Fixed {
                wo: 1.0,
                wr: 1.0,
                wd: 1.0,
            },
            None,
            &aux,
        )
        .unwrap();
        let gf = tape.backward(fixed.total).unwrap().wrt(x).clone();
        for rectified in [false, true] {
            let h = combine(
                &mut tape,
                &losses,
                &WeightingScheme::harmony(rectified),
                Some(scales.vars(&bound)),
                &aux,
            )
            .unwrap();
            let offset = if rectified { 3.0 * 2f64.ln() } else { 0.0 };
            assert!((tape.item(h.total) - tape.item(fixed.total) - offset).abs() < 1e-12);
            let gh = tape.backward(h.total).unwrap().wrt(x).clone();
            for (a, b) in gh.data().iter().zip(gf.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixed_dynamics_mode_keeps_unit_weight() {
        let mut tape = Tape::<f64>::new();
        let losses = LossTriple {
            observation: scalar_loss(&mut tape, 4.0),
            reward: scalar_loss(&mut tape, 0.1),
            dynamics: scalar_loss(&mut tape, 2.0),
        };
        let mut scales = LogScales::<f64>::new();
        scales.set_log_scale(Task::Dynamics, 3.0);
        let bound = scales.params.bind(&mut tape, Binding::Tracked);
        let scheme = WeightingScheme::Harmony {
            rectified: true,
            learn_dynamics: false,
        };
        let c = combine(
            &mut tape,
            &losses,
            &scheme,
            Some(scales.vars(&bound)),
            &CombineAux::default(),
        )
        .unwrap();
        assert_eq!(c.weights[2], 1.0);
        let g = tape.backward(c.total).unwrap();
        assert_eq!(g.wrt(scales.vars(&bound)[2]).item(), 0.0);
    }

    #[test]
    fn uw_terms() {
        let mut tape = Tape::<f64>::new();
        let losses = LossTriple {
            observation: scalar_loss(&mut tape, 2.0),
            reward: scalar_loss(&mut tape, 0.0),
            dynamics: scalar_loss(&mut tape, 0.0),
        };
        let scales = LogScales::<f64>::new();
        let bound = scales.params.bind(&mut tape, Binding::Tracked);
        let total = uw_loss(&mut tape, &losses, scales.vars(&bound), 768).unwrap();
        assert_eq!(tape.item(total), 2.0);
        assert!(uw_loss(&mut tape, &losses, scales.vars(&bound), 0).is_err());
    }

    #[test]
    fn uw_with_unit_dims_is_the_harmonious_term() {
        let mut tape = Tape::<f64>::new();
        let losses = LossTriple {
            observation: scalar_loss(&mut tape, 1.7),
            reward: scalar_loss(&mut tape, 0.2),
            dynamics: scalar_loss(&mut tape, 3.0),
        };
        let mut scales = LogScales::<f64>::new();
        scales.set_log_scale(Task::Observation, 0.4);
        scales.set_log_scale(Task::Reward, -1.1);
        let bound = scales.params.bind(&mut tape, Binding::Tracked);
        let vars = scales.vars(&bound);
        let uw = uw_loss(&mut tape, &losses, vars, 1).unwrap();
        let h = combine(
            &mut tape,
            &losses,
            &WeightingScheme::harmony(false),
            Some(vars),
            &CombineAux::default(),
        )
        .unwrap();
        assert_eq!(tape.item(uw), tape.item(h.total));
    }

    #[test]
    fn dwa_symmetry_and_flattening() {
        let w = dwa_weights(&[[2.0, 4.0, 1.0], [1.0, 2.0, 0.5]], 2.0).unwrap();
        for v in w {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let w = dwa_weights(&[[1.0, 1.0, 1.0], [5.0, 0.1, 1.0]], f64::INFINITY).unwrap();
        assert_eq!(w, [1.0; 3]);
        let w = dwa_weights(&[[1.0, 1.0, 1.0], [5.0, 0.1, 1.0]], 1e9).unwrap();
        for v in w {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn dwa_direct_softmax() {
        let w = dwa_weights(&[[1.0, 1.0, 1.0], [1.0, 0.5, 1.0]], 2.0).unwrap();
        let e = [0.5f64.exp(), 0.25f64.exp(), 0.5f64.exp()];
        let z: f64 = e.iter().sum();
        for (got, ei) in w.iter().zip(e) {
            assert!((got - 3.0 * ei / z).abs() < 1e-12);
        }
    }

    #[test]
    fn dwa_zero_denominator_treated_as_unit_ratio() {
        let w = dwa_weights(&[[0.0, 1.0, 1.0], [3.0, 1.0, 1.0]], 1.0).unwrap();
        for v in w {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dwa_tracker_windows() {
        let mut t = DwaTracker::new(2);
        assert_eq!(t.weights(2.0).unwrap(), [1.0; 3]);
        for l in [[1.0, 1.0, 1.0]; 2] {
            t.record(l);
        }
        assert_eq!(t.weights(2.0).unwrap(), [1.0; 3]);
        t.record([1.0, 0.5, 1.0]);
        t.record([1.0, 0.5, 1.0]);
        let w = t.weights(2.0).unwrap();
        assert_eq!(w, dwa_weights(&[[1.0; 3], [1.0, 0.5, 1.0]], 2.0).unwrap());
    }

    #[test]
    fn clamp_bounds_log_scales() {
        let mut s = LogScales::<f64>::new();
        s.set_log_scale(Task::Reward, -40.0);
        s.set_log_scale(Task::Observation, 12.0);
        s.clamp();
        assert_eq!(s.log_scale(Task::Reward), LOG_SCALE_MIN);
        assert_eq!(s.log_scale(Task::Observation), LOG_SCALE_MAX);
        assert!(s.sigma(Task::Reward) > 0.0);
    }
}
