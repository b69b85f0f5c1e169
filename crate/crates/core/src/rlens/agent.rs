//! Actor and critic networks plus their update rules.
//!
//! The actor maps a state to logits (optionally perturbed by Gaussian
//! exploration noise) and squashes them through softmax, so the weight
//! vector always lies on the probability simplex. The critic scores a
//! (state, action) concatenation with a scalar.
//!
//! Updates follow the deterministic-policy form: the critic descends the
//! mean squared one-step TD error against the bootstrap target
//! `r + gamma * Q(s', actor(s'))` with no gradient through the target, and
//! the actor ascends the mean of `Q(s, actor(s))` through the frozen critic.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    Direction, MlpSpec, NodeId, Optimizer, ParamSet, Tape,
};
use crate::error::{Error, Result};

use super::buffer::Transition;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorCriticConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub batch: usize,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub steps: usize,
    pub capacity: usize,
    pub hidden: usize,
    /// Buffer must hold `warmup_batches * batch` transitions before updates.
    #[serde(default = "default_warmup")]
    pub warmup_batches: usize,
    /// One shared agent across farms (default), or one per farm.
    #[serde(default = "default_shared")]
    pub shared_agent: bool,
    #[serde(default)]
    pub reward: RewardKind,
}

fn default_warmup() -> usize {
    4
}
fn default_shared() -> bool {
    true
}

impl Default for ActorCriticConfig {
    fn default() -> Self {
        ActorCriticConfig {
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.9,
            batch: 32,
            sigma_start: 0.3,
            sigma_end: 0.01,
            steps: 20_000,
            capacity: 4096,
            hidden: 64,
            warmup_batches: 4,
            shared_agent: true,
            reward: RewardKind::NegativeAbsolute,
        }
    }
}

impl ActorCriticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.actor_lr > 0.0) {
            return Err(Error::config("agent.actor_lr", "must be positive"));
        }
        if !(self.critic_lr > 0.0) {
            return Err(Error::config("agent.critic_lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("agent.gamma", "must be in [0, 1)"));
        }
        if self.batch == 0 {
            return Err(Error::config("agent.batch", "must be positive"));
        }
        if self.sigma_start < 0.0 || self.sigma_end < 0.0 {
            return Err(Error::config("agent.sigma_start", "noise scales must be >= 0"));
        }
        if self.capacity == 0 {
            return Err(Error::config("agent.capacity", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("agent.hidden", "must be positive"));
        }
        if self.warmup_batches == 0 {
            return Err(Error::config("agent.warmup_batches", "must be positive"));
        }
        Ok(())
    }

    pub fn warmup_transitions(&self) -> usize {
        self.warmup_batches * self.batch
    }
}

/// Reward shape; both compare the ensemble forecast with the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    NegativeAbsolute,
    NegativeSquared,
}

impl Default for RewardKind {
    fn default() -> Self {
        RewardKind::NegativeAbsolute
    }
}

/// Network layout: actor `state -> hidden -> n_models`, critic
/// `state + n_models -> hidden -> 1`.
#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub state_len: usize,
    pub n_models: usize,
    pub hidden: usize,
    actor: MlpSpec,
    critic: MlpSpec,
}

impl AgentSpec {
    pub fn new(state_len: usize, n_models: usize, hidden: usize) -> Result<Self> {
        if state_len == 0 || n_models == 0 || hidden == 0 {
            return Err(Error::invalid("agent dims must be positive"));
        }
        Ok(AgentSpec {
            state_len,
            n_models,
            hidden,
            actor: MlpSpec::new("actor", vec![state_len, hidden, n_models])?,
            critic: MlpSpec::new("critic", vec![state_len + n_models, hidden, 1])?,
        })
    }

    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Result<AgentParams> {
        let mut actor = ParamSet::new();
        self.actor.init_into(&mut actor, rng)?;
        let mut critic = ParamSet::new();
        self.critic.init_into(&mut critic, rng)?;
        Ok(AgentParams { actor, critic })
    }

    /// Zero weights everywhere: the actor emits uniform weights and the
    /// critic scores everything zero.
    pub fn init_zero_params(&self) -> Result<AgentParams> {
        let mut actor = ParamSet::new();
        self.actor.init_zero_into(&mut actor)?;
        let mut critic = ParamSet::new();
        self.critic.init_zero_into(&mut critic)?;
        Ok(AgentParams { actor, critic })
    }
}

/// Actor parameters and critic parameters.
#[derive(Debug, Clone)]
pub struct AgentParams {
    pub actor: ParamSet,
    pub critic: ParamSet,
}

/// Record the actor forward pass; returns the simplex weight node.
/// `noise` perturbs the logits before the softmax (training only).
pub fn actor_forward_on(
    tape: &mut Tape,
    spec: &AgentSpec,
    actor: &ParamSet,
    state: &[f64],
    noise: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<NodeId> {
    if state.len() != spec.state_len {
        return Err(Error::DimMismatch {
            context: "actor state".into(),
            expected: spec.state_len,
            got: state.len(),
        });
    }
    let s = tape.input(state)?;
    let mut logits = spec.actor.forward(tape, actor, s)?;
    if let Some((rng, sigma)) = noise {
        if sigma > 0.0 {
            let eps: Vec<f64> = (0..spec.n_models)
                .map(|_| {
                    let draw: f64 = rng.sample(StandardNormal);
                    draw * sigma
                })
                .collect();
            let noise_node = tape.input(&eps)?;
            logits = tape.add(logits, noise_node)?;
        }
    }
    tape.softmax(logits)
}

/// Evaluate the actor to plain weights.
pub fn actor_forward(
    spec: &AgentSpec,
    actor: &ParamSet,
    state: &[f64],
    noise: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let node = actor_forward_on(&mut tape, spec, actor, state, noise)?;
    Ok(tape.value(node).to_vec())
}

/// Record the critic over explicit state values and an action node already
/// on the tape (used by the actor update, where gradients flow through the
/// action).
pub fn critic_forward_on(
    tape: &mut Tape,
    spec: &AgentSpec,
    critic: &ParamSet,
    state: &[f64],
    action: NodeId,
) -> Result<NodeId> {
    if state.len() != spec.state_len {
        return Err(Error::DimMismatch {
            context: "critic state".into(),
            expected: spec.state_len,
            got: state.len(),
        });
    }
    if tape.value(action).len() != spec.n_models {
        return Err(Error::DimMismatch {
            context: "critic action".into(),
            expected: spec.n_models,
            got: tape.value(action).len(),
        });
    }
    let s = tape.input(state)?;
    let joined = tape.concat(&[s, action])?;
    spec.critic.forward(tape, critic, joined)
}

/// Evaluate Q(s, a) to a plain scalar.
pub fn critic_forward(
    spec: &AgentSpec,
    critic: &ParamSet,
    state: &[f64],
    action: &[f64],
) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.input(action)?;
    let q = critic_forward_on(&mut tape, spec, critic, state, a)?;
    Ok(tape.scalar(q))
}

/// Convex combination of the pool forecasts under simplex weights.
pub fn ensemble_predict(forecasts: &[f64], weights: &[f64]) -> Result<f64> {
    if forecasts.len() != weights.len() {
        return Err(Error::DimMismatch {
            context: "ensemble weights".into(),
            expected: forecasts.len(),
            got: weights.len(),
        });
    }
    if forecasts.is_empty() {
        return Err(Error::invalid("empty forecast pool"));
    }
    Ok(forecasts.iter().zip(weights).map(|(f, w)| f * w).sum())
}

/// Reward from comparing the ensemble forecast with the truth; zero error
/// is the maximum.
pub fn compute_reward(forecast: f64, truth: f64, kind: RewardKind) -> f64 {
    let err = forecast - truth;
    match kind {
        RewardKind::NegativeAbsolute => -err.abs(),
        RewardKind::NegativeSquared => -err * err,
    }
}

/// One descent step on the mean squared TD error over the batch; returns
/// the pre-step loss. Targets are evaluated forward-only, so no gradient
/// flows through them.
pub fn critic_update(
    batch: &[&Transition],
    spec: &AgentSpec,
    params: &mut AgentParams,
    optimizer: &mut Optimizer,
    gamma: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("critic update needs a non-empty batch"));
    }
    let mut targets = Vec::with_capacity(batch.len());
    for t in batch {
        let next_state = t.next_state.full();
        let next_action = actor_forward(spec, &params.actor, &next_state, None)?;
        let q_next = critic_forward(spec, &params.critic, &next_state, &next_action)?;
        targets.push(t.reward + gamma * q_next);
    }
    let mut tape = Tape::new();
    let mut acc: Option<NodeId> = None;
    for (t, &target) in batch.iter().zip(&targets) {
        let a = tape.input(&t.action)?;
        let q = critic_forward_on(&mut tape, spec, &params.critic, &t.state.full(), a)?;
        let z = tape.scalar_input(target)?;
        let diff = tape.sub(q, z)?;
        let sq = tape.mul(diff, diff)?;
        acc = Some(match acc {
            None => sq,
            Some(prev) => tape.add(prev, sq)?,
        });
    }
    let loss = tape.scale(acc.expect("non-empty batch"), 1.0 / batch.len() as f64);
    let loss_value = tape.scalar(loss);
    let grads = tape.backward(loss, &[&params.critic])?;
    optimizer.step(&mut params.critic, &grads, Direction::Descent)?;
    Ok(loss_value)
}

/// One ascent step on the mean of Q(s, actor(s)); the critic is read but
/// not updated. Returns the pre-step objective value.
pub fn actor_update(
    batch: &[&Transition],
    spec: &AgentSpec,
    params: &mut AgentParams,
    optimizer: &mut Optimizer,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("actor update needs a non-empty batch"));
    }
    let mut tape = Tape::new();
    let mut acc: Option<NodeId> = None;
    for t in batch {
        let state = t.state.full();
        let a = actor_forward_on(&mut tape, spec, &params.actor, &state, None)?;
        let q = critic_forward_on(&mut tape, spec, &params.critic, &state, a)?;
        acc = Some(match acc {
            None => q,
            Some(prev) => tape.add(prev, q)?,
        });
    }
    let objective = tape.scale(acc.expect("non-empty batch"), 1.0 / batch.len() as f64);
    let value = tape.scalar(objective);
    let grads = tape.backward(objective, &[&params.actor, &params.critic])?;
    // only the actor moves; critic gradients are computed and dropped
    optimizer.step(&mut params.actor, &grads, Direction::Ascent)?;
    Ok(value)
}

/// Shannon entropy of a weight vector, for the training log.
pub fn weight_entropy(weights: &[f64]) -> f64 {
    -weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * w.ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{OptimConfig, Vec1};
    use crate::embedding::StateEmbedding;
    use crate::seed;

    fn spec(state_len: usize, n: usize) -> AgentSpec {
        AgentSpec::new(state_len, n, 16).unwrap()
    }

    fn state_of(values: &[f64]) -> StateEmbedding {
        StateEmbedding {
            stse: Vec1::new(values.to_vec()).unwrap(),
            mle: Vec1::new(vec![]).unwrap(),
            farm_id: "a".into(),
            t_index: 0,
        }
    }

    #[test]
    fn zero_actor_is_uniform() {
        let spec = spec(3, 4);
        let params = spec.init_zero_params().unwrap();
        let w = actor_forward(&spec, &params.actor, &[0.2, -0.4, 0.9], None).unwrap();
        for v in w {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn actor_output_sums_to_one_for_random_states() {
        let spec = spec(5, 4);
        let mut rng = seed::rng(seed::derive(51, "actor-sum"));
        let params = spec.init_params(&mut rng).unwrap();
        let mut noise_rng = seed::rng(seed::derive(51, "actor-noise"));
        for i in 0..1000 {
            use rand::Rng;
            let state: Vec<f64> = (0..5).map(|_| noise_rng.random_range(-2.0..2.0)).collect();
            // alternate between noiseless and noisy passes
            let w = if i % 2 == 0 {
                actor_forward(&spec, &params.actor, &state, None).unwrap()
            } else {
                actor_forward(&spec, &params.actor, &state, Some((&mut noise_rng, 0.5))).unwrap()
            };
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn noiseless_actor_is_deterministic() {
        let spec = spec(4, 3);
        let mut rng = seed::rng(seed::derive(52, "actor-det"));
        let params = spec.init_params(&mut rng).unwrap();
        let state = [0.1, 0.2, 0.3, 0.4];
        let a = actor_forward(&spec, &params.actor, &state, None).unwrap();
        let b = actor_forward(&spec, &params.actor, &state, None).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn zero_critic_scores_zero() {
        let spec = spec(3, 2);
        let params = spec.init_zero_params().unwrap();
        let q = critic_forward(&spec, &params.critic, &[0.5, -0.1, 2.0], &[0.3, 0.7]).unwrap();
        assert_eq!(q, 0.0);
    }

    #[test]
    fn critic_is_pure_given_frozen_params() {
        let spec = spec(3, 2);
        let mut rng = seed::rng(seed::derive(53, "critic-det"));
        let params = spec.init_params(&mut rng).unwrap();
        let q1 = critic_forward(&spec, &params.critic, &[0.1, 0.2, 0.3], &[0.6, 0.4]).unwrap();
        let q2 = critic_forward(&spec, &params.critic, &[0.1, 0.2, 0.3], &[0.6, 0.4]).unwrap();
        assert_eq!(q1.to_bits(), q2.to_bits());
    }

    #[test]
    fn ensemble_one_hot_selects_exactly() {
        let forecasts = [0.12, 0.987, 0.4];
        let y = ensemble_predict(&forecasts, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(y.to_bits(), 0.987f64.to_bits());
    }

    #[test]
    fn ensemble_arithmetic() {
        let y = ensemble_predict(&[0.2, 0.4], &[0.5, 0.5]).unwrap();
        assert!((y - 0.3).abs() < 1e-15);
    }

    #[test]
    fn ensemble_is_convex_over_random_draws() {
        use rand::Rng;
        let mut rng = seed::rng(seed::derive(54, "convexity"));
        for _ in 0..10_000 {
            let n = rng.random_range(1..=6);
            let forecasts: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
            let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let weights: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            let y = ensemble_predict(&forecasts, &weights).unwrap();
            let lo = forecasts.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = forecasts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        }
    }

    #[test]
    fn reward_examples() {
        assert_eq!(compute_reward(0.5, 0.5, RewardKind::NegativeAbsolute), 0.0);
        assert!(
            (compute_reward(0.3, 0.5, RewardKind::NegativeAbsolute) + 0.2).abs() < 1e-15
        );
        assert!(
            (compute_reward(0.3, 0.5, RewardKind::NegativeSquared) + 0.04).abs() < 1e-15
        );
    }

    #[test]
    fn reward_ordering_matches_negated_absolute_error() {
        use rand::Rng;
        let mut rng = seed::rng(seed::derive(55, "reward-rank"));
        let truth = 0.5;
        let mut pairs: Vec<(f64, f64)> = (0..64)
            .map(|_| {
                let y = rng.random_range(0.0..1.0);
                (compute_reward(y, truth, RewardKind::NegativeAbsolute), (y - truth as f64).abs())
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(w[0].1 >= w[1].1 - 1e-15, "higher reward must mean lower error");
        }
    }

    fn one_transition(state: &[f64], action: Vec<f64>, reward: f64) -> Transition {
        Transition {
            state: state_of(state),
            action,
            reward,
            next_state: state_of(state),
        }
    }

    #[test]
    fn critic_fixed_point_at_gamma_zero() {
        // zero critic, zero rewards: the TD loss is already zero, so a plain
        // gradient step moves nothing.
        let spec = spec(2, 2);
        let mut params = spec.init_zero_params().unwrap();
        let before = params.critic.to_text();
        let mut opt = Optimizer::new(OptimConfig::plain(0.1)).unwrap();
        let t = one_transition(&[0.1, 0.2], vec![0.5, 0.5], 0.0);
        let loss = critic_update(&[&t], &spec, &mut params, &mut opt, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        // version bumps, values do not
        assert_eq!(params.critic.to_text(), before);
    }

    #[test]
    fn single_transition_td_loss_matches_hand_computation() {
        let spec = spec(2, 2);
        let mut rng = seed::rng(seed::derive(56, "td-hand"));
        let mut params = spec.init_params(&mut rng).unwrap();
        let t = one_transition(&[0.3, -0.6], vec![0.7, 0.3], -0.25);
        let gamma = 0.9;
        // hand computation with forward-only evaluations
        let next_state = t.next_state.full();
        let a_next = actor_forward(&spec, &params.actor, &next_state, None).unwrap();
        let q_next = critic_forward(&spec, &params.critic, &next_state, &a_next).unwrap();
        let target = t.reward + gamma * q_next;
        let q = critic_forward(&spec, &params.critic, &t.state.full(), &t.action).unwrap();
        let expected_loss = (q - target) * (q - target);
        let mut opt = Optimizer::new(OptimConfig::plain(1e-3)).unwrap();
        let loss = critic_update(&[&t], &spec, &mut params, &mut opt, gamma).unwrap();
        assert!((loss - expected_loss).abs() < 1e-10, "{loss} vs {expected_loss}");
    }

    #[test]
    fn repeated_critic_updates_drive_td_loss_down() {
        let spec = spec(2, 2);
        let mut rng = seed::rng(seed::derive(57, "td-converge"));
        let mut params = spec.init_params(&mut rng).unwrap();
        let t = one_transition(&[0.4, 0.1], vec![0.2, 0.8], -0.3);
        let mut opt = Optimizer::new(OptimConfig::plain(0.05)).unwrap();
        // gamma 0 freezes the target, making the descent monotone
        let mut prev = f64::INFINITY;
        let mut last = f64::NAN;
        for _ in 0..400 {
            last = critic_update(&[&t], &spec, &mut params, &mut opt, 0.0).unwrap();
            assert!(last <= prev + 1e-12, "TD loss rose: {last} > {prev}");
            prev = last;
        }
        assert!(last < 1e-6, "TD loss did not approach zero: {last}");
    }

    #[test]
    fn zero_critic_leaves_actor_unchanged() {
        let spec = spec(2, 2);
        let mut rng = seed::rng(seed::derive(58, "actor-zero-critic"));
        let actor_init = spec.init_params(&mut rng).unwrap().actor;
        let mut params = AgentParams {
            actor: actor_init.clone(),
            critic: spec.init_zero_params().unwrap().critic,
        };
        let before = params.actor.to_text();
        let mut opt = Optimizer::new(OptimConfig::plain(0.1)).unwrap();
        let t = one_transition(&[0.5, 0.5], vec![0.5, 0.5], 0.0);
        actor_update(&[&t], &spec, &mut params, &mut opt).unwrap();
        assert_eq!(params.actor.to_text(), before);
    }

    #[test]
    fn bandit_actor_converges_to_preferred_model() {
        // Critic hand-built to approximate Q = a[0]: with a small gain g the
        // tanh hidden layer is near-linear, and the output scales it back.
        let spec = AgentSpec::new(2, 2, 4).unwrap();
        let gain = 1e-3;
        let mut critic = ParamSet::new();
        // hidden: h0 = tanh(g * a0); other units dead
        let mut w0 = vec![0.0; 4 * 4]; // hidden x (state 2 + action 2)
        w0[2] = gain; // unit 0 reads a[0]
        critic.insert_matrix("critic.w0", 4, 4, w0).unwrap();
        critic.insert_vector_zero("critic.b0", 4).unwrap();
        let mut w1 = vec![0.0; 4];
        w1[0] = 1.0 / gain;
        critic.insert_matrix("critic.w1", 1, 4, w1).unwrap();
        critic.insert_vector_zero("critic.b1", 1).unwrap();

        let mut rng = seed::rng(seed::derive(59, "bandit"));
        let actor = {
            let mut p = AgentSpec::new(2, 2, 4).unwrap().init_params(&mut rng).unwrap();
            std::mem::swap(&mut p.critic, &mut critic);
            p
        };
        let mut params = actor;
        let mut opt = Optimizer::new(crate::diffcore::OptimConfig::adam(0.05)).unwrap();
        let t = one_transition(&[0.2, -0.3], vec![0.5, 0.5], 0.0);
        for _ in 0..300 {
            actor_update(&[&t], &spec, &mut params, &mut opt).unwrap();
        }
        let w = actor_forward(&spec, &params.actor, &t.state.full(), None).unwrap();
        assert!(w[0] > 0.95, "weight on model 0 should approach 1, got {}", w[0]);
    }

    #[test]
    fn entropy_of_uniform_weights() {
        let h = weight_entropy(&[0.25; 4]);
        assert!((h - 4.0f64.ln()).abs() < 1e-12);
        assert_eq!(weight_entropy(&[1.0, 0.0]), 0.0);
    }
}
