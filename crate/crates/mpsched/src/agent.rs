//! The scheduling agent: state encoding, the discrete action space over
//! (class, path priority), the bandwidth-economy reward, the replay buffer
//! and the actor-critic learning step.
//!
//! The actor maps the per-path loss state to a softmax over all 42 actions
//! (7 classes x 6 priority orderings). The critic scores (state, action)
//! pairs, where the action enters as its derived vector
//! `[f_bar, w_1, w_2, w_3]`; a slowly tracking target critic stabilises the
//! TD targets.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::PathReport;
use crate::neural::{
    adam_step, backward, backward_from_logits, forward, output, soft_update, Activation,
    AdamHyper, AdamState, Gradients, MlpParams,
};
use crate::oracle::analytic_info_loss;
use crate::rng::{stream, SimRng};
use crate::wrr::{PathWeights, SchedulingClass, PATHS};
use crate::{Error, Result};

/// All priority orderings of three paths, lexicographic, highest priority
/// first.
pub const PERMS: [[usize; PATHS]; 6] =
    [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// 7 scheduling classes x 6 priority orderings.
pub const ACTION_SPACE: usize = SchedulingClass::ALL.len() * PERMS.len();

/// Loss rates closer than this are treated as tied when comparing path
/// orderings.
pub const PLR_TIE_EPS: f64 = 1e-6;

/// One of the 42 discrete actions, stored as its index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action(usize);

impl Action {
    pub fn from_index(index: usize) -> Result<Self> {
        if index >= ACTION_SPACE {
            return Err(Error::Config(format!(
                "action index {index} out of range 0..{ACTION_SPACE}"
            )));
        }
        Ok(Self(index))
    }

    pub fn from_parts(class: SchedulingClass, perm_index: usize) -> Self {
        let class_index = SchedulingClass::ALL.iter().position(|&c| c == class).expect("listed");
        Self(class_index * PERMS.len() + perm_index)
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn class(self) -> SchedulingClass {
        SchedulingClass::ALL[self.0 / PERMS.len()]
    }

    pub fn perm_index(self) -> usize {
        self.0 % PERMS.len()
    }

    pub fn perm(self) -> [usize; PATHS] {
        PERMS[self.perm_index()]
    }

    pub fn weights(self) -> PathWeights {
        PathWeights::from_permutation(&self.perm()).expect("valid permutation")
    }

    pub fn f_bar(self) -> f64 {
        self.class().avg_redundancy()
    }

    /// The action as the vector `[f_bar, w_1, ..., w_m]`.
    pub fn view(self) -> [f64; PATHS + 1] {
        let weights = self.weights();
        let mut v = [self.f_bar(), 0.0, 0.0, 0.0];
        for i in 0..PATHS {
            v[i + 1] = f64::from(weights.get(i));
        }
        v
    }

    /// Priority ordering as compact digits, highest priority first.
    pub fn perm_string(self) -> String {
        self.perm().iter().map(|p| char::from(b'0' + *p as u8)).collect()
    }
}

/// The observed state: the latest per-path loss rate estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct State(pub Vec<f64>);

/// Copy the per-path loss rates out of a report, unchanged.
pub fn encode_state(report: &PathReport) -> State {
    State(report.per_path_plr.clone())
}

/// One experience tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    pub reward: i32,
    pub next_state: State,
}

/// Fixed-capacity ring buffer; sampling is only allowed once full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be at least 1".into()));
        }
        Ok(Self { data: Vec::with_capacity(capacity), capacity, cursor: 0 })
    }

    pub fn push(&mut self, transition: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(transition);
        } else {
            self.data[self.cursor] = transition;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.data.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.data[index]
    }
}

/// Reward-rule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Loss threshold the information loss rate is compared against.
    pub phi_th: f64,
    /// Discount factor.
    pub gamma: f64,
    /// Information packets per cycle, used when predicting what a cheaper
    /// class would have achieved.
    pub k: usize,
}

impl RewardParams {
    pub fn new(phi_th: f64, gamma: f64, k: usize) -> Result<Self> {
        if !(phi_th > 0.0 && phi_th < 1.0) {
            return Err(Error::Config(format!("phi_th must lie in (0, 1), got {phi_th}")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if k < 4 || k % 4 != 0 {
            return Err(Error::Config(format!("K must be a positive multiple of 4, got {k}")));
        }
        Ok(Self { phi_th, gamma, k })
    }
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { phi_th: 0.005, gamma: 0.9, k: 100 }
    }
}

/// True iff the weight ordering is consistent with the loss ordering: every
/// path with a strictly lower loss rate (beyond `eps`) carries the strictly
/// higher weight. Tied loss rates accept either order.
pub fn ordering_consistent(weights: &PathWeights, plrs: &[f64], eps: f64) -> bool {
    for i in 0..plrs.len() {
        for j in 0..plrs.len() {
            if plrs[i] < plrs[j] - eps && weights.get(i) <= weights.get(j) {
                return false;
            }
        }
    }
    true
}

/// The immediate reward for one report interval.
///
/// Penalty (-1) when the observed information loss rate exceeds the
/// threshold, when the weight ordering contradicts the observed loss
/// ordering, or when a strictly cheaper class would have been predicted to
/// stay under the threshold on the reported loss rates. Incentive (+1)
/// otherwise. The bandwidth clause is evaluated against that feasibility
/// prediction, so `_prev_action` is accepted for completeness but does not
/// enter the rule.
pub fn reward(
    report: &PathReport,
    action: Action,
    _prev_action: Option<Action>,
    params: &RewardParams,
) -> i32 {
    if report.info_loss_rate > params.phi_th {
        return -1;
    }
    if !ordering_consistent(&action.weights(), &report.per_path_plr, PLR_TIE_EPS) {
        return -1;
    }
    let f_bar = action.f_bar();
    for class in SchedulingClass::ALL {
        if class.avg_redundancy() >= f_bar {
            continue;
        }
        for perm_index in 0..PERMS.len() {
            let candidate = Action::from_parts(class, perm_index);
            let predicted =
                analytic_info_loss(class, &candidate.weights(), &report.per_path_plr, params.k)
                    .expect("class table ratios are integral for K % 4 == 0");
            if predicted <= params.phi_th {
                return -1;
            }
        }
    }
    1
}

/// Discounted sum of a reward trace: `sum over t of gamma^t * r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut factor = 1.0;
    let mut total = 0.0;
    for &r in rewards {
        total += factor * r;
        factor *= gamma;
    }
    total
}

/// Learning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentHyper {
    /// Target-critic blend: `target = alpha * target + (1 - alpha) * critic`.
    pub alpha: f64,
    pub buffer_capacity: usize,
    pub minibatch: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
}

impl Default for AgentHyper {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            buffer_capacity: 32,
            minibatch: 16,
            actor_lr: 0.05,
            critic_lr: 0.02,
            hidden: vec![64, 64],
        }
    }
}

impl AgentHyper {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.minibatch == 0 {
            return Err(Error::Config("minibatch must be at least 1".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::Config("buffer capacity must be at least 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden sizes must be non-empty and positive".into()));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// What a call to [`Agent::learn_step`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnOutcome {
    /// The buffer is not full yet; no parameters were touched.
    Warmup { filled: usize, capacity: usize },
    Updated(LearnDiagnostics),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnDiagnostics {
    pub td_error_mean: f64,
    pub critic_loss: f64,
}

/// Softmax policy metadata for a selected action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionInfo {
    pub log_prob: f64,
    pub entropy: f64,
}

/// Per-sample TD quantities for a minibatch.
#[derive(Debug, Clone)]
pub struct BatchEval {
    pub targets: Vec<f64>,
    pub q_values: Vec<f64>,
    pub deltas: Vec<f64>,
}

/// The actor-critic decision core. One agent per simulation run.
pub struct Agent {
    pub actor: MlpParams,
    pub critic: MlpParams,
    pub target_critic: MlpParams,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub buffer: ReplayBuffer,
    pub hyper: AgentHyper,
    pub reward_params: RewardParams,
    action_rng: SimRng,
    replay_rng: SimRng,
}

impl Agent {
    pub fn new(hyper: AgentHyper, reward_params: RewardParams, master_seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut actor_sizes = vec![PATHS];
        actor_sizes.extend(&hyper.hidden);
        actor_sizes.push(ACTION_SPACE);
        let mut critic_sizes = vec![2 * PATHS + 1];
        critic_sizes.extend(&hyper.hidden);
        critic_sizes.push(1);

        let mut actor_rng = stream(master_seed, "actor-init", 0);
        let actor = MlpParams::new(&actor_sizes, Activation::Softmax, &mut actor_rng)?;
        let mut critic_rng = stream(master_seed, "critic-init", 0);
        let critic = MlpParams::new(&critic_sizes, Activation::Linear, &mut critic_rng)?;
        let target_critic = critic.clone();

        let actor_opt = AdamState::new(&actor, AdamHyper::with_learning_rate(hyper.actor_lr));
        let critic_opt = AdamState::new(&critic, AdamHyper::with_learning_rate(hyper.critic_lr));
        let buffer = ReplayBuffer::new(hyper.buffer_capacity)?;
        Ok(Self {
            actor,
            critic,
            target_critic,
            actor_opt,
            critic_opt,
            buffer,
            hyper,
            reward_params,
            action_rng: stream(master_seed, "action-sample", 0),
            replay_rng: stream(master_seed, "replay-sample", 0),
        })
    }

    /// Action probabilities under the current policy.
    pub fn policy(&self, state: &State) -> Result<Vec<f64>> {
        output(&self.actor, &state.0)
    }

    /// Sample an action from the softmax policy.
    pub fn select_action(&mut self, state: &State) -> Result<(Action, SelectionInfo)> {
        let probs = self.policy(state)?;
        let draw: f64 = self.action_rng.gen();
        let mut cumulative = 0.0;
        let mut chosen = None;
        for (i, &p) in probs.iter().enumerate() {
            cumulative += p;
            if draw < cumulative {
                chosen = Some(i);
                break;
            }
        }
        // Guard against accumulated rounding at the top of the CDF.
        let index = chosen.unwrap_or_else(|| {
            probs.iter().rposition(|&p| p > 0.0).expect("softmax probabilities sum to 1")
        });
        let entropy = -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
        let info = SelectionInfo { log_prob: probs[index].max(1e-300).ln(), entropy };
        Ok((Action(index), info))
    }

    pub fn store(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    fn critic_input(state: &State, action: Action) -> Vec<f64> {
        let mut input = state.0.clone();
        // Scale the action view down to the order of magnitude of the
        // loss-rate inputs.
        for v in action.view() {
            input.push(v / PATHS as f64);
        }
        input
    }

    /// Critic estimate of one (state, action) pair.
    pub fn critic_value(&self, state: &State, action: Action) -> Result<f64> {
        Ok(output(&self.critic, &Self::critic_input(state, action))?[0])
    }

    /// Expected target-critic value at `state` under the current policy:
    /// the TD bootstrap term.
    pub fn expected_target_value(&self, state: &State) -> Result<f64> {
        let probs = self.policy(state)?;
        let mut value = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let q = output(&self.target_critic, &Self::critic_input(state, Action(i)))?[0];
            value += p * q;
        }
        Ok(value)
    }

    /// TD targets, critic values and TD errors for a batch.
    pub fn evaluate_batch(&self, batch: &[Transition]) -> Result<BatchEval> {
        let gamma = self.reward_params.gamma;
        let mut bootstrap: HashMap<Vec<u64>, f64> = HashMap::new();
        let mut targets = Vec::with_capacity(batch.len());
        let mut q_values = Vec::with_capacity(batch.len());
        let mut deltas = Vec::with_capacity(batch.len());
        for transition in batch {
            let key: Vec<u64> = transition.next_state.0.iter().map(|v| v.to_bits()).collect();
            let value = match bootstrap.get(&key) {
                Some(&v) => v,
                None => {
                    let v = self.expected_target_value(&transition.next_state)?;
                    bootstrap.insert(key, v);
                    v
                }
            };
            let target = f64::from(transition.reward) + gamma * value;
            let q = self.critic_value(&transition.state, transition.action)?;
            targets.push(target);
            q_values.push(q);
            deltas.push(target - q);
        }
        Ok(BatchEval { targets, q_values, deltas })
    }

    /// Mean squared TD error over the batch and its gradient with respect
    /// to the critic parameters. The targets are held fixed.
    pub fn critic_grads(&self, batch: &[Transition], eval: &BatchEval) -> Result<(f64, Gradients)> {
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.critic);
        let mut loss = 0.0;
        for (transition, &delta) in batch.iter().zip(&eval.deltas) {
            loss += delta * delta / n;
            let input = Self::critic_input(&transition.state, transition.action);
            let (_, cache) = forward(&self.critic, &input)?;
            let sample = backward(&self.critic, &cache, &[-2.0 * delta / n])?;
            grads.accumulate(&sample)?;
        }
        Ok((loss, grads))
    }

    /// Policy loss `-(1/n) sum delta * ln pi(a|s)` and its gradient with
    /// respect to the actor parameters; the TD errors enter as constants.
    pub fn actor_grads(&self, batch: &[Transition], deltas: &[f64]) -> Result<(f64, Gradients)> {
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.actor);
        let mut loss = 0.0;
        for (transition, &delta) in batch.iter().zip(deltas) {
            let (probs, cache) = forward(&self.actor, &transition.state.0)?;
            let chosen = transition.action.index();
            loss -= delta * probs[chosen].max(1e-300).ln() / n;
            // d/d logit_j of -delta * ln pi(a|s) = -delta * (1[j == a] - pi_j)
            let mut d_logits = vec![0.0; probs.len()];
            for (j, &p) in probs.iter().enumerate() {
                let indicator = if j == chosen { 1.0 } else { 0.0 };
                d_logits[j] = -delta * (indicator - p) / n;
            }
            let sample = backward_from_logits(&self.actor, &cache, &d_logits)?;
            grads.accumulate(&sample)?;
        }
        Ok((loss, grads))
    }

    /// One TD learning step: a no-op until the buffer is full, then one
    /// critic update, one actor update and a target-critic soft update on a
    /// minibatch drawn uniformly with replacement.
    pub fn learn_step(&mut self) -> Result<LearnOutcome> {
        if !self.buffer.is_full() {
            return Ok(LearnOutcome::Warmup {
                filled: self.buffer.len(),
                capacity: self.buffer.capacity(),
            });
        }
        let batch: Vec<Transition> = (0..self.hyper.minibatch)
            .map(|_| self.buffer.get(self.replay_rng.gen_range(0..self.buffer.len())).clone())
            .collect();
        let eval = self.evaluate_batch(&batch)?;
        let (critic_loss, critic_grads) = self.critic_grads(&batch, &eval)?;
        let (_, actor_grads) = self.actor_grads(&batch, &eval.deltas)?;
        adam_step(&mut self.critic, &mut self.critic_opt, &critic_grads)?;
        adam_step(&mut self.actor, &mut self.actor_opt, &actor_grads)?;
        soft_update(&mut self.target_critic, &self.critic, self.hyper.alpha)?;
        let td_error_mean = eval.deltas.iter().sum::<f64>() / eval.deltas.len() as f64;
        Ok(LearnOutcome::Updated(LearnDiagnostics { td_error_mean, critic_loss }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::optimal_action;

    fn report_with(plrs: &[f64], info_loss_rate: f64) -> PathReport {
        PathReport {
            interval_index: 0,
            per_path_plr: plrs.to_vec(),
            e2e_plr: plrs.iter().sum::<f64>() / plrs.len() as f64,
            per_path_sent: vec![1000; plrs.len()],
            per_path_lost: plrs.iter().map(|p| (p * 1000.0) as u64).collect(),
            info_packets: 1000,
            info_lost: (info_loss_rate * 1000.0) as u64,
            info_loss_rate,
            transmitted: 1000 * plrs.len() as u64,
        }
    }

    #[test]
    fn action_codec_is_a_bijection() {
        let mut seen = std::collections::HashSet::new();
        for index in 0..ACTION_SPACE {
            let action = Action::from_index(index).unwrap();
            assert_eq!(Action::from_parts(action.class(), action.perm_index()), action);
            assert!(seen.insert((action.class(), action.perm())));
        }
        assert_eq!(seen.len(), 42);
        assert!(Action::from_index(ACTION_SPACE).is_err());
    }

    #[test]
    fn action_view_carries_f_bar_and_weights() {
        let action = Action::from_parts(SchedulingClass::F, 5); // perm (2,1,0)
        assert_eq!(action.view(), [2.5, 1.0, 2.0, 3.0]);
        assert_eq!(action.perm_string(), "210");
    }

    #[test]
    fn encode_state_copies_the_report_plrs() {
        let report = report_with(&[0.01, 0.03, 0.05], 0.0);
        assert_eq!(encode_state(&report).0, vec![0.01, 0.03, 0.05]);
        let idle = report_with(&[0.0, 0.0, 0.0], 0.0);
        assert_eq!(encode_state(&idle).0, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn reward_penalises_loss_above_threshold() {
        let params = RewardParams::default();
        let report = report_with(&[0.02, 0.02, 0.02], 0.02);
        let action = Action::from_parts(SchedulingClass::G, 0);
        assert_eq!(reward(&report, action, None, &params), -1);
    }

    #[test]
    fn reward_penalises_wasted_bandwidth() {
        // No losses anywhere: the cheapest class prediction is 0, so the
        // full-replication class is over-provisioned.
        let params = RewardParams::default();
        let report = report_with(&[0.0, 0.0, 0.0], 0.0);
        let action = Action::from_parts(SchedulingClass::G, 0);
        assert_eq!(reward(&report, action, None, &params), -1);
        let minimal = Action::from_parts(SchedulingClass::A, 0);
        assert_eq!(reward(&report, minimal, None, &params), 1);
    }

    #[test]
    fn reward_penalises_inconsistent_ordering() {
        let params = RewardParams::default();
        // Heavy losses: only full replication stays feasible (every pair
        // product exceeds the threshold), so the bandwidth clause stays
        // quiet and ordering decides.
        let plrs = [0.12, 0.1, 0.3];
        let predicted = analytic_info_loss(
            SchedulingClass::G,
            &Action::from_parts(SchedulingClass::G, 0).weights(),
            &plrs,
            100,
        )
        .unwrap();
        assert!(predicted <= params.phi_th);
        let report = report_with(&plrs, predicted);
        // Path 1 has the lowest loss: priority must start with it.
        let good = Action::from_parts(SchedulingClass::G, 2); // perm (1,0,2)
        let bad = Action::from_parts(SchedulingClass::G, 0); // perm (0,1,2)
        assert_eq!(reward(&report, good, None, &params), 1);
        assert_eq!(reward(&report, bad, None, &params), -1);
    }

    #[test]
    fn reward_accepts_the_minimal_feasible_action() {
        let params = RewardParams::default();
        let plrs = [0.01, 0.03, 0.05];
        let best = optimal_action(&plrs, params.phi_th, params.k).unwrap();
        let predicted =
            analytic_info_loss(best.class(), &best.weights(), &plrs, params.k).unwrap();
        let report = report_with(&plrs, predicted);
        assert_eq!(reward(&report, best, None, &params), 1);
    }

    #[test]
    fn reward_is_pure() {
        let params = RewardParams::default();
        let report = report_with(&[0.01, 0.01, 0.01], 0.002);
        let action = Action::from_parts(SchedulingClass::C, 0);
        let first = reward(&report, action, None, &params);
        for _ in 0..5 {
            assert_eq!(reward(&report, action, None, &params), first);
        }
    }

    #[test]
    fn ordering_consistency_accepts_ties() {
        let weights = PathWeights::from_permutation(&[0, 1, 2]).unwrap();
        assert!(ordering_consistent(&weights, &[0.01, 0.02, 0.03], PLR_TIE_EPS));
        assert!(!ordering_consistent(&weights, &[0.03, 0.02, 0.01], PLR_TIE_EPS));
        // All tied: any ordering goes.
        let reversed = PathWeights::from_permutation(&[2, 1, 0]).unwrap();
        assert!(ordering_consistent(&reversed, &[0.01, 0.01, 0.01], PLR_TIE_EPS));
    }

    #[test]
    fn discounted_return_basics() {
        assert_eq!(discounted_return(&[1.0], 0.5), 1.0);
        assert!((discounted_return(&[1.0, 1.0], 0.9) - 1.9).abs() < 1e-15);
        let all_penalty = vec![-1.0; 500];
        assert!((discounted_return(&all_penalty, 0.9) + 10.0).abs() < 1e-12);
    }

    #[test]
    fn replay_buffer_is_a_bounded_ring() {
        let mut buffer = ReplayBuffer::new(4).unwrap();
        let t = |r: i32| Transition {
            state: State(vec![0.0; 3]),
            action: Action(0),
            reward: r,
            next_state: State(vec![0.0; 3]),
        };
        for i in 0..10 {
            buffer.push(t(i));
            assert!(buffer.len() <= 4);
        }
        assert!(buffer.is_full());
        let stored: Vec<i32> = (0..4).map(|i| buffer.get(i).reward).collect();
        let mut sorted = stored.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![6, 7, 8, 9]);
        assert!(ReplayBuffer::new(0).is_err());
    }

    fn dummy_transition(reward: i32) -> Transition {
        Transition {
            state: State(vec![0.01, 0.02, 0.03]),
            action: Action(5),
            reward,
            next_state: State(vec![0.01, 0.02, 0.03]),
        }
    }

    #[test]
    fn learn_step_is_a_noop_until_the_buffer_is_full() {
        let mut agent = Agent::new(AgentHyper::default(), RewardParams::default(), 3).unwrap();
        let actor_before = agent.actor.flat_params();
        let critic_before = agent.critic.flat_params();
        for _ in 0..agent.hyper.buffer_capacity - 1 {
            agent.store(dummy_transition(1));
            match agent.learn_step().unwrap() {
                LearnOutcome::Warmup { .. } => {}
                other => panic!("expected warmup, got {other:?}"),
            }
        }
        assert_eq!(agent.actor.flat_params(), actor_before);
        assert_eq!(agent.critic.flat_params(), critic_before);
        agent.store(dummy_transition(1));
        assert!(matches!(agent.learn_step().unwrap(), LearnOutcome::Updated(_)));
    }

    #[test]
    fn zero_discount_with_exact_critic_gives_zero_td_error() {
        let hyper = AgentHyper { buffer_capacity: 4, minibatch: 4, ..Default::default() };
        let params = RewardParams { gamma: 0.0, ..Default::default() };
        let mut agent = Agent::new(hyper, params, 1).unwrap();
        // Craft a critic that outputs exactly 1 everywhere.
        let mut critic = MlpParams::zeros(&[7, 4, 1], Activation::Linear).unwrap();
        critic.set_bias(1, 0, 1.0);
        agent.critic = critic.clone();
        agent.target_critic = critic.clone();
        agent.critic_opt = AdamState::new(&agent.critic, AdamHyper::default());
        let critic_before = agent.critic.flat_params();
        for _ in 0..4 {
            agent.store(dummy_transition(1));
        }
        match agent.learn_step().unwrap() {
            LearnOutcome::Updated(diag) => {
                assert_eq!(diag.td_error_mean, 0.0);
                assert_eq!(diag.critic_loss, 0.0);
            }
            other => panic!("expected update, got {other:?}"),
        }
        assert_eq!(agent.critic.flat_params(), critic_before);
    }

    #[test]
    fn positive_td_error_increases_the_chosen_probability() {
        let mut agent = Agent::new(AgentHyper::default(), RewardParams::default(), 17).unwrap();
        let state = State(vec![0.01, 0.02, 0.03]);
        let transition = Transition {
            state: state.clone(),
            action: Action(13),
            reward: 1,
            next_state: state.clone(),
        };
        let batch = vec![transition];
        let eval = agent.evaluate_batch(&batch).unwrap();
        assert!(eval.deltas[0] > 0.0, "freshly initialised critic should underestimate +1");
        let before = agent.policy(&state).unwrap()[13];
        let (_, grads) = agent.actor_grads(&batch, &eval.deltas).unwrap();
        adam_step(&mut agent.actor, &mut agent.actor_opt, &grads).unwrap();
        let after = agent.policy(&state).unwrap()[13];
        assert!(after > before, "pi(a|s) must increase: {before} -> {after}");
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut agent = Agent::new(AgentHyper::default(), RewardParams::default(), 23).unwrap();
        let mut batch = Vec::new();
        for i in 0..4usize {
            batch.push(Transition {
                state: State(vec![0.01 * i as f64, 0.02, 0.07 - 0.01 * i as f64]),
                action: Action(i * 9 % ACTION_SPACE),
                reward: if i % 2 == 0 { 1 } else { -1 },
                next_state: State(vec![0.02, 0.01 * i as f64, 0.03]),
            });
        }
        let eval = agent.evaluate_batch(&batch).unwrap();
        let (_, analytic) = agent.critic_grads(&batch, &eval).unwrap();
        // Loss as a function of the critic parameters, targets fixed.
        let loss = |agent: &Agent| -> f64 {
            batch
                .iter()
                .zip(&eval.targets)
                .map(|(t, &target)| {
                    let q = agent.critic_value(&t.state, t.action).unwrap();
                    (target - q) * (target - q) / batch.len() as f64
                })
                .sum()
        };
        let h = 1e-5;
        let mut worst = 0.0f64;
        for l in 0..agent.critic.num_layers() {
            let (out_dim, in_dim) = agent.critic.layer_dims(l);
            for row in 0..out_dim {
                for col in 0..in_dim {
                    let orig = agent.critic.weight(l, row, col);
                    agent.critic.set_weight(l, row, col, orig + h);
                    let up = loss(&agent);
                    agent.critic.set_weight(l, row, col, orig - h);
                    let down = loss(&agent);
                    agent.critic.set_weight(l, row, col, orig);
                    let fd = (up - down) / (2.0 * h);
                    let an = analytic.layers[l].dw(row, col);
                    let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
                    worst = worst.max(err);
                }
            }
        }
        assert!(worst <= 1e-4, "critic finite-difference mismatch: {worst}");
    }

    #[test]
    fn action_sampling_is_reproducible_and_respects_saturation() {
        let mut agent = Agent::new(AgentHyper::default(), RewardParams::default(), 5).unwrap();
        // Saturated policy: one logit at +1e3.
        let mut actor = MlpParams::zeros(&[3, 4, ACTION_SPACE], Activation::Softmax).unwrap();
        actor.set_bias(1, 7, 1e3);
        agent.actor = actor;
        let state = State(vec![0.0, 0.0, 0.0]);
        for _ in 0..500 {
            let (action, info) = agent.select_action(&state).unwrap();
            assert_eq!(action.index(), 7);
            assert!(info.log_prob > -1e-6);
        }

        let sample = |seed: u64| -> Vec<usize> {
            let mut agent =
                Agent::new(AgentHyper::default(), RewardParams::default(), seed).unwrap();
            let state = State(vec![0.01, 0.02, 0.03]);
            (0..50).map(|_| agent.select_action(&state).unwrap().0.index()).collect()
        };
        assert_eq!(sample(9), sample(9));
        assert_ne!(sample(9), sample(10));
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        let mut agent = Agent::new(AgentHyper::default(), RewardParams::default(), 31).unwrap();
        agent.actor = MlpParams::zeros(&[3, 4, ACTION_SPACE], Activation::Softmax).unwrap();
        let state = State(vec![0.0, 0.0, 0.0]);
        let draws = 10_000usize;
        let mut counts = vec![0usize; ACTION_SPACE];
        let mut entropy = 0.0;
        for _ in 0..draws {
            let (action, info) = agent.select_action(&state).unwrap();
            counts[action.index()] += 1;
            entropy = info.entropy;
        }
        assert!((entropy - (ACTION_SPACE as f64).ln()).abs() < 1e-9);
        let expected = draws as f64 / ACTION_SPACE as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 41 degrees of freedom: far tail at ~80.
        assert!(chi2 < 80.0, "chi-squared statistic {chi2} too large for uniform sampling");
    }

    #[test]
    fn frozen_bandit_converges_to_the_oracle_action() {
        // Stationary state, deterministic rewards from the analytic loss:
        // after 500 steps the greedy action must match the exhaustive
        // search on most seeds.
        let plrs = [0.01, 0.03, 0.05];
        let params = RewardParams::default();
        let best = optimal_action(&plrs, params.phi_th, params.k).unwrap();
        let mut hits = 0;
        for seed in [101u64, 202, 303, 404, 505] {
            let mut agent = Agent::new(AgentHyper::default(), params, seed).unwrap();
            let state = State(plrs.to_vec());
            for _ in 0..500 {
                let (action, _) = agent.select_action(&state).unwrap();
                let loss =
                    analytic_info_loss(action.class(), &action.weights(), &plrs, params.k)
                        .unwrap();
                let report = report_with(&plrs, loss);
                let r = reward(&report, action, None, &params);
                agent.store(Transition {
                    state: state.clone(),
                    action,
                    reward: r,
                    next_state: state.clone(),
                });
                agent.learn_step().unwrap();
            }
            let probs = agent.policy(&state).unwrap();
            let greedy = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if greedy == best.index() {
                hits += 1;
            }
        }
        assert!(hits >= 4, "only {hits}/5 seeds found the oracle action {}", best.index());
    }
}
