//! Per-surface learners: a DQN (Q-network, replay, target network,
//! epsilon-greedy with validity masking) and a tabular Q-learner used as a
//! verifiable reference.

mod network;
mod replay;
mod tabular;

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{action_count, ActionMask, Observation, SurfaceId};
use crate::seeding::Rng;

pub use network::{Adam, QNetwork};
pub use replay::ReplayBuffer;
pub use tabular::{tabular_update, Cell, TabularQ};

pub const CHECKPOINT_FORMAT: &str = "coplace-agent";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("action index {action} out of range for {actions} actions")]
    ActionOutOfRange { action: usize, actions: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("no valid action to choose from")]
    NoValidAction,
    #[error("network architectures differ: {left:?} vs {right:?}")]
    ArchitectureMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("non-finite loss {loss} at update {update}")]
    NonFiniteLoss { loss: f64, update: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// One replay record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
    /// Actions valid in the next state; the bootstrap max ignores the rest.
    pub next_mask: ActionMask,
}

/// Bellman target `r + gamma * max_valid Q_target(s')`, or `r` when terminal.
pub fn td_target(t: &Transition, target_net: &QNetwork, gamma: f64) -> Result<f64, AgentError> {
    if t.terminal {
        return Ok(t.reward);
    }
    let q = target_net.forward(&t.next_obs)?;
    let best = t
        .next_mask
        .valid_indices()
        .map(|a| q[a])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(if best.is_finite() { t.reward + gamma * best } else { t.reward })
}

/// One gradient step on the mean squared TD error of `batch`. Returns the
/// loss measured before the update.
pub fn update_step(
    net: &mut QNetwork,
    optim: &mut Adam,
    batch: &[&Transition],
    target_net: &QNetwork,
    gamma: f64,
) -> Result<f64, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let targets = batch
        .iter()
        .map(|t| td_target(t, target_net, gamma))
        .collect::<Result<Vec<_>, _>>()?;
    let obs: Vec<&[f64]> = batch.iter().map(|t| t.obs.as_slice()).collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let (loss, grad) = net.loss_gradient(&obs, &actions, &targets)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(AgentError::NonFiniteLoss {
            loss,
            update: optim.steps(),
        });
    }
    optim.apply(net.params_mut(), &grad);
    Ok(loss)
}

/// Epsilon-greedy over the valid actions. Greedy ties go to the lowest
/// index.
pub fn select_action(q: &[f64], mask: ActionMask, epsilon: f64, rng: &mut Rng) -> Result<usize, AgentError> {
    if !mask.any() {
        return Err(AgentError::NoValidAction);
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let valid: Vec<usize> = mask.valid_indices().collect();
        return Ok(valid[rng.gen_range(0..valid.len())]);
    }
    Ok(argmax_valid(q, mask).expect("mask has a valid action"))
}

pub fn argmax_valid(q: &[f64], mask: ActionMask) -> Option<usize> {
    let mut best: Option<usize> = None;
    for a in mask.valid_indices() {
        if best.is_none_or(|b| q[a] > q[b]) {
            best = Some(a);
        }
    }
    best
}

pub fn sync_target(net: &QNetwork, target_net: &mut QNetwork) -> Result<(), AgentError> {
    target_net.copy_from(net)
}

/// Linear decay from `start` to `end` over `decay_steps`, flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_steps: 20_000,
        }
    }
}

impl ExplorationSchedule {
    pub fn epsilon(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * (step as f64 / self.decay_steps as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Copy the online network into the target network every this many
    /// updates.
    pub target_sync: u64,
    pub exploration: ExplorationSchedule,
    /// Step size of the tabular learner.
    pub tabular_alpha: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            hidden: vec![128, 128],
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            buffer_capacity: 50_000,
            batch_size: 64,
            target_sync: 500,
            exploration: ExplorationSchedule::default(),
            tabular_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    #[default]
    Dqn,
    Tabular,
}

/// What an agent sees: the observation vector for the network and the
/// lattice cell for the table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Percept {
    pub obs: Observation,
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub from: Percept,
    pub action: usize,
    pub reward: f64,
    pub to: Percept,
    pub next_mask: ActionMask,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnAgent {
    pub config: AgentConfig,
    pub online: QNetwork,
    pub target: QNetwork,
    pub optim: Adam,
    pub buffer: ReplayBuffer,
    pub updates: u64,
}

impl DqnAgent {
    pub fn new(config: AgentConfig, inputs: usize, outputs: usize, init: &mut Rng) -> Self {
        let mut dims = vec![inputs];
        dims.extend(&config.hidden);
        dims.push(outputs);
        let online = QNetwork::new(&dims, init);
        let target = online.clone();
        let optim = Adam::new(online.params().len(), config.lr, config.beta1, config.beta2, config.adam_eps);
        let buffer = ReplayBuffer::new(config.buffer_capacity);
        Self {
            config,
            online,
            target,
            optim,
            buffer,
            updates: 0,
        }
    }

    /// Sample a batch and take one gradient step; `None` while the buffer
    /// is smaller than a batch.
    pub fn learn(&mut self, rng: &mut Rng) -> Result<Option<f64>, AgentError> {
        let Some(batch) = self.buffer.sample(self.config.batch_size, rng) else {
            return Ok(None);
        };
        let loss = update_step(&mut self.online, &mut self.optim, &batch, &self.target, self.config.gamma)?;
        self.updates += 1;
        if self.config.target_sync > 0 && self.updates.is_multiple_of(self.config.target_sync) {
            sync_target(&self.online, &mut self.target)?;
        }
        Ok(Some(loss))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularAgent {
    pub config: AgentConfig,
    pub q: TabularQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Learner {
    Dqn(Box<DqnAgent>),
    Tabular(TabularAgent),
}

impl Learner {
    pub fn new(kind: LearnerKind, config: AgentConfig, surface: SurfaceId, init: &mut Rng) -> Self {
        let n = action_count(surface);
        match kind {
            LearnerKind::Dqn => Learner::Dqn(Box::new(DqnAgent::new(config, crate::env::OBS_DIM, n, init))),
            LearnerKind::Tabular => Learner::Tabular(TabularAgent { config, q: TabularQ::new(n) }),
        }
    }

    pub fn config(&self) -> &AgentConfig {
        match self {
            Learner::Dqn(a) => &a.config,
            Learner::Tabular(a) => &a.config,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Learner::Dqn(a) => a.online.output_dim(),
            Learner::Tabular(a) => a.q.n_actions(),
        }
    }

    pub fn q_values(&self, p: &Percept) -> Vec<f64> {
        match self {
            Learner::Dqn(a) => a.online.forward(&p.obs).expect("observation width matches network"),
            Learner::Tabular(a) => a.q.row(p.cell),
        }
    }

    pub fn act(&self, p: &Percept, mask: ActionMask, epsilon: f64, rng: &mut Rng) -> Result<usize, AgentError> {
        select_action(&self.q_values(p), mask, epsilon, rng)
    }

    /// Store (DQN) or immediately learn from (tabular) one experience.
    pub fn record(&mut self, e: &Experience) {
        match self {
            Learner::Dqn(a) => a.buffer.push(Transition {
                obs: e.from.obs.to_vec(),
                action: e.action,
                reward: e.reward,
                next_obs: e.to.obs.to_vec(),
                terminal: e.terminal,
                next_mask: e.next_mask,
            }),
            Learner::Tabular(a) => tabular_update(
                &mut a.q,
                e.from.cell,
                e.action,
                e.reward,
                e.to.cell,
                e.next_mask,
                e.terminal,
                a.config.gamma,
                a.config.tabular_alpha,
            ),
        }
    }

    /// One replay update for the DQN; tabular learners update in
    /// [`Learner::record`] and return `None`.
    pub fn learn(&mut self, rng: &mut Rng) -> Result<Option<f64>, AgentError> {
        match self {
            Learner::Dqn(a) => a.learn(rng),
            Learner::Tabular(_) => Ok(None),
        }
    }
}

/// On-disk agent file: format tag, version, surface, and the full learner
/// state (parameters, target network, optimizer moments, replay buffer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentCheckpoint {
    pub format: String,
    pub version: u32,
    pub surface: SurfaceId,
    pub learner: Learner,
}

impl AgentCheckpoint {
    pub fn new(surface: SurfaceId, learner: Learner) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            surface,
            learner,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, surface: SurfaceId) -> Result<Self, AgentError> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                header.format, header.version
            )));
        }
        let ck: AgentCheckpoint = serde_json::from_str(text).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        if ck.surface != surface {
            return Err(AgentError::Checkpoint(format!(
                "checkpoint is for the {:?} surface, expected {surface:?}",
                ck.surface
            )));
        }
        let n = action_count(surface);
        if ck.learner.n_actions() != n {
            return Err(AgentError::Checkpoint(format!(
                "checkpoint has {} actions, the {surface:?} surface has {n}",
                ck.learner.n_actions()
            )));
        }
        if let Learner::Dqn(a) = &ck.learner {
            if a.online.input_dim() != crate::env::OBS_DIM || !a.online.same_shape(&a.target) {
                return Err(AgentError::Checkpoint(format!(
                    "network shape {:?} does not fit {}-wide observations",
                    a.online.dims(),
                    crate::env::OBS_DIM
                )));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        std::fs::write(path, self.to_json()).map_err(|source| AgentError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path, surface: SurfaceId) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|source| AgentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, surface)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Axes;
    use rand::SeedableRng;

    fn transition(obs: Vec<f64>, action: usize, reward: f64, terminal: bool) -> Transition {
        let n = obs.len();
        Transition {
            next_obs: vec![0.1; n],
            obs,
            action,
            reward,
            terminal,
            next_mask: ActionMask::all(4),
        }
    }

    #[test]
    fn td_target_examples() {
        let zero = QNetwork::zeros(&[3, 4, 4]);
        assert_eq!(td_target(&transition(vec![0.0; 3], 0, 0.7, true), &zero, 0.9).unwrap(), 0.7);

        // output bias 2.0 on every action -> max next Q = 2.0
        let mut params = vec![0.0; 3 * 4 + 4 + 4 * 4];
        params.extend([2.0, 1.0, -1.0, 0.5]);
        let net = QNetwork::from_params(&[3, 4, 4], params).unwrap();
        let t = transition(vec![0.0; 3], 1, 1.0, false);
        assert!((td_target(&t, &net, 0.9).unwrap() - 2.8).abs() < 1e-12);
        assert_eq!(td_target(&t, &net, 0.0).unwrap(), 1.0);

        // the best next action is invalid: fall back to the next best (1.0)
        let mut masked = t.clone();
        masked.next_mask.set(0, false);
        assert!((td_target(&masked, &net, 0.5).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_td_error_leaves_parameters() {
        let mut rng = Rng::seed_from_u64(2);
        let mut net = QNetwork::new(&[3, 8, 4], &mut rng);
        let target = QNetwork::zeros(&[3, 8, 4]);
        let obs = vec![0.2, -0.1, 0.4];
        let q = net.forward(&obs).unwrap();
        let t = transition(obs, 2, q[2], true);
        let before = net.clone();
        let mut optim = Adam::new(net.params().len(), 1e-3, 0.9, 0.999, 1e-8);
        let loss = update_step(&mut net, &mut optim, &[&t], &target, 0.9).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn repeated_updates_drive_td_error_to_zero() {
        let mut rng = Rng::seed_from_u64(4);
        let mut net = QNetwork::new(&[12, 16, 4], &mut rng);
        let target = net.clone();
        let obs: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let t = transition(obs.clone(), 1, 0.8, true);
        let mut optim = Adam::new(net.params().len(), 1e-3, 0.9, 0.999, 1e-8);
        let mut errors = Vec::new();
        for _ in 0..500 {
            update_step(&mut net, &mut optim, &[&t], &target, 0.95).unwrap();
            errors.push((net.forward(&obs).unwrap()[1] - 0.8).abs());
        }
        assert!(*errors.last().unwrap() < 1e-3, "final error {}", errors.last().unwrap());
        let initial = (0.8 - QNetwork::new(&[12, 16, 4], &mut Rng::seed_from_u64(4)).forward(&obs).unwrap()[1]).abs();
        assert!(errors[99] < initial && errors[499] < errors[99], "{initial} {} {}", errors[99], errors[499]);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut net = QNetwork::zeros(&[2, 2, 2]);
        let target = QNetwork::zeros(&[2, 2, 2]);
        let mut t = transition(vec![0.0, 1.0], 0, f64::NAN, true);
        t.next_mask = ActionMask::all(2);
        let mut optim = Adam::new(net.params().len(), 1e-3, 0.9, 0.999, 1e-8);
        assert!(matches!(
            update_step(&mut net, &mut optim, &[&t], &target, 0.9),
            Err(AgentError::NonFiniteLoss { .. })
        ));
        assert!(matches!(update_step(&mut net, &mut optim, &[], &target, 0.9), Err(AgentError::EmptyBatch)));
    }

    #[test]
    fn select_action_examples() {
        let mut rng = Rng::seed_from_u64(0);
        let q = [0.1, 0.9, 0.2, 0.3];
        assert_eq!(select_action(&q, ActionMask::all(4), 0.0, &mut rng).unwrap(), 1);
        let mut m = ActionMask::all(4);
        m.set(1, false);
        assert_eq!(select_action(&q, m, 0.0, &mut rng).unwrap(), 3);
        assert!(matches!(
            select_action(&q, ActionMask::none(4), 0.0, &mut rng),
            Err(AgentError::NoValidAction)
        ));
        // ties go to the lowest index
        assert_eq!(select_action(&[0.5, 0.5, 0.5, 0.1], ActionMask::all(4), 0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn uniform_exploration_over_valid_actions() {
        let mut rng = Rng::seed_from_u64(12);
        let mut m = ActionMask::all(4);
        m.set(2, false);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[select_action(&[0.0, 1.0, 2.0, 3.0], m, 1.0, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for a in [0, 1, 3] {
            assert!((counts[a] as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn sync_copies_and_detaches() {
        let mut rng = Rng::seed_from_u64(8);
        let mut net = QNetwork::new(&[4, 6, 2], &mut rng);
        let mut target = QNetwork::zeros(&[4, 6, 2]);
        sync_target(&net, &mut target).unwrap();
        let o = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(net.forward(&o).unwrap(), target.forward(&o).unwrap());
        let snapshot = target.clone();
        sync_target(&net, &mut target).unwrap();
        assert_eq!(target, snapshot);
        net.params_mut()[0] += 1.0;
        assert_eq!(target, snapshot);
        let mut other = QNetwork::zeros(&[4, 7, 2]);
        assert!(sync_target(&net, &mut other).is_err());
    }

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let s = ExplorationSchedule::default();
        assert_eq!(s.epsilon(0), 1.0);
        assert!((s.epsilon(10_000) - 0.525).abs() < 1e-12);
        assert_eq!(s.epsilon(20_000), 0.05);
        assert_eq!(s.epsilon(90_000), 0.05);
    }

    #[test]
    fn checkpoint_roundtrip_restores_learning_exactly() {
        let mut init = Rng::seed_from_u64(1);
        let cfg = AgentConfig { hidden: vec![8], batch_size: 4, buffer_capacity: 16, ..AgentConfig::default() };
        let mut learner = Learner::new(LearnerKind::Dqn, cfg, Axes::YZ, &mut init);
        let p = |x: f64| Percept { obs: [x; 12], cell: [0, 0] };
        for i in 0..10 {
            learner.record(&Experience {
                from: p(i as f64 / 10.0),
                action: i % 2,
                reward: 0.3,
                to: p(i as f64 / 9.0),
                next_mask: ActionMask::all(2),
                terminal: i % 3 == 0,
            });
        }
        let mut rng = Rng::seed_from_u64(5);
        learner.learn(&mut rng).unwrap();
        let ck = AgentCheckpoint::new(Axes::YZ, learner.clone());
        let back = AgentCheckpoint::from_json(&ck.to_json(), Axes::YZ).unwrap();
        assert_eq!(back, ck);

        let mut rng2 = rng.clone();
        let mut restored = back.learner;
        let a = learner.learn(&mut rng).unwrap();
        let b = restored.learn(&mut rng2).unwrap();
        assert_eq!(a, b);
        assert_eq!(learner, restored);

        assert!(AgentCheckpoint::from_json(&ck.to_json(), Axes::XY).is_err());
        let bad = ck.to_json().replace("\"version\":1", "\"version\":7");
        assert!(AgentCheckpoint::from_json(&bad, Axes::YZ).is_err());
    }

    proptest::proptest! {
        #[test]
        fn greedy_ignores_shift_and_positive_scale(
            q in proptest::collection::vec(-10.0f64..10.0, 4),
            bits in 1u8..16,
            shift in -5.0f64..5.0,
            scale in 0.1f64..10.0,
        ) {
            let mut mask = ActionMask::none(4);
            for a in 0..4 {
                mask.set(a, bits & (1 << a) != 0);
            }
            let mut rng = Rng::seed_from_u64(0);
            let a = select_action(&q, mask, 0.0, &mut rng).unwrap();
            proptest::prop_assert!(mask.get(a));
            let shifted: Vec<f64> = q.iter().map(|x| x + shift).collect();
            let scaled: Vec<f64> = q.iter().map(|x| x * scale).collect();
            proptest::prop_assert_eq!(argmax_valid(&shifted, mask), Some(a));
            proptest::prop_assert_eq!(argmax_valid(&scaled, mask), Some(a));
            for b in mask.valid_indices() {
                proptest::prop_assert!(q[b] <= q[a]);
            }
        }
    }
}
