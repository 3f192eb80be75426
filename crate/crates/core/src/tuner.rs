//! Tabular Q-learning over the coefficient lattice `[1, 10]⁴`.
//!
//! One model iteration (MIN) runs `oin_per_min` file operations under the
//! current coefficients, measures P, credits `ΔP` to the previous action and
//! picks the next action ε-greedily. ε decays as `exp(−MIN/τ)` and reaches the
//! configured floor exactly at the end of the budget.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disk::{DiskGeometry, Hyperparams};
use crate::recovery::{measure, PerfWeights};
use crate::vfs::{AllocPolicy, FileSystem, FsError, LinkingRule};
use crate::workload::{Simulator, WorkloadConfig, WorkloadError};

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("reward must be finite, got {0}")]
    NonFiniteReward(f64),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Fs(#[from] FsError),
}

const LATTICE: i32 = Hyperparams::MAX_COEFF - Hyperparams::MIN_COEFF + 1;
pub const STATE_COUNT: usize = (LATTICE * LATTICE * LATTICE * LATTICE) as usize;

/// A point of the coefficient lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QState(pub Hyperparams);

impl QState {
    pub fn new(hp: Hyperparams) -> Result<Self, TunerError> {
        if hp.in_training_range() {
            Ok(QState(hp))
        } else {
            Err(TunerError::InvalidConfig(format!("{hp} outside [1, 10]^4")))
        }
    }

    pub fn index(self) -> usize {
        self.0.to_array().iter().fold(0, |acc, &c| {
            acc * LATTICE as usize + (c - Hyperparams::MIN_COEFF) as usize
        })
    }

    pub fn from_index(mut index: usize) -> Self {
        let mut coeffs = [0i32; 4];
        for slot in coeffs.iter_mut().rev() {
            *slot = (index % LATTICE as usize) as i32 + Hyperparams::MIN_COEFF;
            index /= LATTICE as usize;
        }
        QState(Hyperparams::from_array(coeffs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coefficient {
    Lambda,
    Sigma,
    Rho,
    Mu,
}

/// Increment or decrement one coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QAction {
    pub coefficient: Coefficient,
    pub delta: i8,
}

impl QAction {
    pub const COUNT: usize = 8;

    pub const ALL: [QAction; 8] = [
        QAction {
            coefficient: Coefficient::Lambda,
            delta: 1,
        },
        QAction {
            coefficient: Coefficient::Lambda,
            delta: -1,
        },
        QAction {
            coefficient: Coefficient::Sigma,
            delta: 1,
        },
        QAction {
            coefficient: Coefficient::Sigma,
            delta: -1,
        },
        QAction {
            coefficient: Coefficient::Rho,
            delta: 1,
        },
        QAction {
            coefficient: Coefficient::Rho,
            delta: -1,
        },
        QAction {
            coefficient: Coefficient::Mu,
            delta: 1,
        },
        QAction {
            coefficient: Coefficient::Mu,
            delta: -1,
        },
    ];

    pub fn index(self) -> usize {
        QAction::ALL
            .iter()
            .position(|a| *a == self)
            .expect("listed")
    }

    /// Next state; moves that would leave `[1, 10]` keep the state unchanged.
    pub fn apply(self, state: QState) -> QState {
        let mut c = state.0.to_array();
        let slot = match self.coefficient {
            Coefficient::Lambda => 0,
            Coefficient::Sigma => 1,
            Coefficient::Rho => 2,
            Coefficient::Mu => 3,
        };
        let next = c[slot] + self.delta as i32;
        if (Hyperparams::MIN_COEFF..=Hyperparams::MAX_COEFF).contains(&next) {
            c[slot] = next;
        }
        QState(Hyperparams::from_array(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub oin_per_min: u64,
    pub min_budget: u64,
    pub epsilon_floor: f64,
    /// Decay constant; defaults to `min_budget / ln(1/epsilon_floor)`.
    pub tau: Option<f64>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            oin_per_min: 1000,
            min_budget: 500,
            epsilon_floor: 3e-5,
            tau: None,
        }
    }
}

impl TrainSchedule {
    pub fn tau(&self) -> f64 {
        self.tau
            .unwrap_or_else(|| self.min_budget as f64 / (1.0 / self.epsilon_floor).ln())
    }

    pub fn validate(&self) -> Result<(), TunerError> {
        if self.oin_per_min == 0 {
            return Err(TunerError::InvalidConfig(
                "oin_per_min must be positive".into(),
            ));
        }
        if !(self.epsilon_floor > 0.0 && self.epsilon_floor < 1.0) {
            return Err(TunerError::InvalidConfig(
                "epsilon_floor must lie in (0, 1)".into(),
            ));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(TunerError::InvalidConfig("tau must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Exploration probability after `min_count` model iterations.
pub fn epsilon(schedule: &TrainSchedule, min_count: u64) -> f64 {
    match schedule.tau {
        Some(tau) => (-(min_count as f64) / tau).exp(),
        // exp(−m/τ) with τ = B/ln(1/floor) is floor^(m/B); this form lands on
        // the floor exactly at m = B.
        None if schedule.min_budget > 0 => schedule
            .epsilon_floor
            .powf(min_count as f64 / schedule.min_budget as f64),
        None => 1.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<f64>,
}

impl Default for QTable {
    fn default() -> Self {
        QTable {
            values: vec![0.0; STATE_COUNT * QAction::COUNT],
        }
    }
}

impl QTable {
    pub fn new() -> Self {
        QTable::default()
    }

    pub fn get(&self, s: QState, a: QAction) -> f64 {
        self.values[s.index() * QAction::COUNT + a.index()]
    }

    pub fn set(&mut self, s: QState, a: QAction, value: f64) {
        self.values[s.index() * QAction::COUNT + a.index()] = value;
    }

    pub fn row(&self, s: QState) -> &[f64] {
        let start = s.index() * QAction::COUNT;
        &self.values[start..start + QAction::COUNT]
    }

    /// Best action, lowest index on ties.
    pub fn greedy(&self, s: QState) -> QAction {
        let row = self.row(s);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        QAction::ALL[best]
    }

    pub fn max_value(&self, s: QState) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn select_action(q: &QTable, state: QState, eps: f64, rng: &mut ChaCha8Rng) -> QAction {
    let explore: f64 = rng.random();
    if explore < eps {
        QAction::ALL[rng.random_range(0..QAction::COUNT)]
    } else {
        q.greedy(state)
    }
}

/// `Q(s,a) ← Q(s,a) + lr·(r + γ·max Q(s',·) − Q(s,a))`.
pub fn q_update(
    q: &mut QTable,
    s: QState,
    a: QAction,
    reward: f64,
    s_next: QState,
    learning_rate: f64,
    discount: f64,
) -> Result<(), TunerError> {
    if !reward.is_finite() {
        return Err(TunerError::NonFiniteReward(reward));
    }
    let old = q.get(s, a);
    let target = reward + discount * q.max_value(s_next);
    q.set(s, a, old + learning_rate * (target - old));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerMode {
    #[default]
    QLearning,
    /// ε-greedy on the last observed ΔP per (state, action): learning rate 1,
    /// no bootstrapping.
    HillClimb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub geometry: DiskGeometry,
    pub linking: LinkingRule,
    pub workload: WorkloadConfig,
    pub weights: PerfWeights,
    pub schedule: TrainSchedule,
    pub learning_rate: f64,
    pub discount: f64,
    pub mode: LearnerMode,
    pub initial: Hyperparams,
    /// Seeds the agent's exploration; the workload has its own seed.
    pub agent_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            geometry: DiskGeometry::default(),
            linking: LinkingRule::default(),
            workload: WorkloadConfig::default(),
            weights: PerfWeights::default(),
            schedule: TrainSchedule::default(),
            learning_rate: 0.1,
            discount: 0.9,
            mode: LearnerMode::default(),
            initial: Hyperparams::new(1, 1, 1, 1),
            agent_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TunerError> {
        self.geometry
            .validate()
            .map_err(|e| TunerError::InvalidConfig(e.to_string()))?;
        self.workload.validate()?;
        self.weights
            .validate()
            .map_err(|e| TunerError::InvalidConfig(e.to_string()))?;
        self.schedule.validate()?;
        QState::new(self.initial)?;
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(TunerError::InvalidConfig(
                "learning_rate must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(TunerError::InvalidConfig(
                "discount must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    fn fresh_fs(&self, hp: Hyperparams, policy: AllocPolicy) -> Result<FileSystem, TunerError> {
        Ok(FileSystem::new(self.geometry, hp, policy)?.with_linking(self.linking))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinRecord {
    pub min: u64,
    pub p: f64,
    pub epsilon: f64,
    pub state: Hyperparams,
    /// Action chosen after this measurement; none on the final iteration.
    pub action: Option<QAction>,
    /// ΔP credited to the previous action; none on the first iteration.
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitCount {
    pub state: Hyperparams,
    pub count: u64,
}

pub const TRAIN_REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub format_version: u32,
    pub workload_seed: u64,
    pub agent_seed: u64,
    pub config_hash: Option<String>,
    pub initial_state: Hyperparams,
    pub trajectory: Vec<MinRecord>,
    pub visited: Vec<VisitCount>,
    /// Visited state with the highest `max_a Q`.
    pub best_tuple: Hyperparams,
    /// State the agent sits in when training stops.
    pub final_state: Hyperparams,
    pub total_ops: u64,
    pub evaluation: Evaluation,
}

/// Fixed-protocol comparison of the starting point, the learned tuple and a
/// first-fit baseline: each runs the same seeded workload on a fresh disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub ops: u64,
    pub initial_p: f64,
    pub final_greedy_p: f64,
    pub best_tuple_p: f64,
    pub first_fit_p: f64,
}

impl TrainReport {
    pub fn first_min_p(&self) -> Option<f64> {
        self.trajectory.first().map(|r| r.p)
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.trajectory.iter().map(|r| r.epsilon).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub const CSV_HEADER: &'static str = "min,p,epsilon,lambda,sigma,rho,mu";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.trajectory {
            let s = r.state;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.min, r.p, r.epsilon, s.lambda, s.sigma, s.rho, s.mu
            ));
        }
        out
    }
}

/// P after `ops` operations of the configured workload on a fresh disk.
pub fn evaluate_policy(
    config: &TrainConfig,
    hp: Hyperparams,
    policy: AllocPolicy,
    ops: u64,
) -> Result<f64, TunerError> {
    let mut fs = config.fresh_fs(hp, policy)?;
    let mut sim = Simulator::new(config.workload.clone())?.without_trace();
    sim.run(&mut fs, ops)?;
    Ok(measure(&fs, &config.weights).p)
}

pub fn train(config: &TrainConfig) -> Result<TrainReport, TunerError> {
    config.validate()?;
    let schedule = config.schedule;
    let (lr, discount) = match config.mode {
        LearnerMode::QLearning => (config.learning_rate, config.discount),
        LearnerMode::HillClimb => (1.0, 0.0),
    };
    let mut agent_rng = ChaCha8Rng::seed_from_u64(config.agent_seed);
    let mut q = QTable::new();
    let mut visits = vec![0u64; STATE_COUNT];
    let mut state = QState::new(config.initial)?;
    let mut fs = config.fresh_fs(state.0, AllocPolicy::Apex)?;
    let mut sim = Simulator::new(config.workload.clone())?.without_trace();
    let mut trajectory: Vec<MinRecord> = Vec::new();
    let mut previous: Option<(QState, QAction, f64)> = None;

    if schedule.min_budget > 0 {
        for min in 0..=schedule.min_budget {
            let eps = epsilon(&schedule, min);
            sim.run(&mut fs, schedule.oin_per_min)?;
            visits[state.index()] += 1;
            let p = measure(&fs, &config.weights).p;
            let mut reward = None;
            if let Some((s, a, p_prev)) = previous {
                let r = p - p_prev;
                q_update(&mut q, s, a, r, state, lr, discount)?;
                reward = Some(r);
            }
            let converged = min == schedule.min_budget || eps <= schedule.epsilon_floor;
            let action = if converged {
                None
            } else {
                Some(select_action(&q, state, eps, &mut agent_rng))
            };
            trajectory.push(MinRecord {
                min,
                p,
                epsilon: eps,
                state: state.0,
                action,
                reward,
            });
            let Some(action) = action else { break };
            previous = Some((state, action, p));
            state = action.apply(state);
            fs.set_hyperparams(state.0);
        }
    }

    let visited: Vec<VisitCount> = visits
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &count)| VisitCount {
            state: QState::from_index(i).0,
            count,
        })
        .collect();
    let best_tuple = visited
        .iter()
        .map(|v| QState(v.state))
        .fold(None::<(QState, f64)>, |best, s| {
            let v = q.max_value(s);
            match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((s, v)),
            }
        })
        .map(|(s, _)| s.0)
        .unwrap_or(config.initial);

    let eval_ops = schedule.oin_per_min;
    let evaluation = Evaluation {
        ops: eval_ops,
        initial_p: evaluate_policy(config, config.initial, AllocPolicy::Apex, eval_ops)?,
        final_greedy_p: evaluate_policy(config, state.0, AllocPolicy::Apex, eval_ops)?,
        best_tuple_p: evaluate_policy(config, best_tuple, AllocPolicy::Apex, eval_ops)?,
        first_fit_p: evaluate_policy(config, config.initial, AllocPolicy::FirstFit, eval_ops)?,
    };

    Ok(TrainReport {
        format_version: TRAIN_REPORT_VERSION,
        workload_seed: config.workload.seed,
        agent_seed: config.agent_seed,
        config_hash: None,
        initial_state: config.initial,
        total_ops: sim.counts().total(),
        trajectory,
        visited,
        best_tuple,
        final_state: state.0,
        evaluation,
    })
}
