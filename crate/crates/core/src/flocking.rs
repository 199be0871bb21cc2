//! The flocking environment.
//!
//! Point-mass agents on a plane, zero-order-hold dynamics, a proximity
//! communication graph, the velocity-variance cost, the centralized expert
//! with its collision-avoidance potential, the local feature map the
//! learned controllers see, initial-state sampling, closed-loop rollouts
//! and expert dataset generation.

use crate::controllers::{ControllerParams, ControllerState};
use crate::error::{Error, Result};
use crate::graph::{GraphSequence, GraphSnapshot};
use crate::mat::Mat;
use crate::rng::{stream_rng, streams};
use crate::{ACTION_DIM, FEATURE_DIM};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Distances below this floor are clamped before inverse powers are taken,
/// keeping the potential terms finite if two agents ever coincide.
pub const DISTANCE_FLOOR: f64 = 1e-6;

/// One agent: planar position (m) and velocity (m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

/// Team state at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    /// `n x 2` positions in meters.
    pub positions: Mat,
    /// `n x 2` velocities in m/s.
    pub velocities: Mat,
    pub time_index: usize,
    pub sampling_time: f64,
}

impl SwarmState {
    pub fn from_agents(agents: &[AgentState], sampling_time: f64) -> Result<Self> {
        if agents.len() < 2 {
            return Err(Error::InvalidArgument(
                "a swarm needs at least two agents".into(),
            ));
        }
        if sampling_time <= 0.0 {
            return Err(Error::InvalidArgument(
                "sampling time must be positive".into(),
            ));
        }
        let positions = Mat::from_fn(agents.len(), 2, |i, c| agents[i].position[c]);
        let velocities = Mat::from_fn(agents.len(), 2, |i, c| agents[i].velocity[c]);
        if !positions.is_finite() || !velocities.is_finite() {
            return Err(Error::InvalidArgument(
                "agent states must be finite".into(),
            ));
        }
        Ok(SwarmState {
            positions,
            velocities,
            time_index: 0,
            sampling_time,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.positions.rows()
    }

    pub fn agent(&self, i: usize) -> AgentState {
        AgentState {
            position: [self.positions.get(i, 0), self.positions.get(i, 1)],
            velocity: [self.velocities.get(i, 0), self.velocities.get(i, 1)],
        }
    }
}

/// Scenario parameters. Defaults are the reference setup: 50 agents, 200
/// steps of 10 ms, 2 m communication radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlockingConfig {
    pub n_agents: usize,
    /// Sampling interval in seconds.
    pub sampling_time: f64,
    /// Trajectory length in seconds.
    pub duration: f64,
    /// Communication radius in meters.
    pub comm_radius: f64,
    /// Per-component acceleration clip, m/s^2.
    pub max_accel: f64,
    /// Initial per-agent velocities are uniform on `[-v, v]` per component.
    pub vel_range: f64,
    /// A shared bias velocity uniform on `[-b, b]` per component is added
    /// to every agent.
    pub bias_range: f64,
    /// Minimum pairwise distance at placement, meters.
    pub min_init_dist: f64,
    /// Collision potential cutoff, meters.
    pub potential_cutoff: f64,
    /// Placement disc radius is `placement_spacing * sqrt(n_agents)`,
    /// keeping density constant as the team grows.
    pub placement_spacing: f64,
}

impl Default for FlockingConfig {
    fn default() -> Self {
        FlockingConfig {
            n_agents: 50,
            sampling_time: 0.01,
            duration: 2.0,
            comm_radius: 2.0,
            max_accel: 10.0,
            vel_range: 3.0,
            bias_range: 3.0,
            min_init_dist: 0.1,
            potential_cutoff: 1.0,
            placement_spacing: 0.6,
        }
    }
}

impl FlockingConfig {
    pub fn n_steps(&self) -> usize {
        (self.duration / self.sampling_time).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_agents", self.n_agents as f64),
            ("sampling_time", self.sampling_time),
            ("duration", self.duration),
            ("comm_radius", self.comm_radius),
            ("max_accel", self.max_accel),
            ("vel_range", self.vel_range),
            ("bias_range", self.bias_range),
            ("min_init_dist", self.min_init_dist),
            ("potential_cutoff", self.potential_cutoff),
            ("placement_spacing", self.placement_spacing),
        ];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_agents < 2 {
            return Err(Error::Config("n_agents must be at least 2".into()));
        }
        if self.min_init_dist >= self.comm_radius {
            return Err(Error::Config(
                "min_init_dist must be below comm_radius".into(),
            ));
        }
        Ok(())
    }
}

/// Clip every action component to `[-max_accel, +max_accel]`.
pub fn clip_actions(actions: &Mat, max_accel: f64) -> Mat {
    actions.map(|u| u.clamp(-max_accel, max_accel))
}

/// Zero-order-hold step: clip the accelerations, then
/// `r' = u Ts^2/2 + v Ts + r`, `v' = u Ts + v`.
pub fn step_dynamics(state: &SwarmState, actions: &Mat, max_accel: f64) -> Result<SwarmState> {
    if actions.shape() != (state.n_agents(), ACTION_DIM) {
        return Err(Error::dims(
            "step_dynamics actions",
            format!("{:?}", (state.n_agents(), ACTION_DIM)),
            format!("{:?}", actions.shape()),
        ));
    }
    if !actions.is_finite() {
        return Err(Error::InvalidArgument("actions must be finite".into()));
    }
    let ts = state.sampling_time;
    let u = clip_actions(actions, max_accel);
    let mut positions = state.positions.clone();
    let mut velocities = state.velocities.clone();
    for i in 0..state.n_agents() {
        for c in 0..2 {
            let a = u.get(i, c);
            let v = state.velocities.get(i, c);
            positions.set(i, c, a * ts * ts / 2.0 + v * ts + positions.get(i, c));
            velocities.set(i, c, a * ts + v);
        }
    }
    Ok(SwarmState {
        positions,
        velocities,
        time_index: state.time_index + 1,
        sampling_time: ts,
    })
}

/// Proximity communication graph: agents within `radius` of each other
/// (closed ball) are linked, and each incoming edge of agent `i` carries
/// weight `1/deg(i)`, making the shift a neighborhood average. The
/// degree normalization keeps chained shift products bounded on any team,
/// which the recurrent controller's gradients need over long horizons,
/// and each agent can apply it knowing only its own neighbor count.
pub fn build_comm_graph(positions: &Mat, radius: f64) -> Result<GraphSnapshot> {
    if radius <= 0.0 {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let n = positions.rows();
    let mut pairs = Vec::new();
    let mut degree = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = positions.get(i, 0) - positions.get(j, 0);
            let dy = positions.get(i, 1) - positions.get(j, 1);
            if (dx * dx + dy * dy).sqrt() <= radius {
                pairs.push((i, j));
                degree[i] += 1;
                degree[j] += 1;
            }
        }
    }
    let mut edges = Vec::with_capacity(2 * pairs.len());
    for (i, j) in pairs {
        edges.push((i, j, 1.0 / degree[j] as f64));
        edges.push((j, i, 1.0 / degree[i] as f64));
    }
    GraphSnapshot::from_weighted_edges(n, edges)
}

/// Velocity-consensus cost: mean squared deviation of each agent's velocity
/// from the team average. Zero exactly at consensus.
pub fn cost(velocities: &Mat) -> f64 {
    let n = velocities.rows();
    let mut mean = [0.0; 2];
    for i in 0..n {
        mean[0] += velocities.get(i, 0);
        mean[1] += velocities.get(i, 1);
    }
    mean[0] /= n as f64;
    mean[1] /= n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let dx = velocities.get(i, 0) - mean[0];
        let dy = velocities.get(i, 1) - mean[1];
        acc += dx * dx + dy * dy;
    }
    acc / n as f64
}

/// Gradient with respect to `r_i` of the collision potential
/// `U = 1/||r_ij||^2 - log(||r_ij||^2)` inside the cutoff, zero outside.
pub fn potential_gradient(r_i: [f64; 2], r_j: [f64; 2], cutoff: f64) -> [f64; 2] {
    let rij = [r_i[0] - r_j[0], r_i[1] - r_j[1]];
    let dist = (rij[0] * rij[0] + rij[1] * rij[1]).sqrt();
    if dist > cutoff {
        return [0.0, 0.0];
    }
    let d = dist.max(DISTANCE_FLOOR);
    let d2 = d * d;
    let scale = -2.0 / (d2 * d2) - 2.0 / d2;
    [scale * rij[0], scale * rij[1]]
}

/// The centralized expert: each agent accelerates against its velocity
/// disagreement with the whole team and away from near collisions. Uses
/// instantaneous global state; clipping is the rollout loop's job.
pub fn expert_action(state: &SwarmState, cutoff: f64) -> Result<Mat> {
    let n = state.n_agents();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "expert needs at least two agents".into(),
        ));
    }
    let mut mean = [0.0; 2];
    for i in 0..n {
        mean[0] += state.velocities.get(i, 0);
        mean[1] += state.velocities.get(i, 1);
    }
    let mut actions = Mat::zeros(n, 2);
    for i in 0..n {
        // -sum_j (v_i - v_j) = -(n v_i - sum_j v_j)
        let mut u = [
            -(n as f64 * state.velocities.get(i, 0) - mean[0]),
            -(n as f64 * state.velocities.get(i, 1) - mean[1]),
        ];
        let r_i = [state.positions.get(i, 0), state.positions.get(i, 1)];
        for j in 0..n {
            if j == i {
                continue;
            }
            let r_j = [state.positions.get(j, 0), state.positions.get(j, 1)];
            let g = potential_gradient(r_i, r_j, cutoff);
            u[0] -= g[0];
            u[1] -= g[1];
        }
        actions.set(i, 0, u[0]);
        actions.set(i, 1, u[1]);
    }
    Ok(actions)
}

/// The six local features each agent aggregates from its one-hop neighbors:
/// velocity disagreement, and two inverse-power position offsets. Isolated
/// agents see all zeros.
pub fn local_features(state: &SwarmState, graph: &GraphSnapshot) -> Result<Mat> {
    let n = state.n_agents();
    if graph.n_agents() != n {
        return Err(Error::dims(
            "local_features graph",
            format!("{n} agents"),
            format!("{}", graph.n_agents()),
        ));
    }
    let mut features = Mat::zeros(n, FEATURE_DIM);
    for i in 0..n {
        let r_i = [state.positions.get(i, 0), state.positions.get(i, 1)];
        let v_i = [state.velocities.get(i, 0), state.velocities.get(i, 1)];
        let row = features.row_mut(i);
        for (j, _) in graph.neighbors(i) {
            let rij = [
                r_i[0] - state.positions.get(j, 0),
                r_i[1] - state.positions.get(j, 1),
            ];
            let d = (rij[0] * rij[0] + rij[1] * rij[1])
                .sqrt()
                .max(DISTANCE_FLOOR);
            let d2 = d * d;
            let d4 = d2 * d2;
            row[0] += v_i[0] - state.velocities.get(j, 0);
            row[1] += v_i[1] - state.velocities.get(j, 1);
            row[2] += rij[0] / d4;
            row[3] += rij[1] / d4;
            row[4] += rij[0] / d2;
            row[5] += rij[1] / d2;
        }
    }
    Ok(features)
}

fn is_connected(graph: &GraphSnapshot) -> bool {
    let n = graph.n_agents();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for (j, _) in graph.neighbors(i) {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    count == n
}

/// Sample an initial swarm: positions uniform in a density-preserving disc,
/// rejected until the minimum spacing holds and the communication graph is
/// connected; velocities uniform per agent plus one shared bias.
pub fn sample_initial_state(config: &FlockingConfig, rng: &mut ChaCha8Rng) -> Result<SwarmState> {
    config.validate()?;
    let n = config.n_agents;
    let disc_radius = config.placement_spacing * (n as f64).sqrt();

    let mut positions = None;
    for _attempt in 0..1000 {
        let mut candidate = Mat::zeros(n, 2);
        for i in 0..n {
            let radius = disc_radius * rng.random::<f64>().sqrt();
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            candidate.set(i, 0, radius * angle.cos());
            candidate.set(i, 1, radius * angle.sin());
        }
        let mut min_dist = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = candidate.get(i, 0) - candidate.get(j, 0);
                let dy = candidate.get(i, 1) - candidate.get(j, 1);
                min_dist = min_dist.min((dx * dx + dy * dy).sqrt());
            }
        }
        if min_dist < config.min_init_dist {
            continue;
        }
        if !is_connected(&build_comm_graph(&candidate, config.comm_radius)?) {
            continue;
        }
        positions = Some(candidate);
        break;
    }
    let positions = positions.ok_or_else(|| {
        Error::Config(format!(
            "could not place {n} agents with spacing {} in a disc of radius {disc_radius:.2}",
            config.min_init_dist
        ))
    })?;

    let bias = [
        rng.random_range(-config.bias_range..=config.bias_range),
        rng.random_range(-config.bias_range..=config.bias_range),
    ];
    let velocities = Mat::from_fn(n, 2, |_, c| {
        rng.random_range(-config.vel_range..=config.vel_range) + bias[c]
    });

    Ok(SwarmState {
        positions,
        velocities,
        time_index: 0,
        sampling_time: config.sampling_time,
    })
}

/// Policy driving a rollout.
pub enum Controller<'a> {
    /// Centralized expert with full instantaneous state.
    Expert,
    /// Always-zero accelerations (baseline for tests).
    Zero,
    /// A trained decentralized controller; sees only the features and the
    /// graph, through its delayed buffers.
    Learned(&'a ControllerParams),
}

/// Everything recorded along one trajectory. Actions are stored as
/// executed, i.e. after clipping.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub positions: Vec<Mat>,
    pub velocities: Vec<Mat>,
    pub features: Vec<Mat>,
    pub actions: Vec<Mat>,
    pub graphs: GraphSequence,
    pub sampling_time: f64,
}

impl TrajectoryRecord {
    pub fn n_steps(&self) -> usize {
        self.positions.len()
    }

    pub fn n_agents(&self) -> usize {
        self.graphs.n_agents()
    }

    pub fn initial_state(&self) -> SwarmState {
        SwarmState {
            positions: self.positions[0].clone(),
            velocities: self.velocities[0].clone(),
            time_index: 0,
            sampling_time: self.sampling_time,
        }
    }

    /// Total cost along the recorded velocities.
    pub fn total_cost(&self) -> f64 {
        self.velocities.iter().map(cost).sum()
    }
}

/// Per-step cost trace of one closed-loop run.
#[derive(Debug, Clone)]
pub struct CostTrace {
    pub per_step: Vec<f64>,
}

impl CostTrace {
    /// Total cost, summed over the trajectory's steps.
    pub fn total(&self) -> f64 {
        self.per_step.iter().sum()
    }
}

/// Closed-loop rollout for `config.n_steps()` steps: build the graph,
/// compute features, ask the controller for actions, clip, integrate.
pub fn rollout(
    controller: &Controller<'_>,
    initial: &SwarmState,
    config: &FlockingConfig,
) -> Result<(TrajectoryRecord, CostTrace)> {
    config.validate()?;
    let n_steps = config.n_steps();
    let n = initial.n_agents();
    let mut state = initial.clone();

    let mut learned_state = match controller {
        Controller::Learned(params) => Some(ControllerState::new(params, n)),
        _ => None,
    };

    let mut positions = Vec::with_capacity(n_steps);
    let mut velocities = Vec::with_capacity(n_steps);
    let mut features_seq = Vec::with_capacity(n_steps);
    let mut actions_seq = Vec::with_capacity(n_steps);
    let mut graphs = Vec::with_capacity(n_steps);
    let mut per_step = Vec::with_capacity(n_steps);

    for _ in 0..n_steps {
        let graph = build_comm_graph(&state.positions, config.comm_radius)?;
        let features = local_features(&state, &graph)?;
        let raw = match controller {
            Controller::Expert => expert_action(&state, config.potential_cutoff)?,
            Controller::Zero => Mat::zeros(n, ACTION_DIM),
            Controller::Learned(params) => learned_state
                .as_mut()
                .expect("learned state")
                .step(params, &graph, &features)?,
        };
        let applied = clip_actions(&raw, config.max_accel);

        per_step.push(cost(&state.velocities));
        positions.push(state.positions.clone());
        velocities.push(state.velocities.clone());
        features_seq.push(features);
        actions_seq.push(applied.clone());
        graphs.push(graph);

        state = step_dynamics(&state, &applied, config.max_accel)?;
    }

    Ok((
        TrajectoryRecord {
            positions,
            velocities,
            features: features_seq,
            actions: actions_seq,
            graphs: GraphSequence::new(graphs)?,
            sampling_time: config.sampling_time,
        },
        CostTrace { per_step },
    ))
}

/// Expert trajectories split into train / validation / test.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: FlockingConfig,
    pub seed: u64,
    pub train: Vec<TrajectoryRecord>,
    pub valid: Vec<TrajectoryRecord>,
    pub test: Vec<TrajectoryRecord>,
}

impl Dataset {
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }
}

fn generate_split(
    config: &FlockingConfig,
    count: usize,
    seed: u64,
    stream_base: u64,
) -> Result<Vec<TrajectoryRecord>> {
    (0..count)
        .into_par_iter()
        .map(|idx| {
            let mut rng = stream_rng(seed, stream_base + idx as u64);
            let initial = sample_initial_state(config, &mut rng)?;
            let (record, _) = rollout(&Controller::Expert, &initial, config)?;
            Ok(record)
        })
        .collect()
}

/// Generate expert rollouts for each split. Deterministic in `seed`; the
/// splits and the trajectories within them use disjoint RNG streams, so the
/// parallel generation order cannot change the data.
pub fn generate_dataset(
    config: &FlockingConfig,
    n_train: usize,
    n_valid: usize,
    n_test: usize,
    seed: u64,
) -> Result<Dataset> {
    config.validate()?;
    Ok(Dataset {
        config: config.clone(),
        seed,
        train: generate_split(config, n_train, seed, streams::DATASET_TRAIN)?,
        valid: generate_split(config, n_valid, seed, streams::DATASET_VALID)?,
        test: generate_split(config, n_test, seed, streams::DATASET_TEST)?,
    })
}
