//! Shared fixtures for the benchmarks.

use flocknet_core::controllers::{Arch, ControllerParams};
use flocknet_core::flocking::{
    build_comm_graph, local_features, sample_initial_state, FlockingConfig, SwarmState,
};
use flocknet_core::graph::{GraphSequence, GraphSnapshot};
use flocknet_core::rng::stream_rng;
use flocknet_core::{Mat, FEATURE_DIM};

pub struct BenchInstance {
    pub config: FlockingConfig,
    pub initial: SwarmState,
    pub graphs: GraphSequence,
    pub features: Vec<Mat>,
    pub targets: Vec<Mat>,
}

/// A reference-scale swarm with a recorded graph/feature sequence of
/// `n_steps` steps, for benchmarking the controllers off-line.
pub fn instance(n_agents: usize, n_steps: usize) -> BenchInstance {
    let config = FlockingConfig {
        n_agents,
        duration: n_steps as f64 * 0.01,
        ..FlockingConfig::default()
    };
    let mut rng = stream_rng(1234, 0);
    let initial = sample_initial_state(&config, &mut rng).expect("bench swarm");

    // drift-only states give a realistic time-varying graph sequence
    let mut state = initial.clone();
    let mut graphs: Vec<GraphSnapshot> = Vec::with_capacity(n_steps);
    let mut features = Vec::with_capacity(n_steps);
    let mut targets = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let graph = build_comm_graph(&state.positions, config.comm_radius).unwrap();
        features.push(local_features(&state, &graph).unwrap());
        graphs.push(graph);
        targets.push(Mat::zeros(n_agents, 2));
        state = flocknet_core::flocking::step_dynamics(
            &state,
            &Mat::zeros(n_agents, 2),
            config.max_accel,
        )
        .unwrap();
    }
    BenchInstance {
        config,
        initial,
        graphs: GraphSequence::new(graphs).unwrap(),
        features,
        targets,
    }
}

pub fn params(arch: Arch, g: usize, k: usize) -> ControllerParams {
    ControllerParams::init(arch, FEATURE_DIM, g, k, 7).unwrap()
}
