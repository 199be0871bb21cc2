//! Forward evaluation of the controllers, one step at a time.
//!
//! The same `ControllerState::step` drives both closed-loop rollouts and
//! teacher-forced training passes, so the two paths agree bit for bit.

use super::{Arch, ControllerParams};
use crate::error::{Error, Result};
use crate::graph::{AggregationBuffer, GraphSequence, GraphSnapshot};
use crate::mat::Mat;
use crate::ACTION_DIM;

/// Everything a controller carries between consecutive steps: the delayed
/// aggregation buffers and, for the recurrent architecture, the previous
/// hidden state (zero before the first step).
#[derive(Debug, Clone)]
pub struct ControllerState {
    arch: Arch,
    n_agents: usize,
    input_buffer: AggregationBuffer,
    hidden_buffer: Option<AggregationBuffer>,
    output_buffer: Option<AggregationBuffer>,
    z_prev: Option<Mat>,
}

/// Per-step record of everything the reverse pass replays.
#[derive(Debug, Clone)]
pub(super) struct TapeStep {
    pub graph: GraphSnapshot,
    pub input_taps: Vec<Mat>,
    pub hidden_taps: Option<Vec<Mat>>,
    pub output_taps: Option<Vec<Mat>>,
    /// tanh hidden state Z(t), recurrent architecture only.
    pub z: Option<Mat>,
    /// Value entering the readout: the filter output (Gc), tanh of it
    /// (Gcnn), or tanh of the output convolution (Grnn).
    pub readout_in: Mat,
}

/// Record of one forward pass, consumed by [`super::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub(super) arch: Arch,
    pub(super) f_in: usize,
    pub(super) g: usize,
    pub(super) n_taps: usize,
    pub(super) n_agents: usize,
    pub(super) steps: Vec<TapeStep>,
}

impl ForwardTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl ControllerState {
    pub fn new(params: &ControllerParams, n_agents: usize) -> Self {
        let k = params.n_taps();
        let g = params.g();
        let recurrent = params.arch == Arch::Grnn;
        ControllerState {
            arch: params.arch,
            n_agents,
            input_buffer: AggregationBuffer::zeroed(k, n_agents, params.f_in()),
            hidden_buffer: recurrent.then(|| AggregationBuffer::zeroed(k, n_agents, g)),
            output_buffer: recurrent.then(|| AggregationBuffer::zeroed(k, n_agents, g)),
            z_prev: recurrent.then(|| Mat::zeros(n_agents, g)),
        }
    }

    /// Advance one sampling interval: ingest this step's graph and features,
    /// return the `n_agents x 2` actions.
    pub fn step(
        &mut self,
        params: &ControllerParams,
        graph: &GraphSnapshot,
        features: &Mat,
    ) -> Result<Mat> {
        Ok(self.step_inner(params, graph, features, false)?.0)
    }

    fn step_inner(
        &mut self,
        params: &ControllerParams,
        graph: &GraphSnapshot,
        features: &Mat,
        record: bool,
    ) -> Result<(Mat, Option<TapeStep>)> {
        if params.arch != self.arch {
            return Err(Error::InvalidState(format!(
                "controller state built for {} used with {} parameters",
                self.arch, params.arch
            )));
        }
        if features.shape() != (self.n_agents, params.f_in()) {
            return Err(Error::dims(
                "ControllerState::step features",
                format!("{:?}", (self.n_agents, params.f_in())),
                format!("{:?}", features.shape()),
            ));
        }
        if graph.n_agents() != self.n_agents {
            return Err(Error::dims(
                "ControllerState::step graph",
                format!("{} agents", self.n_agents),
                format!("{}", graph.n_agents()),
            ));
        }

        self.input_buffer = self.input_buffer.advanced(graph, features)?;

        let (readout_in, z, hidden_taps, output_taps) = match self.arch {
            Arch::Gc => {
                let filtered = params.input_bank.graph_conv(&self.input_buffer)?;
                (filtered, None, None, None)
            }
            Arch::Gcnn => {
                let filtered = params.input_bank.graph_conv(&self.input_buffer)?;
                (filtered.map(f64::tanh), None, None, None)
            }
            Arch::Grnn => {
                let hidden_bank = params
                    .hidden_bank
                    .as_ref()
                    .ok_or_else(|| Error::InvalidState("recurrent parameters lack a hidden bank".into()))?;
                let output_bank = params
                    .output_bank
                    .as_ref()
                    .ok_or_else(|| Error::InvalidState("recurrent parameters lack an output bank".into()))?;

                // hidden buffer aggregates { Z(t-1), Z(t-2), ... }
                let z_prev = self.z_prev.as_ref().expect("recurrent state");
                let hidden_buffer = self
                    .hidden_buffer
                    .as_ref()
                    .expect("recurrent state")
                    .advanced(graph, z_prev)?;

                let mut pre_z = params.input_bank.graph_conv(&self.input_buffer)?;
                pre_z.add_assign(&hidden_bank.graph_conv(&hidden_buffer)?)?;
                let z = pre_z.map(f64::tanh);

                // output buffer aggregates { Z(t), Z(t-1), ... }
                let output_buffer = self
                    .output_buffer
                    .as_ref()
                    .expect("recurrent state")
                    .advanced(graph, &z)?;
                let readout_in = output_bank.graph_conv(&output_buffer)?.map(f64::tanh);

                let hidden_taps = record.then(|| hidden_buffer.taps().to_vec());
                let output_taps = record.then(|| output_buffer.taps().to_vec());
                self.hidden_buffer = Some(hidden_buffer);
                self.output_buffer = Some(output_buffer);
                self.z_prev = Some(z.clone());
                (readout_in, Some(z), hidden_taps, output_taps)
            }
        };

        let mut actions = readout_in.matmul(&params.readout_w)?;
        for i in 0..actions.rows() {
            for c in 0..ACTION_DIM {
                let v = actions.get(i, c) + params.readout_b.get(0, c);
                actions.set(i, c, v);
            }
        }

        let tape_step = record.then(|| TapeStep {
            graph: graph.clone(),
            input_taps: self.input_buffer.taps().to_vec(),
            hidden_taps,
            output_taps,
            z,
            readout_in,
        });
        Ok((actions, tape_step))
    }
}

fn run(
    params: &ControllerParams,
    graphs: &GraphSequence,
    features: &[Mat],
    record: bool,
) -> Result<(Vec<Mat>, Option<ForwardTape>)> {
    if features.len() != graphs.len() {
        return Err(Error::dims(
            "forward feature sequence",
            format!("{} steps", graphs.len()),
            format!("{}", features.len()),
        ));
    }
    let n = graphs.n_agents();
    let mut state = ControllerState::new(params, n);
    let mut actions = Vec::with_capacity(features.len());
    let mut steps = record.then(Vec::new);
    for (graph, x) in graphs.iter().zip(features) {
        let (u, tape_step) = state.step_inner(params, graph, x, record)?;
        actions.push(u);
        if let (Some(steps), Some(tape_step)) = (steps.as_mut(), tape_step) {
            steps.push(tape_step);
        }
    }
    let tape = steps.map(|steps| ForwardTape {
        arch: params.arch,
        f_in: params.f_in(),
        g: params.g(),
        n_taps: params.n_taps(),
        n_agents: n,
        steps,
    });
    Ok((actions, tape))
}

/// Run any architecture over a recorded (graph, feature) sequence and return
/// the per-step `n_agents x 2` actions.
pub fn forward(
    params: &ControllerParams,
    graphs: &GraphSequence,
    features: &[Mat],
) -> Result<Vec<Mat>> {
    Ok(run(params, graphs, features, false)?.0)
}

/// Same as [`forward`], also returning the tape for the reverse pass.
pub fn forward_with_tape(
    params: &ControllerParams,
    graphs: &GraphSequence,
    features: &[Mat],
) -> Result<(Vec<Mat>, ForwardTape)> {
    let (actions, tape) = run(params, graphs, features, true)?;
    Ok((actions, tape.expect("tape requested")))
}

fn forward_expecting(
    arch: Arch,
    params: &ControllerParams,
    graphs: &GraphSequence,
    features: &[Mat],
) -> Result<Vec<Mat>> {
    if params.arch != arch {
        return Err(Error::InvalidState(format!(
            "expected {} parameters, got {}",
            arch, params.arch
        )));
    }
    forward(params, graphs, features)
}

/// Linear graph-filter controller.
pub fn forward_gc(
    params: &ControllerParams,
    graphs: &GraphSequence,
    features: &[Mat],
) -> Result<Vec<Mat>> {
    forward_expecting(Arch::Gc, params, graphs, features)
}

/// Graph convolution + tanh controller.
pub fn forward_gcnn(
    params: &ControllerParams,
    graphs: &GraphSequence,
    features: &[Mat],
) -> Result<Vec<Mat>> {
    forward_expecting(Arch::Gcnn, params, graphs, features)
}

/// Recurrent graph-network controller.
pub fn forward_grnn(
    params: &ControllerParams,
    graphs: &GraphSequence,
    features: &[Mat],
) -> Result<Vec<Mat>> {
    forward_expecting(Arch::Grnn, params, graphs, features)
}
