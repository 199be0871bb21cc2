//! Decentralized controller parametrizations.
//!
//! Three maps from feature sequences to per-agent actions, all built from
//! delayed graph convolutions so that every output respects the one-hop-
//! per-step information structure:
//!
//! * `Gc` — a single linear graph filter followed by the readout,
//! * `Gcnn` — graph filter, entrywise tanh, readout,
//! * `Grnn` — a recurrent hidden graph signal updated by input and hidden
//!   convolutions, mapped to actions through an output convolution.
//!
//! Coefficients are shared across agents, so trained parameters evaluate on
//! any team size. Forward passes can record a tape; [`backward`] replays it
//! for exact reverse-mode gradients (see `backward.rs`).

mod backward;
mod forward;

pub use backward::backward;
pub use forward::{
    forward, forward_gc, forward_gcnn, forward_grnn, forward_with_tape, ControllerState,
    ForwardTape,
};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{stream_rng, streams};
use crate::ACTION_DIM;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Controller architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gc,
    Gcnn,
    Grnn,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Gc => "gc",
            Arch::Gcnn => "gcnn",
            Arch::Grnn => "grnn",
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gc" => Ok(Arch::Gc),
            "gcnn" => Ok(Arch::Gcnn),
            "grnn" => Ok(Arch::Grnn),
            other => Err(Error::InvalidArgument(format!(
                "unknown architecture '{other}' (expected gc, gcnn or grnn)"
            ))),
        }
    }
}

/// One bank of convolution coefficients: `n_taps` matrices, each
/// `f_in x f_out`, tap k weighting the k-hop (k-step delayed) aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    taps: Vec<Mat>,
}

impl FilterBank {
    pub fn zeros(n_taps: usize, f_in: usize, f_out: usize) -> Self {
        FilterBank {
            taps: (0..n_taps).map(|_| Mat::zeros(f_in, f_out)).collect(),
        }
    }

    pub fn from_taps(taps: Vec<Mat>) -> Result<Self> {
        let first = taps
            .first()
            .ok_or_else(|| Error::InvalidArgument("filter bank needs at least one tap".into()))?;
        let shape = first.shape();
        if taps.iter().any(|t| t.shape() != shape) {
            return Err(Error::InvalidArgument(
                "filter bank taps must share one shape".into(),
            ));
        }
        Ok(FilterBank { taps })
    }

    fn uniform(n_taps: usize, f_in: usize, f_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((n_taps * f_in) as f64).sqrt();
        FilterBank {
            taps: (0..n_taps)
                .map(|_| Mat::from_fn(f_in, f_out, |_, _| rng.random_range(-bound..bound)))
                .collect(),
        }
    }

    pub fn n_taps(&self) -> usize {
        self.taps.len()
    }

    pub fn f_in(&self) -> usize {
        self.taps[0].rows()
    }

    pub fn f_out(&self) -> usize {
        self.taps[0].cols()
    }

    pub fn tap(&self, k: usize) -> &Mat {
        &self.taps[k]
    }

    pub fn tap_mut(&mut self, k: usize) -> &mut Mat {
        &mut self.taps[k]
    }

    /// The delayed graph convolution: `sum_k Yk(t) * A_k` over the buffer's
    /// taps.
    pub fn graph_conv(&self, buffer: &crate::graph::AggregationBuffer) -> Result<Mat> {
        if buffer.n_taps() != self.n_taps() {
            return Err(Error::dims(
                "FilterBank::graph_conv taps",
                format!("{}", self.n_taps()),
                format!("{}", buffer.n_taps()),
            ));
        }
        let n = buffer.tap(0).rows();
        let mut out = Mat::zeros(n, self.f_out());
        for (y, a) in buffer.taps().iter().zip(&self.taps) {
            out.add_assign(&y.matmul(a)?)?;
        }
        Ok(out)
    }
}

/// Full parameter set of one controller.
///
/// `input_bank` maps the raw features into the width-`g` space; `hidden_bank`
/// and `output_bank` exist only for the recurrent architecture (hidden width
/// equals `g`). The readout is an affine per-agent map from `g` features to
/// the two acceleration components, shared across agents.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    pub arch: Arch,
    pub input_bank: FilterBank,
    pub hidden_bank: Option<FilterBank>,
    pub output_bank: Option<FilterBank>,
    /// g x 2 readout weights.
    pub readout_w: Mat,
    /// 1 x 2 readout bias.
    pub readout_b: Mat,
}

impl ControllerParams {
    /// Deterministic initialization: bank entries uniform on
    /// `[-1/sqrt(K * f_in), +1/sqrt(K * f_in)]`, readout weights uniform on
    /// `[-1/sqrt(g), +1/sqrt(g)]`, readout bias zero.
    pub fn init(arch: Arch, f_in: usize, g: usize, n_taps: usize, seed: u64) -> Result<Self> {
        if f_in == 0 || g == 0 || n_taps == 0 {
            return Err(Error::InvalidArgument(
                "feature width, g and tap count must be at least 1".into(),
            ));
        }
        let mut rng = stream_rng(seed, streams::PARAM_INIT);
        let input_bank = FilterBank::uniform(n_taps, f_in, g, &mut rng);
        let (hidden_bank, output_bank) = match arch {
            Arch::Gc | Arch::Gcnn => (None, None),
            Arch::Grnn => (
                Some(FilterBank::uniform(n_taps, g, g, &mut rng)),
                Some(FilterBank::uniform(n_taps, g, g, &mut rng)),
            ),
        };
        let readout_w = {
            let bound = 1.0 / (g as f64).sqrt();
            Mat::from_fn(g, ACTION_DIM, |_, _| rng.random_range(-bound..bound))
        };
        Ok(ControllerParams {
            arch,
            input_bank,
            hidden_bank,
            output_bank,
            readout_w,
            readout_b: Mat::zeros(1, ACTION_DIM),
        })
    }

    pub fn f_in(&self) -> usize {
        self.input_bank.f_in()
    }

    /// Output features of the convolution stage (hidden width for the GRNN).
    pub fn g(&self) -> usize {
        self.input_bank.f_out()
    }

    pub fn n_taps(&self) -> usize {
        self.input_bank.n_taps()
    }

    /// Same tree of tensors, all zero. Gradients and optimizer moments use
    /// this shape.
    pub fn zeros_like(&self) -> Self {
        let zero_bank =
            |b: &FilterBank| FilterBank::zeros(b.n_taps(), b.f_in(), b.f_out());
        ControllerParams {
            arch: self.arch,
            input_bank: zero_bank(&self.input_bank),
            hidden_bank: self.hidden_bank.as_ref().map(zero_bank),
            output_bank: self.output_bank.as_ref().map(zero_bank),
            readout_w: Mat::zeros(self.readout_w.rows(), self.readout_w.cols()),
            readout_b: Mat::zeros(1, ACTION_DIM),
        }
    }

    /// All parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&Mat> {
        let mut out: Vec<&Mat> = self.input_bank.taps.iter().collect();
        if let Some(b) = &self.hidden_bank {
            out.extend(b.taps.iter());
        }
        if let Some(b) = &self.output_bank {
            out.extend(b.taps.iter());
        }
        out.push(&self.readout_w);
        out.push(&self.readout_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out: Vec<&mut Mat> = self.input_bank.taps.iter_mut().collect();
        if let Some(b) = &mut self.hidden_bank {
            out.extend(b.taps.iter_mut());
        }
        if let Some(b) = &mut self.output_bank {
            out.extend(b.taps.iter_mut());
        }
        out.push(&mut self.readout_w);
        out.push(&mut self.readout_b);
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.rows() * t.cols()).sum()
    }

    /// Structural compatibility (same arch and tensor shapes).
    pub fn same_shape(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.shape() == b.shape())
            && self.tensors().len() == other.tensors().len()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled_assign(&mut self, other: &Self, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::InvalidState(
                "parameter trees have different shapes".into(),
            ));
        }
        let others = other.tensors();
        for (mine, theirs) in self.tensors_mut().into_iter().zip(others) {
            mine.add_scaled_assign(theirs, scale)?;
        }
        Ok(())
    }
}
