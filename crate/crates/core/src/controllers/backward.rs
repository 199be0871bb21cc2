//! Reverse-mode gradients for all three controllers.
//!
//! Adjoints flow backwards through the readout, the tanh nonlinearities
//! and, for the recurrent architecture, through time: every buffer tap
//! `Yk(t) = S(t) Y{k-1}(t-1)` sends its adjoint to tap `k-1` of the
//! previous step through the transposed shift. Graph entries are data,
//! never differentiated. For the purely convolutional architectures the
//! buffers hold raw features, so no adjoint crosses step boundaries at all.

use super::forward::ForwardTape;
use super::{Arch, ControllerParams};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::ACTION_DIM;

/// Column sums as a `1 x cols` row.
fn column_sums(m: &Mat) -> Mat {
    let mut out = Mat::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (acc, &v) in out.row_mut(0).iter_mut().zip(m.row(i)) {
            *acc += v;
        }
    }
    out
}

/// d tanh = 1 - tanh^2, taking the already-computed tanh values.
fn tanh_backward(upstream: &Mat, tanh_value: &Mat) -> Result<Mat> {
    upstream.hadamard(&tanh_value.map(|v| 1.0 - v * v))
}

/// Gradient of a scalar loss with respect to every parameter, given the
/// tape of the matching forward pass and the loss gradient on each step's
/// actions. The result reuses the [`ControllerParams`] tree shape.
pub fn backward(
    params: &ControllerParams,
    tape: &ForwardTape,
    loss_grad_on_actions: &[Mat],
) -> Result<ControllerParams> {
    if tape.arch != params.arch
        || tape.f_in != params.f_in()
        || tape.g != params.g()
        || tape.n_taps != params.n_taps()
    {
        return Err(Error::InvalidState(
            "tape was produced by differently-shaped parameters".into(),
        ));
    }
    if loss_grad_on_actions.len() != tape.steps.len() {
        return Err(Error::dims(
            "backward loss gradient steps",
            format!("{}", tape.steps.len()),
            format!("{}", loss_grad_on_actions.len()),
        ));
    }
    for g in loss_grad_on_actions {
        if g.shape() != (tape.n_agents, ACTION_DIM) {
            return Err(Error::dims(
                "backward loss gradient shape",
                format!("{:?}", (tape.n_agents, ACTION_DIM)),
                format!("{:?}", g.shape()),
            ));
        }
    }

    let mut grads = params.zeros_like();
    match params.arch {
        Arch::Gc | Arch::Gcnn => backward_convolutional(params, tape, loss_grad_on_actions, &mut grads)?,
        Arch::Grnn => backward_recurrent(params, tape, loss_grad_on_actions, &mut grads)?,
    }
    Ok(grads)
}

fn backward_convolutional(
    params: &ControllerParams,
    tape: &ForwardTape,
    loss_grads: &[Mat],
    grads: &mut ControllerParams,
) -> Result<()> {
    for (step, d_u) in tape.steps.iter().zip(loss_grads) {
        grads
            .readout_w
            .add_assign(&step.readout_in.transpose_matmul(d_u)?)?;
        grads.readout_b.add_assign(&column_sums(d_u))?;

        let d_readout_in = d_u.matmul_transpose(&params.readout_w)?;
        let d_conv = match params.arch {
            Arch::Gc => d_readout_in,
            Arch::Gcnn => tanh_backward(&d_readout_in, &step.readout_in)?,
            Arch::Grnn => unreachable!(),
        };
        for k in 0..params.n_taps() {
            grads
                .input_bank
                .tap_mut(k)
                .add_assign(&step.input_taps[k].transpose_matmul(&d_conv)?)?;
        }
    }
    Ok(())
}

fn backward_recurrent(
    params: &ControllerParams,
    tape: &ForwardTape,
    loss_grads: &[Mat],
    grads: &mut ControllerParams,
) -> Result<()> {
    let hidden_bank = params
        .hidden_bank
        .as_ref()
        .ok_or_else(|| Error::InvalidState("recurrent parameters lack a hidden bank".into()))?;
    let output_bank = params
        .output_bank
        .as_ref()
        .ok_or_else(|| Error::InvalidState("recurrent parameters lack an output bank".into()))?;
    let grads_hidden = grads.hidden_bank.as_mut().expect("zeros_like keeps banks");
    let grads_output = grads.output_bank.as_mut().expect("zeros_like keeps banks");

    let n = tape.n_agents;
    let h = params.g();
    let k_taps = params.n_taps();

    // adjoints arriving from the future, indexed by tap, all at "time t"
    let mut carry_output: Vec<Mat> = (0..k_taps).map(|_| Mat::zeros(n, h)).collect();
    let mut carry_hidden: Vec<Mat> = (0..k_taps).map(|_| Mat::zeros(n, h)).collect();
    // adjoint of Z(t) contributed by the next step's hidden buffer
    let mut carry_z = Mat::zeros(n, h);

    for (step, d_u) in tape.steps.iter().zip(loss_grads).rev() {
        let z = step.z.as_ref().expect("recurrent tape stores z");
        let output_taps = step.output_taps.as_ref().expect("recurrent tape");
        let hidden_taps = step.hidden_taps.as_ref().expect("recurrent tape");

        // readout and output convolution
        grads
            .readout_w
            .add_assign(&step.readout_in.transpose_matmul(d_u)?)?;
        grads.readout_b.add_assign(&column_sums(d_u))?;
        let d_r = d_u.matmul_transpose(&params.readout_w)?;
        let d_pre_r = tanh_backward(&d_r, &step.readout_in)?;

        let mut g_output: Vec<Mat> = Vec::with_capacity(k_taps);
        for k in 0..k_taps {
            grads_output
                .tap_mut(k)
                .add_assign(&output_taps[k].transpose_matmul(&d_pre_r)?)?;
            let mut g = d_pre_r.matmul_transpose(output_bank.tap(k))?;
            g.add_assign(&carry_output[k])?;
            g_output.push(g);
        }

        // tap 0 of the output buffer is Z(t) itself
        let mut d_z = carry_z;
        d_z.add_assign(&g_output[0])?;

        // hidden state and the two convolutions feeding it
        let d_pre_z = tanh_backward(&d_z, z)?;
        let mut g_hidden: Vec<Mat> = Vec::with_capacity(k_taps);
        for k in 0..k_taps {
            grads
                .input_bank
                .tap_mut(k)
                .add_assign(&step.input_taps[k].transpose_matmul(&d_pre_z)?)?;
            grads_hidden
                .tap_mut(k)
                .add_assign(&hidden_taps[k].transpose_matmul(&d_pre_z)?)?;
            let mut g = d_pre_z.matmul_transpose(hidden_bank.tap(k))?;
            g.add_assign(&carry_hidden[k])?;
            g_hidden.push(g);
        }

        // push adjoints one step into the past: tap k at time t came from
        // tap k-1 at t-1 through S(t), and tap 0 of the hidden buffer was
        // Z(t-1)
        for k in 0..k_taps - 1 {
            carry_output[k] = step.graph.shift_transpose(&g_output[k + 1])?;
            carry_hidden[k] = step.graph.shift_transpose(&g_hidden[k + 1])?;
        }
        if k_taps >= 1 {
            carry_output[k_taps - 1] = Mat::zeros(n, h);
            carry_hidden[k_taps - 1] = Mat::zeros(n, h);
        }
        carry_z = g_hidden.swap_remove(0);
    }
    Ok(())
}
