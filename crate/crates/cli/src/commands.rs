//! Implementations behind the subcommands. Each returns through
//! [`crate::error::Result`] so the binary can map failures onto exit codes;
//! tests call these directly.

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats;
use flocknet_core::controllers::Arch;
use flocknet_core::experiments::{
    run_robustness, run_sweep, run_transfer, train_best_models, CostReport, RobustnessKind,
};
use flocknet_core::flocking::{
    generate_dataset, rollout, sample_initial_state, Controller, FlockingConfig, SwarmState,
    TrajectoryRecord,
};
use flocknet_core::render_line_chart;
use flocknet_core::rng::{stream_rng, streams};
use rayon::prelude::*;
use flocknet_core::training::train;
use std::path::Path;

/// Tolerance for `gradcheck`: any architecture above this fails the run.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

fn ensure_parent_writable(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() && !parent.exists() {
            return Err(CliError::Config(format!(
                "output directory {} does not exist",
                parent.display()
            )));
        }
    }
    Ok(())
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

fn split_mean_cost(records: &[TrajectoryRecord]) -> f64 {
    records.iter().map(|r| r.total_cost()).sum::<f64>() / records.len() as f64
}

/// Generate an expert dataset and write the FLK1 container.
pub fn cmd_generate(config: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    ensure_parent_writable(out)?;
    let sizes = &config.dataset;
    let dataset = generate_dataset(
        &config.flocking,
        sizes.n_train,
        sizes.n_valid,
        sizes.n_test,
        seed,
    )?;
    formats::write_dataset_file(out, &dataset)?;
    println!(
        "wrote {} (train {}, valid {}, test {}; N={}, T={})",
        out.display(),
        dataset.train.len(),
        dataset.valid.len(),
        dataset.test.len(),
        config.flocking.n_agents,
        config.flocking.n_steps(),
    );
    println!(
        "expert mean total cost: train {:.2}, valid {:.2}, test {:.2}",
        split_mean_cost(&dataset.train),
        split_mean_cost(&dataset.valid),
        split_mean_cost(&dataset.test),
    );
    Ok(())
}

/// Train the configured model on a dataset file and write the FLKM
/// checkpoint of the validation-best parameters.
pub fn cmd_train(
    config: &RunConfig,
    dataset_path: &Path,
    out: &Path,
    log_path: Option<&Path>,
) -> Result<()> {
    ensure_parent_writable(out)?;
    if let Some(p) = log_path {
        ensure_parent_writable(p)?;
    }
    let dataset = formats::read_dataset_file(dataset_path)?;
    let model = &config.model;
    let result = train(model.arch, &dataset, &config.training, model.g, model.k)?;

    formats::write_checkpoint_file(out, &result.best_params)?;
    let log_text = result.log.to_plain_text();
    print!("{log_text}");
    println!(
        "best epoch {} (validation loss {:.6e}); checkpoint written to {}",
        result.best_epoch,
        result.best_valid_loss,
        out.display()
    );
    if let Some(p) = log_path {
        std::fs::write(p, log_text)?;
    }
    Ok(())
}

/// Closed-loop evaluation of a checkpoint on freshly sampled initial
/// conditions, against the expert baseline on the same conditions.
#[derive(Debug)]
pub struct EvalSummary {
    pub controller_mean: f64,
    pub controller_std: f64,
    pub expert_mean: f64,
    pub expert_std: f64,
    pub per_trajectory: Vec<(f64, f64)>,
}

pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: &Path,
    expect_arch: Option<Arch>,
    seed: u64,
    n_eval: usize,
    out_csv: Option<&Path>,
) -> Result<EvalSummary> {
    if let Some(p) = out_csv {
        ensure_parent_writable(p)?;
    }
    let params = formats::read_checkpoint_file(checkpoint)?;
    if let Some(expected) = expect_arch {
        if expected != params.arch {
            return Err(CliError::Config(format!(
                "checkpoint holds a {} controller but --arch asked for {}",
                params.arch, expected
            )));
        }
    }
    // n_agents may differ from the training team size: parameters transfer
    let eval_config: &FlockingConfig = &config.flocking;

    let initials: Vec<SwarmState> = (0..n_eval)
        .map(|idx| {
            let mut rng = stream_rng(seed, streams::EVAL + idx as u64);
            sample_initial_state(eval_config, &mut rng)
        })
        .collect::<flocknet_core::Result<_>>()?;

    let rows: Vec<(f64, f64)> = initials
        .par_iter()
        .map(|initial| {
            let learned = rollout(&Controller::Learned(&params), initial, eval_config)?
                .1
                .total();
            let expert = rollout(&Controller::Expert, initial, eval_config)?.1.total();
            Ok((learned, expert))
        })
        .collect::<Result<_>>()?;

    let (controller_mean, controller_std) =
        mean_and_std(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let (expert_mean, expert_std) = mean_and_std(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    println!(
        "{} (G={}, K={}) on N={}: cost {:.2} (+/- {:.2}); expert {:.2} (+/- {:.2})",
        params.arch,
        params.g(),
        params.n_taps(),
        eval_config.n_agents,
        controller_mean,
        controller_std,
        expert_mean,
        expert_std
    );

    if let Some(path) = out_csv {
        let mut csv = String::from("trajectory,seed,cost,expert_cost,relative_cost\n");
        for (idx, (learned, expert)) in rows.iter().enumerate() {
            csv.push_str(&format!(
                "{idx},{seed},{learned:.6},{expert:.6},{:.6}\n",
                learned / expert
            ));
        }
        std::fs::write(path, csv)?;
    }
    Ok(EvalSummary {
        controller_mean,
        controller_std,
        expert_mean,
        expert_std,
        per_trajectory: rows,
    })
}

fn finish_report(report: &CostReport, out_csv: &Path) -> Result<()> {
    std::fs::write(out_csv, report.to_csv())?;
    print!("{}", report.to_table());
    println!("rows written to {}", out_csv.display());
    Ok(())
}

/// Hyperparameter sweep over (G, K) per architecture.
pub fn cmd_sweep(config: &RunConfig, seed: u64, desk: bool, out_csv: &Path) -> Result<()> {
    ensure_parent_writable(out_csv)?;
    let mut spec = config.experiment_spec(seed);
    if desk {
        spec = spec.desk_scale();
    }
    let cells =
        spec.architectures.len() * spec.g_values.len() * spec.k_values.len() * spec.n_realizations;
    eprintln!(
        "sweep: {} cells x realizations ({} trajectories of training data per realization)",
        cells, spec.n_train
    );
    let report = run_sweep(&spec)?;
    for (arch, best, mean) in report.best_per_arch() {
        println!("best {arch}: G={} K={} (mean cost {mean:.1})", best.g, best.k);
    }
    finish_report(&report, out_csv)
}

fn robustness_chart(report: &CostReport, x_label: &str) -> String {
    let mut series = Vec::new();
    for (arch, _, _) in report.best_per_arch() {
        let mut points: Vec<(f64, f64)> = report
            .cells
            .iter()
            .filter(|c| c.arch == arch)
            .map(|c| (c.grid_value.unwrap_or_default(), c.mean_relative()))
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push((arch.to_string(), points));
    }
    render_line_chart("cost relative to the expert", x_label, "cost / expert cost", &series)
}

/// Robustness to initial velocity and communication radius: train the best
/// cells once, then evaluate them zero-shot across both grids.
pub fn cmd_robustness(config: &RunConfig, seed: u64, desk: bool, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut spec = config.experiment_spec(seed);
    if desk {
        spec = spec.desk_scale();
    }
    eprintln!(
        "robustness: training {} architectures x {} realizations at their best cells",
        spec.architectures.len(),
        spec.n_realizations
    );
    let models = train_best_models(&spec)?;

    for (kind, x_label) in [
        (RobustnessKind::InitialVelocity, "initial velocity range (m/s)"),
        (RobustnessKind::CommRadius, "communication radius (m)"),
    ] {
        let report = run_robustness(&spec, kind, &models)?;
        let stem = match kind {
            RobustnessKind::InitialVelocity => "robustness_velocity",
            RobustnessKind::CommRadius => "robustness_radius",
        };
        let csv_path = out_dir.join(format!("{stem}.csv"));
        let svg_path = out_dir.join(format!("{stem}.svg"));
        std::fs::write(&svg_path, robustness_chart(&report, x_label))?;
        finish_report(&report, &csv_path)?;
        println!("chart written to {}", svg_path.display());
    }
    Ok(())
}

/// Transfer at scale: evaluate models trained on the base team size on
/// larger teams without retraining.
pub fn cmd_transfer(config: &RunConfig, seed: u64, desk: bool, out_csv: &Path) -> Result<()> {
    ensure_parent_writable(out_csv)?;
    let mut spec = config.experiment_spec(seed);
    if desk {
        spec = spec.desk_scale();
    }
    eprintln!(
        "transfer: training {} architectures x {} realizations, evaluating on teams {:?}",
        spec.architectures.len(),
        spec.n_realizations,
        spec.team_sizes
    );
    let models = train_best_models(&spec)?;
    let report = run_transfer(&spec, &models)?;
    finish_report(&report, out_csv)
}

/// Verify the reverse-mode gradients of all three architectures against
/// central finite differences. Returns the per-architecture maxima.
pub fn cmd_gradcheck() -> Result<Vec<(Arch, f64)>> {
    let mut results = Vec::new();
    let mut worst: Option<(Arch, f64)> = None;
    for arch in [Arch::Gc, Arch::Gcnn, Arch::Grnn] {
        let err = flocknet_core::training::gradient_check(arch, 8, 3, 5, 4, 1)?;
        let pass = err <= GRADCHECK_TOLERANCE;
        println!(
            "gradcheck {arch}: max relative error {err:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e}) {}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass && worst.as_ref().is_none_or(|(_, w)| err > *w) {
            worst = Some((arch, err));
        }
        results.push((arch, err));
    }
    if let Some((arch, err)) = worst {
        return Err(CliError::CheckFailed(format!(
            "{arch} gradient error {err:.3e} exceeds {GRADCHECK_TOLERANCE:.0e}"
        )));
    }
    Ok(results)
}
