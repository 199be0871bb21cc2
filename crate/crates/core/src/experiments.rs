//! The three closed-loop studies: hyperparameter sweep, robustness to
//! initial velocity and communication radius, and zero-shot transfer to
//! larger teams.
//!
//! Every cell of a study is an independent job keyed by (architecture,
//! grid point, realization); jobs run on the rayon pool and a single
//! aggregation pass assembles the report afterwards. A realization bundles
//! one dataset seed with one parameter-init seed, so rerunning any cell
//! with its recorded seed reproduces its raw value exactly.

use crate::controllers::{Arch, ControllerParams};
use crate::error::{Error, Result};
use crate::flocking::{
    generate_dataset, rollout, sample_initial_state, Controller, FlockingConfig, SwarmState,
};
use crate::rng::{stream_rng, streams};
use crate::training::{train, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which quantity a robustness study sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobustnessKind {
    InitialVelocity,
    CommRadius,
}

impl RobustnessKind {
    pub fn grid_name(self) -> &'static str {
        match self {
            RobustnessKind::InitialVelocity => "velocity_range",
            RobustnessKind::CommRadius => "comm_radius",
        }
    }
}

/// Best (G, K) cell to carry into the robustness and transfer studies.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BestCell {
    pub g: usize,
    pub k: usize,
}

/// Full description of a study: grids, scale, and the base scenario and
/// optimizer settings shared by every cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub architectures: Vec<Arch>,
    pub g_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub velocity_grid: Vec<f64>,
    pub radius_grid: Vec<f64>,
    pub team_sizes: Vec<usize>,
    pub n_realizations: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Best cells used by robustness/transfer when no sweep result is fed in.
    pub best_gc: BestCell,
    pub best_gcnn: BestCell,
    pub best_grnn: BestCell,
    pub flocking: FlockingConfig,
    pub training: TrainConfig,
    pub base_seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            architectures: vec![Arch::Gc, Arch::Gcnn, Arch::Grnn],
            g_values: vec![16, 32, 64],
            k_values: vec![2, 3, 4],
            velocity_grid: vec![1.5, 2.25, 3.0, 3.75, 4.5],
            radius_grid: vec![1.5, 2.0, 2.5, 3.0, 3.5],
            team_sizes: vec![50, 62, 75, 87, 100],
            n_realizations: 5,
            n_train: 400,
            n_valid: 20,
            n_test: 20,
            best_gc: BestCell { g: 32, k: 4 },
            best_gcnn: BestCell { g: 64, k: 3 },
            best_grnn: BestCell { g: 64, k: 3 },
            flocking: FlockingConfig::default(),
            training: TrainConfig::default(),
            base_seed: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.flocking.validate()?;
        self.training.validate()?;
        if self.architectures.is_empty() {
            return Err(Error::Config("no architectures selected".into()));
        }
        if self.n_realizations == 0 {
            return Err(Error::Config("n_realizations must be at least 1".into()));
        }
        if self.g_values.is_empty()
            || self.k_values.is_empty()
            || self.velocity_grid.is_empty()
            || self.radius_grid.is_empty()
            || self.team_sizes.is_empty()
        {
            return Err(Error::Config("experiment grids must be non-empty".into()));
        }
        if self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        Ok(())
    }

    /// Shrink to a scale that finishes on a workstation: a tenth of the
    /// trajectories, a third of the epochs, two realizations. The batch
    /// shrinks with the training split so each epoch still takes the same
    /// twenty optimizer steps as the reference protocol. Grids are kept.
    pub fn desk_scale(mut self) -> Self {
        self.n_train = 40;
        self.n_valid = 4;
        self.n_test = 20;
        self.n_realizations = 2;
        self.training.epochs = 10;
        self.training.batch_size = 2;
        self
    }

    pub fn best_cell(&self, arch: Arch) -> BestCell {
        match arch {
            Arch::Gc => self.best_gc,
            Arch::Gcnn => self.best_gcnn,
            Arch::Grnn => self.best_grnn,
        }
    }

    fn realization_seed(&self, realization: usize) -> u64 {
        self.base_seed.wrapping_add(realization as u64)
    }
}

/// Raw values of one cell across realizations.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub arch: Arch,
    pub g: usize,
    pub k: usize,
    pub n_agents: usize,
    /// Swept value for robustness grids; `None` for sweep/transfer cells.
    pub grid_value: Option<f64>,
    pub seeds: Vec<u64>,
    /// Mean closed-loop total cost over the test trajectories, one entry
    /// per realization.
    pub costs: Vec<f64>,
    /// Expert baseline on the same initial conditions, per realization.
    pub expert_costs: Vec<f64>,
}

impl CellReport {
    pub fn mean_cost(&self) -> f64 {
        mean(&self.costs)
    }

    pub fn std_cost(&self) -> f64 {
        std_dev(&self.costs)
    }

    /// Per-realization cost divided by the expert's cost, averaged.
    pub fn mean_relative(&self) -> f64 {
        let ratios: Vec<f64> = self
            .costs
            .iter()
            .zip(&self.expert_costs)
            .map(|(c, e)| c / e)
            .collect();
        mean(&ratios)
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Aggregated result of one study.
#[derive(Debug, Clone)]
pub struct CostReport {
    /// `sweep`, `velocity-robustness`, `radius-robustness` or `transfer`.
    pub experiment: String,
    /// Name of the swept quantity, when there is one.
    pub grid_name: Option<String>,
    pub cells: Vec<CellReport>,
}

impl CostReport {
    /// Lowest-mean-cost (G, K) per architecture.
    pub fn best_per_arch(&self) -> Vec<(Arch, BestCell, f64)> {
        let mut out: Vec<(Arch, BestCell, f64)> = Vec::new();
        for cell in &self.cells {
            let mean = cell.mean_cost();
            match out.iter_mut().find(|(a, _, _)| *a == cell.arch) {
                Some((_, best, best_mean)) => {
                    if mean < *best_mean {
                        *best = BestCell { g: cell.g, k: cell.k };
                        *best_mean = mean;
                    }
                }
                None => out.push((cell.arch, BestCell { g: cell.g, k: cell.k }, mean)),
            }
        }
        out
    }

    /// One row per cell per realization. Fields that do not apply to the
    /// experiment are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "experiment,arch,g,k,n_agents,grid_param,grid_value,realization,seed,cost,expert_cost,relative_cost\n",
        );
        let grid_name = self.grid_name.as_deref().unwrap_or("");
        for cell in &self.cells {
            for (r, ((&cost, &expert), &seed)) in cell
                .costs
                .iter()
                .zip(&cell.expert_costs)
                .zip(&cell.seeds)
                .enumerate()
            {
                let grid_value = cell
                    .grid_value
                    .map_or(String::new(), |v| format!("{v}"));
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6}\n",
                    self.experiment,
                    cell.arch,
                    cell.g,
                    cell.k,
                    cell.n_agents,
                    grid_name,
                    grid_value,
                    r,
                    seed,
                    cost,
                    expert,
                    cost / expert,
                ));
            }
        }
        out
    }

    /// Human-readable grid, one block per architecture.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for &(arch, _, _) in &self.best_per_arch() {
            out.push_str(&format!("{arch}:\n"));
            for cell in self.cells.iter().filter(|c| c.arch == arch) {
                let label = match cell.grid_value {
                    Some(v) => format!("{}={v}", self.grid_name.as_deref().unwrap_or("value")),
                    None if self.experiment == "transfer" => format!("N={}", cell.n_agents),
                    None => format!("G={} K={}", cell.g, cell.k),
                };
                out.push_str(&format!(
                    "  {label}: {:.1} (+/- {:.1})\n",
                    cell.mean_cost(),
                    cell.std_cost()
                ));
            }
        }
        out
    }
}

/// Closed-loop total cost of a trained controller from each initial state.
pub fn evaluate_closed_loop(
    params: &ControllerParams,
    initials: &[SwarmState],
    config: &FlockingConfig,
) -> Result<Vec<f64>> {
    initials
        .par_iter()
        .map(|initial| {
            let (_, trace) = rollout(&Controller::Learned(params), initial, config)?;
            Ok(trace.total())
        })
        .collect()
}

/// Hyperparameter sweep: train and evaluate every (architecture, G, K) cell
/// for every realization.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<CostReport> {
    spec.validate()?;
    let cells: Vec<(Arch, usize, usize)> = spec
        .architectures
        .iter()
        .flat_map(|&arch| {
            spec.g_values
                .iter()
                .flat_map(move |&g| spec.k_values.iter().map(move |&k| (arch, g, k)))
        })
        .collect();

    let mut report = CostReport {
        experiment: "sweep".into(),
        grid_name: None,
        cells: cells
            .iter()
            .map(|&(arch, g, k)| CellReport {
                arch,
                g,
                k,
                n_agents: spec.flocking.n_agents,
                grid_value: None,
                seeds: Vec::new(),
                costs: Vec::new(),
                expert_costs: Vec::new(),
            })
            .collect(),
    };

    for r in 0..spec.n_realizations {
        let seed = spec.realization_seed(r);
        let dataset = generate_dataset(&spec.flocking, spec.n_train, spec.n_valid, spec.n_test, seed)?;
        let initials: Vec<SwarmState> = dataset.test.iter().map(|t| t.initial_state()).collect();
        let expert_cost = mean(
            &dataset
                .test
                .iter()
                .map(|t| t.total_cost())
                .collect::<Vec<_>>(),
        );

        let results: Vec<f64> = cells
            .par_iter()
            .map(|&(arch, g, k)| {
                let trained = train(arch, &dataset, &seeded(&spec.training, seed), g, k)?;
                let costs = evaluate_closed_loop(&trained.best_params, &initials, &spec.flocking)?;
                Ok(mean(&costs))
            })
            .collect::<Result<_>>()?;

        for (cell, mean_cost) in report.cells.iter_mut().zip(results) {
            cell.seeds.push(seed);
            cell.costs.push(mean_cost);
            cell.expert_costs.push(expert_cost);
        }
    }
    Ok(report)
}

fn seeded(config: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..config.clone()
    }
}

/// Controllers trained at the base scenario's best cells, one model per
/// (architecture, realization). Input to the robustness and transfer runs.
pub struct BestModels {
    pub entries: Vec<(Arch, BestCell, Vec<ControllerParams>)>,
}

/// Train each architecture at its best (G, K) for every realization.
pub fn train_best_models(spec: &ExperimentSpec) -> Result<BestModels> {
    spec.validate()?;
    let mut per_arch: Vec<Vec<ControllerParams>> =
        spec.architectures.iter().map(|_| Vec::new()).collect();
    for r in 0..spec.n_realizations {
        let seed = spec.realization_seed(r);
        let dataset = generate_dataset(&spec.flocking, spec.n_train, spec.n_valid, spec.n_test, seed)?;
        let models: Vec<ControllerParams> = spec
            .architectures
            .par_iter()
            .map(|&arch| {
                let cell = spec.best_cell(arch);
                let trained = train(arch, &dataset, &seeded(&spec.training, seed), cell.g, cell.k)?;
                Ok(trained.best_params)
            })
            .collect::<Result<_>>()?;
        for (bucket, model) in per_arch.iter_mut().zip(models) {
            bucket.push(model);
        }
    }
    Ok(BestModels {
        entries: spec
            .architectures
            .iter()
            .zip(per_arch)
            .map(|(&arch, models)| (arch, spec.best_cell(arch), models))
            .collect(),
    })
}

/// Fresh seeded initial states for an evaluation grid point.
fn sample_eval_initials(
    config: &FlockingConfig,
    n: usize,
    seed: u64,
    salt: u64,
) -> Result<Vec<SwarmState>> {
    (0..n)
        .into_par_iter()
        .map(|idx| {
            let mut rng = stream_rng(seed, streams::EVAL + salt * (1 << 20) + idx as u64);
            sample_initial_state(config, &mut rng)
        })
        .collect()
}

/// Robustness study: evaluate the trained best-cell models zero-shot on
/// initial conditions whose velocity range or communication radius is
/// swept, and report the cost relative to the expert on the same states.
pub fn run_robustness(
    spec: &ExperimentSpec,
    kind: RobustnessKind,
    models: &BestModels,
) -> Result<CostReport> {
    spec.validate()?;
    let grid = match kind {
        RobustnessKind::InitialVelocity => &spec.velocity_grid,
        RobustnessKind::CommRadius => &spec.radius_grid,
    };
    let experiment = match kind {
        RobustnessKind::InitialVelocity => "velocity-robustness",
        RobustnessKind::CommRadius => "radius-robustness",
    };

    let mut cells: Vec<CellReport> = models
        .entries
        .iter()
        .flat_map(|(arch, best, _)| {
            grid.iter().map(move |&value| CellReport {
                arch: *arch,
                g: best.g,
                k: best.k,
                n_agents: spec.flocking.n_agents,
                grid_value: Some(value),
                seeds: Vec::new(),
                costs: Vec::new(),
                expert_costs: Vec::new(),
            })
        })
        .collect();

    for r in 0..spec.n_realizations {
        let seed = spec.realization_seed(r);
        for (value_idx, &value) in grid.iter().enumerate() {
            let eval_config = match kind {
                RobustnessKind::InitialVelocity => FlockingConfig {
                    vel_range: value,
                    bias_range: value,
                    ..spec.flocking.clone()
                },
                RobustnessKind::CommRadius => FlockingConfig {
                    comm_radius: value,
                    ..spec.flocking.clone()
                },
            };
            let initials =
                sample_eval_initials(&eval_config, spec.n_test, seed, value_idx as u64)?;
            let expert_cost = {
                let costs: Vec<f64> = initials
                    .par_iter()
                    .map(|s| Ok(rollout(&Controller::Expert, s, &eval_config)?.1.total()))
                    .collect::<Result<_>>()?;
                mean(&costs)
            };
            for (arch, _, params_per_realization) in &models.entries {
                let params = &params_per_realization[r];
                let costs = evaluate_closed_loop(params, &initials, &eval_config)?;
                let cell = cells
                    .iter_mut()
                    .find(|c| c.arch == *arch && c.grid_value == Some(value))
                    .expect("cell exists");
                cell.seeds.push(seed);
                cell.costs.push(mean(&costs));
                cell.expert_costs.push(expert_cost);
            }
        }
    }
    Ok(CostReport {
        experiment: experiment.into(),
        grid_name: Some(kind.grid_name().into()),
        cells,
    })
}

/// Transfer study: evaluate the unchanged models on larger teams. The
/// placement disc scales with sqrt(N), holding agent density fixed.
pub fn run_transfer(spec: &ExperimentSpec, models: &BestModels) -> Result<CostReport> {
    spec.validate()?;
    let mut cells: Vec<CellReport> = models
        .entries
        .iter()
        .flat_map(|(arch, best, _)| {
            spec.team_sizes.iter().map(move |&n| CellReport {
                arch: *arch,
                g: best.g,
                k: best.k,
                n_agents: n,
                grid_value: None,
                seeds: Vec::new(),
                costs: Vec::new(),
                expert_costs: Vec::new(),
            })
        })
        .collect();

    for r in 0..spec.n_realizations {
        let seed = spec.realization_seed(r);
        for (size_idx, &n_agents) in spec.team_sizes.iter().enumerate() {
            let eval_config = FlockingConfig {
                n_agents,
                ..spec.flocking.clone()
            };
            let initials = sample_eval_initials(&eval_config, spec.n_test, seed, size_idx as u64)?;
            let expert_cost = {
                let costs: Vec<f64> = initials
                    .par_iter()
                    .map(|s| Ok(rollout(&Controller::Expert, s, &eval_config)?.1.total()))
                    .collect::<Result<_>>()?;
                mean(&costs)
            };
            for (arch, _, params_per_realization) in &models.entries {
                let params = &params_per_realization[r];
                let costs = evaluate_closed_loop(params, &initials, &eval_config)?;
                let cell = cells
                    .iter_mut()
                    .find(|c| c.arch == *arch && c.n_agents == n_agents)
                    .expect("cell exists");
                cell.seeds.push(seed);
                cell.costs.push(mean(&costs));
                cell.expert_costs.push(expert_cost);
            }
        }
    }
    Ok(CostReport {
        experiment: "transfer".into(),
        grid_name: None,
        cells,
    })
}
