//! Property tests for the binary containers: write -> read -> write must be
//! byte-stable for arbitrary (valid) contents, not just the ones the
//! generator happens to produce.

use flocknet_cli::formats::{read_checkpoint, read_dataset, write_checkpoint, write_dataset};
use flocknet_core::controllers::{Arch, ControllerParams, FilterBank};
use flocknet_core::flocking::{Dataset, FlockingConfig, TrajectoryRecord};
use flocknet_core::graph::{GraphSequence, GraphSnapshot};
use flocknet_core::rng::stream_rng;
use flocknet_core::{Mat, ACTION_DIM, FEATURE_DIM};
use proptest::prelude::*;
use rand::Rng;

fn mat_seq(rng: &mut impl Rng, n: usize, t_len: usize, cols: usize) -> Vec<Mat> {
    (0..t_len)
        .map(|_| Mat::from_fn(n, cols, |_, _| rng.random_range(-5.0..5.0)))
        .collect()
}

fn synthetic_trajectory(n: usize, t_len: usize, seed: u64) -> TrajectoryRecord {
    let mut rng = stream_rng(seed, 0);
    let positions = mat_seq(&mut rng, n, t_len, 2);
    let velocities = mat_seq(&mut rng, n, t_len, 2);
    let features = mat_seq(&mut rng, n, t_len, FEATURE_DIM);
    let actions = mat_seq(&mut rng, n, t_len, ACTION_DIM);
    let graphs: Vec<GraphSnapshot> = (0..t_len)
        .map(|_| {
            let mut pairs = Vec::new();
            let mut degree = vec![0usize; n];
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < 0.5 {
                        pairs.push((i, j));
                        degree[i] += 1;
                        degree[j] += 1;
                    }
                }
            }
            let edges: Vec<(usize, usize, f64)> = pairs
                .into_iter()
                .flat_map(|(i, j)| {
                    [
                        (i, j, 1.0 / degree[j] as f64),
                        (j, i, 1.0 / degree[i] as f64),
                    ]
                })
                .collect();
            GraphSnapshot::from_weighted_edges(n, edges).unwrap()
        })
        .collect();
    TrajectoryRecord {
        positions,
        velocities,
        features,
        actions,
        graphs: GraphSequence::new(graphs).unwrap(),
        sampling_time: 0.01,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dataset_container_roundtrips(seed in any::<u64>(), n in 2usize..7, t_len in 1usize..5) {
        let config = FlockingConfig {
            n_agents: n,
            duration: t_len as f64 * 0.01,
            ..FlockingConfig::default()
        };
        let dataset = Dataset {
            config,
            seed,
            train: vec![synthetic_trajectory(n, t_len, seed)],
            valid: vec![synthetic_trajectory(n, t_len, seed ^ 1)],
            test: vec![synthetic_trajectory(n, t_len, seed ^ 2)],
        };
        let mut first = Vec::new();
        write_dataset(&mut first, &dataset).unwrap();
        let reread = read_dataset(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_dataset(&mut second, &reread).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn checkpoint_container_roundtrips(seed in any::<u64>(), g in 1usize..9, k in 1usize..5, arch_pick in 0u8..3) {
        let arch = match arch_pick {
            0 => Arch::Gc,
            1 => Arch::Gcnn,
            _ => Arch::Grnn,
        };
        let mut params = ControllerParams::init(arch, FEATURE_DIM, g, k, seed).unwrap();
        // make the payload less uniform than the initializer's range
        let mut rng = stream_rng(seed, 5);
        params.readout_b = Mat::from_fn(1, ACTION_DIM, |_, _| rng.random_range(-100.0..100.0));
        if arch == Arch::Grnn {
            let taps = (0..k)
                .map(|_| Mat::from_fn(g, g, |_, _| rng.random_range(-3.0..3.0)))
                .collect();
            params.hidden_bank = Some(FilterBank::from_taps(taps).unwrap());
        }
        let mut first = Vec::new();
        write_checkpoint(&mut first, &params).unwrap();
        let reread = read_checkpoint(first.as_slice()).unwrap();
        prop_assert_eq!(&reread, &params);
        let mut second = Vec::new();
        write_checkpoint(&mut second, &reread).unwrap();
        prop_assert_eq!(first, second);
    }
}
