//! Shared setup helpers for the engine benchmarks.
//!
//! Everything here builds fixed, seeded inputs so benchmark numbers are
//! comparable across runs and machines.

use fedsim_core::federation::Experiment;
use fedsim_core::{
    dirichlet_partition, make_proxy, make_synthetic, ArchConfig, BootstrapConfig, ClientState,
    Dataset, ModelParams, PartitionSpec, RngStream, RoundConfig, StreamPurpose, TaskMode,
    WirePrecision,
};

pub const BENCH_SEED: u64 = 77;

/// The shipped default architecture; what `local_train` sees in practice.
pub fn default_arch() -> ArchConfig {
    ArchConfig::default()
}

/// A small-but-structured architecture for round-level benchmarks, so a
/// single round stays in the low-millisecond range.
pub fn small_arch() -> ArchConfig {
    ArchConfig {
        feature_dim: 16,
        latent_dim: 8,
        num_classes: 4,
        noise_dim: 4,
        extractor_hidden: vec![24],
        predictor_hidden: vec![],
        generator_hidden: vec![16],
    }
}

/// Client states sharing one seeded init, over a Dirichlet-partitioned
/// synthetic task.
pub fn make_clients(arch: &ArchConfig, num_clients: usize, n: usize) -> Vec<ClientState> {
    let train = make_synthetic(
        arch.num_classes,
        arch.feature_dim,
        n,
        2.0,
        TaskMode::Multiclass,
        BENCH_SEED,
    )
    .expect("bench dataset");
    let parts = dirichlet_partition(
        &train,
        &PartitionSpec {
            num_clients,
            alpha: 0.5,
            seed: BENCH_SEED,
        },
    )
    .expect("bench partition");
    let init = ModelParams::init(
        arch,
        &mut RngStream::for_purpose(BENCH_SEED, StreamPurpose::ModelInit, 0, 0),
    )
    .expect("bench init");
    parts
        .into_iter()
        .enumerate()
        .map(|(id, data)| ClientState {
            id,
            data,
            model: init.clone(),
        })
        .collect()
}

pub fn make_test_set(arch: &ArchConfig, n: usize) -> Dataset {
    make_synthetic(
        arch.num_classes,
        arch.feature_dim,
        n,
        2.0,
        TaskMode::Multiclass,
        BENCH_SEED + 1,
    )
    .expect("bench test set")
}

pub fn make_proxy_set(arch: &ArchConfig, m: usize) -> Dataset {
    make_proxy(
        arch.num_classes,
        arch.feature_dim,
        m,
        2.0,
        TaskMode::Multiclass,
        BENCH_SEED,
    )
    .expect("bench proxy set")
}

/// Round settings trimmed for benchmarking: one pass everywhere.
pub fn bench_rounds(total_rounds: usize) -> RoundConfig {
    RoundConfig {
        total_rounds,
        local_epochs: 1,
        local_batch: 32,
        server_steps: 5,
        server_batch: 32,
        generator_steps: 5,
        client_distill_steps: 2,
        ..RoundConfig::default()
    }
}

pub fn bench_experiment(arch: &ArchConfig, total_rounds: usize) -> Experiment {
    Experiment {
        arch: arch.clone(),
        mode: TaskMode::Multiclass,
        rounds: bench_rounds(total_rounds),
        boot: BootstrapConfig {
            resamples: 20,
            level: 0.95,
        },
        wire: WirePrecision::default(),
        seed: BENCH_SEED,
    }
}
