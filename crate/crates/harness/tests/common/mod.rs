#![allow(dead_code)]

use mrdino_harness::config::{ExperimentConfig, NetworkConfig, RankConfig, SizeConfig, SourceConfig, TrainingConfig};

/// 8x8 mesh, 4 controls and a small network: the whole pipeline runs in
/// well under a second.
pub fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.mesh = 8;
    c.sources = SourceConfig { grid: 2, sigma: 0.08 };
    c.ranks = RankConfig { parameter: 5, state: 6 };
    c.network = NetworkConfig {
        hidden: vec![8, 8],
        activation: "tanh".into(),
    };
    c.training = TrainingConfig {
        epochs: 20,
        batch_size: 4,
        learning_rate: 1e-3,
        lr_drop_factor: 0.25,
        lr_drop_epoch: 10,
        jacobian_weight: 1.0,
    };
    c.sizes = SizeConfig {
        pod: 12,
        train: vec![12],
        test: 8,
        optimize: 32,
        pde_optimize: vec![4],
        evaluate: 32,
        reference: 8,
    };
    c.seeds.runs = vec![0];
    c
}
