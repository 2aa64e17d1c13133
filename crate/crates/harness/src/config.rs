//! Experiment configuration: JSON on disk, validated at load.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use mrdino_core::forward_model::NewtonOptions;
use mrdino_core::linalg_fem::StructuredMesh;
use mrdino_core::riskopt::{OptimizerOptions, RiskSpec};
use mrdino_core::surrogate::{Activation, NetworkSpec, TrainConfig};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Cells per side of the unit-square mesh.
    pub mesh: usize,
    pub matern: MaternConfig,
    pub reaction: f64,
    pub sources: SourceConfig,
    /// Common `[lo, hi]` for every control component.
    pub bounds: [f64; 2],
    pub ranks: RankConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub risk: RiskConfig,
    pub sizes: SizeConfig,
    pub seeds: SeedConfig,
    pub target: TargetConfig,
    pub newton: NewtonConfig,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaternConfig {
    pub gamma: f64,
    pub delta: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub grid: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankConfig {
    pub parameter: usize,
    pub state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_epoch: usize,
    pub jacobian_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub beta: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeConfig {
    /// Snapshots behind the POD basis; training sets are prefixes of them.
    pub pod: usize,
    pub train: Vec<usize>,
    pub test: usize,
    /// Surrogate SAA sample size.
    pub optimize: usize,
    /// PDE-SAA sample sizes.
    pub pde_optimize: Vec<usize>,
    pub evaluate: usize,
    pub reference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    /// One independent repetition per entry.
    pub runs: Vec<u64>,
    pub test: u64,
    pub evaluation: u64,
    pub reference: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Sinusoidal,
    Quadratic,
    /// JSON array of nodal values.
    Custom {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    pub gtol: f64,
}

impl ExperimentConfig {
    /// 32x32 mesh, 25 controls, ranks (50, 100), hidden (200, 200).
    pub fn desk() -> Self {
        Self {
            mesh: 32,
            matern: MaternConfig {
                gamma: 0.1,
                delta: 5.0,
                mean: -1.0,
            },
            reaction: 0.1,
            sources: SourceConfig { grid: 5, sigma: 0.08 },
            bounds: [-4.0, 4.0],
            ranks: RankConfig {
                parameter: 50,
                state: 100,
            },
            network: NetworkConfig {
                hidden: vec![200, 200],
                activation: "tanh".into(),
            },
            training: TrainingConfig {
                epochs: 1600,
                batch_size: 32,
                learning_rate: 1e-3,
                lr_drop_factor: 0.25,
                lr_drop_epoch: 800,
                jacobian_weight: 1.0,
            },
            risk: RiskConfig { beta: 0.95, eps: 1e-4 },
            sizes: SizeConfig {
                pod: 256,
                train: vec![64, 128, 256],
                test: 256,
                optimize: 1024,
                pde_optimize: vec![16],
                evaluate: 2048,
                reference: 256,
            },
            seeds: SeedConfig {
                runs: vec![0, 1, 2, 3, 4],
                test: 10_000,
                evaluation: 20_000,
                reference: 30_000,
            },
            target: TargetConfig::Sinusoidal,
            newton: NewtonConfig {
                rtol: 1e-10,
                atol: 1e-12,
                max_iter: 25,
            },
            optimizer: OptimizerConfig {
                max_iter: 500,
                gtol: 1e-6,
            },
        }
    }

    /// 64x64 mesh, 49 controls, ranks (100, 300).
    pub fn large() -> Self {
        let mut c = Self::desk();
        c.mesh = 64;
        c.sources.grid = 7;
        c.ranks = RankConfig {
            parameter: 100,
            state: 300,
        };
        c.sizes = SizeConfig {
            pod: 4096,
            train: vec![512, 1024, 2048, 4096],
            test: 1024,
            optimize: 2048,
            pde_optimize: vec![16, 64, 256],
            evaluate: 8192,
            reference: 4096,
        };
        c.seeds.runs = (0..10).collect();
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "large" => Ok(Self::large()),
            other => bail!("unknown preset '{other}' (expected desk or large)"),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_nodes(&self) -> usize {
        (self.mesh + 1) * (self.mesh + 1)
    }

    pub fn num_controls(&self) -> usize {
        self.sources.grid * self.sources.grid
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.mesh >= 2, "mesh needs at least 2 cells per side");
        ensure!(
            self.sources.grid >= 1 && self.sources.sigma > 0.0,
            "invalid source grid"
        );
        ensure!(self.reaction >= 0.0, "reaction coefficient must be nonnegative");
        ensure!(self.bounds[0] <= self.bounds[1], "lower bound exceeds upper bound");
        let d = self.num_nodes();
        ensure!(
            (1..=d).contains(&self.ranks.parameter) && (1..=d).contains(&self.ranks.state),
            "ranks must lie in 1..={d}"
        );
        ensure!(
            self.sizes.pod > self.ranks.state,
            "POD needs more snapshots ({}) than its rank ({}) after mean-centering",
            self.sizes.pod,
            self.ranks.state
        );
        ensure!(
            self.sizes.train.iter().all(|&n| (1..=self.sizes.pod).contains(&n)),
            "training sizes must lie in 1..={} (they reuse POD snapshots)",
            self.sizes.pod
        );
        ensure!(
            self.sizes.test > 0 && self.sizes.optimize > 0 && self.sizes.evaluate > 0 && self.sizes.reference > 0,
            "sample sizes must be positive"
        );
        ensure!(
            self.sizes.pde_optimize.iter().all(|&n| n > 0),
            "PDE-SAA sizes must be positive"
        );
        ensure!(!self.seeds.runs.is_empty(), "at least one run seed is required");
        self.network_spec()?.validate()?;
        self.train_config(0, None).validate()?;
        self.risk_spec(None, None).validate()?;
        mrdino_core::randfield::MaternSpec::new(self.matern.gamma, self.matern.delta, self.matern.mean)?;
        if let TargetConfig::Custom { path } = &self.target {
            ensure!(!path.as_os_str().is_empty(), "custom target needs a path");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        Ok(NetworkSpec {
            param_dim: self.ranks.parameter,
            control_dim: self.num_controls(),
            hidden: self.network.hidden.clone(),
            output_dim: self.ranks.state,
            activation: Activation::from_name(&self.network.activation)?,
        })
    }

    /// The configured Jacobian weight measures control Jacobians in box
    /// coordinates scaled to `[-1, 1]`; the returned weight applies to raw
    /// controls and carries the squared half-width.
    pub fn train_config(&self, seed: u64, jacobian_weight: Option<f64>) -> TrainConfig {
        let t = &self.training;
        let half = 0.5 * (self.bounds[1] - self.bounds[0]);
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lr_drop_factor: t.lr_drop_factor,
            lr_drop_epoch: t.lr_drop_epoch,
            jacobian_weight: jacobian_weight.unwrap_or(t.jacobian_weight) * half * half,
            seed,
        }
    }

    pub fn risk_spec(&self, beta: Option<f64>, eps: Option<f64>) -> RiskSpec {
        RiskSpec::cvar(beta.unwrap_or(self.risk.beta), eps.unwrap_or(self.risk.eps))
    }

    pub fn newton_options(&self) -> NewtonOptions {
        NewtonOptions {
            rtol: self.newton.rtol,
            atol: self.newton.atol,
            max_iter: self.newton.max_iter,
            ..NewtonOptions::default()
        }
    }

    pub fn optimizer_options(&self) -> OptimizerOptions {
        OptimizerOptions {
            max_iter: self.optimizer.max_iter,
            gtol: self.optimizer.gtol,
            ..OptimizerOptions::default()
        }
    }

    pub fn target_state(&self, mesh: &StructuredMesh) -> Result<DVector<f64>> {
        match &self.target {
            TargetConfig::Sinusoidal => Ok(mesh.interpolate(|x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin())),
            TargetConfig::Quadratic => Ok(mesh.interpolate(|_, y| 4.0 * y * (1.0 - y))),
            TargetConfig::Custom { path } => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading target {}", path.display()))?;
                let values: Vec<f64> = serde_json::from_str(&text).context("custom target must be a JSON array")?;
                ensure!(
                    values.len() == mesh.num_nodes(),
                    "custom target has {} values, mesh has {} nodes",
                    values.len(),
                    mesh.num_nodes()
                );
                Ok(DVector::from_vec(values))
            }
        }
    }
}
