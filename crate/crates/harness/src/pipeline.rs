//! Experiment stages: bases, data generation, training, OUU and evaluation.

use std::time::Instant;

use anyhow::{bail, Context, Result};
use mrdino_core::forward_model::{build_source_basis, JacobianRoute, SemilinearProblem};
use mrdino_core::linalg_fem::{assemble_mass, build_mesh, SparseOperator};
use mrdino_core::randfield::{build_kle, encode, sample_field, KleBasis, MaternSpec};
use mrdino_core::reduction::{build_tracking_form, compute_pod, PodBasis};
use mrdino_core::riskopt::{
    mc_cvar, mc_var, minimize_with, OptResult, PdeEvaluator, RiskSpec, SaaProblem, SurrogateEvaluator, TrackingTarget,
};
use mrdino_core::rng::{streams, substream};
use mrdino_core::surrogate::{train, SurrogateModel, TrainedSurrogate, TrainingDataset};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn streams(self) -> (u64, u64) {
        match self {
            Split::Train => (streams::TRAIN_PARAMETER, streams::TRAIN_CONTROL),
            Split::Test => (streams::TEST_PARAMETER, streams::TEST_CONTROL),
        }
    }
}

/// Everything derived from a configuration that does not depend on a seed.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub problem: SemilinearProblem,
    pub kle: KleBasis,
    pub target: DVector<f64>,
    pub mass: SparseOperator,
}

/// A generated dataset with the summed per-sample wall times.
#[derive(Debug, Clone)]
pub struct Generated {
    pub data: TrainingDataset,
    pub state_seconds: f64,
    pub jacobian_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evaluation {
    pub seed: u64,
    pub n: usize,
    pub beta: f64,
    pub cvar: f64,
    pub var: f64,
    pub mean: f64,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let rank = config.ranks.parameter;
        Self::build(config, |mesh, spec| Ok(build_kle(mesh, spec, rank)?))
    }

    /// Reuses a previously computed KLE (e.g. loaded from a basis file).
    pub fn with_kle(config: ExperimentConfig, kle: KleBasis) -> Result<Self> {
        Self::build(config, move |_, _| Ok(kle))
    }

    fn build(
        config: ExperimentConfig,
        kle: impl FnOnce(&mrdino_core::linalg_fem::StructuredMesh, &MaternSpec) -> Result<KleBasis>,
    ) -> Result<Self> {
        config.validate()?;
        let mesh = build_mesh(config.mesh, config.mesh)?;
        let spec = MaternSpec::new(config.matern.gamma, config.matern.delta, config.matern.mean)?;
        let kle = kle(&mesh, &spec)?;
        if kle.dim() != mesh.num_nodes() || kle.rank() != config.ranks.parameter {
            bail!("KLE basis does not match the configured mesh and rank");
        }
        let target = config.target_state(&mesh)?;
        let mass = assemble_mass(&mesh, true);
        let sources = build_source_basis(&mesh, config.sources.grid, config.sources.sigma)?;
        let problem = SemilinearProblem::new(mesh, config.reaction, sources, config.newton_options())?;
        Ok(Self {
            config_hash: config.hash(),
            config,
            problem,
            kle,
            target,
            mass,
        })
    }

    pub fn num_controls(&self) -> usize {
        self.problem.num_controls()
    }

    pub fn field(&self, seed: u64, stream: u64, index: u64) -> DVector<f64> {
        sample_field(&self.kle, seed, stream, index).values
    }

    /// Uniform control on the configured box.
    pub fn control(&self, seed: u64, stream: u64, index: u64) -> DVector<f64> {
        let [lo, hi] = self.config.bounds;
        let mut rng = substream(seed, stream, index);
        DVector::from_fn(
            self.num_controls(),
            |_, _| if lo < hi { rng.random_range(lo..hi) } else { lo },
        )
    }

    pub fn tracking(&self) -> TrackingTarget {
        TrackingTarget {
            target: self.target.clone(),
            weight: self.problem.lumped_mass().clone(),
        }
    }

    fn lower(&self) -> DVector<f64> {
        DVector::from_element(self.num_controls(), self.config.bounds[0])
    }

    fn upper(&self) -> DVector<f64> {
        DVector::from_element(self.num_controls(), self.config.bounds[1])
    }

    /// Full states of training-stream samples `0..n`, one per row.
    pub fn snapshots(&self, seed: u64, n: usize) -> Result<DMatrix<f64>> {
        let (ps, cs) = Split::Train.streams();
        let states = collect_samples(n, |i| {
            let m = self.field(seed, ps, i as u64);
            let z = self.control(seed, cs, i as u64);
            Ok(self.problem.solve_state(&m, &z)?.u)
        })?;
        let mut out = DMatrix::zeros(n, self.problem.mesh().num_nodes());
        for (i, u) in states.iter().enumerate() {
            out.set_row(i, &u.transpose());
        }
        Ok(out)
    }

    pub fn build_pod(&self, seed: u64, n: usize) -> Result<PodBasis> {
        let snaps = self.snapshots(seed, n)?;
        Ok(compute_pod(&snaps, &self.mass, self.config.ranks.state)?)
    }

    /// Records `0..n` of a split. Test sets also carry the norms needed for
    /// full-space error reporting.
    pub fn generate(&self, pod: &PodBasis, seed: u64, split: Split, n: usize, jacobian: bool) -> Result<Generated> {
        let (ps, cs) = split.streams();
        let with_norms = split == Split::Test;
        struct Record {
            m_r: DVector<f64>,
            z: DVector<f64>,
            u_r: DVector<f64>,
            jac: Option<DMatrix<f64>>,
            norms: (f64, f64),
            times: (f64, f64),
        }
        let w = self.problem.lumped_mass();
        let m_norm = |v: &DVector<f64>| v.dot(&v.component_mul(w)).sqrt();
        let records = collect_samples(n, |i| {
            let m = self.field(seed, ps, i as u64);
            let z = self.control(seed, cs, i as u64);
            let t = Instant::now();
            let state = self.problem.solve_state(&m, &z)?;
            let state_time = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let jac = if jacobian {
                Some(
                    self.problem
                        .reduced_control_jacobian(&state, pod, JacobianRoute::Auto)?,
                )
            } else {
                None
            };
            let jac_time = t.elapsed().as_secs_f64();
            let u_r = pod.project(&state.u)?;
            let norms = if with_norms {
                let residual = &state.u - pod.lift(&u_r)?;
                (m_norm(&residual), m_norm(&state.u))
            } else {
                (0.0, 0.0)
            };
            Ok(Record {
                m_r: encode(&self.kle, &m, false)?,
                z,
                u_r,
                jac,
                norms,
                times: (state_time, jac_time),
            })
        })?;
        let rows = |f: &dyn Fn(&Record) -> &DVector<f64>, k: usize| DMatrix::from_fn(n, k, |i, j| f(&records[i])[j]);
        let data = TrainingDataset {
            m_r: rows(&|r| &r.m_r, self.kle.rank()),
            z: rows(&|r| &r.z, self.num_controls()),
            u_r: rows(&|r| &r.u_r, pod.rank()),
            jac: jacobian.then(|| records.iter().map(|r| r.jac.clone().unwrap()).collect()),
            truncation_norms: with_norms.then(|| records.iter().map(|r| r.norms.0).collect()),
            state_norms: with_norms.then(|| records.iter().map(|r| r.norms.1).collect()),
        };
        Ok(Generated {
            data,
            state_seconds: records.iter().map(|r| r.times.0).sum(),
            jacobian_seconds: records.iter().map(|r| r.times.1).sum(),
        })
    }

    /// One shared factor for all KLE coefficients, the inverse standard
    /// deviation of the leading mode. Coefficients keep their relative sizes
    /// so weakly varying modes do not enter the network at unit scale.
    pub fn input_scale(&self) -> DVector<f64> {
        let w = self.kle.whitening();
        DVector::from_element(w.len(), w.min())
    }

    pub fn train(&self, data: &TrainingDataset, seed: u64, jacobian_weight: Option<f64>) -> Result<TrainedSurrogate> {
        let spec = self.config.network_spec()?;
        let cfg = self.config.train_config(seed, jacobian_weight);
        Ok(train(data, &spec, &cfg, &self.input_scale())?)
    }

    /// Surrogate-backed SAA over optimization-stream samples `0..n`.
    pub fn surrogate_ouu(
        &self,
        model: &SurrogateModel,
        pod: &PodBasis,
        seed: u64,
        n: usize,
        risk: RiskSpec,
    ) -> Result<OptResult> {
        let coeffs = collect_samples(n, |i| {
            let m = self.field(seed, streams::OPTIMIZE_PARAMETER, i as u64);
            Ok(encode(&self.kle, &m, false)?)
        })?;
        let m_r = DMatrix::from_fn(n, self.kle.rank(), |i, j| coeffs[i][j]);
        let form = build_tracking_form(pod, &self.target)?;
        let evaluator = SurrogateEvaluator::new(model, m_r, form)?;
        self.optimize(&evaluator, risk)
    }

    /// PDE-backed SAA over optimization-stream samples `0..n`.
    pub fn pde_ouu(&self, seed: u64, n: usize, risk: RiskSpec) -> Result<OptResult> {
        let fields = (0..n)
            .map(|i| self.field(seed, streams::OPTIMIZE_PARAMETER, i as u64))
            .collect();
        let evaluator = PdeEvaluator::new(&self.problem, fields, self.tracking())?;
        self.optimize(&evaluator, risk)
    }

    fn optimize(&self, evaluator: &dyn mrdino_core::riskopt::SampleEvaluator, risk: RiskSpec) -> Result<OptResult> {
        let prob = SaaProblem {
            evaluator,
            lower: self.lower(),
            upper: self.upper(),
            risk,
        };
        let z0 = DVector::from_fn(self.num_controls(), |_, _| {
            0.0f64.clamp(self.config.bounds[0], self.config.bounds[1])
        });
        Ok(minimize_with(&prob, &z0, None, &self.config.optimizer_options())?)
    }

    /// Unsmoothed Monte Carlo risk of `Q(u(m, z))` on evaluation-stream
    /// samples `0..n`.
    pub fn evaluate(&self, z: &DVector<f64>, seed: u64, n: usize, beta: f64) -> Result<Evaluation> {
        let fields = (0..n)
            .map(|i| self.field(seed, streams::EVALUATE_PARAMETER, i as u64))
            .collect();
        let evaluator = PdeEvaluator::new(&self.problem, fields, self.tracking())?;
        let q = evaluator.values(z)?;
        Ok(Evaluation {
            seed,
            n,
            beta,
            cvar: mc_cvar(&q, beta)?,
            var: mc_var(&q, beta)?,
            mean: q.iter().sum::<f64>() / n as f64,
        })
    }
}

/// Runs `f` on indices `0..n` in parallel and returns results in index
/// order; failures abort with every failed index listed.
pub fn collect_samples<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = (0..n).into_par_iter().map(&f).collect();
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.is_err().then_some(i))
        .collect();
    if let Some(&first) = failed.first() {
        let Some(Err(err)) = results.into_iter().nth(first) else {
            unreachable!("index was collected from a failed result")
        };
        return Err(err).with_context(|| format!("samples failed at indices {failed:?}; retry with another seed"));
    }
    results.into_iter().collect()
}
