//! File-to-file pipeline stages behind the CLI subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use mrdino_core::reduction::PodBasis;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::files::{
    file_hash, kle_from_bytes, kle_to_bytes, load_json, model_tag, pod_from_bytes, pod_to_bytes, save_json,
    scaling_record, sha256_hex, spec_record, write_atomic, BasisIds, DataSeeds, DatasetFile, DatasetHeader, ModelFile,
    ModelHeader, TrainRecord, VERSION,
};
use crate::pipeline::{Experiment, Split};
use crate::report::{compare, Comparison, OuuRecord, RecordSource};

pub const KLE_FILE: &str = "kle.bin";
pub const POD_FILE: &str = "pod.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSummary {
    pub kle_id: String,
    pub pod_id: String,
    pub snapshots: usize,
    pub pod_rank: usize,
    pub trailing_energy: f64,
}

/// Writes the KLE and a POD basis built from training-stream snapshots
/// `0..n` into `dir`.
pub fn cmd_build_basis(config: &ExperimentConfig, seed: u64, n: Option<usize>, dir: &Path) -> Result<BasisSummary> {
    let exp = Experiment::new(config.clone())?;
    let n = n.unwrap_or(config.sizes.pod);
    let pod = exp.build_pod(seed, n)?;
    let kle_bytes = kle_to_bytes(&exp.kle, &exp.config_hash)?;
    let pod_bytes = pod_to_bytes(&pod, &exp.config_hash)?;
    write_atomic(&dir.join(KLE_FILE), &kle_bytes)?;
    write_atomic(&dir.join(POD_FILE), &pod_bytes)?;
    Ok(BasisSummary {
        kle_id: sha256_hex(&kle_bytes),
        pod_id: sha256_hex(&pod_bytes),
        snapshots: n,
        pod_rank: pod.rank(),
        trailing_energy: pod.trailing_energy(),
    })
}

pub struct Loaded {
    pub exp: Experiment,
    pub pod: PodBasis,
    pub ids: BasisIds,
}

/// Rebuilds the experiment around the bases stored in `dir`.
pub fn load_bases(config: &ExperimentConfig, dir: &Path) -> Result<Loaded> {
    let kle_bytes = std::fs::read(dir.join(KLE_FILE)).with_context(|| format!("reading KLE in {}", dir.display()))?;
    let pod_bytes = std::fs::read(dir.join(POD_FILE)).with_context(|| format!("reading POD in {}", dir.display()))?;
    let mesh = mrdino_core::linalg_fem::build_mesh(config.mesh, config.mesh)?;
    let mass = mrdino_core::linalg_fem::assemble_mass(&mesh, true);
    let (kh, kle) = kle_from_bytes(&kle_bytes, mass.diagonal())?;
    let (ph, pod) = pod_from_bytes(&pod_bytes, mass)?;
    let hash = config.hash();
    ensure!(
        kh.config_hash == hash && ph.config_hash == hash,
        "bases in {} were built from a different configuration",
        dir.display()
    );
    ensure!(
        pod.rank() == config.ranks.state,
        "POD rank does not match the configuration"
    );
    Ok(Loaded {
        exp: Experiment::with_kle(config.clone(), kle)?,
        pod,
        ids: BasisIds {
            kle: sha256_hex(&kle_bytes),
            pod: sha256_hex(&pod_bytes),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub n: usize,
    pub split: Split,
    pub has_jacobian: bool,
    pub dataset_hash: String,
    pub state_seconds: f64,
    pub jacobian_seconds: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_gen_data(
    config: &ExperimentConfig,
    basis_dir: &Path,
    seed: u64,
    split: Split,
    n: Option<usize>,
    jacobian: bool,
    out: &Path,
) -> Result<GenSummary> {
    let loaded = load_bases(config, basis_dir)?;
    let n = n.unwrap_or(match split {
        Split::Train => config.sizes.pod,
        Split::Test => config.sizes.test,
    });
    let generated = loaded.exp.generate(&loaded.pod, seed, split, n, jacobian)?;
    let (parameter_stream, control_stream) = split.streams();
    let file = DatasetFile {
        header: DatasetHeader {
            version: VERSION,
            n,
            r_m: config.ranks.parameter,
            d_z: config.num_controls(),
            r_u: config.ranks.state,
            has_jacobian: jacobian,
            has_norms: split == Split::Test,
            seeds: DataSeeds {
                seed,
                parameter_stream,
                control_stream,
            },
            config_hash: loaded.exp.config_hash.clone(),
            basis_id: loaded.ids.pod.clone(),
        },
        data: generated.data,
    };
    let bytes = file.to_bytes()?;
    write_atomic(out, &bytes)?;
    Ok(GenSummary {
        n,
        split,
        has_jacobian: jacobian,
        dataset_hash: sha256_hex(&bytes),
        state_seconds: generated.state_seconds,
        jacobian_seconds: generated.jacobian_seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub tag: String,
    pub training_samples: usize,
    pub final_loss: f64,
    pub model_hash: String,
    pub loss_csv: PathBuf,
}

/// Trains on the first `n` records (all by default) and writes the model
/// plus a `<out>.loss.csv` history.
#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    config: &ExperimentConfig,
    basis_dir: &Path,
    data_path: &Path,
    seed: u64,
    n: Option<usize>,
    jacobian_weight: Option<f64>,
    out: &Path,
) -> Result<TrainSummary> {
    let loaded = load_bases(config, basis_dir)?;
    let file = DatasetFile::load(data_path)?;
    let h = &file.header;
    ensure!(
        h.config_hash == loaded.exp.config_hash,
        "dataset was generated from a different configuration"
    );
    ensure!(
        h.basis_id == loaded.ids.pod,
        "dataset was projected onto a different POD basis"
    );
    let n = n.unwrap_or(h.n);
    ensure!(n >= 1 && n <= h.n, "requested {n} records, dataset has {}", h.n);
    let idx: Vec<usize> = (0..n).collect();
    let data = file.data.subset(&idx);
    let trained = loaded.exp.train(&data, seed, jacobian_weight)?;
    let cfg = config.train_config(seed, jacobian_weight);
    let tag = model_tag(cfg.jacobian_weight);
    let model_file = ModelFile {
        header: ModelHeader {
            version: VERSION,
            tag: tag.into(),
            spec: spec_record(&trained.model.spec),
            scalings: scaling_record(&trained.model.scaling),
            basis_ids: loaded.ids.clone(),
            train_config: TrainRecord {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                learning_rate: cfg.learning_rate,
                lr_drop_factor: cfg.lr_drop_factor,
                lr_drop_epoch: cfg.lr_drop_epoch,
                jacobian_weight: cfg.jacobian_weight,
                seed,
            },
            training_samples: n,
            dataset_hash: file_hash(data_path)?,
            config_hash: loaded.exp.config_hash.clone(),
        },
        model: trained.model,
    };
    let bytes = model_file.to_bytes()?;
    write_atomic(out, &bytes)?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in trained.loss_history.iter().enumerate() {
        csv += &format!("{e},{l:e}\n");
    }
    let loss_csv = out.with_extension("loss.csv");
    write_atomic(&loss_csv, csv.as_bytes())?;
    Ok(TrainSummary {
        tag: tag.into(),
        training_samples: n,
        final_loss: *trained.loss_history.last().unwrap(),
        model_hash: sha256_hex(&bytes),
        loss_csv,
    })
}

pub enum Backend<'a> {
    Surrogate { model: &'a Path, basis_dir: &'a Path },
    Pde,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_solve_ouu(
    config: &ExperimentConfig,
    backend: Backend<'_>,
    seed: u64,
    n: Option<usize>,
    beta: Option<f64>,
    eps: Option<f64>,
    out: &Path,
) -> Result<OuuRecord> {
    let risk = config.risk_spec(beta, eps);
    let mrdino_core::riskopt::RiskKind::Cvar { beta } = risk.kind else {
        unreachable!("configured risk is always CVaR")
    };
    let start = Instant::now();
    let record = match backend {
        Backend::Surrogate { model, basis_dir } => {
            let loaded = load_bases(config, basis_dir)?;
            let mf = ModelFile::load(model)?;
            ensure!(
                mf.header.basis_ids == loaded.ids,
                "model was trained against different bases"
            );
            ensure!(
                mf.header.config_hash == loaded.exp.config_hash,
                "model comes from a different configuration"
            );
            let n = n.unwrap_or(config.sizes.optimize);
            let res = loaded.exp.surrogate_ouu(&mf.model, &loaded.pod, seed, n, risk)?;
            OuuRecord::new(
                RecordSource {
                    method: &mf.header.tag,
                    seed,
                    samples: n,
                    training_samples: mf.header.training_samples,
                    basis_samples: loaded.pod.n_snapshots(),
                    config_hash: &loaded.exp.config_hash,
                    model_hash: Some(file_hash(model)?),
                },
                &res,
                beta,
                risk.eps,
                start.elapsed().as_secs_f64(),
            )
        }
        Backend::Pde => {
            let exp = Experiment::new(config.clone())?;
            let n = n.unwrap_or(config.sizes.pde_optimize[0]);
            let res = exp.pde_ouu(seed, n, risk)?;
            OuuRecord::new(
                RecordSource {
                    method: "PDE-SAA",
                    seed,
                    samples: n,
                    training_samples: 0,
                    basis_samples: 0,
                    config_hash: &exp.config_hash,
                    model_hash: None,
                },
                &res,
                beta,
                risk.eps,
                start.elapsed().as_secs_f64(),
            )
        }
    };
    save_json(out, &record)?;
    Ok(record)
}

/// Scores a result on the evaluation sample set and writes the updated record.
pub fn cmd_evaluate(
    config: &ExperimentConfig,
    result: &Path,
    seed: Option<u64>,
    n: Option<usize>,
    out: &Path,
) -> Result<OuuRecord> {
    let mut record: OuuRecord = load_json(result)?;
    ensure!(
        record.config_hash == config.hash(),
        "result comes from a different configuration"
    );
    let exp = Experiment::new(config.clone())?;
    let start = Instant::now();
    let z = DVector::from_vec(record.z.clone());
    let eval = exp.evaluate(
        &z,
        seed.unwrap_or(config.seeds.evaluation),
        n.unwrap_or(config.sizes.evaluate),
        record.beta,
    )?;
    record.evaluation = Some(eval);
    record
        .timing
        .insert("evaluate_seconds".into(), start.elapsed().as_secs_f64());
    save_json(out, &record)?;
    Ok(record)
}

/// Writes `<out>` (per-run rows), `<out>.summary.csv` and `<out>.json`.
pub fn cmd_compare(reference: &Path, results: &[PathBuf], out: &Path) -> Result<Comparison> {
    let reference: OuuRecord = load_json(reference)?;
    let records = results
        .iter()
        .map(|p| load_json(p))
        .collect::<Result<Vec<OuuRecord>>>()?;
    let cmp = compare(&reference, &records)?;
    write_atomic(out, cmp.rows_csv().as_bytes())?;
    write_atomic(&out.with_extension("summary.csv"), cmp.summary_csv().as_bytes())?;
    save_json(&out.with_extension("json"), &cmp)?;
    Ok(cmp)
}
