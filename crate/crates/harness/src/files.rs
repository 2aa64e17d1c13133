//! Binary file formats: magic, length-prefixed JSON header, then row-major
//! little-endian `f64` payload arrays.

use std::io::Write;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use mrdino_core::linalg_fem::SparseOperator;
use mrdino_core::randfield::KleBasis;
use mrdino_core::reduction::PodBasis;
use mrdino_core::surrogate::{Activation, Layer, NetworkSpec, Scaling, SurrogateModel, TrainingDataset};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"MRDINO1\0";
pub const VERSION: u32 = 1;

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn encode_container<H: Serialize>(header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_container<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    ensure!(bytes.len() >= 16 && &bytes[..8] == MAGIC, "not an MRDINO1 file");
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + len).context("truncated header")?;
    let header = serde_json::from_slice(body).context("malformed header")?;
    let rest = &bytes[16 + len..];
    ensure!(
        rest.len().is_multiple_of(8),
        "payload is not a whole number of f64 values"
    );
    let payload = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

pub fn read_container<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_container(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(
        &std::fs::read(path).with_context(|| format!("reading {}", path.display()))?,
    ))
}

fn push_rows(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter());
    }
}

/// Sequential reader over a payload slice.
struct Cursor<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [f64]) -> Self {
        Self { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        let s = self
            .data
            .get(self.pos..self.pos + n)
            .context("payload shorter than header declares")?;
        self.pos += n;
        Ok(s)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(rows, cols, self.take(rows * cols)?))
    }

    fn finish(self) -> Result<()> {
        ensure!(
            self.pos == self.data.len(),
            "payload has {} values, header declares {}",
            self.data.len(),
            self.pos
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSeeds {
    pub seed: u64,
    pub parameter_stream: u64,
    pub control_stream: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub n: usize,
    #[serde(rename = "r_M")]
    pub r_m: usize,
    #[serde(rename = "d_Z")]
    pub d_z: usize,
    #[serde(rename = "r_U")]
    pub r_u: usize,
    pub has_jacobian: bool,
    /// Per-record truncation and state norms follow the Jacobians.
    pub has_norms: bool,
    pub seeds: DataSeeds,
    pub config_hash: String,
    pub basis_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub data: TrainingDataset,
}

impl DatasetFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = &self.data;
        d.validate()?;
        let h = &self.header;
        ensure!(
            h.n == d.len() && h.r_m == d.m_r.ncols() && h.d_z == d.z.ncols() && h.r_u == d.u_r.ncols(),
            "dataset header dimensions do not match the records"
        );
        ensure!(h.has_jacobian == d.jac.is_some(), "has_jacobian flag mismatch");
        let norms = d.truncation_norms.is_some() && d.state_norms.is_some();
        ensure!(h.has_norms == norms, "has_norms flag mismatch");
        let mut p = Vec::new();
        push_rows(&mut p, &d.m_r);
        push_rows(&mut p, &d.z);
        push_rows(&mut p, &d.u_r);
        if let Some(jac) = &d.jac {
            for j in jac {
                push_rows(&mut p, j);
            }
        }
        if let (Some(t), Some(s)) = (&d.truncation_norms, &d.state_norms) {
            p.extend(t);
            p.extend(s);
        }
        encode_container(h, &p)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (DatasetHeader, _) = decode_container(bytes)?;
        ensure!(
            header.version == VERSION,
            "unsupported dataset version {}",
            header.version
        );
        let (n, rm, dz, ru) = (header.n, header.r_m, header.d_z, header.r_u);
        let mut c = Cursor::new(&payload);
        let m_r = c.matrix(n, rm)?;
        let z = c.matrix(n, dz)?;
        let u_r = c.matrix(n, ru)?;
        let jac = if header.has_jacobian {
            Some((0..n).map(|_| c.matrix(ru, dz)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        let (truncation_norms, state_norms) = if header.has_norms {
            (Some(c.take(n)?.to_vec()), Some(c.take(n)?.to_vec()))
        } else {
            (None, None)
        };
        c.finish()?;
        Ok(Self {
            header,
            data: TrainingDataset {
                m_r,
                z,
                u_r,
                jac,
                truncation_norms,
                state_norms,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Pod,
    Kle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisHeader {
    pub version: u32,
    pub kind: BasisKind,
    pub rank: usize,
    pub d: usize,
    pub eigenvalue_count: usize,
    /// Number of stored mode columns.
    pub mode_count: usize,
    /// POD snapshot count (zero for KLE).
    pub n_snapshots: usize,
    /// KLE mean value (zero for POD).
    pub mean_value: f64,
    /// Inner product behind projections; always the lumped mass matrix.
    pub projection: String,
    pub config_hash: String,
}

fn basis_header(kind: BasisKind, rank: usize, d: usize, eig: usize, modes: usize, config_hash: &str) -> BasisHeader {
    BasisHeader {
        version: VERSION,
        kind,
        rank,
        d,
        eigenvalue_count: eig,
        mode_count: modes,
        n_snapshots: 0,
        mean_value: 0.0,
        projection: "lumped-mass".into(),
        config_hash: config_hash.into(),
    }
}

pub fn pod_to_bytes(pod: &PodBasis, config_hash: &str) -> Result<Vec<u8>> {
    let mut h = basis_header(
        BasisKind::Pod,
        pod.rank(),
        pod.dim(),
        pod.eigvals().len(),
        pod.rank(),
        config_hash,
    );
    h.n_snapshots = pod.n_snapshots();
    let mut p = pod.eigvals().to_vec();
    push_rows(&mut p, pod.phi());
    p.extend(pod.bias().iter());
    encode_container(&h, &p)
}

pub fn pod_from_bytes(bytes: &[u8], weight: SparseOperator) -> Result<(BasisHeader, PodBasis)> {
    let (h, payload): (BasisHeader, Vec<f64>) = decode_container(bytes)?;
    ensure!(h.kind == BasisKind::Pod, "expected a POD basis file");
    ensure!(h.version == VERSION, "unsupported basis version {}", h.version);
    ensure!(
        weight.dim() == h.d,
        "basis dimension {} does not match the mesh ({})",
        h.d,
        weight.dim()
    );
    let mut c = Cursor::new(&payload);
    let eig = c.take(h.eigenvalue_count)?.to_vec();
    let phi = c.matrix(h.d, h.mode_count)?;
    let bias = DVector::from_column_slice(c.take(h.d)?);
    c.finish()?;
    let pod = PodBasis::from_parts(phi, bias, eig, h.n_snapshots, weight)?;
    Ok((h, pod))
}

pub fn kle_to_bytes(kle: &KleBasis, config_hash: &str) -> Result<Vec<u8>> {
    let modes = kle.all_modes();
    let mut h = basis_header(
        BasisKind::Kle,
        kle.rank(),
        kle.dim(),
        kle.all_eigvals().len(),
        modes.ncols(),
        config_hash,
    );
    h.mean_value = kle.mean_value();
    let mut p = kle.all_eigvals().to_vec();
    push_rows(&mut p, modes);
    encode_container(&h, &p)
}

pub fn kle_from_bytes(bytes: &[u8], mass: DVector<f64>) -> Result<(BasisHeader, KleBasis)> {
    let (h, payload): (BasisHeader, Vec<f64>) = decode_container(bytes)?;
    ensure!(h.kind == BasisKind::Kle, "expected a KLE basis file");
    ensure!(h.version == VERSION, "unsupported basis version {}", h.version);
    ensure!(
        mass.len() == h.d,
        "basis dimension {} does not match the mesh ({})",
        h.d,
        mass.len()
    );
    let mut c = Cursor::new(&payload);
    let eig = c.take(h.eigenvalue_count)?.to_vec();
    let modes = c.matrix(h.d, h.mode_count)?;
    c.finish()?;
    let kle = KleBasis::from_parts(h.rank, h.mean_value, eig, modes, mass)?;
    Ok((h, kle))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecRecord {
    pub param_dim: usize,
    pub control_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingRecord {
    pub input_scale: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisIds {
    pub kle: String,
    pub pod: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRecord {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_epoch: usize,
    pub jacobian_weight: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub version: u32,
    /// `MR-NO` or `MR-DINO`.
    pub tag: String,
    pub spec: SpecRecord,
    pub scalings: ScalingRecord,
    pub basis_ids: BasisIds,
    pub train_config: TrainRecord,
    pub training_samples: usize,
    pub dataset_hash: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub header: ModelHeader,
    pub model: SurrogateModel,
}

pub fn model_tag(jacobian_weight: f64) -> &'static str {
    if jacobian_weight > 0.0 {
        "MR-DINO"
    } else {
        "MR-NO"
    }
}

pub fn spec_record(spec: &NetworkSpec) -> SpecRecord {
    SpecRecord {
        param_dim: spec.param_dim,
        control_dim: spec.control_dim,
        hidden: spec.hidden.clone(),
        output_dim: spec.output_dim,
        activation: spec.activation.name().into(),
    }
}

pub fn scaling_record(s: &Scaling) -> ScalingRecord {
    ScalingRecord {
        input_scale: s.input_scale.as_slice().to_vec(),
        output_mean: s.output_mean.as_slice().to_vec(),
        output_std: s.output_std.as_slice().to_vec(),
    }
}

impl ModelFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        ensure!(
            self.header.spec == spec_record(&self.model.spec),
            "model header spec disagrees with the model"
        );
        let mut p = Vec::with_capacity(self.model.spec.num_weights());
        for l in &self.model.layers {
            push_rows(&mut p, &l.w);
            p.extend(l.b.iter());
        }
        encode_container(&self.header, &p)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (ModelHeader, Vec<f64>) = decode_container(bytes)?;
        ensure!(
            header.version == VERSION,
            "unsupported model version {}",
            header.version
        );
        let s = &header.spec;
        let spec = NetworkSpec {
            param_dim: s.param_dim,
            control_dim: s.control_dim,
            hidden: s.hidden.clone(),
            output_dim: s.output_dim,
            activation: Activation::from_name(&s.activation)?,
        };
        spec.validate()?;
        let sc = &header.scalings;
        ensure!(
            sc.input_scale.len() == spec.param_dim
                && sc.output_mean.len() == spec.output_dim
                && sc.output_std.len() == spec.output_dim,
            "scaling lengths do not match the network spec"
        );
        let widths = spec.widths();
        let mut c = Cursor::new(&payload);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let weights = c.matrix(w[1], w[0])?;
            let b = DVector::from_column_slice(c.take(w[1])?);
            layers.push(Layer { w: weights, b });
        }
        c.finish()?;
        let scaling = Scaling {
            input_scale: DVector::from_vec(sc.input_scale.clone()),
            output_mean: DVector::from_vec(sc.output_mean.clone()),
            output_std: DVector::from_vec(sc.output_std.clone()),
        };
        Ok(Self {
            header,
            model: SurrogateModel { spec, layers, scaling },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
    }
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
