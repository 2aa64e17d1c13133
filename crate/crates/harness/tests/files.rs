mod common;

use mrdino_core::surrogate::SurrogateModel;
use mrdino_harness::commands::{cmd_build_basis, cmd_gen_data, cmd_train, load_bases, KLE_FILE, POD_FILE};
use mrdino_harness::config::TargetConfig;
use mrdino_harness::files::{
    kle_from_bytes, kle_to_bytes, pod_from_bytes, pod_to_bytes, DatasetFile, ModelFile, MAGIC,
};
use mrdino_harness::{ExperimentConfig, Split};

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let c = ExperimentConfig::desk();
    c.validate().unwrap();
    ExperimentConfig::large().validate().unwrap();
    let json = serde_json::to_string(&c).unwrap();
    let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());

    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["surprise"] = 1.into();
    assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["risk"]["gamma"] = 1.into();
    assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());

    let mut bad = c.clone();
    bad.sizes.pod = bad.ranks.state;
    assert!(bad.validate().is_err());
    let mut bad = c.clone();
    bad.ranks.parameter = c.num_nodes() + 1;
    assert!(bad.validate().is_err());
    let mut bad = c;
    bad.risk.beta = 1.0;
    assert!(bad.validate().is_err());
}

#[test]
fn custom_target_is_read_from_a_nodal_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = common::tiny();
    let mesh = mrdino_core::linalg_fem::build_mesh(8, 8).unwrap();
    let values: Vec<f64> = (0..mesh.num_nodes()).map(|i| i as f64 * 0.01).collect();
    let path = dir.path().join("target.json");
    std::fs::write(&path, serde_json::to_string(&values).unwrap()).unwrap();
    c.target = TargetConfig::Custom { path };
    assert_eq!(c.target_state(&mesh).unwrap().as_slice(), &values[..]);
    c.target = TargetConfig::Quadratic;
    let q = c.target_state(&mesh).unwrap();
    assert!((q.max() - 1.0).abs() < 1e-12);
}

#[test]
fn pipeline_files_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let c = common::tiny();
    let basis = dir.path().join("basis");
    cmd_build_basis(&c, 0, None, &basis).unwrap();
    let data = dir.path().join("train.bin");
    let summary = cmd_gen_data(&c, &basis, 0, Split::Train, Some(4), true, &data).unwrap();
    assert_eq!(summary.n, 4);

    let bytes = std::fs::read(&data).unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let file = DatasetFile::from_bytes(&bytes).unwrap();
    assert_eq!(file.data.len(), 4);
    assert_eq!(file.data.jac.as_ref().unwrap().len(), 4);
    assert_eq!(file.to_bytes().unwrap(), bytes);

    let again = dir.path().join("again.bin");
    cmd_gen_data(&c, &basis, 0, Split::Train, Some(4), true, &again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), bytes);

    let test = dir.path().join("test.bin");
    cmd_gen_data(&c, &basis, 0, Split::Test, None, false, &test).unwrap();
    let tf = DatasetFile::load(&test).unwrap();
    assert!(tf.data.jac.is_none() && tf.data.truncation_norms.is_some());
    assert_eq!(tf.to_bytes().unwrap(), std::fs::read(&test).unwrap());

    let model = dir.path().join("m.bin");
    let t = cmd_train(&c, &basis, &data, 3, None, Some(0.0), &model).unwrap();
    assert_eq!(t.tag, "MR-NO");
    let mbytes = std::fs::read(&model).unwrap();
    let mf = ModelFile::from_bytes(&mbytes).unwrap();
    assert_eq!(mf.to_bytes().unwrap(), mbytes);
    let again = dir.path().join("m2.bin");
    let t2 = cmd_train(&c, &basis, &data, 3, None, Some(0.0), &again).unwrap();
    assert_eq!(t.model_hash, t2.model_hash);
    let dino = cmd_train(&c, &basis, &data, 3, None, None, &again).unwrap();
    assert_eq!(dino.tag, "MR-DINO");
    assert!(t.loss_csv.exists());

    let loaded = load_bases(&c, &basis).unwrap();
    let kbytes = std::fs::read(basis.join(KLE_FILE)).unwrap();
    let pbytes = std::fs::read(basis.join(POD_FILE)).unwrap();
    let (_, kle) = kle_from_bytes(&kbytes, loaded.exp.problem.lumped_mass().clone()).unwrap();
    assert_eq!(kle_to_bytes(&kle, &c.hash()).unwrap(), kbytes);
    assert_eq!(kle, loaded.exp.kle);
    let (_, pod) = pod_from_bytes(&pbytes, loaded.exp.mass.clone()).unwrap();
    assert_eq!(pod_to_bytes(&pod, &c.hash()).unwrap(), pbytes);
}

#[test]
fn corrupted_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = common::tiny();
    let basis = dir.path().join("basis");
    cmd_build_basis(&c, 0, None, &basis).unwrap();
    let data = dir.path().join("train.bin");
    cmd_gen_data(&c, &basis, 0, Split::Train, Some(3), true, &data).unwrap();
    let bytes = std::fs::read(&data).unwrap();
    assert!(DatasetFile::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    let mut extra = bytes.clone();
    extra.extend_from_slice(&1.0f64.to_le_bytes());
    assert!(DatasetFile::from_bytes(&extra).is_err());
    let mut magic = bytes;
    magic[0] = b'X';
    assert!(DatasetFile::from_bytes(&magic).is_err());

    let mut other = c.clone();
    other.reaction = 0.2;
    assert!(load_bases(&other, &basis).is_err());
    let model = dir.path().join("m.bin");
    assert!(cmd_train(&other, &basis, &data, 0, None, None, &model).is_err());
}

#[test]
fn model_payload_matches_weight_count() {
    let c = common::tiny();
    let spec = c.network_spec().unwrap();
    let zeros = SurrogateModel::zeros(spec.clone()).unwrap();
    assert_eq!(
        spec.num_weights(),
        zeros.layers.iter().map(|l| l.w.len() + l.b.len()).sum::<usize>()
    );
}
