//! Versioned model artifacts.
//!
//! A file is a JSON object `{format_version, sha256, payload}`; `sha256` is
//! the hex digest of the payload text exactly as written. Numeric arrays are
//! stored as base-64 little-endian `f64` blobs so reloading is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::counterfactual::InterventionTable;
use crate::dag::DagSpec;
use crate::error::{Error, Result};
use crate::exogenous::{ExogenousNet, IndependenceDiscriminator};
use crate::model::{ExplainerModel, TrainingMetadata};
use crate::numeric::{LayerBlock, Mlp, ParameterSet, RunningStats};
use crate::scm::{EdgeWeighting, ScmParameters};
use crate::trainer::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct Container<'a> {
    format_version: u32,
    sha256: String,
    payload: &'a RawValue,
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
}

#[derive(Deserialize)]
struct RawContainer<'a> {
    sha256: String,
    #[serde(borrow)]
    payload: &'a RawValue,
}

#[derive(Serialize, Deserialize)]
struct Blob {
    name: String,
    shape: [usize; 2],
    data: String,
}

#[derive(Serialize, Deserialize)]
struct StatsRecord {
    mean: String,
    var: String,
}

#[derive(Serialize, Deserialize)]
struct MlpRecord {
    blocks: Vec<LayerBlock>,
    params: Vec<Blob>,
    running: Vec<Option<StatsRecord>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum WeightingRecord {
    Global { params: Vec<Blob> },
    SharedTrunk { net: MlpRecord },
    PerEdge { nets: Vec<MlpRecord> },
}

#[derive(Serialize, Deserialize)]
struct ExogenousRecord {
    n_features: usize,
    common: MlpRecord,
    towers: Vec<MlpRecord>,
}

#[derive(Serialize, Deserialize)]
struct ScmRecord {
    use_blackbox_score: bool,
    weighting: WeightingRecord,
    biases: Option<Vec<Blob>>,
}

#[derive(Serialize, Deserialize)]
struct DiscriminatorRecord {
    lr: f64,
    period: usize,
    net: MlpRecord,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    config: TrainConfig,
    dag: DagSpec,
    exogenous: ExogenousRecord,
    scm: ScmRecord,
    discriminator: Option<DiscriminatorRecord>,
    interventions: Option<InterventionTable>,
    metadata: TrainingMetadata,
}

fn encode_f64(values: impl IntoIterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(f64::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

fn decode_f64(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Integrity(format!("bad base-64 blob: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Integrity("blob length is not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn params_record(ps: &ParameterSet) -> Vec<Blob> {
    ps.iter()
        .map(|(name, a)| Blob {
            name: name.to_owned(),
            shape: [a.nrows(), a.ncols()],
            data: encode_f64(a.iter().copied()),
        })
        .collect()
}

fn params_from(blobs: Vec<Blob>) -> Result<ParameterSet> {
    let mut ps = ParameterSet::new();
    for b in blobs {
        let values = decode_f64(&b.data)?;
        let a = Array2::from_shape_vec((b.shape[0], b.shape[1]), values)
            .map_err(|_| Error::Integrity(format!("blob `{}` does not match its shape", b.name)))?;
        ps.push(b.name, a);
    }
    Ok(ps)
}

fn mlp_record(m: &Mlp) -> MlpRecord {
    MlpRecord {
        blocks: m.blocks().to_vec(),
        params: params_record(m.params()),
        running: m
            .running()
            .iter()
            .map(|r| {
                r.as_ref().map(|r| StatsRecord {
                    mean: encode_f64(r.mean.iter().copied()),
                    var: encode_f64(r.var.iter().copied()),
                })
            })
            .collect(),
    }
}

fn mlp_from(r: MlpRecord) -> Result<Mlp> {
    let running = r
        .running
        .into_iter()
        .map(|s| {
            s.map(|s| {
                Ok(RunningStats {
                    mean: decode_f64(&s.mean)?,
                    var: decode_f64(&s.var)?,
                })
            })
            .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::from_parts(r.blocks, params_from(r.params)?, running)
}

fn payload_of(model: &ExplainerModel) -> Payload {
    let weighting = match model.scm.weighting() {
        EdgeWeighting::Global(ps) => WeightingRecord::Global {
            params: params_record(ps),
        },
        EdgeWeighting::SharedTrunk(m) => WeightingRecord::SharedTrunk { net: mlp_record(m) },
        EdgeWeighting::PerEdge(ms) => WeightingRecord::PerEdge {
            nets: ms.iter().map(mlp_record).collect(),
        },
    };
    Payload {
        config: model.config.clone(),
        dag: model.dag.clone(),
        exogenous: ExogenousRecord {
            n_features: model.exogenous.n_features(),
            common: mlp_record(model.exogenous.common()),
            towers: model.exogenous.towers().iter().map(mlp_record).collect(),
        },
        scm: ScmRecord {
            use_blackbox_score: model.scm.uses_blackbox_score(),
            weighting,
            biases: model.scm.biases().map(params_record),
        },
        discriminator: model.discriminator.as_ref().map(|d| DiscriminatorRecord {
            lr: d.lr,
            period: d.period,
            net: mlp_record(d.net()),
        }),
        interventions: model.interventions.clone(),
        metadata: model.metadata.clone(),
    }
}

fn model_from(p: Payload) -> Result<ExplainerModel> {
    let exogenous = ExogenousNet::from_parts(
        mlp_from(p.exogenous.common)?,
        p.exogenous.towers.into_iter().map(mlp_from).collect::<Result<_>>()?,
        p.exogenous.n_features,
    )?;
    let weighting = match p.scm.weighting {
        WeightingRecord::Global { params } => EdgeWeighting::Global(params_from(params)?),
        WeightingRecord::SharedTrunk { net } => EdgeWeighting::SharedTrunk(mlp_from(net)?),
        WeightingRecord::PerEdge { nets } => {
            EdgeWeighting::PerEdge(nets.into_iter().map(mlp_from).collect::<Result<_>>()?)
        }
    };
    let biases = p.scm.biases.map(params_from).transpose()?;
    let scm = ScmParameters::from_parts(&p.dag, weighting, biases, p.scm.use_blackbox_score)?;
    let discriminator = p
        .discriminator
        .map(|d| IndependenceDiscriminator::from_net(mlp_from(d.net)?, d.lr, d.period))
        .transpose()?;
    if exogenous.n_concepts() != p.dag.n_concepts() {
        return Err(Error::Dimension("exogenous net and DAG disagree on K".into()));
    }
    if let Some(t) = &p.interventions {
        if t.n_concepts() != p.dag.n_concepts() {
            return Err(Error::Dimension("intervention table and DAG disagree on K".into()));
        }
    }
    Ok(ExplainerModel {
        config: p.config,
        dag: p.dag,
        exogenous,
        scm,
        discriminator,
        interventions: p.interventions,
        metadata: p.metadata,
    })
}

fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// The artifact as text.
pub fn model_to_string(model: &ExplainerModel) -> String {
    let payload = serde_json::to_string(&payload_of(model)).expect("payload serialises");
    let raw = RawValue::from_string(payload).expect("valid JSON");
    let container = Container {
        format_version: FORMAT_VERSION,
        sha256: digest(raw.get()),
        payload: &raw,
    };
    let mut text = serde_json::to_string(&container).expect("container serialises");
    text.push('\n');
    text
}

pub fn model_from_str(text: &str) -> Result<ExplainerModel> {
    let header: Header =
        serde_json::from_str(text).map_err(|e| Error::Integrity(format!("unreadable artifact: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let raw: RawContainer =
        serde_json::from_str(text).map_err(|e| Error::Integrity(format!("unreadable artifact: {e}")))?;
    if digest(raw.payload.get()) != raw.sha256 {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    let payload: Payload = serde_json::from_str(raw.payload.get())
        .map_err(|e| Error::Integrity(format!("malformed payload: {e}")))?;
    model_from(payload)
}

pub fn save_model(model: &ExplainerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ExplainerModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};
    use crate::scm::Variant;
    use crate::trainer::fit;

    fn trained(variant: Variant, per_edge: bool, batch_norm: bool) -> (ExplainerModel, crate::data::Dataset) {
        let out = synth_generate(&SynthSpec {
            n_concepts: 3,
            n_features: 5,
            n_train: 200,
            n_validation: 60,
            n_test: 60,
            seed: 3,
            ..SynthSpec::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            variant,
            local_per_edge: per_edge,
            batch_norm,
            epochs: 2,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let run = fit(&out.splits, &out.dag, &cfg).unwrap();
        (run.model, out.splits.test)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        for (variant, per_edge, bn) in [
            (Variant::Global, false, false),
            (Variant::Local, false, true),
            (Variant::Local, true, false),
        ] {
            let (model, test) = trained(variant, per_edge, bn);
            let text = model_to_string(&model);
            let back = model_from_str(&text).unwrap();
            assert_eq!(back, model);
            assert_eq!(back.predict_dataset(&test).unwrap(), model.predict_dataset(&test).unwrap());
            assert_eq!(model_to_string(&back), text);
        }
    }

    #[test]
    fn file_roundtrip() {
        let (model, _) = trained(Variant::Global, false, false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        save_model(&model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
        assert!(matches!(load_model(dir.path().join("none")), Err(Error::Io { .. })));
    }

    #[test]
    fn future_version_rejected() {
        let (model, _) = trained(Variant::Global, false, false);
        let text = model_to_string(&model).replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(
            model_from_str(&text),
            Err(Error::Version { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn corruption_detected() {
        let (model, _) = trained(Variant::Local, false, false);
        let text = model_to_string(&model);
        let truncated = &text[..text.len() / 2];
        assert!(matches!(model_from_str(truncated), Err(Error::Integrity(_))));
        let tampered = text.replacen("\"epoch\":", "\"epoch\":1", 1);
        assert!(matches!(model_from_str(&tampered), Err(Error::Integrity(_))));
    }
}
