//! JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "rescore-checkpoint",
//!   "version": 1,
//!   "config": {"num_classes": 80, "hidden": 256, "layers": 3, "encoder": "gru",
//!              "regressor_hidden": 80, "seed": 0},
//!   "tensors": {"gru.l0.fwd.w_ih": [[...], ...], "gru.l0.fwd.bias": [...], ...}
//! }
//! ```
//!
//! Matrices are nested row-major arrays, vectors flat arrays. Numbers are
//! written in shortest round-trip decimal form, so a save/load cycle is
//! bit-exact. Tensor names:
//!
//! - `gru.l{k}.{fwd,bwd}.{w_ih,w_hh,bias}`: gate blocks stacked as
//!   update, reset, candidate
//! - `linear.weight`, `linear.bias` (linear encoder only)
//! - `regressor.w1` (`4*hidden x regressor_hidden`), `regressor.b1`,
//!   `regressor.w2` (`regressor_hidden x 1`), `regressor.b2`

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{ModelConfig, ModelParams, RescoringModel, Tensor};
use crate::error::{Error, Result};

pub const FORMAT: &str = "rescore-checkpoint";
pub const VERSION: u32 = 1;

fn tensor_to_json(t: &Tensor) -> Value {
    if t.shape().len() == 1 {
        json!(t.data())
    } else {
        Value::Array((0..t.rows()).map(|r| json!(t.row(r))).collect())
    }
}

fn numbers(v: &Value, name: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| Error::CorruptCheckpoint(format!("`{name}` is not an array")))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| Error::CorruptCheckpoint(format!("`{name}` holds a non-number")))
        })
        .collect()
}

fn tensor_from_json(v: &Value, name: &str) -> Result<Tensor> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::CorruptCheckpoint(format!("`{name}` is not an array")))?;
    if arr.first().is_some_and(Value::is_array) {
        let rows: Vec<Vec<f64>> = arr.iter().map(|r| numbers(r, name)).collect::<Result<_>>()?;
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::CorruptCheckpoint(format!("`{name}` is ragged")));
        }
        Ok(Tensor::from_vec(&[rows.len(), cols], rows.concat()))
    } else {
        let data = numbers(v, name)?;
        Ok(Tensor::from_vec(&[data.len()], data))
    }
}

pub fn to_json(model: &RescoringModel) -> Value {
    let tensors: Map<String, Value> = model
        .params
        .named()
        .into_iter()
        .map(|(name, t)| (name, tensor_to_json(t)))
        .collect();
    json!({
        "format": FORMAT,
        "version": VERSION,
        "config": model.config,
        "tensors": tensors,
    })
}

pub fn from_json(value: &Value) -> Result<RescoringModel> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::CorruptCheckpoint("top level is not an object".into()))?;
    if obj.get("format").and_then(Value::as_str) != Some(FORMAT) {
        return Err(Error::CorruptCheckpoint("missing or unknown `format`".into()));
    }
    let version = obj
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::CorruptCheckpoint("missing `version`".into()))? as u32;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let config: ModelConfig = serde_json::from_value(
        obj.get("config")
            .cloned()
            .ok_or_else(|| Error::CorruptCheckpoint("missing `config`".into()))?,
    )
    .map_err(|source| Error::Parse {
        context: "checkpoint config".into(),
        source,
    })?;
    config.validate()?;
    let stored = obj
        .get("tensors")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::CorruptCheckpoint("missing `tensors`".into()))?;

    let mut params = ModelParams::zeros(&config);
    let expected = params.named_mut();
    if stored.len() != expected.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            stored.len()
        )));
    }
    for (name, slot) in expected {
        let v = stored
            .get(&name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor `{name}`")))?;
        let t = tensor_from_json(v, &name)?;
        if t.shape() != slot.shape() {
            return Err(Error::ShapeMismatch {
                name,
                expected: slot.shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
        *slot = t;
    }
    Ok(RescoringModel { config, params })
}

pub fn save_checkpoint(model: &RescoringModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&to_json(model)).map_err(|source| Error::Parse {
        context: "checkpoint output".into(),
        source,
    })?;
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<RescoringModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let value: Value = serde_json::from_str(&text).map_err(|source| Error::Parse {
        context: path.display().to_string(),
        source,
    })?;
    from_json(&value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{extract_features, EncoderKind};
    use crate::bbox::BBox;
    use crate::dataset::{Detection, ImageRecord};

    fn model(encoder: EncoderKind) -> RescoringModel {
        RescoringModel::new(ModelConfig {
            num_classes: 4,
            hidden: 4,
            layers: 2,
            encoder,
            regressor_hidden: 6,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [EncoderKind::Gru, EncoderKind::Linear] {
            let m = model(kind);
            let path = dir.path().join(format!("{kind}.json"));
            save_checkpoint(&m, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back, m);
            for ((_, a), (_, b)) in m.params.named().iter().zip(back.params.named()) {
                let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b));
            }

            let mut img = ImageRecord::new(1, 100.0, 100.0);
            for i in 0..3 {
                img.dets.push(Detection {
                    bbox: BBox::new(i as f64 * 7.0, 3.0, 20.0, 30.0),
                    class_idx: i,
                    score: 0.3 + 0.2 * i as f64,
                    det_id: i,
                });
            }
            let seq = extract_features(&img, 4).unwrap();
            assert_eq!(m.predict(&seq), back.predict(&seq));
        }
    }

    #[test]
    fn wrong_hidden_size_is_a_shape_mismatch() {
        let mut v = to_json(&model(EncoderKind::Gru));
        v["config"]["hidden"] = json!(5);
        assert!(matches!(from_json(&v), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn version_and_corruption() {
        let mut v = to_json(&model(EncoderKind::Gru));
        v["version"] = json!(2);
        assert!(matches!(from_json(&v), Err(Error::VersionMismatch { found: 2, .. })));

        let mut v = to_json(&model(EncoderKind::Gru));
        v["tensors"]["regressor.b2"] = json!("nope");
        assert!(matches!(from_json(&v), Err(Error::CorruptCheckpoint(_))));

        let mut v = to_json(&model(EncoderKind::Gru));
        v["tensors"].as_object_mut().unwrap().remove("regressor.w1");
        assert!(matches!(from_json(&v), Err(Error::CorruptCheckpoint(_))));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{ not json").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Parse { .. })));
    }
}
