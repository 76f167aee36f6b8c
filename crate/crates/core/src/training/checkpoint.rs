//! Binary checkpoint: `SENC`, a little-endian `u32` version, a `u64`
//! manifest length, the JSON manifest, then every tensor's raw
//! little-endian data in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OptimizerState, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::model::{param_specs, DecoderLayout, ModelConfig, ParamStore, Senet};
use crate::tensor::{DType, Prng, Real, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SENC";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AdamEntry {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    model: ModelConfig,
    layout: DecoderLayout,
    train: TrainConfig,
    step: usize,
    rng: [u64; 4],
    adam: AdamEntry,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or run inference.
pub type Checkpoint<T> = Trainer<T>;

fn entry<T: Real>(name: String, t: &Tensor<T>) -> TensorEntry {
    TensorEntry {
        name,
        dtype: T::DTYPE,
        shape: t.shape().to_vec(),
    }
}

pub fn encode_checkpoint<T: Real>(tr: &Trainer<T>) -> Result<Vec<u8>> {
    let params = &tr.model.params;
    let mut tensors = Vec::with_capacity(3 * params.len());
    let mut all: Vec<&Tensor<T>> = Vec::with_capacity(3 * params.len());
    for (name, t) in params.iter() {
        tensors.push(entry(name.to_string(), t));
        all.push(t);
    }
    for (prefix, moments) in [("adam.m", &tr.opt.m), ("adam.v", &tr.opt.v)] {
        for (name, t) in params.names().iter().zip(moments.iter()) {
            tensors.push(entry(format!("{prefix}.{name}"), t));
            all.push(t);
        }
    }
    let manifest = Manifest {
        model: tr.model.config.clone(),
        layout: tr.model.layout,
        train: tr.cfg.clone(),
        step: tr.step,
        rng: tr.rng.state(),
        adam: AdamEntry {
            t: tr.opt.t,
            beta1: tr.opt.beta1,
            beta2: tr.opt.beta2,
            eps: tr.opt.eps,
        },
        tensors,
    };
    let text = serde_json::to_vec(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    for t in all {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn save_checkpoint<T: Real>(path: &Path, tr: &Trainer<T>) -> Result<()> {
    let bytes = encode_checkpoint(tr)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let s = bytes
        .get(*pos..*pos + n)
        .ok_or_else(|| Error::Format(format!("checkpoint truncated in {what}")))?;
    *pos += n;
    Ok(s)
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Trainer<T>> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4, "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut pos, 4, "header")?.try_into().expect("4"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(take(bytes, &mut pos, 8, "header")?.try_into().expect("8"));
    let text = take(bytes, &mut pos, len as usize, "manifest")?;
    let m: Manifest = serde_json::from_slice(text).map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;

    m.model.validate()?;
    let specs = param_specs(&m.model, &m.layout.names());
    let mut expected: Vec<(String, Vec<usize>)> = specs.iter().map(|s| (s.name.clone(), s.shape.clone())).collect();
    for prefix in ["adam.m", "adam.v"] {
        for s in &specs {
            expected.push((format!("{prefix}.{}", s.name), s.shape.clone()));
        }
    }
    if m.tensors.len() != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, model needs {}",
            m.tensors.len(),
            expected.len()
        )));
    }
    let width = T::DTYPE.size_of();
    let mut read = Vec::with_capacity(expected.len());
    for (e, (name, shape)) in m.tensors.iter().zip(&expected) {
        if &e.name != name {
            return Err(Error::Format(format!("unknown parameter {} (expected {name})", e.name)));
        }
        if &e.shape != shape {
            return Err(Error::Format(format!("{name}: shape {:?}, expected {shape:?}", e.shape)));
        }
        if e.dtype != T::DTYPE {
            return Err(Error::Format(format!("{name}: stored as {:?}, loading as {:?}", e.dtype, T::DTYPE)));
        }
        let n: usize = shape.iter().product();
        let raw = take(bytes, &mut pos, n * width, name)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        read.push(Tensor::new(shape, data)?);
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint data", bytes.len() - pos)));
    }

    let k = specs.len();
    let mut it = read.into_iter();
    let mut params = ParamStore::new();
    for s in &specs {
        params.insert(&s.name, it.next().expect("counted"))?;
    }
    let mv: Vec<Tensor<T>> = it.collect();
    let (m_t, v_t) = mv.split_at(k);
    let opt = OptimizerState {
        m: m_t.to_vec(),
        v: v_t.to_vec(),
        t: m.adam.t,
        beta1: m.adam.beta1,
        beta2: m.adam.beta2,
        eps: m.adam.eps,
    };
    Ok(Trainer {
        model: Senet {
            config: m.model,
            layout: m.layout,
            params,
        },
        opt,
        cfg: m.train,
        rng: Prng::from_state(m.rng),
        step: m.step,
        trace: Vec::new(),
    })
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Trainer<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthConfig, Task};
    use crate::training::TrainData;

    fn trained() -> Trainer<f32> {
        let mc = ModelConfig {
            img_size: 16,
            patch_size: 4,
            enc_dim: 8,
            enc_heads: 2,
            enc_depth: 1,
            dec_dim: 8,
            dec_heads: 2,
            dec_depth: 1,
            ..ModelConfig::default()
        };
        let tc = TrainConfig {
            epochs: 1,
            batch_size: 2,
            lr0: 1e-3,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(mc, tc).unwrap();
        let d = synth_dataset(&SynthConfig::new(Task::Cod, 16, 2), 0, 4).unwrap();
        t.run(&TrainData::Single(d), None).unwrap();
        t
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let t = trained();
        let a = encode_checkpoint(&t).unwrap();
        let back: Trainer<f32> = decode_checkpoint(&a).unwrap();
        assert_eq!(encode_checkpoint(&back).unwrap(), a);
        for (x, y) in t.model.params.tensors().iter().zip(back.model.params.tensors()) {
            assert!(x.bit_eq(y));
        }
        assert_eq!(back.rng, t.rng);
        assert_eq!(back.step, t.step);
        assert_eq!(back.cfg, t.cfg);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let a = encode_checkpoint(&trained()).unwrap();
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint::<f32>(&bad), Err(Error::Format(_))));
        let mut v2 = a.clone();
        v2[4] = 2;
        assert!(matches!(decode_checkpoint::<f32>(&v2), Err(Error::Format(m)) if m.contains("version")));
        assert!(matches!(decode_checkpoint::<f32>(&a[..a.len() - 3]), Err(Error::Format(_))));
        assert!(matches!(decode_checkpoint::<f64>(&a), Err(Error::Format(_))));
        // rename one tensor inside the manifest
        let text = String::from_utf8_lossy(&a).into_owned();
        let hit = text.find("enc.patch_embed.w").unwrap();
        let mut renamed = a.clone();
        renamed[hit..hit + 3].copy_from_slice(b"xnc");
        assert!(matches!(decode_checkpoint::<f32>(&renamed), Err(Error::Format(m)) if m.contains("unknown parameter")));
    }
}
