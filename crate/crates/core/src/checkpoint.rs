//! Checkpoint container: magic "AKMD1", a JSON header listing parameter
//! names/shapes, then raw little-endian fp32 data (values, then optimizer
//! moments when present). fp32 models round-trip bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"AKMD1";

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    has_opt: bool,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: [usize; 4],
}

/// Deserialized checkpoint prior to being applied to a model.
pub struct Checkpoint {
    pub step: u64,
    pub params: Vec<(String, Shape, Vec<f32>)>,
    pub opt: Option<OptState>,
}

pub struct OptState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

fn write_f32s<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(t.len() * 4);
    for &v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; len * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn save<T: Scalar>(
    path: &Path,
    store: &ParamStore<T>,
    opt: Option<&Adam<T>>,
    step: u64,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        step,
        has_opt: opt.is_some(),
        params: store
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().dims(),
            })
            .collect(),
    };
    let hjson = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(hjson.len() as u64).to_le_bytes())?;
    w.write_all(&hjson)?;
    for (_, t) in store.iter() {
        write_f32s(&mut w, t)?;
    }
    if let Some(opt) = opt {
        let (m, v, _) = opt.state();
        for t in m {
            write_f32s(&mut w, t)?;
        }
        for t in v {
            write_f32s(&mut w, t)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let hlen = u64::from_le_bytes(len8) as usize;
    let mut hjson = vec![0u8; hlen];
    r.read_exact(&mut hjson)?;
    let header: Header = serde_json::from_slice(&hjson)?;

    let mut params = Vec::with_capacity(header.params.len());
    for e in &header.params {
        let shape = Shape::from_dims(e.shape);
        let data = read_f32s(&mut r, shape.len())?;
        params.push((e.name.clone(), shape, data));
    }
    let opt = if header.has_opt {
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (_, shape, _) in &params {
            m.push(read_f32s(&mut r, shape.len())?);
        }
        for (_, shape, _) in &params {
            v.push(read_f32s(&mut r, shape.len())?);
        }
        Some(OptState { m, v })
    } else {
        None
    };
    Ok(Checkpoint {
        step: header.step,
        params,
        opt,
    })
}

/// Copy checkpoint values into a store. The parameter name sets must match
/// exactly; the error lists what is missing or unexpected.
pub fn apply<T: Scalar>(ckpt: &Checkpoint, store: &mut ParamStore<T>) -> Result<()> {
    let mut missing = Vec::new();
    let mut seen = vec![false; store.len()];
    for (name, shape, data) in &ckpt.params {
        match store.id_of(name) {
            Some(id) => {
                seen[id.0] = true;
                if store.value(id).shape() != *shape {
                    return Err(Error::Checkpoint(format!(
                        "parameter '{}' has shape {} in the checkpoint but {} in the model",
                        name,
                        shape,
                        store.value(id).shape()
                    )));
                }
                let vals: Vec<f64> = data.iter().map(|&v| v as f64).collect();
                store.set_value(id, Tensor::from_f64s(*shape, &vals));
            }
            None => missing.push(name.clone()),
        }
    }
    let unexpected: Vec<String> = store
        .ids()
        .filter(|id| !seen[id.0])
        .map(|id| store.name(id).to_string())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        // "missing" = in checkpoint but not in model; "unexpected" = in
        // model but absent from the checkpoint
        return Err(Error::CheckpointNames {
            missing,
            unexpected,
        });
    }
    Ok(())
}

/// Restore Adam moments saved alongside the parameters.
pub fn apply_opt<T: Scalar>(
    ckpt: &Checkpoint,
    store: &ParamStore<T>,
    adam: &mut Adam<T>,
) -> Result<()> {
    let Some(opt) = &ckpt.opt else {
        return Err(Error::Checkpoint(
            "checkpoint holds no optimizer state".into(),
        ));
    };
    let mut m = Vec::with_capacity(store.len());
    let mut v = Vec::with_capacity(store.len());
    for (i, (name, shape, _)) in ckpt.params.iter().enumerate() {
        let id = store
            .id_of(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter '{}'", name)))?;
        // moments follow checkpoint order; re-align to store order
        let _ = id;
        let mf: Vec<f64> = opt.m[i].iter().map(|&x| x as f64).collect();
        let vf: Vec<f64> = opt.v[i].iter().map(|&x| x as f64).collect();
        m.push((id, Tensor::from_f64s(*shape, &mf)));
        v.push((id, Tensor::from_f64s(*shape, &vf)));
    }
    m.sort_by_key(|(id, _)| id.0);
    v.sort_by_key(|(id, _)| id.0);
    adam.restore_state(
        m.into_iter().map(|(_, t)| t).collect(),
        v.into_iter().map(|(_, t)| t).collect(),
        ckpt.step,
    );
    Ok(())
}
