//! Binary model state: magic, version, JSON header, then named tensors with
//! shapes and little-endian `f64` values.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EpochLog, RecModel, RecModelConfig, RecModelState};
use crate::dataset::RatingScale;
use crate::tensor::{AdamState, ParamStore, Tensor};
use crate::{Error, Result};

pub const STATE_MAGIC: &[u8; 8] = b"TDPSTATE";
pub const STATE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: RecModelConfig,
    rating_min: u8,
    rating_max: u8,
    num_users: usize,
    num_items: usize,
    best_epoch: usize,
    optimizer_step: u64,
    log: Vec<EpochLog>,
}

fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, Tensor)> {
    let name_len = read_u32(r)? as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| Error::invalid("tensor name is not UTF-8"))?;
    let ndim = read_u32(r)? as usize;
    let shape = (0..ndim)
        .map(|_| read_u64(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((name, Tensor::new(shape, data)?))
}

pub fn write_state<W: Write>(w: &mut W, state: &RecModelState) -> Result<()> {
    let m = &state.model;
    let header = Header {
        config: m.config.clone(),
        rating_min: m.scale.min,
        rating_max: m.scale.max,
        num_users: m.num_users,
        num_items: m.num_items,
        best_epoch: state.best_epoch,
        optimizer_step: state.optimizer.step,
        log: state.log.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(STATE_MAGIC)?;
    w.write_all(&STATE_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let n = m.params.len();
    w.write_all(&((3 * n) as u32).to_le_bytes())?;
    for (name, t) in m.params.iter() {
        write_tensor(w, name, t)?;
    }
    for (prefix, moments) in [("adam.m.", &state.optimizer.m), ("adam.v.", &state.optimizer.v)] {
        for ((name, _), t) in m.params.iter().zip(moments.iter()) {
            write_tensor(w, &format!("{prefix}{name}"), t)?;
        }
    }
    Ok(())
}

pub fn read_state<R: Read>(r: &mut R) -> Result<RecModelState> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != STATE_MAGIC {
        return Err(Error::invalid("not a model state file"));
    }
    let version = read_u32(r)?;
    if version != STATE_VERSION {
        return Err(Error::invalid(format!("unsupported state version {version}")));
    }
    let header_len = read_u64(r)? as usize;
    let mut json = vec![0u8; header_len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let count = read_u32(r)? as usize;
    let mut params = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for _ in 0..count {
        let (name, t) = read_tensor(r)?;
        if name.starts_with("adam.m.") {
            m.push(t);
        } else if name.starts_with("adam.v.") {
            v.push(t);
        } else {
            params.add(name, t);
        }
    }
    if m.len() != params.len() || v.len() != params.len() {
        return Err(Error::invalid("optimizer moments do not match parameters"));
    }
    let scale = RatingScale::new(header.rating_min, header.rating_max)?;
    let model = RecModel::from_params(header.config, scale, header.num_users, header.num_items, params)?;
    Ok(RecModelState {
        model,
        optimizer: AdamState {
            step: header.optimizer_step,
            m,
            v,
        },
        log: header.log,
        best_epoch: header.best_epoch,
    })
}
