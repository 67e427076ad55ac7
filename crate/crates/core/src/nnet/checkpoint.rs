//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, JSON header
//! (architecture, shapes, freeze flags, seed, metadata), `u64` value count,
//! then every parameter and buffer as little-endian `f64` in layer order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Network;
use super::{NnetError, Result};

pub const MAGIC: &[u8; 8] = b"GZCKPT\r\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    network: Network,
    metadata: BTreeMap<String, String>,
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(NnetError::Checkpoint("truncated file".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn to_bytes(net: &Network, metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        network: net.clone(),
        metadata: metadata.clone(),
    })
    .map_err(|e| NnetError::Checkpoint(e.to_string()))?;
    let values: Vec<f64> = net
        .layers()
        .iter()
        .flat_map(|l| l.blocks())
        .flat_map(|p| p.value.iter().copied())
        .collect();
    let mut out = Vec::with_capacity(32 + header.len() + values.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<(Network, BTreeMap<String, String>)> {
    let b = &mut bytes;
    if take(b, 8)? != MAGIC {
        return Err(NnetError::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(b, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(NnetError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let header_len = u64::from_le_bytes(take(b, 8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(take(b, header_len)?)
        .map_err(|e| NnetError::Checkpoint(e.to_string()))?;
    let count = u64::from_le_bytes(take(b, 8)?.try_into().expect("8 bytes")) as usize;
    let payload = take(
        b,
        count
            .checked_mul(8)
            .ok_or_else(|| NnetError::Checkpoint("bad count".into()))?,
    )?;
    if !b.is_empty() {
        return Err(NnetError::Checkpoint("trailing bytes".into()));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut net = header.network;
    let mut consumed = 0;
    for layer in net.layers_mut() {
        for p in layer.blocks_mut() {
            let n: usize = p.shape.iter().product();
            p.value = values.by_ref().take(n).collect();
            consumed += p.value.len();
            if p.value.len() != n {
                return Err(NnetError::Checkpoint(format!(
                    "payload too short for {}",
                    p.name
                )));
            }
        }
    }
    if consumed != count {
        return Err(NnetError::Checkpoint(format!(
            "payload has {count} values, shapes need {consumed}"
        )));
    }
    net.config.validate()?;
    Ok((net, header.metadata))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &Network,
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    std::fs::write(path, to_bytes(net, metadata)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, BTreeMap<String, String>)> {
    from_bytes(&std::fs::read(path)?)
}
