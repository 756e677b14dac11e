//! Binary checkpoints: the magic bytes `DECL1`, a little-endian `u32`
//! header length, a JSON header describing each block, then the blocks as
//! little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::toy::model::ToyModelParams;

pub const MAGIC: &[u8; 5] = b"DECL1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f64` elements from the start of the payload.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub scale: usize,
    pub blocks: Vec<BlockHeader>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(
    mut out: W,
    params: &ToyModelParams,
    meta: serde_json::Value,
) -> Result<()> {
    let mut blocks = Vec::new();
    let mut offset = 0;
    for (name, t) in ToyModelParams::NAMES.iter().zip(params.tensors()) {
        blocks.push(BlockHeader {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: t.numel(),
        });
        offset += t.numel();
    }
    let header = CheckpointHeader {
        version: VERSION,
        scale: params.scale,
        blocks,
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let len =
        u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
    out.write_all(MAGIC).map_err(io_err)?;
    out.write_all(&len.to_le_bytes()).map_err(io_err)?;
    out.write_all(&json).map_err(io_err)?;
    let mut payload = Vec::with_capacity(offset * 8);
    for t in params.tensors() {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&payload).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(ToyModelParams, serde_json::Value)> {
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(
            "bad magic, not a DECL1 checkpoint".into(),
        ));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len).map_err(io_err)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut json).map_err(io_err)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let mut payload = Vec::new();
    input.read_to_end(&mut payload).map_err(io_err)?;
    if payload.len() % 8 != 0 {
        return Err(Error::Checkpoint(
            "payload is not a whole number of f64".into(),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();

    let mut params = ToyModelParams::zeros(header.scale)?;
    if header.blocks.len() != ToyModelParams::NAMES.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} blocks, found {}",
            ToyModelParams::NAMES.len(),
            header.blocks.len()
        )));
    }
    for (name, slot) in ToyModelParams::NAMES.iter().zip(params.tensors_mut()) {
        let block = header
            .blocks
            .iter()
            .find(|b| b.name == *name)
            .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))?;
        if block.shape != slot.shape() || block.len != slot.numel() {
            return Err(Error::Checkpoint(format!(
                "block {name} has shape {:?}, expected {:?}",
                block.shape,
                slot.shape()
            )));
        }
        let data = values
            .get(block.offset..block.offset + block.len)
            .ok_or_else(|| Error::Checkpoint(format!("block {name} runs past the payload")))?;
        *slot = Tensor::new(block.shape.clone(), data.to_vec())?;
    }
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok((params, header.meta))
}

pub fn save_checkpoint(
    path: &Path,
    params: &ToyModelParams,
    meta: serde_json::Value,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_checkpoint(std::io::BufWriter::new(file), params, meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(ToyModelParams, serde_json::Value)> {
    let file = std::fs::File::open(path).map_err(io_err)?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = ToyModelParams::init(2, 3).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, serde_json::json!({"step": 7})).unwrap();
        assert_eq!(&buf[..5], MAGIC);
        let (q, meta) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta["step"], 7);
    }

    #[test]
    fn rejects_corruption() {
        let p = ToyModelParams::init(2, 3).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, serde_json::Value::Null).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(bad.as_slice()),
            Err(Error::Checkpoint(_))
        ));
        buf.truncate(buf.len() - 8);
        assert!(matches!(
            read_checkpoint(buf.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }
}
