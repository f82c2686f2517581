//! Binary checkpoint: magic, version, architecture, hyperparameters as JSON,
//! then the parameters as little-endian `f32`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::CheckpointError;

use super::{DqnParams, NetworkShape, QNetwork};

const MAGIC: &[u8; 8] = b"AIMQNET\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: DqnParams,
    pub network: QNetwork<f32>,
}

fn shape_dims(s: &NetworkShape) -> [u32; 11] {
    [
        s.channels,
        s.rows,
        s.cols,
        s.conv1_filters,
        s.conv1_kernel,
        s.conv1_stride,
        s.conv2_filters,
        s.conv2_kernel,
        s.conv2_stride,
        s.hidden,
        s.outputs,
    ]
    .map(|d| d as u32)
}

fn shape_from_dims(d: [u32; 11]) -> NetworkShape {
    let d = d.map(|v| v as usize);
    NetworkShape {
        channels: d[0],
        rows: d[1],
        cols: d[2],
        conv1_filters: d[3],
        conv1_kernel: d[4],
        conv1_stride: d[5],
        conv2_filters: d[6],
        conv2_kernel: d[7],
        conv2_stride: d[8],
        hidden: d[9],
        outputs: d[10],
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &DqnParams, net: &QNetwork<f32>) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for d in shape_dims(net.shape()) {
        w.write_all(&d.to_le_bytes())?;
    }
    let json = serde_json::to_vec(params).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(net.params.len() as u64).to_le_bytes())?;
    let mut block = Vec::with_capacity(net.params.len() * 4);
    for p in &net.params {
        block.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&block)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a checkpoint, refusing it unless its architecture equals `expected`
/// (when given).
pub fn read_checkpoint<R: Read>(mut r: R, expected: Option<&NetworkShape>) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut dims = [0u32; 11];
    for d in &mut dims {
        *d = read_u32(&mut r)?;
    }
    let shape = shape_from_dims(dims);
    if let Some(exp) = expected {
        if *exp != shape {
            return Err(CheckpointError::Shape { expected: exp.describe(), found: shape.describe() });
        }
    }
    shape.validate().map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let json_len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let params: DqnParams = serde_json::from_slice(&json).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let mut n = [0u8; 8];
    r.read_exact(&mut n).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let n = u64::from_le_bytes(n) as usize;
    if n != shape.param_count() {
        return Err(CheckpointError::Malformed(format!("{n} parameters, architecture needs {}", shape.param_count())));
    }
    let mut block = vec![0u8; n * 4];
    r.read_exact(&mut block).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let values = block.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let network = QNetwork::from_params(shape, values).expect("length checked");
    Ok(Checkpoint { params: DqnParams { network: shape, ..params }, network })
}

/// Writes atomically via a temporary sibling file.
pub fn save_checkpoint(path: &Path, params: &DqnParams, net: &QNetwork<f32>) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
        write_checkpoint(&mut f, params, net)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected: Option<&NetworkShape>) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(std::io::BufReader::new(fs::File::open(path)?), expected)
}
