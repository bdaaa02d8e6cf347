//! Flat little-endian checkpoint layout:
//!
//! ```text
//! magic  b"TRLN"            4 bytes
//! version u8 (= 1)
//! count   u32               number of networks
//! per network:
//!   activation u8           0 relu, 1 tanh, 2 identity
//!   n_dims     u32
//!   dims       u32 x n_dims
//!   per layer k: weights f64 x dims[k+1]*dims[k] (row-major), bias f64 x dims[k+1]
//! ```

use std::fs;
use std::path::Path;

use super::{Activation, LayerParams, Mlp, NnError, Params};

const MAGIC: &[u8; 4] = b"TRLN";
const VERSION: u8 = 1;

pub fn encode_checkpoint(nets: &[&Mlp]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for net in nets {
        out.push(net.activation().code());
        out.extend_from_slice(&(net.dims().len() as u32).to_le_bytes());
        for &d in net.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for layer in &net.params().layers {
            for w in layer.weights.iter().chain(&layer.bias) {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| NnError::Checkpoint("truncated".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<Mlp>, NnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut nets = Vec::new();
    for _ in 0..count {
        let activation = Activation::from_code(r.u8()?).ok_or_else(|| NnError::Checkpoint("unknown activation".into()))?;
        let n_dims = r.u32()? as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(NnError::Checkpoint(format!("implausible layer count {n_dims}")));
        }
        let dims = (0..n_dims).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let mut layers = Vec::with_capacity(n_dims - 1);
        for w in dims.windows(2) {
            let mut layer = LayerParams::zeros(w[0], w[1]);
            for x in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *x = r.f64()?;
            }
            layers.push(layer);
        }
        nets.push(Mlp::from_params(Params { layers }, activation)?);
    }
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Ok(nets)
}

pub fn write_checkpoint(path: &Path, nets: &[&Mlp]) -> Result<(), NnError> {
    fs::write(path, encode_checkpoint(nets))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<Mlp>, NnError> {
    decode_checkpoint(&fs::read(path)?)
}
