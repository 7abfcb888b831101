//! `SPNN` model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "SPNN" | version u16 | n_arrays u32
//! per array: name_len u16 | name (utf-8) | dtype u8 | rank u8 | rank x dim u32 | payload
//! ```
//!
//! dtype 1 is row-major `f64`, dtype 2 is raw bytes. Arrays are written in
//! a fixed order: the parameter blocks, the queue capacity and the network
//! configuration as TOML text.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig, Params, BLOCK_NAMES};

pub const MAGIC: &[u8; 4] = b"SPNN";
pub const VERSION: u16 = 1;
const DTYPE_F64: u8 = 1;
const DTYPE_U8: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: ArrayData,
}

impl NamedArray {
    fn vector(name: &str, v: &[f64]) -> Self {
        NamedArray {
            name: name.into(),
            dims: vec![v.len() as u32],
            data: ArrayData::F64(v.to_vec()),
        }
    }
}

pub fn encode_arrays(arrays: &[NamedArray]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.name.len() as u16).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.push(match a.data {
            ArrayData::F64(_) => DTYPE_F64,
            ArrayData::U8(_) => DTYPE_U8,
        });
        out.push(a.dims.len() as u8);
        for d in &a.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &a.data {
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U8(v) => out.extend_from_slice(v),
        }
    }
    out
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if buf.len() - *pos < n {
        return Err(Error::parse(*pos as u64, format!("truncated {what}")));
    }
    let s = &buf[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

pub fn decode_arrays(buf: &[u8]) -> Result<Vec<NamedArray>> {
    let mut pos = 0;
    if take(buf, &mut pos, 4, "magic")? != MAGIC {
        return Err(Error::parse(0, "bad magic"));
    }
    let version = u16::from_le_bytes(take(buf, &mut pos, 2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(take(buf, &mut pos, 4, "array count")?.try_into().unwrap());
    let mut arrays = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(take(buf, &mut pos, 2, "name length")?.try_into().unwrap()) as usize;
        let at = pos as u64;
        let name = std::str::from_utf8(take(buf, &mut pos, len, "name")?)
            .map_err(|_| Error::parse(at, "name is not utf-8"))?
            .to_string();
        let dtype_at = pos as u64;
        let head = take(buf, &mut pos, 2, "dtype and rank")?;
        let (dtype, rank) = (head[0], head[1] as usize);
        let mut dims = Vec::with_capacity(rank);
        let mut n: u64 = 1;
        for _ in 0..rank {
            let d = u32::from_le_bytes(take(buf, &mut pos, 4, "dimension")?.try_into().unwrap());
            n = n.saturating_mul(d as u64);
            dims.push(d);
        }
        let data = match dtype {
            DTYPE_F64 => {
                let bytes = take(buf, &mut pos, n.saturating_mul(8).min(usize::MAX as u64) as usize, "payload")?;
                ArrayData::F64(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            DTYPE_U8 => ArrayData::U8(take(buf, &mut pos, n.min(usize::MAX as u64) as usize, "payload")?.to_vec()),
            other => return Err(Error::parse(dtype_at, format!("unknown dtype {other}"))),
        };
        arrays.push(NamedArray { name, dims, data });
    }
    if pos != buf.len() {
        return Err(Error::parse(pos as u64, "trailing bytes"));
    }
    Ok(arrays)
}

pub fn network_to_arrays(net: &Network) -> Vec<NamedArray> {
    let mut arrays: Vec<NamedArray> = BLOCK_NAMES
        .iter()
        .zip(net.params.blocks())
        .map(|(name, b)| NamedArray::vector(name, b))
        .collect();
    arrays.push(NamedArray::vector("capacity", &[net.capacity as f64]));
    let text = toml::to_string(&net.config).expect("network config serializes");
    arrays.push(NamedArray {
        name: "config".into(),
        dims: vec![text.len() as u32],
        data: ArrayData::U8(text.into_bytes()),
    });
    arrays
}

pub fn network_from_arrays(arrays: &[NamedArray]) -> Result<Network> {
    let find = |name: &str| {
        arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::InvalidInput(format!("checkpoint lacks array `{name}`")))
    };
    let f64s = |name: &str| match &find(name)?.data {
        ArrayData::F64(v) => Ok(v.clone()),
        ArrayData::U8(_) => Err(Error::InvalidInput(format!("array `{name}` is not f64"))),
    };
    let config: NetworkConfig = match &find("config")?.data {
        ArrayData::U8(b) => {
            let text = std::str::from_utf8(b).map_err(|_| Error::InvalidInput("config is not utf-8".into()))?;
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?
        }
        ArrayData::F64(_) => return Err(Error::InvalidInput("array `config` is not text".into())),
    };
    let mut params = Params::default();
    for (name, block) in BLOCK_NAMES.iter().zip(params.blocks_mut()) {
        *block = f64s(name)?;
    }
    let cap = f64s("capacity")?;
    let capacity = match cap.as_slice() {
        [c] if *c >= 2.0 && c.fract() == 0.0 => *c as usize,
        _ => return Err(Error::InvalidInput("bad capacity array".into())),
    };
    Network::from_params(config, params, Some(capacity))
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    fs::write(path, encode_arrays(&network_to_arrays(net)))?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<Network> {
    network_from_arrays(&decode_arrays(&fs::read(path)?)?)
}
