//! Named-tensor checkpoint container.
//!
//! Layout: one ASCII header line
//! `fcesr-ckpt <version> kind=<kind> catalog=<n> d=<d> rho=<rho> alpha=<alpha>\n`
//! followed by a little-endian `u32` tensor count and, per tensor,
//! `u32` name length, UTF-8 name bytes, `u32` rank, `u32` dims, and the
//! IEEE-754 `f32` payload in little-endian order. Tensors are written in
//! name order. Values are stored at 32-bit precision.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{ParamStore, Tensor};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "fcesr-ckpt";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub kind: String,
    pub catalog_size: usize,
    pub embed_dim: usize,
    pub rho: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: ParamStore,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = format!(
            "{MAGIC} {FORMAT_VERSION} kind={} catalog={} d={} rho={} alpha={}\n",
            h.kind, h.catalog_size, h.embed_dim, h.rho, h.alpha
        )
        .into_bytes();
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in self.tensors.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
            for &dim in &tensor.shape {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for &x in &tensor.data {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line"))?;
        let header_line =
            std::str::from_utf8(&bytes[..newline]).map_err(|_| bad("header is not UTF-8"))?;
        let header = parse_header(header_line)?;

        let mut reader = ByteReader {
            bytes,
            pos: newline + 1,
        };
        let count = reader.u32()? as usize;
        let mut tensors = ParamStore::new();
        for _ in 0..count {
            let name_len = reader.u32()? as usize;
            let name = std::str::from_utf8(reader.take(name_len)?)
                .map_err(|_| bad("tensor name is not UTF-8"))?
                .to_string();
            let rank = reader.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(reader.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f32::from_le_bytes(reader.array()?) as f64);
            }
            tensors.insert(name, Tensor { shape, data });
        }
        if reader.pos != bytes.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn parse_header(line: &str) -> Result<CheckpointHeader> {
    let mut fields = line.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(bad("not a checkpoint file"));
    }
    let version: u32 = fields
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing format version"))?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let mut kind = None;
    let mut catalog = None;
    let mut d = None;
    let mut rho = None;
    let mut alpha = None;
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("bad header field {field:?}")))?;
        let num_err = || bad(format!("bad value for {key}: {value:?}"));
        match key {
            "kind" => kind = Some(value.to_string()),
            "catalog" => catalog = Some(value.parse().map_err(|_| num_err())?),
            "d" => d = Some(value.parse().map_err(|_| num_err())?),
            "rho" => rho = Some(value.parse().map_err(|_| num_err())?),
            "alpha" => alpha = Some(value.parse().map_err(|_| num_err())?),
            _ => return Err(bad(format!("unknown header field {key:?}"))),
        }
    }
    Ok(CheckpointHeader {
        kind: kind.ok_or_else(|| bad("missing kind"))?,
        catalog_size: catalog.ok_or_else(|| bad("missing catalog"))?,
        embed_dim: d.ok_or_else(|| bad("missing d"))?,
        rho: rho.ok_or_else(|| bad("missing rho"))?,
        alpha: alpha.ok_or_else(|| bad("missing alpha"))?,
    })
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("truncated checkpoint"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array(&mut self) -> Result<[u8; 4]> {
        let mut a = [0u8; 4];
        a.copy_from_slice(self.take(4)?);
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}
