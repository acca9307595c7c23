//! Named-tensor checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DSMS" | version: u32 | header_len: u32 | header (UTF-8, header_len bytes) | payload
//! ```
//!
//! Header lines are tab separated:
//!
//! ```text
//! meta    <key>   <value>
//! tensor  <name>  f32  <d0>x<d1>x...  <byte offset into payload>
//! ```
//!
//! The payload is the concatenation of every tensor as little-endian `f32`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::Real;

use super::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"DSMS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn check_field(s: &str) -> Result<()> {
    if s.is_empty() || s.contains(['\t', '\n', '\r']) {
        return Err(bad(format!("invalid header field {s:?}")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn from_params<T: Real>(params: &ParamStore<T>) -> Self {
        Self {
            meta: BTreeMap::new(),
            tensors: params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| v.f64() as f32).collect(),
                })
                .collect(),
        }
    }

    /// Copies tensor values into `params`, matching by name and shape.
    pub fn restore_into<T: Real>(&self, params: &mut ParamStore<T>) -> Result<()> {
        if self.tensors.len() != params.len() {
            return Err(bad(format!(
                "{} tensors in file, model has {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for t in &self.tensors {
            let id = params
                .find(&t.name)
                .ok_or_else(|| bad(format!("unknown tensor {}", t.name)))?;
            let p = params.get_mut(id);
            if p.shape != t.shape {
                return Err(bad(format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    t.name, t.shape, p.shape
                )));
            }
            p.data = t.data.iter().map(|&v| T::of(v as f64)).collect();
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut header = String::new();
        for (k, v) in &self.meta {
            check_field(k)?;
            if v.contains(['\t', '\n', '\r']) {
                return Err(bad(format!("invalid meta value for {k}")));
            }
            header.push_str(&format!("meta\t{k}\t{v}\n"));
        }
        let mut offset = 0usize;
        for t in &self.tensors {
            check_field(&t.name)?;
            if t.data.len() != t.shape.iter().product::<usize>() {
                return Err(bad(format!("tensor {} does not match its shape", t.name)));
            }
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            header.push_str(&format!(
                "tensor\t{}\tf32\t{}\t{}\n",
                t.name,
                dims.join("x"),
                offset
            ));
            offset += t.data.len() * 4;
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        for t in &self.tensors {
            let mut buf = Vec::with_capacity(t.data.len() * 4);
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        r.read_exact(&mut word)?;
        let header_len = u32::from_le_bytes(word) as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header = String::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;

        let mut ckpt = Checkpoint::default();
        for line in header.lines() {
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["meta", k, v] => {
                    ckpt.meta.insert(k.to_string(), v.to_string());
                }
                ["tensor", name, dtype, dims, offset] => {
                    if *dtype != "f32" {
                        return Err(bad(format!("unsupported dtype {dtype}")));
                    }
                    let shape = if dims.is_empty() {
                        Vec::new()
                    } else {
                        dims.split('x')
                            .map(|d| d.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| bad(format!("bad shape {dims}")))?
                    };
                    let offset: usize = offset
                        .parse()
                        .map_err(|_| bad(format!("bad offset {offset}")))?;
                    let n: usize = shape.iter().product();
                    let bytes = payload
                        .get(offset..offset + n * 4)
                        .ok_or_else(|| bad(format!("tensor {name} runs past the payload")))?;
                    let data = bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect();
                    ckpt.tensors.push(NamedTensor {
                        name: name.to_string(),
                        shape,
                        data,
                    });
                }
                _ => return Err(bad(format!("malformed header line {line:?}"))),
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
