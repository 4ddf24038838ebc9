//! The `NPPO1` checkpoint format, shared by every network in the crate.
//!
//! Layout: the magic bytes `NPPO1\n`, one line of JSON
//! `{"names": [...], "shapes": [[...], ...], "dtype": "f64le", ...}`,
//! then the concatenated parameter data as little-endian f64 in header
//! order. Round-trips are bit-exact. An optional `meta` object carries
//! string annotations (init mode, oracle markers).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ndkit::{ParamSet, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 6] = b"NPPO1\n";
const DTYPE: &str = "f64le";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    dtype: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

/// A loaded checkpoint: tensors by name plus the header's meta map.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    /// Rebuilds a parameter set (zeroed gradients) from the stored tensors.
    pub fn into_params(self) -> Result<ParamSet> {
        let mut params = ParamSet::new();
        for (name, tensor) in self.tensors {
            params.insert(name, tensor)?;
        }
        Ok(params)
    }
}

/// Writes named tensors in sorted-name order.
pub fn save(
    path: &Path,
    entries: &[(&str, &Tensor)],
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let mut sorted: Vec<&(&str, &Tensor)> = entries.iter().collect();
    sorted.sort_by_key(|(name, _)| *name);
    let header = Header {
        names: sorted.iter().map(|(n, _)| n.to_string()).collect(),
        shapes: sorted.iter().map(|(_, t)| t.shape().to_vec()).collect(),
        dtype: DTYPE.to_string(),
        meta: meta.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (_, tensor) in sorted {
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_params(path: &Path, params: &ParamSet, meta: &BTreeMap<String, String>) -> Result<()> {
    let entries: Vec<(&str, &Tensor)> = params.iter().map(|(n, v, _)| (n, v)).collect();
    save(path, &entries, meta)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated magic", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let mut header_line = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)
            .map_err(|_| Error::Checkpoint(format!("{}: truncated header", path.display())))?;
        if byte[0] == b'\n' {
            break;
        }
        header_line.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_line)?;
    if header.dtype != DTYPE {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported dtype `{}`",
            path.display(),
            header.dtype
        )));
    }
    if header.names.len() != header.shapes.len() {
        return Err(Error::Checkpoint(format!(
            "{}: names/shapes length mismatch",
            path.display()
        )));
    }
    let mut tensors = BTreeMap::new();
    for (name, shape) in header.names.iter().zip(&header.shapes) {
        let n: usize = shape.iter().product();
        let mut data = vec![0.0f64; n];
        let mut buf = [0u8; 8];
        for d in data.iter_mut() {
            r.read_exact(&mut buf).map_err(|_| {
                Error::Checkpoint(format!("{}: truncated data for `{name}`", path.display()))
            })?;
            *d = f64::from_le_bytes(buf);
        }
        if tensors
            .insert(name.clone(), Tensor::from_vec(shape, data)?)
            .is_some()
        {
            return Err(Error::Checkpoint(format!(
                "{}: duplicate tensor `{name}`",
                path.display()
            )));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: trailing bytes after data section",
            path.display()
        )));
    }
    Ok(Checkpoint {
        tensors,
        meta: header.meta,
    })
}

/// SHA-256 of the file's bytes, hex-encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    Ok(s)
}
