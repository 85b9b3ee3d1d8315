//! Weight file format.
//!
//! Little-endian, no padding:
//!
//! ```text
//! "EDAR" | u32 version (=1) | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 ndim | u32 dims[ndim] | f32 data[prod(dims)]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::graph::LayerGraph;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EDAR";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl WeightEntry {
    /// A data-free entry used to tag a file (e.g. `network:roinet-v1`).
    pub fn tag(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            dims: vec![0],
            data: Vec::new(),
        }
    }

    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Self {
            name: name.into(),
            dims: t.dims().to_vec(),
            data: t.data().iter().map(|&v| v as f32).collect(),
        }
    }
}

pub fn write_entries(mut w: impl Write, entries: &[WeightEntry]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(entries.len()).map_err(|_| fmt_err("too many tensors"))?.to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| fmt_err("tensor name too long"))?;
        let ndim = u8::try_from(e.dims.len()).map_err(|_| fmt_err("too many dims"))?;
        if e.dims.iter().product::<usize>() != e.data.len() {
            return Err(fmt_err(&format!("entry `{}` dims do not match data", e.name)));
        }
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[ndim])?;
        for &d in &e.dims {
            let d = u32::try_from(d).map_err(|_| fmt_err("dim too large"))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn fmt_err(msg: &str) -> NnError {
    NnError::Format(msg.to_string())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => fmt_err("truncated file"),
        _ => NnError::Io(e),
    })?;
    Ok(buf)
}

pub fn read_entries(mut r: impl Read) -> Result<Vec<WeightEntry>> {
    if &read_array::<4>(&mut r)? != MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(fmt_err(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| fmt_err("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| fmt_err("name is not UTF-8"))?;
        let ndim = read_array::<1>(&mut r)?[0] as usize;
        let dims = (0..ndim)
            .map(|_| read_array::<4>(&mut r).map(|b| u32::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = (0..n)
            .map(|_| read_array::<4>(&mut r).map(f32::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        entries.push(WeightEntry { name, dims, data });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(fmt_err("trailing bytes after last tensor"));
    }
    Ok(entries)
}

/// Writes every parameter of `graph` (as 32-bit reals) followed by `extra`
/// metadata entries.
pub fn save_weights(graph: &LayerGraph, path: &Path, extra: &[WeightEntry]) -> Result<()> {
    let mut entries: Vec<WeightEntry> = extra.to_vec();
    entries.extend(
        graph
            .params()
            .iter()
            .map(|(name, t)| WeightEntry::from_tensor(name, t)),
    );
    write_entries(BufWriter::new(File::create(path)?), &entries)
}

/// Loads parameters into `graph` by name. Every parameter must be present
/// with identical dims. Entries that are not parameters are returned.
pub fn load_weights(graph: &mut LayerGraph, path: &Path) -> Result<Vec<WeightEntry>> {
    let entries = read_entries(BufReader::new(File::open(path)?))?;
    apply_entries(graph, entries)
}

pub fn apply_entries(graph: &mut LayerGraph, entries: Vec<WeightEntry>) -> Result<Vec<WeightEntry>> {
    let mut seen = vec![false; graph.params().len()];
    let mut extra = Vec::new();
    for e in entries {
        match graph.params().find(&e.name) {
            Some(id) => {
                let t = &mut graph.params_mut().tensors_mut()[id];
                if t.dims() != e.dims.as_slice() {
                    return Err(fmt_err(&format!(
                        "`{}` has dims {:?}, graph expects {:?}",
                        e.name,
                        e.dims,
                        t.dims()
                    )));
                }
                for (dst, src) in t.data_mut().iter_mut().zip(&e.data) {
                    *dst = *src as f64;
                }
                seen[id] = true;
            }
            None => extra.push(e),
        }
    }
    if let Some(id) = seen.iter().position(|s| !s) {
        return Err(fmt_err(&format!(
            "missing parameter `{}`",
            graph.params().names()[id]
        )));
    }
    Ok(extra)
}
