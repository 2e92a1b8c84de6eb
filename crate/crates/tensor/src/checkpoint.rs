//! Parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"FANETCKP"              magic
//! u32                       format version (1)
//! u32                       manifest length in bytes
//! manifest                  UTF-8, one line per tensor: "<name>\t<dtype>\t<d0>x<d1>x...\n"
//! payload                   raw little-endian values, tensors in manifest order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{ParamStore, Result, Scalar, TensorError};

const MAGIC: &[u8; 8] = b"FANETCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

pub fn write_checkpoint<T: Scalar, W: Write>(out: &mut W, params: &ParamStore<T>) -> Result<()> {
    let mut manifest = String::new();
    for p in params.iter() {
        let dims: Vec<String> = p.tensor().shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{}\t{}\t{}\n", p.name(), T::DTYPE, dims.join("x")));
    }
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(manifest.len() as u32).to_le_bytes())?;
    out.write_all(manifest.as_bytes())?;
    let mut buf = Vec::new();
    for p in params.iter() {
        buf.clear();
        for &v in p.tensor().data().iter() {
            v.write_le(&mut buf);
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(input: &mut R) -> Result<Vec<CheckpointEntry<T>>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    input.read_exact(&mut word)?;
    let mut manifest = vec![0u8; u32::from_le_bytes(word) as usize];
    input.read_exact(&mut manifest)?;
    let manifest = String::from_utf8(manifest).map_err(|_| bad("manifest is not UTF-8"))?;

    let mut entries = Vec::new();
    for line in manifest.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, dtype, dims] = fields[..] else {
            return Err(bad(format!("malformed manifest line {line:?}")));
        };
        if dtype != T::DTYPE {
            return Err(bad(format!("`{name}` stored as {dtype}, expected {}", T::DTYPE)));
        }
        let shape = if dims.is_empty() {
            Vec::new()
        } else {
            dims.split('x')
                .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad dimension {d:?}"))))
                .collect::<Result<Vec<_>>>()?
        };
        entries.push(CheckpointEntry {
            name: name.to_string(),
            shape,
            data: Vec::new(),
        });
    }
    for e in &mut entries {
        let n: usize = e.shape.iter().product();
        let mut raw = vec![0u8; n * T::BYTES];
        input
            .read_exact(&mut raw)
            .map_err(|_| bad(format!("payload truncated in `{}`", e.name)))?;
        e.data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after payload"));
    }
    Ok(entries)
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, params: &ParamStore<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

/// Read a checkpoint file and copy its tensors into `params` by name.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>, params: &ParamStore<T>) -> Result<()> {
    let mut r = BufReader::new(File::open(path)?);
    let entries = read_checkpoint::<T, _>(&mut r)?;
    let triples: Vec<_> = entries.into_iter().map(|e| (e.name, e.shape, e.data)).collect();
    params.assign(&triples)
}
