//! Binary checkpoint container for named f32 tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic           8 bytes, "VAELAB01"
//! tag_len         u32, then that many UTF-8 bytes (architecture tag)
//! tensor_count    u32
//! per tensor:     u32 name_len, name bytes, u32 rank, u32 dims[rank],
//!                 f32 data (row-major)
//! ```
//!
//! Round trips are bitwise: the f32 payload is written and read verbatim.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;
use crate::vae::{Arch, VaeModel};

const MAGIC: &[u8; 8] = b"VAELAB01";

pub fn save_params(path: &Path, tag: &str, params: &ParamSet<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_bytes(&mut w, tag.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        write_bytes(&mut w, name.as_bytes())?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<(String, ParamSet<f32>)> {
    let file = File::open(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad checkpoint magic {magic:?}",
            path.display()
        )));
    }
    let tag = read_string(&mut r, path)?;
    let count = read_u32(&mut r, path)? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = read_string(&mut r, path)?;
        let rank = read_u32(&mut r, path)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        read_exact(&mut r, &mut raw, path)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        params.add(&name, Tensor::new(shape, data)?)?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format(format!(
            "{}: trailing bytes after {count} tensors",
            path.display()
        )));
    }
    Ok((tag, params))
}

pub fn save_vae(path: &Path, model: &VaeModel) -> Result<()> {
    save_params(path, model.arch.tag(), &model.params)
}

/// Loads a VAE checkpoint, validating the tag and every tensor's name and
/// shape against the architecture it claims.
pub fn load_vae(path: &Path) -> Result<VaeModel> {
    let (tag, params) = load_params(path)?;
    let arch = Arch::from_tag(&tag)?;
    let template = VaeModel::init(arch, &mut Rng::new(0, Stream::Init, 0))?;
    if template.params.len() != params.len() {
        return Err(Error::Format(format!(
            "{}: {} tensors, {} architecture expects {}",
            path.display(),
            params.len(),
            tag,
            template.params.len()
        )));
    }
    for i in 0..params.len() {
        let (name, tensor) = (params.name(i), params.tensor(i));
        let (want_name, want) = (template.params.name(i), template.params.tensor(i));
        if name != want_name || tensor.shape() != want.shape() {
            return Err(Error::Format(format!(
                "{}: tensor {i} is {name:?} {:?}, {tag} architecture expects {want_name:?} {:?}",
                path.display(),
                tensor.shape(),
                want.shape()
            )));
        }
    }
    Ok(VaeModel { arch, params })
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("{}: truncated checkpoint", path.display())))
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, path: &Path) -> Result<String> {
    let len = read_u32(r, path)? as usize;
    if len > 4096 {
        return Err(Error::Format(format!(
            "{}: implausible string length {len}",
            path.display()
        )));
    }
    let mut bytes = vec![0u8; len];
    read_exact(r, &mut bytes, path)?;
    String::from_utf8(bytes)
        .map_err(|_| Error::Format(format!("{}: non-UTF-8 name", path.display())))
}
