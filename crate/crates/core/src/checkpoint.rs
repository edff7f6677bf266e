//! TCN1 checkpoint format.
//!
//! Layout (all integers little-endian):
//!   magic "TCN1"
//!   u32 count of parameterized layers
//!   per layer: u32 name length, utf-8 name,
//!              weight tensor (u32 rank, u32 extents..., f32 data),
//!              bias tensor (same encoding)
//!   u32 crc32 (IEEE) of every preceding byte

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TCN1";

const fn build_crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = build_crc_table();

/// CRC-32 (IEEE 802.3) over a byte slice.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = CRC_TABLE[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

fn push_tensor(buf: &mut Vec<u8>, tensor: &Tensor) {
    buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &e in tensor.shape() {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the parameters of every conv/dense layer.
pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let param_layers: Vec<_> = model.layers().iter().filter(|l| l.spec.has_params()).collect();
    buf.extend_from_slice(&(param_layers.len() as u32).to_le_bytes());
    for layer in param_layers {
        let name = layer.spec.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        push_tensor(&mut buf, layer.weight.as_ref().expect("param layer has weight"));
        push_tensor(&mut buf, layer.bias.as_ref().expect("param layer has bias"));
    }
    let crc = crc32(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CheckpointFormat(format!(
                "truncated: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::CheckpointFormat(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = self.take(len * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(shape, data)
    }
}

/// Loads parameters saved by `save` into a clone of `arch`. The architecture
/// must match: same parameterized layer names in the same order with the
/// same shapes. The CRC is verified before anything is parsed.
pub fn load(path: &Path, arch: &Model) -> Result<Model> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::CheckpointFormat("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32(body);
    if stored != computed {
        return Err(Error::CheckpointCrc { stored, computed });
    }
    if &body[..4] != MAGIC {
        return Err(Error::CheckpointBadMagic);
    }

    let mut r = Reader { bytes: body, pos: 4 };
    let count = r.u32()? as usize;
    let expected: Vec<String> = arch
        .layers()
        .iter()
        .filter(|l| l.spec.has_params())
        .map(|l| l.spec.name.clone())
        .collect();
    if count != expected.len() {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint has {count} parameterized layers, architecture has {}",
            expected.len()
        )));
    }

    let mut out = arch.clone();
    for want_name in expected {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::CheckpointFormat("layer name is not utf-8".into()))?;
        if name != want_name {
            return Err(Error::ArchitectureMismatch(format!(
                "checkpoint layer '{name}' does not match architecture layer '{want_name}'"
            )));
        }
        let weight = r.tensor()?;
        let bias = r.tensor()?;
        let layer = out.layer_mut(&name).expect("names validated above");
        let want_w = layer.weight.as_ref().expect("param layer has weight").shape().to_vec();
        if weight.shape() != want_w.as_slice() {
            return Err(Error::CheckpointLayerShape {
                layer: name,
                expected: format!("{want_w:?}"),
                actual: format!("{:?}", weight.shape()),
            });
        }
        let want_b = layer.bias.as_ref().expect("param layer has bias").shape().to_vec();
        if bias.shape() != want_b.as_slice() {
            return Err(Error::CheckpointLayerShape {
                layer: name,
                expected: format!("{want_b:?}"),
                actual: format!("{:?}", bias.shape()),
            });
        }
        layer.weight = Some(weight);
        layer.bias = Some(bias);
    }
    if r.pos != body.len() {
        return Err(Error::CheckpointFormat(format!(
            "{} trailing bytes after the last tensor",
            body.len() - r.pos
        )));
    }
    Ok(out)
}
