//! Binary tensor checkpoints.
//!
//! Layout: the 8 magic bytes `GOPLAN01`, then for every tensor in order
//!
//! ```text
//! u32 name_len | name (utf-8) | u32 rank | u32 dim × rank | f32 × Π dims
//! ```
//!
//! All integers and floats are little-endian. The loader requires the byte
//! stream to end exactly after the last tensor.

use std::path::Path;

use super::mlp::{Mlp, ParamTensor};
use super::NumericsError;

pub const MAGIC: &[u8; 8] = b"GOPLAN01";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], values: &[f32]) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: shape.to_vec(),
            values: values.to_vec(),
        });
    }

    pub fn push_vector(&mut self, name: impl Into<String>, values: &[f32]) {
        self.push(name, &[values.len()], values);
    }

    pub fn push_mlp(&mut self, prefix: &str, net: &Mlp) {
        for (name, p) in net.named_params(prefix) {
            self.push(name, p.shape(), &p.values);
        }
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor, NumericsError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| NumericsError::Checkpoint(format!("missing tensor {name:?}")))
    }

    pub fn vector(&self, name: &str, len: usize) -> Result<Vec<f32>, NumericsError> {
        let t = self.get(name)?;
        if t.values.len() != len {
            return Err(NumericsError::Checkpoint(format!(
                "tensor {name:?} has {} values, expected {len}",
                t.values.len()
            )));
        }
        Ok(t.values.clone())
    }

    pub fn scalar(&self, name: &str) -> Result<f32, NumericsError> {
        Ok(self.vector(name, 1)?[0])
    }

    /// Copies tensors named `{prefix}.*` into an already-constructed network
    /// of the same architecture.
    pub fn load_mlp(&self, prefix: &str, net: &mut Mlp) -> Result<(), NumericsError> {
        let names: Vec<String> = net.named_params(prefix).into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(net.params_mut()) {
            assign(self.get(name)?, p)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NumericsError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(NumericsError::Checkpoint("bad magic bytes".into()));
        }
        let mut reader = Reader {
            bytes,
            pos: MAGIC.len(),
        };
        let mut tensors = Vec::new();
        while reader.pos < bytes.len() {
            let name_len = reader.u32()? as usize;
            let name = String::from_utf8(reader.take(name_len)?.to_vec())
                .map_err(|_| NumericsError::Checkpoint("tensor name is not utf-8".into()))?;
            let rank = reader.u32()? as usize;
            let shape = (0..rank)
                .map(|_| reader.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| NumericsError::Checkpoint("tensor size overflows".into()))?;
            let raw = reader.take(count.checked_mul(4).ok_or_else(|| {
                NumericsError::Checkpoint("tensor size overflows".into())
            })?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor {
                name,
                shape,
                values,
            });
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let bytes = std::fs::read(path)
            .map_err(|e| NumericsError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn assign(src: &NamedTensor, dst: &mut ParamTensor) -> Result<(), NumericsError> {
    if src.shape != dst.shape() {
        return Err(NumericsError::Checkpoint(format!(
            "tensor {:?} has shape {:?}, network expects {:?}",
            src.name,
            src.shape,
            dst.shape()
        )));
    }
    dst.values.copy_from_slice(&src.values);
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumericsError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NumericsError::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, NumericsError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
