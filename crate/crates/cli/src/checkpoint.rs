//! Binary checkpoints: `"TGAN"`, format version (u32 LE), record count
//! (u32 LE), then per record the name length (u32 LE), UTF-8 name, element
//! count (u64 LE) and that many f64 LE values.

use tgan_core::gan::GanModel;
use tgan_core::Tensor;

pub const MAGIC: &[u8; 4] = b"TGAN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic {0:02x?}")]
    Magic([u8; 4]),
    #[error("unsupported format version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("truncated at byte {at}")]
    Truncated { at: usize },
    #[error("record name is not UTF-8")]
    Name,
    #[error("{extra} trailing bytes")]
    Trailing { extra: usize },
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub data: Vec<f64>,
}

pub fn encode(records: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated { at: self.at })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>, CheckpointError> {
    let mut c = Cursor { bytes, at: 0 };
    let magic = c.take(4)?;
    if magic != MAGIC {
        return Err(CheckpointError::Magic(magic.try_into().expect("4 bytes")));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let count = c.u32()?;
    let mut records = Vec::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| CheckpointError::Name)?
            .to_string();
        let n = c.u64()?;
        let bytes_needed = usize::try_from(n)
            .ok()
            .and_then(|n| n.checked_mul(8))
            .ok_or(CheckpointError::Truncated { at: c.at })?;
        let raw = c.take(bytes_needed)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        records.push(Record { name, data });
    }
    if c.at != bytes.len() {
        return Err(CheckpointError::Trailing {
            extra: bytes.len() - c.at,
        });
    }
    Ok(records)
}

pub fn save_model(model: &GanModel) -> Vec<u8> {
    encode(&model.named_params())
}

/// Overwrites every parameter of `model` from `bytes`. Names, order and
/// element counts must match exactly.
pub fn load_into(model: &mut GanModel, bytes: &[u8]) -> Result<(), CheckpointError> {
    let records = decode(bytes)?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if names.len() != records.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{} records for {} parameters",
            records.len(),
            names.len()
        )));
    }
    for ((name, param), rec) in names.iter().zip(model.params_mut()).zip(records) {
        if *name != rec.name || param.len() != rec.data.len() {
            return Err(CheckpointError::Mismatch(format!(
                "expected `{name}` with {} values, found `{}` with {}",
                param.len(),
                rec.name,
                rec.data.len()
            )));
        }
        param.data_mut().copy_from_slice(&rec.data);
    }
    Ok(())
}
