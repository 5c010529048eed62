//! Binary tensor files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      4 bytes  "ETDT" (cube) | "ETMP" (map)
//! version    u16      1
//! scaling    u8       0 raw, 1 unit_sum, 2 log1p
//! dims       u32 x 3 (cube) | u32 x 2 (map)
//! flags      u32      bit 0: global modality bounds, bit 1: identity transform
//! payload    f32 x prod(dims), row-major, time axis slowest
//! id_len     u16
//! series_id  id_len bytes of UTF-8
//! ```

use std::fs;
use std::path::Path;

use super::{CountScaling, EventTensor, ModalityTransform, TensorError, TensorKind};

pub const TENSOR_VERSION: u16 = 1;
const CUBE_MAGIC: [u8; 4] = *b"ETDT";
const MAP_MAGIC: [u8; 4] = *b"ETMP";
const FLAG_GLOBAL_BOUNDS: u32 = 1;
const FLAG_IDENTITY: u32 = 1 << 1;

pub fn tensor_bytes(t: &EventTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * t.values.len() + t.series_id.len());
    out.extend_from_slice(match t.kind {
        TensorKind::Cube => &CUBE_MAGIC,
        TensorKind::Map => &MAP_MAGIC,
    });
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(t.scaling.code());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let mut flags = 0u32;
    if t.global_bounds {
        flags |= FLAG_GLOBAL_BOUNDS;
    }
    if t.transform == ModalityTransform::Identity {
        flags |= FLAG_IDENTITY;
    }
    out.extend_from_slice(&flags.to_le_bytes());
    for &v in &t.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let id = t.series_id.as_bytes();
    let id_len = id.len().min(u16::MAX as usize);
    out.extend_from_slice(&(id_len as u16).to_le_bytes());
    out.extend_from_slice(&id[..id_len]);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        let end = self.pos.checked_add(n).ok_or(TensorError::TruncatedFile {
            needed: usize::MAX,
            found: self.buf.len(),
        })?;
        if end > self.buf.len() {
            return Err(TensorError::TruncatedFile {
                needed: end,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, TensorError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_tensor_bytes(buf: &[u8]) -> Result<EventTensor, TensorError> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    let (kind, rank) = match magic {
        CUBE_MAGIC => (TensorKind::Cube, 3),
        MAP_MAGIC => (TensorKind::Map, 2),
        other => return Err(TensorError::BadMagic(other)),
    };
    let version = r.u16()?;
    if version != TENSOR_VERSION {
        return Err(TensorError::VersionMismatch(version));
    }
    let code = r.take(1)?[0];
    let scaling = CountScaling::from_code(code)
        .ok_or_else(|| TensorError::DimMismatch(format!("unknown count scaling code {code}")))?;
    let dims = (0..rank)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    if dims.iter().any(|&d| d == 0) {
        return Err(TensorError::DimMismatch(format!("zero-length axis in {dims:?}")));
    }
    let cells = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::DimMismatch(format!("{dims:?} overflows")))?;
    let flags = r.u32()?;
    let payload_len = cells
        .checked_mul(4)
        .ok_or_else(|| TensorError::DimMismatch(format!("{dims:?} overflows")))?;
    let payload = r.take(payload_len)?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let id_len = r.u16()? as usize;
    let id = r.take(id_len)?;
    let series_id = String::from_utf8(id.to_vec())
        .map_err(|_| TensorError::DimMismatch("series id is not UTF-8".into()))?;
    if r.pos != buf.len() {
        return Err(TensorError::DimMismatch(format!(
            "{} trailing bytes after series id",
            buf.len() - r.pos
        )));
    }
    Ok(EventTensor {
        kind,
        dims,
        values,
        series_id,
        scaling,
        global_bounds: flags & FLAG_GLOBAL_BOUNDS != 0,
        transform: if flags & FLAG_IDENTITY != 0 {
            ModalityTransform::Identity
        } else {
            ModalityTransform::Log10
        },
    })
}

pub fn write_tensor(t: &EventTensor, path: &Path) -> Result<(), TensorError> {
    fs::write(path, tensor_bytes(t)).map_err(|source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_tensor(path: &Path) -> Result<EventTensor, TensorError> {
    let buf = fs::read(path).map_err(|source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_tensor_bytes(&buf)
}
