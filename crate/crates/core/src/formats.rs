//! Bit-exact binary persistence for datasets and network weights.
//!
//! Both formats are little-endian regardless of host, store tensors as
//! 32-bit floats (compute stays 64-bit), and carry CRC-32 checksums so
//! corruption is detected before any value is used.
//!
//! # Dataset format, magic `RINGDS01`
//!
//! ```text
//! [u8; 8]  magic "RINGDS01"
//! u32      format version (1)
//! u32      sequence count
//! per sequence (one checksummed chunk):
//!   u32        N (bodies)
//!   u32        T (timesteps)
//!   f64        sampling rate (Hz)
//!   N x u32    parent array (body numbers, 0 = earth)
//!   T*N*10 x f32  X, row-major (t, node, channel)
//!   T*N*4  x f32  Y, row-major (t, node), quaternions scalar-first
//!   u32        CRC-32 of the chunk bytes above (from N through Y)
//! ```
//!
//! # Weights format, magic `RINGWT01`
//!
//! ```text
//! [u8; 8]  magic "RINGWT01"
//! u32      format version (1)
//! u32      H (GRU state width)
//! u32      M (message width)
//! u32      tensor count
//! per tensor:
//!   u16        name length, then that many UTF-8 bytes
//!   u32        rank, then rank x u32 dimensions
//!   prod(dims) x f32  values, row-major
//! u32      CRC-32 over every byte after the magic
//! ```
//!
//! Readers never trust a length field without checking it against the bytes
//! actually present. Version bumps are append-only: a reader rejects
//! versions it does not know.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use thiserror::Error;

use crate::kinematics::{ChainError, ParentArray};
use crate::math::Quat;
use crate::net::RingParams;
use crate::rcmg::{InputSeries, PairInvariantError, QuatSeries, TrainingPair, INPUT_CHANNELS};

const DATASET_MAGIC: &[u8; 8] = b"RINGDS01";
const WEIGHTS_MAGIC: &[u8; 8] = b"RINGWT01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (reader knows {known})")]
    BadVersion { found: u32, known: u32 },
    #[error("file truncated while reading {what}: need {need} bytes, {have} left")]
    Truncated { what: &'static str, need: usize, have: usize },
    #[error("checksum mismatch in {what} {index}")]
    ChecksumMismatch { what: &'static str, index: usize },
    #[error("sequence {sequence}: {source}")]
    InvariantViolation {
        sequence: usize,
        #[source]
        source: PairInvariantError,
    },
    #[error("sequence {sequence} carries an invalid parent array: {source}")]
    InvalidParents {
        sequence: usize,
        #[source]
        source: ChainError,
    },
    #[error("tensor {index}: expected '{expected}' of shape {expected_shape:?}, found '{got}' of shape {got_shape:?}")]
    TensorMismatch {
        index: usize,
        expected: String,
        expected_shape: Vec<usize>,
        got: String,
        got_shape: Vec<usize>,
    },
    #[error("weights are H={stored_h}, M={stored_m} but H={requested_h}, M={requested_m} was requested")]
    WidthMismatch { requested_h: usize, requested_m: usize, stored_h: usize, stored_m: usize },
    #[error("refusing to write non-finite values ({what})")]
    NonFinite { what: &'static str },
}

// ─── CRC-32 (IEEE, reflected) ────────────────────────────────────────────────

fn crc_table() -> &'static [u32; 256] {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *slot = c;
        }
        table
    })
}

pub(crate) fn crc32(data: &[u8]) -> u32 {
    let table = crc_table();
    let mut c = 0xFFFF_FFFFu32;
    for &b in data {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

// ─── Little-endian helpers ───────────────────────────────────────────────────

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut Vec<u8>, v: f32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Bounds-checked little-endian reader over an in-memory file image.
struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated { what, need: n, have: self.remaining() });
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Read `count` f32 values as f64, checking the byte budget before
    /// allocating.
    fn f32_vec(&mut self, count: usize, what: &'static str) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(count.saturating_mul(4), what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

// ─── Dataset ─────────────────────────────────────────────────────────────────

fn encode_pair(pair: &TrainingPair) -> Vec<u8> {
    let (t, n) = (pair.timesteps(), pair.nodes());
    let mut chunk = Vec::with_capacity(16 + n * 4 + t * n * (INPUT_CHANNELS + 4) * 4);
    put_u32(&mut chunk, n as u32);
    put_u32(&mut chunk, t as u32);
    put_f64(&mut chunk, pair.rate_hz);
    for &p in pair.parents.as_slice() {
        put_u32(&mut chunk, p as u32);
    }
    for &v in pair.x.as_flat() {
        put_f32(&mut chunk, v as f32);
    }
    for q in pair.y.as_flat() {
        put_f32(&mut chunk, q.w as f32);
        put_f32(&mut chunk, q.x as f32);
        put_f32(&mut chunk, q.y as f32);
        put_f32(&mut chunk, q.z as f32);
    }
    chunk
}

/// Write a dataset. Pairs are validated first; the file is not created if
/// any pair violates its invariants.
pub fn write_dataset(path: &Path, pairs: &[TrainingPair]) -> Result<(), FormatError> {
    for (i, pair) in pairs.iter().enumerate() {
        pair.validate()
            .map_err(|source| FormatError::InvariantViolation { sequence: i, source })?;
    }
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, pairs.len() as u32);
    for pair in pairs {
        let chunk = encode_pair(pair);
        let crc = crc32(&chunk);
        out.extend_from_slice(&chunk);
        put_u32(&mut out, crc);
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Read a dataset, validating magic, version, per-chunk checksums, and every
/// pair's structural invariants. No partial pair is ever returned.
pub fn read_dataset(path: &Path) -> Result<Vec<TrainingPair>, FormatError> {
    let data = std::fs::read(path)?;
    let mut cur = Cursor::new(&data);
    if cur.take(8, "magic")? != DATASET_MAGIC {
        return Err(FormatError::BadMagic { expected: "RINGDS01" });
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::BadVersion { found: version, known: FORMAT_VERSION });
    }
    let count = cur.u32("sequence count")? as usize;
    let mut pairs = Vec::with_capacity(count.min(1 << 20));
    for index in 0..count {
        let chunk_start = cur.pos;
        let n = cur.u32("body count")? as usize;
        let t = cur.u32("timestep count")? as usize;
        let rate_hz = cur.f64("sampling rate")?;
        let mut parents = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            parents.push(cur.u32("parent array")? as usize);
        }
        let x_flat = cur.f32_vec(t * n * INPUT_CHANNELS, "X tensor")?;
        let y_flat = cur.f32_vec(t * n * 4, "Y tensor")?;
        let chunk_end = cur.pos;
        let stored_crc = cur.u32("chunk checksum")?;
        if crc32(&data[chunk_start..chunk_end]) != stored_crc {
            return Err(FormatError::ChecksumMismatch { what: "sequence chunk", index });
        }
        let parents = ParentArray::new(parents)
            .map_err(|source| FormatError::InvalidParents { sequence: index, source })?;
        let x = InputSeries::from_flat(x_flat, t, n);
        let y = QuatSeries::from_flat(
            y_flat.chunks_exact(4).map(|q| Quat::new(q[0], q[1], q[2], q[3])).collect(),
            t,
            n,
        );
        let pair = TrainingPair { x, y, rate_hz, parents };
        pair.validate()
            .map_err(|source| FormatError::InvariantViolation { sequence: index, source })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

// ─── Weights ─────────────────────────────────────────────────────────────────

/// Write network weights as a named-tensor container.
pub fn write_weights(path: &Path, params: &RingParams) -> Result<(), FormatError> {
    if !params.is_finite() {
        return Err(FormatError::NonFinite { what: "network weights" });
    }
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, params.hidden as u32);
    put_u32(&mut out, params.message as u32);
    let tensors = params.tensors();
    put_u32(&mut out, tensors.len() as u32);
    for (name, values, shape) in tensors {
        put_u16(&mut out, name.len() as u16);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, shape.len() as u32);
        for dim in &shape {
            put_u32(&mut out, *dim as u32);
        }
        for &v in values {
            put_f32(&mut out, v as f32);
        }
    }
    let crc = crc32(&out[8..]);
    put_u32(&mut out, crc);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Read network weights. With `expected = Some((h, m))` the stored widths
/// must match exactly. Tensor names and shapes are checked one by one
/// against the layout for the stored widths.
pub fn read_weights(
    path: &Path,
    expected: Option<(usize, usize)>,
) -> Result<RingParams, FormatError> {
    let data = std::fs::read(path)?;
    if data.len() < 12 {
        return Err(FormatError::Truncated { what: "weights file", need: 12, have: data.len() });
    }
    let body = &data[..data.len() - 4];
    let stored_crc =
        u32::from_le_bytes(data[data.len() - 4..].try_into().expect("4 trailing bytes"));
    if crc32(&body[8..]) != stored_crc {
        return Err(FormatError::ChecksumMismatch { what: "weights file", index: 0 });
    }

    let mut cur = Cursor::new(body);
    if cur.take(8, "magic")? != WEIGHTS_MAGIC {
        return Err(FormatError::BadMagic { expected: "RINGWT01" });
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::BadVersion { found: version, known: FORMAT_VERSION });
    }
    let h = cur.u32("hidden width")? as usize;
    let m = cur.u32("message width")? as usize;
    if let Some((eh, em)) = expected {
        if (eh, em) != (h, m) {
            return Err(FormatError::WidthMismatch {
                requested_h: eh,
                requested_m: em,
                stored_h: h,
                stored_m: m,
            });
        }
    }
    let tensor_count = cur.u32("tensor count")? as usize;

    let mut params = RingParams::zeros_like(h, m);
    let layout: Vec<(String, Vec<usize>)> = params
        .tensors()
        .iter()
        .map(|(name, _, shape)| (name.to_string(), shape.clone()))
        .collect();
    if tensor_count != layout.len() {
        return Err(FormatError::TensorMismatch {
            index: 0,
            expected: format!("{} tensors", layout.len()),
            expected_shape: vec![],
            got: format!("{tensor_count} tensors"),
            got_shape: vec![],
        });
    }
    let mut values = Vec::with_capacity(layout.len());
    for (index, (expected_name, expected_shape)) in layout.iter().enumerate() {
        let name_len = cur.u16("tensor name length")? as usize;
        let name_bytes = cur.take(name_len, "tensor name")?;
        let name = String::from_utf8_lossy(name_bytes).into_owned();
        let rank = cur.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(cur.u32("tensor dimension")? as usize);
        }
        if name != *expected_name || shape != *expected_shape {
            return Err(FormatError::TensorMismatch {
                index,
                expected: expected_name.clone(),
                expected_shape: expected_shape.clone(),
                got: name,
                got_shape: shape,
            });
        }
        let len: usize = shape.iter().product();
        values.push(cur.f32_vec(len, "tensor values")?);
    }
    for (dst, src) in params.tensors_mut().into_iter().zip(values) {
        dst.copy_from_slice(&src);
    }
    Ok(params)
}
