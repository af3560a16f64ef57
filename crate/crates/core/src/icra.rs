//! ICRA attention dumps.
//!
//! All integers are little-endian `u32`:
//!
//! | field        | size                        |
//! |--------------|-----------------------------|
//! | magic        | 4 bytes, `ICRA`             |
//! | version      | u32, `1`                    |
//! | model name   | u32 byte length + UTF-8     |
//! | layers       | u32                         |
//! | heads        | u32                         |
//! | context len  | u32                         |
//! | num rows     | u32                         |
//! | dtype        | u32, `0` = f32              |
//! | row indices  | `num_rows` × u32, ascending |
//! | body         | `layers·heads·num_rows·T` × f32 |
//!
//! The body is layer-major, then head, then row; each row is the dense
//! attention vector over all `T` positions, with zeros above the diagonal.
//! A query pass and its calibration pass are stored side by side as
//! `{query_id}.q.icra` and `{query_id}.cal.icra`.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::attention::AttentionSlice;
use crate::layout::Pass;

pub const MAGIC: &[u8; 4] = b"ICRA";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
pub const DEFAULT_ROW_SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum IcraError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("header truncated while reading {0}")]
    TruncatedHeader(&'static str),
    #[error("body truncated: expected {expected} bytes, found {found}")]
    TruncatedBody { expected: usize, found: usize },
    #[error("{0} trailing bytes after body")]
    TrailingBytes(usize),
    #[error("row indices not strictly ascending")]
    NonAscendingRows,
    #[error("row index {row} not below context length {context_len}")]
    RowOutOfRange { row: u32, context_len: u32 },
    #[error("model name is not valid UTF-8")]
    InvalidModelName,
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IcraHeader {
    pub version: u32,
    pub model_name: String,
    pub layers: u32,
    pub heads: u32,
    pub context_len: u32,
    pub row_indices: Vec<u32>,
    pub dtype: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcraDump {
    pub model_name: String,
    pub slice: AttentionSlice,
}

fn to_u32(v: usize, what: &str) -> Result<u32, IcraError> {
    u32::try_from(v).map_err(|_| IcraError::InvalidShape(format!("{what} {v} exceeds u32")))
}

/// Serialize `slice` as an ICRA v1 stream.
pub fn write_dump<W: Write>(slice: &AttentionSlice, model_name: &str, mut w: W) -> Result<(), IcraError> {
    let mut header = Vec::with_capacity(32 + model_name.len() + 4 * slice.row_indices().len());
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&to_u32(model_name.len(), "model name length")?.to_le_bytes());
    header.extend_from_slice(model_name.as_bytes());
    for (v, what) in [
        (slice.layers(), "layers"),
        (slice.heads(), "heads"),
        (slice.context_len(), "context length"),
        (slice.row_indices().len(), "row count"),
    ] {
        header.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    header.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for &r in slice.row_indices() {
        header.extend_from_slice(&to_u32(r, "row index")?.to_le_bytes());
    }
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(slice.weights().len() * 4);
    for v in slice.weights() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

pub fn dump_to_bytes(slice: &AttentionSlice, model_name: &str) -> Vec<u8> {
    let mut out = Vec::new();
    write_dump(slice, model_name, &mut out).expect("writing to a Vec cannot fail for valid slices");
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], IcraError> {
        let end = self.pos.checked_add(n).ok_or(IcraError::TruncatedHeader(what))?;
        let out = self.bytes.get(self.pos..end).ok_or(IcraError::TruncatedHeader(what))?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, IcraError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Parse and structurally validate the header.
pub fn read_header(bytes: &[u8]) -> Result<(IcraHeader, usize), IcraError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(IcraError::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(IcraError::UnsupportedVersion(version));
    }
    let name_len = c.u32("model name length")? as usize;
    let model_name = std::str::from_utf8(c.take(name_len, "model name")?)
        .map_err(|_| IcraError::InvalidModelName)?
        .to_string();
    let layers = c.u32("layers")?;
    let heads = c.u32("heads")?;
    let context_len = c.u32("context length")?;
    let num_rows = c.u32("row count")?;
    let dtype = c.u32("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(IcraError::UnsupportedDtype(dtype));
    }
    if layers == 0 || heads == 0 {
        return Err(IcraError::InvalidShape("layers and heads must be positive".into()));
    }
    // Rows are validated before allocating for them.
    let row_bytes = (num_rows as usize)
        .checked_mul(4)
        .filter(|&n| n <= c.remaining())
        .ok_or(IcraError::TruncatedHeader("row indices"))?;
    let raw = c.take(row_bytes, "row indices")?;
    let row_indices: Vec<u32> = raw
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if row_indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(IcraError::NonAscendingRows);
    }
    if let Some(&row) = row_indices.iter().find(|&&r| r >= context_len) {
        return Err(IcraError::RowOutOfRange { row, context_len });
    }
    let header = IcraHeader {
        version,
        model_name,
        layers,
        heads,
        context_len,
        row_indices,
        dtype,
    };
    Ok((header, c.pos))
}

/// Parse an ICRA v1 byte stream.
pub fn read_dump(bytes: &[u8]) -> Result<IcraDump, IcraError> {
    let (header, body_start) = read_header(bytes)?;
    let found = bytes.len() - body_start;
    let expected = [
        header.heads as usize,
        header.row_indices.len(),
        header.context_len as usize,
        4,
    ]
    .iter()
    .try_fold(header.layers as usize, |acc, &n| acc.checked_mul(n));
    let expected = match expected {
        Some(e) => e,
        None => {
            return Err(IcraError::TruncatedBody {
                expected: usize::MAX,
                found,
            })
        }
    };
    if found < expected {
        return Err(IcraError::TruncatedBody { expected, found });
    }
    if found > expected {
        return Err(IcraError::TrailingBytes(found - expected));
    }
    let weights: Vec<f32> = bytes[body_start..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let slice = AttentionSlice::new(
        header.layers as usize,
        header.heads as usize,
        header.context_len as usize,
        header.row_indices.iter().map(|&r| r as usize).collect(),
        weights,
    )
    .map_err(|e| IcraError::InvalidShape(e.to_string()))?;
    Ok(IcraDump {
        model_name: header.model_name,
        slice,
    })
}

pub fn write_dump_file(path: &Path, slice: &AttentionSlice, model_name: &str) -> Result<(), IcraError> {
    let file = std::fs::File::create(path)?;
    write_dump(slice, model_name, io::BufWriter::new(file))
}

pub fn read_dump_file(path: &Path) -> Result<IcraDump, IcraError> {
    read_dump(&std::fs::read(path)?)
}

/// `{dir}/{query_id}.q.icra` or `{dir}/{query_id}.cal.icra`.
pub fn dump_path(dir: &Path, query_id: &str, pass: Pass) -> PathBuf {
    dir.join(format!("{query_id}.{}.icra", pass.tag()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    RowSum { sum: f64 },
    Causality { position: usize, value: f32 },
    NonFinite { position: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub layer: usize,
    pub head: usize,
    pub row: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub rows_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check finiteness, causality zeros and row sums (within `tolerance`).
pub fn validate_dump(slice: &AttentionSlice, tolerance: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    for l in 0..slice.layers() {
        for h in 0..slice.heads() {
            for (r, &k) in slice.row_indices().iter().enumerate() {
                report.rows_checked += 1;
                let row = slice.row(l, h, r);
                let mut push = |kind| {
                    report.violations.push(Violation {
                        layer: l,
                        head: h,
                        row: k,
                        kind,
                    })
                };
                if let Some(position) = row.iter().position(|v| !v.is_finite()) {
                    push(ViolationKind::NonFinite { position });
                    continue;
                }
                if let Some(position) = row[k + 1..].iter().position(|&v| v != 0.0) {
                    let position = k + 1 + position;
                    push(ViolationKind::Causality {
                        position,
                        value: row[position],
                    });
                }
                let sum: f64 = row[..=k].iter().map(|&v| f64::from(v)).sum();
                if (sum - 1.0).abs() > tolerance {
                    push(ViolationKind::RowSum { sum });
                }
            }
        }
    }
    report
}

/// One file's outcome from [`validate_dir`].
pub type DumpCheck = (PathBuf, Result<ValidationReport, IcraError>);

/// Validate every `*.icra` file in `dir`, sorted by file name.
pub fn validate_dir(dir: &Path, tolerance: f64) -> Result<Vec<DumpCheck>, IcraError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "icra"))
        .collect();
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| {
            let r = read_dump_file(&p).map(|d| validate_dump(&d.slice, tolerance));
            (p, r)
        })
        .collect())
}
