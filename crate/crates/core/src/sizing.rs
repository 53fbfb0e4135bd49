//! The `MCMP` container and gzip size measurement.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MCMP" | version u32 | tensor count u32
//! per tensor:
//!   name len u16 | name utf-8 | dtype u8 (0=f32, 1=f16, 2=i8)
//!   quant flag u8 (1 => scale f32, zero_point i32) | ndim u8 | dims u32...
//!   payload
//! ```
//!
//! Asymmetric 8-bit codes `q ∈ [0, 255]` are stored as `q - 128` with a zero
//! point of `zp - 128`, which leaves `scale * (q - zp)` unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::{Compression, GzBuilder};
use half::f16;

use crate::error::{Error, Result};
use crate::nn::{Model, ParamId};
use crate::quantization::{QuantMode, QuantParams, QuantPayload, QuantizedTensor, StoredParam};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MCMP";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;
pub const GZIP_LEVEL: u32 = 9;
/// RFC 1952 "unknown" operating system.
const GZIP_OS: u8 = 255;

const DTYPE_F32: u8 = 0;
const DTYPE_F16: u8 = 1;
const DTYPE_I8: u8 = 2;
const CHUNK: usize = 1 << 14;

/// Borrowed view of a parameter for serialization.
#[derive(Debug, Clone, Copy)]
pub enum ParamView<'a> {
    Full(&'a Tensor),
    Quantized(&'a QuantizedTensor),
}

impl<'a> From<&'a StoredParam> for ParamView<'a> {
    fn from(p: &'a StoredParam) -> Self {
        match p {
            StoredParam::Full(t) => ParamView::Full(t),
            StoredParam::Quantized(q) => ParamView::Quantized(q),
        }
    }
}

impl ParamView<'_> {
    fn shape(&self) -> &[usize] {
        match self {
            ParamView::Full(t) => t.shape(),
            ParamView::Quantized(q) => &q.shape,
        }
    }
}

pub fn model_entries(model: &Model) -> Vec<(String, ParamView<'_>)> {
    model
        .params
        .iter()
        .map(|(id, t)| (id.to_string(), ParamView::Full(t)))
        .collect()
}

pub fn stored_entries(params: &BTreeMap<ParamId, StoredParam>) -> Vec<(String, ParamView<'_>)> {
    params
        .iter()
        .map(|(id, p)| (id.to_string(), ParamView::from(p)))
        .collect()
}

/// Streams the container to `w`.
pub fn write_archive<W: Write>(w: &mut W, entries: &[(String, ParamView<'_>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&u32_len(entries.len(), "tensor count")?.to_le_bytes())?;
    for (name, param) in entries {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Archive(format!("name `{name}` too long")))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        match param {
            ParamView::Full(_) => w.write_all(&[DTYPE_F32, 0])?,
            ParamView::Quantized(q) => match q.params.mode {
                QuantMode::Float16 => w.write_all(&[DTYPE_F16, 0])?,
                QuantMode::Symmetric | QuantMode::Asymmetric => {
                    let zp = match q.params.mode {
                        QuantMode::Asymmetric => q.params.zero_point - 128,
                        _ => q.params.zero_point,
                    };
                    w.write_all(&[DTYPE_I8, 1])?;
                    w.write_all(&q.params.scale.to_le_bytes())?;
                    w.write_all(&zp.to_le_bytes())?;
                }
            },
        }
        let shape = param.shape();
        let ndim = u8::try_from(shape.len())
            .map_err(|_| Error::Archive(format!("`{name}` has too many dimensions")))?;
        w.write_all(&[ndim])?;
        for &d in shape {
            w.write_all(&u32_len(d, "dimension")?.to_le_bytes())?;
        }
        write_payload(w, param)?;
    }
    Ok(())
}

fn u32_len(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Archive(format!("{what} {v} exceeds u32")))
}

fn write_payload<W: Write>(w: &mut W, param: &ParamView<'_>) -> Result<()> {
    let mut buf = Vec::with_capacity(CHUNK * 4);
    match param {
        ParamView::Full(t) => {
            for chunk in t.data().chunks(CHUNK) {
                buf.clear();
                chunk
                    .iter()
                    .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
                w.write_all(&buf)?;
            }
        }
        ParamView::Quantized(q) => match &q.payload {
            QuantPayload::Half(h) => {
                for chunk in h.chunks(CHUNK) {
                    buf.clear();
                    chunk
                        .iter()
                        .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
                    w.write_all(&buf)?;
                }
            }
            QuantPayload::Signed(v) => {
                buf.extend(v.iter().map(|&c| c as u8));
                w.write_all(&buf)?;
            }
            QuantPayload::Unsigned(v) => {
                buf.extend(v.iter().map(|&c| c.wrapping_sub(128)));
                w.write_all(&buf)?;
            }
        },
    }
    Ok(())
}

pub fn serialize_entries(entries: &[(String, ParamView<'_>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_archive(&mut out, entries)?;
    Ok(out)
}

pub fn serialize_model(model: &Model) -> Result<Vec<u8>> {
    serialize_entries(&model_entries(model))
}

pub fn serialize_params(params: &BTreeMap<ParamId, StoredParam>) -> Result<Vec<u8>> {
    serialize_entries(&stored_entries(params))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Archive(format!(
                "truncated reading {what} at offset {}",
                self.pos
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

/// Parses a container into `(name, parameter)` pairs in stored order.
pub fn parse_archive(bytes: &[u8]) -> Result<Vec<(String, StoredParam)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Archive("bad magic".into()));
    }
    let version = u32::from_le_bytes(c.array("version")?);
    if version != FORMAT_VERSION {
        return Err(Error::Archive(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(c.array("tensor count")?) as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = u16::from_le_bytes(c.array("name length")?) as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| Error::Archive("name is not utf-8".into()))?
            .to_string();
        let dtype = c.u8("dtype")?;
        let quant = c.u8("quant flag")?;
        let qparams = match quant {
            0 => None,
            1 => {
                let scale = f32::from_le_bytes(c.array("scale")?);
                let zp = i32::from_le_bytes(c.array("zero point")?);
                Some((scale, zp))
            }
            other => return Err(Error::Archive(format!("`{name}`: bad quant flag {other}"))),
        };
        let ndim = c.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(c.array("dimension")?) as usize);
        }
        let len: usize = shape.iter().product();
        let param = match (dtype, qparams) {
            (DTYPE_F32, None) => {
                let raw = c.take(len * 4, "f32 payload")?;
                let data = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect();
                StoredParam::Full(Tensor::new(shape, data)?)
            }
            (DTYPE_F16, None) => {
                let raw = c.take(len * 2, "f16 payload")?;
                let data = raw
                    .chunks_exact(2)
                    .map(|b| f16::from_le_bytes([b[0], b[1]]))
                    .collect();
                StoredParam::Quantized(QuantizedTensor {
                    shape,
                    params: QuantParams {
                        bits: 16,
                        mode: QuantMode::Float16,
                        scale: 1.0,
                        zero_point: 0,
                    },
                    payload: QuantPayload::Half(data),
                })
            }
            (DTYPE_I8, Some((scale, zp))) => {
                let raw = c.take(len, "i8 payload")?;
                StoredParam::Quantized(decode_int8(&name, shape, raw, scale, zp)?)
            }
            (d, q) => {
                return Err(Error::Archive(format!(
                    "`{name}`: unsupported dtype {d} with quant flag {}",
                    q.is_some() as u8
                )))
            }
        };
        out.push((name, param));
    }
    if c.pos != bytes.len() {
        return Err(Error::Archive(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(out)
}

/// A stored zero point of 0 with no `-128` code is read as symmetric;
/// anything else as offset asymmetric. Both readings dequantize identically.
fn decode_int8(
    name: &str,
    shape: Vec<usize>,
    raw: &[u8],
    scale: f32,
    zp: i32,
) -> Result<QuantizedTensor> {
    let symmetric = zp == 0 && raw.iter().all(|&b| b as i8 != i8::MIN);
    let (params, payload) = if symmetric {
        (
            QuantParams {
                bits: 8,
                mode: QuantMode::Symmetric,
                scale,
                zero_point: 0,
            },
            QuantPayload::Signed(raw.iter().map(|&b| b as i8).collect()),
        )
    } else {
        (
            QuantParams {
                bits: 8,
                mode: QuantMode::Asymmetric,
                scale,
                zero_point: zp + 128,
            },
            QuantPayload::Unsigned(raw.iter().map(|&b| b.wrapping_add(128)).collect()),
        )
    };
    params
        .validate()
        .map_err(|e| Error::Archive(format!("`{name}`: {e}")))?;
    Ok(QuantizedTensor {
        shape,
        params,
        payload,
    })
}

pub fn parse_params(bytes: &[u8]) -> Result<BTreeMap<ParamId, StoredParam>> {
    parse_archive(bytes)?
        .into_iter()
        .map(|(name, p)| Ok((name.parse()?, p)))
        .collect()
}

fn gz_encoder<W: Write>(w: W) -> flate2::write::GzEncoder<W> {
    GzBuilder::new()
        .mtime(0)
        .operating_system(GZIP_OS)
        .write(w, Compression::new(GZIP_LEVEL))
}

pub fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut enc = gz_encoder(Vec::new());
    enc.write_all(bytes).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

pub fn gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(bytes).read_to_end(&mut out)?;
    Ok(out)
}

/// Length of the gzip (level 9, zeroed metadata) encoding of `bytes`.
pub fn gzipped_size(bytes: &[u8]) -> u64 {
    let mut enc = gz_encoder(CountingWriter::default());
    enc.write_all(bytes).expect("counting write");
    enc.finish().expect("counting write").0
}

/// Gzipped size of an archive, streamed without materializing it.
pub fn gzipped_archive_size(entries: &[(String, ParamView<'_>)]) -> Result<u64> {
    let mut enc = gz_encoder(CountingWriter::default());
    let mut buffered = io::BufWriter::with_capacity(1 << 16, &mut enc);
    write_archive(&mut buffered, entries)?;
    // `flush` would force a deflate sync point and change the output, so
    // only drain the buffer.
    buffered.into_inner().map_err(|e| e.into_error())?;
    Ok(enc.finish()?.0)
}

#[derive(Default)]
struct CountingWriter(u64);

impl Write for CountingWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0 += buf.len() as u64;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// `baseline_size / model_size`.
pub fn reduction_factor(baseline_size: u64, model_size: u64) -> Result<f64> {
    if baseline_size == 0 || model_size == 0 {
        return Err(Error::BadSize {
            baseline: baseline_size,
            model: model_size,
        });
    }
    Ok(baseline_size as f64 / model_size as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelArtifact {
    pub serialized_bytes: Vec<u8>,
    pub gzipped: Vec<u8>,
}

impl ModelArtifact {
    pub fn from_entries(entries: &[(String, ParamView<'_>)]) -> Result<Self> {
        let serialized_bytes = serialize_entries(entries)?;
        let gzipped = gzip(&serialized_bytes);
        Ok(Self {
            serialized_bytes,
            gzipped,
        })
    }

    pub fn raw_size(&self) -> u64 {
        self.serialized_bytes.len() as u64
    }

    pub fn gzipped_size(&self) -> u64 {
        self.gzipped.len() as u64
    }

    /// Writes the gzip stream (`.mcmp.gz`).
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.gzipped).map_err(|e| Error::io(path, e))
    }
}

/// Reads an archive file, gzipped or not.
pub fn read_archive_file(path: &Path) -> Result<BTreeMap<ParamId, StoredParam>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        gunzip(&raw).map_err(|e| match e {
            Error::Stream(source) => Error::io(path, source),
            other => other,
        })?
    } else {
        raw
    };
    parse_params(&bytes)
}
