//! Binary weight container shared by network checkpoints and the frozen
//! feature-extractor trunk.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GSTW"            4 bytes magic
//! version           u32 = 1
//! record count      u32
//! per record:
//!   name length     u16, then that many bytes of UTF-8
//!   dtype           u8   (0 = f32, 1 = f64)
//!   rank            u8
//!   dims            rank x u32
//!   values          product(dims) little-endian reals, row-major
//! ```
//!
//! Convolution kernels are stored as `(out, in, kh, kw)`, biases as rank 1.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"GSTW";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;
const CHUNK: usize = 1 << 16;

/// One named array.
#[derive(Clone, Debug, PartialEq)]
pub struct Record<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> Record<T> {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let name = name.into();
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(Error::Format(format!(
                "record {name}: dims {dims:?} need {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Record { name, dims, values })
    }

    pub fn from_tensor(name: impl Into<String>, t: &Tensor<T>) -> Self {
        Record {
            name: name.into(),
            dims: t.shape().dims().to_vec(),
            values: t.data().to_vec(),
        }
    }

    pub fn vector(name: impl Into<String>, values: &[T]) -> Self {
        Record {
            name: name.into(),
            dims: vec![values.len()],
            values: values.to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor<T>> {
        let d = match self.dims.as_slice() {
            [n, c, h, w] => Shape::new(*n, *c, *h, *w),
            _ => {
                return Err(Error::Format(format!(
                    "record {} has rank {}, expected 4",
                    self.name,
                    self.dims.len()
                )))
            }
        };
        Tensor::from_vec(d, self.values.clone())
    }

    pub fn to_vector(&self, len: usize) -> Result<Vec<T>> {
        if self.dims != [len] {
            return Err(Error::Format(format!(
                "record {} has dims {:?}, expected [{len}]",
                self.name, self.dims
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "weight record" });
        }
        Ok(self.values.clone())
    }
}

/// Ordered collection of records with unique names.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct WeightFile<T> {
    records: Vec<Record<T>>,
}

impl<T: Scalar> WeightFile<T> {
    pub fn new() -> Self {
        WeightFile { records: Vec::new() }
    }

    pub fn push(&mut self, record: Record<T>) -> Result<()> {
        if self.get(&record.name).is_some() {
            return Err(Error::Format(format!("duplicate record {}", record.name)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[Record<T>] {
        &self.records
    }

    pub fn get(&self, name: &str) -> Option<&Record<T>> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Like [`Self::get`] but reports the missing name as an error.
    pub fn require(&self, name: &str) -> Result<&Record<T>> {
        self.get(name).ok_or_else(|| Error::MissingLayer(name.to_string()))
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.records.len()).map_err(|_| Error::Format("too many records".into()))?;
        buf.extend_from_slice(&count.to_le_bytes());
        out.write_all(&buf).map_err(stream_err)?;
        for r in &self.records {
            buf.clear();
            let name = r.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("record name too long: {}", r.name)))?;
            if r.dims.len() > MAX_RANK {
                return Err(Error::Format(format!("record {} has rank {}", r.name, r.dims.len())));
            }
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(name);
            buf.push(T::DTYPE);
            buf.push(r.dims.len() as u8);
            for &d in &r.dims {
                let d = u32::try_from(d).map_err(|_| Error::Format(format!("record {} dimension too large", r.name)))?;
                buf.extend_from_slice(&d.to_le_bytes());
            }
            buf.reserve(r.values.len() * T::BYTES);
            for &v in &r.values {
                v.push_le(&mut buf);
            }
            out.write_all(&buf).map_err(stream_err)?;
        }
        out.flush().map_err(stream_err)
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut input, &mut magic, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"GSTW\"",
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = read_u32(&mut input, "version")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
        }
        let count = read_u32(&mut input, "record count")?;
        let mut file = WeightFile::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut input, &mut len, "record name length")?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut input, &mut name, "record name")?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("record name is not UTF-8".into()))?;
            let mut tag = [0u8; 2];
            read_exact(&mut input, &mut tag, "record header")?;
            let (dtype, rank) = (tag[0], tag[1] as usize);
            let width = match dtype {
                0 => 4,
                1 => 8,
                other => return Err(Error::Format(format!("record {name}: unknown dtype {other}"))),
            };
            if rank > MAX_RANK {
                return Err(Error::Format(format!("record {name}: rank {rank} exceeds {MAX_RANK}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(&mut input, "record dims")? as usize);
            }
            let total = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("record {name}: element count overflows")))?;
            let values = read_values::<T>(&mut input, total, dtype, width)?;
            if !seen.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate record {name}")));
            }
            file.records.push(Record { name, dims, values });
        }
        Ok(file)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| with_path(e, path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f)).map_err(|e| with_path(e, path))
    }
}

fn stream_err(e: io::Error) -> Error {
    Error::io("<stream>", e)
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

fn read_exact(input: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Format(format!("unexpected end of file while reading {what}"))
        } else {
            stream_err(e)
        }
    })
}

fn read_u32(input: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads `total` values in bounded chunks so a corrupt header cannot force a
/// huge allocation before the data runs out.
fn read_values<T: Scalar>(input: &mut impl Read, total: usize, dtype: u8, width: usize) -> Result<Vec<T>> {
    let mut values = Vec::with_capacity(total.min(CHUNK));
    let mut buf = vec![0u8; CHUNK.min(total.max(1)) * width];
    let mut remaining = total;
    while remaining > 0 {
        let take = remaining.min(CHUNK);
        let bytes = &mut buf[..take * width];
        read_exact(input, bytes, "record values")?;
        for b in bytes.chunks_exact(width) {
            let v = if dtype == T::DTYPE {
                T::from_le(b)
            } else if dtype == 0 {
                T::lit(f32::from_le(b) as f64)
            } else {
                T::lit(f64::from_le(b))
            };
            values.push(v);
        }
        remaining -= take;
    }
    Ok(values)
}
