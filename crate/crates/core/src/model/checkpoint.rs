//! Binary checkpoint files.
//!
//! ```text
//! "SOMN" | version u16 | header length u32 | header JSON
//! per tensor: name length u16 | name | ndim u8 | dims u64… | values (LE)
//! CRC-64/XZ of everything above, u64 LE
//! ```
//!
//! Values are stored in the dtype named in the header, so a model saved and
//! loaded at the same precision comes back bit for bit. Momentum velocities
//! are not stored; a loaded model starts with zero velocity.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crc::{Crc, Digest, CRC_64_XZ};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, ModelParameters};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"SOMN";
pub const FORMAT_VERSION: u16 = 1;
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}: not a checkpoint (bad magic bytes)")]
    BadMagic(PathBuf),
    #[error("{path}: format version {found}, this build reads {FORMAT_VERSION}")]
    Version { path: PathBuf, found: u16 },
    #[error("{0}: file is truncated")]
    Truncated(PathBuf),
    #[error("{path}: checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    Checksum { path: PathBuf, stored: u64, computed: u64 },
    #[error("{path}: malformed checkpoint: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("{path}: checkpoint architecture differs from the requested configuration ({message})")]
    ArchitectureMismatch { path: PathBuf, message: String },
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    dtype: String,
    c1_frozen: bool,
    tensors: usize,
}

struct CrcWriter<W> {
    inner: W,
    digest: Digest<'static, u64>,
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.digest.update(&buf[..n]);
        Ok(n)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

struct CrcReader<R> {
    inner: R,
    digest: Digest<'static, u64>,
}

impl<R: Read> Read for CrcReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.digest.update(&buf[..n]);
        Ok(n)
    }
}

pub fn save_checkpoint<T: Real>(params: &ModelParameters<T>, path: &Path) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = CrcWriter { inner: BufWriter::new(file), digest: CRC64.digest() };
    let tensors = params.weights.named_tensors();
    let header = Header { config: params.config.clone(), dtype: T::DTYPE.into(), c1_frozen: params.c1_frozen, tensors: tensors.len() };
    let header = serde_json::to_vec(&header).expect("config serializes");

    let mut write_all = || -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::new();
        for (name, t) in &tensors {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[t.shape().len() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for chunk in t.data().chunks(1 << 16) {
                buf.clear();
                chunk.iter().for_each(|v| v.write_le(&mut buf));
                w.write_all(&buf)?;
            }
        }
        let crc = w.digest.clone().finalize();
        w.inner.write_all(&crc.to_le_bytes())?;
        w.inner.flush()
    };
    write_all().map_err(io_err)
}

struct Loader<'p, R> {
    path: &'p Path,
    r: CrcReader<R>,
}

impl<R: Read> Loader<'_, R> {
    fn err(&self, e: io::Error) -> CheckpointError {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated(self.path.to_path_buf())
        } else {
            CheckpointError::Io { path: self.path.to_path_buf(), source: e }
        }
    }

    fn malformed(&self, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Malformed { path: self.path.to_path_buf(), message: message.into() }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(|e| self.err(e))?;
        Ok(b)
    }

    fn vec(&mut self, n: usize) -> Result<Vec<u8>, CheckpointError> {
        let mut b = Vec::new();
        (&mut self.r).take(n as u64).read_to_end(&mut b).map_err(|e| self.err(e))?;
        if b.len() != n {
            return Err(CheckpointError::Truncated(self.path.to_path_buf()));
        }
        Ok(b)
    }

    fn values<T: Real, S: Real>(&mut self, count: usize) -> Result<Vec<T>, CheckpointError> {
        let mut out = Vec::with_capacity(count);
        let mut buf = vec![0u8; (1 << 16) * S::BYTES];
        let mut left = count;
        while left > 0 {
            let n = left.min(1 << 16);
            let bytes = &mut buf[..n * S::BYTES];
            self.r.read_exact(bytes).map_err(|e| self.err(e))?;
            out.extend(bytes.chunks_exact(S::BYTES).map(|b| T::of(S::read_le(b).as_f64())));
            left -= n;
        }
        Ok(out)
    }
}

/// Loads a checkpoint, converting stored values to `T` if the stored dtype
/// differs.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ModelParameters<T>, CheckpointError> {
    let file = File::open(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    let mut l = Loader { path, r: CrcReader { inner: BufReader::new(file), digest: CRC64.digest() } };

    if &l.bytes::<4>()? != MAGIC {
        return Err(CheckpointError::BadMagic(path.to_path_buf()));
    }
    let version = u16::from_le_bytes(l.bytes()?);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { path: path.to_path_buf(), found: version });
    }
    let header_len = u32::from_le_bytes(l.bytes()?) as usize;
    let header_bytes = l.vec(header_len)?;
    let header: Header = serde_json::from_slice(&header_bytes).map_err(|e| l.malformed(format!("header: {e}")))?;
    let mut params = ModelParameters::<T>::zeros(&header.config).map_err(|e| l.malformed(e.to_string()))?;
    params.c1_frozen = header.c1_frozen;
    let expected = params.weights.named_tensors().len();
    if header.tensors != expected {
        return Err(l.malformed(format!("{} tensors listed, architecture has {expected}", header.tensors)));
    }

    for _ in 0..expected {
        let name_len = u16::from_le_bytes(l.bytes()?) as usize;
        let name = String::from_utf8(l.vec(name_len)?).map_err(|_| l.malformed("tensor name is not UTF-8"))?;
        let ndim = l.bytes::<1>()?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(l.bytes()?) as usize);
        }
        let target = params.weights.named_tensors().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t.shape().to_vec());
        match target {
            Some(s) if s == shape => {}
            Some(s) => return Err(l.malformed(format!("{name} has shape {shape:?}, config implies {s:?}"))),
            None => return Err(l.malformed(format!("unknown tensor {name}"))),
        }
        let count: usize = shape.iter().product();
        let values = match header.dtype.as_str() {
            "f32" => l.values::<T, f32>(count)?,
            "f64" => l.values::<T, f64>(count)?,
            other => return Err(l.malformed(format!("unknown dtype {other}"))),
        };
        let t = Tensor::new(&shape, values).map_err(|e| l.malformed(e.to_string()))?;
        let mut named = params.weights.named_tensors_mut();
        *named.iter_mut().find(|(n, _)| *n == name).expect("checked above").1 = t;
    }

    let computed = l.r.digest.clone().finalize();
    let mut trailer = [0u8; 8];
    l.r.inner.read_exact(&mut trailer).map_err(|e| l.err(e))?;
    let stored = u64::from_le_bytes(trailer);
    if stored != computed {
        return Err(CheckpointError::Checksum { path: path.to_path_buf(), stored, computed });
    }
    if l.r.inner.read(&mut [0u8; 1]).map_err(|e| l.err(e))? != 0 {
        return Err(l.malformed("trailing bytes after checksum"));
    }

    Ok(params)
}

/// Loads a checkpoint that must match `config`'s architecture.
pub fn load_checkpoint_for<T: Real>(path: &Path, config: &ModelConfig) -> Result<ModelParameters<T>, CheckpointError> {
    let params = load_checkpoint::<T>(path)?;
    if !params.config.same_architecture(config) {
        let s = |c: &ModelConfig| format!("input {} C1 {}×{} C2 {}×{} F {}/{}", c.input_len, c.c1_filters, c.c1_len, c.c2_filters, c.c2_len, c.f1, c.f2);
        return Err(CheckpointError::ArchitectureMismatch {
            path: path.to_path_buf(),
            message: format!("file has {}, expected {}", s(&params.config), s(config)),
        });
    }
    Ok(params)
}
