//! Flat parameter checkpoints with a small header.
//!
//! Text layout:
//!
//! ```text
//! eniac-params 1
//! kind mlp
//! shape 4 64 64 7
//! count 4999
//! <one value per line>
//! ```
//!
//! Binary layout (little endian): magic `ENPR`, version `u8`, kind `u8`,
//! rank `u32`, dims `u64 * rank`, count `u64`, values `f64 * count`.

use std::io::{Read, Write};
use std::path::Path;

use super::ClassKind;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"ENPR";
const VERSION: u8 = 1;
const TEXT_TAG: &str = "eniac-params";

#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub kind: ClassKind,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

fn kind_code(kind: ClassKind) -> u8 {
    match kind {
        ClassKind::Tabular => 0,
        ClassKind::Finite => 1,
        ClassKind::Linear => 2,
        ClassKind::Mlp => 3,
    }
}

fn kind_from_code(code: u8) -> Result<ClassKind> {
    Ok(match code {
        0 => ClassKind::Tabular,
        1 => ClassKind::Finite,
        2 => ClassKind::Linear,
        3 => ClassKind::Mlp,
        c => return Err(Error::Parse(format!("unknown class kind code {c}"))),
    })
}

impl ParamFile {
    pub fn new(kind: ClassKind, shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self { kind, shape, values }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{TEXT_TAG} {VERSION}\nkind {}\nshape", self.kind);
        for d in &self.shape {
            out.push_str(&format!(" {d}"));
        }
        out.push_str(&format!("\ncount {}\n", self.values.len()));
        for v in &self.values {
            // `{:?}` prints the shortest string that round-trips exactly
            out.push_str(&format!("{v:?}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse(format!("missing {what}")));
        let header = next("header")?;
        if header.split_whitespace().next() != Some(TEXT_TAG) {
            return Err(Error::Parse(format!("bad header {header:?}")));
        }
        let kind = field(next("kind")?, "kind")?.trim().parse()?;
        let shape = field(next("shape")?, "shape")?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("shape: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = field(next("count")?, "count")?
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("count: {e}")))?;
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|e| Error::Parse(format!("value {l:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != count {
            return Err(Error::DimensionMismatch { expected: count, got: values.len() });
        }
        Ok(Self { kind, shape, values })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 8 * (self.shape.len() + self.values.len()));
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(kind_code(self.kind));
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut bytes, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("bad magic".into()));
        }
        let mut head = [0u8; 2];
        read_exact(&mut bytes, &mut head)?;
        if head[0] != VERSION {
            return Err(Error::Parse(format!("unsupported version {}", head[0])));
        }
        let kind = kind_from_code(head[1])?;
        let mut b4 = [0u8; 4];
        read_exact(&mut bytes, &mut b4)?;
        let rank = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            read_exact(&mut bytes, &mut b8)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        read_exact(&mut bytes, &mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        if bytes.len() != 8 * count {
            return Err(Error::DimensionMismatch { expected: 8 * count, got: bytes.len() });
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { kind, shape, values })
    }

    /// Writes binary when the path ends in `.bin`, text otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path)?;
        if is_binary(path) {
            f.write_all(&self.to_bytes())?;
        } else {
            f.write_all(self.to_text().as_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(MAGIC) {
            Self::from_bytes(&bytes)
        } else {
            let text = String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
            Self::from_text(&text)
        }
    }
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn field<'a>(line: &'a str, name: &str) -> Result<&'a str> {
    line.strip_prefix(name).ok_or_else(|| Error::Parse(format!("expected {name:?}, got {line:?}")))
}

fn read_exact(bytes: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    bytes.read_exact(buf).map_err(|_| Error::Parse("truncated parameter file".into()))
}
