//! `CVF1` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CVF1" | u32 version | u32 entry_count
//! per entry: u32 name_len | name (UTF-8) | u32 rank | rank x u64 dim | u64 offset
//! payload: f32 little-endian values; each offset is absolute in the file
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CvfError, Result};

pub const MAGIC: &[u8; 4] = b"CVF1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(CvfError::DimensionMismatch {
                expected: n,
                got: data.len(),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Tensor {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub type NamedTensors = Vec<(String, Tensor)>;

/// Serialises `tensors` into container bytes.
pub fn encode_container(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    for (name, _) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(CvfError::InvalidArgument(format!("duplicate tensor name {name:?}")));
        }
    }
    let header_len: usize = 12
        + tensors
            .iter()
            .map(|(n, t)| 4 + n.len() + 4 + 8 * t.dims.len() + 8)
            .sum::<usize>();
    let mut out = Vec::with_capacity(header_len + tensors.iter().map(|(_, t)| 4 * t.data.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut offset = header_len as u64;
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.data.len() as u64;
    }
    debug_assert_eq!(out.len(), header_len);
    for (_, t) in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| CvfError::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CvfError::io(path, e)
    })
}

pub fn save_container(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    write_atomic(path, &encode_container(tensors)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CvfError::Truncated {
                path: self.path.to_path_buf(),
                detail: format!("header ends inside {what} at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses container bytes; `path` is only used in error messages.
pub fn decode_container(bytes: &[u8], path: &Path) -> Result<NamedTensors> {
    let malformed = |detail: String| CvfError::Malformed {
        path: path.to_path_buf(),
        detail,
    };
    let mut r = Reader { bytes, pos: 0, path };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CvfError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    r.pos = 4;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CvfError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| malformed(format!("entry {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(r.u64("dims")?);
        }
        let offset = r.u64("offset")?;
        entries.push((name, dims, offset));
    }
    let header_end = r.pos as u64;
    let mut spans: Vec<(u64, u64, usize)> = Vec::with_capacity(entries.len());
    let mut names = HashSet::new();
    for (i, (name, dims, offset)) in entries.iter().enumerate() {
        if !names.insert(name.as_str()) {
            return Err(malformed(format!("duplicate tensor name {name:?}")));
        }
        let n = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| malformed(format!("tensor {name:?} size overflows")))?;
        if *offset < header_end {
            return Err(malformed(format!("tensor {name:?} offset {offset} points into the header")));
        }
        let end = offset
            .checked_add(n)
            .ok_or_else(|| malformed(format!("tensor {name:?} extent overflows")))?;
        if end > bytes.len() as u64 {
            return Err(CvfError::Truncated {
                path: path.to_path_buf(),
                detail: format!(
                    "tensor {name:?} needs bytes {offset}..{end} but the file has {}",
                    bytes.len()
                ),
            });
        }
        spans.push((*offset, end, i));
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(malformed(format!(
                "tensors {:?} and {:?} overlap",
                entries[w[0].2].0, entries[w[1].2].0
            )));
        }
    }
    entries
        .into_iter()
        .map(|(name, dims, offset)| {
            let dims: Vec<usize> = dims.into_iter().map(|d| d as usize).collect();
            let n: usize = dims.iter().product();
            let start = offset as usize;
            let data = bytes[start..start + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok((name, Tensor { dims, data }))
        })
        .collect()
}

pub fn load_container(path: &Path) -> Result<NamedTensors> {
    let bytes = fs::read(path).map_err(|e| CvfError::io(path, e))?;
    decode_container(&bytes, path)
}

/// Name lookup helpers over a loaded container.
pub trait TensorLookup {
    fn get_tensor(&self, name: &str, path: &Path) -> Result<&Tensor>;
}

impl TensorLookup for NamedTensors {
    fn get_tensor(&self, name: &str, path: &Path) -> Result<&Tensor> {
        self.iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CvfError::Malformed {
                path: PathBuf::from(path),
                detail: format!("missing tensor {name:?}"),
            })
    }
}
