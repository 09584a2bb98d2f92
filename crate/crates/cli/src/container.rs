//! Self-describing binary container for arrays plus string metadata.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SPNC1" | version u32 | n_meta u32 | (key, value)* | n_entries u32 | entry*
//! string = len u32, utf-8 bytes
//! entry  = name string | ndim u32 | dims u64* | payload f64*
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

pub const MAGIC: &[u8; 5] = b"SPNC1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<u64>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArrayContainer {
    pub metadata: BTreeMap<String, String>,
    entries: Vec<Entry>,
}

impl ArrayContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata.get(key).map(|s| s.as_str()).ok_or_else(|| anyhow!("missing metadata key {key:?}"))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.meta(key)?;
        raw.parse().map_err(|e| anyhow!("metadata {key} = {raw:?}: {e}"))
    }

    /// Add an array; names must be unique and the shape must match the data.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<u64>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            bail!("duplicate entry {name:?}");
        }
        let count: u64 = shape.iter().product();
        if count != data.len() as u64 {
            bail!("entry {name:?}: shape {shape:?} does not hold {} values", data.len());
        }
        self.entries.push(Entry { name, shape, data });
        Ok(())
    }

    pub fn push_vec(&mut self, name: impl Into<String>, data: Vec<f64>) -> Result<()> {
        let n = data.len() as u64;
        self.push(name, vec![n], data)
    }

    /// Rows of equal length as a 2-D entry.
    pub fn push_rows(&mut self, name: impl Into<String>, rows: &[Vec<f64>]) -> Result<()> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            bail!("ragged rows");
        }
        self.push(name, vec![rows.len() as u64, cols as u64], rows.concat())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn vec(&self, name: &str) -> Result<&[f64]> {
        self.get(name).map(|e| e.data.as_slice()).ok_or_else(|| anyhow!("missing entry {name:?}"))
    }

    pub fn rows(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let e = self.get(name).ok_or_else(|| anyhow!("missing entry {name:?}"))?;
        if e.shape.len() != 2 {
            bail!("entry {name:?} is not two-dimensional");
        }
        let cols = e.shape[1] as usize;
        if cols == 0 {
            return Ok(vec![Vec::new(); e.shape[0] as usize]);
        }
        Ok(e.data.chunks(cols).map(|c| c.to_vec()).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            put_str(&mut out, &e.name);
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for d in &e.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = io::Cursor::new(bytes);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).context("truncated header")?;
        if &magic != MAGIC {
            bail!("not a container file (bad magic)");
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            bail!("unsupported container version {version}");
        }
        let mut c = ArrayContainer::new();
        for _ in 0..read_u32(&mut r)? {
            let k = read_str(&mut r)?;
            let v = read_str(&mut r)?;
            c.metadata.insert(k, v);
        }
        for _ in 0..read_u32(&mut r)? {
            let name = read_str(&mut r)?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| anyhow!("entry {name:?} is too large"))?;
            let remaining = bytes.len() as u64 - r.position();
            if count.checked_mul(8).is_none_or(|b| b > remaining) {
                bail!("entry {name:?} is truncated");
            }
            let data = (0..count).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            c.push(name, shape, data)?;
        }
        if r.position() != bytes.len() as u64 {
            bail!("trailing bytes after the last entry");
        }
        Ok(c)
    }

    /// Write via a temporary file in the same directory and an atomic rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Atomically replace `path` with `bytes`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().ok_or_else(|| anyhow!("{} is not a file path", path.display()))?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).context("truncated file")?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).context("truncated file")?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).context("truncated file")?;
    Ok(f64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).context("truncated string")?;
    String::from_utf8(b).context("invalid utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ArrayContainer {
        let mut c = ArrayContainer::new();
        c.set_meta("equation", "burgers");
        c.set_meta("note", "ünïcode");
        c.push_vec("theta", vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, f64::NAN]).unwrap();
        c.push_rows("states", &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        c.push("empty", vec![0], vec![]).unwrap();
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = ArrayContainer::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.metadata, c.metadata);
        for (a, b) in back.entries().iter().zip(c.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
        assert_eq!(back.rows("states").unwrap()[2], vec![5.0, 6.0]);
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn rejects_malformed_input() {
        let mut c = sample();
        assert!(c.push_vec("theta", vec![1.0]).is_err());
        assert!(c.push("bad", vec![2, 2], vec![1.0]).is_err());
        let bytes = c.to_bytes();
        assert!(ArrayContainer::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ArrayContainer::from_bytes(&bad).is_err());
        let mut newer = bytes.clone();
        newer[5] = 9;
        assert!(ArrayContainer::from_bytes(&newer).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(ArrayContainer::from_bytes(&extra).is_err());
    }

    #[test]
    fn atomic_write_and_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.spnc");
        let c = sample();
        c.write(&path).unwrap();
        c.write(&path).unwrap();
        let back = ArrayContainer::read(&path).unwrap();
        assert_eq!(back.to_bytes(), c.to_bytes());
        let leftovers: Vec<_> = std::fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
