//! Versioned binary parameter container.
//!
//! Layout (all little-endian): 8-byte magic, `u32` version, `u32` hyperparameter
//! count, that many `u64` hyperparameters, `u64` parameter count, then the
//! parameters as `f64` in declaration order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;

pub type Magic = [u8; 8];

pub fn encode(magic: &Magic, hyper: &[u64], params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * (hyper.len() + params.len()));
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(hyper.len() as u32).to_le_bytes());
    for h in hyper {
        out.extend_from_slice(&h.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Write through a sibling temporary file and rename, so a failed write
/// never leaves a truncated file in place of a good one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save(path: &Path, magic: &Magic, hyper: &[u64], params: &[f64]) -> Result<()> {
    write_atomic(path, &encode(magic, hyper, params))
}

/// Read the 8-byte magic only.
pub fn peek_magic(path: &Path) -> Result<Magic> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    bytes
        .get(..8)
        .and_then(|m| m.try_into().ok())
        .ok_or_else(|| Error::format(path, "file shorter than its magic tag"))
}

pub fn decode(path: &Path, bytes: &[u8], magic: &Magic) -> Result<(Vec<u64>, Vec<f64>)> {
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(Error::format(path, "unexpected end of file"));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };
    if take(8)? != magic {
        return Err(Error::format(
            path,
            format!("expected magic {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let n_hyper = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let hyper = (0..n_hyper)
        .map(|_| Ok(u64::from_le_bytes(take(8)?.try_into().unwrap())))
        .collect::<Result<Vec<_>>>()?;
    let n_params = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let params = (0..n_params)
        .map(|_| Ok(f64::from_le_bytes(take(8)?.try_into().unwrap())))
        .collect::<Result<Vec<_>>>()?;
    if !cur.is_empty() {
        return Err(Error::format(path, "trailing bytes after parameters"));
    }
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::format(path, format!("parameter {i} is not finite")));
    }
    Ok((hyper, params))
}

pub fn load(path: &Path, magic: &Magic) -> Result<(Vec<u64>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes, magic)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        save(&p, b"TESTTEST", &[3, 4], &[1.5, -2.25]).unwrap();
        let (h, v) = load(&p, b"TESTTEST").unwrap();
        assert_eq!(h, vec![3, 4]);
        assert_eq!(v, vec![1.5, -2.25]);
        assert!(matches!(load(&p, b"OTHERTAG"), Err(Error::Format { .. })));
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(load(&p, b"TESTTEST").is_err());
        assert_eq!(&peek_magic(&p).unwrap(), b"TESTTEST");
    }
}
