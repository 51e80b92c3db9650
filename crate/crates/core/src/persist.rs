//! Checkpoint container: a flat little-endian f64 payload next to a JSON sidecar.
//!
//! `<stem>.bin` holds a 16-byte magic/length header then the payload; `<stem>.json`
//! holds the typed header. Both are written to temporaries and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{invalid, Result};

const MAGIC: &[u8; 8] = b"PHI4BIN1";

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Write `bytes` to `path` through a sibling temporary and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = with_ext(path, "tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_container<H: Serialize>(stem: &Path, header: &H, payload: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + 8 * payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for x in payload {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    write_atomic(&with_ext(stem, "bin"), &bytes)?;
    write_atomic(&with_ext(stem, "json"), serde_json::to_string_pretty(header)?.as_bytes())
}

pub fn read_container<H: DeserializeOwned>(stem: &Path) -> Result<(H, Vec<f64>)> {
    let header: H = serde_json::from_slice(&fs::read(with_ext(stem, "json"))?)?;
    let bytes = fs::read(with_ext(stem, "bin"))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(invalid("not a checkpoint container"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 16 + 8 * n {
        return Err(invalid("checkpoint payload is truncated"));
    }
    let payload = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ck");
        let payload = vec![1.5, -0.0, f64::MAX, 3e-300];
        write_container(&stem, &("hello", 7u32), &payload).unwrap();
        let (h, p): ((String, u32), Vec<f64>) = read_container(&stem).unwrap();
        assert_eq!(h, ("hello".to_string(), 7));
        assert_eq!(p.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), payload.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("bad");
        fs::write(with_ext(&stem, "json"), "0").unwrap();
        fs::write(with_ext(&stem, "bin"), b"nope").unwrap();
        assert!(read_container::<u32>(&stem).is_err());
    }
}
