use std::fs;
use std::path::{Path, PathBuf};

use super::{FbankConfig, FeatureMatrix, FrontendError, Result};
use crate::util::{atomic_write, sha256_hex, write_json_pretty};

const MAGIC: &[u8; 4] = b"FBK1";
const SIDECAR: &str = "fbank_config.json";

/// On-disk feature store: one binary record per utterance plus a JSON
/// sidecar holding the config. Opening with a different config clears it.
#[derive(Debug)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn open(dir: impl AsRef<Path>, cfg: &FbankConfig) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let sidecar = dir.join(SIDECAR);
        let current = fs::read_to_string(&sidecar)
            .ok()
            .and_then(|t| serde_json::from_str::<FbankConfig>(&t).ok());
        if current.as_ref() != Some(cfg) {
            for entry in fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "fbk") {
                    fs::remove_file(path)?;
                }
            }
            write_json_pretty(&sidecar, cfg)?;
        }
        Ok(Self { dir })
    }

    fn record_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{}.fbk", &sha256_hex(id.as_bytes())[..24]))
    }

    pub fn get(&self, id: &str) -> Result<Option<FeatureMatrix>> {
        let path = self.record_path(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let (stored_id, fm) = decode(&bytes)?;
        if stored_id != id {
            return Ok(None);
        }
        Ok(Some(fm))
    }

    pub fn put(&self, id: &str, features: &FeatureMatrix) -> Result<()> {
        atomic_write(self.record_path(id), &encode(id, features))?;
        Ok(())
    }
}

fn encode(id: &str, fm: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + id.len() + fm.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    out.extend_from_slice(&(fm.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(fm.n_bands as u32).to_le_bytes());
    out.push(fm.normalized as u8);
    for &v in &fm.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Result<(String, FeatureMatrix)> {
    let bad = |m: &str| FrontendError::Cache(m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated record"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap()) as usize;
    let id_len = u32_at(take(4)?);
    let id = String::from_utf8(take(id_len)?.to_vec()).map_err(|_| bad("id not utf-8"))?;
    let rows = u32_at(take(4)?);
    let cols = u32_at(take(4)?);
    let normalized = take(1)?[0] != 0;
    let cells = take(rows * cols * 4)?;
    let values = cells
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mut fm = FeatureMatrix::new(values, rows, cols);
    fm.normalized = normalized;
    Ok((id, fm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_and_invalidate() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = FbankConfig::default();
        let cache = FeatureCache::open(dir.path(), &cfg).unwrap();
        let mut fm = FeatureMatrix::new(vec![0.5, -1.25, 3.0, 4.0], 2, 2);
        fm.normalized = true;
        cache.put("spk1/utt 1", &fm).unwrap();
        assert_eq!(cache.get("spk1/utt 1").unwrap(), Some(fm.clone()));
        assert_eq!(cache.get("other").unwrap(), None);

        // same config keeps entries
        let cache = FeatureCache::open(dir.path(), &cfg).unwrap();
        assert!(cache.get("spk1/utt 1").unwrap().is_some());

        let mut changed = cfg.clone();
        changed.n_bands = 40;
        let cache = FeatureCache::open(dir.path(), &changed).unwrap();
        assert_eq!(cache.get("spk1/utt 1").unwrap(), None);
        let sidecar: FbankConfig =
            serde_json::from_str(&fs::read_to_string(dir.path().join(SIDECAR)).unwrap()).unwrap();
        assert_eq!(sidecar, changed);
    }

    #[test]
    fn truncated_record_is_an_error() {
        let fm = FeatureMatrix::new(vec![1.0; 6], 3, 2);
        let bytes = encode("x", &fm);
        assert!(decode(&bytes[..bytes.len() - 2]).is_err());
    }
}
