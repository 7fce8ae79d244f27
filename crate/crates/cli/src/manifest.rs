use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{io_error, Failure};

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub hash: String,
}

/// Record of one run, written beside its outputs as `manifest.<command>.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<InputFile>,
    pub output_dir: PathBuf,
    /// Hash over the content hashes of all inputs, in order.
    pub input_hash: String,
}

/// Hash of `blob <len>\0<bytes>`, as git computes object ids, but with SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

fn hash_path(path: &Path, out: &mut Vec<InputFile>) -> Result<(), Failure> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io_error(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && !is_manifest(p))
            .collect();
        entries.sort();
        for p in entries {
            hash_path(&p, out)?;
        }
        return Ok(());
    }
    let bytes = std::fs::read(path).map_err(io_error(path))?;
    out.push(InputFile {
        path: path.to_path_buf(),
        hash: blob_hash(&bytes),
    });
    Ok(())
}

fn is_manifest(p: &Path) -> bool {
    p.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with("manifest.") && n.ends_with(".json"))
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&Path>, seed: Option<u64>, inputs: &[&Path], output_dir: &Path) -> Result<Self, Failure> {
        let mut files = Vec::new();
        for p in inputs.iter().copied().chain(config) {
            hash_path(p, &mut files)?;
        }
        let mut h = Sha256::new();
        for f in &files {
            h.update(f.hash.as_bytes());
        }
        Ok(Self {
            command: command.to_string(),
            config: config.map(Path::to_path_buf),
            seed,
            inputs: files,
            output_dir: output_dir.to_path_buf(),
            input_hash: format!("{:x}", h.finalize()),
        })
    }

    pub fn write(&self) -> Result<(), Failure> {
        let path = self.output_dir.join(format!("manifest.{}.json", self.command));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(io_error(&path))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_uses_git_framing() {
        let mut h = Sha256::new();
        h.update(b"blob 3\0abc");
        assert_eq!(blob_hash(b"abc"), format!("{:x}", h.finalize()));
        assert_ne!(blob_hash(b"abc"), blob_hash(b"abd"));
    }

    #[test]
    fn manifest_skips_other_manifests() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.tsv"), "x").unwrap();
        std::fs::write(dir.path().join("manifest.synth.json"), "{}").unwrap();
        let m = RunManifest::new("index", None, None, &[dir.path()], dir.path()).unwrap();
        assert_eq!(m.inputs.len(), 1);
        m.write().unwrap();
        assert!(dir.path().join("manifest.index.json").exists());
    }
}
