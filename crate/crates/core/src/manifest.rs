//! Run manifests: a small JSON record written next to every CLI output that
//! captures the command, its configuration, and SHA-256 digests of the
//! inputs and outputs, so a run can be audited or reproduced later.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A path together with the SHA-256 digest of its contents. For directories
/// the digest covers every contained file (sorted relative path + bytes).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedPath {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand name, e.g. `gen-scene`.
    pub command: String,
    /// The effective configuration after defaults were applied.
    pub config: serde_json::Value,
    pub inputs: Vec<HashedPath>,
    pub outputs: Vec<HashedPath>,
    /// Wall-clock duration. Everything else in the manifest is
    /// deterministic for a fixed command line.
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.into(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            duration_seconds: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(hash_path(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(hash_path(path)?);
        Ok(())
    }

    /// Serialize to pretty JSON and write to `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut body =
            serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        body.push('\n');
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

/// Where the manifest for a given output lives: `<dir>/manifest.json` when
/// the output is a directory, `<file>.manifest.json` otherwise.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("manifest.json")
    } else {
        let mut name = output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string());
        name.push_str(".manifest.json");
        output.with_file_name(name)
    }
}

/// SHA-256 of a file's bytes, or of a directory's files taken in sorted
/// relative-path order (each file contributes its path, a NUL, its length,
/// and its bytes, so renames and boundary shifts change the digest).
pub fn hash_path(path: &Path) -> Result<HashedPath> {
    let digest = if path.is_dir() {
        let mut hasher = Sha256::new();
        for rel in collect_files(path)? {
            let full = path.join(&rel);
            hasher.update(rel.to_string_lossy().replace('\\', "/").as_bytes());
            hasher.update([0u8]);
            let bytes = std::fs::read(&full).map_err(|e| Error::io(&full, e))?;
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
        hasher.finalize()
    } else {
        let mut hasher = Sha256::new();
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buf = [0u8; 64 * 1024];
        loop {
            let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        hasher.finalize()
    };
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(HashedPath {
        path: path.to_string_lossy().into_owned(),
        sha256: hex,
    })
}

/// All files under `root`, as paths relative to it, sorted. Manifest files
/// themselves are excluded so a directory's digest does not depend on
/// whether its own manifest was written yet.
fn collect_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                let rel = path
                    .strip_prefix(root)
                    .expect("walked path must be under root")
                    .to_path_buf();
                files.push(rel);
            }
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_hash_matches_known_sha256() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        std::fs::write(&path, b"abc").unwrap();
        let hashed = hash_path(&path).unwrap();
        // SHA-256("abc"), a fixed test vector.
        assert_eq!(
            hashed.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn directory_hash_is_order_independent_but_content_sensitive() {
        let make = |names: &[(&str, &[u8])]| {
            let dir = tempfile::tempdir().unwrap();
            for (name, bytes) in names {
                std::fs::write(dir.path().join(name), bytes).unwrap();
            }
            (hash_path(dir.path()).unwrap().sha256, dir)
        };
        let (a, _da) = make(&[("a.txt", b"1"), ("b.txt", b"2")]);
        let (b, _db) = make(&[("b.txt", b"2"), ("a.txt", b"1")]);
        assert_eq!(a, b, "creation order must not matter");
        let (c, _dc) = make(&[("a.txt", b"1"), ("b.txt", b"3")]);
        assert_ne!(a, c, "content change must change the digest");
        let (d, _dd) = make(&[("a.txt", b"1"), ("c.txt", b"2")]);
        assert_ne!(a, d, "rename must change the digest");
    }

    #[test]
    fn directory_hash_ignores_manifest_json() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("data.bin"), b"payload").unwrap();
        let before = hash_path(dir.path()).unwrap().sha256;
        std::fs::write(dir.path().join("manifest.json"), b"{}").unwrap();
        let after = hash_path(dir.path()).unwrap().sha256;
        assert_eq!(before, after);
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, b"in").unwrap();
        let mut manifest =
            RunManifest::new("gen-scene", serde_json::json!({"seed": 7, "objects": 3}));
        manifest.add_input(&input).unwrap();
        manifest.duration_seconds = 1.25;
        let path = dir.path().join("run.manifest.json");
        manifest.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, manifest);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn manifest_path_convention() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            manifest_path_for(&dir.path().join("prompt.txt")),
            dir.path().join("prompt.txt.manifest.json")
        );
        assert_eq!(
            manifest_path_for(dir.path()),
            dir.path().join("manifest.json")
        );
    }

    #[test]
    fn missing_path_is_an_io_error() {
        let err = hash_path(Path::new("/nonexistent/nope.bin")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
