//! Output directories with checksummed, atomically written files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::data::write_atomic;
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the files an experiment writes, each under a unique name.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<(String, String)>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `name` (relative to the root), temporary file then
    /// rename, and records its checksum.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if name == MANIFEST_NAME || name.contains('/') || name.contains('\\') || name.starts_with('.') {
            return Err(Error::param("output file", format!("`{name}` is not a plain file name")));
        }
        if self.files.iter().any(|(n, _)| n == name) {
            return Err(Error::param("output file", format!("`{name}` written twice")));
        }
        write_atomic(&self.root.join(name), bytes)?;
        self.files.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn files(&self) -> &[(String, String)] {
        &self.files
    }

    /// Writes the manifest; consumes the directory so it happens once.
    pub fn finish(self, manifest: RunManifest) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_NAME);
        write_atomic(&path, manifest.render(&self.files).as_bytes())?;
        Ok(path)
    }
}

/// Provenance of a run: configuration echo, seeds, RNG, build, timing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn push_duration(&mut self, elapsed: Duration) {
        self.push("wall_clock_seconds", format!("{:.3}", elapsed.as_secs_f64()));
    }

    /// One `key = value` per line, then a `[files]` table of
    /// `sha256  name` lines.
    pub fn render(&self, files: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str("\n[files]\n");
        for (name, sum) in files {
            out.push_str(&format!("{sum}  {name}\n"));
        }
        out
    }
}

/// Reads back the `[files]` table of a manifest.
pub fn parse_file_table(text: &str) -> Vec<(String, String)> {
    text.lines()
        .skip_while(|l| l.trim() != "[files]")
        .skip(1)
        .filter_map(|l| l.split_once("  "))
        .map(|(sum, name)| (name.to_string(), sum.to_string()))
        .collect()
}

/// Checks every listed file exists with the recorded checksum.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut names = Vec::new();
    for (name, sum) in parse_file_table(&text) {
        let file = dir.join(&name);
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        if sha256_hex(&bytes) != sum {
            return Err(Error::param("manifest", format!("checksum mismatch for {name}")));
        }
        names.push(name);
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lists_files_with_checksums() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(tmp.path().join("run")).unwrap();
        out.write("a.csv", b"t,x\n0,1\n").unwrap();
        out.write("b.svg", b"<svg/>").unwrap();
        assert!(out.write("a.csv", b"again").is_err());
        assert!(out.write("../escape", b"x").is_err());
        let mut m = RunManifest::new();
        m.push("seed", 7);
        let root = out.root().to_path_buf();
        out.finish(m).unwrap();
        assert_eq!(verify_manifest(&root).unwrap(), vec!["a.csv", "b.svg"]);
        let leftovers: Vec<_> = fs::read_dir(&root)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());

        fs::write(root.join("a.csv"), b"tampered").unwrap();
        assert!(verify_manifest(&root).is_err());
    }
}
