//! Run-directory management: exclusive lock, manifest, CSV writing.

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Exclusive lock on a run directory, released on drop.
pub struct RunDir {
    pub path: PathBuf,
    lock_path: PathBuf,
}

impl RunDir {
    pub fn acquire(path: &Path) -> Result<Self> {
        fs::create_dir_all(path)
            .with_context(|| format!("creating run directory {}", path.display()))?;
        let lock_path = path.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "pid {}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(
                    "run directory {} is locked (stale {}?)",
                    path.display(),
                    lock_path.display()
                );
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            path: path.to_path_buf(),
            lock_path,
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Writes the resolved config echo and the run manifest.
    pub fn write_manifest(&self, config_text: &str, seed: u64) -> Result<()> {
        fs::write(self.file("config.resolved"), config_text)?;
        let mut hasher = Sha256::new();
        hasher.update(config_text.as_bytes());
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let manifest = format!(
            "config_sha256 = {hex}\nseed = {seed}\nversion = {}\n",
            env!("CARGO_PKG_VERSION")
        );
        fs::write(self.file("manifest.txt"), manifest)?;
        Ok(())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock_path);
    }
}

/// Minimal CSV writer with a fixed header.
pub struct CsvFile {
    out: fs::File,
}

impl CsvFile {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut out =
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(out, "{header}")?;
        Ok(Self { out })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }
}

/// Formats a float for CSV: full precision, lowercase scientific if needed.
pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.12e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        let a = RunDir::acquire(&run).unwrap();
        assert!(RunDir::acquire(&run).is_err());
        drop(a);
        let _b = RunDir::acquire(&run).unwrap();
    }

    #[test]
    fn manifest_written() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::acquire(&dir.path().join("r")).unwrap();
        run.write_manifest("a.b = 1\n", 42).unwrap();
        let manifest = fs::read_to_string(run.file("manifest.txt")).unwrap();
        assert!(manifest.contains("seed = 42"));
        assert!(manifest.contains("config_sha256"));
    }
}
