//! On-disk layout shared by the subcommands.
//!
//! ```text
//! <root>/cache/<image id>.scan         descriptors of one image
//! <root>/vocabs/<kind>.csv, <kind>.fp   vocabulary and its input fingerprint
//! <root>/results/set<N>/<combo>/        confusion.csv, metrics.csv, run.json
//! <root>/analysis/                      distribution and correlation tables
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Context, Result};

pub const SUBDIRS: [&str; 4] = ["cache", "vocabs", "results", "analysis"];
const LOCK: &str = ".lock";

#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn create(root: &Path) -> Result<Self> {
        for d in SUBDIRS {
            let p = root.join(d);
            fs::create_dir_all(&p).context(|| format!("creating {}", p.display()))?;
        }
        Ok(Workspace {
            root: root.to_path_buf(),
        })
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn cache_file(&self, id: &str) -> PathBuf {
        self.cache_dir().join(format!("{id}.scan"))
    }

    pub fn vocab_file(&self, kind: &str) -> PathBuf {
        self.root.join("vocabs").join(format!("{kind}.csv"))
    }

    pub fn vocab_fingerprint_file(&self, kind: &str) -> PathBuf {
        self.root.join("vocabs").join(format!("{kind}.fp"))
    }

    pub fn results_dir(&self, set: u8, combo: &str) -> PathBuf {
        self.root.join("results").join(format!("set{set}")).join(combo)
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }

    /// Takes the workspace lock until the guard is dropped.
    pub fn lock(&self) -> Result<LockGuard> {
        let path = self.root.join(LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Locked(path.display().to_string()))
            }
            Err(e) => Err(e).context(|| format!("creating {}", path.display())),
        }
    }
}

#[derive(Debug)]
pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Writes via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).context(|| format!("renaming to {}", path.display()))
}
