//! Run directories: `<root>/<timestamp>-<slug>`, never reused.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CvfError, Result};
use crate::io::config::ExperimentConfig;
use crate::io::container::write_atomic;

pub const RUNS_DIR_ENV: &str = "CVF_RUNS_DIR";
pub const CONFIG_FILE: &str = "config.txt";

/// Output root: `$CVF_RUNS_DIR`, else `./runs`.
pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn slugify(s: &str) -> String {
    let slug: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    let slug = slug.trim_matches('-').to_string();
    if slug.is_empty() { "run".into() } else { slug }
}

#[derive(Clone, Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates a fresh directory under `root`. A numeric suffix is appended
    /// when the timestamped name is already taken.
    pub fn create(root: &Path, slug: &str) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CvfError::io(root, e))?;
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let base = format!("{stamp}-{}", slugify(slug));
        for n in 0.. {
            let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
            let path = root.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(CvfError::io(&path, e)),
            }
        }
        unreachable!()
    }

    pub fn open(path: &Path) -> Result<Self> {
        if !path.is_dir() {
            return Err(CvfError::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found"),
            ));
        }
        Ok(RunDir {
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.join(name);
        fs::create_dir_all(&p).map_err(|e| CvfError::io(&p, e))?;
        Ok(p)
    }

    pub fn write_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        write_atomic(&self.join(CONFIG_FILE), cfg.to_text().as_bytes())
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        write_atomic(&self.join(name), text.as_bytes())
    }
}
