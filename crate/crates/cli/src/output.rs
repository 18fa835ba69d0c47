use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

const LOCK_NAME: &str = ".cpa-parallab.lock";

/// Exclusive use of an output directory for the lifetime of the value.
pub struct OutputDir {
    dir: PathBuf,
    lock: PathBuf,
    force: bool,
}

impl OutputDir {
    pub fn acquire(dir: &Path, force: bool) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let lock = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "output directory {} is in use by another process (delete {} if it is stale)",
                dir.display(),
                lock.display()
            ),
            Err(e) => return Err(e).with_context(|| format!("cannot create {}", lock.display())),
        }
        Ok(Self {
            dir: dir.to_owned(),
            lock,
            force,
        })
    }

    /// Path of a new output file; existing files are only replaced with
    /// `--force`.
    pub fn file(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if p.exists() && !self.force {
            bail!("{} already exists; pass --force to overwrite", p.display());
        }
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
        }
        Ok(p)
    }

    pub fn csv(&self, name: &str) -> Result<(PathBuf, csv::Writer<File>)> {
        let p = self.file(name)?;
        let w = csv::Writer::from_path(&p).with_context(|| format!("cannot write {}", p.display()))?;
        Ok((p, w))
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.file(name)?;
        fs::write(&p, contents).with_context(|| format!("cannot write {}", p.display()))?;
        Ok(p)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Plain decimal formatting shared by every table (shortest round-trip form).
pub fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), num)
}

pub fn tuple(ws: &[i32]) -> String {
    ws.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}
