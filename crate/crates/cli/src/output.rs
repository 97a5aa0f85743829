use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

/// An output directory that refuses to clobber files unless forced.
pub struct OutDir {
    dir: PathBuf,
    force: bool,
}

impl OutDir {
    /// Creates the directory. Without `force`, fails if any of `files`
    /// already exists, before anything is written.
    pub fn prepare(dir: &Path, force: bool, files: &[&str]) -> Result<Self> {
        if !force {
            let existing: Vec<String> = files
                .iter()
                .filter(|f| dir.join(f).exists())
                .map(|f| dir.join(f).display().to_string())
                .collect();
            if !existing.is_empty() {
                bail!("refusing to overwrite {} (pass --force)", existing.join(", "));
            }
        }
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            force,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn sub(&self, name: &str, files: &[&str]) -> Result<OutDir> {
        OutDir::prepare(&self.dir.join(name), self.force, files)
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(BufWriter::new(f))
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        use std::io::Write;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
