//! Output directory bookkeeping. Everything written through [`Outputs`] is
//! removed again unless the run commits, so a failed run leaves no partial
//! results behind.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};

pub struct Outputs {
    root: PathBuf,
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

fn io_err(path: &Path, e: std::io::Error) -> anyhow::Error {
    anyhow!("write: {}: {e}", path.display())
}

impl Outputs {
    pub fn create(root: &Path) -> Result<Self> {
        let mut out = Self {
            root: root.to_path_buf(),
            files: Vec::new(),
            dirs: Vec::new(),
            committed: false,
        };
        out.mkdirs(root)?;
        Ok(out)
    }

    fn mkdirs(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        for d in missing.into_iter().rev() {
            std::fs::create_dir(&d).map_err(|e| io_err(&d, e))?;
            self.dirs.push(d);
        }
        Ok(())
    }

    /// Path of `name` under the root, tracked for cleanup.
    pub fn path(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.files.push(p.clone());
        p
    }

    pub fn dir(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        self.mkdirs(&p)?;
        Ok(p)
    }

    pub fn write(&mut self, name: &str, body: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, body).map_err(|e| io_err(&p, e))
    }

    /// Runs `f`, tracking every file it adds to `dir`.
    pub fn capture<T, E>(&mut self, dir: &Path, f: impl FnOnce() -> Result<T, E>) -> Result<T, E> {
        let list = |d: &Path| -> BTreeSet<PathBuf> {
            std::fs::read_dir(d)
                .map(|it| it.filter_map(|e| e.ok()).map(|e| e.path()).collect())
                .unwrap_or_default()
        };
        let before = list(dir);
        let r = f();
        self.files.extend(list(dir).difference(&before).cloned());
        r
    }

    pub fn commit(&mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = std::fs::remove_dir(d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_outputs_are_removed() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("a/b");
        {
            let mut out = Outputs::create(&root).unwrap();
            out.write("x.txt", "1").unwrap();
            let d = out.dir("sub/").unwrap();
            out.capture(&d, || std::fs::write(d.join("y.txt"), "2")).unwrap();
        }
        assert!(!tmp.path().join("a").exists());
        let mut out = Outputs::create(&root).unwrap();
        out.write("x.txt", "1").unwrap();
        out.commit();
        drop(out);
        assert!(root.join("x.txt").is_file());
    }
}
