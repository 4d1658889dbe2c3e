//! Tracks files and directories a command creates so a failed run can
//! remove its partial outputs.

use std::fs;
use std::path::{Path, PathBuf};

use ssanet_core::Error;

#[derive(Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    /// Creates `dir` and any missing parents, remembering the new ones.
    pub fn dir(&mut self, dir: &Path) -> Result<(), Error> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(p) = cur {
            if p.as_os_str().is_empty() || p.exists() {
                break;
            }
            missing.push(p.to_path_buf());
            cur = p.parent();
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        missing.reverse();
        self.dirs.extend(missing);
        Ok(())
    }

    /// Registers `path` as an output and returns it.
    pub fn file(&mut self, path: PathBuf) -> PathBuf {
        self.files.push(path.clone());
        path
    }

    pub fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), Error> {
        let path = self.file(path);
        fs::write(&path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in self.files.iter().rev() {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir_all(d);
        }
    }
}
