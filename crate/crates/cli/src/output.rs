use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::CliError;

pub const LOCK_FILE: &str = ".glemiml.lock";

/// An output directory held exclusively for the lifetime of the value.
pub struct OutputDir {
    root: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    pub fn acquire(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::output(root, e))?;
        let lock = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::Config(format!(
                    "{} is in use by another run (remove {} if it is stale)",
                    root.display(),
                    lock.display()
                )));
            }
            Err(e) => return Err(CliError::output(&lock, e)),
        }
        Ok(OutputDir {
            root: root.to_path_buf(),
            lock,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::output(parent, e))?;
        }
        fs::write(&path, text).map_err(|e| CliError::output(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        self.write_text(name, &to_json(value))
    }

    pub fn write_csv(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::output(parent, e))?;
        }
        let io = |e: csv::Error| CliError::output(&path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(row).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::output(&path, e))?;
        Ok(path)
    }

    pub fn write_matrix(&self, name: &str, m: ArrayView2<f64>) -> Result<PathBuf, CliError> {
        let header: Vec<String> = (0..m.ncols()).map(|j| format!("c{j}")).collect();
        let rows: Vec<Vec<String>> = m.outer_iter().map(|r| r.iter().map(f64::to_string).collect()).collect();
        self.write_csv(name, &header, &rows)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let held = OutputDir::acquire(dir.path()).unwrap();
        assert!(matches!(OutputDir::acquire(dir.path()), Err(CliError::Config(_))));
        drop(held);
        assert!(!dir.path().join(LOCK_FILE).exists());
        OutputDir::acquire(dir.path()).unwrap();
    }

    #[test]
    fn csv_output() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::acquire(dir.path()).unwrap();
        let p = out.write_matrix("m.csv", ndarray::array![[1.0, 0.5], [0.0, -2.0]].view()).unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "c0,c1\n1,0.5\n0,-2\n");
    }
}
