//! Small file helpers shared by the format modules.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{AppError, AppResult};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| AppError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> AppResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| AppError::format(path, e))?;
    s.push('\n');
    atomic_write(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let s = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| AppError::format(path, e))
}

/// One JSON document per line; blank lines are skipped.
pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> AppResult<Vec<T>> {
    let s = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    s.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| AppError::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> AppResult<()> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).map_err(|e| AppError::format(path, e))?);
        s.push('\n');
    }
    atomic_write(path, s.as_bytes())
}
