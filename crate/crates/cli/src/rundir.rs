//! Append-only, timestamped run directories.

use std::fs;
use std::path::{Path, PathBuf};

use gender_audit::{Error, Result};

use crate::config::RunConfig;

pub const OUT_ENV: &str = "GENDER_AUDIT_OUT";
pub const CONFIG_COPY: &str = "config.toml";

/// Creates `<root>/<command>-<timestamp>` (with a numeric suffix if that
/// already exists) and copies the resolved config into it.
pub fn create(root: &Path, command: &str, cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S%.3f");
    let base = format!("{command}-{stamp}");
    let mut dir = root.join(&base);
    let mut n = 1;
    loop {
        match fs::create_dir(&dir) {
            Ok(()) => break,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                dir = root.join(format!("{base}-{n}"));
                n += 1;
            }
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    let cfg_path = dir.join(CONFIG_COPY);
    fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(dir)
}
