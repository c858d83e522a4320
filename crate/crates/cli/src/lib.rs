//! Command implementations behind the `modpipe` and `mark` binaries.

mod error;
pub mod issuer;
pub mod mark;
pub mod modpipe;

use std::path::Path;

use serde::de::DeserializeOwned;

pub use error::CliError;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(CliError::io(path))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(CliError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|source| CliError::Json {
        path: path.to_owned(),
        source,
    })
}

/// Writes a file, creating missing parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    std::fs::write(path, bytes).map_err(CliError::io(path))
}

pub fn system_now() -> i64 {
    (modpipe_service::system_clock())()
}
