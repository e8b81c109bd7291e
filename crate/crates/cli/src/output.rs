//! Atomic artifact writes and the run sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::CliError;

pub struct Output {
    pub dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Output, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let io = |e: std::io::Error| CliError::usage(format!("{}: {e}", path.display()));
        let mut builder = tempfile::Builder::new();
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            builder.permissions(std::fs::Permissions::from_mode(0o644));
        }
        let mut tmp = builder.tempfile_in(&self.dir).map_err(io)?;
        tmp.write_all(bytes).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Timestamps and the artifact list go to a sidecar so that reports
    /// themselves stay byte-identical across runs.
    pub fn sidecar(&mut self, command: &str, started: SystemTime, exit: i32) -> Result<(), CliError> {
        let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let finished = SystemTime::now();
        let doc = serde_json::json!({
            "command": command,
            "started_unix": secs(started),
            "finished_unix": secs(finished),
            "elapsed_seconds": secs(finished) - secs(started),
            "exit_code": exit,
            "artifacts": self.written,
        });
        self.json("timestamps.json", &doc)?;
        Ok(())
    }
}
