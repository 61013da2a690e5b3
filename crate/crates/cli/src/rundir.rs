//! Self-describing run directories with atomic writes and a manifest.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::RunConfig;
use crate::{Result, RunnerError};

/// A run directory under construction. Files are recorded as they are
/// written; the manifest is emitted on [`RunDir::finish`].
pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
    timings: Vec<(String, u128)>,
    started: Instant,
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact_version: &'static str,
    experiment: String,
    config: &'a RunConfig,
    files: &'a [String],
    timings_ms: Vec<(String, u128)>,
    total_ms: u128,
}

fn timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    // Date math on the UNIX epoch, civil-from-days.
    let days = secs / 86_400;
    let rem = secs % 86_400;
    let (h, m, s) = (rem / 3600, (rem % 3600) / 60, rem % 60);
    let mut era_days = days as i64 + 719_468;
    let era = era_days.div_euclid(146_097);
    era_days = era_days.rem_euclid(146_097);
    let yoe = (era_days - era_days / 1460 + era_days / 36_524 - era_days / 146_096) / 365;
    let year = yoe + era * 400;
    let doy = era_days - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = if month <= 2 { year + 1 } else { year };
    format!("{year:04}{month:02}{day:02}T{h:02}{m:02}{s:02}")
}

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

impl RunDir {
    /// Create `<output_dir>/<timestamp>-<experiment>/` (with a numeric
    /// suffix if the plain name already exists) and snapshot the config.
    pub fn create(config: &RunConfig) -> Result<Self> {
        Self::create_named(config, config.experiment.name())
    }

    /// As [`RunDir::create`] with an explicit directory label.
    pub fn create_named(config: &RunConfig, label: &str) -> Result<Self> {
        let base = config
            .output_dir
            .join(format!("{}-{label}", timestamp()));
        let mut root = base.clone();
        let mut suffix = 1;
        while root.exists() {
            suffix += 1;
            root = PathBuf::from(format!("{}-{suffix}", base.display()));
        }
        std::fs::create_dir_all(root.join("checkpoints"))?;
        std::fs::create_dir_all(root.join("reports"))?;
        let mut dir = Self {
            root,
            files: Vec::new(),
            timings: Vec::new(),
            started: Instant::now(),
        };
        dir.write("config.json", config.to_json().as_bytes())?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Atomically write a file under the run root and record it.
    pub fn write(&mut self, rel: &str, contents: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        write_atomic(&path, contents)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    /// Record a named phase duration.
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self)?;
        self.timings
            .push((name.to_string(), start.elapsed().as_millis()));
        Ok(out)
    }

    /// Emit the manifest and verify every recorded file exists non-empty.
    pub fn finish(mut self, config: &RunConfig) -> Result<PathBuf> {
        let manifest = Manifest {
            artifact_version: env!("CARGO_PKG_VERSION"),
            experiment: config.experiment.name().to_string(),
            config,
            files: &self.files,
            timings_ms: self.timings.clone(),
            total_ms: self.started.elapsed().as_millis(),
        };
        let text =
            serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
        write_atomic(&self.root.join("manifest.json"), text.as_bytes())?;
        self.files.push("manifest.json".to_string());
        for rel in &self.files {
            let path = self.root.join(rel);
            let meta = std::fs::metadata(&path).map_err(|_| {
                RunnerError::Invariant(format!("manifest file missing: {}", path.display()))
            })?;
            if meta.len() == 0 {
                return Err(RunnerError::Invariant(format!(
                    "manifest file empty: {}",
                    path.display()
                )));
            }
        }
        Ok(self.root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dir_layout_and_manifest() {
        let tmp = std::env::temp_dir().join(format!("prefcal-runs-{}", std::process::id()));
        let config = RunConfig {
            output_dir: tmp.clone(),
            ..RunConfig::default()
        };
        let mut dir = RunDir::create(&config).unwrap();
        dir.write("reports/table.csv", b"a,b\n1,2\n").unwrap();
        let root = dir.finish(&config).unwrap();
        assert!(root.join("config.json").is_file());
        assert!(root.join("manifest.json").is_file());
        assert!(root.join("reports/table.csv").is_file());
        assert!(root.join("checkpoints").is_dir());
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(root.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["experiment"], "drift");
        std::fs::remove_dir_all(&tmp).ok();
    }

    #[test]
    fn timestamps_are_plausible() {
        let t = timestamp();
        assert_eq!(t.len(), 15);
        assert!(t.starts_with("20"));
    }
}
