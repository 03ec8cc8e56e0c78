use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{Result, RunError};

pub const BUILD_ID: &str = env!("FTN_BUILD_ID");
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// An output directory for one run.
#[derive(Debug, Clone)]
pub struct ReportDir {
    pub path: PathBuf,
}

impl ReportDir {
    /// Create the directory and record the resolved config in it.
    pub fn create(cfg: &ExperimentConfig) -> Result<Self> {
        let path = cfg.out_dir.clone();
        std::fs::create_dir_all(&path).map_err(|e| RunError::io(format!("creating {}", path.display()), e))?;
        let dir = ReportDir { path };
        dir.write_json("config.json", cfg)?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| RunError::Other(e.to_string()))?;
        let p = self.file(name);
        std::fs::write(&p, text + "\n").map_err(|e| RunError::io(format!("writing {}", p.display()), e))
    }

    /// `summary.json`: the run kind, seed, build id and `results`.
    pub fn write_summary(&self, cfg: &ExperimentConfig, results: Value) -> Result<()> {
        let summary = serde_json::json!({
            "kind": cfg.kind.name(),
            "seed": cfg.seed,
            "build_id": BUILD_ID,
            "csv_schema_version": CSV_SCHEMA_VERSION,
            "results": results,
        });
        self.write_json("summary.json", &summary)
    }
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
}
