use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use nonlocal_core::evolve::Trajectory;
use nonlocal_core::MeasureSpace;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Wrap a result in the versioned envelope shared by every subcommand.
pub fn envelope(command: &str, seed: u64, result: impl Serialize) -> Result<Value, CliError> {
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": seed,
        "result": serde_json::to_value(result)?,
    }))
}

pub struct OutputDir {
    dir: PathBuf,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json(&self, name: &str, value: &Value) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        fs::write(&p, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(p)
    }

    pub fn profile(&self, name: &str, space: &MeasureSpace, values: &DVector<f64>) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        write_profile(&p, space, values)?;
        Ok(p)
    }

    pub fn trajectory(&self, name: &str, tr: &Trajectory) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(&p)?;
        let n = tr.states.first().map_or(0, |s| s.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("node_{i}")));
        w.write_record(&header)?;
        for (t, u) in tr.times.iter().zip(&tr.states) {
            let mut row = vec![fmt(*t)];
            row.extend(u.iter().map(|v| fmt(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(p)
    }

    pub fn table(&self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.iter().map(|v| fmt(*v)))?;
        }
        w.flush()?;
        Ok(p)
    }
}

/// `node,x,value` rows; `x` is the node position (or the vertex index on graphs).
pub fn write_profile(path: &Path, space: &MeasureSpace, values: &DVector<f64>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node", "x", "value"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), fmt(space.position(i)), fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that round-trips.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}
