//! Atomic file output and input lookup.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use forgetmi::datagen::load_jsonl;
use forgetmi::model::{load_checkpoint, write_checkpoint};
use forgetmi::{ForgetSplit, Model, Sample};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const PROFILES_FILE: &str = "profiles.json";
pub const ORIGINAL_CKPT: &str = "og.ckpt";
pub const TRAIN_TRACE_FILE: &str = "train_trace.csv";
pub const SPLIT_FILE: &str = "forget_split.json";
pub const UNLEARNED_CKPT: &str = "ul.ckpt";
pub const LOSSES_FILE: &str = "losses.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const REPORT_FILE: &str = "report.csv";

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::write(path, e));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(forgetmi::Error::from)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_model(path: &Path, model: &Model) -> CliResult<()> {
    let mut bytes = Vec::new();
    write_checkpoint(model, &mut bytes)?;
    write_atomic(path, &bytes)
}

fn require(path: &Path) -> CliResult<PathBuf> {
    if path.is_file() {
        Ok(path.to_path_buf())
    } else {
        Err(CliError::missing(path, "file not found"))
    }
}

pub fn read_samples(path: &Path) -> CliResult<Vec<Sample>> {
    let path = require(path)?;
    Ok(load_jsonl(&path)?)
}

pub fn read_model(path: &Path) -> CliResult<Model> {
    let path = require(path)?;
    Ok(load_checkpoint(&path)?)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let path = require(path)?;
    let text = fs::read_to_string(&path).map_err(|e| CliError::missing(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::missing(&path, format!("malformed JSON: {e}")))
}

pub fn read_split(path: &Path) -> CliResult<ForgetSplit> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_creates_parents_and_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn missing_inputs_are_reported_with_their_path() {
        let err = read_samples(Path::new("/nonexistent/train.jsonl")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("/nonexistent/train.jsonl"));
    }
}
