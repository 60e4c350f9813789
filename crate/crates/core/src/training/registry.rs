use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::TrainedModelRecord;
use crate::error::{Error, Result};

/// Append-only JSON-lines file of finished runs, guarded by file locks.
#[derive(Debug, Clone)]
pub struct Registry {
    path: PathBuf,
}

impl Registry {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record as a single line under an exclusive lock.
    pub fn append(&self, record: &TrainedModelRecord) -> Result<()> {
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        file.lock().map_err(|e| Error::io(&self.path, e))?;
        let written = file.write_all(line.as_bytes()).and_then(|_| file.flush());
        file.unlock().map_err(|e| Error::io(&self.path, e))?;
        written.map_err(|e| Error::io(&self.path, e))
    }

    /// All records, in first-appearance order; a run appended twice keeps its latest record.
    /// A missing file is an empty registry.
    pub fn load(&self) -> Result<Vec<TrainedModelRecord>> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        file.lock_shared().map_err(|e| Error::io(&self.path, e))?;
        let text = std::io::read_to_string(&file);
        file.unlock().map_err(|e| Error::io(&self.path, e))?;
        let text = text.map_err(|e| Error::io(&self.path, e))?;

        let mut records: Vec<TrainedModelRecord> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: TrainedModelRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: self.path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            match index.get(&record.run_id) {
                Some(&slot) => records[slot] = record,
                None => {
                    index.insert(record.run_id.clone(), records.len());
                    records.push(record);
                }
            }
        }
        Ok(records)
    }

    pub fn contains(&self, run_id: &str) -> Result<bool> {
        Ok(self.load()?.iter().any(|r| r.run_id == run_id))
    }
}
