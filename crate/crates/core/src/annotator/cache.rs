//! Annotation cache keyed by `(model, prompt_hash)`, optionally backed by an
//! append-only JSONL file that doubles as the completion-ordered output log.

use super::Annotation;
use crate::jsonl::{self, JsonlError};
use parking_lot::{Mutex, RwLock};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

#[derive(Default)]
pub struct AnnotationCache {
    entries: RwLock<HashMap<(String, String), Annotation>>,
    log: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl AnnotationCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing entries from `path` (if present) and appends new ones
    /// to it. Later lines win on key collisions.
    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        let mut entries = HashMap::new();
        if path.exists() {
            jsonl::for_each(path, |_, a: Annotation| {
                entries.insert((a.model.clone(), a.prompt_hash.clone()), a);
                Ok(())
            })?;
        }
        let io_err = |source| JsonlError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        Ok(AnnotationCache {
            entries: RwLock::new(entries),
            log: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, model: &str, prompt_hash: &str) -> Option<Annotation> {
        self.entries
            .read()
            .get(&(model.to_string(), prompt_hash.to_string()))
            .cloned()
    }

    /// Stores `a` and appends it to the backing file. Last write wins.
    pub fn insert(&self, a: Annotation) {
        if let Some(log) = &self.log {
            if let Err(e) = append(&mut log.lock(), &a) {
                log::error!("cache append failed for {}: {e}", a.sent_id);
            }
        }
        self.entries
            .write()
            .insert((a.model.clone(), a.prompt_hash.clone()), a);
    }
}

fn append(file: &mut File, a: &Annotation) -> io::Result<()> {
    let mut line = serde_json::to_vec(a)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.flush()
}
