//! Append-only per-record progress for resumable stages.
//!
//! The file starts with a header naming the stage key; each further line is
//! one finished item. A header for a different key, or a torn last line,
//! discards what cannot be trusted.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{files, Stage};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    key: String,
}

#[derive(Serialize, Deserialize)]
struct Entry<R> {
    id: String,
    value: R,
}

fn path(run_dir: &Path, stage: Stage) -> PathBuf {
    run_dir.join(files::PROGRESS).join(format!("{stage}.jsonl"))
}

pub(super) fn discard(run_dir: &Path, stage: Stage) {
    let _ = fs::remove_file(path(run_dir, stage));
}

/// Completed items under `key`; rewrites the file to its trusted prefix.
fn load<R: DeserializeOwned>(file: &Path, key: &str) -> Result<HashMap<String, R>> {
    let mut done = HashMap::new();
    let Ok(text) = fs::read_to_string(file) else {
        return start(file, key).map(|_| done);
    };
    let mut lines = text.split_inclusive('\n');
    match lines.next().map(|l| serde_json::from_str::<Header>(l.trim_end())) {
        Some(Ok(h)) if h.key == key && text.starts_with('{') => {}
        _ => return start(file, key).map(|_| done),
    }
    let mut trusted = text.split_inclusive('\n').next().unwrap().len();
    for line in lines {
        if !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str::<Entry<R>>(line.trim_end()) {
            Ok(e) => {
                done.insert(e.id, e.value);
                trusted += line.len();
            }
            Err(_) => break,
        }
    }
    if trusted < text.len() {
        log::warn!("dropping a torn progress tail in {}", file.display());
        fs::write(file, &text.as_bytes()[..trusted]).map_err(|e| Error::io(file, e))?;
    }
    Ok(done)
}

fn start(file: &Path, key: &str) -> Result<()> {
    if let Some(dir) = file.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let header = serde_json::to_string(&Header { key: key.to_string() }).expect("header serializes");
    fs::write(file, format!("{header}\n")).map_err(|e| Error::io(file, e))
}

/// Applies `work` to every item not already finished under `key`, in
/// parallel batches, appending each finished item before the next batch.
/// Returns results in item order. On error, finished items of the failing
/// batch are still recorded.
pub(super) fn run<T, R, I, W>(
    run_dir: &Path,
    stage: Stage,
    key: &str,
    items: &[T],
    batch: usize,
    id: I,
    work: W,
) -> Result<Vec<R>>
where
    T: Sync,
    R: Serialize + DeserializeOwned + Send,
    I: Fn(&T) -> String + Sync,
    W: Fn(&T) -> Result<R> + Sync,
{
    let file = path(run_dir, stage);
    let mut done: HashMap<String, R> = load(&file, key)?;
    if !done.is_empty() {
        log::info!("{stage}: resuming with {}/{} finished", done.len(), items.len());
    }
    let pending: Vec<&T> = items.iter().filter(|t| !done.contains_key(&id(t))).collect();
    for group in pending.chunks(batch.max(1)) {
        let results: Vec<Result<R>> = group.par_iter().map(|t| work(t)).collect();
        let mut out = OpenOptions::new().append(true).open(&file).map_err(|e| Error::io(&file, e))?;
        let mut first_err = None;
        let mut buf = String::new();
        for (t, r) in group.iter().zip(results) {
            match r {
                Ok(value) => {
                    let entry = Entry { id: id(t), value };
                    buf.push_str(&serde_json::to_string(&entry).expect("progress entry serializes"));
                    buf.push('\n');
                    done.insert(entry.id, entry.value);
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        out.write_all(buf.as_bytes()).map_err(|e| Error::io(&file, e))?;
        out.flush().map_err(|e| Error::io(&file, e))?;
        if let Some(e) = first_err {
            return Err(e);
        }
        log::debug!("{stage}: {}/{}", done.len(), items.len());
    }
    items
        .iter()
        .map(|t| done.remove(&id(t)).ok_or_else(|| Error::Precondition(format!("duplicate item id `{}`", id(t)))))
        .collect()
}
