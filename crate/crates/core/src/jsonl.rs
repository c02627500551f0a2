//! Line-oriented file helpers shared by the stages.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{parse_document, parse_instruction, to_canonical_line, DocumentRecord, InstructionRecord};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

/// Parses every non-blank line; errors carry `file:line`.
pub fn read_with<T>(path: &Path, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let text = read_text(path)?;
    parse_lines(&text, parse).map_err(|(n, e)| e.in_stage("read", format!("{}:{n}", path.display())))
}

pub fn parse_lines<T>(text: &str, parse: impl Fn(&str) -> Result<T>) -> std::result::Result<Vec<T>, (usize, Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse(l).map_err(|e| (n + 1, e)))
        .collect()
}

pub fn read_documents(path: &Path) -> Result<Vec<DocumentRecord>> {
    read_with(path, parse_document)
}

pub fn read_instructions(path: &Path) -> Result<Vec<InstructionRecord>> {
    read_with(path, parse_instruction)
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp~");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// One canonical line per value, each newline-terminated.
pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, values: impl IntoIterator<Item = &'a T>) -> Result<usize> {
    let mut out = String::new();
    let mut n = 0;
    for v in values {
        out.push_str(&to_canonical_line(v));
        out.push('\n');
        n += 1;
    }
    write_atomic(path, out.as_bytes())?;
    Ok(n)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut line = to_canonical_line(value);
    line.push('\n');
    write_atomic(path, line.as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Ok(sha256_hex(&bytes))
}

/// Non-blank lines.
pub fn count_lines(path: &Path) -> Result<usize> {
    Ok(read_text(path)?.lines().filter(|l| !l.trim().is_empty()).count())
}
