//! Line-oriented UTF-8 text files shared by every on-disk format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Non-empty lines with their 1-based line numbers. CR characters are
/// rejected since every format is LF-terminated.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if line.contains('\r') {
            return Err(Error::parse(display(path), i + 1, "CR line ending"));
        }
        if !line.is_empty() {
            out.push((i + 1, line.to_string()));
        }
    }
    Ok(out)
}

/// Splits on tabs and insists on exactly `n` fields.
pub(crate) fn fields<'a>(line: &'a str, n: usize, path: &Path, lineno: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != n {
        return Err(Error::parse(display(path), lineno, format!("expected {n} tab-separated fields, found {}", f.len())));
    }
    Ok(f)
}

pub(crate) fn tokens(s: &str, path: &Path, lineno: usize) -> Result<Vec<String>> {
    let t: Vec<String> = s.split(' ').map(str::to_string).collect();
    if t.iter().any(String::is_empty) {
        return Err(Error::parse(display(path), lineno, "empty token (tokens are single-space separated)"));
    }
    Ok(t)
}

pub(crate) fn parse_usize(s: &str, what: &str, path: &Path, lineno: usize) -> Result<usize> {
    s.parse().map_err(|_| Error::parse(display(path), lineno, format!("bad {what} `{s}`")))
}

pub(crate) fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

pub(crate) fn display(path: &Path) -> String {
    path.display().to_string()
}
