//! JSON-Lines and small-file helpers shared by the stage outputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn to_string<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for row in rows {
        // serialization of plain data structs cannot fail
        out.push_str(&serde_json::to_string(row).expect("serializable row"));
        out.push('\n');
    }
    out
}

pub fn write<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_text(path, &to_string(rows))
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
