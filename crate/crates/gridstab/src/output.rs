//! File writers. Every float in CSV output is printed with 17 significant
//! digits so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Comma-separated rows with a header line, LF line endings.
pub struct CsvTable {
    header: Vec<String>,
    body: String,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), body: String::new() }
    }

    pub fn columns(&self) -> usize {
        self.header.len()
    }

    pub fn push_floats(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.header.len());
        let mut first = true;
        for v in row {
            if !first {
                self.body.push(',');
            }
            first = false;
            self.body.push_str(&fmt_float(*v));
        }
        self.body.push('\n');
    }

    pub fn push_fields(&mut self, row: &[String]) {
        debug_assert_eq!(row.len(), self.header.len());
        let _ = writeln!(self.body, "{}", row.join(","));
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        s.push_str(&self.body);
        s
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        write_text(path, &self.render())
    }
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

pub fn sha256_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_has_17_significant_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(-75.4), "-7.5400000000000006e1");
        assert_eq!(fmt_float(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn csv_layout() {
        let mut t = CsvTable::new(["a", "b"]);
        t.push_floats(&[1.0, -2.5]);
        t.push_fields(&["x".into(), "y".into()]);
        assert_eq!(t.render(), "a,b\n1.0000000000000000e0,-2.5000000000000000e0\nx,y\n");
    }

    #[test]
    fn digest_separates_parts() {
        assert_ne!(sha256_hex(&["ab", "c"]), sha256_hex(&["a", "bc"]));
        assert_eq!(sha256_hex(&["x"]).len(), 64);
    }
}
