//! Minimal CSV handling: comma-separated, header row, LF endings, no
//! quoting. Identifiers containing separators are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.text, "{}", fields.join(","));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.text).with_context(|| format!("cannot write {}", path.display()))
    }
}

pub fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', '"', '\n', '\r']) {
        bail!("image id `{id}` cannot be written to CSV");
    }
    Ok(())
}

/// Reads `image_id` and the first present column of `value_columns`.
pub fn read_values(path: &Path, value_columns: &[&str]) -> Result<BTreeMap<String, f64>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .with_context(|| format!("{} is empty", path.display()))?
        .split(',')
        .map(str::trim)
        .collect();
    let id_col = header
        .iter()
        .position(|h| *h == "image_id")
        .with_context(|| format!("{} has no image_id column", path.display()))?;
    let val_col = value_columns
        .iter()
        .find_map(|c| header.iter().position(|h| h == c))
        .with_context(|| {
            format!(
                "{} has none of the columns {value_columns:?}",
                path.display()
            )
        })?;
    let mut out = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let ctx = || format!("{} line {}", path.display(), i + 2);
        let id = fields.get(id_col).with_context(ctx)?.trim();
        let raw = fields.get(val_col).with_context(ctx)?.trim();
        let v: f64 = raw
            .parse()
            .with_context(|| format!("{}: bad number `{raw}`", ctx()))?;
        if !v.is_finite() {
            bail!("{}: value is not finite", ctx());
        }
        if out.insert(id.to_string(), v).is_some() {
            bail!("{}: duplicate image_id `{id}`", ctx());
        }
    }
    Ok(out)
}

/// Images in `dir` with extension png, jpg or jpeg, keyed by file stem and
/// sorted by it.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?;
    let mut out = BTreeMap::new();
    for e in entries {
        let path = e?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if !path.is_file() || !matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
            continue;
        }
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        check_id(&id)?;
        if let Some(prev) = out.insert(id.clone(), path.clone()) {
            bail!(
                "image id `{id}` is used by both {} and {}",
                prev.display(),
                path.display()
            );
        }
    }
    Ok(out.into_iter().collect())
}
