//! Input helpers: configuration files, manifests and numeric samples.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use microseg::imagecore::{load_labelmap, load_manifest, ClassTaxonomy, LabelMap, ManifestRecord};
use serde::de::DeserializeOwned;

/// Parses a JSON configuration, or returns the default without a path.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

pub fn taxonomy(name: &str) -> Result<ClassTaxonomy> {
    ClassTaxonomy::by_name(name).with_context(|| format!("--taxonomy {name}"))
}

pub fn manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let records = load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))?;
    if records.is_empty() {
        bail!("manifest {} lists no images", path.display());
    }
    Ok(records)
}

pub fn labels(record: &ManifestRecord, taxonomy: &ClassTaxonomy) -> Result<LabelMap> {
    load_labelmap(&record.label_path, taxonomy)
        .with_context(|| format!("loading label map {}", record.label_path.display()))
}

/// File stem used to name per-image outputs.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Distinct output stems for a list of inputs; repeats get an index suffix.
pub fn unique_stems(paths: &[&PathBuf]) -> Vec<String> {
    let mut seen = std::collections::HashMap::new();
    paths
        .iter()
        .map(|p| {
            let s = stem(p);
            let n = seen.entry(s.clone()).or_insert(0usize);
            *n += 1;
            if *n == 1 {
                s
            } else {
                format!("{s}_{}", *n - 1)
            }
        })
        .collect()
}

/// Reads numbers from a file holding one value per line or a CSV table.
/// With a header, `column` picks the field (default: the first).
pub fn read_sample(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    let mut index = 0usize;
    if let Some((_, first)) = lines.peek() {
        let fields: Vec<&str> = first.split(',').map(str::trim).collect();
        let numeric = fields.iter().all(|f| f.parse::<f64>().is_ok());
        if !numeric {
            index = match column {
                Some(c) => fields
                    .iter()
                    .position(|f| *f == c)
                    .with_context(|| format!("{} has no column `{c}`", path.display()))?,
                None => 0,
            };
            lines.next();
        } else if column.is_some() {
            bail!("{} has no header, so --column cannot be used", path.display());
        }
    }
    let mut values = Vec::new();
    for (n, line) in lines {
        let field = line
            .split(',')
            .nth(index)
            .with_context(|| format!("{}:{}: missing column {index}", path.display(), n + 1))?;
        let v: f64 = field
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: `{}` is not a number", path.display(), n + 1, field.trim()))?;
        values.push(v);
    }
    if values.is_empty() {
        bail!("{} holds no values", path.display());
    }
    Ok(values)
}
