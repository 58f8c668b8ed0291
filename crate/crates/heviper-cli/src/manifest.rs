//! Dataset manifest: one CSV row per image with its height and local
//! east/north position in meters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: u64,
    pub path: String,
    pub height_m: f32,
    pub east_m: f32,
    pub north_m: f32,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    base_dir: PathBuf,
}

impl Manifest {
    /// Reads and validates a manifest. Relative image paths resolve against
    /// the manifest's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut rows = Vec::new();
        for row in reader.deserialize::<ManifestRow>() {
            rows.push(row.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?);
        }
        let manifest = Manifest {
            rows,
            base_dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        };
        manifest.validate(path)?;
        Ok(manifest)
    }

    fn validate(&self, path: &Path) -> CliResult<()> {
        let mut ids: Vec<u64> = self.rows.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        let before = ids.len();
        ids.dedup();
        if ids.len() != before {
            return Err(CliError::Data(format!(
                "{}: duplicate ids in manifest",
                path.display()
            )));
        }
        for r in &self.rows {
            if r.height_m.is_nan() || r.height_m <= 0.0 {
                return Err(CliError::Data(format!(
                    "{}: row {} has non-positive height {}",
                    path.display(),
                    r.id,
                    r.height_m
                )));
            }
            if !r.east_m.is_finite() || !r.north_m.is_finite() {
                return Err(CliError::Data(format!(
                    "{}: row {} has non-finite position",
                    path.display(),
                    r.id
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn image_path(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Writes rows as a manifest CSV (header + one line per row).
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}
