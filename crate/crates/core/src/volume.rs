//! Raw little-endian `f32` volumes with a JSON metadata sidecar.
//!
//! ```json
//! {"dims": [64, 64, 1], "spacing": [1.0, 1.0, 1.0],
//!  "fields": [{"name": "f", "file": "h.f.raw"}]}
//! ```
//! Field file paths are resolved relative to the sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, VoxelGrid};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub fields: Vec<FieldEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldEntry {
    pub name: String,
    pub file: String,
}

fn base_dir(meta_path: &Path) -> PathBuf {
    meta_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_volume(meta_path: &Path) -> Result<VoxelGrid> {
    let meta: VolumeMeta = serde_json::from_slice(&fs::read(meta_path)?)?;
    let dims = Dims::new(meta.dims[0], meta.dims[1], meta.dims[2]);
    let mut grid = VoxelGrid::new(dims, meta.spacing)?;
    let dir = base_dir(meta_path);
    let expected = dims.len() * 4;
    for entry in &meta.fields {
        let bytes = fs::read(dir.join(&entry.file))?;
        if bytes.len() != expected {
            return Err(Error::InvalidGrid(format!(
                "field `{}`: file `{}` has {} bytes, expected {} (= {}·{}·{}·4)",
                entry.name,
                entry.file,
                bytes.len(),
                expected,
                dims.nx,
                dims.ny,
                dims.nz
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        grid.add_field(entry.name.clone(), values)?;
    }
    Ok(grid)
}

/// Write `grid` as `<stem>.<field>.raw` files next to `meta_path`.
pub fn write_volume(grid: &VoxelGrid, meta_path: &Path) -> Result<VolumeMeta> {
    let dir = base_dir(meta_path);
    let stem = meta_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("volume")
        .to_string();
    let mut fields = Vec::new();
    for f in grid.fields() {
        let file = format!("{stem}.{}.raw", f.name);
        let mut bytes = Vec::with_capacity(f.values.len() * 4);
        for v in &f.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(&file), bytes)?;
        fields.push(FieldEntry { name: f.name.clone(), file });
    }
    let meta = VolumeMeta { dims: grid.dims().as_array(), spacing: grid.spacing(), fields };
    fs::write(meta_path, serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_field, SynthKind};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = synth_field(SynthKind::Spiral, Dims::new(9, 7, 3), 2).unwrap();
        let meta = dir.path().join("s.json");
        write_volume(&grid, &meta).unwrap();
        assert_eq!(read_volume(&meta).unwrap(), grid);
    }

    #[test]
    fn rejects_wrong_length() {
        let dir = tempfile::tempdir().unwrap();
        let meta = dir.path().join("m.json");
        fs::write(dir.path().join("a.raw"), [0u8; 12]).unwrap();
        fs::write(
            &meta,
            r#"{"dims":[2,2,1],"spacing":[1,1,1],"fields":[{"name":"a","file":"a.raw"}]}"#,
        )
        .unwrap();
        let err = read_volume(&meta).unwrap_err();
        assert!(err.to_string().contains("expected 16"), "{err}");
    }
}
