//! Volume and mask files: a JSON header pointing at a raw little-endian
//! payload stored x-fastest.
//!
//! ```json
//! {"dims":[64,64,32], "spacing_mm":[0.7,0.7,1.25], "dtype":"i16",
//!  "units":"HU", "data":"scan.raw"}
//! ```
//!
//! The `data` path is resolved relative to the header's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Grid, Mask3D, Units, Volume3D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    I16,
    U8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::I16 => 2,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: Dtype,
    pub units: Units,
    pub data: String,
}

impl VolumeHeader {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims, self.spacing_mm)
    }
}

pub fn read_header(path: &Path) -> Result<VolumeHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, format!("bad header: {e}")))
}

fn payload_path(header_path: &Path, header: &VolumeHeader) -> PathBuf {
    let base = header_path.parent().unwrap_or_else(|| Path::new("."));
    base.join(&header.data)
}

fn read_payload(header_path: &Path) -> Result<(VolumeHeader, Grid, Vec<f32>)> {
    let header = read_header(header_path)?;
    let grid = header
        .grid()
        .map_err(|e| Error::format(header_path, e.to_string()))?;
    let raw_path = payload_path(header_path, &header);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = grid.len() * header.dtype.width();
    if bytes.len() != expected {
        return Err(Error::format(
            &raw_path,
            format!(
                "payload has {} bytes, header {} ({:?}) needs {expected}",
                bytes.len(),
                grid,
                header.dtype
            ),
        ));
    }
    let values: Vec<f32> = match header.dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        Dtype::I16 => bytes
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32)
            .collect(),
        Dtype::U8 => bytes.iter().map(|&b| b as f32).collect(),
    };
    Ok((header, grid, values))
}

pub fn read_volume(header_path: &Path) -> Result<Volume3D> {
    let (header, grid, values) = read_payload(header_path)?;
    Volume3D::new(grid, values, header.units).map_err(|e| Error::format(header_path, e.to_string()))
}

/// Reads a mask; any nonzero voxel is a member.
pub fn read_mask(header_path: &Path) -> Result<Mask3D> {
    let (_, grid, values) = read_payload(header_path)?;
    Mask3D::new(grid, values.iter().map(|&v| v != 0.0).collect())
        .map_err(|e| Error::format(header_path, e.to_string()))
}

fn raw_name(header_path: &Path) -> String {
    let stem = header_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".to_owned());
    format!("{stem}.raw")
}

fn write_pair(header_path: &Path, header: &VolumeHeader, payload: &[u8]) -> Result<()> {
    let raw_path = payload_path(header_path, header);
    fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))?;
    let text = serde_json::to_string_pretty(header).expect("header serializes");
    fs::write(header_path, text + "\n").map_err(|e| Error::io(header_path, e))
}

/// Writes `v` as an f32 payload named after the header file (`foo.json` -> `foo.raw`).
pub fn write_volume(header_path: &Path, v: &Volume3D) -> Result<()> {
    let header = VolumeHeader {
        dims: v.dims(),
        spacing_mm: v.spacing_mm(),
        dtype: Dtype::F32,
        units: v.units(),
        data: raw_name(header_path),
    };
    let payload: Vec<u8> = v.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    write_pair(header_path, &header, &payload)
}

pub fn write_mask(header_path: &Path, m: &Mask3D) -> Result<()> {
    let g = m.grid();
    let header = VolumeHeader {
        dims: g.dims,
        spacing_mm: g.spacing_mm,
        dtype: Dtype::U8,
        units: Units::Unitless,
        data: raw_name(header_path),
    };
    let payload: Vec<u8> = m.data().iter().map(|&b| b as u8).collect();
    write_pair(header_path, &header, &payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i16_payload_converts_to_scalar() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("ct.json");
        fs::write(
            &header,
            r#"{"dims":[2,1,1],"spacing_mm":[0.7,0.7,1.25],"dtype":"i16","units":"HU","data":"ct.bin"}"#,
        )
        .unwrap();
        let payload: Vec<u8> = [-810i16, 40].iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.path().join("ct.bin"), payload).unwrap();
        let v = read_volume(&header).unwrap();
        assert_eq!(v.data(), &[-810.0, 40.0]);
        assert_eq!(v.units(), Units::Hu);
        assert_eq!(v.spacing_mm(), [0.7, 0.7, 1.25]);
    }

    #[test]
    fn volume_and_mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new([3, 2, 2], [1.0, 0.5, 2.0]).unwrap();
        let v = Volume3D::from_fn(g, Units::Unitless, |x, y, z| (x + 10 * y) as f32 - 0.25 * z as f32).unwrap();
        let path = dir.path().join("v.json");
        write_volume(&path, &v).unwrap();
        assert_eq!(read_volume(&path).unwrap(), v);

        let m = Mask3D::from_fn(g, |x, _, z| x == z);
        let mpath = dir.path().join("m.json");
        write_mask(&mpath, &m).unwrap();
        assert_eq!(read_mask(&mpath).unwrap(), m);
    }

    #[test]
    fn reports_offending_path() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("h.json");
        fs::write(
            &header,
            r#"{"dims":[2,2,2],"spacing_mm":[1,1,1],"dtype":"f32","units":"HU","data":"h.raw"}"#,
        )
        .unwrap();
        fs::write(dir.path().join("h.raw"), [0u8; 12]).unwrap();
        let err = read_volume(&header).unwrap_err().to_string();
        assert!(err.contains("h.raw") && err.contains("12 bytes"), "{err}");

        fs::write(&header, r#"{"dims":[2,2,2],"spacing_mm":[1,1,1],"dtype":"f64","units":"HU","data":"h.raw"}"#)
            .unwrap();
        let err = read_volume(&header).unwrap_err().to_string();
        assert!(err.contains("h.json") && err.contains("f64"), "{err}");

        assert!(matches!(read_volume(&dir.path().join("missing.json")), Err(Error::Io { .. })));
    }
}
