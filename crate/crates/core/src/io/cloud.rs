use std::fs;
use std::path::Path;

use super::IoError;
use crate::model::{Point, PointCloud};

/// Reads a KITTI `.bin` scan: little-endian `f32` quadruples `(x, y, z, r)`.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    parse_point_cloud(&bytes, path)
}

pub fn parse_point_cloud(bytes: &[u8], path: &Path) -> Result<PointCloud, IoError> {
    if bytes.len() % 16 != 0 {
        return Err(IoError::TruncatedFile { path: path.to_path_buf(), len: bytes.len() });
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (k, chunk) in bytes.chunks_exact(16).enumerate() {
        let mut v = [0f64; 4];
        for (j, f) in chunk.chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes(f.try_into().expect("4-byte chunk"));
            if !x.is_finite() {
                return Err(IoError::NonFiniteValue { path: path.to_path_buf(), offset: k * 16 + j * 4 });
            }
            v[j] = x as f64;
        }
        points.push(Point { x: v[0], y: v[1], z: v[2], reflectance: v[3] });
    }
    let frame_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(PointCloud::new(frame_id, points))
}

/// Coordinates are narrowed to `f32`.
pub fn encode_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.reflectance] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    super::write_file(path, &encode_point_cloud(cloud))
}
