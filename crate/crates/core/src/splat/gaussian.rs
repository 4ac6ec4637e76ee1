use std::path::Path;

use crate::{Error, Result};

/// Number of scalars describing one Gaussian.
pub const GAUSSIAN_PARAMS: usize = 14;

/// Renderable anisotropic 3D Gaussian. Means are in level-N voxel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian3D {
    pub mean: [f64; 3],
    pub scales: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub quat: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Gaussian3D {
    pub fn isotropic(mean: [f64; 3], scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        Gaussian3D {
            mean,
            scales: [scale; 3],
            quat: [1.0, 0.0, 0.0, 0.0],
            opacity,
            color,
        }
    }

    /// Flattened as `mean, scales, quat, opacity, color`.
    pub fn to_array(&self) -> [f64; GAUSSIAN_PARAMS] {
        let mut a = [0.0; GAUSSIAN_PARAMS];
        a[0..3].copy_from_slice(&self.mean);
        a[3..6].copy_from_slice(&self.scales);
        a[6..10].copy_from_slice(&self.quat);
        a[10] = self.opacity;
        a[11..14].copy_from_slice(&self.color);
        a
    }

    pub fn from_slice(a: &[f64]) -> Self {
        Gaussian3D {
            mean: [a[0], a[1], a[2]],
            scales: [a[3], a[4], a[5]],
            quat: [a[6], a[7], a[8], a[9]],
            opacity: a[10],
            color: [a[11], a[12], a[13]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Binary dump: little-endian `u32` count followed by 14 `f32` per Gaussian.
pub fn encode_gaussians(gs: &[Gaussian3D]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + gs.len() * GAUSSIAN_PARAMS * 4);
    out.extend_from_slice(&(gs.len() as u32).to_le_bytes());
    for g in gs {
        for v in g.to_array() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_gaussians(bytes: &[u8]) -> Result<Vec<Gaussian3D>> {
    if bytes.len() < 4 {
        return Err(Error::Format("gaussian dump shorter than its count field".into()));
    }
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let want = 4 + n * GAUSSIAN_PARAMS * 4;
    if bytes.len() != want {
        return Err(Error::Format(format!(
            "gaussian dump holds {} bytes, {n} gaussians need {want}",
            bytes.len()
        )));
    }
    Ok(bytes[4..]
        .chunks_exact(GAUSSIAN_PARAMS * 4)
        .map(|c| {
            let vals: Vec<f64> = c
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            Gaussian3D::from_slice(&vals)
        })
        .collect())
}

pub fn save_gaussians(path: impl AsRef<Path>, gs: &[Gaussian3D]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_gaussians(gs)).map_err(|e| Error::io(path, e))
}

pub fn load_gaussians(path: impl AsRef<Path>) -> Result<Vec<Gaussian3D>> {
    let path = path.as_ref();
    decode_gaussians(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
