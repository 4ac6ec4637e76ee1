//! Deterministic textured test clouds.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SeedTree;
use crate::voxel::{Coord, PointCloud};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthKind {
    /// Spherical shell with a latitude/longitude checker texture.
    Sphere,
    /// Surface of an axis-aligned cube with a linear color gradient.
    Cube,
    /// A sphere and a cube side by side.
    Union,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(SynthKind::Sphere),
            "cube" => Ok(SynthKind::Cube),
            "union" => Ok(SynthKind::Union),
            _ => Err(Error::Config(format!("unknown scene kind {s:?} (sphere, cube, union)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub depth: u32,
    /// Sphere radius (or cube half side) as a fraction of the grid size.
    pub size: f64,
    /// Checker cells along a half meridian.
    pub checks: u32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, depth: u32, seed: u64) -> Self {
        SynthSpec {
            kind,
            depth,
            size: 0.3,
            checks: 4,
            seed,
        }
    }
}

struct Sphere {
    center: [f64; 3],
    radius: f64,
}

struct Cube {
    lo: [u32; 3],
    side: u32,
}

fn sphere_voxels(s: &Sphere, limit: u32) -> Vec<Coord> {
    let lo = |c: f64| ((c - s.radius - 1.0).floor().max(0.0)) as u32;
    let hi = |c: f64| ((c + s.radius + 1.0).ceil() as u32).min(limit - 1);
    let mut out = Vec::new();
    for z in lo(s.center[2])..=hi(s.center[2]) {
        for y in lo(s.center[1])..=hi(s.center[1]) {
            for x in lo(s.center[0])..=hi(s.center[0]) {
                let d = [x, y, z]
                    .iter()
                    .zip(&s.center)
                    .map(|(&v, c)| (v as f64 + 0.5 - c).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if (d - s.radius).abs() < 0.5 {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

fn cube_voxels(c: &Cube) -> Vec<Coord> {
    let mut out = Vec::new();
    let last = c.side - 1;
    for z in 0..c.side {
        for y in 0..c.side {
            for x in 0..c.side {
                if [x, y, z].iter().any(|&v| v == 0 || v == last) {
                    out.push([c.lo[0] + x, c.lo[1] + y, c.lo[2] + z]);
                }
            }
        }
    }
    out
}

fn checker(s: &Sphere, v: Coord, checks: u32, phase: f64, a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    let p: Vec<f64> = v.iter().zip(&s.center).map(|(&x, c)| x as f64 + 0.5 - c).collect();
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt().max(1e-12);
    let theta = (p[1] / r).clamp(-1.0, 1.0).acos();
    let phi = p[2].atan2(p[0]) + PI + phase;
    let k = checks as f64;
    let i = (theta / PI * k).floor() as i64 + (phi / (2.0 * PI) * 2.0 * k).floor() as i64;
    if i.rem_euclid(2) == 0 {
        a
    } else {
        b
    }
}

fn layout(spec: &SynthSpec) -> (Option<Sphere>, Option<Cube>) {
    let g = (1u64 << spec.depth) as f64;
    let mid = g / 2.0;
    match spec.kind {
        SynthKind::Sphere => (
            Some(Sphere {
                center: [mid; 3],
                radius: spec.size * g,
            }),
            None,
        ),
        SynthKind::Cube => {
            let side = ((2.0 * spec.size * g).round() as u32).max(2);
            let lo = ((g - side as f64) / 2.0).floor() as u32;
            (None, Some(Cube { lo: [lo; 3], side }))
        }
        SynthKind::Union => {
            let r = spec.size * g / 2.0;
            let side = ((spec.size * g).round() as u32).max(2);
            let sphere = Sphere {
                center: [g * 0.25 + 0.5, mid, mid],
                radius: r,
            };
            let lo = [(g * 0.75 - side as f64 / 2.0).floor() as u32, (mid - side as f64 / 2.0).floor() as u32, (mid - side as f64 / 2.0).floor() as u32];
            (Some(sphere), Some(Cube { lo, side }))
        }
    }
}

/// Analytic voxel count: `4 pi (r^2 + 1/12)` for a unit-thick spherical
/// shell, `6 s^2 - 12 s + 8` for the surface of an `s`-voxel cube.
pub fn expected_count(spec: &SynthSpec) -> f64 {
    let (s, c) = layout(spec);
    let a = s.map_or(0.0, |s| 4.0 * PI * (s.radius * s.radius + 1.0 / 12.0));
    let b = c.map_or(0.0, |c| {
        let s = c.side as f64;
        6.0 * s * s - 12.0 * s + 8.0
    });
    a + b
}

/// Generates the cloud described by `spec`; identical specs give identical clouds.
pub fn synth_cloud(spec: &SynthSpec) -> Result<PointCloud> {
    if spec.depth == 0 || spec.depth > 16 {
        return Err(Error::Config(format!("synthetic scenes support depths 1..=16, got {}", spec.depth)));
    }
    if !(spec.size > 0.0 && spec.size <= 0.45) {
        return Err(Error::Config(format!("scene size {} outside (0, 0.45]", spec.size)));
    }
    let mut rng = SeedTree::new(spec.seed).stream("synth");
    let mut pick = || -> [f64; 3] { std::array::from_fn(|_| rng.gen_range(0.05..0.95)) };
    let (a, b) = (pick(), pick());
    let phase = rng.gen_range(0.0..2.0 * PI);
    let g = 1u32 << spec.depth;
    let (sphere, cube) = layout(spec);
    let mut points = Vec::new();
    let mut colors = Vec::new();
    if let Some(s) = &sphere {
        for v in sphere_voxels(s, g) {
            colors.push(checker(s, v, spec.checks.max(1), phase, a, b));
            points.push(v);
        }
    }
    if let Some(c) = &cube {
        let side = c.side as f64;
        for v in cube_voxels(c) {
            let t: [f64; 3] = std::array::from_fn(|k| (v[k] - c.lo[k]) as f64 / (side - 1.0));
            colors.push(std::array::from_fn(|k| a[k] * (1.0 - t[k]) + b[k] * t[k]));
            points.push(v);
        }
    }
    PointCloud::new(points, colors, spec.depth)
}
