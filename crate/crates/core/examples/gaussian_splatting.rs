//! Renders a handful of anisotropic Gaussians with the tile rasterizer and
//! the brute-force reference, writes both as PNG and reports their difference.

use bits2photon::splat::{brute_force_render, rasterize, Camera, Gaussian3D, Intrinsics};

fn main() -> bits2photon::Result<()> {
    let mut gs = Vec::new();
    for k in 0..24 {
        let t = k as f64 / 24.0 * std::f64::consts::TAU;
        let h = (k as f64 * 0.7).sin();
        gs.push(Gaussian3D {
            mean: [t.cos() * 2.0, h, t.sin() * 2.0],
            scales: [0.35, 0.12, 0.2],
            quat: [(t / 2.0).cos(), 0.0, (t / 2.0).sin(), 0.0],
            opacity: 0.85,
            color: [0.5 + 0.5 * t.cos(), 0.5 + 0.5 * h, 0.5 - 0.5 * t.sin()],
        });
    }
    let cam = Camera::look_at(
        [0.0, 3.0, 7.0],
        [0.0; 3],
        [0.0, 1.0, 0.0],
        Intrinsics {
            width: 128,
            height: 128,
            fx: 140.0,
            fy: 140.0,
        },
    )?;
    let fast = rasterize(&gs, &cam);
    let slow = brute_force_render(&gs, &cam);
    fast.image.save_png("splat_tiles.png")?;
    slow.save_png("splat_reference.png")?;
    println!("max pixel difference {:.2e}, {} degenerate splats", fast.image.max_abs_diff(&slow), fast.skipped);
    Ok(())
}
