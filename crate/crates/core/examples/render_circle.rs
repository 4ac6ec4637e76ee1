//! Renders a cloud's reference splats from twelve cameras on a circle.
//!
//!     cargo run --release --example render_circle -- [cloud.ply] [out_dir]

use bits2photon::metrics::render_views;
use bits2photon::synth::{synth_cloud, SynthKind, SynthSpec};
use bits2photon::train::{reference_gaussians, ViewRig};
use bits2photon::voxel::load_ply;

fn main() -> bits2photon::Result<()> {
    let mut args = std::env::args().skip(1);
    let pc = match args.next() {
        Some(p) => load_ply(p, None)?,
        None => synth_cloud(&SynthSpec::new(SynthKind::Union, 7, 0))?,
    };
    let out = args.next().unwrap_or_else(|| "circle".into());
    std::fs::create_dir_all(&out).expect("create output dir");
    let rig = ViewRig::for_depth(pc.bit_depth, 192);
    let cams = rig.circle(12)?;
    for (k, im) in render_views(&reference_gaussians(&pc), &cams).iter().enumerate() {
        im.save_png(format!("{out}/view_{k:02}.png"))?;
    }
    println!("wrote 12 views of {} points to {out}/", pc.len());
    Ok(())
}
