//! Builds the octree of a cloud and prints the point count of every level
//! plus the size of the lossless geometry chunk.

use bits2photon::entropy::{decode_geometry, encode_geometry};
use bits2photon::synth::{synth_cloud, SynthKind, SynthSpec};
use bits2photon::voxel::build_hierarchy;

fn main() -> bits2photon::Result<()> {
    let pc = synth_cloud(&SynthSpec::new(SynthKind::Union, 8, 1))?;
    let hier = build_hierarchy(&pc, 3)?;
    for n in hier.base()..=hier.top() {
        println!("level {n}: {:>7} occupied voxels", hier.len(n));
    }
    let bytes = encode_geometry(&hier)?;
    println!(
        "geometry: {} bytes, {:.3} bits per point",
        bytes.len(),
        8.0 * bytes.len() as f64 / pc.len() as f64
    );
    let back = decode_geometry(&bytes, 8, 3)?;
    assert_eq!(back.coords(8), hier.coords(8));
    Ok(())
}
