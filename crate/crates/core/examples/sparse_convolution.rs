//! Plain and geometry-invariant sparse convolution on a small cloud. Scaling
//! the kernel weights leaves the geometry-invariant output unchanged up to
//! rounding, while the plain convolution scales with it.

use bits2photon::mat::Mat;
use bits2photon::sparse::{build_kernel_map, geom_invariant_conv, sparse_conv, ConvParams};
use bits2photon::voxel::SparseTensor;
use bits2photon::SeedTree;
use rand::Rng;

fn main() -> bits2photon::Result<()> {
    let mut rng = SeedTree::new(3).stream("conv");
    let mut coords: Vec<[u32; 3]> = (0..200).map(|_| std::array::from_fn(|_| rng.gen_range(0..12))).collect();
    coords.sort_by(bits2photon::voxel::morton_cmp);
    coords.dedup();
    let feats = Mat::from_fn(coords.len(), 4, |_, _| rng.gen_range(-1.0..1.0));
    let x = SparseTensor::new(4, coords.clone(), feats)?;
    let km = build_kernel_map(&coords, &coords, 3)?;
    let p = ConvParams::kaiming(27, 4, 4, &mut rng);

    let mut scaled = p.clone();
    scaled.weights.scale(7.3);
    let plain = (sparse_conv(&x, &km, &p)?, sparse_conv(&x, &km, &scaled)?);
    let geom = (geom_invariant_conv(&x, &km, &p)?, geom_invariant_conv(&x, &km, &scaled)?);
    println!("{} points, {} kernel pairs", coords.len(), km.num_pairs());
    println!("plain conv:          max |y(7.3w) - y(w)| = {:.3e}", plain.1.feats.max_abs_diff(&plain.0.feats));
    println!("geometry-invariant:  max |y(7.3w) - y(w)| = {:.3e}", geom.1.feats.max_abs_diff(&geom.0.feats));
    Ok(())
}
