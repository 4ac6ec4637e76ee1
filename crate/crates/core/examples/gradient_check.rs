//! Compares reverse-mode gradients of a small conv network with central
//! finite differences.

use bits2photon::autodiff::{check_gradients, ParamStore};
use bits2photon::mat::Mat;
use bits2photon::sparse::{BlockKind, InceptionBlock, Layer, LayerKind, LevelMaps};
use bits2photon::SeedTree;
use rand::Rng;
use std::rc::Rc;

fn main() -> bits2photon::Result<()> {
    let seeds = SeedTree::new(4);
    let mut rng = seeds.stream("init");
    let mut coords: Vec<[u32; 3]> = (0..30).map(|_| std::array::from_fn(|_| rng.gen_range(0..5))).collect();
    coords.sort_by(bits2photon::voxel::morton_cmp);
    coords.dedup();
    let maps = LevelMaps::new(&coords)?;
    let mut store = ParamStore::new();
    let conv = Layer::declare(&mut store, "conv", LayerKind::Geom, 3, 3, 8, &mut rng)?;
    let block = InceptionBlock::declare(&mut store, "block", 8, BlockKind::Plain, &mut rng)?;
    let head = Layer::declare(&mut store, "head", LayerKind::Linear, 1, 8, 2, &mut rng)?;
    let x = Mat::from_fn(coords.len(), 3, |_, _| rng.gen_range(0.0..1.0));
    let target = Rc::new(Mat::from_fn(coords.len(), 2, |_, _| rng.gen_range(-1.0..1.0)));

    let report = check_gradients(
        &mut store,
        |g| {
            let xv = g.input(x.clone());
            let h = conv.apply(g, xv, &maps)?;
            let h = g.relu(h);
            let h = block.apply(g, h, &maps)?;
            let y = head.apply(g, h, &maps)?;
            g.l1(y, &target)
        },
        &[],
        40,
        1e-6,
        1e-6,
        &mut seeds.stream("probes"),
    )?;
    println!("{} probes, worst relative error {:.2e} ({})", report.probes, report.max_rel, report.worst);
    Ok(())
}
