//! The five per-level network modules and the hierarchical encoder/decoder
//! built from them.

pub mod checkpoint;
pub mod model;
pub mod pipeline;

pub use checkpoint::{ModelManifest, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{B2PModel, ConvertNet, EntropyNet, GenMode, GenerateNet, ModelConfig, ReconstructNet, SqueezeNet};
pub use pipeline::{
    check_stream, color_matrix, context, convert_chain, decode_pipeline, encode_pipeline, generate, DecodeOutput,
    EncodeOutput, Scaffold, RAW_CHANNELS,
};

use std::rc::Rc;

use crate::autodiff::{rows_to_gaussians, GaussianMapping, Graph};
use crate::mat::Mat;
use crate::sparse::{generated_coords, LevelMaps};
use crate::splat::Gaussian3D;
use crate::voxel::SparseTensor;
use crate::{Error, Result};

fn module<'a, T>(m: &'a std::collections::BTreeMap<u32, T>, what: &str, level: u32) -> Result<&'a T> {
    m.get(&level)
        .ok_or_else(|| Error::LevelUnavailable(format!("model has no {what} module for level {level}")))
}

fn same_coords(a: &SparseTensor, b: &SparseTensor) -> Result<()> {
    if a.coords != b.coords {
        return Err(Error::Consistency("operands live on different coordinates".into()));
    }
    Ok(())
}

/// Per-point mean and scale of the squeezed symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyParams {
    pub mu: Mat,
    pub sigma: Mat,
}

/// Feature convert module of `level` applied to `x`.
pub fn feature_convert(model: &B2PModel, level: u32, x: &SparseTensor) -> Result<SparseTensor> {
    let net = module(&model.convert, "convert", level)?;
    let maps = LevelMaps::new(&x.coords)?;
    let mut g = Graph::new(&model.store);
    let xv = g.input(x.feats.clone());
    let y = net.apply(&mut g, xv, &maps)?;
    SparseTensor::new(x.level, x.coords.clone(), g.value(y).clone())
}

/// Squeezes `[x, context]` to the coded channel count.
pub fn feature_squeeze(model: &B2PModel, level: u32, x: &SparseTensor, ctx: &SparseTensor) -> Result<SparseTensor> {
    same_coords(x, ctx)?;
    let net = module(&model.squeeze, "squeeze", level)?;
    let maps = LevelMaps::new(&x.coords)?;
    let mut g = Graph::new(&model.store);
    let (xv, cv) = (g.input(x.feats.clone()), g.input(ctx.feats.clone()));
    let y = net.apply(&mut g, xv, cv, &maps)?;
    SparseTensor::new(x.level, x.coords.clone(), g.value(y).clone())
}

pub fn entropy_predict(model: &B2PModel, level: u32, ctx: &SparseTensor) -> Result<EntropyParams> {
    let net = module(&model.entropy, "entropy", level)?;
    let maps = LevelMaps::new(&ctx.coords)?;
    let mut g = Graph::new(&model.store);
    let cv = g.input(ctx.feats.clone());
    let (mu, sigma) = net.apply(&mut g, cv, &maps)?;
    Ok(EntropyParams {
        mu: g.value(mu).clone(),
        sigma: g.value(sigma).clone(),
    })
}

pub fn feature_reconstruct(model: &B2PModel, level: u32, q: &SparseTensor, ctx: &SparseTensor) -> Result<SparseTensor> {
    same_coords(q, ctx)?;
    let net = module(&model.reconstruct, "reconstruct", level)?;
    let maps = LevelMaps::new(&q.coords)?;
    let mut g = Graph::new(&model.store);
    let (qv, cv) = (g.input(q.feats.clone()), g.input(ctx.feats.clone()));
    let y = net.apply(&mut g, qv, cv, &maps)?;
    SparseTensor::new(q.level, q.coords.clone(), g.value(y).clone())
}

/// Gaussians generated from reconstructed features at `recon.level`.
pub fn gaussian_generate(model: &B2PModel, recon: &SparseTensor) -> Result<Vec<Gaussian3D>> {
    let m = recon.level;
    let net = module(&model.generate, "generation", m)?;
    let maps = LevelMaps::new(&recon.coords)?;
    let voxel = (1u64 << (model.config.depth - m)) as f64;
    let (out_maps, cell) = match net.mode {
        GenMode::Generative => (LevelMaps::new(&generated_coords(&recon.coords))?, voxel / 2.0),
        GenMode::Direct => (LevelMaps::new(&recon.coords)?, voxel),
    };
    let mut g = Graph::new(&model.store);
    let xv = g.input(recon.feats.clone());
    let raw = net.apply(&mut g, xv, &maps, &out_maps)?;
    pipeline::check_raw(g.value(raw))?;
    let map = Rc::new(GaussianMapping {
        centers: out_maps.coords().iter().map(|c| c.map(|v| (v as f64 + 0.5) * cell)).collect(),
        voxel,
        direct: net.mode == GenMode::Direct,
    });
    let gs = g.gaussians(raw, &map)?;
    Ok(rows_to_gaussians(g.value(gs)))
}
