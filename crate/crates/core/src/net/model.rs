use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::rng::SeedTree;
use crate::sparse::{BlockKind, InceptionBlock, Layer, LayerKind, LevelMaps, ResBlock};
use crate::splat::GAUSSIAN_PARAMS;
use crate::{Error, Result};

/// Sizes and level ranges of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input feature channels at level N (RGB).
    pub in_channels: usize,
    pub channels: usize,
    pub squeezed: usize,
    /// Bit depth N of the input clouds.
    pub depth: u32,
    /// Base level L, coded without context.
    pub base: u32,
    /// Lowest level with a Gaussian generation head.
    pub min_level: u32,
    /// Highest coded level.
    pub max_level: u32,
}

impl ModelConfig {
    /// Full-size model: N=10, L=7, M in {8, 9}.
    pub fn full_scale() -> Self {
        ModelConfig {
            in_channels: 3,
            channels: 64,
            squeezed: 8,
            depth: 10,
            base: 7,
            min_level: 8,
            max_level: 9,
        }
    }

    /// Desk-scale model: N=6, L=3, M in {4, 5}.
    pub fn toy() -> Self {
        ModelConfig {
            depth: 6,
            base: 3,
            min_level: 4,
            max_level: 5,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ModelConfig {
            base: l,
            min_level: lo,
            max_level: hi,
            depth: n,
            ..
        } = *self;
        if !(l <= lo && lo <= hi && hi <= n) {
            return Err(Error::Config(format!("levels must satisfy L <= M_min <= M_max <= N, got {l}, {lo}, {hi}, {n}")));
        }
        if n > crate::voxel::MAX_BITS || n == 0 {
            return Err(Error::Config(format!("bit depth {n} out of range")));
        }
        if self.channels == 0 || self.channels % 4 != 0 {
            return Err(Error::Config(format!("channel width {} is not a positive multiple of 4", self.channels)));
        }
        if self.in_channels == 0 || self.squeezed == 0 {
            return Err(Error::Config("zero input or squeezed channels".into()));
        }
        if self.squeezed > 255 || self.max_level > 255 {
            return Err(Error::Config("squeezed channels and levels must fit a byte".into()));
        }
        Ok(())
    }

    /// Generation mode at level `m`: spawn children iff `m <= N - 2`.
    pub fn mode(&self, m: u32) -> GenMode {
        if m + 2 <= self.depth {
            GenMode::Generative
        } else {
            GenMode::Direct
        }
    }

    pub fn coded_levels(&self) -> std::ops::RangeInclusive<u32> {
        self.base..=self.max_level
    }

    pub fn render_levels(&self) -> std::ops::RangeInclusive<u32> {
        self.min_level..=self.max_level
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenMode {
    /// Transposed conv spawning 8 sub-points per voxel; opacity is learned.
    Generative,
    /// One Gaussian per voxel with opacity fixed at 1.
    Direct,
}

/// Geometry-invariant conv, two inception blocks, geometry-invariant conv.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvertNet {
    pub conv_in: Layer,
    pub blocks: [InceptionBlock; 2],
    pub conv_out: Layer,
}

impl ConvertNet {
    pub fn apply(&self, g: &mut Graph, x: Var, maps: &LevelMaps) -> Result<Var> {
        let mut h = self.conv_in.apply(g, x, maps)?;
        for b in &self.blocks {
            h = b.apply(g, h, maps)?;
            h = g.relu(h);
        }
        self.conv_out.apply(g, h, maps)
    }

    pub fn layers(&self) -> Vec<&Layer> {
        let mut v = vec![&self.conv_in];
        v.extend(self.blocks.iter().flat_map(|b| b.layers()));
        v.push(&self.conv_out);
        v
    }
}

/// Two per-point linear layers over `[features, context]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SqueezeNet {
    pub l1: Layer,
    pub l2: Layer,
}

impl SqueezeNet {
    pub fn apply(&self, g: &mut Graph, x: Var, ctx: Var, maps: &LevelMaps) -> Result<Var> {
        let cat = g.concat(x, ctx)?;
        let h = self.l1.apply(g, cat, maps)?;
        let h = g.relu(h);
        self.l2.apply(g, h, maps)
    }

    pub fn layers(&self) -> Vec<&Layer> {
        vec![&self.l1, &self.l2]
    }
}

/// Trunk of geometry-invariant layers with separate mean and scale heads.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyNet {
    pub conv: Layer,
    pub blocks: [InceptionBlock; 2],
    pub mu: Layer,
    pub sigma: Layer,
}

impl EntropyNet {
    /// Returns `(mu, sigma)` with sigma clamped to `[SIGMA_MIN, SIGMA_MAX]`.
    pub fn apply(&self, g: &mut Graph, ctx: Var, maps: &LevelMaps) -> Result<(Var, Var)> {
        let h = self.conv.apply(g, ctx, maps)?;
        let mut h = g.relu(h);
        for b in &self.blocks {
            h = b.apply(g, h, maps)?;
            h = g.relu(h);
        }
        let mu = self.mu.apply(g, h, maps)?;
        let s = self.sigma.apply(g, h, maps)?;
        let s = g.exp(s);
        let s = g.clamp(s, crate::entropy::SIGMA_MIN, crate::entropy::SIGMA_MAX);
        Ok((mu, s))
    }

    pub fn layers(&self) -> Vec<&Layer> {
        let mut v = vec![&self.conv];
        v.extend(self.blocks.iter().flat_map(|b| b.layers()));
        v.extend([&self.mu, &self.sigma]);
        v
    }
}

/// Linear over `[symbols, context]`, two inception blocks, linear.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructNet {
    pub l1: Layer,
    pub blocks: [InceptionBlock; 2],
    pub l2: Layer,
}

impl ReconstructNet {
    pub fn apply(&self, g: &mut Graph, q: Var, ctx: Var, maps: &LevelMaps) -> Result<Var> {
        let cat = g.concat(q, ctx)?;
        let h = self.l1.apply(g, cat, maps)?;
        let mut h = g.relu(h);
        for b in &self.blocks {
            h = b.apply(g, h, maps)?;
            h = g.relu(h);
        }
        self.l2.apply(g, h, maps)
    }

    pub fn layers(&self) -> Vec<&Layer> {
        let mut v = vec![&self.l1];
        v.extend(self.blocks.iter().flat_map(|b| b.layers()));
        v.push(&self.l2);
        v
    }
}

/// Seven-layer head from reconstructed features to 14 raw Gaussian channels.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerateNet {
    pub mode: GenMode,
    pub conv_in: Layer,
    pub pre: [ResBlock; 2],
    pub mid: Layer,
    pub post: [ResBlock; 2],
    pub head: Layer,
}

impl GenerateNet {
    /// `maps` covers the level's points; `out_maps` the points the Gaussians
    /// sit on (the spawned children in generative mode, else `maps` again).
    pub fn apply(&self, g: &mut Graph, x: Var, maps: &LevelMaps, out_maps: &LevelMaps) -> Result<Var> {
        let h = self.conv_in.apply(g, x, maps)?;
        let mut h = g.relu(h);
        for b in &self.pre {
            h = b.apply(g, h, maps)?;
            h = g.relu(h);
        }
        h = self.mid.apply(g, h, maps)?;
        for b in &self.post {
            h = b.apply(g, h, out_maps)?;
            h = g.relu(h);
        }
        self.head.apply(g, h, out_maps)
    }

    pub fn layers(&self) -> Vec<&Layer> {
        let mut v = vec![&self.conv_in];
        v.extend(self.pre.iter().flat_map(|b| b.layers()));
        v.push(&self.mid);
        v.extend(self.post.iter().flat_map(|b| b.layers()));
        v.push(&self.head);
        v
    }
}

/// All trainable modules, keyed by level, plus their parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct B2PModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    /// Levels `L..=N`.
    pub convert: BTreeMap<u32, ConvertNet>,
    /// Levels `L..=M_max`.
    pub squeeze: BTreeMap<u32, SqueezeNet>,
    pub entropy: BTreeMap<u32, EntropyNet>,
    pub reconstruct: BTreeMap<u32, ReconstructNet>,
    /// Levels `M_min..=M_max`.
    pub generate: BTreeMap<u32, GenerateNet>,
}

fn inception2<R: Rng>(s: &mut ParamStore, name: &str, c: usize, kind: BlockKind, rng: &mut R) -> Result<[InceptionBlock; 2]> {
    Ok([
        InceptionBlock::declare(s, &format!("{name}.block1"), c, kind, rng)?,
        InceptionBlock::declare(s, &format!("{name}.block2"), c, kind, rng)?,
    ])
}

fn res2<R: Rng>(s: &mut ParamStore, name: &str, first: usize, c: usize, rng: &mut R) -> Result<[ResBlock; 2]> {
    Ok([
        ResBlock::declare(s, &format!("{name}.res{first}"), c, BlockKind::Plain, rng)?,
        ResBlock::declare(s, &format!("{name}.res{}", first + 1), c, BlockKind::Plain, rng)?,
    ])
}

impl B2PModel {
    /// Fresh model. Weights are rounded to `f32` so a saved checkpoint
    /// reloads bit-identically.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let root = SeedTree::new(seed).child("model");
        let mut s = ParamStore::new();
        let c = config.channels;
        let (geom, lin) = (LayerKind::Geom, LayerKind::Linear);
        let mut convert = BTreeMap::new();
        for n in config.base..=config.depth {
            let rng = &mut root.stream(&format!("convert{n}"));
            let p = format!("convert.L{n}");
            let cin = if n == config.depth { config.in_channels } else { c };
            convert.insert(
                n,
                ConvertNet {
                    conv_in: Layer::declare(&mut s, &format!("{p}.conv_in"), geom, 3, cin, c, rng)?,
                    blocks: inception2(&mut s, &p, c, BlockKind::Plain, rng)?,
                    conv_out: Layer::declare(&mut s, &format!("{p}.conv_out"), geom, 3, c, c, rng)?,
                },
            );
        }
        let (mut squeeze, mut entropy, mut reconstruct) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
        for n in config.coded_levels() {
            let rng = &mut root.stream(&format!("code{n}"));
            let p = format!("squeeze.L{n}");
            squeeze.insert(
                n,
                SqueezeNet {
                    l1: Layer::declare(&mut s, &format!("{p}.l1"), lin, 1, 2 * c, c, rng)?,
                    l2: Layer::declare(&mut s, &format!("{p}.l2"), lin, 1, c, config.squeezed, rng)?,
                },
            );
            let p = format!("entropy.L{n}");
            entropy.insert(
                n,
                EntropyNet {
                    conv: Layer::declare(&mut s, &format!("{p}.conv"), geom, 3, c, c, rng)?,
                    blocks: inception2(&mut s, &p, c, BlockKind::GeomInvariant, rng)?,
                    mu: Layer::declare(&mut s, &format!("{p}.mu"), lin, 1, c, config.squeezed, rng)?,
                    sigma: Layer::declare(&mut s, &format!("{p}.sigma"), lin, 1, c, config.squeezed, rng)?,
                },
            );
            let p = format!("reconstruct.L{n}");
            reconstruct.insert(
                n,
                ReconstructNet {
                    l1: Layer::declare(&mut s, &format!("{p}.l1"), lin, 1, config.squeezed + c, c, rng)?,
                    blocks: inception2(&mut s, &p, c, BlockKind::Plain, rng)?,
                    l2: Layer::declare(&mut s, &format!("{p}.l2"), lin, 1, c, c, rng)?,
                },
            );
        }
        let mut generate = BTreeMap::new();
        for m in config.render_levels() {
            let rng = &mut root.stream(&format!("generate{m}"));
            let p = format!("generate.L{m}");
            let mode = config.mode(m);
            let mid = match mode {
                GenMode::Generative => Layer::declare(&mut s, &format!("{p}.up"), LayerKind::TConv, 2, c, c, rng)?,
                GenMode::Direct => Layer::declare(&mut s, &format!("{p}.mid"), geom, 3, c, c, rng)?,
            };
            generate.insert(
                m,
                GenerateNet {
                    mode,
                    conv_in: Layer::declare(&mut s, &format!("{p}.conv_in"), geom, 3, c, c, rng)?,
                    pre: res2(&mut s, &p, 1, c, rng)?,
                    mid,
                    post: res2(&mut s, &p, 3, c, rng)?,
                    head: Layer::declare(&mut s, &format!("{p}.head"), geom, 3, c, GAUSSIAN_PARAMS, rng)?,
                },
            );
        }
        let mut model = B2PModel {
            config,
            store: s,
            convert,
            squeeze,
            entropy,
            reconstruct,
            generate,
        };
        model.round_to_f32();
        Ok(model)
    }

    /// Rounds every parameter to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for id in 0..self.store.len() {
            for v in self.store.get_mut(id).as_mut_slice() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Every layer with its parameter name prefix, e.g. `squeeze.L8.l1`.
    pub fn layers(&self) -> Vec<(String, &Layer)> {
        let all = self
            .convert
            .values()
            .flat_map(ConvertNet::layers)
            .chain(self.squeeze.values().flat_map(SqueezeNet::layers))
            .chain(self.entropy.values().flat_map(EntropyNet::layers))
            .chain(self.reconstruct.values().flat_map(ReconstructNet::layers))
            .chain(self.generate.values().flat_map(GenerateNet::layers));
        all.map(|l| (self.store.name(l.w).trim_end_matches(".w").to_string(), l))
            .collect()
    }
}
