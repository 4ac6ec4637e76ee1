//! Trainable layers and the two residual block compositions. Blocks are
//! written once against the autodiff graph; the tensor-level functions run
//! the same code on a throwaway graph.

use std::rc::Rc;

use rand::Rng;

use super::conv::ConvParams;
use super::kernel_map::{build_kernel_map, KernelMap};
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::mat::Mat;
use crate::voxel::{Coord, SparseTensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Plain sparse convolution with an odd kernel.
    Conv,
    /// Geometry-invariant sparse convolution with an odd kernel.
    Geom,
    /// Generative 2x2x2 transposed convolution.
    TConv,
    /// Per-point linear layer.
    Linear,
}

/// Convolution flavor used inside a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Plain,
    GeomInvariant,
}

impl BlockKind {
    fn layer(self) -> LayerKind {
        match self {
            BlockKind::Plain => LayerKind::Conv,
            BlockKind::GeomInvariant => LayerKind::Geom,
        }
    }
}

/// A weight/bias pair registered in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub kernel: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl Layer {
    pub fn volume(kind: LayerKind, kernel: usize) -> usize {
        match kind {
            LayerKind::Conv | LayerKind::Geom => kernel.pow(3),
            LayerKind::TConv => 8,
            LayerKind::Linear => 1,
        }
    }

    /// Registers `name.w` and `name.b` with fan-in scaled uniform weights
    /// and zero bias.
    pub fn declare<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        kind: LayerKind,
        kernel: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Layer> {
        let p = ConvParams::kaiming(Self::volume(kind, kernel), c_in, c_out, rng);
        Self::from_params(store, name, kind, kernel, &p)
    }

    pub fn from_params(store: &mut ParamStore, name: &str, kind: LayerKind, kernel: usize, p: &ConvParams) -> Result<Layer> {
        if p.volume != Self::volume(kind, kernel) {
            return Err(Error::Dimension(format!(
                "{name}: {} offsets supplied for a {kind:?} layer of size {kernel}",
                p.volume
            )));
        }
        let bias = p.bias.clone().unwrap_or_else(|| vec![0.0; p.c_out]);
        let w = store.add(format!("{name}.w"), p.weights.clone())?;
        let b = store.add(format!("{name}.b"), Mat::from_vec(1, p.c_out, bias)?)?;
        Ok(Layer {
            kind,
            kernel,
            c_in: p.c_in,
            c_out: p.c_out,
            w,
            b,
        })
    }

    pub fn apply(&self, g: &mut Graph, x: Var, maps: &LevelMaps) -> Result<Var> {
        let w = g.param(self.w);
        let b = Some(g.param(self.b));
        match self.kind {
            LayerKind::Conv => g.conv(x, w, b, maps.get(self.kernel)?),
            LayerKind::Geom => g.geom_conv(x, w, b, maps.get(self.kernel)?),
            LayerKind::TConv => g.tconv(x, w, b),
            LayerKind::Linear => g.linear(x, w, b),
        }
    }

    /// Parameter shapes `(weights, bias)`.
    pub fn shapes(&self) -> ((usize, usize), (usize, usize)) {
        ((Self::volume(self.kind, self.kernel) * self.c_in, self.c_out), (1, self.c_out))
    }
}

/// Kernel maps of one coordinate set, built on demand.
pub struct LevelMaps {
    coords: Vec<Coord>,
    k1: Rc<KernelMap>,
    k3: Rc<KernelMap>,
}

impl LevelMaps {
    pub fn new(coords: &[Coord]) -> Result<Self> {
        Ok(LevelMaps {
            coords: coords.to_vec(),
            k1: Rc::new(build_kernel_map(coords, coords, 1)?),
            k3: Rc::new(build_kernel_map(coords, coords, 3)?),
        })
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn get(&self, kernel: usize) -> Result<&Rc<KernelMap>> {
        match kernel {
            1 => Ok(&self.k1),
            3 => Ok(&self.k3),
            k => Err(Error::Config(format!("no kernel map of size {k} prepared"))),
        }
    }
}

/// Two-branch residual block: branch A is 3^3 C->C/4, ReLU, 3^3 C/4->C/2;
/// branch B is 3^3 C->C/4, ReLU, 1^3 C/4->C/4, ReLU, 3^3 C/4->C/2. The
/// branches are concatenated and added to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct InceptionBlock {
    pub a1: Layer,
    pub a2: Layer,
    pub b1: Layer,
    pub b2: Layer,
    pub b3: Layer,
}

fn quarter(c: usize) -> Result<usize> {
    if c % 4 != 0 || c == 0 {
        return Err(Error::Config(format!("block width {c} is not a positive multiple of 4")));
    }
    Ok(c / 4)
}

impl InceptionBlock {
    pub fn declare<R: Rng>(store: &mut ParamStore, name: &str, c: usize, kind: BlockKind, rng: &mut R) -> Result<Self> {
        let q = quarter(c)?;
        let k = kind.layer();
        Ok(InceptionBlock {
            a1: Layer::declare(store, &format!("{name}.a1"), k, 3, c, q, rng)?,
            a2: Layer::declare(store, &format!("{name}.a2"), k, 3, q, 2 * q, rng)?,
            b1: Layer::declare(store, &format!("{name}.b1"), k, 3, c, q, rng)?,
            b2: Layer::declare(store, &format!("{name}.b2"), k, 1, q, q, rng)?,
            b3: Layer::declare(store, &format!("{name}.b3"), k, 3, q, 2 * q, rng)?,
        })
    }

    pub fn apply(&self, g: &mut Graph, x: Var, maps: &LevelMaps) -> Result<Var> {
        let a = self.a1.apply(g, x, maps)?;
        let a = g.relu(a);
        let a = self.a2.apply(g, a, maps)?;
        let b = self.b1.apply(g, x, maps)?;
        let b = g.relu(b);
        let b = self.b2.apply(g, b, maps)?;
        let b = g.relu(b);
        let b = self.b3.apply(g, b, maps)?;
        let cat = g.concat(a, b)?;
        g.add(cat, x)
    }

    pub fn layers(&self) -> [&Layer; 5] {
        [&self.a1, &self.a2, &self.b1, &self.b2, &self.b3]
    }
}

/// `x + conv(relu(conv(x)))` with 3^3 kernels at constant width.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub c1: Layer,
    pub c2: Layer,
}

impl ResBlock {
    pub fn declare<R: Rng>(store: &mut ParamStore, name: &str, c: usize, kind: BlockKind, rng: &mut R) -> Result<Self> {
        let k = kind.layer();
        Ok(ResBlock {
            c1: Layer::declare(store, &format!("{name}.c1"), k, 3, c, c, rng)?,
            c2: Layer::declare(store, &format!("{name}.c2"), k, 3, c, c, rng)?,
        })
    }

    pub fn apply(&self, g: &mut Graph, x: Var, maps: &LevelMaps) -> Result<Var> {
        let h = self.c1.apply(g, x, maps)?;
        let h = g.relu(h);
        let h = self.c2.apply(g, h, maps)?;
        g.add(h, x)
    }

    pub fn layers(&self) -> [&Layer; 2] {
        [&self.c1, &self.c2]
    }
}

/// Parameters of an [`InceptionBlock`] outside any store.
#[derive(Clone, Debug, PartialEq)]
pub struct InceptionParams {
    pub a1: ConvParams,
    pub a2: ConvParams,
    pub b1: ConvParams,
    pub b2: ConvParams,
    pub b3: ConvParams,
}

impl InceptionParams {
    pub fn zeros(c: usize) -> Result<Self> {
        let q = quarter(c)?;
        Ok(InceptionParams {
            a1: ConvParams::zeros(27, c, q),
            a2: ConvParams::zeros(27, q, 2 * q),
            b1: ConvParams::zeros(27, c, q),
            b2: ConvParams::zeros(1, q, q),
            b3: ConvParams::zeros(27, q, 2 * q),
        })
    }

    pub fn random<R: Rng>(c: usize, rng: &mut R) -> Result<Self> {
        let q = quarter(c)?;
        Ok(InceptionParams {
            a1: ConvParams::kaiming(27, c, q, rng),
            a2: ConvParams::kaiming(27, q, 2 * q, rng),
            b1: ConvParams::kaiming(27, c, q, rng),
            b2: ConvParams::kaiming(1, q, q, rng),
            b3: ConvParams::kaiming(27, q, 2 * q, rng),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResParams {
    pub c1: ConvParams,
    pub c2: ConvParams,
}

impl ResParams {
    pub fn zeros(c: usize) -> Self {
        ResParams {
            c1: ConvParams::zeros(27, c, c),
            c2: ConvParams::zeros(27, c, c),
        }
    }

    pub fn random<R: Rng>(c: usize, rng: &mut R) -> Self {
        ResParams {
            c1: ConvParams::kaiming(27, c, c, rng),
            c2: ConvParams::kaiming(27, c, c, rng),
        }
    }
}

fn run_block(
    x: &SparseTensor,
    build: impl FnOnce(&mut ParamStore) -> Result<Box<dyn Fn(&mut Graph, Var, &LevelMaps) -> Result<Var>>>,
) -> Result<SparseTensor> {
    let mut store = ParamStore::new();
    let f = build(&mut store)?;
    let maps = LevelMaps::new(&x.coords)?;
    let mut g = Graph::new(&store);
    let xin = g.input(x.feats.clone());
    let y = f(&mut g, xin, &maps)?;
    SparseTensor::new(x.level, x.coords.clone(), g.value(y).clone())
}

pub fn inception_res_block(x: &SparseTensor, p: &InceptionParams, kind: BlockKind) -> Result<SparseTensor> {
    let c = x.channels();
    let q = quarter(c)?;
    let k = kind.layer();
    run_block(x, |s| {
        let blk = InceptionBlock {
            a1: Layer::from_params(s, "a1", k, 3, &p.a1)?,
            a2: Layer::from_params(s, "a2", k, 3, &p.a2)?,
            b1: Layer::from_params(s, "b1", k, 3, &p.b1)?,
            b2: Layer::from_params(s, "b2", k, 1, &p.b2)?,
            b3: Layer::from_params(s, "b3", k, 3, &p.b3)?,
        };
        let widths = [(c, q), (q, 2 * q), (c, q), (q, q), (q, 2 * q)];
        for (l, (ci, co)) in blk.layers().iter().zip(widths) {
            if (l.c_in, l.c_out) != (ci, co) {
                return Err(Error::Dimension(format!(
                    "inception layer {}->{} where {ci}->{co} is required",
                    l.c_in, l.c_out
                )));
            }
        }
        Ok(Box::new(move |g, x, m| blk.apply(g, x, m)))
    })
}

pub fn res_block(x: &SparseTensor, p: &ResParams, kind: BlockKind) -> Result<SparseTensor> {
    let c = x.channels();
    let k = kind.layer();
    run_block(x, |s| {
        let blk = ResBlock {
            c1: Layer::from_params(s, "c1", k, 3, &p.c1)?,
            c2: Layer::from_params(s, "c2", k, 3, &p.c2)?,
        };
        for l in blk.layers() {
            if (l.c_in, l.c_out) != (c, c) {
                return Err(Error::Dimension(format!("res block layer {}->{} on {c} channels", l.c_in, l.c_out)));
            }
        }
        Ok(Box::new(move |g, x, m| blk.apply(g, x, m)))
    })
}
