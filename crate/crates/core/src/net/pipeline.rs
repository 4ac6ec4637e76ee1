use std::collections::BTreeMap;
use std::rc::Rc;

use super::model::{B2PModel, GenMode, ModelConfig};
use crate::autodiff::{GaussianMapping, Graph, Var};
use crate::entropy::{
    decode_gaussian, decode_geometry, encode_gaussian, encode_geometry, estimate_bits, quantize_all, LayeredBitstream,
    LevelChunk, StreamHeader,
};
use crate::mat::Mat;
use crate::sparse::{generated_coords, LevelMaps};
use crate::splat::{Gaussian3D, GAUSSIAN_PARAMS};
use crate::voxel::{build_hierarchy, Coord, OctreeHierarchy, PointCloud};
use crate::{Error, Result};

/// Raw generation channel names, in row order.
pub const RAW_CHANNELS: [&str; GAUSSIAN_PARAMS] = [
    "offset_x", "offset_y", "offset_z", "scale_x", "scale_y", "scale_z", "quat_w", "quat_x", "quat_y", "quat_z",
    "opacity", "color_r", "color_g", "color_b",
];

/// Kernel maps and level-to-level index maps for one cloud.
pub struct Scaffold {
    pub hier: OctreeHierarchy,
    pub depth: u32,
    maps: BTreeMap<u32, LevelMaps>,
    spawned: BTreeMap<u32, LevelMaps>,
    parent_of: BTreeMap<u32, Rc<Vec<u32>>>,
    child_starts: BTreeMap<u32, Rc<Vec<u32>>>,
}

impl Scaffold {
    /// Prepares levels `base..=top` of `hier` and the spawned point sets of
    /// the generative render levels up to `top`.
    pub fn new(hier: OctreeHierarchy, cfg: &ModelConfig, top: u32) -> Result<Self> {
        if hier.base() != cfg.base || top > hier.top() {
            return Err(Error::Consistency(format!(
                "hierarchy spans levels {}..{}, model needs {}..{top}",
                hier.base(),
                hier.top(),
                cfg.base
            )));
        }
        let mut maps = BTreeMap::new();
        let mut spawned = BTreeMap::new();
        let mut parent_of = BTreeMap::new();
        let mut child_starts = BTreeMap::new();
        for n in hier.base()..=top {
            maps.insert(n, LevelMaps::new(hier.coords(n))?);
            if n > hier.base() {
                parent_of.insert(n, Rc::new(hier.parent_of(n).to_vec()));
            }
            if n < hier.top() {
                child_starts.insert(n, Rc::new(hier.child_starts(n).to_vec()));
            }
            if cfg.render_levels().contains(&n) && cfg.mode(n) == GenMode::Generative {
                spawned.insert(n, LevelMaps::new(&generated_coords(hier.coords(n)))?);
            }
        }
        Ok(Scaffold {
            hier,
            depth: cfg.depth,
            maps,
            spawned,
            parent_of,
            child_starts,
        })
    }

    pub fn maps(&self, n: u32) -> Result<&LevelMaps> {
        self.maps
            .get(&n)
            .ok_or_else(|| Error::LevelUnavailable(format!("level {n} not prepared")))
    }

    /// Point set the Gaussians of render level `m` sit on.
    pub fn out_maps(&self, m: u32) -> Result<&LevelMaps> {
        match self.spawned.get(&m) {
            Some(s) => Ok(s),
            None => self.maps(m),
        }
    }

    pub fn parent_of(&self, n: u32) -> &Rc<Vec<u32>> {
        &self.parent_of[&n]
    }

    pub fn child_starts(&self, n: u32) -> &Rc<Vec<u32>> {
        &self.child_starts[&n]
    }

    /// Grid centers and voxel size for the Gaussians of render level `m`.
    pub fn mapping(&self, m: u32, mode: GenMode) -> Rc<GaussianMapping> {
        let voxel = (1u64 << (self.depth - m)) as f64;
        let (coords, cell): (&[Coord], f64) = match mode {
            GenMode::Generative => (self.spawned[&m].coords(), voxel / 2.0),
            GenMode::Direct => (self.hier.coords(m), voxel),
        };
        let centers = coords
            .iter()
            .map(|c| c.map(|v| (v as f64 + 0.5) * cell))
            .collect();
        Rc::new(GaussianMapping {
            centers,
            voxel,
            direct: mode == GenMode::Direct,
        })
    }
}

/// Point colors as an `n x 3` matrix in Morton order.
pub fn color_matrix(pc: &PointCloud) -> Mat {
    Mat::from_fn(pc.len(), 3, |r, c| pc.colors[r][c])
}

/// Feature convert at level N, then pool-and-convert down to L. Returns the
/// converted features of every level.
pub fn convert_chain(g: &mut Graph, model: &B2PModel, sc: &Scaffold, colors: Var) -> Result<BTreeMap<u32, Var>> {
    let cfg = &model.config;
    let mut out = BTreeMap::new();
    let mut x = colors;
    for n in (cfg.base..=cfg.depth).rev() {
        if n < cfg.depth {
            x = g.pool(out[&(n + 1)], sc.child_starts(n));
        }
        let f = model.convert[&n].apply(g, x, sc.maps(n)?)?;
        out.insert(n, f);
    }
    Ok(out)
}

/// Conditioning input of level `n`: zeros at the base level, else the
/// reconstruction of level `n - 1` copied to its children.
pub fn context(g: &mut Graph, model: &B2PModel, sc: &Scaffold, n: u32, prev: Option<Var>) -> Var {
    match prev {
        None => g.input(Mat::zeros(sc.hier.len(n), model.config.channels)),
        Some(r) => g.hold(r, sc.parent_of(n)),
    }
}

/// Raw head output and Gaussian rows of render level `m`.
pub fn generate(g: &mut Graph, model: &B2PModel, sc: &Scaffold, m: u32, recon: Var) -> Result<(Var, Var)> {
    let net = model
        .generate
        .get(&m)
        .ok_or_else(|| Error::LevelUnavailable(format!("model has no generation head for level {m}")))?;
    let raw = net.apply(g, recon, sc.maps(m)?, sc.out_maps(m)?)?;
    check_raw(g.value(raw))?;
    let map = sc.mapping(m, net.mode);
    let gs = g.gaussians(raw, &map)?;
    Ok((raw, gs))
}

pub(crate) fn check_raw(raw: &Mat) -> Result<()> {
    for r in 0..raw.rows() {
        if let Some(c) = raw.row(r).iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "generated Gaussian {r} has a non-finite {} channel",
                RAW_CHANNELS[c]
            )));
        }
    }
    Ok(())
}

/// Everything the encoder computed besides the stream.
#[derive(Clone, Debug)]
pub struct EncodeOutput {
    pub stream: LayeredBitstream,
    /// Reconstructed features per coded level.
    pub recon: BTreeMap<u32, Mat>,
    /// Symbols per coded level, row-major.
    pub symbols: BTreeMap<u32, Vec<i32>>,
    /// Model estimate of the feature bits per level.
    pub estimated_bits: BTreeMap<u32, f64>,
    /// Feature values clamped into the symbol range.
    pub clamped: usize,
}

fn check_cloud(pc: &PointCloud, cfg: &ModelConfig) -> Result<()> {
    if pc.bit_depth != cfg.depth {
        return Err(Error::Config(format!(
            "cloud has bit depth {} but the model expects {}",
            pc.bit_depth, cfg.depth
        )));
    }
    if pc.is_empty() {
        return Err(Error::Config("cannot encode an empty cloud".into()));
    }
    Ok(())
}

/// Encodes the colors of `pc` for levels `L..=top` (default `M_max`).
pub fn encode_pipeline(pc: &PointCloud, model: &B2PModel, top: Option<u32>) -> Result<EncodeOutput> {
    let cfg = model.config;
    check_cloud(pc, &cfg)?;
    let top = top.unwrap_or(cfg.max_level);
    if !cfg.coded_levels().contains(&top) {
        return Err(Error::LevelUnavailable(format!(
            "cannot code up to level {top}; the model codes {}..={}",
            cfg.base, cfg.max_level
        )));
    }
    let hier = build_hierarchy(pc, cfg.base)?;
    let geometry = encode_geometry(&hier)?;
    let sc = Scaffold::new(hier, &cfg, cfg.depth)?;
    let mut g = Graph::new(&model.store);
    let colors = g.input(color_matrix(pc));
    let feats = convert_chain(&mut g, model, &sc, colors)?;
    let mut out = EncodeOutput {
        stream: LayeredBitstream {
            header: StreamHeader {
                version: crate::entropy::bitstream::VERSION,
                depth: cfg.depth as u8,
                base: cfg.base as u8,
                max_level: cfg.max_level as u8,
                channels: cfg.squeezed as u8,
                model_hash: model.hash(),
            },
            geometry,
            levels: Vec::new(),
        },
        recon: BTreeMap::new(),
        symbols: BTreeMap::new(),
        estimated_bits: BTreeMap::new(),
        clamped: 0,
    };
    let mut prev = None;
    for n in cfg.base..=top {
        let maps = sc.maps(n)?;
        let ctx = context(&mut g, model, &sc, n, prev);
        let y = model.squeeze[&n].apply(&mut g, feats[&n], ctx, maps)?;
        let (q, clamped) = quantize_all(g.value(y).as_slice());
        out.clamped += clamped;
        let (mu, sigma) = model.entropy[&n].apply(&mut g, ctx, maps)?;
        let (mu, sigma) = (g.value(mu).as_slice(), g.value(sigma).as_slice());
        let payload = encode_gaussian(&q, mu, sigma)?;
        out.estimated_bits.insert(n, estimate_bits(&q, mu, sigma));
        let qm = Mat::from_vec(sc.hier.len(n), cfg.squeezed, q.iter().map(|&v| v as f64).collect())?;
        let qv = g.input(qm);
        let r = model.reconstruct[&n].apply(&mut g, qv, ctx, maps)?;
        out.stream.levels.push(LevelChunk {
            level: n as u8,
            num_points: sc.hier.len(n) as u32,
            payload,
        });
        out.symbols.insert(n, q);
        out.recon.insert(n, g.value(r).clone());
        prev = Some(r);
    }
    Ok(out)
}

/// Decoded Gaussians plus the decoder-side reconstructions.
#[derive(Clone, Debug)]
pub struct DecodeOutput {
    pub level: u32,
    pub gaussians: Vec<Gaussian3D>,
    pub recon: BTreeMap<u32, Mat>,
}

/// Checks that a stream was produced by `model` and can be decoded at `m`.
pub fn check_stream(stream: &LayeredBitstream, model: &B2PModel, m: u32) -> Result<()> {
    let cfg = &model.config;
    let h = &stream.header;
    if h.model_hash != model.hash() {
        return Err(Error::Incompatible(format!(
            "stream was coded with model {:016x}, this model is {:016x}",
            h.model_hash,
            model.hash()
        )));
    }
    if (h.depth as u32, h.base as u32, h.channels as usize) != (cfg.depth, cfg.base, cfg.squeezed) {
        return Err(Error::Incompatible("stream layout differs from the model configuration".into()));
    }
    let top = stream.top_level().unwrap_or(0);
    if m < cfg.base || m > top || stream.levels.is_empty() {
        return Err(Error::LevelUnavailable(format!(
            "level {m} requested, stream carries {}..={top}",
            cfg.base
        )));
    }
    if !cfg.render_levels().contains(&m) {
        return Err(Error::LevelUnavailable(format!(
            "level {m} has no generation head (model renders {}..={})",
            cfg.min_level, cfg.max_level
        )));
    }
    Ok(())
}

/// Decodes feature levels `L..=m` and generates Gaussians at level `m`.
pub fn decode_pipeline(stream: &LayeredBitstream, model: &B2PModel, m: u32) -> Result<DecodeOutput> {
    check_stream(stream, model, m)?;
    let cfg = model.config;
    let hier = decode_geometry(&stream.geometry, cfg.depth, cfg.base)?;
    let sc = Scaffold::new(hier, &cfg, m)?;
    let mut g = Graph::new(&model.store);
    let mut recon = BTreeMap::new();
    let mut prev = None;
    for n in cfg.base..=m {
        let chunk = stream
            .chunk(n)
            .ok_or_else(|| Error::LevelUnavailable(format!("level {n} missing from the stream")))?;
        let count = sc.hier.len(n);
        if chunk.num_points as usize != count {
            return Err(Error::Consistency(format!(
                "level {n} chunk declares {} points, geometry has {count}",
                chunk.num_points
            )));
        }
        let maps = sc.maps(n)?;
        let ctx = context(&mut g, model, &sc, n, prev);
        let (mu, sigma) = model.entropy[&n].apply(&mut g, ctx, maps)?;
        let q = decode_gaussian(&chunk.payload, g.value(mu).as_slice(), g.value(sigma).as_slice())?;
        let qm = Mat::from_vec(count, cfg.squeezed, q.into_iter().map(|v| v as f64).collect())?;
        let qv = g.input(qm);
        let r = model.reconstruct[&n].apply(&mut g, qv, ctx, maps)?;
        recon.insert(n, g.value(r).clone());
        prev = Some(r);
    }
    let (_, gs) = generate(&mut g, model, &sc, m, prev.expect("at least the base level"))?;
    let gaussians = crate::autodiff::rows_to_gaussians(g.value(gs));
    Ok(DecodeOutput {
        level: m,
        gaussians,
        recon,
    })
}
