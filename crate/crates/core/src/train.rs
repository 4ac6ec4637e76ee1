//! End-to-end training: noisy quantization, rate over the coded levels and
//! rendered distortion over the render levels, optimized with Adam.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, Var};
use crate::mat::Mat;
use crate::net::{color_matrix, context, convert_chain, generate, B2PModel, ModelConfig, Scaffold};
use crate::rng::SeedTree;
use crate::splat::{camera_at_azimuth, rasterize, Camera, Gaussian3D, Image, Intrinsics};
use crate::voxel::{build_hierarchy, PointCloud};
use crate::{Error, Result};

/// Scale of the reference Gaussians placed on level-N voxels.
pub const REFERENCE_SCALE: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    /// L1 weight.
    pub alpha: f64,
    /// `1 - SSIM` weight.
    pub beta: f64,
    /// Perceptual term weight. No perceptual network ships, so the term is
    /// always zero and this only records the intended weight.
    pub gamma: f64,
    pub lr: f64,
    /// Scenes per step.
    pub batch: usize,
    pub iters: usize,
    pub views_per_scene: usize,
    pub base: u32,
    pub min_level: u32,
    pub max_level: u32,
    pub depth: u32,
    pub seed: u64,
    /// Side of the square training renders in pixels.
    pub image_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 10.0,
            alpha: 3.0,
            beta: 0.2,
            gamma: 0.0,
            lr: 1e-4,
            batch: 4,
            iters: 60_000,
            views_per_scene: 4,
            base: 7,
            min_level: 8,
            max_level: 9,
            depth: 10,
            seed: 0,
            image_size: 256,
        }
    }
}

impl TrainConfig {
    /// Small run on a single synthetic scene: N=6, L=3, M in {4, 5}.
    pub fn toy() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 1,
            iters: 2000,
            base: 3,
            min_level: 4,
            max_level: 5,
            depth: 6,
            image_size: 64,
            ..Self::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            depth: self.depth,
            base: self.base,
            min_level: self.min_level,
            max_level: self.max_level,
            ..ModelConfig::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lr", self.lr),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.batch == 0 || self.views_per_scene == 0 || self.image_size < 8 {
            return Err(Error::Config("batch and views must be positive, images at least 8 px".into()));
        }
        Ok(())
    }
}

/// Cameras on a horizontal circle around the grid center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewRig {
    pub target: [f64; 3],
    pub radius: f64,
    pub height: f64,
    pub intr: Intrinsics,
}

impl ViewRig {
    /// Rig framing a `2^depth` grid in `size x size` renders.
    pub fn for_depth(depth: u32, size: usize) -> Self {
        let g = (1u64 << depth) as f64;
        let (radius, height) = (2.0 * g, 0.5 * g);
        let dist = (radius * radius + height * height).sqrt();
        let f = size as f64 / 2.0 * dist / (0.45 * g);
        ViewRig {
            target: [g / 2.0; 3],
            radius,
            height,
            intr: Intrinsics {
                width: size,
                height: size,
                fx: f,
                fy: f,
            },
        }
    }

    pub fn at(&self, theta: f64) -> Result<Camera> {
        camera_at_azimuth(theta, self.radius, self.height, self.target, self.intr)
    }

    /// `count` equally spaced views starting at azimuth 0.
    pub fn circle(&self, count: usize) -> Result<Vec<Camera>> {
        crate::splat::camera_circle(count, self.radius, self.height, self.target, self.intr)
    }

    /// `count` views, one per equal arc, each at a uniform azimuth within its arc.
    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> Result<Vec<Camera>> {
        let arc = 2.0 * PI / count as f64;
        (0..count)
            .map(|k| self.at((k as f64 + rng.gen::<f64>()) * arc))
            .collect()
    }
}

/// One opaque isotropic Gaussian per voxel, centered in the voxel.
pub fn reference_gaussians(pc: &PointCloud) -> Vec<Gaussian3D> {
    pc.points
        .iter()
        .zip(&pc.colors)
        .map(|(p, c)| Gaussian3D::isotropic(p.map(|v| v as f64 + 0.5), REFERENCE_SCALE, 1.0, *c))
        .collect()
}

/// A training cloud with its precomputed kernel maps and reference splats.
pub struct Scene {
    pub cloud: PointCloud,
    pub reference: Vec<Gaussian3D>,
    scaffold: Scaffold,
    colors: Mat,
}

impl Scene {
    pub fn new(cloud: PointCloud, cfg: &ModelConfig) -> Result<Self> {
        if cloud.bit_depth != cfg.depth {
            return Err(Error::Config(format!(
                "scene has bit depth {} but the model expects {}",
                cloud.bit_depth, cfg.depth
            )));
        }
        if cloud.is_empty() {
            return Err(Error::Config("empty training scene".into()));
        }
        let hier = build_hierarchy(&cloud, cfg.base)?;
        let scaffold = Scaffold::new(hier, cfg, cfg.depth)?;
        Ok(Scene {
            colors: color_matrix(&cloud),
            reference: reference_gaussians(&cloud),
            cloud,
            scaffold,
        })
    }

    pub fn ground_truth(&self, cam: &Camera) -> Image {
        rasterize(&self.reference, cam).image
    }
}

/// Loss components of one evaluation, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// Feature bits per original point, summed over coded levels.
    pub rate: f64,
    /// Mean L1 per render level and view.
    pub l1: f64,
    /// Mean `1 - SSIM` per render level and view.
    pub ssim: f64,
    pub total: f64,
}

fn finite(v: f64, what: impl FnOnce() -> String) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{} is {v}", what())))
    }
}

/// Rate-distortion loss of `scene` with quantization replaced by `noise`
/// draws (pass `None` to round as the codec does).
pub fn scene_loss(
    g: &mut Graph,
    model: &B2PModel,
    scene: &Scene,
    cams: &[Camera],
    truth: &[Image],
    cfg: &TrainConfig,
    mut noise: Option<&mut ChaCha8Rng>,
) -> Result<(Var, LossTerms)> {
    let mc = &model.config;
    let sc = &scene.scaffold;
    let colors = g.input(scene.colors.clone());
    let feats = convert_chain(g, model, sc, colors)?;
    let mut terms = Vec::new();
    let mut out = LossTerms::default();
    let points = scene.cloud.len() as f64;
    let mut recon = BTreeMap::new();
    let mut prev = None;
    for n in mc.coded_levels() {
        let maps = sc.maps(n)?;
        let ctx = context(g, model, sc, n, prev);
        let y = model.squeeze[&n].apply(g, feats[&n], ctx, maps)?;
        let yq = match noise.as_deref_mut() {
            Some(rng) => {
                let (r, c) = g.value(y).shape();
                let u = g.input(Mat::from_fn(r, c, |_, _| rng.gen_range(-0.5..0.5)));
                g.add(y, u)?
            }
            None => {
                let q = g.value(y).map(f64::round);
                g.input(q)
            }
        };
        let (mu, sigma) = model.entropy[&n].apply(g, ctx, maps)?;
        let bits = g.rate(yq, mu, sigma)?;
        finite(g.value(bits).item(), || format!("rate term at level {n}"))?;
        out.rate += g.value(bits).item() / points;
        terms.push((bits, 1.0 / points));
        let r = model.reconstruct[&n].apply(g, yq, ctx, maps)?;
        recon.insert(n, r);
        prev = Some(r);
    }
    let per = 1.0 / (cams.len() * mc.render_levels().count()) as f64;
    let k = cfg.lambda / cams.len() as f64;
    for m in mc.render_levels() {
        let (_, gs) = generate(g, model, sc, m, recon[&m])?;
        for (v, (cam, gt)) in cams.iter().zip(truth).enumerate() {
            let img = g.render(gs, &Rc::new(cam.clone()));
            let l1 = g.l1(img, &Rc::new(gt.to_mat()))?;
            let ss = g.ssim_loss(img, &Rc::new(gt.clone()))?;
            finite(g.value(l1).item(), || format!("L1 term at level {m}, view {v}"))?;
            finite(g.value(ss).item(), || format!("SSIM term at level {m}, view {v}"))?;
            out.l1 += per * g.value(l1).item();
            out.ssim += per * g.value(ss).item();
            terms.push((l1, k * cfg.alpha));
            terms.push((ss, k * cfg.beta));
        }
    }
    let total = g.sum(&terms)?;
    out.total = g.value(total).item();
    finite(out.total, || "total loss".into())?;
    Ok((total, out))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub rate: f64,
    pub l1: f64,
    pub ssim: f64,
    pub total: f64,
}

pub struct Trainer {
    pub model: B2PModel,
    pub cfg: TrainConfig,
    pub log: Vec<LogRow>,
    scenes: Vec<Scene>,
    rig: ViewRig,
    adam: AdamState,
    views: ChaCha8Rng,
    noise: ChaCha8Rng,
    iter: usize,
}

impl Trainer {
    pub fn new(model: B2PModel, clouds: Vec<PointCloud>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let want = cfg.model_config();
        let have = model.config;
        if (have.depth, have.base, have.min_level, have.max_level) != (want.depth, want.base, want.min_level, want.max_level) {
            return Err(Error::Config("model levels differ from the training configuration".into()));
        }
        if clouds.is_empty() {
            return Err(Error::Config("no training scenes".into()));
        }
        let scenes = clouds
            .into_iter()
            .map(|c| Scene::new(c, &have))
            .collect::<Result<Vec<_>>>()?;
        let seeds = SeedTree::new(cfg.seed).child("train");
        Ok(Trainer {
            adam: AdamState::new(&model.store),
            rig: ViewRig::for_depth(cfg.depth, cfg.image_size),
            views: seeds.stream("views"),
            noise: seeds.stream("noise"),
            model,
            cfg,
            log: Vec::new(),
            scenes,
            iter: 0,
        })
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn rig(&self) -> &ViewRig {
        &self.rig
    }

    /// One optimizer step over the next `batch` scenes.
    pub fn step(&mut self) -> Result<LogRow> {
        let mut g = Graph::new(&self.model.store);
        let mut parts = Vec::new();
        let mut sum = LossTerms::default();
        let k = 1.0 / self.cfg.batch as f64;
        for b in 0..self.cfg.batch {
            let scene = &self.scenes[(self.iter * self.cfg.batch + b) % self.scenes.len()];
            let cams = self.rig.sample(self.cfg.views_per_scene, &mut self.views)?;
            let truth: Vec<Image> = cams.iter().map(|c| scene.ground_truth(c)).collect();
            let (loss, t) = scene_loss(&mut g, &self.model, scene, &cams, &truth, &self.cfg, Some(&mut self.noise))?;
            parts.push((loss, k));
            sum.rate += k * t.rate;
            sum.l1 += k * t.l1;
            sum.ssim += k * t.ssim;
            sum.total += k * t.total;
        }
        let loss = g.sum(&parts)?;
        let grads = g.backward(loss)?;
        if !grads.all_finite() {
            let bad = (0..self.model.store.len())
                .find(|&id| !grads.get(id).all_finite())
                .map(|id| self.model.store.name(id).to_string())
                .unwrap_or_default();
            return Err(Error::Numeric(format!("gradient of {bad} is not finite at iteration {}", self.iter)));
        }
        drop(g);
        adam_step(&mut self.model.store, &grads, &mut self.adam, AdamConfig::new(self.cfg.lr));
        let row = LogRow {
            iter: self.iter,
            rate: sum.rate,
            l1: sum.l1,
            ssim: sum.ssim,
            total: sum.total,
        };
        self.log.push(row);
        self.iter += 1;
        Ok(row)
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// Model rounded to checkpoint precision.
    pub fn finish(mut self) -> (B2PModel, Vec<LogRow>) {
        self.model.round_to_f32();
        (self.model, self.log)
    }

    /// Metadata stored alongside the trained weights.
    pub fn metadata(&self) -> BTreeMap<String, serde_json::Value> {
        let mut m = BTreeMap::new();
        m.insert("train".into(), serde_json::to_value(self.cfg).unwrap_or_default());
        m.insert("iterations".into(), self.iter.into());
        m.insert(
            "perceptual_term".into(),
            "absent: no perceptual network is bundled, the gamma term contributes 0".into(),
        );
        m.insert(
            "ground_truth".into(),
            "synthetic reference splats on the level-N voxels, not mesh renders".into(),
        );
        if let Some(last) = self.log.last() {
            m.insert("final_loss".into(), serde_json::to_value(last).unwrap_or_default());
        }
        m
    }
}

/// Trains a fresh model seeded from `cfg.seed` for `cfg.iters` steps.
pub fn train(clouds: Vec<PointCloud>, cfg: TrainConfig) -> Result<(B2PModel, Vec<LogRow>)> {
    let model = B2PModel::new(cfg.model_config(), cfg.seed)?;
    let mut t = Trainer::new(model, clouds, cfg)?;
    for _ in 0..cfg.iters {
        t.step()?;
    }
    Ok(t.finish())
}

pub fn write_log_csv(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "iter,rate_bpp,l1,ssim_term,total").map_err(io)?;
    for r in rows {
        writeln!(f, "{},{},{},{},{}", r.iter, r.rate, r.l1, r.ssim, r.total).map_err(io)?;
    }
    f.flush().map_err(io)
}
