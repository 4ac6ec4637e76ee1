//! Rate-distortion evaluation of one stream against ground-truth views.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ms_ssim, psnr, ssim};
use crate::entropy::{decode_geometry, LayeredBitstream, HEADER_BYTES};
use crate::net::{decode_pipeline, B2PModel};
use crate::splat::{rasterize, Camera, Gaussian3D, Image};
use crate::{Error, Result};

/// One decoded level of one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RDRow {
    pub lambda: Option<f64>,
    pub level: u32,
    pub bpp_header: f64,
    pub bpp_geometry: f64,
    /// Feature bits per point of every level needed to decode `level`.
    pub bpp_features: BTreeMap<u32, f64>,
    pub bpp_features_total: f64,
    pub bpp_total: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    /// Always empty; kept so tables line up with perceptual-metric columns.
    pub lpips: Option<f64>,
    pub decode_ms: f64,
    pub render_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RDReport {
    pub points: usize,
    pub file_bytes: usize,
    pub views: usize,
    pub rows: Vec<RDRow>,
    pub note: String,
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Levels to decode; all render levels the stream carries when empty.
    pub levels: Vec<u32>,
    pub lambda: Option<f64>,
    /// Write `view_<M>_<k>.png` renders here.
    pub dump_views: Option<PathBuf>,
}

/// Renders `gs` from every camera, in camera order.
pub fn render_views(gs: &[Gaussian3D], cams: &[Camera]) -> Vec<Image> {
    cams.par_iter().map(|c| rasterize(gs, c).image).collect()
}

/// Mean PSNR, SSIM and MS-SSIM over paired views.
pub fn view_metrics(renders: &[Image], truth: &[Image]) -> Result<(f64, f64, f64)> {
    if renders.len() != truth.len() || renders.is_empty() {
        return Err(Error::Dimension(format!("{} renders for {} reference views", renders.len(), truth.len())));
    }
    for (a, b) in renders.iter().zip(truth) {
        if (a.width, a.height) != (b.width, b.height) {
            return Err(Error::Dimension("render and reference sizes differ".into()));
        }
    }
    let per: Vec<(f64, f64, f64)> = renders
        .par_iter()
        .zip(truth)
        .map(|(a, b)| (psnr(a, b), ssim(a, b), ms_ssim(a, b)))
        .collect();
    let n = per.len() as f64;
    let mut out = (0.0, 0.0, 0.0);
    for (p, s, m) in per {
        out.0 += p / n;
        out.1 += s / n;
        out.2 += m / n;
    }
    Ok(out)
}

/// Decodes `stream` at each requested level, renders `cams` and compares
/// against `truth`. Rates are per point of the coded geometry.
pub fn evaluate(
    stream: &LayeredBitstream,
    model: &B2PModel,
    cams: &[Camera],
    truth: &[Image],
    opts: &EvalOptions,
) -> Result<RDReport> {
    let cfg = model.config;
    let hier = decode_geometry(&stream.geometry, cfg.depth, cfg.base)?;
    let points = hier.len(cfg.depth);
    let per_point = |bytes: usize| 8.0 * bytes as f64 / points as f64;
    let top = stream.top_level().unwrap_or(0);
    let levels: Vec<u32> = if opts.levels.is_empty() {
        cfg.render_levels().filter(|&m| m <= top).collect()
    } else {
        opts.levels.clone()
    };
    if let Some(dir) = &opts.dump_views {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rows = Vec::new();
    for &m in &levels {
        // untimed warmup
        decode_pipeline(stream, model, m)?;
        let t = Instant::now();
        let dec = decode_pipeline(stream, model, m)?;
        let decode_ms = t.elapsed().as_secs_f64() * 1e3;
        let t = Instant::now();
        let renders = render_views(&dec.gaussians, cams);
        let render_ms = t.elapsed().as_secs_f64() * 1e3 / cams.len().max(1) as f64;
        let (p, s, ms) = view_metrics(&renders, truth)?;
        if let Some(dir) = &opts.dump_views {
            for (k, im) in renders.iter().enumerate() {
                im.save_png(dir.join(format!("view_{m}_{k:02}.png")))?;
            }
        }
        let bpp_features: BTreeMap<u32, f64> = (cfg.base..=m)
            .map(|n| {
                let b = stream
                    .level_bytes(n)
                    .ok_or_else(|| Error::LevelUnavailable(format!("level {n} missing from the stream")))?;
                Ok((n, per_point(b)))
            })
            .collect::<Result<_>>()?;
        let bpp_features_total: f64 = bpp_features.values().sum();
        let (bpp_header, bpp_geometry) = (per_point(HEADER_BYTES), per_point(stream.geometry_bytes()));
        rows.push(RDRow {
            lambda: opts.lambda,
            level: m,
            bpp_header,
            bpp_geometry,
            bpp_features,
            bpp_features_total,
            bpp_total: bpp_header + bpp_geometry + bpp_features_total,
            psnr: p,
            ssim: s,
            ms_ssim: ms,
            lpips: None,
            decode_ms,
            render_ms,
        });
    }
    Ok(RDReport {
        points,
        file_bytes: stream.total_bytes(),
        views: cams.len(),
        rows,
        note: "ground truth is a synthetic reference render; values are not comparable to mesh-based benchmarks"
            .into(),
    })
}

impl RDReport {
    /// One row per decoded level; per-level feature rates as `bpp_L<n>` columns.
    pub fn to_csv(&self) -> String {
        let levels: Vec<u32> = self
            .rows
            .iter()
            .flat_map(|r| r.bpp_features.keys().copied())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut s = String::from("lambda,level,bpp_header,bpp_geometry");
        for n in &levels {
            let _ = write!(s, ",bpp_L{n}");
        }
        s.push_str(",bpp_features,bpp_total,psnr,ssim,ms_ssim,lpips,decode_ms,render_ms\n");
        for r in &self.rows {
            let lambda = r.lambda.map(|l| l.to_string()).unwrap_or_default();
            let _ = write!(s, "{lambda},{},{},{}", r.level, r.bpp_header, r.bpp_geometry);
            for n in &levels {
                let v = r.bpp_features.get(n).map(|v| v.to_string()).unwrap_or_default();
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(
                s,
                ",{},{},{},{},{},,{},{}",
                r.bpp_features_total, r.bpp_total, r.psnr, r.ssim, r.ms_ssim, r.decode_ms, r.render_ms
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
