//! Convolution kernels over kernel maps. Each kernel has a forward and a
//! vector-Jacobian backward; the autodiff graph and the plain tensor ops both
//! call into these so there is exactly one implementation of the arithmetic.
//!
//! Weight layout: a `(volume * c_in) x c_out` matrix whose `k`-th block of
//! `c_in` rows holds the weights of kernel offset `k`.

use rand::Rng;

use super::kernel_map::{generated_coords, KernelMap};
use crate::mat::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Mat};
use crate::voxel::SparseTensor;
use crate::{Error, Result};

/// Floor for the active-weight norm of geometry-invariant convolution.
pub const GEOM_EPS: f64 = 1e-12;

/// Weights and optional bias for one convolution or linear layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub volume: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub weights: Mat,
    pub bias: Option<Vec<f64>>,
}

impl ConvParams {
    pub fn new(volume: usize, c_in: usize, c_out: usize, weights: Mat, bias: Option<Vec<f64>>) -> Result<Self> {
        if weights.shape() != (volume * c_in, c_out) {
            return Err(Error::Dimension(format!(
                "weights {:?} do not match {volume} offsets x {c_in} -> {c_out}",
                weights.shape()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::Dimension(format!("bias of {} for {c_out} outputs", b.len())));
            }
        }
        if !weights.all_finite() || bias.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite convolution parameter".into()));
        }
        Ok(ConvParams {
            volume,
            c_in,
            c_out,
            weights,
            bias,
        })
    }

    pub fn zeros(volume: usize, c_in: usize, c_out: usize) -> Self {
        ConvParams {
            volume,
            c_in,
            c_out,
            weights: Mat::zeros(volume * c_in, c_out),
            bias: None,
        }
    }

    /// Uniform fan-in scaled initialization, `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn kaiming<R: Rng>(volume: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (volume * c_in) as f64).sqrt();
        let weights = Mat::from_fn(volume * c_in, c_out, |_, _| rng.gen_range(-bound..bound));
        ConvParams {
            volume,
            c_in,
            c_out,
            weights,
            bias: Some(vec![0.0; c_out]),
        }
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }
}

fn gather(src: &Mat, idx: &[u32], buf: &mut Vec<f64>) {
    let c = src.cols();
    buf.clear();
    buf.reserve(idx.len() * c);
    for &i in idx {
        buf.extend_from_slice(src.row(i as usize));
    }
}

fn scatter_add(dst: &mut Mat, idx: &[u32], rows: &[f64]) {
    let c = dst.cols();
    for (j, &i) in idx.iter().enumerate() {
        for (d, v) in dst.row_mut(i as usize).iter_mut().zip(&rows[j * c..(j + 1) * c]) {
            *d += v;
        }
    }
}

fn add_bias(out: &mut Mat, bias: Option<&[f64]>) {
    if let Some(b) = bias {
        for r in 0..out.rows() {
            for (o, v) in out.row_mut(r).iter_mut().zip(b) {
                *o += v;
            }
        }
    }
}

fn column_sums(m: &Mat) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (a, v) in s.iter_mut().zip(m.row(r)) {
            *a += v;
        }
    }
    s
}

fn check_conv(x: &Mat, km: &KernelMap, w: &Mat) -> Result<(usize, usize)> {
    if x.rows() != km.in_len() {
        return Err(Error::Dimension(format!(
            "input has {} rows but the kernel map expects {}",
            x.rows(),
            km.in_len()
        )));
    }
    let c_in = x.cols();
    if w.rows() != km.volume() * c_in {
        return Err(Error::Dimension(format!(
            "weights have {} rows, expected {} offsets x {c_in} channels",
            w.rows(),
            km.volume()
        )));
    }
    Ok((c_in, w.cols()))
}

/// Plain sparse convolution: `y_u = sum_i W_i x_{u+i} (+ b)`.
pub(crate) fn conv_forward(x: &Mat, km: &KernelMap, w: &Mat, bias: Option<&[f64]>) -> Result<Mat> {
    let (c_in, c_out) = check_conv(x, km, w)?;
    let mut out = Mat::zeros(km.out_len(), c_out);
    add_bias(&mut out, bias);
    let mut xg = Vec::new();
    let mut yg = Vec::new();
    for k in 0..km.volume() {
        let ins = km.inputs(k);
        if ins.is_empty() {
            continue;
        }
        gather(x, ins, &mut xg);
        yg.clear();
        yg.resize(ins.len() * c_out, 0.0);
        let wk = &w.as_slice()[k * c_in * c_out..(k + 1) * c_in * c_out];
        gemm_acc(ins.len(), c_in, c_out, &xg, wk, &mut yg);
        scatter_add(&mut out, km.outputs(k), &yg);
    }
    Ok(out)
}

/// Gradients of [`conv_forward`]: returns `(dx, dw, db)`.
pub(crate) fn conv_backward(x: &Mat, km: &KernelMap, w: &Mat, dy: &Mat) -> (Mat, Mat, Vec<f64>) {
    let c_in = x.cols();
    let c_out = w.cols();
    let mut dx = Mat::zeros(x.rows(), c_in);
    let mut dw = Mat::zeros(w.rows(), c_out);
    let mut xg = Vec::new();
    let mut dyg = Vec::new();
    let mut dxg = Vec::new();
    for k in 0..km.volume() {
        let ins = km.inputs(k);
        if ins.is_empty() {
            continue;
        }
        let n = ins.len();
        gather(x, ins, &mut xg);
        gather(dy, km.outputs(k), &mut dyg);
        let span = k * c_in * c_out..(k + 1) * c_in * c_out;
        gemm_tn_acc(c_in, n, c_out, &xg, &dyg, &mut dw.as_mut_slice()[span.clone()]);
        dxg.clear();
        dxg.resize(n * c_in, 0.0);
        gemm_nt_acc(n, c_out, c_in, &dyg, &w.as_slice()[span], &mut dxg);
        scatter_add(&mut dx, ins, &dxg);
    }
    (dx, dw, column_sums(dy))
}

/// Intermediate state of a geometry-invariant convolution kept for backward.
#[derive(Clone, Debug)]
pub(crate) struct GeomCache {
    /// Unnormalized response `sum_active W_i x_{u+i}`.
    pub num: Mat,
    /// Active squared weight norm per output point and channel.
    pub den: Mat,
}

/// Geometry-invariant convolution: every output channel is divided by the
/// norm of the weights whose taps land on occupied voxels, summed over the
/// active offsets and all input channels.
pub(crate) fn geom_forward(x: &Mat, km: &KernelMap, w: &Mat, bias: Option<&[f64]>) -> Result<(Mat, GeomCache)> {
    let (c_in, c_out) = check_conv(x, km, w)?;
    let num = conv_forward(x, km, w, None)?;
    let norms = offset_norms(w, km.volume(), c_in, c_out);
    let mut den = Mat::zeros(km.out_len(), c_out);
    for k in 0..km.volume() {
        let nk = &norms[k * c_out..(k + 1) * c_out];
        for &b in km.outputs(k) {
            for (d, v) in den.row_mut(b as usize).iter_mut().zip(nk) {
                *d += v;
            }
        }
    }
    let mut out = Mat::zeros(km.out_len(), c_out);
    for ((o, n), d) in out.as_mut_slice().iter_mut().zip(num.as_slice()).zip(den.as_slice()) {
        *o = n / d.max(GEOM_EPS).sqrt();
    }
    add_bias(&mut out, bias);
    Ok((out, GeomCache { num, den }))
}

fn offset_norms(w: &Mat, volume: usize, c_in: usize, c_out: usize) -> Vec<f64> {
    let mut norms = vec![0.0; volume * c_out];
    for k in 0..volume {
        for ci in 0..c_in {
            let row = w.row(k * c_in + ci);
            for (n, v) in norms[k * c_out..(k + 1) * c_out].iter_mut().zip(row) {
                *n += v * v;
            }
        }
    }
    norms
}

pub(crate) fn geom_backward(x: &Mat, km: &KernelMap, w: &Mat, cache: &GeomCache, dy: &Mat) -> (Mat, Mat, Vec<f64>) {
    let c_in = x.cols();
    let c_out = w.cols();
    let mut dnum = Mat::zeros(dy.rows(), c_out);
    let mut dden = Mat::zeros(dy.rows(), c_out);
    for i in 0..dy.len() {
        let d = cache.den.as_slice()[i];
        let g = dy.as_slice()[i];
        let s = d.max(GEOM_EPS).sqrt();
        dnum.as_mut_slice()[i] = g / s;
        if d >= GEOM_EPS {
            dden.as_mut_slice()[i] = -g * cache.num.as_slice()[i] / (2.0 * d * s);
        }
    }
    let (dx, mut dw, _) = conv_backward(x, km, w, &dnum);
    let mut acc = vec![0.0; c_out];
    for k in 0..km.volume() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &b in km.outputs(k) {
            for (a, v) in acc.iter_mut().zip(dden.row(b as usize)) {
                *a += v;
            }
        }
        for ci in 0..c_in {
            let r = k * c_in + ci;
            let wr = w.row(r).to_vec();
            for ((g, wv), a) in dw.row_mut(r).iter_mut().zip(&wr).zip(&acc) {
                *g += 2.0 * wv * a;
            }
        }
    }
    (dx, dw, column_sums(dy))
}

/// Generative 2x2x2 transposed convolution: child `8p + d` gets `x_p W_d (+ b)`.
pub(crate) fn tconv_forward(x: &Mat, w: &Mat, bias: Option<&[f64]>) -> Result<Mat> {
    let c_in = x.cols();
    if w.rows() != 8 * c_in {
        return Err(Error::Dimension(format!(
            "transposed weights have {} rows, expected 8 x {c_in}",
            w.rows()
        )));
    }
    let c_out = w.cols();
    let p = x.rows();
    let mut out = Mat::zeros(8 * p, c_out);
    let mut yd = vec![0.0; p * c_out];
    for d in 0..8 {
        yd.iter_mut().for_each(|v| *v = 0.0);
        let wd = &w.as_slice()[d * c_in * c_out..(d + 1) * c_in * c_out];
        gemm_acc(p, c_in, c_out, x.as_slice(), wd, &mut yd);
        for r in 0..p {
            out.row_mut(8 * r + d).copy_from_slice(&yd[r * c_out..(r + 1) * c_out]);
        }
    }
    add_bias(&mut out, bias);
    Ok(out)
}

pub(crate) fn tconv_backward(x: &Mat, w: &Mat, dy: &Mat) -> (Mat, Mat, Vec<f64>) {
    let c_in = x.cols();
    let c_out = w.cols();
    let p = x.rows();
    let mut dx = Mat::zeros(p, c_in);
    let mut dw = Mat::zeros(w.rows(), c_out);
    let mut dyd = Vec::with_capacity(p * c_out);
    for d in 0..8 {
        dyd.clear();
        for r in 0..p {
            dyd.extend_from_slice(dy.row(8 * r + d));
        }
        let span = d * c_in * c_out..(d + 1) * c_in * c_out;
        gemm_tn_acc(c_in, p, c_out, x.as_slice(), &dyd, &mut dw.as_mut_slice()[span.clone()]);
        gemm_nt_acc(p, c_out, c_in, &dyd, &w.as_slice()[span], dx.as_mut_slice());
    }
    (dx, dw, column_sums(dy))
}

/// Per-point affine map `y = x W + b`.
pub(crate) fn linear_forward(x: &Mat, w: &Mat, bias: Option<&[f64]>) -> Result<Mat> {
    if w.rows() != x.cols() {
        return Err(Error::Dimension(format!(
            "linear layer expects {} inputs, got {}",
            w.rows(),
            x.cols()
        )));
    }
    let mut out = Mat::zeros(x.rows(), w.cols());
    add_bias(&mut out, bias);
    gemm_acc(x.rows(), x.cols(), w.cols(), x.as_slice(), w.as_slice(), out.as_mut_slice());
    Ok(out)
}

pub(crate) fn linear_backward(x: &Mat, w: &Mat, dy: &Mat) -> (Mat, Mat, Vec<f64>) {
    let mut dx = Mat::zeros(x.rows(), x.cols());
    let mut dw = Mat::zeros(w.rows(), w.cols());
    gemm_tn_acc(x.cols(), x.rows(), w.cols(), x.as_slice(), dy.as_slice(), dw.as_mut_slice());
    gemm_nt_acc(x.rows(), w.cols(), x.cols(), dy.as_slice(), w.as_slice(), dx.as_mut_slice());
    (dx, dw, column_sums(dy))
}

fn check_params(x: &SparseTensor, p: &ConvParams, volume: usize) -> Result<()> {
    if p.volume != volume {
        return Err(Error::Dimension(format!(
            "parameters cover {} offsets, operator needs {volume}",
            p.volume
        )));
    }
    if x.channels() != p.c_in {
        return Err(Error::Dimension(format!(
            "input has {} channels, layer expects {}",
            x.channels(),
            p.c_in
        )));
    }
    Ok(())
}

/// Minkowski-style sparse convolution on the kernel map's output coordinates.
pub fn sparse_conv(x: &SparseTensor, km: &KernelMap, p: &ConvParams) -> Result<SparseTensor> {
    check_params(x, p, km.volume())?;
    let feats = conv_forward(&x.feats, km, &p.weights, p.bias())?;
    Ok(SparseTensor {
        level: x.level,
        coords: km.out_coords().to_vec(),
        feats,
    })
}

/// Sparse convolution normalized by the norm of the active kernel weights.
pub fn geom_invariant_conv(x: &SparseTensor, km: &KernelMap, p: &ConvParams) -> Result<SparseTensor> {
    check_params(x, p, km.volume())?;
    let (feats, _) = geom_forward(&x.feats, km, &p.weights, p.bias())?;
    Ok(SparseTensor {
        level: x.level,
        coords: km.out_coords().to_vec(),
        feats,
    })
}

/// Spawns all eight children of every point one level up.
pub fn transposed_conv_gen(x: &SparseTensor, p: &ConvParams) -> Result<SparseTensor> {
    check_params(x, p, 8)?;
    let feats = tconv_forward(&x.feats, &p.weights, p.bias())?;
    Ok(SparseTensor {
        level: x.level + 1,
        coords: generated_coords(&x.coords),
        feats,
    })
}

pub fn pointwise_linear(x: &SparseTensor, p: &ConvParams) -> Result<SparseTensor> {
    check_params(x, p, 1)?;
    let feats = linear_forward(&x.feats, &p.weights, p.bias())?;
    Ok(SparseTensor {
        level: x.level,
        coords: x.coords.clone(),
        feats,
    })
}
