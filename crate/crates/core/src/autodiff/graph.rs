//! Reverse-mode differentiation over whole tensors. Every operation appends
//! a node holding its value; `backward` walks the nodes in reverse order
//! once, calling each operation's vector-Jacobian product.

use std::rc::Rc;

use super::params::{Gradients, ParamId, ParamStore};
use crate::entropy::prob::bits_with_grad;
use crate::mat::Mat;
use crate::metrics::ssim_loss_grad;
use crate::sparse::conv::{
    conv_backward, conv_forward, geom_backward, geom_forward, linear_backward, linear_forward, tconv_backward,
    tconv_forward, GeomCache,
};
use crate::sparse::KernelMap;
use crate::splat::{rasterize, rasterize_backward, Camera, Gaussian3D, Image, GAUSSIAN_PARAMS};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Smallest scale a generated Gaussian may take.
pub const SCALE_MIN: f64 = 1e-4;
/// Largest scale, in voxels of the generating level.
pub const SCALE_MAX_VOXELS: f64 = 4.0;

/// How raw 14-channel rows become Gaussian parameters.
#[derive(Clone, Debug)]
pub struct GaussianMapping {
    /// Grid centers the offsets are added to, one per row.
    pub centers: Vec<[f64; 3]>,
    /// Voxel edge length of the generating level, in level-N units.
    pub voxel: f64,
    /// Direct mode fixes opacity to 1.
    pub direct: bool,
}

enum Op {
    Leaf,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Option<Var>, km: Rc<KernelMap> },
    Geom { x: Var, w: Var, b: Option<Var>, km: Rc<KernelMap>, cache: GeomCache },
    TConv { x: Var, w: Var, b: Option<Var> },
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Exp(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Add(Var, Var),
    Scale(Var, f64),
    Concat(Var, Var),
    Columns { x: Var, start: usize },
    Hold { x: Var, parent_of: Rc<Vec<u32>> },
    Pool { x: Var, child_starts: Rc<Vec<u32>> },
    Gauss { raw: Var, map: Rc<GaussianMapping> },
    Render { g: Var, cam: Rc<Camera> },
    L1 { x: Var, target: Rc<Mat> },
    Ssim { x: Var, target: Rc<Image> },
    Rate { x: Var, mu: Var, sigma: Var },
    Sum(Vec<(Var, f64)>),
}

struct Node {
    value: Mat,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn bias_vec(m: &Mat) -> &[f64] {
    m.as_slice()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let v = self.params.get(id).clone();
        self.push(v, Op::Param(id))
    }

    fn bias_of(&self, b: Option<Var>) -> Option<&[f64]> {
        b.map(|b| bias_vec(self.value(b)))
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, km: &Rc<KernelMap>) -> Result<Var> {
        let y = conv_forward(self.value(x), km, self.value(w), self.bias_of(b))?;
        Ok(self.push(y, Op::Conv { x, w, b, km: km.clone() }))
    }

    pub fn geom_conv(&mut self, x: Var, w: Var, b: Option<Var>, km: &Rc<KernelMap>) -> Result<Var> {
        let (y, cache) = geom_forward(self.value(x), km, self.value(w), self.bias_of(b))?;
        Ok(self.push(
            y,
            Op::Geom {
                x,
                w,
                b,
                km: km.clone(),
                cache,
            },
        ))
    }

    pub fn tconv(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = tconv_forward(self.value(x), self.value(w), self.bias_of(b))?;
        Ok(self.push(y, Op::TConv { x, w, b }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = linear_forward(self.value(x), self.value(w), self.bias_of(b))?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::exp);
        self.push(y, Op::Exp(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let y = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(y, Op::Clamp { x, lo, hi })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "cannot add {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let y = self.value(x).map(|v| v * k);
        self.push(y, Op::Scale(x, k))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).hcat(self.value(b))?;
        Ok(self.push(y, Op::Concat(a, b)))
    }

    pub fn columns(&mut self, x: Var, start: usize, end: usize) -> Var {
        let y = self.value(x).columns(start, end);
        self.push(y, Op::Columns { x, start })
    }

    /// Zero-order hold to the next level.
    pub fn hold(&mut self, x: Var, parent_of: &Rc<Vec<u32>>) -> Var {
        let y = crate::voxel::hold_rows(self.value(x), parent_of);
        self.push(
            y,
            Op::Hold {
                x,
                parent_of: parent_of.clone(),
            },
        )
    }

    /// Mean over occupied children.
    pub fn pool(&mut self, x: Var, child_starts: &Rc<Vec<u32>>) -> Var {
        let y = crate::voxel::pool_rows(self.value(x), child_starts);
        self.push(
            y,
            Op::Pool {
                x,
                child_starts: child_starts.clone(),
            },
        )
    }

    /// Maps raw 14-channel rows to Gaussian parameter rows.
    pub fn gaussians(&mut self, raw: Var, map: &Rc<GaussianMapping>) -> Result<Var> {
        let r = self.value(raw);
        if r.cols() != GAUSSIAN_PARAMS || r.rows() != map.centers.len() {
            return Err(Error::Dimension(format!(
                "gaussian head gives {:?} for {} centers",
                r.shape(),
                map.centers.len()
            )));
        }
        let mut y = Mat::zeros(r.rows(), GAUSSIAN_PARAMS);
        for i in 0..r.rows() {
            let g = gaussian_row(r.row(i), map.centers[i], map.voxel, map.direct);
            y.row_mut(i).copy_from_slice(&g.to_array());
        }
        Ok(self.push(y, Op::Gauss { raw, map: map.clone() }))
    }

    /// Renders Gaussian parameter rows to a `(H * W) x 3` image.
    pub fn render(&mut self, g: Var, cam: &Rc<Camera>) -> Var {
        let gs = rows_to_gaussians(self.value(g));
        let y = rasterize(&gs, cam).image.to_mat();
        self.push(y, Op::Render { g, cam: cam.clone() })
    }

    /// Mean absolute difference to a constant target.
    pub fn l1(&mut self, x: Var, target: &Rc<Mat>) -> Result<Var> {
        let v = self.value(x);
        if v.shape() != target.shape() {
            return Err(Error::Dimension("l1 operands differ in shape".into()));
        }
        let s: f64 = v.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (a - b).abs()).sum();
        let y = Mat::scalar(s / v.len() as f64);
        Ok(self.push(y, Op::L1 { x, target: target.clone() }))
    }

    /// `1 - SSIM` against a constant target image.
    pub fn ssim_loss(&mut self, x: Var, target: &Rc<Image>) -> Result<Var> {
        let im = Image::from_mat(target.width, target.height, self.value(x))?;
        let (l, _) = ssim_loss_grad(&im, target);
        Ok(self.push(Mat::scalar(l), Op::Ssim { x, target: target.clone() }))
    }

    /// Bits of `x` under per-element Gaussians, probability floored at 2^-16.
    pub fn rate(&mut self, x: Var, mu: Var, sigma: Var) -> Result<Var> {
        let (xv, mv, sv) = (self.value(x), self.value(mu), self.value(sigma));
        if xv.shape() != mv.shape() || mv.shape() != sv.shape() {
            return Err(Error::Dimension("rate operands differ in shape".into()));
        }
        let mut bits = 0.0;
        for ((a, m), s) in xv.as_slice().iter().zip(mv.as_slice()).zip(sv.as_slice()) {
            if !(a.is_finite() && m.is_finite() && s.is_finite()) {
                return Err(Error::Numeric("non-finite value entering the rate term".into()));
            }
            bits += bits_with_grad(*a, *m, *s).0;
        }
        Ok(self.push(Mat::scalar(bits), Op::Rate { x, mu, sigma }))
    }

    /// Weighted sum of scalar nodes.
    pub fn sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, c) in terms {
            let m = self.value(v);
            if m.shape() != (1, 1) {
                return Err(Error::Contract(format!("sum term of shape {:?} is not scalar", m.shape())));
            }
            s += c * m.item();
        }
        Ok(self.push(Mat::scalar(s), Op::Sum(terms.to_vec())))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        let mut out = Gradients::zeros(self.params);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut send = |v: Var, g: Mat| match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            };
            let bias_grad = |db: Vec<f64>| Mat::from_vec(1, db.len(), db).expect("bias gradient shape");
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &dy),
                Op::Conv { x, w, b, km } => {
                    let (dx, dw, db) = conv_backward(self.value(*x), km, self.value(*w), &dy);
                    send(*x, dx);
                    send(*w, dw);
                    if let Some(b) = b {
                        send(*b, bias_grad(db));
                    }
                }
                Op::Geom { x, w, b, km, cache } => {
                    let (dx, dw, db) = geom_backward(self.value(*x), km, self.value(*w), cache, &dy);
                    send(*x, dx);
                    send(*w, dw);
                    if let Some(b) = b {
                        send(*b, bias_grad(db));
                    }
                }
                Op::TConv { x, w, b } => {
                    let (dx, dw, db) = tconv_backward(self.value(*x), self.value(*w), &dy);
                    send(*x, dx);
                    send(*w, dw);
                    if let Some(b) = b {
                        send(*b, bias_grad(db));
                    }
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = linear_backward(self.value(*x), self.value(*w), &dy);
                    send(*x, dx);
                    send(*w, dw);
                    if let Some(b) = b {
                        send(*b, bias_grad(db));
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut g = dy;
                    for (d, v) in g.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        if *v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    send(*x, g);
                }
                Op::Exp(x) => {
                    let mut g = dy;
                    for (d, y) in g.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                        *d *= y;
                    }
                    send(*x, g);
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = self.value(*x);
                    let mut g = dy;
                    for (d, v) in g.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        if *v < *lo || *v > *hi {
                            *d = 0.0;
                        }
                    }
                    send(*x, g);
                }
                Op::Add(a, b) => {
                    send(*a, dy.clone());
                    send(*b, dy);
                }
                Op::Scale(x, k) => send(*x, dy.map(|v| v * k)),
                Op::Concat(a, b) => {
                    let ca = self.value(*a).cols();
                    send(*a, dy.columns(0, ca));
                    send(*b, dy.columns(ca, dy.cols()));
                }
                Op::Columns { x, start } => {
                    let xv = self.value(*x);
                    let mut g = Mat::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        g.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                    }
                    send(*x, g);
                }
                Op::Hold { x, parent_of } => {
                    let xv = self.value(*x);
                    let mut g = Mat::zeros(xv.rows(), xv.cols());
                    for (c, &p) in parent_of.iter().enumerate() {
                        for (d, v) in g.row_mut(p as usize).iter_mut().zip(dy.row(c)) {
                            *d += v;
                        }
                    }
                    send(*x, g);
                }
                Op::Pool { x, child_starts } => {
                    let xv = self.value(*x);
                    let mut g = Mat::zeros(xv.rows(), xv.cols());
                    for p in 0..child_starts.len() - 1 {
                        let (s, e) = (child_starts[p] as usize, child_starts[p + 1] as usize);
                        let k = 1.0 / (e - s) as f64;
                        for c in s..e {
                            for (d, v) in g.row_mut(c).iter_mut().zip(dy.row(p)) {
                                *d = v * k;
                            }
                        }
                    }
                    send(*x, g);
                }
                Op::Gauss { raw, map } => {
                    let rv = self.value(*raw);
                    let mut g = Mat::zeros(rv.rows(), rv.cols());
                    for r in 0..rv.rows() {
                        let d = gaussian_row_vjp(rv.row(r), map.voxel, map.direct, dy.row(r));
                        g.row_mut(r).copy_from_slice(&d);
                    }
                    send(*raw, g);
                }
                Op::Render { g, cam } => {
                    let gs = rows_to_gaussians(self.value(*g));
                    let d = rasterize_backward(&gs, cam, dy.as_slice());
                    let flat: Vec<f64> = d.into_iter().flatten().collect();
                    send(*g, Mat::from_vec(gs.len(), GAUSSIAN_PARAMS, flat)?);
                }
                Op::L1 { x, target } => {
                    let xv = self.value(*x);
                    let k = dy.item() / xv.len() as f64;
                    let g = Mat::from_fn(xv.rows(), xv.cols(), |r, c| {
                        let d = xv.get(r, c) - target.get(r, c);
                        if d > 0.0 {
                            k
                        } else if d < 0.0 {
                            -k
                        } else {
                            0.0
                        }
                    });
                    send(*x, g);
                }
                Op::Ssim { x, target } => {
                    let im = Image::from_mat(target.width, target.height, self.value(*x))?;
                    let (_, gr) = ssim_loss_grad(&im, target);
                    let k = dy.item();
                    let rows = im.width * im.height;
                    send(*x, Mat::from_vec(rows, 3, gr.into_iter().map(|v| v * k).collect())?);
                }
                Op::Rate { x, mu, sigma } => {
                    let (xv, mv, sv) = (self.value(*x), self.value(*mu), self.value(*sigma));
                    let k = dy.item();
                    let mut gx = Mat::zeros(xv.rows(), xv.cols());
                    let mut gm = gx.clone();
                    let mut gs = gx.clone();
                    for i in 0..xv.len() {
                        let (_, d) = bits_with_grad(xv.as_slice()[i], mv.as_slice()[i], sv.as_slice()[i]);
                        gx.as_mut_slice()[i] = k * d[0];
                        gm.as_mut_slice()[i] = k * d[1];
                        gs.as_mut_slice()[i] = k * d[2];
                    }
                    send(*x, gx);
                    send(*mu, gm);
                    send(*sigma, gs);
                }
                Op::Sum(terms) => {
                    for &(v, c) in terms {
                        send(v, Mat::scalar(c * dy.item()));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Raw head row to Gaussian: offsets `tanh * voxel`, scales
/// `exp * voxel / 2` clamped, normalized quaternion, sigmoid opacity (or 1)
/// and sigmoid color.
pub fn gaussian_row(raw: &[f64], center: [f64; 3], voxel: f64, direct: bool) -> Gaussian3D {
    let mean = std::array::from_fn(|k| center[k] + raw[k].tanh() * voxel);
    let scales = std::array::from_fn(|k| (raw[3 + k].exp() * voxel / 2.0).clamp(SCALE_MIN, SCALE_MAX_VOXELS * voxel));
    let q = [raw[6], raw[7], raw[8], raw[9]];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let quat = if n < 1e-8 { [1.0, 0.0, 0.0, 0.0] } else { q.map(|v| v / n) };
    let opacity = if direct { 1.0 } else { sigmoid(raw[10]) };
    let color = std::array::from_fn(|k| sigmoid(raw[11 + k]));
    Gaussian3D {
        mean,
        scales,
        quat,
        opacity,
        color,
    }
}

fn gaussian_row_vjp(raw: &[f64], voxel: f64, direct: bool, dy: &[f64]) -> [f64; GAUSSIAN_PARAMS] {
    let mut d = [0.0; GAUSSIAN_PARAMS];
    for k in 0..3 {
        let t = raw[k].tanh();
        d[k] = dy[k] * voxel * (1.0 - t * t);
        let s = raw[3 + k].exp() * voxel / 2.0;
        if (SCALE_MIN..=SCALE_MAX_VOXELS * voxel).contains(&s) {
            d[3 + k] = dy[3 + k] * s;
        }
        let c = sigmoid(raw[11 + k]);
        d[11 + k] = dy[11 + k] * c * (1.0 - c);
    }
    let q = [raw[6], raw[7], raw[8], raw[9]];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n >= 1e-8 {
        let u = q.map(|v| v / n);
        let dot: f64 = (0..4).map(|k| u[k] * dy[6 + k]).sum();
        for k in 0..4 {
            d[6 + k] = (dy[6 + k] - u[k] * dot) / n;
        }
    }
    if !direct {
        let o = sigmoid(raw[10]);
        d[10] = dy[10] * o * (1.0 - o);
    }
    d
}

pub fn rows_to_gaussians(m: &Mat) -> Vec<Gaussian3D> {
    (0..m.rows()).map(|r| Gaussian3D::from_slice(m.row(r))).collect()
}
