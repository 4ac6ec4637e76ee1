//! Depth-sorted alpha-blended splatting. Pixel `(i, j)` has its center at
//! the continuous screen position `(i, j)`; the background is black.

use rayon::prelude::*;

use super::camera::{mat_t_vec, Camera, Mat3};
use super::gaussian::{Gaussian3D, GAUSSIAN_PARAMS};
use super::image::Image;
use super::math::{covariance, det2, jw, project, quat_to_rot, quat_to_rot_vjp, regularize, screen_cov_raw, Projection};

pub const ALPHA_MAX: f64 = 0.999;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Blending stops once transmittance drops below this.
pub const T_MIN: f64 = 1e-4;
const TILE: usize = 16;

/// A Gaussian after projection, ready for blending.
#[derive(Clone, Debug)]
pub(crate) struct Splat {
    pub index: usize,
    pub depth: f64,
    pub center: [f64; 2],
    /// Inverse screen covariance `[a, b, c]` with `q = a dx^2 + 2 b dx dy + c dy^2`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    pub proj: Projection,
    /// Pixel rectangle `[x0, x1) x [y0, y1)` that can receive `alpha >= ALPHA_MIN`.
    pub rect: [usize; 4],
}

pub(crate) struct Prepared {
    pub splats: Vec<Splat>,
    pub skipped: usize,
}

pub(crate) fn prepare(gaussians: &[Gaussian3D], cam: &Camera) -> Prepared {
    let mut splats = Vec::with_capacity(gaussians.len());
    let mut skipped = 0;
    for (index, g) in gaussians.iter().enumerate() {
        let Some(proj) = project(g.mean, cam) else { continue };
        let sigma = covariance(g.scales, g.quat);
        let mut cov = screen_cov_raw(&sigma, cam, &proj.jacobian);
        regularize(&mut cov);
        let det = det2(&cov);
        if !(det > 0.0) || !det.is_finite() {
            skipped += 1;
            continue;
        }
        let conic = [cov[1][1] / det, -cov[0][1] / det, cov[0][0] / det];
        let qmax = 2.0 * (255.0 * g.opacity.min(1.0)).ln();
        let rect = if qmax > 0.0 {
            let hx = (qmax * cov[0][0]).sqrt() + 1.0;
            let hy = (qmax * cov[1][1]).sqrt() + 1.0;
            let span = |c: f64, h: f64, n: usize| {
                let lo = (c - h).ceil().max(0.0);
                let hi = (c + h).floor().min(n as f64 - 1.0);
                if hi < lo {
                    (0, 0)
                } else {
                    (lo as usize, hi as usize + 1)
                }
            };
            let (x0, x1) = span(proj.screen[0], hx, cam.width);
            let (y0, y1) = span(proj.screen[1], hy, cam.height);
            [x0, x1, y0, y1]
        } else {
            [0; 4]
        };
        splats.push(Splat {
            index,
            depth: proj.depth,
            center: proj.screen,
            conic,
            opacity: g.opacity,
            color: g.color,
            proj,
            rect,
        });
    }
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    Prepared { splats, skipped }
}

/// Gaussian falloff and alpha of a splat at a pixel; `clamped` is set when
/// the opacity cap binds.
#[inline]
fn eval(s: &Splat, px: f64, py: f64) -> (f64, f64, f64, bool) {
    let dx = px - s.center[0];
    let dy = py - s.center[1];
    let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    let g = (-0.5 * q).exp();
    let raw = s.opacity * g;
    if raw > ALPHA_MAX {
        (g, ALPHA_MAX, q, true)
    } else {
        (g, raw, q, false)
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    /// Transmittance left after blending, per pixel (row-major).
    pub transmittance: Vec<f64>,
    /// Primitives dropped because their screen covariance was singular.
    pub skipped: usize,
}

fn tile_lists(splats: &[Splat], cam: &Camera) -> (usize, Vec<Vec<u32>>) {
    let tx = cam.width.div_ceil(TILE);
    let ty = cam.height.div_ceil(TILE);
    let mut lists = vec![Vec::new(); tx * ty];
    for (k, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.rect;
        if x1 <= x0 || y1 <= y0 {
            continue;
        }
        for ty_ in y0 / TILE..=(y1 - 1) / TILE {
            for tx_ in x0 / TILE..=(x1 - 1) / TILE {
                lists[ty_ * tx + tx_].push(k as u32);
            }
        }
    }
    (tx, lists)
}

fn tile_pixels(t: usize, tx: usize, cam: &Camera) -> impl Iterator<Item = (usize, usize)> {
    let (bx, by) = ((t % tx) * TILE, (t / tx) * TILE);
    let (ex, ey) = ((bx + TILE).min(cam.width), (by + TILE).min(cam.height));
    (by..ey).flat_map(move |y| (bx..ex).map(move |x| (x, y)))
}

/// Tile-based rasterization with early termination.
pub fn rasterize(gaussians: &[Gaussian3D], cam: &Camera) -> RenderOutput {
    let prep = prepare(gaussians, cam);
    let (tx, lists) = tile_lists(&prep.splats, cam);
    let tiles: Vec<Vec<(usize, [f64; 3], f64)>> = lists
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            tile_pixels(t, tx, cam)
                .map(|(x, y)| {
                    let mut c = [0.0; 3];
                    let mut tr = 1.0;
                    for &k in list {
                        let s = &prep.splats[k as usize];
                        let (_, alpha, _, _) = eval(s, x as f64, y as f64);
                        if alpha < ALPHA_MIN {
                            continue;
                        }
                        for ch in 0..3 {
                            c[ch] += tr * alpha * s.color[ch];
                        }
                        tr *= 1.0 - alpha;
                        if tr < T_MIN {
                            break;
                        }
                    }
                    (y * cam.width + x, c, tr)
                })
                .collect()
        })
        .collect();
    let mut image = Image::new(cam.width, cam.height);
    let mut transmittance = vec![1.0; cam.pixels()];
    for (p, c, tr) in tiles.into_iter().flatten() {
        image.data[3 * p..3 * p + 3].copy_from_slice(&c);
        transmittance[p] = tr;
    }
    RenderOutput {
        image,
        transmittance,
        skipped: prep.skipped,
    }
}

/// Straight per-pixel reference: every projected Gaussian is tested at every
/// pixel and blending never terminates early.
pub fn brute_force_render(gaussians: &[Gaussian3D], cam: &Camera) -> Image {
    let prep = prepare(gaussians, cam);
    let mut image = Image::new(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut tr = 1.0;
            let p = y * cam.width + x;
            for s in &prep.splats {
                let (_, alpha, _, _) = eval(s, x as f64, y as f64);
                if alpha < ALPHA_MIN {
                    continue;
                }
                for ch in 0..3 {
                    image.data[3 * p + ch] += tr * alpha * s.color[ch];
                }
                tr *= 1.0 - alpha;
            }
        }
    }
    image
}

/// Per-splat screen-space gradient accumulator:
/// `[d center x, d center y, d conic a, d conic b, d conic c, d opacity, d rgb]`.
type ScreenGrad = [f64; 9];

/// Gradients of `sum(d_image .* render)` with respect to every Gaussian's 14
/// parameters, in the order of [`Gaussian3D::to_array`].
pub fn rasterize_backward(gaussians: &[Gaussian3D], cam: &Camera, d_image: &[f64]) -> Vec<[f64; GAUSSIAN_PARAMS]> {
    assert_eq!(d_image.len(), 3 * cam.pixels(), "upstream gradient size");
    let prep = prepare(gaussians, cam);
    let (tx, lists) = tile_lists(&prep.splats, cam);
    let partials: Vec<Vec<(u32, ScreenGrad)>> = lists
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let mut acc: Vec<ScreenGrad> = vec![[0.0; 9]; list.len()];
            let mut hits: Vec<(usize, f64, f64, bool, f64)> = Vec::new();
            for (x, y) in tile_pixels(t, tx, cam) {
                let p = y * cam.width + x;
                let dc = [d_image[3 * p], d_image[3 * p + 1], d_image[3 * p + 2]];
                if dc == [0.0; 3] {
                    continue;
                }
                hits.clear();
                let mut tr = 1.0;
                for (slot, &k) in list.iter().enumerate() {
                    let s = &prep.splats[k as usize];
                    let (g, alpha, _, clamped) = eval(s, x as f64, y as f64);
                    if alpha < ALPHA_MIN {
                        continue;
                    }
                    hits.push((slot, g, alpha, clamped, tr));
                    tr *= 1.0 - alpha;
                    if tr < T_MIN {
                        break;
                    }
                }
                let mut behind = [0.0; 3];
                for &(slot, g, alpha, clamped, t_k) in hits.iter().rev() {
                    let s = &prep.splats[list[slot] as usize];
                    let a = &mut acc[slot];
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        a[6 + ch] += t_k * alpha * dc[ch];
                        d_alpha += dc[ch] * (t_k * s.color[ch] - behind[ch] / (1.0 - alpha));
                        behind[ch] += t_k * alpha * s.color[ch];
                    }
                    if clamped {
                        continue;
                    }
                    a[5] += d_alpha * g;
                    let d_q = -0.5 * alpha * d_alpha;
                    let dx = x as f64 - s.center[0];
                    let dy = y as f64 - s.center[1];
                    let [ca, cb, cc] = s.conic;
                    a[0] -= d_q * (2.0 * ca * dx + 2.0 * cb * dy);
                    a[1] -= d_q * (2.0 * cb * dx + 2.0 * cc * dy);
                    a[2] += d_q * dx * dx;
                    a[3] += d_q * 2.0 * dx * dy;
                    a[4] += d_q * dy * dy;
                }
            }
            list.iter().copied().zip(acc).collect()
        })
        .collect();
    let mut screen: Vec<ScreenGrad> = vec![[0.0; 9]; prep.splats.len()];
    for (k, g) in partials.into_iter().flatten() {
        for (d, v) in screen[k as usize].iter_mut().zip(g) {
            *d += v;
        }
    }
    let mut out = vec![[0.0; GAUSSIAN_PARAMS]; gaussians.len()];
    for (s, sg) in prep.splats.iter().zip(&screen) {
        out[s.index] = splat_param_grad(&gaussians[s.index], cam, s, sg);
    }
    out
}

/// Chain rule from screen-space gradients back to the 3D parameters.
fn splat_param_grad(g: &Gaussian3D, cam: &Camera, s: &Splat, sg: &ScreenGrad) -> [f64; GAUSSIAN_PARAMS] {
    let mut out = [0.0; GAUSSIAN_PARAMS];
    out[10] = sg[5];
    out[11..14].copy_from_slice(&sg[6..9]);

    // conic -> screen covariance: dC = -K G K with G the symmetric gradient.
    let k = [[s.conic[0], s.conic[1]], [s.conic[1], s.conic[2]]];
    let gk = [[sg[2], 0.5 * sg[3]], [0.5 * sg[3], sg[4]]];
    let mut d_cov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut v = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    v += k[i][a] * gk[a][b] * k[b][j];
                }
            }
            d_cov[i][j] = -v;
        }
    }

    // screen covariance = M Sigma M^T with M = J R_c.
    let rc = &cam.rotation;
    let j = &s.proj.jacobian;
    let m = jw(j, rc);
    let sigma = covariance(g.scales, g.quat);
    let mut d_sigma: Mat3 = [[0.0; 3]; 3];
    for (a, row) in d_sigma.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = (0..2)
                .flat_map(|i| (0..2).map(move |jj| (i, jj)))
                .map(|(i, jj)| m[i][a] * d_cov[i][jj] * m[jj][b])
                .sum();
        }
    }
    // dM = 2 dC M Sigma (dC and Sigma symmetric)
    let mut ms = [[0.0; 3]; 2];
    for i in 0..2 {
        for b in 0..3 {
            ms[i][b] = (0..3).map(|a| m[i][a] * sigma[a][b]).sum();
        }
    }
    let mut d_m = [[0.0; 3]; 2];
    for i in 0..2 {
        for b in 0..3 {
            d_m[i][b] = 2.0 * (0..2).map(|jj| d_cov[i][jj] * ms[jj][b]).sum::<f64>();
        }
    }
    // dJ = dM R_c^T
    let mut d_j = [[0.0; 3]; 2];
    for i in 0..2 {
        for a in 0..3 {
            d_j[i][a] = (0..3).map(|b| d_m[i][b] * rc[a][b]).sum();
        }
    }

    let [x, y, z] = s.proj.cam_point;
    let (fx, fy) = (cam.fx, cam.fy);
    let (du, dv) = (sg[0], sg[1]);
    let z2 = z * z;
    let z3 = z2 * z;
    let d_t = [
        du * fx / z - d_j[0][2] * fx / z2,
        dv * fy / z - d_j[1][2] * fy / z2,
        -du * fx * x / z2 - dv * fy * y / z2 - d_j[0][0] * fx / z2 + d_j[0][2] * 2.0 * fx * x / z3 - d_j[1][1] * fy / z2
            + d_j[1][2] * 2.0 * fy * y / z3,
    ];
    out[0..3].copy_from_slice(&mat_t_vec(rc, d_t));

    // Sigma = R^T D R with D = diag(s^2).
    let r = quat_to_rot(g.quat);
    let mut d_r: Mat3 = [[0.0; 3]; 3];
    for kk in 0..3 {
        let s2 = g.scales[kk] * g.scales[kk];
        // (R dSigma R^T)_kk
        let mut rdr = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                rdr += r[kk][a] * d_sigma[a][b] * r[kk][b];
            }
        }
        out[3 + kk] = 2.0 * g.scales[kk] * rdr;
        for b in 0..3 {
            d_r[kk][b] = 2.0 * s2 * (0..3).map(|a| r[kk][a] * d_sigma[a][b]).sum::<f64>();
        }
    }
    out[6..10].copy_from_slice(&quat_to_rot_vjp(g.quat, &d_r));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use crate::splat::camera::Intrinsics;
    use rand::Rng;

    pub(crate) fn random_scene<R: Rng>(rng: &mut R, n: usize) -> Vec<Gaussian3D> {
        (0..n)
            .map(|_| {
                let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                Gaussian3D {
                    mean: std::array::from_fn(|_| rng.gen_range(-1.5..1.5)),
                    scales: std::array::from_fn(|_| rng.gen_range(0.05..0.5)),
                    quat: q.map(|v| v / norm),
                    opacity: rng.gen_range(0.05..1.0),
                    color: std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
                }
            })
            .collect()
    }

    fn front_cam(w: usize, h: usize, f: f64) -> Camera {
        Camera::look_at(
            [0.0, 0.0, -6.0],
            [0.0; 3],
            [0.0, 1.0, 0.0],
            Intrinsics {
                width: w,
                height: h,
                fx: f,
                fy: f,
            },
        )
        .unwrap()
    }

    fn axis_cam() -> Camera {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Camera::new(id, [0.0, 0.0, 6.0], 10.0, 10.0, 4.0, 4.0, 9, 9, 0.01).unwrap()
    }

    #[test]
    fn centered_opaque_gaussian() {
        let cam = axis_cam();
        let g = Gaussian3D::isotropic([0.0; 3], 0.2, 1.0, [0.2, 0.6, 1.0]);
        let out = rasterize(&[g], &cam);
        let px = out.image.pixel(4, 4);
        for ch in 0..3 {
            assert!((px[ch] - 0.999 * g.color[ch]).abs() < 1e-15);
        }
        assert_eq!(brute_force_render(&[g], &cam).pixel(4, 4), px);
    }

    #[test]
    fn two_layer_blend() {
        let cam = axis_cam();
        let front = Gaussian3D::isotropic([0.0; 3], 0.2, 0.5, [1.0, 0.0, 0.0]);
        let back = Gaussian3D::isotropic([0.0, 0.0, 1.5], 0.2, 0.5, [0.0, 0.0, 1.0]);
        for scene in [vec![front, back], vec![back, front]] {
            let px = rasterize(&scene, &cam).image.pixel(4, 4);
            assert!((px[0] - 0.5).abs() < 1e-12 && px[1] == 0.0 && (px[2] - 0.25).abs() < 1e-12, "{px:?}");
            assert_eq!(brute_force_render(&scene, &cam).pixel(4, 4), px);
        }
    }

    #[test]
    fn tiles_match_oracle_and_order() {
        let mut rng = SeedTree::new(21).stream("scene");
        let cam = front_cam(64, 64, 60.0);
        for _ in 0..5 {
            let scene = random_scene(&mut rng, 64);
            let fast = rasterize(&scene, &cam);
            let slow = brute_force_render(&scene, &cam);
            assert!(fast.image.max_abs_diff(&slow) <= 1e-5);
            assert!(fast.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let mut rev = scene.clone();
            rev.reverse();
            assert_eq!(rasterize(&rev, &cam).image, fast.image);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = SeedTree::new(22).stream("scene");
        let cam = front_cam(32, 32, 30.0);
        let scene = random_scene(&mut rng, 8);
        let g = rasterize_backward(&scene, &cam, &vec![0.0; 3 * 32 * 32]);
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn color_gradient_is_blend_weight() {
        let cam = front_cam(16, 16, 20.0);
        let g = Gaussian3D {
            scales: [0.3, 0.5, 0.2],
            ..Gaussian3D::isotropic([0.1, -0.2, 0.0], 0.3, 0.7, [0.3, 0.3, 0.3])
        };
        let up: Vec<f64> = (0..3 * 256).map(|i| (i % 7) as f64 * 0.1 - 0.3).collect();
        let grad = rasterize_backward(&[g], &cam, &up);
        // single Gaussian: T = 1, so the weight is alpha = render / color
        let white = Gaussian3D { color: [1.0; 3], ..g };
        let alpha = rasterize(&[white], &cam).image;
        for ch in 0..3 {
            let want: f64 = (0..256).map(|p| alpha.data[3 * p + ch] * up[3 * p + ch]).sum();
            assert!((grad[0][11 + ch] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SeedTree::new(23).stream("scene");
        let cam = front_cam(32, 32, 30.0);
        let scene = random_scene(&mut rng, 8);
        let w: Vec<f64> = (0..3 * 32 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |gs: &[Gaussian3D]| -> f64 {
            rasterize(gs, &cam).image.data.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let grad = rasterize_backward(&scene, &cam, &w);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (gi, g) in scene.iter().enumerate() {
            for p in 0..GAUSSIAN_PARAMS {
                let mut a = g.to_array();
                a[p] += h;
                let mut plus = scene.clone();
                plus[gi] = Gaussian3D::from_slice(&a);
                a[p] -= 2.0 * h;
                let mut minus = scene.clone();
                minus[gi] = Gaussian3D::from_slice(&a);
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = grad[gi][p];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-2);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-3, "worst relative error {worst}");
    }
}
