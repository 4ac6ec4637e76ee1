//! SSIM with an 11x11 Gaussian window (sigma 1.5), valid positions only,
//! computed per channel and averaged; plus its gradient and 5-scale MS-SSIM.

use crate::splat::Image;

pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;
pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const MS_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Normalized 1D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// One channel plane with its size.
#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

/// Separable valid filtering.
fn filter(p: &Plane, taps: &[f64]) -> Plane {
    let k = taps.len();
    let (ow, oh) = (p.w + 1 - k, p.h + 1 - k);
    let mut tmp = vec![0.0; p.h * ow];
    for y in 0..p.h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| taps[i] * p.v[y * p.w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    Plane { w: ow, h: oh, v: out }
}

/// Adjoint of [`filter`]: spreads a valid-size map back to full size.
fn filter_adjoint(g: &Plane, taps: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = taps.len();
    let mut tmp = vec![0.0; h * g.w];
    for y in 0..g.h {
        for x in 0..g.w {
            let v = g.v[y * g.w + x];
            for i in 0..k {
                tmp[(y + i) * g.w + x] += taps[i] * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..g.w {
            let v = tmp[y * g.w + x];
            for i in 0..k {
                out[y * w + x + i] += taps[i] * v;
            }
        }
    }
    out
}

fn mul(a: &Plane, b: &Plane) -> Plane {
    Plane {
        w: a.w,
        h: a.h,
        v: a.v.iter().zip(&b.v).map(|(x, y)| x * y).collect(),
    }
}

struct Stats {
    mu_a: Plane,
    mu_b: Plane,
    m2a: Plane,
    m2b: Plane,
    mab: Plane,
}

fn stats(a: &Plane, b: &Plane, taps: &[f64]) -> Stats {
    Stats {
        mu_a: filter(a, taps),
        mu_b: filter(b, taps),
        m2a: filter(&mul(a, a), taps),
        m2b: filter(&mul(b, b), taps),
        mab: filter(&mul(a, b), taps),
    }
}

/// Mean SSIM and mean contrast-structure term of one channel.
fn channel_terms(a: &Plane, b: &Plane) -> (f64, f64) {
    let taps = gaussian_taps(WINDOW.min(a.w).min(a.h), WINDOW_SIGMA);
    let st = stats(a, b, &taps);
    let n = st.mu_a.v.len() as f64;
    let (mut s_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..st.mu_a.v.len() {
        let (ma, mb) = (st.mu_a.v[i], st.mu_b.v[i]);
        let va = st.m2a.v[i] - ma * ma;
        let vb = st.m2b.v[i] - mb * mb;
        let cov = st.mab.v[i] - ma * mb;
        let cs = (2.0 * cov + C2) / (va + vb + C2);
        let l = (2.0 * ma * mb + C1) / (ma * ma + mb * mb + C1);
        s_sum += l * cs;
        cs_sum += cs;
    }
    (s_sum / n, cs_sum / n)
}

fn planes(im: &Image) -> Vec<Plane> {
    (0..3)
        .map(|ch| Plane {
            w: im.width,
            h: im.height,
            v: im.channel(ch),
        })
        .collect()
}

fn check(x: &Image, y: &Image) {
    assert_eq!((x.width, x.height), (y.width, y.height), "image sizes differ");
}

/// Mean structural similarity over valid window positions and channels.
pub fn ssim(x: &Image, y: &Image) -> f64 {
    check(x, y);
    planes(x)
        .iter()
        .zip(&planes(y))
        .map(|(a, b)| channel_terms(a, b).0)
        .sum::<f64>()
        / 3.0
}

/// `1 - SSIM(x, y)` and its gradient with respect to `x`, laid out like
/// [`Image::data`].
pub fn ssim_loss_grad(x: &Image, y: &Image) -> (f64, Vec<f64>) {
    check(x, y);
    let (w, h) = (x.width, x.height);
    let taps = gaussian_taps(WINDOW.min(w).min(h), WINDOW_SIGMA);
    let mut grad = vec![0.0; w * h * 3];
    let mut total = 0.0;
    for (ch, (a, b)) in planes(x).iter().zip(&planes(y)).enumerate() {
        let st = stats(a, b, &taps);
        let len = st.mu_a.v.len();
        let norm = 1.0 / (3.0 * len as f64);
        let (ow, oh) = (st.mu_a.w, st.mu_a.h);
        let mut g_mu = Plane { w: ow, h: oh, v: vec![0.0; len] };
        let mut g_m2 = g_mu.clone();
        let mut g_ab = g_mu.clone();
        for i in 0..len {
            let (ma, mb) = (st.mu_a.v[i], st.mu_b.v[i]);
            let a1 = 2.0 * ma * mb + C1;
            let a2 = 2.0 * (st.mab.v[i] - ma * mb) + C2;
            let b1 = ma * ma + mb * mb + C1;
            let b2 = st.m2a.v[i] - ma * ma + st.m2b.v[i] - mb * mb + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s * norm;
            // d(1 - s) = -ds
            g_mu.v[i] = -norm * ((2.0 * mb * a2 - 2.0 * mb * a1) / (b1 * b2) - s * (2.0 * ma / b1 - 2.0 * ma / b2));
            g_m2.v[i] = norm * s / b2;
            g_ab.v[i] = -norm * 2.0 * a1 / (b1 * b2);
        }
        let d_mu = filter_adjoint(&g_mu, &taps, w, h);
        let d_m2 = filter_adjoint(&g_m2, &taps, w, h);
        let d_ab = filter_adjoint(&g_ab, &taps, w, h);
        for p in 0..w * h {
            grad[3 * p + ch] = d_mu[p] + 2.0 * a.v[p] * d_m2[p] + b.v[p] * d_ab[p];
        }
    }
    (1.0 - total, grad)
}

fn downsample(p: &Plane) -> Plane {
    let (w, h) = (p.w / 2, p.h / 2);
    let mut v = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let at = |dx: usize, dy: usize| p.v[(2 * y + dy) * p.w + 2 * x + dx];
            v[y * w + x] = 0.25 * (at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1));
        }
    }
    Plane { w, h, v }
}

/// Five-scale MS-SSIM with 2x2 average pooling between scales. Terms are
/// clamped at zero before exponentiation.
pub fn ms_ssim(x: &Image, y: &Image) -> f64 {
    check(x, y);
    let mut total = 0.0;
    for (mut a, mut b) in planes(x).into_iter().zip(planes(y)) {
        let mut value = 1.0;
        for (scale, &wgt) in MS_WEIGHTS.iter().enumerate() {
            let (s, cs) = channel_terms(&a, &b);
            let term = if scale + 1 == MS_WEIGHTS.len() { s } else { cs };
            value *= term.max(0.0).powf(wgt);
            if scale + 1 < MS_WEIGHTS.len() {
                if a.w < 2 || a.h < 2 {
                    // too small to pool further; remaining scales see the same plane
                    continue;
                }
                a = downsample(&a);
                b = downsample(&b);
            }
        }
        total += value;
    }
    total / 3.0
}
