//! Image quality metrics and the rate-distortion evaluation protocol.

pub mod eval;
pub mod ssim;

pub use eval::{evaluate, render_views, view_metrics, EvalOptions, RDReport, RDRow};
pub use ssim::{ms_ssim, ssim, ssim_loss_grad};

use crate::splat::Image;

/// Value reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub fn mse(x: &Image, y: &Image) -> f64 {
    assert_eq!(x.data.len(), y.data.len(), "image sizes differ");
    x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.data.len() as f64
}

/// Peak signal-to-noise ratio for images in `[0, 1]`, capped at 100 dB.
pub fn psnr(x: &Image, y: &Image) -> f64 {
    let m = mse(x, y);
    if m == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    }
}
