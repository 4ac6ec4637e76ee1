//! PSNR, SSIM and MS-SSIM of a render against progressively noisier copies.

use bits2photon::metrics::{ms_ssim, psnr, ssim};
use bits2photon::splat::Image;
use bits2photon::SeedTree;
use rand::Rng;

fn main() {
    let (w, h) = (96, 96);
    let clean = Image::from_data(
        w,
        h,
        (0..w * h * 3)
            .map(|i| {
                let (x, y) = ((i / 3) % w, (i / 3) / w);
                if (x / 12 + y / 12) % 2 == 0 { 0.8 } else { 0.2 }
            })
            .collect(),
    )
    .expect("image size");
    let mut rng = SeedTree::new(0).stream("noise");
    println!("noise     psnr     ssim  ms-ssim");
    for amp in [0.0, 0.01, 0.05, 0.1, 0.2] {
        let noisy = Image::from_data(w, h, clean.data.iter().map(|v| (v + rng.gen_range(-amp..=amp)).clamp(0.0, 1.0)).collect())
            .expect("image size");
        println!("{amp:>5.2} {:>8.2} {:>8.4} {:>8.4}", psnr(&noisy, &clean), ssim(&noisy, &clean), ms_ssim(&noisy, &clean));
    }
}
