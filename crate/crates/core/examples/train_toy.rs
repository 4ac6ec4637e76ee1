//! Trains the desk-scale model on a checkered sphere and reports the PSNR of
//! both render levels every few hundred iterations.
//!
//!     cargo run --release --example train_toy -- [iters] [out.b2pw]

use bits2photon::metrics::{evaluate, render_views, EvalOptions};
use bits2photon::net::encode_pipeline;
use bits2photon::synth::{synth_cloud, SynthKind, SynthSpec};
use bits2photon::train::{reference_gaussians, write_log_csv, TrainConfig, Trainer};

fn main() -> bits2photon::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().map_or(400, |s| s.parse().expect("iteration count"));
    let out = args.next().unwrap_or_else(|| "toy.b2pw".into());
    let cfg = TrainConfig { iters, ..TrainConfig::toy() };
    let mut spec = SynthSpec::new(SynthKind::Sphere, cfg.depth, 1);
    spec.size = 0.15;
    let pc = synth_cloud(&spec)?;

    let model = bits2photon::net::B2PModel::new(cfg.model_config(), cfg.seed)?;
    let mut t = Trainer::new(model, vec![pc.clone()], cfg)?;
    let cams = t.rig().circle(12)?;
    let truth = render_views(&reference_gaussians(&pc), &cams);
    let report = |t: &Trainer| -> bits2photon::Result<String> {
        let mut m = t.model.clone();
        m.round_to_f32();
        let stream = encode_pipeline(&pc, &m, None)?.stream;
        let r = evaluate(&stream, &m, &cams, &truth, &EvalOptions::default())?;
        Ok(r.rows.iter().map(|row| format!("M={} {:.2} dB @ {:.3} bpp", row.level, row.psnr, row.bpp_features_total)).collect::<Vec<_>>().join(", "))
    };
    println!("init: {}", report(&t)?);
    for i in 0..iters {
        let row = t.step()?;
        if (i + 1) % 200 == 0 || i + 1 == iters {
            println!("iter {:>5}: loss {:.4} (rate {:.3} bpp) | {}", i + 1, row.total, row.rate, report(&t)?);
        }
    }
    let meta = t.metadata();
    let (model, log) = t.finish();
    model.save(&out, meta)?;
    write_log_csv(format!("{out}.csv"), &log)?;
    println!("saved {out} and {out}.csv");
    Ok(())
}
