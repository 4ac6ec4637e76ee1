//! Rate-distortion report of one stream: per-level bits and image quality at
//! each render level, as CSV and JSON.
//!
//!     cargo run --release --example rd_report -- [model.b2pw]

use bits2photon::metrics::{evaluate, render_views, EvalOptions};
use bits2photon::net::{encode_pipeline, B2PModel, ModelConfig};
use bits2photon::synth::{synth_cloud, SynthKind, SynthSpec};
use bits2photon::train::{reference_gaussians, ViewRig};

fn main() -> bits2photon::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => B2PModel::load(p)?.0,
        None => B2PModel::new(ModelConfig::toy(), 0)?,
    };
    let mut spec = SynthSpec::new(SynthKind::Sphere, model.config.depth, 1);
    spec.size = 0.15;
    let pc = synth_cloud(&spec)?;
    let stream = encode_pipeline(&pc, &model, None)?.stream;
    let cams = ViewRig::for_depth(model.config.depth, 64).circle(12)?;
    let truth = render_views(&reference_gaussians(&pc), &cams);
    let opts = EvalOptions {
        lambda: Some(10.0),
        ..Default::default()
    };
    let report = evaluate(&stream, &model, &cams, &truth, &opts)?;
    print!("{}", report.to_csv());
    println!("{}", report.to_json());
    Ok(())
}
