//! Encodes a synthetic cloud with a freshly initialized desk-scale model,
//! decodes at every render level and checks that the decoder reproduces the
//! encoder's reconstructions bit for bit.
//!
//!     cargo run --release --example encode_decode [model.b2pw]

use bits2photon::entropy::LayeredBitstream;
use bits2photon::net::{decode_pipeline, encode_pipeline, B2PModel, ModelConfig};
use bits2photon::synth::{synth_cloud, SynthKind, SynthSpec};

fn main() -> bits2photon::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => B2PModel::load(p)?.0,
        None => B2PModel::new(ModelConfig::toy(), 0)?,
    };
    let cfg = model.config;
    let pc = synth_cloud(&SynthSpec::new(SynthKind::Sphere, cfg.depth, 5))?;
    let enc = encode_pipeline(&pc, &model, None)?;
    let bytes = enc.stream.serialize();
    println!("{} points -> {} bytes ({:.3} bpp)", pc.len(), bytes.len(), 8.0 * bytes.len() as f64 / pc.len() as f64);
    for c in &enc.stream.levels {
        println!(
            "  level {}: {:>6} points, {:>7} payload bits, model estimate {:>9.1}",
            c.level,
            c.num_points,
            8 * c.payload.len(),
            enc.estimated_bits[&(c.level as u32)]
        );
    }
    let stream = LayeredBitstream::deserialize(&bytes)?;
    for m in cfg.render_levels() {
        let dec = decode_pipeline(&stream, &model, m)?;
        let same = (cfg.base..=m).all(|n| dec.recon[&n] == enc.recon[&n]);
        println!("decode at level {m}: {} gaussians, closed loop {}", dec.gaussians.len(), if same { "exact" } else { "BROKEN" });
    }
    Ok(())
}
