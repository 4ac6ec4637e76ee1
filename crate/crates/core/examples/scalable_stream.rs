//! The stream for a lower level is a byte prefix of the stream for a higher
//! one, so a server can cut a single file at any level boundary.

use bits2photon::net::{decode_pipeline, encode_pipeline, B2PModel, ModelConfig};
use bits2photon::synth::{synth_cloud, SynthKind, SynthSpec};

fn main() -> bits2photon::Result<()> {
    let model = B2PModel::new(ModelConfig::toy(), 1)?;
    let pc = synth_cloud(&SynthSpec::new(SynthKind::Union, 6, 2))?;
    let full = encode_pipeline(&pc, &model, None)?.stream;
    let low = encode_pipeline(&pc, &model, Some(4))?.stream;
    let (fb, lb) = (full.serialize(), low.serialize());
    println!("full stream {} bytes, level-4 stream {} bytes", fb.len(), lb.len());
    println!("prefix: {}", fb.starts_with(&lb));

    let cut = full.truncated_to(4)?;
    let a = decode_pipeline(&full, &model, 4)?.gaussians;
    let b = decode_pipeline(&cut, &model, 4)?.gaussians;
    println!("level 4 from full and cut streams identical: {}", a == b);
    match decode_pipeline(&cut, &model, 5) {
        Err(e) => println!("level 5 from the cut stream: {e}"),
        Ok(_) => println!("level 5 unexpectedly decodable"),
    }
    Ok(())
}
