//! Saves a model with training metadata, reloads it and prints what a
//! stream header binds to: the weight hash and the tensor manifest.

use std::collections::BTreeMap;

use bits2photon::net::{B2PModel, ModelConfig};

fn main() -> bits2photon::Result<()> {
    let model = B2PModel::new(ModelConfig::full_scale(), 7)?;
    let dir = std::env::temp_dir().join("b2p_checkpoint_example");
    std::fs::create_dir_all(&dir).expect("create temp dir");
    let path = dir.join("model.b2pw");

    let mut meta = BTreeMap::new();
    meta.insert("note".to_string(), serde_json::json!("untrained"));
    model.save(&path, meta)?;
    let (back, meta) = B2PModel::load(&path)?;
    assert_eq!(back, model);

    let m = back.manifest();
    println!("{} tensors, {} scalars", m.tensors.len(), back.store.num_scalars());
    println!("weights sha256 {}", m.data_sha256);
    println!("stream hash    {:016x}", back.hash());
    println!("meta           {}", serde_json::to_string(&meta).expect("json"));
    for t in m.tensors.iter().take(4) {
        println!("  {t:?}");
    }
    Ok(())
}
