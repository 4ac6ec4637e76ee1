//! Range codes integer symbols under per-symbol Gaussian models and compares
//! the payload with the model's ideal code length.

use bits2photon::entropy::{decode_gaussian, encode_gaussian, estimate_bits};
use bits2photon::SeedTree;
use rand::Rng;

fn main() -> bits2photon::Result<()> {
    let mut rng = SeedTree::new(9).stream("symbols");
    let n = 100_000;
    let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..6.0)).collect();
    let symbols: Vec<i32> = mu
        .iter()
        .zip(&sigma)
        .map(|(m, s)| (m + s * (rng.gen::<f64>() - 0.5) * 3.0).round() as i32)
        .collect();

    let t = std::time::Instant::now();
    let bytes = encode_gaussian(&symbols, &mu, &sigma)?;
    let back = decode_gaussian(&bytes, &mu, &sigma)?;
    let elapsed = t.elapsed();
    assert_eq!(back, symbols);
    let ideal = estimate_bits(&symbols, &mu, &sigma);
    println!("{n} symbols in {:.1} ms", elapsed.as_secs_f64() * 1e3);
    println!("payload {} bits, model estimate {ideal:.0} bits ({:+.3}%)", 8 * bytes.len(), 100.0 * (8.0 * bytes.len() as f64 / ideal - 1.0));
    Ok(())
}
