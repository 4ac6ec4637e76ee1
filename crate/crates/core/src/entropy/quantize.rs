use super::prob::{SYMBOL_MAX, SYMBOL_MIN};

/// Rounds half away from zero and clamps to the symbol alphabet. The flag is
/// set when the clamp changed the value.
pub fn quantize(x: f64) -> (i32, bool) {
    let r = x.round();
    if r > SYMBOL_MAX as f64 {
        (SYMBOL_MAX, true)
    } else if r < SYMBOL_MIN as f64 {
        (SYMBOL_MIN, true)
    } else if r.is_nan() {
        (0, true)
    } else {
        (r as i32, false)
    }
}

/// Quantizes a slice, returning the symbols and how many were clamped.
pub fn quantize_all(xs: &[f64]) -> (Vec<i32>, usize) {
    let mut clamped = 0;
    let syms = xs
        .iter()
        .map(|&x| {
            let (q, c) = quantize(x);
            clamped += c as usize;
            q
        })
        .collect();
    (syms, clamped)
}
