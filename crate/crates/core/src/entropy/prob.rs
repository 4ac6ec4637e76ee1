//! Discretized Gaussian probabilities and the 16-bit CDF tables the range
//! coder consumes.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

/// Smallest and largest coded symbol; the edge symbols absorb the open tails.
pub const SYMBOL_MIN: i32 = -127;
pub const SYMBOL_MAX: i32 = 127;
pub const NUM_SYMBOLS: usize = (SYMBOL_MAX - SYMBOL_MIN + 1) as usize;

pub const CDF_BITS: u32 = 16;
pub const CDF_TOTAL: u32 = 1 << CDF_BITS;

/// Probability floor shared by the training rate estimate and the coder.
pub const PROB_FLOOR: f64 = 1.0 / CDF_TOTAL as f64;

pub const SIGMA_MIN: f64 = 1e-2;
pub const SIGMA_MAX: f64 = 256.0;

/// Standard normal CDF.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

#[inline]
fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Phi(b) - Phi(a)` for standardized bounds, evaluated on the side of the
/// distribution that avoids cancellation.
fn interval_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

/// Mass of the bin `[x - 0.5, x + 0.5]` under `N(mu, sigma^2)`; bins at or
/// beyond the edge symbols extend to infinity.
pub fn bin_mass(x: f64, mu: f64, sigma: f64) -> f64 {
    let lo = if x <= SYMBOL_MIN as f64 {
        f64::NEG_INFINITY
    } else {
        (x - 0.5 - mu) / sigma
    };
    let hi = if x >= SYMBOL_MAX as f64 {
        f64::INFINITY
    } else {
        (x + 0.5 - mu) / sigma
    };
    interval_mass(lo, hi)
}

/// `Phi(x + 0.5; mu, sigma) - Phi(x - 0.5; mu, sigma)` for an integer symbol.
pub fn gaussian_bin_prob(x: i32, mu: f64, sigma: f64) -> f64 {
    bin_mass(x as f64, mu, sigma)
}

/// Bits `-log2(max(p, floor))` for one value and its partial derivatives
/// with respect to `(x, mu, sigma)`; derivatives vanish where the floor binds.
pub fn bits_with_grad(x: f64, mu: f64, sigma: f64) -> (f64, [f64; 3]) {
    let p = bin_mass(x, mu, sigma);
    if !(p > PROB_FLOOR) {
        return (-PROB_FLOOR.log2(), [0.0; 3]);
    }
    let (mut dp_dx, mut dp_ds) = (0.0, 0.0);
    if x < SYMBOL_MAX as f64 {
        let b = (x + 0.5 - mu) / sigma;
        let pb = std_normal_pdf(b);
        dp_dx += pb / sigma;
        dp_ds -= b * pb / sigma;
    }
    if x > SYMBOL_MIN as f64 {
        let a = (x - 0.5 - mu) / sigma;
        let pa = std_normal_pdf(a);
        dp_dx -= pa / sigma;
        dp_ds += a * pa / sigma;
    }
    let k = -1.0 / (p * LN_2);
    (-p.log2(), [k * dp_dx, -k * dp_dx, k * dp_ds])
}

/// Estimated code length in bits of integer symbols under per-symbol
/// Gaussian models, with the probability floored at 2^-16.
pub fn estimate_bits(symbols: &[i32], mu: &[f64], sigma: &[f64]) -> f64 {
    symbols
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&x, &m), &s)| -gaussian_bin_prob(x, m, s).max(PROB_FLOOR).log2())
        .sum()
}

/// Cumulative frequency table over the 255 symbols: `cdf[0] = 0`,
/// `cdf[255] = 2^16`, every symbol with frequency at least 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cdf(pub [u32; NUM_SYMBOLS + 1]);

impl Cdf {
    #[inline]
    pub fn freq(&self, s: usize) -> u32 {
        self.0[s + 1] - self.0[s]
    }

    #[inline]
    pub fn start(&self, s: usize) -> u32 {
        self.0[s]
    }

    /// Dequantized probability of symbol index `s`.
    pub fn prob(&self, s: usize) -> f64 {
        self.freq(s) as f64 / CDF_TOTAL as f64
    }

    /// Symbol index whose interval contains `target`.
    pub fn find(&self, target: u32) -> usize {
        // Largest s with cdf[s] <= target.
        self.0.partition_point(|&c| c <= target) - 1
    }
}

/// Index of a symbol value in the CDF table.
#[inline]
pub fn symbol_index(x: i32) -> usize {
    (x - SYMBOL_MIN) as usize
}

#[inline]
pub fn symbol_value(index: usize) -> i32 {
    index as i32 + SYMBOL_MIN
}

/// Quantizes the bin masses to 16 bits. Each symbol gets
/// `max(1, round(p * 2^16))` and the most probable symbol absorbs the
/// difference to the exact total, so only tail symbols pay for the floor.
pub fn build_cdf_table(mu: f64, sigma: f64) -> Cdf {
    // Upper-tail mass above each boundary, exact to well below one unit
    // without evaluating tails beyond nine sigma.
    let tail = |b: usize| {
        let z = (symbol_value(b) as f64 - 0.5 - mu) / sigma;
        if z > 9.0 {
            0.0
        } else if z < -9.0 {
            1.0
        } else {
            std_normal_cdf(-z)
        }
    };
    let mut freq = [0i64; NUM_SYMBOLS];
    let mut above = 1.0;
    for (s, f) in freq.iter_mut().enumerate() {
        let next = if s + 1 == NUM_SYMBOLS { 0.0 } else { tail(s + 1) };
        *f = (((above - next) * CDF_TOTAL as f64).round() as i64).max(1);
        above = next;
    }
    let mut diff = CDF_TOTAL as i64 - freq.iter().sum::<i64>();
    while diff != 0 {
        // first index of the largest frequency
        let top = (0..NUM_SYMBOLS).fold(0, |b, s| if freq[s] > freq[b] { s } else { b });
        let step = if diff > 0 { diff } else { diff.max(1 - freq[top]) };
        freq[top] += step;
        diff -= step;
    }
    let mut cdf = [0u32; NUM_SYMBOLS + 1];
    for s in 0..NUM_SYMBOLS {
        cdf[s + 1] = cdf[s] + freq[s] as u32;
    }
    Cdf(cdf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand::Rng;

    #[test]
    fn reference_bin_probabilities() {
        // Phi(0.5) - Phi(-0.5) and Phi(1.5) - Phi(0.5) from erf tables.
        assert!((gaussian_bin_prob(0, 0.0, 1.0) - 0.382_924_922_548_026).abs() < 1e-12);
        assert!((gaussian_bin_prob(1, 0.0, 1.0) - 0.241_730_337_457_129_3).abs() < 1e-12);
    }

    #[test]
    fn probabilities_telescope_to_one() {
        for &(mu, sigma) in &[(0.0, 1.0), (3.7, 0.2), (-120.0, 40.0), (126.9, 0.01)] {
            let s: f64 = (SYMBOL_MIN..=SYMBOL_MAX).map(|x| gaussian_bin_prob(x, mu, sigma)).sum();
            assert!((s - 1.0).abs() < 1e-12, "{mu} {sigma}: {s}");
        }
    }

    #[test]
    fn half_probability_costs_one_bit() {
        // mu on a bin boundary with a huge sigma puts half the mass on each
        // side; symbol 127 absorbs everything above 126.5.
        let (bits, _) = bits_with_grad(127.0, 126.5, 1.0);
        assert!((bits - 1.0).abs() < 1e-12);
        assert!((estimate_bits(&[127], &[126.5], &[1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concentrated_symbol_is_nearly_free() {
        assert!(estimate_bits(&[3], &[3.0], &[SIGMA_MIN]) < 1e-9);
    }

    #[test]
    fn bits_are_shift_invariant() {
        let mut rng = SeedTree::new(2).stream("shift");
        for _ in 0..200 {
            let x: f64 = rng.gen_range(-20.0..20.0);
            let mu: f64 = rng.gen_range(-20.0..20.0);
            let s: f64 = rng.gen_range(0.05..10.0);
            let k = rng.gen_range(-50..50) as f64;
            let (a, _) = bits_with_grad(x, mu, s);
            let (b, _) = bits_with_grad(x + k, mu + k, s);
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn bits_gradient_matches_finite_differences() {
        let mut rng = SeedTree::new(3).stream("fd");
        for _ in 0..100 {
            let x: f64 = rng.gen_range(-5.0..5.0);
            let mu: f64 = rng.gen_range(-5.0..5.0);
            let s: f64 = rng.gen_range(0.3..4.0);
            let (bits, g) = bits_with_grad(x, mu, s);
            if bits > 15.0 {
                continue;
            }
            let h = 1e-6;
            let fd = [
                (bits_with_grad(x + h, mu, s).0 - bits_with_grad(x - h, mu, s).0) / (2.0 * h),
                (bits_with_grad(x, mu + h, s).0 - bits_with_grad(x, mu - h, s).0) / (2.0 * h),
                (bits_with_grad(x, mu, s + h).0 - bits_with_grad(x, mu, s - h).0) / (2.0 * h),
            ];
            for k in 0..3 {
                assert!((g[k] - fd[k]).abs() <= 1e-6 * (1.0 + fd[k].abs()), "{k}: {} vs {}", g[k], fd[k]);
            }
        }
    }

    #[test]
    fn cdf_floor_rule_at_minimum_sigma() {
        let cdf = build_cdf_table(0.0, SIGMA_MIN);
        let zero = symbol_index(0);
        for s in 0..NUM_SYMBOLS {
            if s != zero {
                assert_eq!(cdf.freq(s), 1, "symbol {s}");
            }
        }
        assert_eq!(cdf.freq(zero), CDF_TOTAL - (NUM_SYMBOLS as u32 - 1));
    }

    #[test]
    fn cdf_tables_are_monotone_with_exact_total() {
        let mut rng = SeedTree::new(4).stream("cdf");
        for _ in 0..1000 {
            let mu = rng.gen_range(-140.0..140.0);
            let sigma = (rng.gen_range(SIGMA_MIN.ln()..SIGMA_MAX.ln()) as f64).exp();
            let cdf = build_cdf_table(mu, sigma);
            assert_eq!(cdf.0[0], 0);
            assert_eq!(cdf.0[NUM_SYMBOLS], CDF_TOTAL);
            assert!(cdf.0.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn dequantized_pmf_tracks_gaussian_mass() {
        // Rounding and the floor move a symbol by at most one unit; the
        // absorbing symbol takes the accumulated difference.
        let mut rng = SeedTree::new(5).stream("pmf");
        for _ in 0..300 {
            let mu = rng.gen_range(-30.0..30.0);
            let sigma = (rng.gen_range(SIGMA_MIN.ln()..SIGMA_MAX.ln()) as f64).exp();
            let cdf = build_cdf_table(mu, sigma);
            let unit = 1.0 / CDF_TOTAL as f64;
            let mut off = 0;
            for s in 0..NUM_SYMBOLS {
                let p = gaussian_bin_prob(symbol_value(s), mu, sigma);
                let err = (cdf.prob(s) - p).abs();
                if err > unit {
                    off += 1;
                    assert!(err <= 1.5 * NUM_SYMBOLS as f64 * unit, "mu {mu} sigma {sigma} s {s}");
                }
            }
            assert!(off <= 1, "mu {mu} sigma {sigma}");
        }
    }

    #[test]
    fn find_inverts_start() {
        let cdf = build_cdf_table(2.3, 1.7);
        for s in 0..NUM_SYMBOLS {
            assert_eq!(cdf.find(cdf.start(s)), s);
            assert_eq!(cdf.find(cdf.start(s) + cdf.freq(s) - 1), s);
        }
    }
}
