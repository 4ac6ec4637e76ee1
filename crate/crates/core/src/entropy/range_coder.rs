//! 32-bit range coder with byte-wise renormalization and carry propagation
//! through a cached byte. Frequencies are 16-bit; the last symbol of a table
//! receives the rounding remainder of the range.

use super::prob::{build_cdf_table, symbol_index, symbol_value, Cdf, CDF_BITS, NUM_SYMBOLS, SYMBOL_MAX, SYMBOL_MIN};
use crate::{Error, Result};

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            while self.pending > 0 {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.pending -= 1;
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Codes the symbol at table index `s`. Its frequency must be nonzero.
    pub fn encode(&mut self, cdf: &Cdf, s: usize) {
        let r = self.range >> CDF_BITS;
        let start = cdf.start(s);
        self.low += r as u64 * start as u64;
        self.range = if s + 1 == NUM_SYMBOLS {
            self.range - r * start
        } else {
            r * cdf.freq(s)
        };
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Picks the value in the final interval with the most trailing zero
    /// bits, emits it and drops trailing zero bytes (the decoder pads).
    pub fn finish(mut self) -> Vec<u8> {
        let hi = self.low + self.range as u64 - 1;
        for k in (0..=32).rev() {
            let mask = (1u64 << k) - 1;
            let v = (self.low + mask) & !mask;
            if v <= hi {
                self.low = v;
                break;
            }
        }
        for _ in 0..5 {
            self.shift_low();
        }
        // The first emitted byte is the initial empty cache.
        let mut out = self.out.split_off(1);
        while out.last() == Some(&0) {
            out.pop();
        }
        out
    }
}

pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        let mut d = RangeDecoder {
            bytes,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Decodes one table index.
    pub fn decode(&mut self, cdf: &Cdf) -> usize {
        let r = self.range >> CDF_BITS;
        let target = (self.code / r).min((1 << CDF_BITS) - 1);
        let s = cdf.find(target);
        let start = cdf.start(s);
        self.code -= r * start;
        self.range = if s + 1 == NUM_SYMBOLS {
            self.range - r * start
        } else {
            r * cdf.freq(s)
        };
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.range <<= 8;
        }
        s
    }
}

fn check_symbol(i: usize, x: i32) -> Result<usize> {
    if !(SYMBOL_MIN..=SYMBOL_MAX).contains(&x) {
        return Err(Error::Range {
            index: i,
            detail: format!("symbol {x} outside [{SYMBOL_MIN}, {SYMBOL_MAX}]"),
        });
    }
    Ok(symbol_index(x))
}

/// Encodes symbols with one explicit table each.
pub fn range_encode(symbols: &[i32], cdfs: &[Cdf]) -> Result<Vec<u8>> {
    if symbols.len() != cdfs.len() {
        return Err(Error::Dimension(format!(
            "{} symbols but {} tables",
            symbols.len(),
            cdfs.len()
        )));
    }
    let mut enc = RangeEncoder::new();
    for (i, (&x, cdf)) in symbols.iter().zip(cdfs).enumerate() {
        let s = check_symbol(i, x)?;
        if cdf.freq(s) == 0 {
            return Err(Error::Range {
                index: i,
                detail: format!("symbol {x} has zero frequency"),
            });
        }
        enc.encode(cdf, s);
    }
    Ok(enc.finish())
}

pub fn range_decode(bytes: &[u8], cdfs: &[Cdf]) -> Vec<i32> {
    let mut dec = RangeDecoder::new(bytes);
    cdfs.iter().map(|c| symbol_value(dec.decode(c))).collect()
}

/// Encodes symbols under per-symbol Gaussian models, building each table on
/// the fly.
pub fn encode_gaussian(symbols: &[i32], mu: &[f64], sigma: &[f64]) -> Result<Vec<u8>> {
    if symbols.len() != mu.len() || mu.len() != sigma.len() {
        return Err(Error::Dimension("symbols, means and scales differ in length".into()));
    }
    let mut enc = RangeEncoder::new();
    for (i, &x) in symbols.iter().enumerate() {
        let s = check_symbol(i, x)?;
        enc.encode(&build_cdf_table(mu[i], sigma[i]), s);
    }
    Ok(enc.finish())
}

pub fn decode_gaussian(bytes: &[u8], mu: &[f64], sigma: &[f64]) -> Result<Vec<i32>> {
    if mu.len() != sigma.len() {
        return Err(Error::Dimension("means and scales differ in length".into()));
    }
    let mut dec = RangeDecoder::new(bytes);
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| symbol_value(dec.decode(&build_cdf_table(m, s))))
        .collect())
}

/// Ideal code length in bits under the quantized tables.
pub fn table_bits(symbols: &[i32], mu: &[f64], sigma: &[f64]) -> f64 {
    symbols
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&x, &m), &s)| -build_cdf_table(m, s).prob(symbol_index(x)).log2())
        .sum()
}
