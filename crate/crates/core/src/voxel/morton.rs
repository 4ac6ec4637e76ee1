use crate::{Error, Result};

/// Integer voxel coordinate `(x, y, z)`.
pub type Coord = [u32; 3];

/// Largest bit depth whose Morton key fits in a `u64`.
pub const MAX_BITS: u32 = 21;

#[inline]
fn spread(v: u32) -> u64 {
    // Inserts two zero bits between each of the low 21 bits.
    let mut x = (v as u64) & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact(k: u64) -> u32 {
    let mut x = k & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x as u32
}

/// Interleave without range checks. `x` occupies the least significant bit of
/// every triplet, then `y`, then `z`.
#[inline]
pub fn interleave(c: Coord) -> u64 {
    spread(c[0]) | (spread(c[1]) << 1) | (spread(c[2]) << 2)
}

#[inline]
pub fn deinterleave(key: u64) -> Coord {
    [compact(key), compact(key >> 1), compact(key >> 2)]
}

/// Morton key of `coord` on a cube of side `2^bits`.
pub fn morton_key(coord: Coord, bits: u32) -> Result<u64> {
    if bits > MAX_BITS {
        return Err(Error::Config(format!(
            "bit depth {bits} exceeds the supported maximum of {MAX_BITS}"
        )));
    }
    for (axis, &v) in coord.iter().enumerate() {
        if bits < 32 && (v as u64) >> bits != 0 {
            return Err(Error::Range {
                index: axis,
                detail: format!("component {v} does not fit in {bits} bits"),
            });
        }
    }
    Ok(interleave(coord))
}

/// Canonical ordering of coordinates (Morton order).
#[inline]
pub fn morton_cmp(a: &Coord, b: &Coord) -> std::cmp::Ordering {
    interleave(*a).cmp(&interleave(*b))
}
