use crate::voxel::{interleave, Coord};
use crate::{Error, Result};

/// Precomputed `(input, output)` index pairs for every kernel offset.
///
/// Offsets are enumerated in Morton order of `offset + center` (x least
/// significant); weight tensors are laid out in the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMap {
    kernel_size: usize,
    offsets: Vec<[i32; 3]>,
    inputs: Vec<Vec<u32>>,
    outputs: Vec<Vec<u32>>,
    in_len: usize,
    out_coords: Vec<Coord>,
}

/// Kernel offsets for an odd kernel size, in canonical order.
pub fn kernel_offsets(kernel_size: usize) -> Vec<[i32; 3]> {
    let r = (kernel_size / 2) as i32;
    let mut offs = Vec::with_capacity(kernel_size.pow(3));
    for z in -r..=r {
        for y in -r..=r {
            for x in -r..=r {
                offs.push([x, y, z]);
            }
        }
    }
    offs.sort_by_key(|o| interleave([(o[0] + r) as u32, (o[1] + r) as u32, (o[2] + r) as u32]));
    offs
}

impl KernelMap {
    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn offsets(&self) -> &[[i32; 3]] {
        &self.offsets
    }

    pub fn volume(&self) -> usize {
        self.offsets.len()
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.out_coords.len()
    }

    pub fn out_coords(&self) -> &[Coord] {
        &self.out_coords
    }

    /// Input indices paired under offset `k` (parallel to [`Self::outputs`]).
    pub fn inputs(&self, k: usize) -> &[u32] {
        &self.inputs[k]
    }

    pub fn outputs(&self, k: usize) -> &[u32] {
        &self.outputs[k]
    }

    pub fn pairs(&self, k: usize) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.inputs[k].iter().copied().zip(self.outputs[k].iter().copied())
    }

    pub fn num_pairs(&self) -> usize {
        self.inputs.iter().map(Vec::len).sum()
    }
}

/// Pairs `(a, b)` under offset `i` exactly when `in_coords[a] == out_coords[b] + i`.
pub fn build_kernel_map(in_coords: &[Coord], out_coords: &[Coord], kernel_size: usize) -> Result<KernelMap> {
    if kernel_size % 2 == 0 {
        return Err(Error::Config(format!(
            "same-level convolution needs an odd kernel size, got {kernel_size}"
        )));
    }
    let keys: Vec<u64> = in_coords.iter().map(|c| interleave(*c)).collect();
    if keys.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Consistency(
            "kernel map input coordinates must be strictly Morton increasing".into(),
        ));
    }
    let offsets = kernel_offsets(kernel_size);
    let mut inputs = Vec::with_capacity(offsets.len());
    let mut outputs = Vec::with_capacity(offsets.len());
    for off in &offsets {
        let mut ins = Vec::new();
        let mut outs = Vec::new();
        for (b, c) in out_coords.iter().enumerate() {
            let n = [
                c[0] as i64 + off[0] as i64,
                c[1] as i64 + off[1] as i64,
                c[2] as i64 + off[2] as i64,
            ];
            if n.iter().any(|&v| v < 0 || v >= 1 << 21) {
                continue;
            }
            let key = interleave([n[0] as u32, n[1] as u32, n[2] as u32]);
            if let Ok(a) = keys.binary_search(&key) {
                ins.push(a as u32);
                outs.push(b as u32);
            }
        }
        inputs.push(ins);
        outputs.push(outs);
    }
    Ok(KernelMap {
        kernel_size,
        offsets,
        inputs,
        outputs,
        in_len: in_coords.len(),
        out_coords: out_coords.to_vec(),
    })
}

/// Coordinates produced by generative 2x2x2 up-convolution: the eight
/// children `2u + d` of every input point, in canonical order. Child `d` of
/// input row `p` lands on output row `8p + d`.
pub fn generated_coords(parents: &[Coord]) -> Vec<Coord> {
    let mut out = Vec::with_capacity(parents.len() * 8);
    for p in parents {
        for d in 0..8u32 {
            out.push([2 * p[0] + (d & 1), 2 * p[1] + ((d >> 1) & 1), 2 * p[2] + ((d >> 2) & 1)]);
        }
    }
    out
}
