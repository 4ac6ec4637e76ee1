//! Minimal PLY reader/writer for colored voxel clouds (ascii and binary
//! little-endian, vertex properties `x y z red green blue`).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::cloud::PointCloud;
use super::morton::{Coord, MAX_BITS};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::Format(format!("unknown PLY scalar type '{other}'"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
    has_list: bool,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    bit_depth: Option<u32>,
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    let next = |r: &mut R, line: &mut String| -> Result<bool> {
        line.clear();
        let n = r
            .read_line(line)
            .map_err(|e| Error::Format(format!("reading PLY header: {e}")))?;
        Ok(n > 0)
    };
    if !next(r, &mut line)? || line.trim() != "ply" {
        return Err(Error::Format("missing 'ply' magic line".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut bit_depth = None;
    loop {
        if !next(r, &mut line)? {
            return Err(Error::Format("PLY header ended without end_header".into()));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, ..] => {
                return Err(Error::Format(format!("unsupported PLY format '{other}'")))
            }
            ["comment", "bit_depth", n] => bit_depth = n.parse().ok(),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count '{count}'")))?,
                props: Vec::new(),
                has_list: false,
            }),
            ["property", "list", ..] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?;
                el.has_list = true;
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?;
                el.props.push((name.to_string(), Scalar::parse(ty)?));
            }
            other => return Err(Error::Format(format!("unrecognized header line {other:?}"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| Error::Format("PLY header has no format line".into()))?,
        elements,
        bit_depth,
    })
}

/// Reads a PLY file and voxelizes it: coordinates are rounded to integers,
/// colors scaled from 0–255 to [0, 1] and duplicate voxels merged.
///
/// The bit depth comes from `bit_depth`, else from a `comment bit_depth N`
/// header line, else the smallest depth that holds every coordinate.
pub fn load_ply(path: impl AsRef<Path>, bit_depth: Option<u32>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header(&mut r)?;

    let mut rows: Vec<[f64; 6]> = Vec::new();
    let mut found = false;
    for el in &header.elements {
        if el.name != "vertex" {
            if found {
                break;
            }
            skip_element(&mut r, el, header.format)?;
            continue;
        }
        found = true;
        if el.has_list {
            return Err(Error::Format("list properties on vertices are not supported".into()));
        }
        let want = ["x", "y", "z", "red", "green", "blue"];
        let mut slot = [usize::MAX; 6];
        for (k, w) in want.iter().enumerate() {
            slot[k] = el
                .props
                .iter()
                .position(|(n, _)| n == w)
                .ok_or_else(|| Error::Format(format!("vertex property '{w}' missing")))?;
        }
        rows = read_rows(&mut r, el, header.format, &slot)?;
    }
    if !found {
        return Err(Error::Format("PLY has no vertex element".into()));
    }

    let mut points: Vec<Coord> = Vec::with_capacity(rows.len());
    let mut colors = Vec::with_capacity(rows.len());
    let mut max_c = 0f64;
    for (i, row) in rows.iter().enumerate() {
        let mut p = [0u32; 3];
        for k in 0..3 {
            let v = row[k].round();
            if !v.is_finite() || v < 0.0 || v > u32::MAX as f64 {
                return Err(Error::Range {
                    index: i,
                    detail: format!("coordinate {} cannot be voxelized", row[k]),
                });
            }
            max_c = max_c.max(v);
            p[k] = v as u32;
        }
        points.push(p);
        colors.push([row[3] / 255.0, row[4] / 255.0, row[5] / 255.0]);
    }
    let depth = match bit_depth.or(header.bit_depth) {
        Some(d) => d,
        None => {
            let mut d = 1;
            while d < MAX_BITS && (1u64 << d) <= max_c as u64 {
                d += 1;
            }
            d
        }
    };
    PointCloud::new(points, colors, depth)
}

fn skip_element<R: BufRead>(r: &mut R, el: &Element, format: PlyFormat) -> Result<()> {
    match format {
        PlyFormat::Ascii => {
            let mut line = String::new();
            for _ in 0..el.count {
                line.clear();
                r.read_line(&mut line)
                    .map_err(|e| Error::Format(format!("skipping '{}': {e}", el.name)))?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            if el.has_list {
                return Err(Error::Format(format!(
                    "cannot skip list element '{}' preceding the vertices",
                    el.name
                )));
            }
            let stride: usize = el.props.iter().map(|(_, t)| t.size()).sum();
            let mut buf = vec![0u8; stride];
            for _ in 0..el.count {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Format(format!("element '{}' truncated", el.name)))?;
            }
        }
    }
    Ok(())
}

fn read_rows<R: BufRead>(
    r: &mut R,
    el: &Element,
    format: PlyFormat,
    slot: &[usize; 6],
) -> Result<Vec<[f64; 6]>> {
    let mut rows = Vec::with_capacity(el.count);
    match format {
        PlyFormat::Ascii => {
            let mut line = String::new();
            for i in 0..el.count {
                line.clear();
                r.read_line(&mut line)
                    .map_err(|e| Error::Format(format!("vertex {i}: {e}")))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Format(format!("vertex {i}: unparseable value")))?;
                if vals.len() < el.props.len() {
                    return Err(Error::Format(format!("vertex {i}: too few values")));
                }
                rows.push(slot.map(|s| vals[s]));
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut offsets = Vec::with_capacity(el.props.len());
            let mut stride = 0;
            for (_, t) in &el.props {
                offsets.push(stride);
                stride += t.size();
            }
            let mut buf = vec![0u8; stride];
            for i in 0..el.count {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Format(format!("vertex {i}: binary data truncated")))?;
                rows.push(slot.map(|s| el.props[s].1.read_le(&buf[offsets[s]..])));
            }
        }
    }
    Ok(rows)
}

/// Writes `pc` with float coordinates and 8-bit colors.
pub fn save_ply(path: impl AsRef<Path>, pc: &PointCloud, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        out,
        "ply\nformat {fmt} 1.0\ncomment bit_depth {}\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        pc.bit_depth,
        pc.len()
    )
    .unwrap();
    let to_u8 = |c: f64| (c * 255.0).round().clamp(0.0, 255.0) as u8;
    for (p, c) in pc.points.iter().zip(&pc.colors) {
        match format {
            PlyFormat::Ascii => writeln!(
                out,
                "{} {} {} {} {} {}",
                p[0],
                p[1],
                p[2],
                to_u8(c[0]),
                to_u8(c[1]),
                to_u8(c[2])
            )
            .unwrap(),
            PlyFormat::BinaryLittleEndian => {
                for v in p {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
                out.extend(c.iter().map(|&v| to_u8(v)));
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand::Rng;

    fn write(dir: &tempfile::TempDir, name: &str, body: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const HDR: &str = "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\n\
property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";

    #[test]
    fn single_red_vertex() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.ply", format!("{}0 0 0 255 0 0\n", HDR.replace("{}", "1")).as_bytes());
        let pc = load_ply(&p, Some(4)).unwrap();
        assert_eq!(pc.points, vec![[0, 0, 0]]);
        assert_eq!(pc.colors, vec![[1.0, 0.0, 0.0]]);
    }

    #[test]
    fn duplicate_vertices_average() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}1 2 3 0 0 0\n1.2 2 2.9 255 255 255\n", HDR.replace("{}", "2"));
        let pc = load_ply(write(&dir, "d.ply", body.as_bytes()), Some(4)).unwrap();
        assert_eq!(pc.len(), 1);
        assert_eq!(pc.colors[0], [0.5; 3]);
    }

    #[test]
    fn missing_property_and_range_errors() {
        let dir = tempfile::tempdir().unwrap();
        let body = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        assert!(matches!(
            load_ply(write(&dir, "m.ply", body.as_bytes()), Some(3)),
            Err(Error::Format(_))
        ));
        let body = format!("{}0 0 0 1 1 1\n9 0 0 1 1 1\n", HDR.replace("{}", "2"));
        assert!(matches!(
            load_ply(write(&dir, "r.ply", body.as_bytes()), Some(3)),
            Err(Error::Range { index: 1, .. })
        ));
    }

    #[test]
    fn random_ascii_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeedTree::new(9).stream("ply");
        let mut body = HDR.replace("{}", "100");
        for _ in 0..100 {
            body += &format!(
                "{} {} {} {} {} {}\n",
                rng.gen_range(0.0..63.4f64),
                rng.gen_range(0.0..63.4f64),
                rng.gen_range(0.0..63.4f64),
                rng.gen_range(0..256),
                rng.gen_range(0..256),
                rng.gen_range(0..256)
            );
        }
        let first = load_ply(write(&dir, "in.ply", body.as_bytes()), Some(6)).unwrap();
        for (i, fmt) in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian].into_iter().enumerate() {
            let p = dir.path().join(format!("out{i}.ply"));
            save_ply(&p, &first, fmt).unwrap();
            let again = load_ply(&p, None).unwrap();
            assert_eq!(again.points, first.points);
            let q = |c: &[f64; 3]| c.map(|v| (v * 255.0).round() as u8);
            let a: Vec<_> = again.colors.iter().map(q).collect();
            let b: Vec<_> = first.colors.iter().map(q).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn inferred_bit_depth() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}5 0 0 1 1 1\n", HDR.replace("{}", "1"));
        let pc = load_ply(write(&dir, "b.ply", body.as_bytes()), None).unwrap();
        assert_eq!(pc.bit_depth, 3);
    }
}
