use std::io::Write;
use std::path::Path;

use crate::mat::Mat;
use crate::{Error, Result};

/// RGB image with `f64` channels, row-major, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut im = Image::new(width, height);
        for px in im.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        im
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let p = 3 * (y * self.width + x);
        [self.data[p], self.data[p + 1], self.data[p + 2]]
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Pixels as rows of a `(width * height) x 3` matrix.
    pub fn to_mat(&self) -> Mat {
        Mat::from_vec(self.width * self.height, 3, self.data.clone()).expect("image buffer shape")
    }

    pub fn from_mat(width: usize, height: usize, m: &Mat) -> Result<Self> {
        Image::from_data(width, height, m.as_slice().to_vec())
    }

    /// Single channel plane.
    pub fn channel(&self, ch: usize) -> Vec<f64> {
        self.data.iter().skip(ch).step_by(3).copied().collect()
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png header for {}: {e}", path.display())))?;
        w.write_image_data(&self.to_rgb8())
            .map_err(|e| Error::Format(format!("png data for {}: {e}", path.display())))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut dec = png::Decoder::new(std::io::BufReader::new(file));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec
            .read_info()
            .map_err(|e| Error::Format(format!("png {}: {e}", path.display())))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Format(format!("png {}: {e}", path.display())))?;
        let chans = info.color_type.samples();
        let (w, h) = (info.width as usize, info.height as usize);
        let mut im = Image::new(w, h);
        for p in 0..w * h {
            for ch in 0..3 {
                let v = if chans >= 3 { buf[p * chans + ch] } else { buf[p * chans] };
                im.data[3 * p + ch] = v as f64 / 255.0;
            }
        }
        Ok(im)
    }

    /// Binary PPM (P6).
    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_rgb8());
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Raw dump: `u32` width, `u32` height, then `f32` RGB values, little-endian.
    pub fn save_f32(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut bytes = Vec::with_capacity(8 + self.data.len() * 4);
        bytes.extend_from_slice(&(self.width as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.data {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_f32(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let b = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if b.len() < 8 {
            return Err(Error::Format("float image dump too short".into()));
        }
        let w = u32::from_le_bytes(b[0..4].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(b[4..8].try_into().unwrap()) as usize;
        if b.len() != 8 + w * h * 12 {
            return Err(Error::Format(format!("float image dump size does not match {w}x{h}")));
        }
        let data = b[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Image::from_data(w, h, data)
    }
}
