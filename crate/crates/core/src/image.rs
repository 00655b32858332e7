//! Dense row-major float images plus PNG and raw-float persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

/// Magic bytes opening every raw float dump.
pub const RAW_MAGIC: [u8; 4] = *b"GSRF";

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png decode error: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png encode error: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("unsupported image layout: {0}")]
    Unsupported(String),
    #[error("malformed raw dump: {0}")]
    MalformedRaw(String),
}

/// `height x width x channels` float image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * channels, "image buffer size mismatch");
        Self { width, height, channels, data }
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y) + c;
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Rec. 601 luminance of an RGB image; single-channel images are copied.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image::from_data(self.width, self.height, 1, data)
    }

    /// Bilinear sample of channel 0 and its spatial gradient. `None` when
    /// the location is outside `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let c = self.channels;
        let i00 = self.data[(y0 * self.width + x0) * c];
        let i10 = self.data[(y0 * self.width + x0 + 1) * c];
        let i01 = self.data[((y0 + 1) * self.width + x0) * c];
        let i11 = self.data[((y0 + 1) * self.width + x0 + 1) * c];
        let top = i00 + fx * (i10 - i00);
        let bottom = i01 + fx * (i11 - i01);
        let value = top + fy * (bottom - top);
        let dx = (1.0 - fy) * (i10 - i00) + fy * (i11 - i01);
        let dy = bottom - top;
        Some((value, dx, dy))
    }

    pub fn read_png(path: &Path) -> Result<Image, ImageError> {
        let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
        let mut reader = decoder.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            other => return Err(ImageError::Unsupported(format!("{other:?}"))),
        };
        let (w, h) = (info.width as usize, info.height as usize);
        let data = match info.bit_depth {
            png::BitDepth::Eight => buf[..w * h * channels].iter().map(|&b| b as f64 / 255.0).collect(),
            png::BitDepth::Sixteen => buf[..w * h * channels * 2]
                .chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
                .collect(),
            other => return Err(ImageError::Unsupported(format!("bit depth {other:?}"))),
        };
        let img = Image::from_data(w, h, channels, data);
        if channels == 4 {
            // drop alpha
            let data = img.data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
            return Ok(Image::from_data(w, h, 3, data));
        }
        Ok(img)
    }

    /// 8-bit PNG, values clamped to [0, 1].
    pub fn write_png(&self, path: &Path) -> Result<(), ImageError> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => return Err(ImageError::Unsupported(format!("{c} channels"))),
        };
        let mut encoder =
            png::Encoder::new(BufWriter::new(File::create(path)?), self.width as u32, self.height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize_u8(v)).collect();
        writer.write_image_data(&bytes)?;
        Ok(())
    }

    /// 16-bit grayscale PNG of channel 0, linearly mapped from `[lo, hi]`.
    pub fn write_png16(&self, path: &Path, lo: f64, hi: f64) -> Result<(), ImageError> {
        let mut encoder =
            png::Encoder::new(BufWriter::new(File::create(path)?), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Sixteen);
        let mut writer = encoder.write_header()?;
        let span = if hi > lo { hi - lo } else { 1.0 };
        let bytes: Vec<u8> = self
            .data
            .chunks_exact(self.channels)
            .flat_map(|p| {
                let t = ((p[0] - lo) / span).clamp(0.0, 1.0);
                ((t * 65535.0).round() as u16).to_be_bytes()
            })
            .collect();
        writer.write_image_data(&bytes)?;
        Ok(())
    }

    /// Little-endian f32 dump with a 16-byte header: magic, height, width, channels.
    pub fn write_raw(&self, path: &Path) -> Result<(), ImageError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_raw_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_raw_to<W: Write>(&self, w: &mut W) -> Result<(), ImageError> {
        w.write_all(&RAW_MAGIC)?;
        w.write_u32::<LittleEndian>(self.height as u32)?;
        w.write_u32::<LittleEndian>(self.width as u32)?;
        w.write_u32::<LittleEndian>(self.channels as u32)?;
        for &v in &self.data {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        Ok(())
    }

    pub fn read_raw(path: &Path) -> Result<Image, ImageError> {
        Self::read_raw_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_raw_from<R: Read>(r: &mut R) -> Result<Image, ImageError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != RAW_MAGIC {
            return Err(ImageError::MalformedRaw(format!("bad magic {magic:?}")));
        }
        let h = r.read_u32::<LittleEndian>()? as usize;
        let w = r.read_u32::<LittleEndian>()? as usize;
        let c = r.read_u32::<LittleEndian>()? as usize;
        let n = h
            .checked_mul(w)
            .and_then(|x| x.checked_mul(c))
            .ok_or_else(|| ImageError::MalformedRaw(format!("header size {h}x{w}x{c} overflows")))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.read_f32::<LittleEndian>()? as f64);
        }
        Ok(Image::from_data(w, h, c, data))
    }
}

#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
