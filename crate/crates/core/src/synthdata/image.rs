use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

/// Square RGB image, row-major HWC, every channel in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(size: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(size * size * 3);
        for _ in 0..size * size {
            data.extend_from_slice(&rgb);
        }
        Self { size, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.size + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.size + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn is_valid(&self) -> bool {
        self.data.len() == self.size * self.size * 3
            && self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Channel-major latent in [-1, 1], the denoiser's working space.
    pub fn to_latent(&self) -> Vec<f32> {
        let n = self.size * self.size;
        let mut out = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                out[c * n + p] = self.data[p * 3 + c] * 2.0 - 1.0;
            }
        }
        out
    }

    pub fn from_latent(size: usize, latent: &[f32]) -> Self {
        let n = size * size;
        let mut data = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                data[p * 3 + c] = ((latent[c * n + p] + 1.0) * 0.5).clamp(0.0, 1.0);
            }
        }
        Self { size, data }
    }

    /// Eight-bit quantized copy, identical to what a PNG round-trip yields.
    pub fn quantized(&self) -> Self {
        Self {
            size: self.size,
            data: self
                .data
                .iter()
                .map(|&v| f32::from(to_u8(v)) / 255.0)
                .collect(),
        }
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.size as u32, self.size as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
            let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
            w.write_image_data(&bytes)
                .map_err(|e| Error::Png(e.to_string()))?;
        }
        Ok(buf)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(e.to_string()))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Png("expected 8-bit RGB".into()));
        }
        if info.width != info.height {
            return Err(Error::Shape(format!(
                "non-square image {}x{}",
                info.width, info.height
            )));
        }
        let data = buf[..info.buffer_size()]
            .iter()
            .map(|&b| f32::from(b) / 255.0)
            .collect();
        Ok(Self {
            size: info.width as usize,
            data,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).at(path)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_png_bytes(&bytes)
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
