//! 8-bit rasters and their floating-point working copies.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample;

/// Colour space of an [`Image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Gray,
    Rgb,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Gray => 1,
            ColorSpace::Rgb => 3,
        }
    }

    pub fn from_channels(channels: usize) -> Result<Self> {
        match channels {
            1 => Ok(ColorSpace::Gray),
            3 => Ok(ColorSpace::Rgb),
            n => Err(Error::UnsupportedChannels(n)),
        }
    }
}

/// An `height × width × channels` unsigned 8-bit raster, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    space: ColorSpace,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, space: ColorSpace, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!("{width}x{height} image")));
        }
        let expected = width * height * space.channels();
        if data.len() != expected {
            return Err(Error::LengthMismatch { left: data.len(), right: expected });
        }
        Ok(Self { width, height, space, data })
    }

    /// Builds an image from a per-pixel closure returning one value per channel.
    pub fn from_fn<F>(width: usize, height: usize, space: ColorSpace, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> u8,
    {
        let c = space.channels();
        let mut data = Vec::with_capacity(width * height * c);
        for y in 0..height {
            for x in 0..width {
                for ch in 0..c {
                    data.push(f(x, y, ch));
                }
            }
        }
        Self::new(width, height, space, data)
    }

    pub fn filled(width: usize, height: usize, space: ColorSpace, value: u8) -> Result<Self> {
        Self::new(width, height, space, vec![value; width * height * space.channels()])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.space.channels()
    }

    pub fn color_space(&self) -> ColorSpace {
        self.space
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let c = self.channels();
        let i = (y * self.width + x) * c;
        &self.data[i..i + c]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let c = self.channels();
        let i = (y * self.width + x) * c;
        &mut self.data[i..i + c]
    }

    /// Bilinear resize; values are rounded back to 8 bits.
    pub fn resize(&self, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!("resize target {width}x{height}")));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        self.to_float().resize(width, height)?.to_image()
    }

    pub fn to_float(&self) -> FloatImage {
        FloatImage {
            width: self.width,
            height: self.height,
            channels: self.channels(),
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Converts to RGB, replicating the gray channel when needed.
    pub fn to_rgb(&self) -> Image {
        match self.space {
            ColorSpace::Rgb => self.clone(),
            ColorSpace::Gray => Image {
                width: self.width,
                height: self.height,
                space: ColorSpace::Rgb,
                data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
            },
        }
    }

    /// Decodes a PNG or JPEG file. Anything that is not single-channel gray is
    /// converted to RGB (alpha dropped).
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let decoded = image::open(path)?;
        Ok(Self::from_dynamic(decoded))
    }

    pub fn from_dynamic(img: image::DynamicImage) -> Image {
        match img {
            image::DynamicImage::ImageLuma8(buf) => {
                let (w, h) = buf.dimensions();
                Image { width: w as usize, height: h as usize, space: ColorSpace::Gray, data: buf.into_raw() }
            }
            other => {
                let buf = other.to_rgb8();
                let (w, h) = buf.dimensions();
                Image { width: w as usize, height: h as usize, space: ColorSpace::Rgb, data: buf.into_raw() }
            }
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let color = match self.space {
            ColorSpace::Gray => image::ExtendedColorType::L8,
            ColorSpace::Rgb => image::ExtendedColorType::Rgb8,
        };
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }
}

/// A floating-point raster in 8-bit intensity units (nominally `0..=255`).
///
/// Used wherever pixels are masked or scaled before a forward pass, so that
/// no rounding happens between the mask and the model.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn resize(&self, width: usize, height: usize) -> Result<FloatImage> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!("resize target {width}x{height}")));
        }
        Ok(FloatImage {
            width,
            height,
            channels: self.channels,
            data: resample::bilinear(&self.data, self.width, self.height, self.channels, width, height),
        })
    }

    /// Sets every channel of the pixel at row-major index `idx`.
    pub fn fill_pixel(&mut self, idx: usize, value: f64) {
        let c = self.channels;
        self.data[idx * c..(idx + 1) * c].iter_mut().for_each(|v| *v = value);
    }

    pub fn copy_pixel_from(&mut self, other: &FloatImage, idx: usize) {
        let c = self.channels;
        self.data[idx * c..(idx + 1) * c].copy_from_slice(&other.data[idx * c..(idx + 1) * c]);
    }

    /// Rounds to the nearest 8-bit value, saturating.
    pub fn to_image(&self) -> Result<Image> {
        let space = ColorSpace::from_channels(self.channels)?;
        let data = self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Image::new(self.width, self.height, space, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(Image::new(0, 2, ColorSpace::Gray, vec![]).is_err());
        assert!(Image::new(2, 2, ColorSpace::Rgb, vec![0; 4]).is_err());
    }

    #[test]
    fn resize_same_size_identity() {
        let img = Image::from_fn(5, 3, ColorSpace::Rgb, |x, y, c| (x * 40 + y * 7 + c) as u8).unwrap();
        assert_eq!(img.resize(5, 3).unwrap(), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::filled(7, 5, ColorSpace::Rgb, 93).unwrap();
        let out = img.resize(13, 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 93));
    }

    #[test]
    fn downsample_checkerboard_of_blocks() {
        // 2x2 blocks alternating 0/200; a 2x downsample lands exactly on block means.
        let img = Image::from_fn(8, 8, ColorSpace::Gray, |x, y, _| if (x / 2 + y / 2) % 2 == 0 { 0 } else { 200 }).unwrap();
        let out = img.resize(4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = if (x + y) % 2 == 0 { 0 } else { 200 };
                assert_eq!(out.pixel(x, y)[0], want);
            }
        }
        // Single-pixel checkerboard: every output averages one black and one white pair.
        let fine = Image::from_fn(8, 8, ColorSpace::Gray, |x, y, _| if (x + y) % 2 == 0 { 0 } else { 100 }).unwrap();
        assert!(fine.resize(4, 4).unwrap().data().iter().all(|&v| v == 50));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Image::from_fn(4, 3, ColorSpace::Rgb, |x, y, c| (x * 50 + y * 20 + c * 3) as u8).unwrap();
        img.save_png(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap(), img);
        assert!(matches!(Image::load(dir.path().join("missing.png")), Err(Error::MissingFile(_))));
    }
}
