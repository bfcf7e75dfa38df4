//! Raster buffers, binary masks and PNG I/O.
//!
//! Intensities stay 8-bit end to end; conversion to floating point happens
//! only inside [`crate::scoring`].

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unsupported pixel format {0}: only 8-bit grayscale or RGB without alpha is accepted")]
    UnsupportedFormat(String),
    #[error("png codec error: {0}")]
    Codec(#[from] image::ImageError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Decoded raster image, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
    max_value: u8,
}

impl ImageBuffer {
    /// 8-bit image with `MAX = 255`.
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, ImageError> {
        Self::with_max_value(width, height, channels, data, u8::MAX)
    }

    pub fn with_max_value(
        width: u32,
        height: u32,
        channels: u8,
        data: Vec<u8>,
        max_value: u8,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("empty image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Invalid(format!(
                "{channels} channels; expected 1 or 3"
            )));
        }
        if max_value == 0 {
            return Err(ImageError::Invalid("max_value must be positive".into()));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(ImageError::Invalid(format!(
                "data length {} != {width}x{height}x{channels} = {expected}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > max_value) {
            return Err(ImageError::Invalid(format!(
                "intensity {v} exceeds max_value {max_value}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            max_value,
        })
    }

    /// Every sample set to `value`.
    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self, ImageError> {
        let n = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; n])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn max_value(&self) -> u8 {
        self.max_value
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Channel values of the pixel at linear index `idx = y * width + x`.
    pub fn pixel(&self, idx: usize) -> &[u8] {
        let c = self.channels as usize;
        &self.data[idx * c..idx * c + c]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_shape(&self, other: &ImageBuffer) -> Result<(), ImageError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(ImageError::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn check_mask(&self, mask: &MaskBuffer) -> Result<(), ImageError> {
        if self.width == mask.width() && self.height == mask.height() {
            Ok(())
        } else {
            Err(ImageError::DimensionMismatch(format!(
                "image {}x{} vs mask {}x{}",
                self.width,
                self.height,
                mask.width(),
                mask.height()
            )))
        }
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Self::from_dynamic(img)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode_png(&bytes)
    }

    fn from_dynamic(img: DynamicImage) -> Result<Self, ImageError> {
        let (w, h) = (img.width(), img.height());
        match img {
            DynamicImage::ImageLuma8(buf) => Self::new(w, h, 1, buf.into_raw()),
            DynamicImage::ImageRgb8(buf) => Self::new(w, h, 3, buf.into_raw()),
            other => Err(ImageError::UnsupportedFormat(format!("{:?}", other.color()))),
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let color = match self.channels {
            1 => ExtendedColorType::L8,
            _ => ExtendedColorType::Rgb8,
        };
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(Cursor::new(&mut out)).write_image(
            &self.data,
            self.width,
            self.height,
            color,
        )?;
        Ok(out)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Binary region selector; `true` marks an unknown (masked) pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskBuffer {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl MaskBuffer {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("empty mask {width}x{height}")));
        }
        if bits.len() != width as usize * height as usize {
            return Err(ImageError::Invalid(format!(
                "mask length {} != {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Result<Self, ImageError> {
        Self::new(width, height, vec![false; width as usize * height as usize])
    }

    pub fn ones(width: u32, height: u32) -> Result<Self, ImageError> {
        Self::new(width, height, vec![true; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn masked_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Masked pixel count over total pixel count.
    pub fn masked_fraction(&self) -> f64 {
        self.masked_count() as f64 / self.bits.len() as f64
    }

    /// Single-channel PNG, 255 = masked, 0 = known.
    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let raw: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(Cursor::new(&mut out)).write_image(
            &raw,
            self.width,
            self.height,
            ExtendedColorType::L8,
        )?;
        Ok(out)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let img = ImageBuffer::decode_png(bytes)?;
        if img.channels() != 1 {
            return Err(ImageError::UnsupportedFormat(
                "mask must be a 1-channel PNG".into(),
            ));
        }
        let bits = img
            .data()
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                255 => Ok(true),
                other => Err(ImageError::Invalid(format!(
                    "mask value {other} is neither 0 nor 255"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(img.width(), img.height(), bits)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode_png(&bytes)
    }
}

/// Paste `recovered` over `original` wherever `mask` is set.
pub fn composite(
    original: &ImageBuffer,
    mask: &MaskBuffer,
    recovered: &ImageBuffer,
) -> Result<ImageBuffer, ImageError> {
    original.check_shape(recovered)?;
    original.check_mask(mask)?;
    if original.max_value != recovered.max_value {
        return Err(ImageError::DimensionMismatch(format!(
            "max_value {} vs {}",
            original.max_value, recovered.max_value
        )));
    }
    let c = original.channels as usize;
    let mut data = original.data.clone();
    for (idx, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        data[idx * c..idx * c + c].copy_from_slice(&recovered.data[idx * c..idx * c + c]);
    }
    Ok(ImageBuffer { data, ..original.clone() })
}
