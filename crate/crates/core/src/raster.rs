//! Interleaved (height × width × channels) rasters, image file I/O, and the
//! binary array container used for preprocessed tensors and raw saliency maps.
//!
//! Array file layout, little-endian:
//!
//! | offset | size | field                                |
//! |--------|------|--------------------------------------|
//! | 0      | 4    | magic `GAAR`                         |
//! | 4      | 2    | dtype code (1 = u8, 2 = f32, 3 = f64)|
//! | 6      | 4    | height                               |
//! | 10     | 4    | width                                |
//! | 14     | 2    | channels                             |
//! | 16     | ..   | row-major HWC samples                |

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const ARRAY_MAGIC: [u8; 4] = *b"GAAR";
pub const ARRAY_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

pub type RgbRaster = Raster<u8>;

impl<T: Copy + Default> Raster<T> {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::default())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Raster {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }
}

impl<T: Copy> Raster<T> {
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} samples cannot form a {height}×{width}×{channels} raster",
                data.len()
            )));
        }
        Ok(Raster {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Raster {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies the window starting at (`top`, `left`).
    pub fn window(&self, top: usize, left: usize, height: usize, width: usize) -> Raster<T> {
        assert!(top + height <= self.height && left + width <= self.width);
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in top..top + height {
            let start = self.index(y, left, 0);
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Raster {
            height,
            width,
            channels: self.channels,
            data,
        }
    }
}

impl Raster<u8> {
    pub fn to_f64(&self) -> Raster<f64> {
        self.map(f64::from)
    }
}

impl Raster<f64> {
    /// Rounds to the nearest integer and saturates to `0..=255`.
    pub fn to_u8(&self) -> Raster<u8> {
        self.map(|v| v.round().clamp(0.0, 255.0) as u8)
    }
}

/// Loads any supported raster format (PNG, JPEG, PPM/PGM) as 8-bit RGB.
pub fn load_rgb(path: &Path) -> Result<RgbRaster> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Raster::from_vec(h as usize, w as usize, 3, rgb.into_raw())
}

/// Loads a single-channel 8-bit image (masks).
pub fn load_gray(path: &Path) -> Result<Raster<u8>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Raster::from_vec(h as usize, w as usize, 1, gray.into_raw())
}

/// Saves a 1- or 3-channel 8-bit raster; the format follows the extension.
pub fn save_image(raster: &Raster<u8>, path: &Path) -> Result<()> {
    let color = match raster.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::Shape(format!("cannot encode a {c}-channel image"))),
    };
    ensure_parent(path)?;
    image::save_buffer(
        path,
        raster.data(),
        raster.width() as u32,
        raster.height() as u32,
        color,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

/// Element types that can be stored in an array file.
pub trait ArrayElement: Copy + Sized {
    const DTYPE: u16;
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl ArrayElement for u8 {
    const DTYPE: u16 = 1;
    const SIZE: usize = 1;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl ArrayElement for f32 {
    const DTYPE: u16 = 2;
    const SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl ArrayElement for f64 {
    const DTYPE: u16 = 3;
    const SIZE: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

pub fn encode_array<T: ArrayElement>(raster: &Raster<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(ARRAY_HEADER_LEN + raster.data().len() * T::SIZE);
    out.extend_from_slice(&ARRAY_MAGIC);
    out.extend_from_slice(&T::DTYPE.to_le_bytes());
    out.extend_from_slice(&(raster.height() as u32).to_le_bytes());
    out.extend_from_slice(&(raster.width() as u32).to_le_bytes());
    out.extend_from_slice(&(raster.channels() as u16).to_le_bytes());
    for &v in raster.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode_array<T: ArrayElement>(bytes: &[u8]) -> Result<Raster<T>> {
    if bytes.len() < ARRAY_HEADER_LEN || bytes[..4] != ARRAY_MAGIC {
        return Err(Error::Data("not an array file (bad magic)".into()));
    }
    let dtype = u16::from_le_bytes([bytes[4], bytes[5]]);
    if dtype != T::DTYPE {
        return Err(Error::Data(format!(
            "array dtype code {dtype}, expected {}",
            T::DTYPE
        )));
    }
    let h = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let c = u16::from_le_bytes([bytes[14], bytes[15]]) as usize;
    let body = &bytes[ARRAY_HEADER_LEN..];
    if body.len() != h * w * c * T::SIZE {
        return Err(Error::Data(format!(
            "array body has {} bytes, header implies {}",
            body.len(),
            h * w * c * T::SIZE
        )));
    }
    let data = body.chunks_exact(T::SIZE).map(T::read_le).collect();
    Raster::from_vec(h, w, c, data)
}

pub fn write_array<T: ArrayElement>(raster: &Raster<T>, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_array(raster))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_array<T: ArrayElement>(path: &Path) -> Result<Raster<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(&bytes)
}
