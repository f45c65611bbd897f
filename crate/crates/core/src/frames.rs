//! RGB frames and the on-disk formats they are read from.
//!
//! Besides PNG files, frame stacks are stored in a small raw container:
//!
//! ```text
//! offset  size        field
//! 0       4           magic  b"HFTC"
//! 4       1           format version (1)
//! 5       1           dtype  (0 = u8, 1 = f32 little-endian)
//! 6       1           ndim
//! 7       1           reserved (0)
//! 8       8 × ndim    extents, u64 little-endian
//! ...     ...         row-major data
//! ```
//!
//! Frame stacks use shape `N×H×W×3` (channel-last, as decoded images are).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Planar (channel-first) RGB image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbFrame {
    /// `data` is `3×height×width`, channel-first.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Input(format!("frame extent {height}×{width} is empty")));
        }
        if data.len() != 3 * height * width {
            return Err(Error::Input(format!(
                "frame {height}×{width} needs {} intensities, got {}",
                3 * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; 3 * height * width])
    }

    /// From interleaved 8-bit `H×W×3` pixels.
    pub fn from_rgb8(height: usize, width: usize, pixels: &[u8]) -> Result<Self> {
        if pixels.len() != 3 * height * width {
            return Err(Error::Input(format!(
                "expected {} bytes for a {height}×{width} RGB image, got {}",
                3 * height * width,
                pixels.len()
            )));
        }
        let plane = height * width;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = f64::from(px[c]) / 255.0;
            }
        }
        Self::new(height, width, data)
    }

    /// Interleaved 8-bit `H×W×3` pixels, rounding to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                out.push((self.data[c * plane + i] * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

pub fn load_png(path: &Path) -> Result<RgbFrame> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    RgbFrame::from_rgb8(h as usize, w as usize, img.as_raw())
}

pub fn save_png(path: &Path, frame: &RgbFrame) -> Result<()> {
    let img = image::RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.to_rgb8())
        .ok_or_else(|| Error::Input("frame buffer size mismatch".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// PNG files of a directory in file-name order.
pub fn png_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> =
        std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    paths.sort();
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Raw tensor container
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"HFTC";
const CONTAINER_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            Self::U8(v) => v.len(),
            Self::F32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.is_empty() || shape.len() > u8::MAX as usize {
            return Err(Error::Input(format!("unsupported rank {}", shape.len())));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Input(format!("shape {shape:?} does not match {} elements", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(crate::io::create_file(path)?);
        let dtype = match self.data {
            TensorData::U8(_) => 0u8,
            TensorData::F32(_) => 1u8,
        };
        w.write_all(MAGIC)?;
        w.write_all(&[CONTAINER_VERSION, dtype, self.shape.len() as u8, 0])?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match &self.data {
            TensorData::U8(v) => w.write_all(v)?,
            TensorData::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut head = [0u8; 8];
        r.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(Error::Input(format!("{}: not a tensor container", path.display())));
        }
        if head[4] != CONTAINER_VERSION {
            return Err(Error::Input(format!(
                "{}: unsupported container version {}",
                path.display(),
                head[4]
            )));
        }
        let mut shape = Vec::with_capacity(head[6] as usize);
        for _ in 0..head[6] {
            let mut d = [0u8; 8];
            r.read_exact(&mut d)?;
            shape.push(
                usize::try_from(u64::from_le_bytes(d))
                    .map_err(|_| Error::Input("tensor extent exceeds address space".into()))?,
            );
        }
        let n: usize = shape.iter().product();
        let data = match head[5] {
            0 => {
                let mut v = vec![0u8; n];
                r.read_exact(&mut v)?;
                TensorData::U8(v)
            }
            1 => {
                let mut bytes = vec![0u8; n * 4];
                r.read_exact(&mut bytes)?;
                TensorData::F32(
                    bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect(),
                )
            }
            d => return Err(Error::Input(format!("{}: unknown dtype {d}", path.display()))),
        };
        Self::new(shape, data)
    }
}

/// Stores frames of identical size as a `N×H×W×3` u8 stack.
pub fn write_frame_stack(path: &Path, frames: &[RgbFrame]) -> Result<()> {
    let first = frames.first().ok_or_else(|| Error::EmptyInput("no frames to write".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(frames.len() * h * w * 3);
    for f in frames {
        if (f.height, f.width) != (h, w) {
            return Err(Error::Input("frames in a stack must share one size".into()));
        }
        data.extend(f.to_rgb8());
    }
    TensorFile::new(vec![frames.len(), h, w, 3], TensorData::U8(data))?.write(path)
}

/// Reads a `N×H×W×3` stack (u8, or f32 in `[0, 1]`).
pub fn read_frame_stack(path: &Path) -> Result<Vec<RgbFrame>> {
    let t = TensorFile::read(path)?;
    let [n, h, w, c] = t.shape[..] else {
        return Err(Error::Input(format!("frame stack must be rank 4, got {:?}", t.shape)));
    };
    if c != 3 {
        return Err(Error::Input(format!("frame stack needs 3 channels, got {c}")));
    }
    let per = h * w * 3;
    (0..n)
        .map(|i| match &t.data {
            TensorData::U8(v) => RgbFrame::from_rgb8(h, w, &v[i * per..(i + 1) * per]),
            TensorData::F32(v) => {
                let plane = h * w;
                let mut data = vec![0.0; per];
                for (j, px) in v[i * per..(i + 1) * per].chunks_exact(3).enumerate() {
                    for ch in 0..3 {
                        data[ch * plane + j] = f64::from(px[ch]);
                    }
                }
                RgbFrame::new(h, w, data)
            }
        })
        .collect()
}

/// Loads frames from a container file or a directory of PNGs.
pub fn load_frames(path: &Path) -> Result<Vec<RgbFrame>> {
    if path.is_dir() {
        png_paths(path)?.iter().map(|p| load_png(p)).collect()
    } else {
        read_frame_stack(path)
    }
}
