//! 8-bit raster input (binary PGM/PPM) and raw f32 grids.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fileio;

pub const GRID_MAGIC: [u8; 4] = *b"HEVG";
pub const GRID_VERSION: u32 = 1;

/// An 8-bit image, row-major with interleaved channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::ShapeMismatch {
                expected: "nonzero dims with 1 or 3 channels".into(),
                got: format!("{width}x{height}x{channels}"),
            });
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bytes", width * height * channels),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Channel-mean luminance scaled to [0, 1].
    #[inline]
    pub fn luminance(&self, row: usize, col: usize) -> f64 {
        let base = (row * self.width + col) * self.channels;
        let mut sum = 0.0f64;
        for c in 0..self.channels {
            sum += self.data[base + c] as f64;
        }
        sum / (self.channels as f64 * 255.0)
    }
}

/// A headerless-in-memory f32 luminance grid; on disk it lives in a small
/// HEVG container. Values are used as-is (no 1/255 scaling).
#[derive(Debug, Clone, PartialEq)]
pub struct RawGrid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RawGrid {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", width * height),
                got: format!("{}", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("raw grid input"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// Any image the backbone stub accepts.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Raster(Raster),
    Grid(RawGrid),
}

impl ImageSource {
    pub fn width(&self) -> usize {
        match self {
            ImageSource::Raster(r) => r.width,
            ImageSource::Grid(g) => g.width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            ImageSource::Raster(r) => r.height,
            ImageSource::Grid(g) => g.height,
        }
    }

    #[inline]
    pub fn luminance(&self, row: usize, col: usize) -> f64 {
        match self {
            ImageSource::Raster(r) => r.luminance(row, col),
            ImageSource::Grid(g) => g.data[row * g.width + col] as f64,
        }
    }

    /// Loads a PGM (P5), PPM (P6) or HEVG file, dispatching on the magic.
    pub fn load(path: &Path) -> Result<Self> {
        let mut file = BufReader::new(File::open(path)?);
        let mut head = [0u8; 2];
        fileio::read_bytes(&mut file, &mut head, path, "image magic")?;
        match &head {
            b"P5" | b"P6" => {
                let channels = if &head == b"P5" { 1 } else { 3 };
                read_pnm_body(&mut file, channels, path).map(ImageSource::Raster)
            }
            b"HE" => {
                let mut rest = [0u8; 2];
                fileio::read_bytes(&mut file, &mut rest, path, "image magic")?;
                if &rest != b"VG" {
                    return Err(Error::BadMagic {
                        path: path.to_path_buf(),
                        expected: GRID_MAGIC,
                        found: [head[0], head[1], rest[0], rest[1]],
                    });
                }
                fileio::read_version(&mut file, GRID_VERSION, path)?;
                let width = fileio::read_u32(&mut file, path, "grid width")? as usize;
                let height = fileio::read_u32(&mut file, path, "grid height")? as usize;
                let data = fileio::read_f32_vec(&mut file, width * height, path, "grid values")?;
                RawGrid::new(width, height, data).map(ImageSource::Grid)
            }
            other => Err(Error::BadRaster {
                path: path.to_path_buf(),
                reason: format!("unsupported image magic {other:?}"),
            }),
        }
    }
}

fn read_pnm_body<R: Read>(r: &mut R, channels: usize, path: &Path) -> Result<Raster> {
    let mut fields = Vec::new();
    let mut in_comment = false;
    let mut cur = String::new();
    // header fields: width, height, maxval; '#' starts a comment to EOL
    while fields.len() < 3 {
        let mut b = [0u8; 1];
        fileio::read_bytes(r, &mut b, path, "pnm header")?;
        let c = b[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        match c {
            '#' => in_comment = true,
            c if c.is_ascii_whitespace() => {
                if !cur.is_empty() {
                    fields.push(std::mem::take(&mut cur));
                }
            }
            c if c.is_ascii_digit() => cur.push(c),
            other => {
                return Err(Error::BadRaster {
                    path: path.to_path_buf(),
                    reason: format!("unexpected character {other:?} in header"),
                })
            }
        }
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::BadRaster {
            path: path.to_path_buf(),
            reason: format!("bad {what}: {s:?}"),
        })
    };
    let width = parse(&fields[0], "width")?;
    let height = parse(&fields[1], "height")?;
    let maxval = parse(&fields[2], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::BadRaster {
            path: path.to_path_buf(),
            reason: format!("unsupported maxval {maxval} (8-bit only)"),
        });
    }
    let mut data = vec![0u8; width * height * channels];
    fileio::read_bytes(r, &mut data, path, "pnm pixels")?;
    Raster::new(width, height, channels, data)
}

/// Writes a grayscale raster as binary PGM (P5).
pub fn write_pgm(path: &Path, raster: &Raster) -> Result<()> {
    if raster.channels != 1 {
        return Err(Error::ShapeMismatch {
            expected: "1 channel".into(),
            got: format!("{}", raster.channels),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", raster.width, raster.height)?;
    w.write_all(&raster.data)?;
    w.flush()?;
    Ok(())
}

/// Writes a raw f32 grid in the HEVG container.
pub fn write_raw_grid(path: &Path, grid: &RawGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&GRID_MAGIC)?;
    fileio::write_u32(&mut w, GRID_VERSION)?;
    fileio::write_u32(&mut w, grid.width as u32)?;
    fileio::write_u32(&mut w, grid.height as u32)?;
    fileio::write_f32_slice(&mut w, &grid.data)?;
    w.flush()?;
    Ok(())
}
