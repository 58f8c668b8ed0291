//! Little-endian binary primitives shared by the on-disk formats.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_bytes<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    path: &Path,
    what: &'static str,
) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Truncated {
                    path: path.to_path_buf(),
                    what,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub(crate) fn read_magic<R: Read>(r: &mut R, expected: [u8; 4], path: &Path) -> Result<()> {
    let mut found = [0u8; 4];
    read_bytes(r, &mut found, path, "magic")?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

pub(crate) fn read_version<R: Read>(r: &mut R, expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(r, path, "version")?;
    if found != expected {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R, path: &Path, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_bytes(r, &mut b, path, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, path: &Path, what: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_bytes(r, &mut b, path, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32<R: Read>(r: &mut R, path: &Path, what: &'static str) -> Result<f32> {
    let mut b = [0u8; 4];
    read_bytes(r, &mut b, path, what)?;
    Ok(f32::from_le_bytes(b))
}

pub(crate) fn read_f32_vec<R: Read>(
    r: &mut R,
    n: usize,
    path: &Path,
    what: &'static str,
) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_bytes(r, &mut bytes, path, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f32_slice<W: Write>(w: &mut W, vs: &[f32]) -> Result<()> {
    for &v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
