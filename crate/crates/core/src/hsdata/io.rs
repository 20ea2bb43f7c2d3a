//! HSC1 cube and HPM1 parameter-map files.
//!
//! ```text
//! 0..4      magic (`HSC1` or `HPM1`)
//! 4..8      header length L, u32 little-endian
//! 8..8+L    UTF-8 JSON header
//! ...       H·W·B (or H·W·P) f32 little-endian values
//! ...       if has_mask: ceil(H·W/8) bytes, row-major, LSB first
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{checked_volume, HyperspectralCube, ParameterMap};
use crate::error::{Error, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const MAP_MAGIC: &[u8; 4] = b"HPM1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CubeHeader {
    height: usize,
    width: usize,
    bands: usize,
    wavelengths_nm: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    param_names: Option<Vec<String>>,
    has_mask: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapHeader {
    height: usize,
    width: usize,
    params: usize,
    param_names: Vec<String>,
    ranges: Vec<(f64, f64)>,
    has_mask: bool,
}

pub fn write_cube(cube: &HyperspectralCube, path: impl AsRef<Path>) -> Result<()> {
    let header = CubeHeader {
        height: cube.height(),
        width: cube.width(),
        bands: cube.bands(),
        wavelengths_nm: cube.wavelengths_nm().to_vec(),
        param_names: None,
        has_mask: cube.mask().is_some(),
    };
    let bytes = encode(CUBE_MAGIC, &header, cube.values(), cube.mask())?;
    write_file(path.as_ref(), &bytes)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HyperspectralCube> {
    let bytes = read_file(path.as_ref())?;
    let (header, rest): (CubeHeader, &[u8]) = decode_header(CUBE_MAGIC, &bytes)?;
    if header.wavelengths_nm.len() != header.bands {
        return Err(Error::Header(format!("bands = {} but {} wavelengths", header.bands, header.wavelengths_nm.len())));
    }
    let (values, mask) = decode_payload(rest, &[header.height, header.width, header.bands], header.has_mask)?;
    let cube = HyperspectralCube::new(header.height, header.width, header.wavelengths_nm, values)?;
    match mask {
        Some(m) => cube.with_mask(m),
        None => Ok(cube),
    }
}

pub fn write_map(map: &ParameterMap, path: impl AsRef<Path>) -> Result<()> {
    let header = MapHeader {
        height: map.height(),
        width: map.width(),
        params: map.n_params(),
        param_names: map.names().to_vec(),
        ranges: map.ranges().to_vec(),
        has_mask: map.mask().is_some(),
    };
    let bytes = encode(MAP_MAGIC, &header, map.values(), map.mask())?;
    write_file(path.as_ref(), &bytes)
}

pub fn read_map(path: impl AsRef<Path>) -> Result<ParameterMap> {
    let bytes = read_file(path.as_ref())?;
    let (header, rest): (MapHeader, &[u8]) = decode_header(MAP_MAGIC, &bytes)?;
    if header.param_names.len() != header.params || header.ranges.len() != header.params {
        return Err(Error::Header("params count disagrees with names/ranges".into()));
    }
    let (values, mask) = decode_payload(rest, &[header.height, header.width, header.params], header.has_mask)?;
    let map = ParameterMap::from_f32(header.height, header.width, header.param_names, header.ranges, values)?;
    match mask {
        Some(m) => map.with_mask(m),
        None => Ok(map),
    }
}

fn encode<H: Serialize>(magic: &[u8; 4], header: &H, values: &[f32], mask: Option<&[bool]>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Header(e.to_string()))?;
    let header_len =
        u32::try_from(json.len()).map_err(|_| Error::DimensionOverflow("header longer than u32::MAX".into()))?;
    let mask_len = mask.map_or(0, |m| m.len().div_ceil(8));
    let mut out = Vec::with_capacity(8 + json.len() + values.len() * 4 + mask_len);
    out.extend_from_slice(magic);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(m) = mask {
        out.extend_from_slice(&pack_mask(m));
    }
    Ok(out)
}

fn decode_header<'a, H: for<'de> Deserialize<'de>>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<(H, &'a [u8])> {
    if bytes.len() < 8 {
        return Err(Error::LengthMismatch { expected: 8, found: bytes.len() as u64 });
    }
    if &bytes[0..4] != magic {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[0..4]).into_owned(),
        });
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let end = 8 + len;
    if bytes.len() < end {
        return Err(Error::LengthMismatch { expected: end as u64, found: bytes.len() as u64 });
    }
    let header = serde_json::from_slice(&bytes[8..end]).map_err(|e| Error::Header(e.to_string()))?;
    Ok((header, &bytes[end..]))
}

fn decode_payload(rest: &[u8], dims: &[usize], has_mask: bool) -> Result<(Vec<f32>, Option<Vec<bool>>)> {
    let count = checked_volume(dims)?;
    let pixels = dims[0] * dims[1];
    let value_bytes = count.checked_mul(4).ok_or_else(|| Error::DimensionOverflow(format!("{dims:?}")))?;
    let mask_bytes = if has_mask { pixels.div_ceil(8) } else { 0 };
    let expected = value_bytes + mask_bytes;
    if rest.len() != expected {
        return Err(Error::LengthMismatch { expected: expected as u64, found: rest.len() as u64 });
    }
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in rest[..value_bytes].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if v.is_nan() {
            return Err(Error::NonFinite(format!("NaN payload value at index {i}")));
        }
        values.push(v);
    }
    let mask = has_mask.then(|| unpack_mask(&rest[value_bytes..], pixels));
    Ok((values, mask))
}

pub(crate) fn pack_mask(mask: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; mask.len().div_ceil(8)];
    for (i, &m) in mask.iter().enumerate() {
        if m {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_mask(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::IoAt { path: path.to_path_buf(), source })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::IoAt { path: path.to_path_buf(), source })
}
