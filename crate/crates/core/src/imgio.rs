//! File formats: binary PGM images and masks, FGRD float grids, and JSON
//! sidecar manifests.
//!
//! FGRD layout (all little-endian):
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `FGRD`              |
//! | 4      | 2    | version (`u16`, 1)        |
//! | 6      | 2    | channels (`u16`, 1 or 2)  |
//! | 8      | 4    | width (`u32`)             |
//! | 12     | 4    | height (`u32`)            |
//! | 16     | 4    | pitch in mm (`f32`)       |
//! | 20     | …    | `f32` payload, row-major; two channels interleave `(gx, gy)` |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Dims, GradientMap, GrayImage, Grid, Mask, PeriodMap};

pub const FGRD_MAGIC: &[u8; 4] = b"FGRD";
pub const FGRD_VERSION: u16 = 1;
pub const FGRD_HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFileHeader {
    pub channels: u16,
    pub width: u32,
    pub height: u32,
    pub pitch_mm: f32,
}

impl GridFileHeader {
    pub fn payload_len(&self) -> usize {
        self.width as usize * self.height as usize * self.channels as usize * 4
    }

    pub fn to_bytes(&self) -> [u8; FGRD_HEADER_LEN] {
        let mut out = [0u8; FGRD_HEADER_LEN];
        out[0..4].copy_from_slice(FGRD_MAGIC);
        out[4..6].copy_from_slice(&FGRD_VERSION.to_le_bytes());
        out[6..8].copy_from_slice(&self.channels.to_le_bytes());
        out[8..12].copy_from_slice(&self.width.to_le_bytes());
        out[12..16].copy_from_slice(&self.height.to_le_bytes());
        out[16..20].copy_from_slice(&self.pitch_mm.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FGRD_HEADER_LEN {
            return Err(Error::Format(format!(
                "FGRD header needs {FGRD_HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        if &bytes[0..4] != FGRD_MAGIC {
            return Err(Error::Format("bad FGRD magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FGRD_VERSION {
            return Err(Error::Format(format!("unknown FGRD version {version}")));
        }
        let channels = u16::from_le_bytes([bytes[6], bytes[7]]);
        let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let pitch_mm = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
        if channels != 1 && channels != 2 {
            return Err(Error::Format(format!("FGRD channel count {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Format(format!("FGRD dimensions {width}x{height}")));
        }
        if !(pitch_mm > 0.0 && pitch_mm.is_finite()) {
            return Err(Error::Format(format!("FGRD pitch {pitch_mm}")));
        }
        Ok(Self {
            channels,
            width,
            height,
            pitch_mm,
        })
    }
}

/// Contents of an FGRD file before it is given a semantic type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyGrid {
    Scalar(Grid<f32>),
    Vector(GradientMap),
}

impl AnyGrid {
    fn kind(&self) -> &'static str {
        match self {
            AnyGrid::Scalar(_) => "1-channel grid",
            AnyGrid::Vector(_) => "2-channel grid",
        }
    }
}

pub fn encode_grid(grid: &AnyGrid, pitch_mm: f32) -> Vec<u8> {
    let (channels, width, height) = match grid {
        AnyGrid::Scalar(g) => (1u16, g.width(), g.height()),
        AnyGrid::Vector(g) => (2u16, g.width(), g.height()),
    };
    let header = GridFileHeader {
        channels,
        width: width as u32,
        height: height as u32,
        pitch_mm,
    };
    let mut out = Vec::with_capacity(FGRD_HEADER_LEN + header.payload_len());
    out.extend_from_slice(&header.to_bytes());
    match grid {
        AnyGrid::Scalar(g) => {
            for v in g.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        AnyGrid::Vector(g) => {
            for (gx, gy) in g.gx.as_slice().iter().zip(g.gy.as_slice()) {
                out.extend_from_slice(&gx.to_le_bytes());
                out.extend_from_slice(&gy.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<(AnyGrid, f32)> {
    let header = GridFileHeader::parse(bytes)?;
    let payload = &bytes[FGRD_HEADER_LEN..];
    if payload.len() != header.payload_len() {
        return Err(Error::Format(format!(
            "FGRD payload is {} bytes, header implies {}",
            payload.len(),
            header.payload_len()
        )));
    }
    let floats: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let (w, h) = (header.width as usize, header.height as usize);
    let grid = if header.channels == 1 {
        AnyGrid::Scalar(Grid::from_vec(w, h, floats)?)
    } else {
        let gx = floats.iter().step_by(2).copied().collect();
        let gy = floats.iter().skip(1).step_by(2).copied().collect();
        AnyGrid::Vector(GradientMap::new(
            Grid::from_vec(w, h, gx)?,
            Grid::from_vec(w, h, gy)?,
        )?)
    };
    Ok((grid, header.pitch_mm))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<(AnyGrid, f32)> {
    decode_grid(&fs::read(path)?)
}

pub fn write_grid(grid: &AnyGrid, pitch_mm: f32, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_grid(grid, pitch_mm))
}

fn expect_scalar(path: &Path, expected: &'static str) -> Result<(Grid<f32>, f32)> {
    match read_grid(path)? {
        (AnyGrid::Scalar(g), pitch) => Ok((g, pitch)),
        (other, _) => Err(Error::TypeMismatch {
            expected,
            found: other.kind(),
        }),
    }
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<(DepthMap, f32)> {
    let (g, p) = expect_scalar(path.as_ref(), "depth map (1 channel)")?;
    Ok((DepthMap(g), p))
}

pub fn read_period(path: impl AsRef<Path>) -> Result<(PeriodMap, f32)> {
    let (g, p) = expect_scalar(path.as_ref(), "period map (1 channel)")?;
    Ok((PeriodMap(g), p))
}

pub fn read_gradient(path: impl AsRef<Path>) -> Result<(GradientMap, f32)> {
    match read_grid(path)? {
        (AnyGrid::Vector(g), pitch) => Ok((g, pitch)),
        (other, _) => Err(Error::TypeMismatch {
            expected: "gradient map (2 channels)",
            found: other.kind(),
        }),
    }
}

pub fn write_depth(map: &DepthMap, pitch_mm: f32, path: impl AsRef<Path>) -> Result<()> {
    write_grid(&AnyGrid::Scalar(map.0.clone()), pitch_mm, path)
}

pub fn write_period(map: &PeriodMap, pitch_mm: f32, path: impl AsRef<Path>) -> Result<()> {
    write_grid(&AnyGrid::Scalar(map.0.clone()), pitch_mm, path)
}

pub fn write_gradient(map: &GradientMap, pitch_mm: f32, path: impl AsRef<Path>) -> Result<()> {
    write_grid(&AnyGrid::Vector(map.clone()), pitch_mm, path)
}

// --- PGM -------------------------------------------------------------------

struct PgmHeader {
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_pgm_header(bytes: &[u8]) -> Result<PgmHeader> {
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (expected P5)".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("non-numeric PGM header field".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("PGM header field out of range".into()))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing separator after PGM maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("PGM dimensions {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::Unsupported(format!("PGM maxval {maxval}, only 255")));
    }
    Ok(PgmHeader {
        width,
        height,
        data_offset: pos,
    })
}

fn read_pgm_bytes(bytes: &[u8]) -> Result<Grid<u8>> {
    let header = parse_pgm_header(bytes)?;
    let n = header.width * header.height;
    let raster = &bytes[header.data_offset..];
    if raster.len() < n {
        return Err(Error::Format(format!(
            "PGM raster has {} bytes, expected {n}",
            raster.len()
        )));
    }
    Grid::from_vec(header.width, header.height, raster[..n].to_vec())
}

fn encode_pgm(raster: &Grid<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    out.extend_from_slice(raster.as_slice());
    out
}

/// Intensity to byte with round-half-up.
pub fn intensity_to_byte(v: f32) -> u8 {
    ((v as f64) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn decode_pgm(bytes: &[u8], pitch_mm: f32) -> Result<GrayImage> {
    let raster = read_pgm_bytes(bytes)?;
    GrayImage::new(raster.map(|b| b as f32 / 255.0), pitch_mm)
}

pub fn read_pgm(path: impl AsRef<Path>, pitch_mm: f32) -> Result<GrayImage> {
    decode_pgm(&fs::read(path)?, pitch_mm)
}

pub fn encode_image_pgm(image: &GrayImage) -> Vec<u8> {
    encode_pgm(&image.pixels().map(intensity_to_byte))
}

pub fn write_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_image_pgm(image))
}

/// Masks are PGM files holding 0 and 255; any byte ≥ 128 reads as foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let raster = read_pgm_bytes(&fs::read(path)?)?;
    Ok(Mask::from_grid(raster.map(|b| b >= 128)))
}

pub fn write_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let raster = mask.bits().map(|b| if b { 255u8 } else { 0 });
    write_file(path.as_ref(), &encode_pgm(&raster))
}

// --- Manifest --------------------------------------------------------------

/// Provenance sidecar written next to stage outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Manifest {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_factor: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yaw_deg: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_point: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub canvas_offset: Option<[i64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pitch_mm: Option<f32>,
    /// Input file name the outputs were derived from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_period_px: Option<f32>,
    /// Period taken as unforeshortened when converting periods to slope.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_period_px: Option<f32>,
}

/// `foo/bar.pgm` → `foo/bar.json`.
pub fn manifest_path(path: impl AsRef<Path>) -> PathBuf {
    path.as_ref().with_extension("json")
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    write_file(path.as_ref(), &bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(bytes)?;
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pgm(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
        let mut v = format!("P5\n# comment\n{width} {height}\n255\n").into_bytes();
        v.extend_from_slice(data);
        v
    }

    #[test]
    fn pgm_byte_mapping() {
        let mut data = vec![128u8; 64];
        data[0] = 0;
        data[1] = 255;
        let img = decode_pgm(&pgm(8, 8, &data), 0.05).unwrap();
        assert_eq!(img.get(0, 0), 0.0);
        assert_eq!(img.get(1, 0), 1.0);
        assert_eq!(encode_image_pgm(&img), encode_pgm(&Grid::from_vec(8, 8, data).unwrap()));
    }

    #[test]
    fn ascii_pgm_rejected() {
        let bytes = b"P2\n8 8\n255\n0 0 0".to_vec();
        assert!(matches!(decode_pgm(&bytes, 0.05), Err(Error::Format(_))));
    }

    #[test]
    fn sixteen_bit_pgm_unsupported() {
        let mut bytes = b"P5\n8 8\n65535\n".to_vec();
        bytes.extend(vec![0u8; 128]);
        assert!(matches!(decode_pgm(&bytes, 0.05), Err(Error::Unsupported(_))));
    }

    #[test]
    fn truncated_pgm_rejected() {
        assert!(matches!(
            decode_pgm(&pgm(8, 8, &[0u8; 10]), 0.05),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn round_half_up() {
        assert_eq!(intensity_to_byte(0.5), 128); // 127.5 rounds up
        assert_eq!(intensity_to_byte(0.0), 0);
        assert_eq!(intensity_to_byte(1.0), 255);
        assert_eq!(intensity_to_byte(100.0 / 255.0), 100);
    }

    #[test]
    fn zero_width_grid_rejected() {
        let mut bytes = GridFileHeader {
            channels: 1,
            width: 1,
            height: 1,
            pitch_mm: 0.05,
        }
        .to_bytes()
        .to_vec();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_grid(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_version_and_truncation() {
        let g = AnyGrid::Scalar(Grid::filled(3, 2, 1.5));
        let good = encode_grid(&g, 0.05);
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_grid(&bad_magic), Err(Error::Format(_))));
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(decode_grid(&bad_version), Err(Error::Format(_))));
        assert!(matches!(
            decode_grid(&good[..good.len() - 1]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn header_layout_is_little_endian() {
        let g = AnyGrid::Vector(GradientMap::zeros(2, 3));
        let bytes = encode_grid(&g, 0.05);
        assert_eq!(&bytes[0..4], b"FGRD");
        assert_eq!(&bytes[4..8], &[1, 0, 2, 0]);
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &0.05f32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 2 * 3 * 2 * 4);
    }

    #[test]
    fn two_channel_as_depth_is_type_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.fgrd");
        write_gradient(&GradientMap::zeros(4, 4), 0.05, &path).unwrap();
        assert!(matches!(read_depth(&path), Err(Error::TypeMismatch { .. })));
        let path1 = dir.path().join("d.fgrd");
        write_depth(&DepthMap::filled(4, 4, 1.0), 0.05, &path1).unwrap();
        assert!(matches!(read_gradient(&path1), Err(Error::TypeMismatch { .. })));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let m = Mask::from_fn(9, 8, |x, y| (x * y) % 3 == 0);
        write_mask(&m, &path).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);
    }

    #[test]
    fn manifest_keys_optional() {
        let m: Manifest = serde_json::from_str("{}").unwrap();
        assert_eq!(m, Manifest::default());
        let m: Manifest = serde_json::from_str(r#"{"stage":"unwarp","zero_point":[3.0,4.0]}"#).unwrap();
        assert_eq!(m.zero_point, Some([3.0, 4.0]));
        assert_eq!(manifest_path("a/b.pgm"), PathBuf::from("a/b.json"));
    }

    proptest! {
        #[test]
        fn grid_round_trip_is_bit_exact(
            w in 1usize..6, h in 1usize..6, two in any::<bool>(),
            seed in proptest::collection::vec(any::<u32>(), 72),
        ) {
            let vals: Vec<f32> = seed.iter().map(|b| f32::from_bits(*b)).collect();
            let n = w * h;
            let grid = if two {
                AnyGrid::Vector(GradientMap::new(
                    Grid::from_vec(w, h, vals[..n].to_vec()).unwrap(),
                    Grid::from_vec(w, h, vals[n..2 * n].to_vec()).unwrap(),
                ).unwrap())
            } else {
                AnyGrid::Scalar(Grid::from_vec(w, h, vals[..n].to_vec()).unwrap())
            };
            let bytes = encode_grid(&grid, 0.05);
            let (back, pitch) = decode_grid(&bytes).unwrap();
            prop_assert_eq!(pitch, 0.05);
            prop_assert_eq!(encode_grid(&back, pitch), bytes);
        }
    }
}
