//! PNG helpers for tiles, quantized OD planes and label images, plus content hashing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageBuffer, Luma, Rgb};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::plane::Plane;

/// OD planes are stored as 16-bit PNG in units of 1e-4 OD.
pub const OD_PLANE_SCALE: f64 = 10_000.0;

fn encoder(path: &Path) -> Result<PngEncoder<BufWriter<File>>> {
    let w = BufWriter::new(File::create(path)?);
    Ok(PngEncoder::new_with_quality(w, CompressionType::Fast, FilterType::Sub))
}

pub fn write_png_rgb8(path: &Path, width: u32, height: u32, raw: &[u8]) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, &[u8]> = ImageBuffer::from_raw(width, height, raw)
        .ok_or_else(|| Error::InvalidTile("RGB buffer size".into()))?;
    buf.write_with_encoder(encoder(path)?)?;
    Ok(())
}

pub fn write_png_gray16(path: &Path, width: u32, height: u32, data: Vec<u16>) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(width, height, data)
        .ok_or_else(|| Error::InvalidTile("gray16 buffer size".into()))?;
    buf.write_with_encoder(encoder(path)?)?;
    Ok(())
}

pub fn read_png_gray16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}

pub fn save_plane(path: &Path, plane: &Plane) -> Result<()> {
    let q = plane
        .data
        .iter()
        .map(|&v| (v * OD_PLANE_SCALE).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect();
    write_png_gray16(path, plane.width as u32, plane.height as u32, q)
}

pub fn load_plane(path: &Path) -> Result<Plane> {
    let (w, h, q) = read_png_gray16(path)?;
    Ok(Plane::from_vec(
        w,
        h,
        q.into_iter().map(|v| f64::from(v) / OD_PLANE_SCALE).collect(),
    ))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut r = BufReader::new(File::open(path)?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_png_quantizes_to_1e4() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.png");
        let plane = Plane::from_vec(3, 2, vec![0.0, 0.12345, 1.0, 2.40654, 6.6, 0.00004]);
        save_plane(&p, &plane).unwrap();
        let back = load_plane(&p).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        let expect = [0.0, 0.1235, 1.0, 2.4065, 6.5535, 0.0];
        for (a, b) in back.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
