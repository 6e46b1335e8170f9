//! Portable float map I/O (grayscale `Pf` and 3-channel `PF`), plus a minimal
//! binary PGM reader for real photographs. PFM scanlines run bottom-to-top;
//! a negative scale marks little-endian payloads, which is all we write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_pfm_gray(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::InvalidInput("pfm payload size mismatch".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "Pf\n{width} {height}\n-1.0\n")?;
    for row in (0..height).rev() {
        for col in 0..width {
            w.write_all(&(data[row * width + col] as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_pfm_rgb(path: &Path, width: usize, height: usize, data: &[[f64; 3]]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::InvalidInput("pfm payload size mismatch".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "PF\n{width} {height}\n-1.0\n")?;
    for row in (0..height).rev() {
        for col in 0..width {
            for c in data[row * width + col] {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major from the top; `channels` floats per pixel.
    pub data: Vec<f64>,
}

fn read_token<R: Read>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        let c = byte[0] as char;
        if c.is_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c);
    }
}

pub fn read_pfm(path: &Path) -> Result<PfmImage> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_token(&mut r)?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::InvalidInput(format!("not a PFM file (magic {other:?})"))),
    };
    let width: usize = read_token(&mut r)?
        .parse()
        .map_err(|_| Error::InvalidInput("bad PFM width".into()))?;
    let height: usize = read_token(&mut r)?
        .parse()
        .map_err(|_| Error::InvalidInput("bad PFM height".into()))?;
    let scale: f64 = read_token(&mut r)?
        .parse()
        .map_err(|_| Error::InvalidInput("bad PFM scale".into()))?;
    let little_endian = scale < 0.0;
    let count = width * height * channels;
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw)?;
    let mut data = vec![0.0; count];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        // PFM rows are stored bottom-up; flip to top-down.
        let row_from_bottom = i / (width * channels);
        let rest = i % (width * channels);
        let row = height - 1 - row_from_bottom;
        data[row * width * channels + rest] = v as f64;
    }
    Ok(PfmImage { width, height, channels, data })
}

/// Binary PGM (P5), 8- or 16-bit, mapped into [0, 1]. Radiometric
/// linearization is assumed to have been applied already.
pub fn read_pgm(path: &Path) -> Result<PfmImage> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_token(&mut r)?;
    if magic != "P5" {
        return Err(Error::InvalidInput(format!("not a binary PGM (magic {magic:?})")));
    }
    let width: usize = read_token(&mut r)?
        .parse()
        .map_err(|_| Error::InvalidInput("bad PGM width".into()))?;
    let height: usize = read_token(&mut r)?
        .parse()
        .map_err(|_| Error::InvalidInput("bad PGM height".into()))?;
    let maxval: u32 = read_token(&mut r)?
        .parse()
        .map_err(|_| Error::InvalidInput("bad PGM maxval".into()))?;
    let wide = maxval > 255;
    let mut raw = vec![0u8; width * height * if wide { 2 } else { 1 }];
    r.read_exact(&mut raw)?;
    let data = if wide {
        raw.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
            .collect()
    } else {
        raw.iter().map(|&b| b as f64 / maxval as f64).collect()
    };
    Ok(PfmImage { width, height, channels: 1, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_roundtrip() {
        let dir = std::env::temp_dir().join("hemips_pfm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("g.pfm");
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
        write_pfm_gray(&path, 4, 3, &data).unwrap();
        let img = read_pfm(&path).unwrap();
        assert_eq!((img.width, img.height, img.channels), (4, 3, 1));
        for (a, b) in img.data.iter().zip(&data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rgb_roundtrip() {
        let dir = std::env::temp_dir().join("hemips_pfm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.pfm");
        let data: Vec<[f64; 3]> = (0..6).map(|i| [i as f64, -(i as f64), 0.5]).collect();
        write_pfm_rgb(&path, 3, 2, &data).unwrap();
        let img = read_pfm(&path).unwrap();
        assert_eq!(img.channels, 3);
        for (i, px) in data.iter().enumerate() {
            for c in 0..3 {
                assert!((img.data[i * 3 + c] - px[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pgm_reader() {
        let dir = std::env::temp_dir().join("hemips_pfm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("img.pgm");
        let mut f = File::create(&path).unwrap();
        f.write_all(b"P5\n2 2\n255\n").unwrap();
        f.write_all(&[0, 64, 128, 255]).unwrap();
        drop(f);
        let img = read_pgm(&path).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert!((img.data[3] - 1.0).abs() < 1e-12);
        assert!((img.data[1] - 64.0 / 255.0).abs() < 1e-12);
    }
}
