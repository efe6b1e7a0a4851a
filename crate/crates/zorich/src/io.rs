//! Artifact formats: binary PGM, CSV with a header row, pretty JSON.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{RunError, RunResult};

/// 8-bit grayscale image, rows top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer does not match the dimensions");
        GrayImage { width, height, pixels }
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// P5 encoding with maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> RunResult<Self> {
        let bad = |m: &str| RunError::Experiment(format!("malformed PGM: {m}"));
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("magic is not P5"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(bad("maxval must be 255"));
        }
        let data = &bytes[pos + 1..];
        if data.len() != width * height {
            return Err(bad("pixel data length"));
        }
        Ok(GrayImage::new(width, height, data.to_vec()))
    }
}

fn ensure_parent(path: &Path) -> RunResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> RunResult<()> {
    ensure_parent(path)?;
    fs::write(path, img.to_pgm())?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> RunResult<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> RunResult<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::new(3, 2, vec![0, 10, 20, 30, 40, 255]);
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(GrayImage::from_pgm(&bytes).unwrap(), img);
        assert!(GrayImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
