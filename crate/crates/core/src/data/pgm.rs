//! Binary PGM (P5) output for grids of generated digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vae::{IMAGE_PIXELS, IMAGE_SIDE};

/// Tiles `[N, 784]` images into a `ceil(N/cols) x cols` grid of 28x28 cells.
/// Cells past the last image stay black. Pixel values are clamped to [0, 1]
/// and quantized as round(255 v).
pub fn encode_grid(images: &Tensor<f32>, cols: usize) -> Result<(usize, usize, Vec<u8>)> {
    if cols == 0 {
        return Err(Error::Contract("grid needs at least one column".into()));
    }
    let shape = images.shape();
    if shape.len() != 2 || shape[1] != IMAGE_PIXELS {
        return Err(Error::Shape(format!(
            "expected [N, {IMAGE_PIXELS}] images, got {shape:?}"
        )));
    }
    let n = shape[0];
    let rows = n.div_ceil(cols);
    let width = cols * IMAGE_SIDE;
    let height = rows * IMAGE_SIDE;
    let mut pixels = vec![0u8; width * height];
    for i in 0..n {
        let (gy, gx) = (i / cols, i % cols);
        let image = images.row(i);
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                let v = image[y * IMAGE_SIDE + x].clamp(0.0, 1.0);
                let out_y = gy * IMAGE_SIDE + y;
                let out_x = gx * IMAGE_SIDE + x;
                pixels[out_y * width + out_x] = (255.0 * v).round() as u8;
            }
        }
    }
    Ok((width, height, pixels))
}

pub fn write_sample_grid(path: &Path, images: &Tensor<f32>, cols: usize) -> Result<()> {
    let (width, height, pixels) = encode_grid(images, cols)?;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(&pixels)?;
    w.flush()?;
    Ok(())
}

/// Parses a binary PGM produced by [`write_sample_grid`]. Exists so tests can
/// verify output without an image library.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let fail = |what: &str| Error::Format(format!("{}: {what}", path.display()));
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!(
                "{}: truncated header",
                path.display()
            )));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P5" {
        return Err(fail("not a P5 file"));
    }
    let width: usize = token(&bytes)?.parse().map_err(|_| fail("bad width"))?;
    let height: usize = token(&bytes)?.parse().map_err(|_| fail("bad height"))?;
    if token(&bytes)? != "255" {
        return Err(fail("expected maxval 255"));
    }
    pos += 1;
    if bytes.len() - pos != width * height {
        return Err(fail("pixel payload does not match dimensions"));
    }
    Ok((width, height, bytes[pos..].to_vec()))
}
