//! PNG and PPM (binary P6) image reading and writing.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

fn to_unit(v: u8) -> f64 {
    v as f64 / 255.0
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decode a PNG or PPM file based on its extension.
pub fn read_image(path: &Path) -> Result<ImageTensor> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => read_png(path),
        Some("ppm") => read_ppm(path),
        other => Err(Error::Image(format!(
            "unsupported image extension {other:?} (png and ppm only)"
        ))),
    }
}

pub fn write_image(path: &Path, img: &ImageTensor) -> Result<()> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => write_png(path, img),
        Some("ppm") => write_ppm(path, img),
        other => Err(Error::Image(format!(
            "unsupported image extension {other:?} (png and ppm only)"
        ))),
    }
}

pub fn read_png(path: &Path) -> Result<ImageTensor> {
    let dyn_img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let rgb = dyn_img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut img = ImageTensor::new(h, w)?;
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            img.set(c, y as usize, x as usize, to_unit(px.0[c]));
        }
    }
    Ok(img)
}

pub fn write_png(path: &Path, img: &ImageTensor) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                to_byte(img.get(0, y, x)),
                to_byte(img.get(1, y, x)),
                to_byte(img.get(2, y, x)),
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn read_ppm(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let err = |msg: &str| Error::Image(format!("{}: {msg}", path.display()));

    // Header: "P6" <w> <h> <maxval> followed by a single whitespace byte.
    let mut pos = 0usize;
    let mut fields: Vec<usize> = Vec::new();
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(err("not a binary PPM (P6) file"));
    }
    pos += 2;
    while fields.len() < 3 {
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
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(err("malformed PPM header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        fields.push(text.parse::<usize>().map_err(|_| err("bad header field"))?);
    }
    pos += 1; // single whitespace after maxval
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(err("only maxval 255 supported"));
    }
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(err("truncated pixel data"));
    }
    let mut img = ImageTensor::new(h, w)?;
    for y in 0..h {
        for x in 0..w {
            let o = pos + 3 * (y * w + x);
            for c in 0..3 {
                img.set(c, y, x, to_unit(bytes[o + c]));
            }
        }
    }
    Ok(img)
}

pub fn write_ppm(path: &Path, img: &ImageTensor) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let (h, w) = (img.height(), img.width());
    write!(out, "P6\n{w} {h}\n255\n").map_err(|e| Error::io(path, e))?;
    let mut row = Vec::with_capacity(3 * w);
    for y in 0..h {
        row.clear();
        for x in 0..w {
            row.push(to_byte(img.get(0, y, x)));
            row.push(to_byte(img.get(1, y, x)));
            row.push(to_byte(img.get(2, y, x)));
        }
        out.write_all(&row).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> ImageTensor {
        let mut img = ImageTensor::new(h, w).unwrap();
        for y in 0..h {
            for x in 0..w {
                img.set(0, y, x, x as f64 / (w - 1).max(1) as f64);
                img.set(1, y, x, y as f64 / (h - 1).max(1) as f64);
                img.set(2, y, x, 0.25);
            }
        }
        img
    }

    #[test]
    fn png_round_trip_is_exact_at_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = gradient_image(13, 17);
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.height(), 13);
        assert_eq!(back.width(), 17);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn ppm_round_trip_is_exact_at_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let img = gradient_image(8, 5);
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn unsupported_extension_rejected() {
        assert!(read_image(Path::new("x.jpg")).is_err());
    }
}
