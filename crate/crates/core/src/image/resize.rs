//! Aspect-preserving resize: shorter edge to a target, longer edge capped.

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Target dimensions for `resize_keep_aspect`.
pub fn resize_dims(h: usize, w: usize, short: usize, long_cap: usize) -> (usize, usize) {
    let (h, w) = (h as f64, w as f64);
    let mut scale = short as f64 / h.min(w);
    if h.max(w) * scale > long_cap as f64 {
        scale = long_cap as f64 / h.max(w);
    }
    let th = (h * scale).round().max(1.0) as usize;
    let tw = (w * scale).round().max(1.0) as usize;
    (th, tw)
}

/// Resize so the shorter edge equals `short`, unless that would push the
/// longer edge past `long_cap`, in which case the longer edge is pinned to
/// `long_cap`. Bilinear resampling with half-pixel-center coordinates.
pub fn resize_keep_aspect(img: &ImageTensor, short: usize, long_cap: usize) -> Result<ImageTensor> {
    if short == 0 || long_cap == 0 {
        return Err(Error::Image("resize targets must be positive".into()));
    }
    let (h, w) = (img.height(), img.width());
    let (th, tw) = resize_dims(h, w, short, long_cap);
    if (th, tw) == (h, w) {
        return Ok(img.clone());
    }
    resize_bilinear(img, th, tw)
}

/// Plain bilinear resize to an explicit size.
pub fn resize_bilinear(img: &ImageTensor, th: usize, tw: usize) -> Result<ImageTensor> {
    if th == 0 || tw == 0 {
        return Err(Error::Image("zero-sized resize target".into()));
    }
    let (h, w) = (img.height(), img.width());
    let mut out = ImageTensor::new(th, tw)?;
    let sy = h as f64 / th as f64;
    let sx = w as f64 / tw as f64;
    for c in 0..3 {
        for ty in 0..th {
            let y = ((ty as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            for tx in 0..tw {
                let x = ((tx as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                out.set(c, ty, tx, img.sample_bilinear(c, y, x, 0.0));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn already_at_target_is_unchanged() {
        let img = ImageTensor::filled(384, 640, [0.2, 0.4, 0.6]).unwrap();
        let out = resize_keep_aspect(&img, 384, 640).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn long_edge_cap_binds() {
        assert_eq!(resize_dims(500, 2000, 384, 640), (160, 640));
        assert_eq!(resize_dims(2000, 500, 384, 640), (640, 160));
    }

    #[test]
    fn short_edge_rule_when_cap_slack() {
        assert_eq!(resize_dims(768, 1280, 384, 640), (384, 640));
        assert_eq!(resize_dims(400, 500, 384, 640), (384, 480));
    }

    #[test]
    fn exact_halving_matches_block_average_oracle() {
        // With half-pixel-center bilinear sampling, a 2x downscale equals
        // the mean of each 2x2 source block; check against that closed form.
        let mut rng = crate::seeds::rng(11);
        let mut img = ImageTensor::new(768, 1280).unwrap();
        for c in 0..3 {
            for y in 0..768 {
                for x in 0..1280 {
                    img.set(c, y, x, rng.gen::<f64>());
                }
            }
        }
        let out = resize_keep_aspect(&img, 384, 640).unwrap();
        assert_eq!((out.height(), out.width()), (384, 640));
        for c in 0..3 {
            for y in (0..384).step_by(37) {
                for x in (0..640).step_by(41) {
                    let expect = (img.get(c, 2 * y, 2 * x)
                        + img.get(c, 2 * y, 2 * x + 1)
                        + img.get(c, 2 * y + 1, 2 * x)
                        + img.get(c, 2 * y + 1, 2 * x + 1))
                        / 4.0;
                    assert!((out.get(c, y, x) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_target_rejected() {
        let img = ImageTensor::filled(4, 4, [0.0; 3]).unwrap();
        assert!(resize_keep_aspect(&img, 0, 640).is_err());
        assert!(resize_bilinear(&img, 0, 3).is_err());
    }
}
