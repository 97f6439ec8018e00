//! RandAugment-style augmentation over a fixed 14-op policy list.
//!
//! Color inversion and cutout are deliberately not in the list. Magnitude
//! levels in `[0, 30]` map linearly onto per-op parameter ranges:
//! rotate <= 30 deg, shear <= 0.3, translate <= 0.45 * edge, solarize
//! threshold `1 - level/30`, posterize `8 - floor(4 * level/30)` bits,
//! enhancement factors `1 +/- 0.9 * level/30`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

const FILL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugOp {
    Identity,
    Autocontrast,
    Equalize,
    Rotate,
    Solarize,
    Posterize,
    Color,
    Contrast,
    Brightness,
    Sharpness,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

pub const ALL_OPS: [AugOp; 14] = [
    AugOp::Identity,
    AugOp::Autocontrast,
    AugOp::Equalize,
    AugOp::Rotate,
    AugOp::Solarize,
    AugOp::Posterize,
    AugOp::Color,
    AugOp::Contrast,
    AugOp::Brightness,
    AugOp::Sharpness,
    AugOp::ShearX,
    AugOp::ShearY,
    AugOp::TranslateX,
    AugOp::TranslateY,
];

impl AugOp {
    /// Ops whose parameter takes a random sign.
    pub fn signed(self) -> bool {
        matches!(
            self,
            AugOp::Rotate
                | AugOp::ShearX
                | AugOp::ShearY
                | AugOp::TranslateX
                | AugOp::TranslateY
                | AugOp::Color
                | AugOp::Contrast
                | AugOp::Brightness
                | AugOp::Sharpness
        )
    }
}

/// Unsigned parameter an op receives at a magnitude level in `[0, 30]`.
///
/// Rotation is in degrees, shear is a slope, translate is an edge fraction,
/// solarize is a threshold, posterize a bit count, and the enhancement ops
/// return the factor offset (the applied factor is `1 ± offset`).
pub fn magnitude_param(op: AugOp, level: f64) -> f64 {
    let frac = level / 30.0;
    match op {
        AugOp::Identity | AugOp::Autocontrast | AugOp::Equalize => 0.0,
        AugOp::Rotate => frac * 30.0,
        AugOp::ShearX | AugOp::ShearY => frac * 0.3,
        AugOp::TranslateX | AugOp::TranslateY => frac * 0.45,
        AugOp::Solarize => 1.0 - frac,
        AugOp::Posterize => 8.0 - (4.0 * frac).floor(),
        AugOp::Color | AugOp::Contrast | AugOp::Brightness | AugOp::Sharpness => 0.9 * frac,
    }
}

/// One sampled policy entry, recorded in augmentation logs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugPolicy {
    pub op: AugOp,
    pub level: f64,
    /// +1.0 or -1.0; fixed at +1.0 for unsigned ops.
    pub sign: f64,
}

/// Sample `n_ops` policies uniformly over the op list.
pub fn sample_policy(n_ops: usize, level: f64, rng: &mut impl Rng) -> Vec<AugPolicy> {
    (0..n_ops)
        .map(|_| {
            let op = ALL_OPS[rng.gen_range(0..ALL_OPS.len())];
            let sign = if op.signed() {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            } else {
                1.0
            };
            AugPolicy { op, level, sign }
        })
        .collect()
}

/// Apply RandAugment with `n_ops` uniformly sampled policies at a fixed
/// magnitude. Returns the augmented image and the sampled policy.
pub fn rand_augment(
    img: &ImageTensor,
    n_ops: usize,
    magnitude: f64,
    rng: &mut impl Rng,
) -> Result<(ImageTensor, Vec<AugPolicy>)> {
    if !(0.0..=30.0).contains(&magnitude) {
        return Err(Error::Image(format!(
            "augment magnitude must be in [0, 30], got {magnitude}"
        )));
    }
    let policy = sample_policy(n_ops, magnitude, rng);
    let mut out = img.clone();
    for p in &policy {
        out = apply_op(&out, *p);
        out.clamp_01();
    }
    Ok((out, policy))
}

/// Apply a single policy entry.
pub fn apply_op(img: &ImageTensor, p: AugPolicy) -> ImageTensor {
    let param = magnitude_param(p.op, p.level);
    match p.op {
        AugOp::Identity => img.clone(),
        AugOp::Autocontrast => autocontrast(img),
        AugOp::Equalize => equalize(img),
        AugOp::Rotate => affine(img, AffineKind::Rotate(p.sign * param)),
        AugOp::Solarize => solarize(img, param),
        AugOp::Posterize => posterize(img, param as u32),
        AugOp::Color => enhance_color(img, 1.0 + p.sign * param),
        AugOp::Contrast => enhance_contrast(img, 1.0 + p.sign * param),
        AugOp::Brightness => brightness(img, 1.0 + p.sign * param),
        AugOp::Sharpness => sharpness(img, 1.0 + p.sign * param),
        AugOp::ShearX => affine(img, AffineKind::ShearX(p.sign * param)),
        AugOp::ShearY => affine(img, AffineKind::ShearY(p.sign * param)),
        AugOp::TranslateX => affine(img, AffineKind::TranslateX(p.sign * param)),
        AugOp::TranslateY => affine(img, AffineKind::TranslateY(p.sign * param)),
    }
}

enum AffineKind {
    Rotate(f64),
    ShearX(f64),
    ShearY(f64),
    TranslateX(f64),
    TranslateY(f64),
}

/// Centered inverse-mapped affine transform with bilinear sampling.
fn affine(img: &ImageTensor, kind: AffineKind) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    // Inverse map: destination (y, x) -> source coordinates.
    let map = |y: f64, x: f64| -> (f64, f64) {
        let (dy, dx) = (y - cy, x - cx);
        match kind {
            AffineKind::Rotate(deg) => {
                let th = deg.to_radians();
                let (s, c) = th.sin_cos();
                (cy + dx * s + dy * c, cx + dx * c - dy * s)
            }
            AffineKind::ShearX(s) => (y, cx + dx - s * dy),
            AffineKind::ShearY(s) => (cy + dy - s * dx, x),
            AffineKind::TranslateX(frac) => (y, x - frac * w as f64),
            AffineKind::TranslateY(frac) => (y - frac * h as f64, x),
        }
    };
    let mut out = ImageTensor::new(h, w).unwrap();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = map(y as f64, x as f64);
                out.set(c, y, x, img.sample_bilinear(c, sy, sx, FILL));
            }
        }
    }
    out
}

fn autocontrast(img: &ImageTensor) -> ImageTensor {
    let mut out = img.clone();
    for c in 0..3 {
        let plane = img.plane(c);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in plane {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi > lo {
            let scale = 1.0 / (hi - lo);
            for (o, &v) in out.plane_mut(c).iter_mut().zip(plane) {
                *o = (v - lo) * scale;
            }
        }
    }
    out
}

/// Histogram equalization on the 8-bit quantization of each channel.
fn equalize(img: &ImageTensor) -> ImageTensor {
    let mut out = img.clone();
    for c in 0..3 {
        let plane = img.plane(c);
        let mut hist = [0usize; 256];
        for &v in plane {
            hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
        }
        let last_nonzero = match hist.iter().rposition(|&n| n > 0) {
            Some(i) => i,
            None => continue,
        };
        let total: usize = hist.iter().sum();
        let step = (total - hist[last_nonzero]) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0u8; 256];
        let mut n = step / 2;
        for (i, l) in lut.iter_mut().enumerate() {
            *l = (n / step).min(255) as u8;
            n += hist[i];
        }
        for (o, &v) in out.plane_mut(c).iter_mut().zip(plane) {
            let q = (v.clamp(0.0, 1.0) * 255.0).round() as usize;
            *o = lut[q] as f64 / 255.0;
        }
    }
    out
}

fn solarize(img: &ImageTensor, threshold: f64) -> ImageTensor {
    let mut out = img.clone();
    for v in out.data_mut() {
        if *v >= threshold {
            *v = 1.0 - *v;
        }
    }
    out
}

fn posterize(img: &ImageTensor, bits: u32) -> ImageTensor {
    let bits = bits.clamp(1, 8);
    let mask: u8 = (0xffu16 << (8 - bits)) as u8;
    let mut out = img.clone();
    for v in out.data_mut() {
        let q = (v.clamp(0.0, 1.0) * 255.0).round() as u8 & mask;
        *v = q as f64 / 255.0;
    }
    out
}

/// Blend toward per-pixel grayscale (factor 0) or away from it.
fn enhance_color(img: &ImageTensor, factor: f64) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let g = img.luma(y, x);
            for c in 0..3 {
                out.set(c, y, x, g + factor * (img.get(c, y, x) - g));
            }
        }
    }
    out
}

/// Blend toward the mean luma (factor 0) or away from it.
fn enhance_contrast(img: &ImageTensor, factor: f64) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let mut mean = 0.0;
    for y in 0..h {
        for x in 0..w {
            mean += img.luma(y, x);
        }
    }
    mean /= (h * w) as f64;
    let mut out = img.clone();
    for v in out.data_mut().iter_mut() {
        *v = mean + factor * (*v - mean);
    }
    out
}

fn brightness(img: &ImageTensor, factor: f64) -> ImageTensor {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v *= factor;
    }
    out
}

/// Blend between a 3x3-smoothed image (factor 0) and the original.
fn sharpness(img: &ImageTensor, factor: f64) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    if h < 3 || w < 3 {
        return out;
    }
    for c in 0..3 {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut acc = 0.0;
                for (dy, dx, k) in [
                    (-1i64, -1i64, 1.0),
                    (-1, 0, 1.0),
                    (-1, 1, 1.0),
                    (0, -1, 1.0),
                    (0, 0, 5.0),
                    (0, 1, 1.0),
                    (1, -1, 1.0),
                    (1, 0, 1.0),
                    (1, 1, 1.0),
                ] {
                    acc += k * img.get(c, (y as i64 + dy) as usize, (x as i64 + dx) as usize);
                }
                let smooth = acc / 13.0;
                out.set(c, y, x, smooth + factor * (img.get(c, y, x) - smooth));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    fn test_image() -> ImageTensor {
        let mut rng = seeds::rng(5);
        let mut img = ImageTensor::new(24, 32).unwrap();
        for v in img.data_mut() {
            *v = rng.gen::<f64>();
        }
        img
    }

    #[test]
    fn zero_ops_is_identity() {
        let img = test_image();
        let (out, policy) = rand_augment(&img, 0, 9.0, &mut seeds::rng(0)).unwrap();
        assert!(policy.is_empty());
        assert_eq!(out, img);
    }

    #[test]
    fn policy_never_contains_invert_or_cutout() {
        // The op list is closed; over many draws every sampled op must be a
        // member and none may be an inversion or cutout (absent by design).
        let mut rng = seeds::rng(3);
        for _ in 0..10_000 {
            let p = sample_policy(1, 9.0, &mut rng)[0];
            assert!(ALL_OPS.contains(&p.op));
            let name = serde_json::to_string(&p.op).unwrap();
            assert!(!name.contains("invert"));
            assert!(!name.contains("cutout"));
        }
    }

    #[test]
    fn rotate_param_at_level_nine_is_nine_degrees() {
        assert!((magnitude_param(AugOp::Rotate, 9.0) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn magnitude_table_matches_pinned_mapping() {
        assert!((magnitude_param(AugOp::ShearX, 30.0) - 0.3).abs() < 1e-12);
        assert!((magnitude_param(AugOp::TranslateY, 30.0) - 0.45).abs() < 1e-12);
        assert!((magnitude_param(AugOp::Solarize, 9.0) - 0.7).abs() < 1e-12);
        assert_eq!(magnitude_param(AugOp::Posterize, 9.0), 7.0);
        assert!((magnitude_param(AugOp::Brightness, 30.0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn every_op_keeps_values_in_unit_range() {
        let img = test_image();
        for &op in &ALL_OPS {
            for sign in [1.0, -1.0] {
                let mut out = apply_op(&img, AugPolicy { op, level: 27.0, sign });
                out.clamp_01();
                assert!(
                    out.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
                    "op {op:?} left values outside [0,1]"
                );
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let img = test_image();
        let (a, pa) = rand_augment(&img, 2, 9.0, &mut seeds::rng(77)).unwrap();
        let (b, pb) = rand_augment(&img, 2, 9.0, &mut seeds::rng(77)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&pa).unwrap(),
            serde_json::to_string(&pb).unwrap()
        );
    }

    #[test]
    fn magnitude_out_of_range_rejected() {
        let img = test_image();
        assert!(rand_augment(&img, 2, 31.0, &mut seeds::rng(0)).is_err());
    }

    #[test]
    fn autocontrast_stretches_to_full_range() {
        let mut img = ImageTensor::filled(4, 4, [0.4, 0.4, 0.4]).unwrap();
        img.set(0, 0, 0, 0.2);
        img.set(0, 3, 3, 0.6);
        let out = autocontrast(&img);
        assert!((out.get(0, 0, 0) - 0.0).abs() < 1e-12);
        assert!((out.get(0, 3, 3) - 1.0).abs() < 1e-12);
        // constant channels untouched
        assert!((out.get(1, 1, 1) - 0.4).abs() < 1e-12);
    }
}
