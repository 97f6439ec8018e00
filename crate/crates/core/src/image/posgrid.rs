//! Bilinear interpolation of the visual position-embedding grid to a
//! target patch-grid size (align-corners semantics). The class-token
//! position embedding is not part of the grid and passes through untouched
//! at the call site.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interpolation stencil for one output cell: up to four (input cell,
/// weight) taps. Shared by the plain function and the autodiff op.
pub fn bilinear_taps(h0: usize, w0: usize, h: usize, w: usize) -> Vec<Vec<(usize, f64)>> {
    let coord = |i: usize, out: usize, src: usize| -> f64 {
        if out <= 1 {
            0.0
        } else {
            i as f64 * (src as f64 - 1.0) / (out as f64 - 1.0)
        }
    };
    let mut taps = Vec::with_capacity(h * w);
    for i in 0..h {
        let y = coord(i, h, h0);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(h0 - 1);
        let dy = y - y0 as f64;
        for j in 0..w {
            let x = coord(j, w, w0);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(w0 - 1);
            let dx = x - x0 as f64;
            let mut cell = Vec::with_capacity(4);
            for (iy, wy) in [(y0, 1.0 - dy), (y1, dy)] {
                for (ix, wx) in [(x0, 1.0 - dx), (x1, dx)] {
                    let wgt = wy * wx;
                    if wgt != 0.0 {
                        cell.push((iy * w0 + ix, wgt));
                    }
                }
            }
            taps.push(cell);
        }
    }
    taps
}

/// Channel-wise bilinear interpolation of a `[h0, w0, H]` grid to `[h, w, H]`.
pub fn interpolate_pos_grid(pos: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let shape = pos.shape();
    if shape.len() != 3 {
        return Err(Error::Shape {
            context: "interpolate_pos_grid",
            expected: "[h0, w0, H]".into(),
            got: format!("{shape:?}"),
        });
    }
    let (h0, w0, dim) = (shape[0], shape[1], shape[2]);
    if h == 0 || w == 0 {
        return Err(Error::Invalid("pos-grid target has a zero dimension".into()));
    }
    if (h, w) == (h0, w0) {
        return Ok(pos.clone());
    }
    let taps = bilinear_taps(h0, w0, h, w);
    let src = pos.data();
    let mut out = vec![0.0; h * w * dim];
    for (cell, taps) in taps.iter().enumerate() {
        let dst = &mut out[cell * dim..(cell + 1) * dim];
        for &(src_cell, wgt) in taps {
            let s = &src[src_cell * dim..(src_cell + 1) * dim];
            for (d, &v) in dst.iter_mut().zip(s) {
                *d += wgt * v;
            }
        }
    }
    Ok(Tensor::from_vec(&[h, w, dim], out))
}
