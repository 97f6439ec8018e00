//! Deterministic rasterization of scene specs: filled shapes on a white
//! background, no anti-aliasing.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::synth::scene::{SceneSpec, Shape};

pub fn render(spec: &SceneSpec) -> Result<ImageTensor> {
    if spec.canvas < 8 {
        return Err(Error::Invalid("canvas too small".into()));
    }
    let mut cells = std::collections::HashSet::new();
    for obj in &spec.objects {
        if obj.cell.0 >= super::GRID || obj.cell.1 >= super::GRID {
            return Err(Error::Invalid(format!("cell {:?} outside grid", obj.cell)));
        }
        if !cells.insert(obj.cell) {
            return Err(Error::Invalid(format!(
                "overlapping objects at cell {:?}",
                obj.cell
            )));
        }
    }

    let mut img = ImageTensor::filled(spec.canvas, spec.canvas, [1.0, 1.0, 1.0])?;
    let cell = spec.cell_px();
    for obj in &spec.objects {
        let (r, c) = obj.cell;
        let y0 = r * cell;
        let x0 = c * cell;
        let rgb = obj.color.rgb();
        let half = cell as f64 / 2.0;
        let (cy, cx) = (y0 as f64 + half, x0 as f64 + half);
        for y in y0..y0 + cell {
            for x in x0..x0 + cell {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let inside = match obj.shape {
                    Shape::Circle => {
                        let rad = 0.44 * cell as f64;
                        (py - cy).powi(2) + (px - cx).powi(2) <= rad * rad
                    }
                    Shape::Square => {
                        let inset = 0.10 * cell as f64;
                        px >= x0 as f64 + inset
                            && px < (x0 + cell) as f64 - inset
                            && py >= y0 as f64 + inset
                            && py < (y0 + cell) as f64 - inset
                    }
                    Shape::Triangle => {
                        // upward triangle: apex at top-center, base at bottom
                        let inset = 0.08 * cell as f64;
                        let top = y0 as f64 + inset;
                        let bottom = (y0 + cell) as f64 - inset;
                        if py < top || py > bottom {
                            false
                        } else {
                            let t = (py - top) / (bottom - top);
                            let hw = t * (cell as f64 / 2.0 - inset);
                            (px - cx).abs() <= hw
                        }
                    }
                };
                if inside {
                    for ch in 0..3 {
                        img.set(ch, y, x, rgb[ch]);
                    }
                }
            }
        }
    }
    Ok(img)
}
