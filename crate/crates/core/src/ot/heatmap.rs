//! Transport-plan heatmaps: z-normalize one token's plan row, clamp to
//! `[1.0, 3.0]`, scatter onto the patch grid, and render a PNG overlay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::ot::TransportPlan;
use crate::tensor::Tensor;

pub const CLAMP_LO: f64 = 1.0;
pub const CLAMP_HI: f64 = 3.0;

/// Grid of clamped z-scores for one token's plan row. Cells whose patches
/// were sampled out sit at the clamp floor.
pub fn heatmap_values(
    plan: &TransportPlan,
    token_index: usize,
    grid_pos: &[(usize, usize)],
    grid: (usize, usize),
) -> Result<Tensor> {
    let (n, m) = plan.plan.dims2();
    if token_index >= n {
        return Err(Error::Invalid(format!(
            "token index {token_index} out of range for {n} tokens"
        )));
    }
    if grid_pos.len() != m {
        return Err(Error::Invalid(format!(
            "{} grid positions for {m} plan columns",
            grid_pos.len()
        )));
    }
    let row = plan.plan.row(token_index);
    let mean = row.iter().sum::<f64>() / m as f64;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
    let std = var.sqrt();
    let z: Vec<f64> = if std == 0.0 {
        vec![0.0; m]
    } else {
        row.iter().map(|&v| (v - mean) / std).collect()
    };

    let (gh, gw) = grid;
    let mut out = Tensor::full(&[gh, gw], CLAMP_LO);
    for (&(r, c), &zv) in grid_pos.iter().zip(&z) {
        if r >= gh || c >= gw {
            return Err(Error::Invalid(format!(
                "grid position ({r}, {c}) outside {gh}x{gw}"
            )));
        }
        out.set2(r, c, zv.clamp(CLAMP_LO, CLAMP_HI));
    }
    Ok(out)
}

/// Blend a highlight color over each patch cell with opacity proportional
/// to the clamped heatmap value.
pub fn render_overlay(img: &ImageTensor, values: &Tensor, patch_size: usize) -> ImageTensor {
    const HIGHLIGHT: [f64; 3] = [1.0, 0.1, 0.4];
    const MAX_ALPHA: f64 = 0.75;
    let (gh, gw) = values.dims2();
    let mut out = img.clone();
    for r in 0..gh {
        for c in 0..gw {
            let v = values.at2(r, c);
            let alpha = (v - CLAMP_LO) / (CLAMP_HI - CLAMP_LO) * MAX_ALPHA;
            if alpha == 0.0 {
                continue;
            }
            for ch in 0..3 {
                for y in r * patch_size..((r + 1) * patch_size).min(img.height()) {
                    for x in c * patch_size..((c + 1) * patch_size).min(img.width()) {
                        let px = img.get(ch, y, x);
                        out.set(ch, y, x, (1.0 - alpha) * px + alpha * HIGHLIGHT[ch]);
                    }
                }
            }
        }
    }
    out
}

/// JSON dump of a plan and the heatmap derived from it.
#[derive(Debug, Serialize, Deserialize)]
pub struct HeatmapDump {
    pub token: String,
    pub token_index: usize,
    pub grid: (usize, usize),
    /// Clamped z-score per grid cell, row-major.
    pub values: Vec<Vec<f64>>,
    /// Raw plan row for the token.
    pub plan_row: Vec<f64>,
    /// Full plan, row-major by token.
    pub plan: Vec<Vec<f64>>,
    pub iters: usize,
    pub beta: f64,
    pub cost: f64,
}

impl HeatmapDump {
    pub fn new(
        token: &str,
        token_index: usize,
        plan: &TransportPlan,
        values: &Tensor,
    ) -> HeatmapDump {
        let (gh, gw) = values.dims2();
        let (n, _) = plan.plan.dims2();
        HeatmapDump {
            token: token.to_string(),
            token_index,
            grid: (gh, gw),
            values: (0..gh).map(|r| values.row(r).to_vec()).collect(),
            plan_row: plan.plan.row(token_index).to_vec(),
            plan: (0..n).map(|i| plan.plan.row(i).to_vec()).collect(),
            iters: plan.iters,
            beta: plan.beta,
            cost: plan.cost,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan_from_rows(rows: Vec<Vec<f64>>) -> TransportPlan {
        let n = rows.len();
        let m = rows[0].len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        TransportPlan {
            plan: Tensor::from_vec(&[n, m], data),
            a: vec![1.0 / n as f64; n],
            b: vec![1.0 / m as f64; m],
            cost: 0.0,
            iters: 0,
            beta: 0.5,
        }
    }

    fn full_grid(gh: usize, gw: usize) -> Vec<(usize, usize)> {
        (0..gh)
            .flat_map(|r| (0..gw).map(move |c| (r, c)))
            .collect()
    }

    #[test]
    fn uniform_row_sits_at_clamp_floor() {
        let plan = plan_from_rows(vec![vec![0.25; 4]]);
        let vals = heatmap_values(&plan, 0, &full_grid(2, 2), (2, 2)).unwrap();
        assert!(vals.data().iter().all(|&v| v == CLAMP_LO));
    }

    #[test]
    fn values_always_within_clamp_range() {
        let plan = plan_from_rows(vec![vec![
            0.9, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01,
        ]]);
        let vals = heatmap_values(&plan, 0, &full_grid(3, 4), (3, 4)).unwrap();
        assert!(vals
            .data()
            .iter()
            .all(|&v| (CLAMP_LO..=CLAMP_HI).contains(&v)));
    }

    #[test]
    fn dominant_cell_reaches_clamp_ceiling() {
        // a single dominant cell among 12 has z-score 11/sqrt(12) > 3 and
        // clamps to exactly 3.0
        let mut row = vec![0.0; 12];
        row[5] = 1.0;
        let plan = plan_from_rows(vec![row]);
        let vals = heatmap_values(&plan, 0, &full_grid(3, 4), (3, 4)).unwrap();
        assert_eq!(vals.at2(1, 1), CLAMP_HI);
        // all other cells below average clamp to the floor
        assert_eq!(vals.at2(0, 0), CLAMP_LO);
    }

    #[test]
    fn sampled_out_cells_sit_at_floor() {
        let plan = plan_from_rows(vec![vec![0.6, 0.4]]);
        // only two of four grid cells kept
        let vals = heatmap_values(&plan, 0, &[(0, 0), (1, 1)], (2, 2)).unwrap();
        assert_eq!(vals.at2(0, 1), CLAMP_LO);
        assert_eq!(vals.at2(1, 0), CLAMP_LO);
    }

    #[test]
    fn token_index_out_of_range_rejected() {
        let plan = plan_from_rows(vec![vec![0.5, 0.5]]);
        assert!(heatmap_values(&plan, 3, &[(0, 0), (0, 1)], (1, 2)).is_err());
    }

    #[test]
    fn overlay_leaves_floor_cells_untouched() {
        let img = ImageTensor::filled(4, 4, [0.2, 0.3, 0.4]).unwrap();
        let mut vals = Tensor::full(&[2, 2], CLAMP_LO);
        vals.set2(0, 0, CLAMP_HI);
        let out = render_overlay(&img, &vals, 2);
        // floor cell: unchanged
        assert_eq!(out.get(0, 3, 3), 0.2);
        // hot cell: blended toward highlight
        assert!(out.get(0, 0, 0) > 0.2);
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
