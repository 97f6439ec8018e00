//! Scene specification: up to four colored shapes on a 2x2 cell grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeds;

/// Cells per side of the placement grid.
pub const GRID: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle = 0,
    Square = 1,
    Triangle = 2,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorName {
    Red = 0,
    Green = 1,
    Blue = 2,
    Yellow = 3,
}

impl ColorName {
    pub const ALL: [ColorName; 4] = [
        ColorName::Red,
        ColorName::Green,
        ColorName::Blue,
        ColorName::Yellow,
    ];

    pub fn word(self) -> &'static str {
        match self {
            ColorName::Red => "red",
            ColorName::Green => "green",
            ColorName::Blue => "blue",
            ColorName::Yellow => "yellow",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            ColorName::Red => [0.88, 0.07, 0.07],
            ColorName::Green => [0.07, 0.72, 0.12],
            ColorName::Blue => [0.10, 0.12, 0.88],
            ColorName::Yellow => [0.95, 0.86, 0.05],
        }
    }

    pub fn from_word(word: &str) -> Option<ColorName> {
        ColorName::ALL.iter().copied().find(|c| c.word() == word)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: ColorName,
    /// (row, col) cell on the placement grid.
    pub cell: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    /// Canvas edge in pixels (square).
    pub canvas: usize,
    pub seed: u64,
}

impl SceneSpec {
    /// Deterministically sample a scene: 1..=4 objects with distinct
    /// (color, shape) identities on distinct cells.
    pub fn sample(seed: u64, canvas: usize) -> SceneSpec {
        let mut rng = seeds::rng(seed);
        let count = rng.gen_range(1..=4usize);

        let mut identities: Vec<(ColorName, Shape)> = ColorName::ALL
            .iter()
            .flat_map(|&c| Shape::ALL.iter().map(move |&s| (c, s)))
            .collect();
        for i in 0..count {
            let j = rng.gen_range(i..identities.len());
            identities.swap(i, j);
        }

        let mut cells: Vec<(usize, usize)> = (0..GRID)
            .flat_map(|r| (0..GRID).map(move |c| (r, c)))
            .collect();
        for i in 0..count {
            let j = rng.gen_range(i..cells.len());
            cells.swap(i, j);
        }

        let objects = (0..count)
            .map(|i| SceneObject {
                shape: identities[i].1,
                color: identities[i].0,
                cell: cells[i],
            })
            .collect();
        SceneSpec {
            objects,
            canvas,
            seed,
        }
    }

    pub fn cell_px(&self) -> usize {
        self.canvas / GRID
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_scenes_respect_invariants() {
        for seed in 0..500 {
            let spec = SceneSpec::sample(seed, 64);
            assert!((1..=4).contains(&spec.objects.len()));
            let mut cells: Vec<_> = spec.objects.iter().map(|o| o.cell).collect();
            cells.sort_unstable();
            cells.dedup();
            assert_eq!(cells.len(), spec.objects.len(), "overlapping cells");
            let mut ids: Vec<_> = spec
                .objects
                .iter()
                .map(|o| (o.color as u8, o.shape as u8))
                .collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), spec.objects.len(), "duplicate identities");
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = SceneSpec::sample(7, 64);
        let b = SceneSpec::sample(7, 64);
        assert_eq!(a.objects, b.objects);
    }
}
