//! Templated captions whose spatial relations derive from grid geometry.

use rand::Rng;

use crate::synth::scene::{SceneObject, SceneSpec};

fn noun(obj: &SceneObject) -> String {
    format!("a {} {}", obj.color.word(), obj.shape.word())
}

/// Relation phrase from the first object to the second. On a diagonal both
/// a vertical and a horizontal phrasing are valid; the generator picks one.
fn relation(a: (usize, usize), b: (usize, usize), rng: &mut impl Rng) -> &'static str {
    let vertical = match a.0.cmp(&b.0) {
        std::cmp::Ordering::Less => Some("above"),
        std::cmp::Ordering::Greater => Some("below"),
        std::cmp::Ordering::Equal => None,
    };
    let horizontal = match a.1.cmp(&b.1) {
        std::cmp::Ordering::Less => Some("left of"),
        std::cmp::Ordering::Greater => Some("right of"),
        std::cmp::Ordering::Equal => None,
    };
    match (vertical, horizontal) {
        (Some(v), Some(h)) => {
            if rng.gen::<bool>() {
                v
            } else {
                h
            }
        }
        (Some(v), None) => v,
        (None, Some(h)) => h,
        (None, None) => unreachable!("objects share a cell"),
    }
}

/// Caption for a scene: "a red circle", "a red circle above a blue square",
/// with further objects appended by "and".
pub fn caption(spec: &SceneSpec, rng: &mut impl Rng) -> String {
    assert!(!spec.objects.is_empty(), "caption needs a nonempty scene");
    let mut out = noun(&spec.objects[0]);
    if spec.objects.len() >= 2 {
        let rel = relation(spec.objects[0].cell, spec.objects[1].cell, rng);
        out.push(' ');
        out.push_str(rel);
        out.push(' ');
        out.push_str(&noun(&spec.objects[1]));
    }
    for obj in spec.objects.iter().skip(2) {
        out.push_str(" and ");
        out.push_str(&noun(obj));
    }
    out
}

/// Machine audit: the caption's colors, shapes, and relation must match the
/// scene geometry.
pub fn caption_consistent(spec: &SceneSpec, text: &str) -> bool {
    use crate::synth::scene::{ColorName, Shape};
    let words: Vec<&str> = text.split_whitespace().collect();
    // collect "a <color> <shape>" mentions in order
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < words.len() {
        if words[i] == "a" && i + 2 < words.len() {
            let color = ColorName::ALL.iter().copied().find(|c| c.word() == words[i + 1]);
            let shape = Shape::ALL.iter().copied().find(|s| s.word() == words[i + 2]);
            if let (Some(c), Some(s)) = (color, shape) {
                mentions.push((c, s));
                i += 3;
                continue;
            }
        }
        i += 1;
    }
    if mentions.len() != spec.objects.len() {
        return false;
    }
    for (m, o) in mentions.iter().zip(&spec.objects) {
        if m.0 != o.color || m.1 != o.shape {
            return false;
        }
    }
    // relation consistent with coordinates
    if spec.objects.len() >= 2 {
        let (a, b) = (spec.objects[0].cell, spec.objects[1].cell);
        let rel_ok = if text.contains(" above ") {
            a.0 < b.0
        } else if text.contains(" below ") {
            a.0 > b.0
        } else if text.contains(" left of ") {
            a.1 < b.1
        } else if text.contains(" right of ") {
            a.1 > b.1
        } else {
            false
        };
        if !rel_ok {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use crate::synth::scene::{ColorName, SceneObject, Shape};

    #[test]
    fn single_object_template() {
        let spec = SceneSpec {
            objects: vec![SceneObject {
                shape: Shape::Circle,
                color: ColorName::Red,
                cell: (0, 0),
            }],
            canvas: 64,
            seed: 0,
        };
        assert_eq!(caption(&spec, &mut seeds::rng(0)), "a red circle");
    }

    #[test]
    fn relation_words_match_geometry() {
        let spec = SceneSpec {
            objects: vec![
                SceneObject {
                    shape: Shape::Circle,
                    color: ColorName::Red,
                    cell: (0, 0),
                },
                SceneObject {
                    shape: Shape::Square,
                    color: ColorName::Blue,
                    cell: (1, 0),
                },
            ],
            canvas: 64,
            seed: 0,
        };
        let text = caption(&spec, &mut seeds::rng(1));
        assert_eq!(text, "a red circle above a blue square");
        assert!(caption_consistent(&spec, &text));
    }

    #[test]
    fn sampled_captions_always_consistent() {
        for seed in 0..300 {
            let spec = SceneSpec::sample(seed, 64);
            let text = caption(&spec, &mut seeds::rng(seed ^ 0xabcd));
            assert!(caption_consistent(&spec, &text), "{text}");
        }
    }

    #[test]
    fn inconsistent_caption_detected() {
        let spec = SceneSpec {
            objects: vec![
                SceneObject {
                    shape: Shape::Circle,
                    color: ColorName::Red,
                    cell: (0, 0),
                },
                SceneObject {
                    shape: Shape::Square,
                    color: ColorName::Blue,
                    cell: (1, 0),
                },
            ],
            canvas: 64,
            seed: 0,
        };
        assert!(!caption_consistent(&spec, "a red circle below a blue square"));
        assert!(!caption_consistent(&spec, "a green circle above a blue square"));
    }
}
