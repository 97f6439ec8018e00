//! Deterministic synthetic image-caption corpus: colored shapes on a grid
//! with templated captions, so every pipeline stage can train and be
//! audited at desk scale.

pub mod caption;
pub mod render;
pub mod scene;

pub use caption::{caption, caption_consistent};
pub use render::render;
pub use scene::{ColorName, SceneObject, SceneSpec, Shape, GRID};

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_manifest, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::image::io::write_png;
use crate::seeds;
use crate::text::vocab::{SpecialTokens, Vocabulary};

/// Words the caption templates can emit; the shipped vocabulary covers all
/// of them (shape words split into two subword pieces each).
pub const VOCAB_TOKENS: &[&str] = &[
    "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]", "a", "above", "below", "left", "right", "of",
    "and", "red", "green", "blue", "yellow", "cir", "##cle", "squ", "##are", "tri", "##angle",
];

pub fn synth_vocabulary() -> Vocabulary {
    let tokens = VOCAB_TOKENS.iter().map(|s| s.to_string()).collect();
    Vocabulary::new(tokens, &SpecialTokens::default()).expect("builtin vocabulary is valid")
}

/// Sidecar record describing the scene behind each corpus pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRecord {
    pub index: usize,
    pub objects: Vec<SceneObject>,
    pub canvas: usize,
}

pub fn scenes_path(dir: &Path) -> std::path::PathBuf {
    dir.join("scenes.jsonl")
}

pub fn read_scenes(dir: &Path) -> Result<Vec<SceneRecord>> {
    let path = scenes_path(dir);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Generate `n` image-caption pairs under `dir`: PNG images, the manifest,
/// the vocabulary files, and a scene sidecar. Scene object sets are unique
/// across the corpus, so a caption matches exactly one image.
pub fn generate_corpus(n: usize, seed: u64, dir: &Path, canvas: usize) -> Result<Vec<SceneRecord>> {
    if n < 2 {
        return Err(Error::Invalid(format!(
            "corpus needs at least 2 pairs, got {n}"
        )));
    }
    if n > 600 {
        return Err(Error::Invalid(format!(
            "at most 600 unique scenes supported, got {n}"
        )));
    }
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::with_capacity(n);
    let mut scenes = Vec::with_capacity(n);
    let val_from = n - n.div_ceil(8); // final eighth is the validation split

    let mut attempt = 0u64;
    for i in 0..n {
        let spec = loop {
            let spec = SceneSpec::sample(seeds::mix_all(seed, &[i as u64, attempt]), canvas);
            attempt += 1;
            let mut signature: Vec<(u8, u8)> = spec
                .objects
                .iter()
                .map(|o| (o.shape as u8, o.color as u8))
                .collect();
            signature.sort_unstable();
            if seen.insert(signature) {
                break spec;
            }
        };
        let img = render(&spec)?;
        let mut caption_rng = seeds::rng(seeds::mix_all(seed, &[i as u64, u64::MAX]));
        let text = caption(&spec, &mut caption_rng);
        let file = format!("images/pair_{i:05}.png");
        write_png(&dir.join(&file), &img)?;
        records.push(ManifestRecord {
            image: file,
            caption: text,
            split: if i >= val_from { Split::Val } else { Split::Train },
        });
        scenes.push(SceneRecord {
            index: i,
            objects: spec.objects.clone(),
            canvas,
        });
    }
    write_manifest(dir, &records)?;

    let scenes_file = scenes_path(dir);
    let mut out = fs::File::create(&scenes_file).map_err(|e| Error::io(&scenes_file, e))?;
    for s in &scenes {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n").map_err(|e| Error::io(&scenes_file, e))?;
    }

    synth_vocabulary().save(&crate::corpus::vocab_path(dir), &SpecialTokens::default())?;
    Ok(scenes)
}
