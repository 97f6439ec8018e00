//! Image-caption corpus ingestion: a JSONL manifest with fields
//! `{image, caption, split}`, images resolved relative to the manifest.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{io::read_image, patchify, resize_keep_aspect, ImageTensor, PatchBatch};
use crate::text::{tokenize, TokenRow, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Image path relative to the manifest directory.
    pub image: String,
    pub caption: String,
    pub split: Split,
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.jsonl")
}

pub fn vocab_path(dir: &Path) -> PathBuf {
    dir.join("vocab.txt")
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRecord>> {
    let path = manifest_path(dir);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Corpus(format!("{}:{}: {e}", path.display(), ln + 1))
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Corpus(format!("{} has no records", path.display())));
    }
    Ok(records)
}

pub fn write_manifest(dir: &Path, records: &[ManifestRecord]) -> Result<()> {
    let path = manifest_path(dir);
    let mut out = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Image-side preprocessing options applied at corpus load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Shorter-edge target for the aspect-preserving resize.
    pub resize_short: usize,
    /// Longer-edge cap.
    pub resize_long_cap: usize,
    pub patch_size: usize,
}

/// A corpus loaded into memory: raw images plus pre-tokenized captions and
/// pre-patchified images, index-aligned with the manifest.
pub struct Corpus {
    pub dir: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub images: Vec<ImageTensor>,
    pub tokens: Vec<TokenRow>,
    pub patches: Vec<PatchBatch>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

impl Corpus {
    pub fn load(
        dir: &Path,
        vocab: &Vocabulary,
        max_text_len: usize,
        pre: &PreprocessConfig,
    ) -> Result<Corpus> {
        let records = read_manifest(dir)?;
        let mut images = Vec::with_capacity(records.len());
        let mut tokens = Vec::with_capacity(records.len());
        let mut patches = Vec::with_capacity(records.len());
        let mut train_idx = Vec::new();
        let mut val_idx = Vec::new();
        for (i, rec) in records.iter().enumerate() {
            let img_path = dir.join(&rec.image);
            let raw = read_image(&img_path)?;
            let resized = resize_keep_aspect(&raw, pre.resize_short, pre.resize_long_cap)?;
            patches.push(patchify(&resized, pre.patch_size));
            images.push(resized);
            tokens.push(tokenize(&rec.caption, vocab, max_text_len)?);
            match rec.split {
                Split::Train => train_idx.push(i),
                Split::Val => val_idx.push(i),
            }
        }
        Ok(Corpus {
            dir: dir.to_path_buf(),
            records,
            images,
            tokens,
            patches,
            train_idx,
            val_idx,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::io::write_png;
    use crate::text::vocab::SpecialTokens;

    #[test]
    fn manifest_round_trip_and_load() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        let img = ImageTensor::filled(8, 8, [0.9, 0.1, 0.1]).unwrap();
        write_png(&dir.path().join("images/p0.png"), &img).unwrap();
        write_png(&dir.path().join("images/p1.png"), &img).unwrap();
        let records = vec![
            ManifestRecord {
                image: "images/p0.png".into(),
                caption: "a red circle".into(),
                split: Split::Train,
            },
            ManifestRecord {
                image: "images/p1.png".into(),
                caption: "a red circle".into(),
                split: Split::Val,
            },
        ];
        write_manifest(dir.path(), &records).unwrap();

        let tokens = vec![
            "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]", "a", "red", "cir", "##cle",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        let vocab = Vocabulary::new(tokens, &SpecialTokens::default()).unwrap();
        let pre = PreprocessConfig {
            resize_short: 8,
            resize_long_cap: 8,
            patch_size: 4,
        };
        let corpus = Corpus::load(dir.path(), &vocab, 16, &pre).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.train_idx, vec![0]);
        assert_eq!(corpus.val_idx, vec![1]);
        assert_eq!(corpus.patches[0].grid, (2, 2));
        assert_eq!(corpus.tokens[0].ids.len(), 5); // cls a red cir ##cle
    }

    #[test]
    fn missing_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_manifest(dir.path()).is_err());
    }
}
