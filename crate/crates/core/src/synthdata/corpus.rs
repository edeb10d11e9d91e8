use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::attrs::{caption_of, AttributeTuple, ColorScheme, Pattern, Shape};
use super::image::Image;
use super::render::{render_scene, MIN_SIZE};
use crate::error::{Error, IoContext, Result};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRecord {
    #[serde(flatten)]
    pub attrs: AttributeTuple,
    pub seed: u64,
    pub caption: String,
    /// Relative to the manifest's directory.
    pub path: String,
}

impl SceneRecord {
    pub fn new(attrs: AttributeTuple, seed: u64) -> Self {
        Self {
            attrs,
            seed,
            caption: caption_of(&attrs),
            path: format!(
                "{}_{}_{}_{seed}.png",
                attrs.shape, attrs.color, attrs.pattern
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub image_size: usize,
    pub shapes: Vec<Shape>,
    pub colors: Vec<ColorScheme>,
    pub patterns: Vec<Pattern>,
    pub seeds_per_tuple: u64,
    /// Held-out concept; never appears in the base corpus.
    pub reference: AttributeTuple,
    pub reference_count: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            shapes: Shape::ALL.to_vec(),
            colors: ColorScheme::ALL.to_vec(),
            patterns: Pattern::ALL.to_vec(),
            seeds_per_tuple: 10,
            reference: AttributeTuple::new(Shape::Star, ColorScheme::RedBlue, Pattern::HStripes),
            reference_count: 5,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() || self.colors.is_empty() || self.patterns.is_empty() {
            return Err(Error::Config("empty attribute subset".into()));
        }
        if self.seeds_per_tuple == 0 {
            return Err(Error::Config("seeds_per_tuple must be positive".into()));
        }
        if !(4..=6).contains(&self.reference_count) {
            return Err(Error::Config(format!(
                "reference_count {} outside 4..=6",
                self.reference_count
            )));
        }
        if self.image_size < MIN_SIZE || self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be >= {MIN_SIZE} and divisible by 4",
                self.image_size
            )));
        }
        Ok(())
    }

    pub fn tuples(&self) -> Vec<AttributeTuple> {
        let mut out = Vec::new();
        for &shape in &self.shapes {
            for &color in &self.colors {
                for &pattern in &self.patterns {
                    let a = AttributeTuple::new(shape, color, pattern);
                    if a != self.reference {
                        out.push(a);
                    }
                }
            }
        }
        out
    }

    /// Base-corpus records in deterministic order, without touching disk.
    pub fn records(&self) -> Vec<SceneRecord> {
        self.tuples()
            .into_iter()
            .flat_map(|a| (0..self.seeds_per_tuple).map(move |s| SceneRecord::new(a, s)))
            .collect()
    }

    pub fn reference_records(&self) -> Vec<SceneRecord> {
        (0..self.reference_count)
            .map(|s| SceneRecord::new(self.reference, s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub records: Vec<SceneRecord>,
    pub references: Vec<SceneRecord>,
}

pub const MANIFEST: &str = "manifest.jsonl";

pub fn write_manifest(path: &Path, records: &[SceneRecord]) -> Result<()> {
    let mut f = fs::File::create(path).at(path)?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").at(path)?;
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Vec<SceneRecord>> {
    let f = fs::File::open(path).at(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

fn write_images(dir: &Path, records: &[SceneRecord], size: usize, exec: Exec) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let encoded = exec.map(records, |r| {
        render_scene(&r.attrs, r.seed, size).and_then(|img| img.to_png_bytes())
    });
    for (r, bytes) in records.iter().zip(encoded) {
        let p = dir.join(&r.path);
        fs::write(&p, bytes?).at(&p)?;
    }
    write_manifest(&dir.join(MANIFEST), records)
}

/// Writes `corpus_dir` (base corpus) and `refs_dir` (held-out references),
/// each with PNGs and a JSON-lines manifest.
pub fn build_corpus(cfg: &CorpusConfig, corpus_dir: &Path, refs_dir: &Path) -> Result<CorpusManifest> {
    build_corpus_with(cfg, corpus_dir, refs_dir, Exec::default())
}

pub fn build_corpus_with(
    cfg: &CorpusConfig,
    corpus_dir: &Path,
    refs_dir: &Path,
    exec: Exec,
) -> Result<CorpusManifest> {
    cfg.validate()?;
    let records = cfg.records();
    let references = cfg.reference_records();
    write_images(corpus_dir, &records, cfg.image_size, exec)?;
    write_images(refs_dir, &references, cfg.image_size, exec)?;
    Ok(CorpusManifest {
        records,
        references,
    })
}

/// Loads every image named by a manifest in `dir`.
pub fn load_images(dir: &Path) -> Result<Vec<(SceneRecord, Image)>> {
    let records = load_manifest(&dir.join(MANIFEST))?;
    records
        .into_iter()
        .map(|r| {
            let p: PathBuf = dir.join(&r.path);
            Image::load_png(&p).map(|img| (r, img))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_minus_reference() {
        let cfg = CorpusConfig::default();
        assert_eq!(cfg.records().len(), 2390);
        assert_eq!(cfg.reference_records().len(), 5);
        assert!(cfg.records().iter().all(|r| r.attrs != cfg.reference));
    }

    #[test]
    fn empty_subset_is_config_error() {
        let cfg = CorpusConfig {
            colors: vec![],
            ..CorpusConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn manifest_round_trip_and_bit_exact_images() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            shapes: vec![Shape::Circle, Shape::Star],
            colors: vec![ColorScheme::Red],
            patterns: vec![Pattern::Dots],
            seeds_per_tuple: 2,
            ..CorpusConfig::default()
        };
        let m = build_corpus(&cfg, &dir.path().join("corpus"), &dir.path().join("refs")).unwrap();
        assert_eq!(m.records.len(), 4);
        let loaded = load_manifest(&dir.path().join("corpus").join(MANIFEST)).unwrap();
        assert_eq!(loaded, m.records);
        let line = fs::read_to_string(dir.path().join("corpus").join(MANIFEST)).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["shape", "color", "pattern", "seed", "caption", "path"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        for (r, img) in load_images(&dir.path().join("corpus")).unwrap() {
            let again = render_scene(&r.attrs, r.seed, cfg.image_size).unwrap().quantized();
            assert_eq!(img, again);
        }
        assert_eq!(load_images(&dir.path().join("refs")).unwrap().len(), 5);
    }
}
