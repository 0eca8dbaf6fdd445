//! On-disk dataset: per-pair PNGs and instruction text plus a JSON manifest.
//!
//! ```text
//! <out>/manifest.json
//! <out>/pairs/000000/support.png        RGB
//! <out>/pairs/000000/query.png          RGB
//! <out>/pairs/000000/support_mask.png   L8, 0 or 255
//! <out>/pairs/000000/query_mask.png     L8, 0 or 255
//! <out>/pairs/000000/pretrain.txt       rendered pretraining instruction
//! ```
//!
//! Each file is written to a temporary name and renamed into place. The
//! manifest is written after every pair succeeded.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context};
use image::{GrayImage, ImageFormat, RgbImage};
use polyseg_core::curriculum::{sample_hints, StepParams};
use polyseg_core::geometry::{Mask, Polygon16};
use polyseg_core::instruction::render_pretrain_instruction;
use polyseg_core::rng::{rng_from_seed, split_seed};
use polyseg_core::synthesis::{generate_pair, MeanSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::GenConfig;
use crate::{CliError, CliResult};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Stream of the pair seed that drives hint selection; generation attempts
/// use the low streams.
const HINT_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFiles {
    pub support_image: FileRef,
    pub query_image: FileRef,
    pub support_mask: FileRef,
    pub query_mask: FileRef,
    pub instruction: FileRef,
}

impl PairFiles {
    pub fn all(&self) -> [&FileRef; 5] {
        [&self.support_image, &self.query_image, &self.support_mask, &self.query_mask, &self.instruction]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub index: u64,
    pub seed: u64,
    pub step: StepParams,
    pub means: MeanSet,
    pub support_polygons: Vec<Polygon16>,
    pub query_polygons: Vec<Polygon16>,
    pub hinted: Vec<usize>,
    pub files: PairFiles,
    /// Digest of the generated pair values.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: GenConfig,
    pub pairs: Vec<PairRecord>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text).context("malformed manifest")?;
        ensure!(m.version == MANIFEST_VERSION, "manifest version {} unsupported", m.version);
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> anyhow::Result<()> {
        write_atomic(&root.join(MANIFEST_FILE), self.to_json().as_bytes())
    }

    pub fn load(root: &Path) -> anyhow::Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn png_rgb(img: &RgbImage) -> anyhow::Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn mask_to_image(mask: &Mask) -> GrayImage {
    let pixels = mask.bits().iter().map(|&b| b * 255).collect();
    GrayImage::from_raw(mask.width(), mask.height(), pixels).expect("buffer matches mask size")
}

pub fn mask_from_image(img: &GrayImage) -> anyhow::Result<Mask> {
    let mut bits = Vec::with_capacity(img.as_raw().len());
    for &v in img.as_raw() {
        bits.push(match v {
            0 => 0,
            255 => 1,
            other => bail!("mask pixel value {other} is neither 0 nor 255"),
        });
    }
    Ok(Mask::from_bits(img.width(), img.height(), bits)?)
}

fn png_mask(mask: &Mask) -> anyhow::Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    mask_to_image(mask).write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn load_mask(path: &Path) -> anyhow::Result<Mask> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    mask_from_image(&img.to_luma8())
}

fn pair_dir(index: u64) -> String {
    format!("pairs/{index:06}")
}

enum PairFailure {
    Generation(anyhow::Error),
    Io(anyhow::Error),
}

fn write_pair(root: &Path, cfg: &GenConfig, index: u64) -> Result<PairRecord, PairFailure> {
    let gen = |e: anyhow::Error| PairFailure::Generation(e.context(format!("pair {index}")));
    let io = |e: anyhow::Error| PairFailure::Io(e.context(format!("pair {index}")));

    let step = cfg.step_for(index).map_err(|e| gen(e.into()))?;
    let seed = split_seed(cfg.seed, index);
    let pair = generate_pair(seed, &step, cfg.size, cfg.size, &cfg.synthesis()).map_err(|e| gen(e.into()))?;
    let mut rng = rng_from_seed(split_seed(seed, HINT_STREAM));
    let hinted = sample_hints(&mut rng, step.m).map_err(|e| gen(e.into()))?;
    let instruction = render_pretrain_instruction(&pair, &hinted, step.m).map_err(|e| gen(e.into()))?;

    let rel = pair_dir(index);
    fs::create_dir_all(root.join(&rel))
        .with_context(|| format!("creating {}", root.join(&rel).display()))
        .map_err(io)?;
    let put = |name: &str, bytes: Vec<u8>| -> anyhow::Result<FileRef> {
        let path = format!("{rel}/{name}");
        write_atomic(&root.join(&path), &bytes)?;
        Ok(FileRef { path, sha256: sha256_hex(&bytes) })
    };
    let files = (|| -> anyhow::Result<PairFiles> {
        Ok(PairFiles {
            support_image: put("support.png", png_rgb(&pair.support_image)?)?,
            query_image: put("query.png", png_rgb(&pair.query_image)?)?,
            support_mask: put("support_mask.png", png_mask(pair.support_mask())?)?,
            query_mask: put("query_mask.png", png_mask(pair.query_mask())?)?,
            instruction: put("pretrain.txt", instruction.text.into_bytes())?,
        })
    })()
    .map_err(io)?;

    Ok(PairRecord {
        index,
        seed,
        step,
        digest: pair.digest(),
        means: pair.means,
        support_polygons: pair.support_polygons,
        query_polygons: pair.query_polygons,
        hinted,
        files,
    })
}

/// Generate the dataset described by `cfg` under `root`.
pub fn generate_dataset(cfg: &GenConfig, root: &Path) -> CliResult<DatasetManifest> {
    cfg.validate().map_err(CliError::data)?;
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display())).map_err(CliError::data)?;
    let results: Vec<_> = (0..cfg.count).into_par_iter().map(|i| write_pair(root, cfg, i)).collect();
    let mut pairs = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(p) => pairs.push(p),
            Err(PairFailure::Generation(e)) => return Err(CliError::generation(e)),
            Err(PairFailure::Io(e)) => return Err(CliError::data(e)),
        }
    }
    let manifest = DatasetManifest { version: MANIFEST_VERSION, config: cfg.clone(), pairs };
    manifest.save(root).map_err(CliError::data)?;
    Ok(manifest)
}

/// Check a dataset against its manifest: ordering, file digests, steps,
/// constraint satisfaction and coordinate bounds.
pub fn validate_dataset(root: &Path) -> anyhow::Result<DatasetManifest> {
    let m = DatasetManifest::load(root)?;
    m.config.validate()?;
    ensure!(
        m.pairs.len() as u64 == m.config.count,
        "manifest lists {} pairs, config count is {}",
        m.pairs.len(),
        m.config.count
    );
    for (i, p) in m.pairs.iter().enumerate() {
        let ctx = || format!("pair {i}");
        ensure!(p.index == i as u64, "pair record {i} has index {}", p.index);
        ensure!(p.seed == split_seed(m.config.seed, p.index), "{}: seed mismatch", ctx());
        ensure!(p.step == m.config.step_for(p.index)?, "{}: step does not follow the schedule", ctx());
        let violations = p.means.violations(&p.step);
        ensure!(violations.is_empty(), "{}: {}", ctx(), violations.join("; "));
        ensure!(p.hinted.len() == p.step.m, "{}: {} hints for M = {}", ctx(), p.hinted.len(), p.step.m);
        for poly in p.support_polygons.iter().chain(&p.query_polygons) {
            ensure!(poly.max_coordinate() < m.config.size, "{}: polygon coordinate outside the image", ctx());
        }
        for f in p.files.all() {
            let path = root.join(&f.path);
            let bytes = fs::read(&path).with_context(|| format!("{}: reading {}", ctx(), path.display()))?;
            let got = sha256_hex(&bytes);
            if got != f.sha256 {
                return Err(anyhow!("{}: {} digest {got} does not match manifest {}", ctx(), f.path, f.sha256));
            }
        }
    }
    Ok(m)
}
