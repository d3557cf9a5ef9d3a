//! On-disk formats.
//!
//! * Volumes: little-endian `f32` voxels (x fastest) in `<stem>.raw` with a
//!   JSON sidecar `<stem>.json`.
//! * Views: JSON `{"views": [CameraView, ...]}`.
//! * Checkpoints: one JSON header line, then little-endian `f32` blocks
//!   for each set (isotropic first) in the order positions, rotations,
//!   log_scales, opacity_logits, features.
//! * Images: 16-bit grayscale PNG (value × 65535) and raw `f32`.
//! * Image sets: a directory with `views.json` and `view_NNNN.{png,raw}`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use xsplat_core::drrcast::{AnisoPerturbSpec, Normalization, TargetImageSet};
use xsplat_core::geometry::CameraView;
use xsplat_core::gsmodel::{Checkpoint, GaussianSet, RadiosityModel, SetKind};
use xsplat_core::splat::RenderedImage;
use xsplat_core::volume::{CtVolume, Grid};

pub const CHECKPOINT_MAGIC: &str = "xsplat-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeUnits {
    Hu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
    pub units: VolumeUnits,
    pub data: String,
}

/// Sidecar and raw paths for a volume given either file or the bare stem.
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("raw"))
}

fn f32_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn read_f32s(bytes: &[u8]) -> Result<Vec<f64>> {
    ensure!(bytes.len().is_multiple_of(4), "raw data length {} is not a multiple of 4", bytes.len());
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

/// Serialized volume: sidecar JSON text and raw bytes.
pub fn encode_volume(v: &CtVolume, raw_name: &str) -> Result<(String, Vec<u8>)> {
    let g = v.grid();
    let sidecar = VolumeSidecar {
        dims: g.dims,
        spacing_mm: g.spacing,
        origin_mm: g.origin,
        dtype: "f32le".into(),
        units: VolumeUnits::Hu,
        data: raw_name.into(),
    };
    Ok((serde_json::to_string_pretty(&sidecar)? + "\n", f32_bytes(v.values().iter().copied())))
}

pub fn write_volume(path: &Path, v: &CtVolume) -> Result<()> {
    let (json, raw) = volume_paths(path);
    let raw_name = raw.file_name().and_then(|n| n.to_str()).context("volume path has no file name")?;
    let (text, bytes) = encode_volume(v, raw_name)?;
    write_file(&raw, &bytes)?;
    write_file(&json, text.as_bytes())
}

pub fn read_volume(path: &Path) -> Result<CtVolume> {
    let (json, _) = volume_paths(path);
    let sidecar: VolumeSidecar = serde_json::from_str(
        &fs::read_to_string(&json).with_context(|| format!("reading volume sidecar {}", json.display()))?,
    )
    .with_context(|| format!("parsing {}", json.display()))?;
    ensure!(sidecar.dtype == "f32le", "unsupported volume dtype {:?}", sidecar.dtype);
    let raw = json.with_file_name(&sidecar.data);
    let bytes = fs::read(&raw).with_context(|| format!("reading volume data {}", raw.display()))?;
    let grid = Grid::new(sidecar.dims, sidecar.spacing_mm, sidecar.origin_mm)?;
    Ok(CtVolume::new(grid, read_f32s(&bytes)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewsFile {
    pub views: Vec<CameraView>,
}

pub fn read_views(path: &Path) -> Result<Vec<CameraView>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading views {}", path.display()))?;
    let f: ViewsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    for v in &f.views {
        v.intrinsics.validate()?;
    }
    Ok(f.views)
}

pub fn views_json(views: &[CameraView]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ViewsFile { views: views.to_vec() })? + "\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    #[serde(rename = "L")]
    pub degree: usize,
    pub k: usize,
    pub n_iso: usize,
    pub n_dir: usize,
    pub b_iso: Vec<f64>,
    #[serde(rename = "B_dir")]
    pub b_dir: Vec<f64>,
    pub blocks: Vec<String>,
}

const BLOCKS: [&str; 5] = ["positions", "rotations", "log_scales", "opacity_logits", "features"];

pub fn encode_checkpoint(c: &Checkpoint) -> Result<Vec<u8>> {
    c.validate()?;
    let header = CheckpointHeader {
        format: CHECKPOINT_MAGIC.into(),
        version: CHECKPOINT_VERSION,
        degree: c.model.degree,
        k: c.model.k,
        n_iso: c.iso.len(),
        n_dir: c.dir.len(),
        b_iso: c.model.b_iso.clone(),
        b_dir: c.model.b_dir.clone(),
        blocks: ["iso", "dir"].iter().flat_map(|s| BLOCKS.iter().map(move |b| format!("{s}.{b}"))).collect(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for set in [&c.iso, &c.dir] {
        out.extend(f32_bytes(set.positions.iter().flatten().copied()));
        out.extend(f32_bytes(set.rotations.iter().flatten().copied()));
        out.extend(f32_bytes(set.log_scales.iter().flatten().copied()));
        out.extend(f32_bytes(set.opacity_logits.iter().copied()));
        out.extend(f32_bytes(set.features.iter().copied()));
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut reader = BufReader::new(bytes);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end()).context("parsing checkpoint header")?;
    ensure!(header.format == CHECKPOINT_MAGIC, "not a checkpoint file");
    ensure!(header.version == CHECKPOINT_VERSION, "unsupported checkpoint version {}", header.version);
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    let vals = read_f32s(&rest)?;
    let k = header.k;
    let per = 3 + 4 + 3 + 1 + k;
    ensure!(
        vals.len() == per * (header.n_iso + header.n_dir),
        "checkpoint body has {} floats, header implies {}",
        vals.len(),
        per * (header.n_iso + header.n_dir)
    );
    let mut cursor = 0;
    let mut take = |n: usize| {
        let s = &vals[cursor..cursor + n];
        cursor += n;
        s.to_vec()
    };
    let mut read_set = |kind: SetKind, n: usize| {
        let mut s = GaussianSet::empty(kind, k);
        s.positions = take(3 * n).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        s.rotations = take(4 * n).chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
        s.log_scales = take(3 * n).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        s.opacity_logits = take(n);
        s.features = take(k * n);
        s
    };
    let iso = read_set(SetKind::Isotropic, header.n_iso);
    let dir = read_set(SetKind::Directional, header.n_dir);
    let model = RadiosityModel::new(header.degree, k, header.b_iso, header.b_dir)?;
    Ok(Checkpoint::new(iso, dir, model)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    decode_checkpoint(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// The checkpoint as it reads back from disk (`f32` storage).
pub fn quantize_checkpoint(c: &Checkpoint) -> Result<Checkpoint> {
    decode_checkpoint(&encode_checkpoint(c)?)
}

pub fn encode_png16(img: &RenderedImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header()?;
        let data: Vec<u8> =
            img.pixels.iter().flat_map(|v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes()).collect();
        w.write_image_data(&data)?;
    }
    Ok(out)
}

pub fn decode_png16(bytes: &[u8]) -> Result<RenderedImage> {
    let dec = png::Decoder::new(bytes);
    let mut reader = dec.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    ensure!(
        info.color_type == png::ColorType::Grayscale && info.bit_depth == png::BitDepth::Sixteen,
        "expected a 16-bit grayscale PNG"
    );
    let pixels =
        buf[..info.buffer_size()].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0).collect();
    Ok(RenderedImage::new(info.width as usize, info.height as usize, pixels)?)
}

pub fn raw_image_bytes(img: &RenderedImage) -> Vec<u8> {
    f32_bytes(img.pixels.iter().copied())
}

pub fn read_raw_image(path: &Path, width: usize, height: usize) -> Result<RenderedImage> {
    let bytes = fs::read(path).with_context(|| format!("reading image {}", path.display()))?;
    let px = read_f32s(&bytes)?;
    ensure!(px.len() == width * height, "{} holds {} pixels, expected {}x{}", path.display(), px.len(), width, height);
    Ok(RenderedImage::new(width, height, px)?)
}

pub fn image_stem(i: usize) -> String {
    format!("view_{i:04}")
}

/// A set of images with their views, as staged for writing.
pub struct ImageSetFiles {
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

/// Encodes `images` and `views` into the files of an image-set directory.
pub fn encode_image_set(dir: &Path, views: &[CameraView], images: &[RenderedImage]) -> Result<ImageSetFiles> {
    ensure!(views.len() == images.len(), "views and images differ in count");
    let mut files = vec![(dir.join("views.json"), views_json(views)?.into_bytes())];
    for (i, img) in images.iter().enumerate() {
        files.push((dir.join(format!("{}.png", image_stem(i))), encode_png16(img)?));
        files.push((dir.join(format!("{}.raw", image_stem(i))), raw_image_bytes(img)));
    }
    Ok(ImageSetFiles { files })
}

/// Reads an image-set directory (raw images are authoritative).
pub fn read_image_set(dir: &Path) -> Result<(Vec<CameraView>, Vec<RenderedImage>)> {
    let views = read_views(&dir.join("views.json"))?;
    let images = views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            read_raw_image(&dir.join(format!("{}.raw", image_stem(i))), v.intrinsics.width, v.intrinsics.height)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((views, images))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetsManifest {
    pub volume: String,
    pub normalization: Normalization,
    pub range_deg: [f64; 2],
    pub seed: u64,
    pub perturb: Option<AnisoPerturbSpec>,
    pub n_train: usize,
    pub n_test: usize,
    pub source_distance_mm: f64,
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
}

/// Loads one half (`train` or `test`) of a targets directory.
pub fn read_target_split(dir: &Path, split: &str) -> Result<TargetImageSet> {
    let manifest: TargetsManifest = serde_json::from_str(
        &fs::read_to_string(dir.join("manifest.json"))
            .with_context(|| format!("{} is not a targets directory", dir.display()))?,
    )?;
    let (views, images) = read_image_set(&dir.join(split))?;
    Ok(TargetImageSet { views, images, normalization: manifest.normalization, perturb: manifest.perturb })
}

/// Loads an image set from either a targets directory (its `test` split)
/// or a plain image-set directory.
pub fn read_eval_set(dir: &Path) -> Result<(Vec<CameraView>, Vec<RenderedImage>)> {
    if dir.join("views.json").exists() {
        read_image_set(dir)
    } else if dir.join("manifest.json").exists() {
        read_image_set(&dir.join("test"))
    } else {
        bail!("{} holds neither views.json nor a targets manifest", dir.display())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes).with_context(|| format!("writing {}", path.display()))
}

/// Writes every staged file. Callers stage all outputs first so that an
/// invalid input never leaves partial results behind.
pub fn write_all(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    for (p, b) in files {
        write_file(p, b)?;
    }
    Ok(())
}

pub fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))
}
