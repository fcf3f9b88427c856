//! Synthetic datasets, directory ingestion, balancing and splitting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{write_pgm16, write_pgm8, GroundTruthMask, Image};
use crate::network::hex;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub image: Image,
    pub label: usize,
    pub mask: Option<GroundTruthMask>,
}

impl LabeledImage {
    pub fn new(id: impl Into<String>, image: Image, label: usize, mask: Option<GroundTruthMask>) -> Result<Self> {
        if let Some(m) = &mask {
            if m.dims() != image.dims() {
                return Err(Error::dim(format!(
                    "mask {:?} does not match image {:?}",
                    m.dims(),
                    image.dims()
                )));
            }
        }
        Ok(Self {
            id: id.into(),
            image,
            label,
            mask,
        })
    }
}

/// Parameters of the synthetic phenotype generator.
///
/// Class 0 is a soft ellipse of moderate uniform intensity, class 1 adds
/// bright Gaussian dots inside it and class 2 (when `classes == 3`) adds a
/// bright ring. The mask is always the ellipse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_size: usize,
    pub samples_per_class: usize,
    pub classes: usize,
    /// Inclusive range of dots per punctate image.
    pub dot_count: (usize, usize),
    /// Range of the Gaussian dot standard deviation, in pixels.
    pub dot_sigma: (f32, f32),
    pub dot_amplitude: (f32, f32),
    /// Ellipse semi-axes as fractions of the image size.
    pub radius: (f32, f32),
    pub foreground: (f32, f32),
    /// Half-width of the uniform pixel noise.
    pub noise: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            samples_per_class: 400,
            classes: 2,
            dot_count: (3, 8),
            dot_sigma: (0.8, 1.3),
            dot_amplitude: (0.4, 0.6),
            radius: (0.25, 0.38),
            foreground: (0.3, 0.45),
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let pos_range = |(a, b): (f32, f32)| a > 0.0 && a <= b;
        if self.image_size < 8 {
            return Err(Error::config("synthetic images must be at least 8x8"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("samples per class must be positive"));
        }
        if !(2..=3).contains(&self.classes) {
            return Err(Error::config(format!("class scheme has 2 or 3 classes, got {}", self.classes)));
        }
        if self.dot_count.0 == 0 || self.dot_count.0 > self.dot_count.1 {
            return Err(Error::config("dot count range must be positive and ordered"));
        }
        if !pos_range(self.dot_sigma) || !pos_range(self.dot_amplitude) || !pos_range(self.foreground) {
            return Err(Error::config("dot and foreground ranges must be positive and ordered"));
        }
        if !pos_range(self.radius) || self.radius.1 > 0.45 {
            return Err(Error::config("ellipse radius range must lie in (0, 0.45]"));
        }
        if !(0.0..0.2).contains(&self.noise) {
            return Err(Error::config(format!("noise amplitude must be in [0, 0.2), got {}", self.noise)));
        }
        Ok(())
    }
}

/// A generated image together with where its class evidence was placed.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticImage {
    pub sample: LabeledImage,
    /// `(row, col)` centers of the dots, empty for other classes.
    pub dot_centers: Vec<(f32, f32)>,
}

struct Ellipse {
    cy: f32,
    cx: f32,
    ry: f32,
    rx: f32,
    cos: f32,
    sin: f32,
}

impl Ellipse {
    /// Normalized elliptical radius; 1 on the boundary.
    fn radius(&self, y: f32, x: f32) -> f32 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt()
    }

    fn point(&self, r: f32, theta: f32) -> (f32, f32) {
        let (u, v) = (r * self.rx * theta.cos(), r * self.ry * theta.sin());
        (self.cy + u * self.sin + v * self.cos, self.cx + u * self.cos - v * self.sin)
    }
}

fn synthesize_one(cfg: &SynthConfig, label: usize, id: String, rng: &mut ChaCha8Rng) -> Result<SyntheticImage> {
    let n = cfg.image_size;
    let s = n as f32;
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::PI);
    let e = Ellipse {
        cy: rng.gen_range(0.45..0.55) * s,
        cx: rng.gen_range(0.45..0.55) * s,
        ry: rng.gen_range(cfg.radius.0..=cfg.radius.1) * s,
        rx: rng.gen_range(cfg.radius.0..=cfg.radius.1) * s,
        cos: angle.cos(),
        sin: angle.sin(),
    };
    let level: f32 = rng.gen_range(cfg.foreground.0..=cfg.foreground.1);
    let mut pixels = vec![0.0f32; n * n];
    let mut cells = vec![false; n * n];
    for y in 0..n {
        for x in 0..n {
            let r = e.radius(y as f32 + 0.5, x as f32 + 0.5);
            // Soft edge about one pixel wide.
            let edge = 1.0 / (1.0 + ((r - 1.0) * 8.0).exp());
            pixels[y * n + x] = level * edge;
            cells[y * n + x] = r <= 1.0;
        }
    }

    let mut dots = Vec::new();
    match label {
        1 => {
            let count = rng.gen_range(cfg.dot_count.0..=cfg.dot_count.1);
            for _ in 0..count {
                let (cy, cx) = e.point(rng.gen_range(0.0f32..0.7).sqrt(), rng.gen_range(0.0..std::f32::consts::TAU));
                let sigma = rng.gen_range(cfg.dot_sigma.0..=cfg.dot_sigma.1);
                let amp = rng.gen_range(cfg.dot_amplitude.0..=cfg.dot_amplitude.1);
                for y in 0..n {
                    for x in 0..n {
                        let d2 = (y as f32 + 0.5 - cy).powi(2) + (x as f32 + 0.5 - cx).powi(2);
                        pixels[y * n + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                }
                dots.push((cy, cx));
            }
        }
        2 => {
            let (r0, width) = (rng.gen_range(0.55f32..0.7), 0.12f32);
            let amp = rng.gen_range(cfg.dot_amplitude.0..=cfg.dot_amplitude.1);
            for y in 0..n {
                for x in 0..n {
                    let r = e.radius(y as f32 + 0.5, x as f32 + 0.5);
                    pixels[y * n + x] += amp * (-((r - r0) / width).powi(2)).exp();
                }
            }
        }
        _ => {}
    }
    for p in pixels.iter_mut() {
        let noise = if cfg.noise > 0.0 { rng.gen_range(-cfg.noise..cfg.noise) } else { 0.0 };
        *p = (*p + noise).clamp(0.0, 1.0);
    }
    let image = Image::new(n, n, pixels)?;
    let mask = GroundTruthMask::new(n, n, cells)?;
    Ok(SyntheticImage {
        sample: LabeledImage::new(id, image, label, Some(mask))?,
        dot_centers: dots,
    })
}

/// Generates `classes * samples_per_class` images with labels interleaved
/// (`img00000` is class 0, `img00001` class 1, ...).
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<SyntheticImage>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.classes * cfg.samples_per_class;
    (0..total)
        .map(|i| synthesize_one(cfg, i % cfg.classes, format!("img{i:05}"), &mut rng))
        .collect()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<LabeledImage>> {
    Ok(synthesize(cfg)?.into_iter().map(|s| s.sample).collect())
}

/// Order-independent dataset hash: SHA-256 over the sorted SHA-256 digests
/// of `"{id}\0{label}"`, hex encoded.
pub fn fingerprint(images: &[LabeledImage]) -> String {
    let mut digests: Vec<[u8; 32]> = images
        .iter()
        .map(|s| Sha256::digest(format!("{}\0{}", s.id, s.label).as_bytes()).into())
        .collect();
    digests.sort_unstable();
    let mut h = Sha256::new();
    for d in &digests {
        h.update(d);
    }
    hex(&h.finalize())
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    file: String,
    label: usize,
    #[serde(default)]
    mask: Option<String>,
}

fn decode_gray(path: &Path) -> Result<Image> {
    let img = ::image::open(path).map_err(|e| Error::data(format!("cannot decode {}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f32> = match img {
        ::image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        ::image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        ::image::DynamicImage::ImageLumaA8(b) => b.into_raw().chunks(2).map(|c| c[0] as f32 / 255.0).collect(),
        ::image::DynamicImage::ImageLumaA16(b) => b.into_raw().chunks(2).map(|c| c[0] as f32 / 65535.0).collect(),
        other => {
            return Err(Error::data(format!(
                "{} is not grayscale ({:?})",
                path.display(),
                other.color()
            )))
        }
    };
    Image::new(h, w, pixels)
}

/// Reads the images listed in `manifest` (header `file,label,mask`; the mask
/// column may be empty). Paths are relative to `dir`; ids are file stems.
pub fn load_image_dir(dir: &Path, manifest: &Path, classes: usize) -> Result<Vec<LabeledImage>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest)
        .map_err(|e| Error::data(format!("cannot read manifest {}: {e}", manifest.display())))?;
    let mut out: Vec<LabeledImage> = Vec::new();
    for (line, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| Error::data(format!("manifest {} entry {}: {e}", manifest.display(), line + 1)))?;
        let entry = |msg: String| Error::data(format!("manifest entry {} ({}): {msg}", line + 1, row.file));
        if row.label >= classes {
            return Err(entry(format!("label {} outside 0..{classes}", row.label)));
        }
        let image = decode_gray(&dir.join(&row.file)).map_err(|e| entry(e.to_string()))?;
        let mask = match row.mask.as_deref().filter(|m| !m.is_empty()) {
            None => None,
            Some(m) => {
                let path = dir.join(m);
                if !path.exists() {
                    return Err(entry(format!("mask {} not found", path.display())));
                }
                let raw = decode_gray(&path).map_err(|e| entry(e.to_string()))?;
                let (h, w) = raw.dims();
                Some(GroundTruthMask::new(h, w, raw.pixels().iter().map(|&v| v > 0.0).collect())?)
            }
        };
        if let Some(first) = out.first() {
            if first.image.dims() != image.dims() {
                return Err(entry(format!(
                    "image is {:?} but the dataset is {:?}",
                    image.dims(),
                    first.image.dims()
                )));
            }
        }
        let id = Path::new(&row.file)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| entry("no file name".into()))?;
        if out.iter().any(|s| s.id == id) {
            return Err(entry(format!("duplicate id {id}")));
        }
        out.push(LabeledImage::new(id, image, row.label, mask).map_err(|e| entry(e.to_string()))?);
    }
    if out.is_empty() {
        return Err(Error::data(format!("manifest {} lists no images", manifest.display())));
    }
    Ok(out)
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes `<id>.pgm` (16-bit), `<id>_mask.pgm` (8-bit, 255 = foreground) and
/// `manifest.csv` into `dir`.
pub fn write_dataset(dir: &Path, images: &[LabeledImage]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("file,label,mask\n");
    for s in images {
        let (h, w) = s.image.dims();
        let file = format!("{}.pgm", s.id);
        let levels: Vec<u16> = s.image.pixels().iter().map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
        write_pgm16(&dir.join(&file), h, w, &levels)?;
        let mask_file = match &s.mask {
            Some(m) => {
                let name = format!("{}_mask.pgm", s.id);
                let levels: Vec<u8> = m.cells().iter().map(|&c| if c { 255 } else { 0 }).collect();
                write_pgm8(&dir.join(&name), h, w, &levels)?;
                name
            }
            None => String::new(),
        };
        manifest.push_str(&format!("{file},{},{mask_file}\n", s.label));
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn by_class(images: Vec<LabeledImage>) -> Result<Vec<Vec<LabeledImage>>> {
    let classes = images.iter().map(|s| s.label + 1).max().ok_or_else(|| Error::data("empty dataset"))?;
    let mut groups: Vec<Vec<LabeledImage>> = vec![Vec::new(); classes];
    for s in images {
        groups[s.label].push(s);
    }
    if let Some(c) = groups.iter().position(|g| g.is_empty()) {
        return Err(Error::data(format!("class {c} has no images")));
    }
    Ok(groups)
}

/// Downsamples every class to the minority count, then shuffles.
pub fn undersample_balance(images: Vec<LabeledImage>, seed: u64) -> Result<Vec<LabeledImage>> {
    let groups = by_class(images)?;
    let keep = groups.iter().map(Vec::len).min().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(keep * groups.len());
    for g in groups {
        let mut picked = index::sample(&mut rng, g.len(), keep).into_vec();
        picked.sort_unstable();
        let mut g: Vec<Option<LabeledImage>> = g.into_iter().map(Some).collect();
        out.extend(picked.into_iter().map(|i| g[i].take().unwrap()));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub holdout_fraction: f64,
    pub validation_fraction: f64,
    pub fingerprint: String,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub train: Vec<LabeledImage>,
    pub validation: Vec<LabeledImage>,
    pub holdout: Vec<LabeledImage>,
    pub manifest: SplitManifest,
}

pub const HOLDOUT_FRACTION: f64 = 0.2;
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Stratified 80/20 train-pool/holdout split, then 80/20 train/validation
/// within the pool. Each split keeps the input's relative order.
pub fn split(images: Vec<LabeledImage>, seed: u64) -> Result<DatasetSplits> {
    let fp = fingerprint(&images);
    let order: BTreeMap<String, usize> = images.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
    if order.len() != images.len() {
        return Err(Error::data("duplicate image ids"));
    }
    let groups = by_class(images)?;
    if let Some((c, g)) = groups.iter().enumerate().find(|(_, g)| g.len() < 5) {
        return Err(Error::data(format!("class {c} has {} images; stratified splitting needs at least 5", g.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut validation, mut holdout) = (Vec::new(), Vec::new(), Vec::new());
    for mut g in groups {
        g.shuffle(&mut rng);
        let n_hold = (g.len() as f64 * HOLDOUT_FRACTION).round() as usize;
        let pool = g.len() - n_hold;
        let n_val = (pool as f64 * VALIDATION_FRACTION).round() as usize;
        let mut it = g.into_iter();
        holdout.extend(it.by_ref().take(n_hold));
        validation.extend(it.by_ref().take(n_val));
        train.extend(it);
    }
    for part in [&mut train, &mut validation, &mut holdout] {
        part.sort_by_key(|s| order[&s.id]);
    }
    let counts = BTreeMap::from([
        ("train".to_string(), train.len()),
        ("validation".to_string(), validation.len()),
        ("holdout".to_string(), holdout.len()),
    ]);
    Ok(DatasetSplits {
        train,
        validation,
        holdout,
        manifest: SplitManifest {
            seed,
            holdout_fraction: HOLDOUT_FRACTION,
            validation_fraction: VALIDATION_FRACTION,
            fingerprint: fp,
            counts,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(per_class: usize, classes: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            samples_per_class: per_class,
            classes,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small(10, 3, 5)).unwrap();
        let b = generate_synthetic(&small(10, 3, 5)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(10, 3, 6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dots_lie_inside_masks() {
        let all = synthesize(&small(100, 2, 1)).unwrap();
        let mut dots = 0;
        for s in &all {
            let mask = s.sample.mask.as_ref().unwrap();
            for &(y, x) in &s.dot_centers {
                assert!(mask.contains(y as usize, x as usize), "{} dot at ({y},{x})", s.sample.id);
                dots += 1;
            }
            assert!(s.sample.image.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            if s.sample.label == 1 {
                assert!((3..=8).contains(&s.dot_centers.len()));
            }
        }
        assert!(dots > 0);
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { classes: 4, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { noise: 0.2, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { dot_count: (5, 3), ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig::default().validate().is_ok());
    }

    #[test]
    fn split_counts_and_disjointness() {
        let images = generate_synthetic(&small(50, 2, 3)).unwrap();
        let s = split(images, 9).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.holdout.len()), (64, 16, 20));
        let mut seen = HashSet::new();
        for x in s.train.iter().chain(&s.validation).chain(&s.holdout) {
            assert!(seen.insert(x.id.clone()));
        }
        for part in [&s.train, &s.validation, &s.holdout] {
            let ones = part.iter().filter(|x| x.label == 1).count();
            assert!((ones as i64 - (part.len() / 2) as i64).abs() <= 1);
        }
    }

    #[test]
    fn split_rejects_tiny_class() {
        let mut images = generate_synthetic(&small(4, 2, 3)).unwrap();
        images.truncate(8);
        assert!(matches!(split(images, 1), Err(Error::Data(_))));
    }

    #[test]
    fn balancing() {
        let images = generate_synthetic(&small(10, 2, 3)).unwrap();
        let mut ones = 0;
        let skewed: Vec<_> = images
            .into_iter()
            .filter(|s| {
                ones += s.label;
                s.label == 0 || ones <= 7
            })
            .collect();
        let counts = |v: &[LabeledImage]| (v.iter().filter(|s| s.label == 0).count(), v.iter().filter(|s| s.label == 1).count());
        assert_eq!(counts(&skewed), (10, 7));
        let a = undersample_balance(skewed.clone(), 4).unwrap();
        assert_eq!(counts(&a), (7, 7));
        assert_eq!(a, undersample_balance(skewed, 4).unwrap());

        let balanced = generate_synthetic(&small(6, 2, 1)).unwrap();
        let mut before: Vec<_> = balanced.iter().map(|s| s.id.clone()).collect();
        let mut after: Vec<_> = undersample_balance(balanced, 2).unwrap().into_iter().map(|s| s.id).collect();
        before.sort();
        after.sort();
        assert_eq!(before, after);
    }

    #[test]
    fn balancing_rejects_empty_class() {
        let only_ones: Vec<_> = generate_synthetic(&small(3, 2, 1)).unwrap().into_iter().filter(|s| s.label == 1).collect();
        assert!(undersample_balance(only_ones, 1).is_err());
    }

    #[test]
    fn fingerprint_ignores_order() {
        let mut images = generate_synthetic(&small(5, 2, 3)).unwrap();
        let a = fingerprint(&images);
        images.reverse();
        assert_eq!(a, fingerprint(&images));
        images[0].label = 1 - images[0].label;
        assert_ne!(a, fingerprint(&images));
    }

    #[test]
    fn pixel_statistics_probe_separates_classes() {
        // Logistic regression on (mean, max) must reach 0.9 accuracy.
        let images = generate_synthetic(&small(200, 2, 21)).unwrap();
        let feats: Vec<[f64; 2]> = images
            .iter()
            .map(|s| {
                let p = s.image.pixels();
                let mean = p.iter().map(|&v| v as f64).sum::<f64>() / p.len() as f64;
                let max = p.iter().fold(0.0f32, |a, &b| a.max(b)) as f64;
                [mean, max]
            })
            .collect();
        let mu: Vec<f64> = (0..2).map(|k| feats.iter().map(|f| f[k]).sum::<f64>() / feats.len() as f64).collect();
        let sd: Vec<f64> = (0..2)
            .map(|k| (feats.iter().map(|f| (f[k] - mu[k]).powi(2)).sum::<f64>() / feats.len() as f64).sqrt())
            .collect();
        let z: Vec<[f64; 2]> = feats.iter().map(|f| [(f[0] - mu[0]) / sd[0], (f[1] - mu[1]) / sd[1]]).collect();
        let mut w = [0.0f64; 3];
        for _ in 0..500 {
            let mut g = [0.0f64; 3];
            for (f, s) in z.iter().zip(&images) {
                let p = 1.0 / (1.0 + (-(w[0] * f[0] + w[1] * f[1] + w[2])).exp());
                let e = p - s.label as f64;
                g[0] += e * f[0];
                g[1] += e * f[1];
                g[2] += e;
            }
            for k in 0..3 {
                w[k] -= 0.5 * g[k] / z.len() as f64;
            }
        }
        let correct = z
            .iter()
            .zip(&images)
            .filter(|(f, s)| ((w[0] * f[0] + w[1] * f[1] + w[2]) > 0.0) == (s.label == 1))
            .count();
        let acc = correct as f64 / images.len() as f64;
        assert!(acc >= 0.9, "probe accuracy {acc}");
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images = generate_synthetic(&small(2, 2, 8)).unwrap();
        let manifest = write_dataset(dir.path(), &images).unwrap();
        let loaded = load_image_dir(dir.path(), &manifest, 2).unwrap();
        assert_eq!(loaded.len(), 4);
        for (a, b) in images.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.label, b.label);
            assert_eq!(a.mask, b.mask);
            for (x, y) in a.image.pixels().iter().zip(b.image.pixels()) {
                assert!((x - y).abs() <= 0.5 / 65535.0 + 1e-7);
            }
        }
        assert!(matches!(load_image_dir(dir.path(), &manifest, 1), Err(Error::Data(_))));
    }

    #[test]
    fn sixteen_bit_white_is_one_and_missing_mask_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_pgm16(&dir.path().join("w.pgm"), 2, 2, &[65535, 0, 65535, 32768]).unwrap();
        let m = dir.path().join("m.csv");
        fs::write(&m, "file,label,mask\nw.pgm,0,\n").unwrap();
        let loaded = load_image_dir(dir.path(), &m, 2).unwrap();
        assert_eq!(loaded[0].image.pixels()[0], 1.0);
        assert_eq!(loaded[0].image.pixels()[1], 0.0);
        fs::write(&m, "file,label,mask\nw.pgm,0,gone.pgm\n").unwrap();
        match load_image_dir(dir.path(), &m, 2) {
            Err(Error::Data(msg)) => assert!(msg.contains("w.pgm") && msg.contains("gone.pgm"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
