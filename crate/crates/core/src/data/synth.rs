use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{scan_dataset, Dataset, Split};
use crate::error::{Error, Result};

/// Standard deviation of the per-pixel intensity noise.
pub const NOISE_SIGMA: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub seed: u64,
}

/// Closed intensity interval of `class`. Bands of different classes are
/// disjoint and separated by gaps.
pub fn intensity_band(class: usize, num_classes: usize) -> (f64, f64) {
    let c = num_classes as f64;
    ((class as f64 + 0.15) / c, (class as f64 + 0.85) / c)
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { top: usize, left: usize, h: usize, w: usize },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Self {
        let extent = |rng: &mut ChaCha8Rng, n: usize| rng.gen_range((n / 8).max(1)..=(n / 2).max(1));
        let (h, w) = (extent(rng, height), extent(rng, width));
        let top = rng.gen_range(0..=height - h);
        let left = rng.gen_range(0..=width - w);
        if rng.gen::<bool>() {
            Shape::Rect { top, left, h, w }
        } else {
            Shape::Ellipse {
                cy: top as f64 + h as f64 / 2.0,
                cx: left as f64 + w as f64 / 2.0,
                ry: h as f64 / 2.0,
                rx: w as f64 / 2.0,
            }
        }
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        match *self {
            Shape::Rect { top, left, h, w } => (top..top + h).contains(&r) && (left..left + w).contains(&c),
            Shape::Ellipse { cy, cx, ry, rx } => {
                let dy = (r as f64 + 0.5 - cy) / ry;
                let dx = (c as f64 + 0.5 - cx) / rx;
                dy * dy + dx * dx <= 1.0
            }
        }
    }
}

/// Label map and 16-bit image of one synthetic scene.
fn scene(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> (Vec<u8>, Vec<u16>) {
    let (h, w) = (cfg.height, cfg.width);
    let mut label = vec![0u8; h * w];
    for class in 1..cfg.num_classes {
        let shape = Shape::random(rng, h, w);
        for r in 0..h {
            for c in 0..w {
                if shape.contains(r, c) {
                    label[r * w + c] = class as u8;
                }
            }
        }
    }
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    let image = label
        .iter()
        .map(|&class| {
            let (lo, hi) = intensity_band(class as usize, cfg.num_classes);
            let v = ((lo + hi) / 2.0 + noise.sample(rng)).clamp(lo, hi);
            (v * 65535.0).round() as u16
        })
        .collect();
    (label, image)
}

/// Writes `cfg.samples` scenes under `root` in the dataset layout, all in
/// the train split, and returns the scanned dataset.
///
/// Each scene is a background with one random rectangle or ellipse per
/// foreground class, later shapes drawn over earlier ones. Pixel
/// intensities are the class band's centre plus clamped Gaussian noise.
pub fn synth_generate(root: impl AsRef<Path>, cfg: &SynthConfig) -> Result<Dataset> {
    let root = root.as_ref();
    if cfg.samples == 0 {
        return Err(Error::Config("synthetic dataset needs at least one sample".into()));
    }
    if !(2..=256).contains(&cfg.num_classes) {
        return Err(Error::Config(format!("num_classes must be in 2..=256, got {}", cfg.num_classes)));
    }
    if cfg.height == 0 || cfg.width == 0 {
        return Err(Error::Config("synthetic image size must be positive".into()));
    }
    for dir in ["images", "labels", "splits"] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ids = String::new();
    let (w, h) = (cfg.width as u32, cfg.height as u32);
    for i in 0..cfg.samples {
        let id = format!("synth_{i:04}");
        let (label, image) = scene(&mut rng, cfg);
        let image: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(w, h, image).expect("buffer size");
        let label = GrayImage::from_raw(w, h, label).expect("buffer size");
        let ip = root.join("images").join(format!("{id}.png"));
        image.save(&ip).map_err(|source| Error::Image { path: ip, source })?;
        let lp = root.join("labels").join(format!("{id}.png"));
        label.save(&lp).map_err(|source| Error::Image { path: lp, source })?;
        ids.push_str(&id);
        ids.push('\n');
    }
    for split in Split::ALL {
        let p = root.join("splits").join(format!("{}.txt", split.name()));
        let body = if split == Split::Train { ids.as_str() } else { "" };
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    scan_dataset(root, cfg.num_classes)
}
