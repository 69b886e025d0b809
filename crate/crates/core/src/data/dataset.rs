use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, GrayImage, ImageBuffer, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    TestDay,
    TestNight,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::TestDay, Split::TestNight];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestDay => "test_day",
            Split::TestNight => "test_night",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Usage(format!("unknown split {name:?} (expected train, test_day or test_night)")))
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A validated dataset directory:
///
/// ```text
/// root/images/<id>.png    grayscale, 8 or 16 bit
/// root/labels/<id>.png    8-bit class indices
/// root/splits/{train,test_day,test_night}.txt
/// ```
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    num_classes: usize,
    ids: [Vec<String>; 3],
}

/// One image/label pair, resized and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// Intensities in [0, 1], row-major.
    pub image: Vec<f32>,
    /// Class indices, row-major.
    pub label: Vec<u8>,
}

impl Sample {
    /// The image as a 1×1×H×W tensor.
    pub fn image_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 1, self.height, self.width], |i| T::from_f64(self.image[i] as f64))
    }
}

/// Validates the directory layout and every listed sample.
///
/// Each id must have an image and a label of equal size, and every label
/// value must be below `num_classes`.
pub fn scan_dataset(root: impl AsRef<Path>, num_classes: usize) -> Result<Dataset> {
    let root = root.as_ref().to_path_buf();
    if !(1..=256).contains(&num_classes) {
        return Err(Error::Config(format!("num_classes must be in 1..=256, got {num_classes}")));
    }
    for dir in ["images", "labels", "splits"] {
        if !root.join(dir).is_dir() {
            return Err(Error::Data(format!("{} is missing the {dir}/ directory", root.display())));
        }
    }
    let mut ids: [Vec<String>; 3] = Default::default();
    for split in Split::ALL {
        let path = root.join("splits").join(format!("{}.txt", split.name()));
        if !path.is_file() {
            return Err(Error::Data(format!("missing split file {}", path.display())));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut seen = HashSet::new();
        for id in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if !seen.insert(id) {
                return Err(Error::Data(format!("sample {id}: listed twice in {}", path.display())));
            }
            ids[split.index()].push(id.to_string());
        }
    }
    if ids[Split::Train.index()].is_empty() {
        return Err(Error::Config(format!("train split of {} is empty", root.display())));
    }
    let ds = Dataset {
        root,
        num_classes,
        ids,
    };
    for id in ds.ids.iter().flatten() {
        ds.validate(id)?;
    }
    Ok(ds)
}

impl Dataset {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ids(&self, split: Split) -> &[String] {
        &self.ids[split.index()]
    }

    pub fn counts(&self) -> [(Split, usize); 3] {
        Split::ALL.map(|s| (s, self.ids(s).len()))
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.png"))
    }

    pub fn label_path(&self, id: &str) -> PathBuf {
        self.root.join("labels").join(format!("{id}.png"))
    }

    fn validate(&self, id: &str) -> Result<()> {
        let (ip, lp) = (self.image_path(id), self.label_path(id));
        for p in [&ip, &lp] {
            if !p.is_file() {
                return Err(Error::Data(format!("sample {id}: missing {}", p.display())));
            }
        }
        let dims = ImageReader::open(&ip)
            .and_then(|r| r.with_guessed_format())
            .map_err(|e| Error::Data(format!("sample {id}: cannot open {}: {e}", ip.display())))?
            .into_dimensions()
            .map_err(|e| Error::Data(format!("sample {id}: cannot read {}: {e}", ip.display())))?;
        let label = read_label(&lp, id)?;
        if label.dimensions() != dims {
            return Err(Error::Data(format!(
                "sample {id}: image is {}×{} but label is {}×{}",
                dims.0,
                dims.1,
                label.width(),
                label.height()
            )));
        }
        check_classes(id, label.as_raw(), self.num_classes)
    }

    /// Loads `id`, resizing the image bilinearly and the label by nearest
    /// neighbour to `height × width` (both multiples of 32).
    pub fn load(&self, id: &str, height: usize, width: usize) -> Result<Sample> {
        if height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0 {
            return Err(Error::Config(format!(
                "target size {height}×{width} must be a positive multiple of 32"
            )));
        }
        let image = read_gray(&self.image_path(id), id)?;
        let label = read_label(&self.label_path(id), id)?;
        if image.dimensions() != label.dimensions() {
            return Err(Error::Data(format!("sample {id}: image and label sizes differ")));
        }
        let (w, h) = (width as u32, height as u32);
        let image = imageops::resize(&image, w, h, FilterType::Triangle);
        let label = imageops::resize(&label, w, h, FilterType::Nearest);
        check_classes(id, label.as_raw(), self.num_classes)?;
        Ok(Sample {
            id: id.to_string(),
            height,
            width,
            image: image.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            label: label.into_raw(),
        })
    }

    /// Loads every sample of `split`.
    pub fn load_split(&self, split: Split, height: usize, width: usize) -> Result<Vec<Sample>> {
        self.ids(split).iter().map(|id| self.load(id, height, width)).collect()
    }
}

fn check_classes(id: &str, label: &[u8], num_classes: usize) -> Result<()> {
    match label.iter().position(|&v| v as usize >= num_classes) {
        Some(i) => Err(Error::Data(format!(
            "sample {id}: label value {} at pixel {i} is not below {num_classes}",
            label[i]
        ))),
        None => Ok(()),
    }
}

fn decode(path: &Path, id: &str) -> Result<DynamicImage> {
    ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| Error::Data(format!("sample {id}: cannot open {}: {e}", path.display())))?
        .decode()
        .map_err(|e| Error::Data(format!("sample {id}: cannot decode {}: {e}", path.display())))
}

/// Grayscale intensities divided by the largest value of their bit depth.
fn read_gray(path: &Path, id: &str) -> Result<ImageBuffer<Luma<f32>, Vec<f32>>> {
    let (w, h, data): (u32, u32, Vec<f32>) = match decode(path, id)? {
        DynamicImage::ImageLuma8(b) => (b.width(), b.height(), b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (
            b.width(),
            b.height(),
            b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        ),
        other => {
            return Err(Error::Data(format!(
                "sample {id}: {} is {:?}, expected 8- or 16-bit grayscale",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(ImageBuffer::from_raw(w, h, data).expect("buffer size"))
}

fn read_label(path: &Path, id: &str) -> Result<GrayImage> {
    match decode(path, id)? {
        DynamicImage::ImageLuma8(b) => Ok(b),
        other => Err(Error::Data(format!(
            "sample {id}: label {} is {:?}, expected 8-bit single-channel indices",
            path.display(),
            other.color()
        ))),
    }
}

/// Reads a standalone grayscale image (8 or 16 bit) normalized to
/// [0, 1], returning `(height, width, values)` at its original size.
pub fn read_image(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let id = path.display().to_string();
    let img = read_gray(path, &id)?;
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

/// Bilinear resize of a row-major intensity map.
pub fn resize_image(data: &[f32], height: usize, width: usize, to_h: usize, to_w: usize) -> Vec<f32> {
    let img: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_raw(width as u32, height as u32, data.to_vec()).expect("buffer size");
    imageops::resize(&img, to_w as u32, to_h as u32, FilterType::Triangle)
        .into_raw()
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect()
}

/// Nearest-neighbour resize of a class-index map.
pub fn resize_labels(data: &[u8], height: usize, width: usize, to_h: usize, to_w: usize) -> Vec<u8> {
    let img = GrayImage::from_raw(width as u32, height as u32, data.to_vec()).expect("buffer size");
    imageops::resize(&img, to_w as u32, to_h as u32, FilterType::Nearest).into_raw()
}

/// Mirrors each `width`-long row in place.
pub fn flip_rows<T>(data: &mut [T], width: usize) {
    for row in data.chunks_mut(width) {
        row.reverse();
    }
}

/// Mirrors image and label together about the vertical axis.
pub fn hflip(sample: &Sample) -> Sample {
    let mut s = sample.clone();
    flip_rows(&mut s.image, s.width);
    flip_rows(&mut s.label, s.width);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(h: usize, w: usize) -> Sample {
        Sample {
            id: "s".into(),
            height: h,
            width: w,
            image: (0..h * w).map(|i| i as f32 / (h * w) as f32).collect(),
            label: (0..h * w).map(|i| (i % 7) as u8).collect(),
        }
    }

    #[test]
    fn flip_moves_columns() {
        let s = sample(3, 5);
        let f = hflip(&s);
        for r in 0..3 {
            for c in 0..5 {
                assert_eq!(f.image[r * 5 + c], s.image[r * 5 + (4 - c)]);
                assert_eq!(f.label[r * 5 + c], s.label[r * 5 + (4 - c)]);
            }
        }
    }

    #[test]
    fn column_constant_image_is_flip_invariant() {
        let mut s = sample(4, 6);
        s.image = (0..24).map(|i| (i / 6) as f32).collect();
        assert_eq!(hflip(&s).image, s.image);
    }

    #[test]
    fn split_names_round_trip() {
        for s in Split::ALL {
            assert_eq!(Split::from_name(s.name()).unwrap(), s);
        }
        assert!(matches!(Split::from_name("val"), Err(Error::Usage(_))));
    }

    proptest! {
        #[test]
        fn flip_is_an_involution(h in 1usize..6, w in 1usize..9) {
            let s = sample(h, w);
            prop_assert_eq!(hflip(&hflip(&s)), s);
        }
    }
}
