use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use super::palette::Palette;
use crate::error::{Error, Result};

/// Colors every pixel of a class-index map by palette lookup.
pub fn render_prediction(label: &[u8], height: usize, width: usize, palette: &Palette) -> Result<RgbImage> {
    if label.len() != height * width {
        return Err(Error::dim(
            "render_prediction",
            format!("{} labels for a {height}×{width} map", label.len()),
        ));
    }
    let mut rgb = Vec::with_capacity(label.len() * 3);
    for (i, &c) in label.iter().enumerate() {
        let color = palette.color(c).ok_or_else(|| {
            Error::Data(format!("class {c} at pixel {i} is outside the {}-class palette", palette.len()))
        })?;
        rgb.extend_from_slice(&color);
    }
    Ok(RgbImage::from_raw(width as u32, height as u32, rgb).expect("buffer size"))
}

/// Writes `<id>_pred.png` (8-bit indices) and `<id>_vis.png` (palette
/// colors) into `dir`, returning both paths.
pub fn write_prediction(
    dir: &Path,
    id: &str,
    label: &[u8],
    height: usize,
    width: usize,
    palette: &Palette,
) -> Result<(PathBuf, PathBuf)> {
    let vis = render_prediction(label, height, width, palette)?;
    let pred = GrayImage::from_raw(width as u32, height as u32, label.to_vec()).expect("buffer size");
    let pred_path = dir.join(format!("{id}_pred.png"));
    let vis_path = dir.join(format!("{id}_vis.png"));
    pred.save(&pred_path).map_err(|source| Error::Image {
        path: pred_path.clone(),
        source,
    })?;
    vis.save(&vis_path).map_err(|source| Error::Image {
        path: vis_path.clone(),
        source,
    })?;
    Ok((pred_path, vis_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_map_is_uniform() {
        let p = Palette::default();
        let img = render_prediction(&[0; 12], 3, 4, &p).unwrap();
        assert!(img.pixels().all(|px| px.0 == p.color(0).unwrap()));
    }

    #[test]
    fn render_inverts() {
        let p = Palette::default();
        let label: Vec<u8> = (0..36).map(|i| (i * 5 % 9) as u8).collect();
        let img = render_prediction(&label, 6, 6, &p).unwrap();
        let back: Vec<u8> = img.pixels().map(|px| p.class_of(px.0).unwrap()).collect();
        assert_eq!(back, label);
        assert!(matches!(render_prediction(&[9], 1, 1, &p), Err(Error::Data(_))));
    }

    #[test]
    fn identical_maps_give_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = Palette::default();
        let label: Vec<u8> = (0..64).map(|i| (i % 3) as u8).collect();
        let (a_pred, a_vis) = write_prediction(dir.path(), "gt", &label, 8, 8, &p).unwrap();
        let (b_pred, b_vis) = write_prediction(dir.path(), "pred", &label, 8, 8, &p).unwrap();
        assert_eq!(std::fs::read(a_vis).unwrap(), std::fs::read(b_vis).unwrap());
        assert_eq!(std::fs::read(a_pred).unwrap(), std::fs::read(b_pred).unwrap());
    }
}
