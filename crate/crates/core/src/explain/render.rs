use std::path::Path;
use std::sync::OnceLock;

use image::{Rgb, RgbImage};
use ndarray::Array3;

use super::HeatMap;
use crate::error::{Error, Result};

/// Weight of the colormap in an overlay; the image gets `1 - OVERLAY_BLEND`.
pub const OVERLAY_BLEND: f64 = 0.5;

/// Colormap anchors, evenly spaced over `[0, 1]`: dark blue, blue, cyan,
/// yellow, red, dark red. The 256-entry table linearly interpolates between
/// neighbouring anchors and rounds to the nearest integer.
const ANCHORS: [[u8; 3]; 6] = [
    [0, 0, 128],
    [0, 0, 255],
    [0, 255, 255],
    [255, 255, 0],
    [255, 0, 0],
    [128, 0, 0],
];

fn lut() -> &'static [[u8; 3]; 256] {
    static LUT: OnceLock<[[u8; 3]; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut table = [[0u8; 3]; 256];
        let segments = (ANCHORS.len() - 1) as f64;
        for (i, entry) in table.iter_mut().enumerate() {
            let t = i as f64 / 255.0 * segments;
            let lo = (t.floor() as usize).min(ANCHORS.len() - 2);
            let f = t - lo as f64;
            for c in 0..3 {
                let a = ANCHORS[lo][c] as f64;
                let b = ANCHORS[lo + 1][c] as f64;
                entry[c] = (a + (b - a) * f).round() as u8;
            }
        }
        table
    })
}

/// Colour for a heat value in `[0, 1]` (clamped).
pub fn colormap(v: f64) -> [u8; 3] {
    let idx = (v.clamp(0.0, 1.0) * 255.0).round() as usize;
    lut()[idx]
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Displayable RGB version of a preprocessed `[C × H × W]` tensor in
/// `[0, 1]`: the first three channels, or the first channel as grey.
pub fn tensor_to_rgb(image: &Array3<f64>) -> RgbImage {
    let (c, h, w) = image.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if c >= 3 {
            Rgb([to_u8(image[[0, y, x]]), to_u8(image[[1, y, x]]), to_u8(image[[2, y, x]])])
        } else {
            let g = to_u8(image[[0, y, x]]);
            Rgb([g, g, g])
        }
    })
}

/// Blends the colormapped heatmap over the image.
pub fn overlay(image: &RgbImage, map: &HeatMap) -> Result<RgbImage> {
    let (h, w) = map.shape();
    if (image.width() as usize, image.height() as usize) != (w, h) {
        return Err(Error::shape(
            "overlay",
            format!("{w}×{h}"),
            format!("{}×{}", image.width(), image.height()),
        ));
    }
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let base = image.get_pixel(x, y).0;
        let heat = colormap(map.values[[y as usize, x as usize]]);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let v = (1.0 - OVERLAY_BLEND) * base[c] as f64 + OVERLAY_BLEND * heat[c] as f64;
            out[c] = v.round() as u8;
        }
        Rgb(out)
    }))
}

/// Writes `original | overlay(maps[0]) | overlay(maps[1]) | …` side by side
/// as one PNG.
pub fn render_panels(image: &Array3<f64>, maps: &[&HeatMap], path: &Path) -> Result<()> {
    let base = tensor_to_rgb(image);
    let (w, h) = base.dimensions();
    let mut panels = vec![base.clone()];
    for map in maps {
        panels.push(overlay(&base, map)?);
    }
    let mut canvas = RgbImage::new(w * panels.len() as u32, h);
    for (i, panel) in panels.iter().enumerate() {
        image::imageops::replace(&mut canvas, panel, (i as u32 * w) as i64, 0);
    }
    canvas
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}
