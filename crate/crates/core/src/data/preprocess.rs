use std::io::Cursor;
use std::path::Path;

use image::imageops::FilterType;
use image::{ColorType, DynamicImage};
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::model::InputShape;

/// Decodes `path` and converts it to a `[C × H × W]` tensor in `[0, 1]`.
pub fn preprocess(path: &Path, target: InputShape) -> Result<Array3<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let img = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    preprocess_image(&img, target).map_err(|e| match e {
        Error::InvalidConfig { reason, .. } => decode_err(reason),
        other => other,
    })
}

/// Bilinear resize to the target size (skipped when already that size),
/// scale to `[0, 1]`, and replicate grayscale across the target channels.
pub fn preprocess_image(img: &DynamicImage, target: InputShape) -> Result<Array3<f64>> {
    let gray_source = matches!(
        img.color(),
        ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16
    );
    let (h, w) = (target.height, target.width);
    let resize = img.width() as usize != w || img.height() as usize != h;
    let planes: Vec<Vec<u8>> = match (target.channels, gray_source) {
        (1, _) | (_, true) => {
            let mut luma = img.to_luma8();
            if resize {
                luma = image::imageops::resize(&luma, w as u32, h as u32, FilterType::Triangle);
            }
            vec![luma.into_raw()]
        }
        (3, false) => {
            let mut rgb = img.to_rgb8();
            if resize {
                rgb = image::imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle);
            }
            let raw = rgb.into_raw();
            (0..3).map(|c| raw.iter().skip(c).step_by(3).copied().collect()).collect()
        }
        (c, false) => {
            return Err(Error::config(
                "model.input.channels",
                format!("cannot map a colour image onto {c} channels"),
            ))
        }
    };
    let mut out = Array3::zeros((target.channels, h, w));
    for c in 0..target.channels {
        let plane = if planes.len() == 1 { &planes[0] } else { &planes[c] };
        for (dst, &v) in out.index_axis_mut(ndarray::Axis(0), c).iter_mut().zip(plane) {
            *dst = v as f64 / 255.0;
        }
    }
    Ok(out)
}
