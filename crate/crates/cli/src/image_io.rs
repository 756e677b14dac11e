//! PNG and binary PPM/PGM ingestion into `[3, H, W]` tensors in `[0, 1]`.

use std::path::{Path, PathBuf};

use decloss::Tensor;
use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageFile {
    /// `[3, H, W]`; grayscale sources are replicated across channels.
    pub pixels: Tensor,
    pub path: PathBuf,
    pub bit_depth: u8,
}

pub const EXTENSIONS: [&str; 3] = ["png", "ppm", "pgm"];

fn format_err(path: &Path, detail: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {detail}", path.display()))
}

pub fn load_image(path: &Path) -> CliResult<ImageFile> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| format_err(path, e))?
        .with_guessed_format()
        .map_err(|e| format_err(path, e))?;
    let img = reader
        .decode()
        .map_err(|e| format_err(path, format!("unsupported image: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    match img {
        DynamicImage::ImageRgb8(rgb) => {
            for (i, px) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    data[c * plane + i] = px.0[c] as f64 / 255.0;
                }
            }
        }
        DynamicImage::ImageLuma8(gray) => {
            for (i, px) in gray.pixels().enumerate() {
                let v = px.0[0] as f64 / 255.0;
                for c in 0..3 {
                    data[c * plane + i] = v;
                }
            }
        }
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => {
            return Err(format_err(path, "unsupported bit depth 16, expected 8-bit"))
        }
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgba8(_) => {
            return Err(format_err(
                path,
                "unsupported alpha channel, expected RGB or gray",
            ))
        }
        other => {
            return Err(format_err(
                path,
                format!("unsupported pixel layout {:?}", other.color()),
            ))
        }
    }
    Ok(ImageFile {
        pixels: Tensor::new(vec![3, h, w], data).map_err(|e| format_err(path, e))?,
        path: path.to_path_buf(),
        bit_depth: 8,
    })
}

pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a `[1 or 3, H, W]` tensor; the format follows the extension.
pub fn save_image(pixels: &Tensor, path: &Path) -> CliResult<()> {
    let (c, h, w) = match pixels.shape() {
        &[c, h, w] if c == 1 || c == 3 => (c, h, w),
        s => {
            return Err(format_err(
                path,
                format!("cannot save tensor of shape {s:?} as an image"),
            ))
        }
    };
    let plane = h * w;
    let d = pixels.data();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    if !EXTENSIONS.contains(&ext.as_str()) {
        return Err(CliError::Usage(format!(
            "{}: output must end in .png, .ppm or .pgm",
            path.display()
        )));
    }
    let gray = c == 1 || (0..plane).all(|i| d[i] == d[plane + i] && d[i] == d[2 * plane + i]);
    let result = if ext == "pgm" || (gray && c == 1) {
        if !gray {
            return Err(format_err(
                path,
                "PGM output needs identical colour channels",
            ));
        }
        GrayImage::from_raw(
            w as u32,
            h as u32,
            d[..plane].iter().map(|&v| quantize(v)).collect(),
        )
        .expect("buffer sized from shape")
        .save(path)
    } else {
        let mut buf = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for k in 0..3 {
                buf.push(quantize(d[(k % c) * plane + i]));
            }
        }
        RgbImage::from_raw(w as u32, h as u32, buf)
            .expect("buffer sized from shape")
            .save(path)
    };
    result.map_err(|e| format_err(path, e))
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no PNG/PPM/PGM images found",
            dir.display()
        )));
    }
    Ok(files)
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Matches the two listings by file stem. Any file without a partner, or
/// two files sharing a stem on one side, is a data error naming the file.
pub fn pair_by_stem(sr: &[PathBuf], hr: &[PathBuf]) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    use std::collections::BTreeMap;
    let index = |files: &[PathBuf]| -> CliResult<BTreeMap<String, PathBuf>> {
        let mut map = BTreeMap::new();
        for f in files {
            if let Some(prev) = map.insert(stem(f), f.clone()) {
                return Err(CliError::Data(format!(
                    "ambiguous stem: {} and {}",
                    prev.display(),
                    f.display()
                )));
            }
        }
        Ok(map)
    };
    let (s, h) = (index(sr)?, index(hr)?);
    if let Some((_, f)) = s.iter().find(|(k, _)| !h.contains_key(*k)) {
        return Err(CliError::Data(format!(
            "{}: no HR image with the same name",
            f.display()
        )));
    }
    if let Some((_, f)) = h.iter().find(|(k, _)| !s.contains_key(*k)) {
        return Err(CliError::Data(format!(
            "{}: no SR image with the same name",
            f.display()
        )));
    }
    Ok(s.into_iter()
        .map(|(k, sp)| {
            let hp = h[&k].clone();
            (k, sp, hp)
        })
        .collect())
}
