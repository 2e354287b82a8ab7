//! On-disk dataset layout:
//!
//! ```text
//! <root>/manifest.txt          one id per line
//! <root>/images/<id>.png       8-bit grayscale or RGB
//! <root>/masks/<id>.png        8-bit, 0 / 255
//! <root>/scribbles/<id>.png    8-bit, 0 background / 128 foreground / 255 unlabeled
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::{BinaryMask, Image, ImageSample, ScribbleMask, BACKGROUND, FOREGROUND, UNLABELED};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

const DISK_BACKGROUND: u8 = 0;
const DISK_FOREGROUND: u8 = 128;
const DISK_UNLABELED: u8 = 255;

pub fn save_dataset(root: &Path, samples: &[ImageSample]) -> Result<()> {
    for sub in ["images", "masks", "scribbles"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut manifest = String::new();
    for s in samples {
        let name = format!("{}.png", s.id);
        write_image(&root.join("images").join(&name), &s.image)?;
        write_mask(&root.join("masks").join(&name), &s.full_mask)?;
        let (h, w) = s.scribble.hw();
        let bytes = s
            .scribble
            .labels()
            .iter()
            .map(|&l| match l {
                FOREGROUND => DISK_FOREGROUND,
                BACKGROUND => DISK_BACKGROUND,
                _ => DISK_UNLABELED,
            })
            .collect();
        write_gray(&root.join("scribbles").join(&name), h, w, bytes)?;
        manifest.push_str(&s.id);
        manifest.push('\n');
    }
    let path = root.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Loads a dataset written by [`save_dataset`]. An empty or missing
/// directory yields an empty dataset.
pub fn load_dataset(root: &Path) -> Result<Vec<ImageSample>> {
    let path = root.join(MANIFEST);
    if !path.exists() {
        let empty = match fs::read_dir(root) {
            Ok(mut entries) => entries.next().is_none(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => true,
            Err(e) => return Err(Error::io(root, e)),
        };
        return if empty {
            Ok(Vec::new())
        } else {
            Err(Error::format(path, "manifest missing from non-empty dataset directory"))
        };
    }
    read_manifest(&path)?
        .into_iter()
        .map(|id| {
            let name = format!("{id}.png");
            let image = read_image(&root.join("images").join(&name))?;
            let full_mask = read_mask(&root.join("masks").join(&name))?;
            let scribble = read_scribble(&root.join("scribbles").join(&name))?;
            ImageSample::new(id, image, full_mask, scribble)
                .map_err(|e| Error::format(root.join("images").join(&name), e.to_string()))
        })
        .collect()
}

pub(crate) fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (h, w) = img.hw();
    let plane = h * w;
    let d = img.data();
    match img.channels() {
        1 => write_gray(path, h, w, d.iter().map(|&v| to_byte(v)).collect()),
        3 => {
            let mut buf = Vec::with_capacity(3 * plane);
            for i in 0..plane {
                buf.extend([to_byte(d[i]), to_byte(d[plane + i]), to_byte(d[2 * plane + i])]);
            }
            let out: RgbImage = ImageBuffer::from_raw(w as u32, h as u32, buf).expect("buffer size");
            out.save(path).map_err(|e| image_err(path, e))
        }
        c => Err(Error::Argument(format!("cannot store {c}-channel image as PNG"))),
    }
}

pub(crate) fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = mask.hw();
    write_gray(path, h, w, mask.data().iter().map(|&v| v * 255).collect())
}

fn write_gray(path: &Path, h: usize, w: usize, bytes: Vec<u8>) -> Result<()> {
    let out: GrayImage = ImageBuffer::from_raw(w as u32, h as u32, bytes).expect("buffer size");
    out.save(path).map_err(|e| image_err(path, e))
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::format(path, "file missing"));
    }
    image::open(path).map_err(|e| image_err(path, e))
}

fn read_image(path: &Path) -> Result<Image> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            Image::new(1, h, w, g.pixels().map(|Luma([v])| *v as f32 / 255.0).collect())
        }
        other => {
            let rgb = other.to_rgb8();
            let mut data = vec![0f32; 3 * h * w];
            for (i, Rgb(px)) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    data[c * h * w + i] = px[c] as f32 / 255.0;
                }
            }
            Image::new(3, h, w, data)
        }
    }
}

fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(g) => Ok((h, w, g.into_raw())),
        _ => Err(Error::format(path, "expected 8-bit grayscale PNG")),
    }
}

pub(crate) fn read_mask(path: &Path) -> Result<BinaryMask> {
    let (h, w, raw) = read_gray(path)?;
    let data = raw
        .into_iter()
        .map(|v| match v {
            0 => Ok(0),
            255 => Ok(1),
            other => Err(Error::format(path, format!("mask value {other} is neither 0 nor 255"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    BinaryMask::new(h, w, data)
}

fn read_scribble(path: &Path) -> Result<ScribbleMask> {
    let (h, w, raw) = read_gray(path)?;
    let labels = raw
        .into_iter()
        .map(|v| match v {
            DISK_BACKGROUND => Ok(BACKGROUND),
            DISK_FOREGROUND => Ok(FOREGROUND),
            DISK_UNLABELED => Ok(UNLABELED),
            other => Err(Error::format(path, format!("scribble value {other} not in {{0, 128, 255}}"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    ScribbleMask::new(h, w, labels)
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}
