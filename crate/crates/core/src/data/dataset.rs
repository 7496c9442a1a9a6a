use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use crate::engine::Tensor;
use crate::error::{contract, Error, Result};

/// Subdirectory of a dataset root holding the images.
pub const IMAGE_DIR: &str = "images";
/// Subdirectory of a dataset root holding the masks.
pub const MASK_DIR: &str = "masks";

/// Mask stems may carry this suffix after the image stem.
const MASK_SUFFIX: &str = "_segmentation";

/// An `H×W×3` image in [0, 1] with its `H×W×1` binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub mask: Tensor,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor, mask: Tensor) -> Result<Self> {
        let (is, ms) = (image.shape(), mask.shape());
        contract!(
            is.len() == 3 && is[2] == 3,
            "sample image must be H×W×3, got {is:?}"
        );
        contract!(
            ms.len() == 3 && ms[2] == 1 && ms[..2] == is[..2],
            "sample mask must be {}×{}×1, got {ms:?}",
            is[0],
            is[1]
        );
        contract!(
            mask.data().iter().all(|&v| v == 0.0 || v == 1.0),
            "sample mask is not binary"
        );
        Ok(Self {
            id: id.into(),
            image,
            mask,
        })
    }
}

/// Batches the images and masks of `samples` into `N×H×W×3` and `N×H×W×1`.
pub fn stack_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<(Tensor, Tensor)> {
    let (images, masks): (Vec<&Tensor>, Vec<&Tensor>) = samples.into_iter().map(|s| (&s.image, &s.mask)).unzip();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

/// Nearest-neighbour resampling of an `H×W×C` tensor: destination row `i`
/// reads source row `floor((i + 0.5)·H_src/H_dst)`, likewise for columns.
pub fn resize(img: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    if height == 0 || width == 0 {
        return Err(Error::Param(format!("resize target {height}×{width} must be positive")));
    }
    let s = img.shape();
    contract!(s.len() == 3, "resize expects H×W×C, got {s:?}");
    let (hs, ws, c) = (s[0], s[1], s[2]);
    if (hs, ws) == (height, width) {
        return Ok(img.clone());
    }
    let src = |i: usize, src_len: usize, dst_len: usize| (2 * i + 1) * src_len / (2 * dst_len);
    let cols: Vec<usize> = (0..width).map(|j| src(j, ws, width)).collect();
    let data = img.data();
    let mut out = Vec::with_capacity(height * width * c);
    for i in 0..height {
        let row = src(i, hs, height);
        for &col in &cols {
            let at = (row * ws + col) * c;
            out.extend_from_slice(&data[at..at + c]);
        }
    }
    Tensor::new(&[height, width, c], out)
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Decodes an image as RGB scaled to [0, 1].
pub fn load_image(path: &Path) -> Result<Tensor> {
    let rgb = decode(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Tensor::new(&[h as usize, w as usize, 3], data)
}

/// Decodes a mask as grayscale and binarizes it: values of 128 and above
/// become 1.
pub fn load_mask(path: &Path) -> Result<Tensor> {
    let gray = decode(path)?.to_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| (v >= 128) as u8 as f64).collect();
    Tensor::new(&[h as usize, w as usize, 1], data)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an `H×W×1` tensor in [0, 1] as an 8-bit grayscale PNG.
pub fn save_gray_png(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    contract!(s.len() == 3 && s[2] == 1, "grayscale output must be H×W×1, got {s:?}");
    let bytes = t.data().iter().map(|&v| to_byte(v)).collect();
    let img = GrayImage::from_raw(s[1] as u32, s[0] as u32, bytes).expect("buffer size matches");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes an `H×W×3` tensor in [0, 1] as an 8-bit RGB PNG.
pub fn save_rgb_png(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    contract!(s.len() == 3 && s[2] == 3, "colour output must be H×W×3, got {s:?}");
    let bytes = t.data().iter().map(|&v| to_byte(v)).collect();
    let img = RgbImage::from_raw(s[1] as u32, s[0] as u32, bytes).expect("buffer size matches");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

/// Files in `dir` with one of `extensions`, keyed by stem.
fn files_by_stem(dir: &Path, extensions: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !extension(&path).is_some_and(|e| extensions.contains(&e.as_str())) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
            return Err(Error::Data(format!(
                "{} and {} share the stem `{stem}`",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Loads every image in `image_dir` (PNG or JPEG) with its PNG mask from
/// `mask_dir`, matched by file stem (a mask stem may add `_segmentation`),
/// and resizes both to `size × size`. Samples come back sorted by id.
pub fn load_dataset(image_dir: &Path, mask_dir: &Path, size: usize) -> Result<Vec<Sample>> {
    let images = files_by_stem(image_dir, &["png", "jpg", "jpeg"])?;
    let mut masks = BTreeMap::new();
    for (stem, path) in files_by_stem(mask_dir, &["png"])? {
        let id = stem.strip_suffix(MASK_SUFFIX).unwrap_or(&stem).to_string();
        if let Some(prev) = masks.insert(id.clone(), path.clone()) {
            return Err(Error::Data(format!(
                "{} and {} are both masks for `{id}`",
                prev.display(),
                path.display()
            )));
        }
    }
    let mut orphans: Vec<String> = images
        .iter()
        .filter(|(id, _)| !masks.contains_key(*id))
        .map(|(_, p)| p.display().to_string())
        .collect();
    orphans.extend(
        masks
            .iter()
            .filter(|(id, _)| !images.contains_key(*id))
            .map(|(_, p)| p.display().to_string()),
    );
    if !orphans.is_empty() {
        return Err(Error::Data(format!("unpaired files: {}", orphans.join(", "))));
    }
    let mut samples = Vec::with_capacity(images.len());
    for (id, image_path) in &images {
        let image = resize(&load_image(image_path)?, size, size)?;
        let mask = resize(&load_mask(&masks[id])?, size, size)?;
        samples.push(Sample::new(id.clone(), image, mask)?);
    }
    Ok(samples)
}
