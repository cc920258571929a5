//! Dataset ingestion, split management, pixel normalization and
//! class-balanced augmentation.
//!
//! Word images live on disk as grayscale PNGs referenced from a
//! tab-separated manifest: `sample_id  image_path  transcription  page_id`
//! (paths are relative to the manifest file). Transcriptions are kept raw
//! here; normalization happens where labels and relevance judgments are
//! formed.

pub mod augment;
pub mod toy;

use std::collections::{BTreeSet, HashSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};

pub use augment::{AugmentationPlan, AugmentedSet};

use crate::diffcore::Array;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("manifest row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("missing image file {0}")]
    MissingImage(PathBuf),
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("cross-validation folds need 20 pages, found {0}")]
    WrongPageCount(usize),
    #[error("class {0:?} has no source images")]
    EmptyClass(String),
    #[error("sample {0:?} has no in-alphabet characters")]
    EmptyTranscription(String),
    #[error("augmentation plan invalid: {0}")]
    InvalidPlan(String),
    #[error("failed to decode image {path}: {source}")]
    ImageRead {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major 8-bit grayscale image, 0 = black ink, 255 = white paper.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> GrayImage {
        assert!(height > 0 && width > 0, "image must be nonempty");
        assert_eq!(pixels.len(), height * width);
        GrayImage {
            height,
            width,
            pixels,
        }
    }

    pub fn filled(height: usize, width: usize, value: u8) -> GrayImage {
        GrayImage::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let buf =
            image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
                .expect("buffer matches dimensions");
        buf.save_with_format(path.as_ref(), image::ImageFormat::Png)
            .map_err(|source| DataError::ImageRead {
                path: path.as_ref().to_path_buf(),
                source,
            })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<GrayImage, DataError> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| DataError::ImageRead {
                path: path.to_path_buf(),
                source,
            })?
            .into_luma8();
        Ok(GrayImage::new(
            img.height() as usize,
            img.width() as usize,
            img.into_raw(),
        ))
    }
}

/// One annotated word image.
#[derive(Clone, Debug)]
pub struct WordSample {
    pub sample_id: String,
    pub image: GrayImage,
    pub transcription: String,
    pub page_id: String,
}

/// Load a manifest and every image it references, in file order.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<WordSample>, DataError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(DataError::MalformedRow {
                line: n,
                reason: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let (sample_id, image_path, transcription, page_id) =
            (fields[0], fields[1], fields[2], fields[3]);
        if sample_id.is_empty() {
            return Err(DataError::MalformedRow {
                line: n,
                reason: "empty sample id".into(),
            });
        }
        if !seen.insert(sample_id.to_string()) {
            return Err(DataError::DuplicateId(sample_id.to_string()));
        }
        let full = base.join(image_path);
        if !full.is_file() {
            return Err(DataError::MissingImage(full));
        }
        samples.push(WordSample {
            sample_id: sample_id.to_string(),
            image: GrayImage::load_png(&full)?,
            transcription: transcription.to_string(),
            page_id: page_id.to_string(),
        });
    }
    Ok(samples)
}

/// Train/test assignment per fold, by sample id.
#[derive(Clone, Debug)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SplitPlan {
    pub folds: Vec<Fold>,
}

/// Four-fold cross validation over 20 pages: pages sort into four batches
/// of five consecutive documents; fold `i` tests on batch `i`.
pub fn make_gw_folds(samples: &[WordSample]) -> Result<SplitPlan, DataError> {
    let pages: BTreeSet<&str> = samples.iter().map(|s| s.page_id.as_str()).collect();
    if pages.len() != 20 {
        return Err(DataError::WrongPageCount(pages.len()));
    }
    let ordered: Vec<&str> = pages.into_iter().collect();
    let mut folds = Vec::with_capacity(4);
    for batch in 0..4 {
        let test_pages: HashSet<&str> =
            ordered[batch * 5..(batch + 1) * 5].iter().copied().collect();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for s in samples {
            if test_pages.contains(s.page_id.as_str()) {
                test.push(s.sample_id.clone());
            } else {
                train.push(s.sample_id.clone());
            }
        }
        folds.push(Fold { train, test });
    }
    Ok(SplitPlan { folds })
}

/// Scale pixel values so ink is bright: `p -> 1 - p/255`, an
/// order-reversing affine bijection of `[0, 255]` onto `[0, 1]`.
pub fn normalize_pixels(image: &GrayImage) -> Array {
    let data: Vec<f64> = image
        .pixels()
        .iter()
        .map(|&p| 1.0 - f64::from(p) / 255.0)
        .collect();
    Array::from_vec(&[1, image.height(), image.width()], data).expect("image is nonempty")
}

/// Inverse of [`normalize_pixels`] for writing generated images to disk.
pub fn denormalize_pixels(image: &Array) -> GrayImage {
    let shape = image.shape();
    assert_eq!(shape.len(), 3, "expected a [1, H, W] image");
    assert_eq!(shape[0], 1, "expected a single channel");
    let pixels: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| ((1.0 - v.clamp(0.0, 1.0)) * 255.0).round() as u8)
        .collect();
    GrayImage::new(shape[1], shape[2], pixels)
}
