//! Images, masks, manifests and split bookkeeping shared by every stage of
//! the pipeline.
//!
//! Slices are square, single-channel and normalized to `[0, 1]` by linear
//! rescaling over the stored bit depth (8 or 16 bit). The side must be a
//! multiple of 8 so the 1/8-size patch and shift rules land on whole pixels.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

/// Default slice side in pixels.
pub const DEFAULT_SIDE: usize = 128;

/// A square grayscale slice with intensities in `[0, 1]`, row-major.
#[derive(Clone, PartialEq)]
pub struct SliceImage {
    side: usize,
    pixels: Vec<f64>,
}

impl fmt::Debug for SliceImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SliceImage")
            .field("side", &self.side)
            .finish_non_exhaustive()
    }
}

impl SliceImage {
    /// Validates shape, the multiple-of-8 rule and the intensity range.
    pub fn new(side: usize, pixels: Vec<f64>) -> Result<Self> {
        check_side(side, side)?;
        if pixels.len() != side * side {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels", side * side),
                actual: format!("{} pixels", pixels.len()),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::PixelOutOfRange { index, value });
        }
        Ok(Self { side, pixels })
    }

    pub fn zeros(side: usize) -> Result<Self> {
        Self::new(side, vec![0.0; side * side])
    }

    /// Caller guarantees the invariants (used by pixel permutations and
    /// shifts of an already valid image).
    pub(crate) fn from_raw(side: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), side * side);
        Self { side, pixels }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn height(&self) -> usize {
        self.side
    }

    pub fn width(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side + col]
    }

    pub fn nonzero_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0.0).count()
    }
}

/// Binary anomaly mask paired with a [`SliceImage`]; `true` marks an
/// anomalous pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct AnomalyMask {
    side: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for AnomalyMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnomalyMask")
            .field("side", &self.side)
            .field("popcount", &self.popcount())
            .finish()
    }
}

impl AnomalyMask {
    pub fn new(side: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != side * side {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bits", side * side),
                actual: format!("{} bits", bits.len()),
            });
        }
        Ok(Self { side, bits })
    }

    pub fn empty(side: usize) -> Self {
        Self {
            side,
            bits: vec![false; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    /// 0 for normal, 1 for abnormal.
    pub fn as_binary(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Label::Normal),
            "abnormal" => Ok(Label::Abnormal),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path as written in the manifest (relative paths resolve against the
    /// manifest's directory).
    pub image_path: String,
    pub label: Label,
    pub mask_path: Option<String>,
    pub split: Split,
    pub volume_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Checks the split invariants: train/validation are normal-only,
    /// abnormal test rows carry a mask, and no path appears twice.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for e in &self.entries {
            if e.label == Label::Abnormal && e.split != Split::Test {
                return Err(Error::NormalsOnlyViolation {
                    path: e.image_path.clone(),
                    split: e.split.to_string(),
                });
            }
            if e.label == Label::Abnormal && e.mask_path.is_none() {
                return Err(Error::MissingMask {
                    path: e.image_path.clone(),
                });
            }
            if seen.insert(e.image_path.as_str(), e.split).is_some() {
                return Err(Error::DuplicatePath {
                    path: e.image_path.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Entries of one split, in manifest order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Serializes to the tab-separated manifest format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# image_path\tlabel\tmask_path\tsplit\tvolume_id\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.image_path,
                e.label,
                e.mask_path.as_deref().unwrap_or("-"),
                e.split,
                e.volume_id
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Parses manifest text without touching the filesystem.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::MalformedManifest {
                    line,
                    reason: format!("expected 5 tab-separated fields, found {}", fields.len()),
                });
            }
            let bad = |reason: String| Error::MalformedManifest { line, reason };
            if fields[0].is_empty() {
                return Err(bad("empty image path".into()));
            }
            let label = fields[1].parse::<Label>().map_err(bad)?;
            let mask_path = match fields[2] {
                "-" | "" => None,
                p => Some(p.to_string()),
            };
            let split = fields[3].parse::<Split>().map_err(bad)?;
            entries.push(ManifestEntry {
                image_path: fields[0].to_string(),
                label,
                mask_path,
                split,
                volume_id: fields[4].to_string(),
            });
        }
        let manifest = Self {
            root: root.into(),
            entries,
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Split sizes; the default keeps the clinical benchmark's
/// train : validation : test ratio of roughly 4 : 1 : 2 at desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: usize,
    pub validation: usize,
    pub test_normal: usize,
    pub test_abnormal: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 400,
            validation: 100,
            test_normal: 100,
            test_abnormal: 100,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("train", self.train),
            ("validation", self.validation),
            ("test_normal", self.test_normal),
            ("test_abnormal", self.test_abnormal),
        ] {
            if n == 0 {
                return Err(Error::InvalidConfig(format!("split count {name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test_normal + self.test_abnormal
    }
}

/// Reads, validates, and checks that every referenced file exists.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let manifest = DatasetManifest::parse(&text, root)?;
    for e in &manifest.entries {
        let img = manifest.resolve(&e.image_path);
        if !img.is_file() {
            return Err(Error::MissingFile(img));
        }
        if let Some(m) = &e.mask_path {
            let mp = manifest.resolve(m);
            if !mp.is_file() {
                return Err(Error::MissingFile(mp));
            }
        }
    }
    Ok(manifest)
}

fn check_side(height: usize, width: usize) -> Result<()> {
    if height != width {
        return Err(Error::NotSquare { height, width });
    }
    if height == 0 || height % 8 != 0 {
        return Err(Error::NotDivisibleBy8(height));
    }
    Ok(())
}

/// Decodes an 8- or 16-bit grayscale file into raw integer samples plus the
/// maximum representable value.
fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u16>, f64)> {
    let unsupported = |reason: String| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason,
    };
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| unsupported(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => Ok((
            h,
            w,
            buf.into_raw().into_iter().map(u16::from).collect(),
            f64::from(u8::MAX),
        )),
        DynamicImage::ImageLuma16(buf) => Ok((h, w, buf.into_raw(), f64::from(u16::MAX))),
        other => Err(unsupported(format!(
            "expected single-channel 8/16-bit, got {:?}",
            other.color()
        ))),
    }
}

/// Loads a slice, rescaling the stored integer range linearly onto `[0, 1]`.
pub fn load_slice(path: &Path) -> Result<SliceImage> {
    let (h, w, raw, max) = read_gray(path)?;
    check_side(h, w)?;
    let pixels = raw.into_iter().map(|v| f64::from(v) / max).collect();
    Ok(SliceImage::from_raw(h, pixels))
}

/// Writes a 16-bit grayscale image; the format follows the extension
/// (`.pgm` or `.png`).
pub fn save_slice(img: &SliceImage, path: &Path) -> Result<()> {
    let side = img.side() as u32;
    let raw: Vec<u16> = img
        .pixels()
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * f64::from(u16::MAX)).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(side, side, raw).expect("buffer size matches side²");
    buf.save(path).map_err(|e| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Any non-zero stored value marks an anomalous pixel.
pub fn load_mask(path: &Path) -> Result<AnomalyMask> {
    let (h, w, raw, _) = read_gray(path)?;
    if h != w {
        return Err(Error::NotSquare {
            height: h,
            width: w,
        });
    }
    AnomalyMask::new(h, raw.into_iter().map(|v| v != 0).collect())
}

/// Writes an 8-bit mask with anomalous pixels at 255.
pub fn save_mask(mask: &AnomalyMask, path: &Path) -> Result<()> {
    let side = mask.side() as u32;
    let raw: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(side, side, raw).expect("buffer size matches side²");
    buf.save(path).map_err(|e| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Loads every slice of one split in manifest order.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<SliceImage>> {
    manifest
        .split(split)
        .map(|e| load_slice(&manifest.resolve(&e.image_path)))
        .collect()
}
