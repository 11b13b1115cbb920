//! Seeded synthetic benchmark of pseudo-brain slices.
//!
//! A normal phantom is an egg-shaped head: a bright skull ring around
//! mid-intensity tissue with smooth low-amplitude texture, a brighter inner
//! region and two dark ventricles offset towards the narrow-end-opposite
//! ("anterior") side, so every quarter-turn and every 1/8 shift of a slice
//! is distinguishable. Abnormal slices add exactly one lesion inside the
//! tissue: a bright blob, a dark blob, or an atrophy pattern (enlarged
//! ventricles plus a CSF rim under the skull). The mask marks exactly the
//! pixels that differ from the underlying normal phantom.
//!
//! Pixel values are quantized to 16 bits at generation time so in-memory
//! datasets are identical to what [`emit_dataset`] writes and reloads.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::datamodel::{
    save_mask, save_slice, AnomalyMask, DatasetManifest, Label, ManifestEntry, SliceImage, Split,
    SplitSpec,
};
use crate::error::{Error, Result};
use crate::evaluation::TestSlice;
use crate::seeding::derived_rng;

/// Minimum mean absolute intensity change inside a lesion mask.
pub const LESION_CONTRAST_FLOOR: f64 = 0.2;
const CSF_INTENSITY: f64 = 0.12;
const QUANT: f64 = 65535.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LesionKind {
    /// Hyperdense blob (bleed-like).
    Bright,
    /// Hypodense blob (ischemia-like).
    Dark,
    /// Enlarged ventricles and a CSF rim (atrophy-like).
    Atrophy,
}

impl LesionKind {
    pub const ALL: [LesionKind; 3] = [LesionKind::Bright, LesionKind::Dark, LesionKind::Atrophy];
}

impl fmt::Display for LesionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LesionKind::Bright => "bright",
            LesionKind::Dark => "dark",
            LesionKind::Atrophy => "atrophy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub side: usize,
    pub splits: SplitSpec,
    pub lesion_kinds: Vec<LesionKind>,
    /// Blob semi-axis range as a fraction of the image side.
    pub blob_radius: (f64, f64),
    /// Intensity offset range for bright/dark blobs.
    pub blob_delta: (f64, f64),
    /// Ventricle enlargement factor range for atrophy.
    pub atrophy_scale: (f64, f64),
    /// CSF rim width range (fraction of the head radius) for atrophy.
    pub atrophy_rim: (f64, f64),
    /// Slices per bookkeeping volume id.
    pub slices_per_volume: usize,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            side: crate::datamodel::DEFAULT_SIDE,
            splits: SplitSpec::default(),
            lesion_kinds: LesionKind::ALL.to_vec(),
            blob_radius: (0.04, 0.09),
            blob_delta: (0.3, 0.45),
            atrophy_scale: (1.5, 2.0),
            atrophy_rim: (0.05, 0.09),
            slices_per_volume: 16,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.side < 16 || self.side % 8 != 0 {
            return bad(format!("phantom side must be a multiple of 8 and >= 16, got {}", self.side));
        }
        self.splits.validate()?;
        if self.lesion_kinds.is_empty() {
            return bad("at least one lesion kind is required".into());
        }
        let ordered = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi;
        if !ordered(self.blob_radius) || !ordered(self.blob_delta) || !ordered(self.atrophy_scale) || !ordered(self.atrophy_rim) {
            return bad("lesion ranges must be positive with min <= max".into());
        }
        // Lesion diameter must stay below half the image side.
        if 2.0 * self.blob_radius.1 >= 0.5 {
            return bad(format!("blob radius {} too large", self.blob_radius.1));
        }
        if self.blob_delta.0 < LESION_CONTRAST_FLOOR || self.blob_delta.1 > 0.45 {
            return bad(format!(
                "blob delta must lie in [{LESION_CONTRAST_FLOOR}, 0.45], got {:?}",
                self.blob_delta
            ));
        }
        if self.slices_per_volume == 0 {
            return bad("slices_per_volume must be >= 1".into());
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * QUANT).round() / QUANT
}

/// Linear ramp from 0 to 1 across `width` centred on 0.
fn soft(x: f64, width: f64) -> f64 {
    (0.5 + x / width).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    /// Normalized radius; < 1 inside.
    fn rho(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (p, q) = (c * dx + s * dy, -s * dx + c * dy);
        ((p / self.a).powi(2) + (q / self.b).powi(2)).sqrt()
    }

    fn scaled(&self, f: f64) -> Self {
        Self {
            a: self.a * f,
            b: self.b * f,
            ..*self
        }
    }
}

/// Randomized anatomy of one phantom, in coordinates where the image spans
/// `[-0.5, 0.5]²` and `y` grows downwards.
#[derive(Debug, Clone)]
struct Anatomy {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    taper: f64,
    tilt: f64,
    skull: f64,
    skull_int: f64,
    tissue_int: f64,
    inner_int: f64,
    texture: Vec<(f64, f64, f64, f64)>,
    ventricles: [Ellipse; 2],
    vent_int: f64,
}

impl Anatomy {
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let scale = rng.random_range(0.95..1.05);
        let texture = (0..3)
            .map(|_| {
                (
                    rng.random_range(2.0..6.0) * 2.0 * PI,
                    rng.random_range(2.0..6.0) * 2.0 * PI,
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.008..0.015),
                )
            })
            .collect();
        let vy = rng.random_range(-0.12..-0.08) * scale;
        let dx = rng.random_range(0.045..0.06) * scale;
        let va = rng.random_range(0.028..0.036) * scale;
        let vb = rng.random_range(0.075..0.095) * scale;
        let spread = rng.random_range(0.25..0.4);
        Self {
            cx: rng.random_range(-0.012..0.012),
            cy: rng.random_range(-0.012..0.012),
            ax: 0.33 * scale,
            ay: 0.41 * scale,
            taper: rng.random_range(0.10..0.16),
            tilt: rng.random_range(-0.07..0.07),
            skull: rng.random_range(0.075..0.1),
            skull_int: rng.random_range(0.9..0.98),
            tissue_int: rng.random_range(0.46..0.54),
            inner_int: rng.random_range(0.05..0.08),
            texture,
            ventricles: [
                Ellipse {
                    cx: -dx,
                    cy: vy,
                    a: va,
                    b: vb,
                    angle: spread,
                },
                Ellipse {
                    cx: dx,
                    cy: vy,
                    a: va,
                    b: vb,
                    angle: -spread,
                },
            ],
            vent_int: CSF_INTENSITY,
        }
    }

    /// Head-frame coordinates and normalized head radius of a pixel.
    fn locate(&self, side: usize, r: usize, c: usize) -> (f64, f64, f64) {
        let u = (c as f64 + 0.5) / side as f64 - 0.5 - self.cx;
        let v = (r as f64 + 0.5) / side as f64 - 0.5 - self.cy;
        let (s, co) = self.tilt.sin_cos();
        let (p, q) = (co * u + s * v, -s * u + co * v);
        let ax = self.ax * (1.0 - self.taper * q / self.ay);
        (p, q, ((p / ax).powi(2) + (q / self.ay).powi(2)).sqrt())
    }
}

/// Rendered phantom plus per-pixel geometry needed to place lesions.
struct Rendered {
    side: usize,
    values: Vec<f64>,
    rho: Vec<f64>,
    coords: Vec<(f64, f64)>,
    /// Ventricle membership weight in [0, 1].
    vent: Vec<f64>,
    anatomy: Anatomy,
}

fn render(anatomy: Anatomy, side: usize) -> Rendered {
    let n = side * side;
    let mut values = vec![0.0; n];
    let mut rho = vec![0.0; n];
    let mut coords = vec![(0.0, 0.0); n];
    let mut vent = vec![0.0; n];
    let edge = 1.5 / (side as f64 * anatomy.ax);
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            let (p, q, rh) = anatomy.locate(side, r, c);
            rho[i] = rh;
            coords[i] = (p, q);
            let head = soft(1.0 - rh, edge);
            if head == 0.0 {
                continue;
            }
            let skull_w = soft(rh - (1.0 - anatomy.skull), edge);
            let mut tissue = anatomy.tissue_int + anatomy.inner_int * soft(0.55 - rh, 0.1);
            for &(fu, fv, ph, amp) in &anatomy.texture {
                tissue += amp * (fu * p + fv * q + ph).sin();
            }
            let vw = anatomy
                .ventricles
                .iter()
                .map(|e| soft(1.0 - e.rho(p, q), 0.15))
                .fold(0.0, f64::max);
            vent[i] = vw;
            tissue = tissue * (1.0 - vw) + anatomy.vent_int * vw;
            values[i] = quantize(head * (skull_w * anatomy.skull_int + (1.0 - skull_w) * tissue));
        }
    }
    Rendered {
        side,
        values,
        rho,
        coords,
        vent,
        anatomy,
    }
}

impl Rendered {
    /// Pure tissue: inside the skull's inner edge by `margin`, no ventricle.
    fn is_tissue(&self, i: usize, margin: f64) -> bool {
        self.rho[i] < 1.0 - self.anatomy.skull - margin && self.vent[i] == 0.0
    }
}

fn sample_normal_rendered<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Rendered {
    render(Anatomy::sample(rng), side)
}

pub fn generate_normal<R: Rng + ?Sized>(config: &PhantomConfig, rng: &mut R) -> SliceImage {
    let r = sample_normal_rendered(config.side, rng);
    SliceImage::from_raw(config.side, r.values)
}

/// An abnormal slice together with the normal phantom it was derived from.
#[derive(Debug, Clone)]
pub struct AbnormalSample {
    pub normal: SliceImage,
    pub abnormal: SliceImage,
    pub mask: AnomalyMask,
    pub kind: LesionKind,
}

fn blob<R: Rng + ?Sized>(base: &Rendered, config: &PhantomConfig, bright: bool, rng: &mut R) -> Option<Vec<f64>> {
    let side = base.side;
    let candidates: Vec<usize> = (0..side * side).filter(|&i| base.is_tissue(i, 0.02)).collect();
    if candidates.is_empty() {
        return None;
    }
    let center = candidates[rng.random_range(0..candidates.len())];
    let (cr, cc) = (center / side, center % side);
    let e = Ellipse {
        cx: (cc as f64 + 0.5) / side as f64,
        cy: (cr as f64 + 0.5) / side as f64,
        a: uniform(rng, config.blob_radius),
        b: uniform(rng, config.blob_radius),
        angle: rng.random_range(0.0..PI),
    };
    let delta = uniform(rng, config.blob_delta);
    let mut out = base.values.clone();
    let mut touched = 0;
    for r in 0..side {
        for c in 0..side {
            let (x, y) = ((c as f64 + 0.5) / side as f64, (r as f64 + 0.5) / side as f64);
            if e.rho(x, y) >= 1.0 {
                continue;
            }
            let i = r * side + c;
            if !base.is_tissue(i, 0.0) {
                return None;
            }
            let v = base.values[i];
            out[i] = quantize(if bright { v + delta } else { v - delta });
            touched += 1;
        }
    }
    (touched > 0).then_some(out)
}

fn atrophy<R: Rng + ?Sized>(base: &Rendered, config: &PhantomConfig, rng: &mut R) -> Vec<f64> {
    let f = uniform(rng, config.atrophy_scale);
    let rim = uniform(rng, config.atrophy_rim);
    let inner = 1.0 - base.anatomy.skull;
    let big: Vec<Ellipse> = base.anatomy.ventricles.iter().map(|e| e.scaled(f)).collect();
    let mut out = base.values.clone();
    for i in 0..out.len() {
        let rh = base.rho[i];
        if rh >= inner {
            continue;
        }
        let (p, q) = base.coords[i];
        let in_rim = rh >= inner - rim;
        let in_big = big.iter().any(|e| e.rho(p, q) < 1.0);
        if in_rim || (in_big && base.vent[i] < 1.0) {
            out[i] = quantize(CSF_INTENSITY);
        }
    }
    out
}

fn changed_mask(side: usize, before: &[f64], after: &[f64]) -> AnomalyMask {
    AnomalyMask::new(side, before.iter().zip(after).map(|(a, b)| a != b).collect())
        .expect("same size")
}

fn mean_abs_change(before: &[f64], after: &[f64], mask: &AnomalyMask) -> f64 {
    let n = mask.popcount().max(1) as f64;
    before
        .iter()
        .zip(after)
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .map(|((a, b), _)| (a - b).abs())
        .sum::<f64>()
        / n
}

/// Draws a phantom and injects one lesion of a random configured kind.
pub fn generate_pair<R: Rng + ?Sized>(config: &PhantomConfig, rng: &mut R) -> AbnormalSample {
    let side = config.side;
    loop {
        let base = sample_normal_rendered(side, rng);
        let kind = config.lesion_kinds[rng.random_range(0..config.lesion_kinds.len())];
        for _ in 0..50 {
            let altered = match kind {
                LesionKind::Bright => blob(&base, config, true, rng),
                LesionKind::Dark => blob(&base, config, false, rng),
                LesionKind::Atrophy => Some(atrophy(&base, config, rng)),
            };
            let Some(altered) = altered else { continue };
            let mask = changed_mask(side, &base.values, &altered);
            let pop = mask.popcount();
            if pop == 0 || pop * 4 >= side * side {
                continue;
            }
            if mean_abs_change(&base.values, &altered, &mask) < LESION_CONTRAST_FLOOR {
                continue;
            }
            return AbnormalSample {
                normal: SliceImage::from_raw(side, base.values.clone()),
                abnormal: SliceImage::from_raw(side, altered),
                mask,
                kind,
            };
        }
    }
}

pub fn generate_abnormal<R: Rng + ?Sized>(config: &PhantomConfig, rng: &mut R) -> (SliceImage, AnomalyMask) {
    let s = generate_pair(config, rng);
    (s.abnormal, s.mask)
}

/// In-memory benchmark with the same contents [`emit_dataset`] writes.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: Vec<SliceImage>,
    pub validation: Vec<SliceImage>,
    pub test: Vec<TestSlice>,
    /// Lesion kind of each abnormal test slice, in test order.
    pub test_kinds: Vec<Option<LesionKind>>,
}

const TAG_TRAIN: u64 = 1;
const TAG_VAL: u64 = 2;
const TAG_TEST_NORMAL: u64 = 3;
const TAG_TEST_ABNORMAL: u64 = 4;

fn slice_name(split: Split, i: usize, abnormal: bool) -> String {
    match (split, abnormal) {
        (Split::Test, true) => format!("test_abnormal_{i:04}"),
        (Split::Test, false) => format!("test_normal_{i:04}"),
        (s, _) => format!("{s}_{i:04}"),
    }
}

pub fn generate_dataset(config: &PhantomConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let s = &config.splits;
    let normals = |tag: u64, n: usize| -> Vec<SliceImage> {
        (0..n)
            .map(|i| generate_normal(config, &mut derived_rng(config.seed, &[tag, i as u64])))
            .collect()
    };
    let train = normals(TAG_TRAIN, s.train);
    let validation = normals(TAG_VAL, s.validation);
    let mut test = Vec::with_capacity(s.test_normal + s.test_abnormal);
    let mut test_kinds = Vec::with_capacity(test.capacity());
    for (i, image) in normals(TAG_TEST_NORMAL, s.test_normal).into_iter().enumerate() {
        test.push(TestSlice {
            id: slice_name(Split::Test, i, false),
            image,
            label: Label::Normal,
            mask: None,
        });
        test_kinds.push(None);
    }
    for i in 0..s.test_abnormal {
        let sample = generate_pair(config, &mut derived_rng(config.seed, &[TAG_TEST_ABNORMAL, i as u64]));
        test.push(TestSlice {
            id: slice_name(Split::Test, i, true),
            image: sample.abnormal,
            label: Label::Abnormal,
            mask: Some(sample.mask),
        });
        test_kinds.push(Some(sample.kind));
    }
    Ok(SyntheticDataset {
        train,
        validation,
        test,
        test_kinds,
    })
}

/// Writes `images/`, `masks/` and `manifest.tsv` under `output_dir`.
pub fn emit_dataset(config: &PhantomConfig, output_dir: &Path) -> Result<DatasetManifest> {
    let data = generate_dataset(config)?;
    let images = output_dir.join("images");
    let masks = output_dir.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let volume = |split: Split, i: usize, abnormal: bool| {
        let prefix = match (split, abnormal) {
            (Split::Test, true) => "test_abnormal".to_string(),
            (Split::Test, false) => "test_normal".to_string(),
            (s, _) => s.to_string(),
        };
        format!("{prefix}_v{:03}", i / config.slices_per_volume)
    };
    let mut entries = Vec::new();
    for (split, slices) in [(Split::Train, &data.train), (Split::Validation, &data.validation)] {
        for (i, img) in slices.iter().enumerate() {
            let rel = format!("images/{}.pgm", slice_name(split, i, false));
            save_slice(img, &output_dir.join(&rel))?;
            entries.push(ManifestEntry {
                image_path: rel,
                label: Label::Normal,
                mask_path: None,
                split,
                volume_id: volume(split, i, false),
            });
        }
    }
    let mut counters = [0usize; 2];
    for t in &data.test {
        let abnormal = t.label == Label::Abnormal;
        let i = &mut counters[abnormal as usize];
        let rel = format!("images/{}.pgm", t.id);
        save_slice(&t.image, &output_dir.join(&rel))?;
        let mask_path = match &t.mask {
            Some(m) => {
                let mrel = format!("masks/{}_mask.pgm", t.id);
                save_mask(m, &output_dir.join(&mrel))?;
                Some(mrel)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            image_path: rel,
            label: t.label,
            mask_path,
            split: Split::Test,
            volume_id: volume(Split::Test, *i, abnormal),
        });
        *i += 1;
    }
    let manifest = DatasetManifest {
        root: output_dir.to_path_buf(),
        entries,
    };
    manifest.validate()?;
    manifest.write(&output_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
