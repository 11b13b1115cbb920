//! Geometric pretext transforms and the patch-swap corruption used for
//! context restoration.
//!
//! A [`TransformClass`] is one of 4 rotations × 5 translations = 20 classes,
//! indexed as `5 * rotation_idx + translation_idx`. Rotation is a
//! counter-clockwise quarter-turn on the pixel grid and is applied before
//! translation. Translations move the content by `side / 8` pixels and fill
//! the vacated band with zeros; `+x` is rightwards, `+y` downwards.

use std::fmt;

use rand::Rng;

use crate::datamodel::SliceImage;
use crate::error::{Error, Result};

pub const NUM_ROTATIONS: usize = 4;
pub const NUM_TRANSLATIONS: usize = 5;
/// Number of transform classes, i.e. the width of the geometric head.
pub const NUM_CLASSES: usize = NUM_ROTATIONS * NUM_TRANSLATIONS;

/// Resampling budget for non-overlapping patch centres.
pub const PATCH_SWAP_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; NUM_ROTATIONS] =
        [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn quarter_turns(self) -> usize {
        self as usize
    }

    pub fn degrees(self) -> u32 {
        90 * self as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Translation {
    None,
    PosX,
    NegX,
    PosY,
    NegY,
}

impl Translation {
    pub const ALL: [Translation; NUM_TRANSLATIONS] = [
        Translation::None,
        Translation::PosX,
        Translation::NegX,
        Translation::PosY,
        Translation::NegY,
    ];

    /// Unit (row, col) direction.
    pub fn direction(self) -> (isize, isize) {
        match self {
            Translation::None => (0, 0),
            Translation::PosX => (0, 1),
            Translation::NegX => (0, -1),
            Translation::PosY => (1, 0),
            Translation::NegY => (-1, 0),
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Translation::None => Translation::None,
            Translation::PosX => Translation::NegX,
            Translation::NegX => Translation::PosX,
            Translation::PosY => Translation::NegY,
            Translation::NegY => Translation::PosY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransformClass {
    pub rotation: Rotation,
    pub translation: Translation,
}

impl TransformClass {
    pub const IDENTITY: TransformClass = TransformClass {
        rotation: Rotation::R0,
        translation: Translation::None,
    };

    pub fn index(self) -> usize {
        NUM_TRANSLATIONS * self.rotation as usize + self.translation as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= NUM_CLASSES {
            return Err(Error::InvalidClass {
                index,
                classes: NUM_CLASSES,
            });
        }
        Ok(Self {
            rotation: Rotation::ALL[index / NUM_TRANSLATIONS],
            translation: Translation::ALL[index % NUM_TRANSLATIONS],
        })
    }
}

impl fmt::Display for TransformClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rot{}/{:?}", self.rotation.degrees(), self.translation)
    }
}

/// All classes in index order; element 0 is the identity.
pub fn enumerate_classes() -> Vec<TransformClass> {
    Rotation::ALL
        .iter()
        .flat_map(|&rotation| {
            Translation::ALL.iter().map(move |&translation| TransformClass {
                rotation,
                translation,
            })
        })
        .collect()
}

/// Rotates a square row-major grid by `quarter_turns` × 90° counter-clockwise.
pub fn rotate_grid<T: Copy>(grid: &[T], side: usize, quarter_turns: usize) -> Vec<T> {
    assert_eq!(grid.len(), side * side, "grid is not side x side");
    let n = side;
    let mut out = Vec::with_capacity(grid.len());
    for r in 0..n {
        for c in 0..n {
            let v = match quarter_turns % 4 {
                0 => grid[r * n + c],
                1 => grid[c * n + (n - 1 - r)],
                2 => grid[(n - 1 - r) * n + (n - 1 - c)],
                _ => grid[(n - 1 - c) * n + r],
            };
            out.push(v);
        }
    }
    out
}

/// Shifts a square grid by `(dr, dc)` pixels, filling vacated cells with `fill`.
pub fn shift_grid<T: Copy>(grid: &[T], side: usize, dr: isize, dc: isize, fill: T) -> Vec<T> {
    assert_eq!(grid.len(), side * side, "grid is not side x side");
    let n = side as isize;
    let mut out = vec![fill; grid.len()];
    for r in 0..n {
        let sr = r - dr;
        if !(0..n).contains(&sr) {
            continue;
        }
        for c in 0..n {
            let sc = c - dc;
            if (0..n).contains(&sc) {
                out[(r * n + c) as usize] = grid[(sr * n + sc) as usize];
            }
        }
    }
    out
}

/// Applies rotation then translation to a raw grid; the shift is `side / 8`.
pub fn transform_grid(grid: &[f64], side: usize, t: TransformClass) -> Vec<f64> {
    let rotated = rotate_grid(grid, side, t.rotation.quarter_turns());
    let (ur, uc) = t.translation.direction();
    if (ur, uc) == (0, 0) {
        return rotated;
    }
    let step = (side / 8) as isize;
    shift_grid(&rotated, side, ur * step, uc * step, 0.0)
}

pub fn apply_transform(x: &SliceImage, t: TransformClass) -> SliceImage {
    SliceImage::from_raw(x.side(), transform_grid(x.pixels(), x.side(), t))
}

/// Uniform draw over the 20 classes.
pub fn sample_random_class<R: Rng + ?Sized>(rng: &mut R) -> TransformClass {
    TransformClass::from_index(rng.random_range(0..NUM_CLASSES)).expect("index in range")
}

/// Where a patch swap happened. Centres are the sampled foreground points;
/// the patches themselves are clamped to lie inside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSwapSpec {
    pub point_a: (usize, usize),
    pub point_b: (usize, usize),
    pub patch_side: usize,
    pub image_side: usize,
}

impl PatchSwapSpec {
    fn origin(&self, (r, c): (usize, usize)) -> (usize, usize) {
        let half = self.patch_side / 2;
        let max = self.image_side - self.patch_side;
        (r.saturating_sub(half).min(max), c.saturating_sub(half).min(max))
    }

    /// Top-left corners of the two clamped patches.
    pub fn origins(&self) -> ((usize, usize), (usize, usize)) {
        (self.origin(self.point_a), self.origin(self.point_b))
    }

    pub fn overlaps(&self) -> bool {
        let ((ra, ca), (rb, cb)) = self.origins();
        ra.abs_diff(rb) < self.patch_side && ca.abs_diff(cb) < self.patch_side
    }
}

/// Exchanges the two patches of `spec`. Applying it twice restores `x`.
pub fn apply_patch_swap(x: &SliceImage, spec: &PatchSwapSpec) -> SliceImage {
    assert_eq!(x.side(), spec.image_side, "spec built for another image size");
    assert!(!spec.overlaps(), "patches overlap");
    let n = x.side();
    let ((ra, ca), (rb, cb)) = spec.origins();
    let mut px = x.pixels().to_vec();
    for dr in 0..spec.patch_side {
        for dc in 0..spec.patch_side {
            px.swap((ra + dr) * n + ca + dc, (rb + dr) * n + cb + dc);
        }
    }
    SliceImage::from_raw(n, px)
}

/// Samples two foreground centres whose `side/8` patches do not overlap and
/// swaps their contents.
pub fn patch_swap<R: Rng + ?Sized>(
    x: &SliceImage,
    rng: &mut R,
) -> Result<(SliceImage, PatchSwapSpec)> {
    let n = x.side();
    let patch_side = n / 8;
    let support: Vec<usize> = x
        .pixels()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p != 0.0)
        .map(|(i, _)| i)
        .collect();
    if support.len() < 2 * patch_side * patch_side {
        return Err(Error::InsufficientForeground { attempts: 0 });
    }
    for _ in 0..PATCH_SWAP_ATTEMPTS {
        let a = support[rng.random_range(0..support.len())];
        let b = support[rng.random_range(0..support.len())];
        let spec = PatchSwapSpec {
            point_a: (a / n, a % n),
            point_b: (b / n, b % n),
            patch_side,
            image_side: n,
        };
        if !spec.overlaps() {
            return Ok((apply_patch_swap(x, &spec), spec));
        }
    }
    Err(Error::InsufficientForeground {
        attempts: PATCH_SWAP_ATTEMPTS,
    })
}
