//! Transform properties as plain checks, so both proptest and the seeded
//! acceptance sweep can drive them.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geoscore::geoxform::{
    apply_patch_swap, apply_transform, enumerate_classes, patch_swap, rotate_grid, shift_grid,
    transform_grid, Rotation, TransformClass, Translation, NUM_CLASSES,
};
use geoscore::SliceImage;

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn class(rotation: Rotation, translation: Translation) -> TransformClass {
    TransformClass {
        rotation,
        translation,
    }
}

pub fn rot(x: &SliceImage, r: Rotation) -> SliceImage {
    apply_transform(x, class(r, Translation::None))
}

fn sorted(px: &[f64]) -> Vec<f64> {
    let mut v = px.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Uniform pixels on a side of 8, 16, 24 or 32.
pub fn random_image(rng: &mut ChaCha8Rng) -> SliceImage {
    let side = 8 * rng.random_range(1..=4);
    let px = (0..side * side).map(|_| rng.random_range(0.0..=1.0)).collect();
    SliceImage::new(side, px).unwrap()
}

pub fn four_quarter_turns_are_identity(x: &SliceImage) -> Check {
    let mut y = x.clone();
    for _ in 0..4 {
        y = rot(&y, Rotation::R90);
    }
    ensure(&y == x, || "R90^4 != identity".into())
}

pub fn larger_turns_compose_from_quarter_turns(x: &SliceImage) -> Check {
    let r1 = rot(x, Rotation::R90);
    let r2 = rot(&r1, Rotation::R90);
    let r3 = rot(&r2, Rotation::R90);
    ensure(rot(x, Rotation::R180) == r2, || "R180 != R90^2".into())?;
    ensure(rot(x, Rotation::R270) == r3, || "R270 != R90^3".into())
}

pub fn untranslated_classes_permute_pixels(x: &SliceImage) -> Check {
    let want = sorted(x.pixels());
    for t in enumerate_classes().into_iter().filter(|t| t.translation == Translation::None) {
        ensure(sorted(apply_transform(x, t).pixels()) == want, || format!("class {t} is not a permutation"))?;
    }
    Ok(())
}

/// Shifting back restores every cell that the first shift did not push off
/// the grid; those come back as zeros.
pub fn translation_round_trip_restores_interior(x: &SliceImage) -> Check {
    let n = x.side();
    let s = n / 8;
    for t in enumerate_classes() {
        let moved = apply_transform(x, t);
        let back = transform_grid(moved.pixels(), n, class(Rotation::R0, t.translation.opposite()));
        let base = rot(x, t.rotation);
        let (ur, uc) = t.translation.direction();
        for r in 0..n {
            for c in 0..n {
                let v = back[r * n + c];
                let lost = (ur > 0 && r >= n - s) || (ur < 0 && r < s) || (uc > 0 && c >= n - s) || (uc < 0 && c < s);
                let want = if lost { 0.0 } else { base.get(r, c) };
                ensure(v == want, || format!("class {t} at ({r}, {c}): {v} != {want}"))?;
            }
        }
    }
    Ok(())
}

pub fn rotation_is_applied_before_translation(x: &SliceImage) -> Check {
    let n = x.side();
    let s = (n / 8) as isize;
    for t in enumerate_classes() {
        let (ur, uc) = t.translation.direction();
        let expect = shift_grid(&rotate_grid(x.pixels(), n, t.rotation.quarter_turns()), n, ur * s, uc * s, 0.0);
        ensure(apply_transform(x, t).pixels() == expect.as_slice(), || format!("class {t}"))?;
    }
    Ok(())
}

/// Needs some foreground; pixels are lifted to at least 0.01.
pub fn patch_swap_is_an_involution(x: &SliceImage, seed: u64) -> Check {
    let px: Vec<f64> = x.pixels().iter().map(|&v| v.max(0.01)).collect();
    let x = SliceImage::new(x.side(), px).unwrap();
    let (swapped, spec) = patch_swap(&x, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    ensure(!spec.overlaps(), || "patches overlap".into())?;
    ensure(spec.patch_side == x.side() / 8, || format!("patch side {}", spec.patch_side))?;
    ensure(apply_patch_swap(&swapped, &spec) == x, || "second swap does not restore".into())
}

/// On a generic image the 20 classes give 20 different outputs.
pub fn all_classes_are_distinguishable(x: &SliceImage) -> Check {
    let outs: HashSet<Vec<u64>> = enumerate_classes()
        .into_iter()
        .map(|t| apply_transform(x, t).pixels().iter().map(|v| v.to_bits()).collect())
        .collect();
    ensure(outs.len() == NUM_CLASSES, || format!("{} distinct outputs", outs.len()))
}

pub fn classes_enumerate_exhaustively() -> Check {
    let all = enumerate_classes();
    ensure(all.len() == NUM_CLASSES, || format!("{} classes", all.len()))?;
    ensure(all[0] == TransformClass::IDENTITY, || "class 0 is not the identity".into())?;
    for (i, t) in all.iter().enumerate() {
        ensure(t.index() == i, || format!("{t} has index {}", t.index()))?;
        ensure(TransformClass::from_index(i).ok() == Some(*t), || format!("from_index({i})"))?;
    }
    let distinct: HashSet<_> = all.iter().collect();
    ensure(distinct.len() == NUM_CLASSES, || "duplicate classes".into())?;
    ensure(TransformClass::from_index(NUM_CLASSES).is_err(), || "index 20 accepted".into())
}

pub fn identity_class_is_identity(x: &SliceImage) -> Check {
    ensure(&apply_transform(x, TransformClass::IDENTITY) == x, || "identity moved pixels".into())
}

/// Properties driven by one image each.
pub const IMAGE_PROPERTIES: [(&str, fn(&SliceImage) -> Check); 7] = [
    ("four quarter turns", four_quarter_turns_are_identity),
    ("turn composition", larger_turns_compose_from_quarter_turns),
    ("untranslated classes permute", untranslated_classes_permute_pixels),
    ("translation round trip", translation_round_trip_restores_interior),
    ("rotate before translate", rotation_is_applied_before_translation),
    ("classes distinguishable", all_classes_are_distinguishable),
    ("identity class", identity_class_is_identity),
];
