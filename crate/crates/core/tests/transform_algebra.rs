//! Group and involution properties of the geometric transforms and patch swap.

mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use geoscore::geoxform::{apply_transform, patch_swap, rotate_grid, sample_random_class, Rotation, Translation, NUM_CLASSES};
use geoscore::SliceImage;
use support::transforms::{self as tx, class, Check};

fn image_strategy() -> impl Strategy<Value = SliceImage> {
    (1usize..=4)
        .prop_flat_map(|k| {
            let side = 8 * k;
            proptest::collection::vec(0.0f64..=1.0, side * side).prop_map(move |px| (side, px))
        })
        .prop_map(|(side, px)| SliceImage::new(side, px).unwrap())
}

fn holds(c: Check) -> Result<(), TestCaseError> {
    c.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 100,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn four_quarter_turns_are_identity(x in image_strategy()) {
        holds(tx::four_quarter_turns_are_identity(&x))?;
    }

    #[test]
    fn larger_turns_compose_from_quarter_turns(x in image_strategy()) {
        holds(tx::larger_turns_compose_from_quarter_turns(&x))?;
    }

    #[test]
    fn untranslated_classes_permute_pixels(x in image_strategy()) {
        holds(tx::untranslated_classes_permute_pixels(&x))?;
    }

    #[test]
    fn translation_round_trip_restores_interior(x in image_strategy()) {
        holds(tx::translation_round_trip_restores_interior(&x))?;
    }

    #[test]
    fn rotation_is_applied_before_translation(x in image_strategy()) {
        holds(tx::rotation_is_applied_before_translation(&x))?;
    }

    #[test]
    fn patch_swap_is_an_involution(x in image_strategy(), seed in any::<u64>()) {
        holds(tx::patch_swap_is_an_involution(&x, seed))?;
    }

    #[test]
    fn identity_class_leaves_images_unchanged(x in image_strategy()) {
        holds(tx::identity_class_is_identity(&x))?;
    }

    #[test]
    fn all_classes_are_distinguishable_on_generic_images(x in image_strategy()) {
        holds(tx::all_classes_are_distinguishable(&x))?;
    }
}

#[test]
fn classes_enumerate_exhaustively() {
    tx::classes_enumerate_exhaustively().unwrap();
}

#[test]
fn quarter_turn_is_counter_clockwise() {
    // Slices must be multiples of 8 wide, so the 2x2 case runs on the raw grid.
    assert_eq!(rotate_grid(&[1, 2, 3, 4], 2, 1), vec![2, 4, 1, 3]);
}

#[test]
fn shift_right_zero_fills_the_left_column() {
    let x = SliceImage::new(8, vec![1.0; 64]).unwrap();
    let y = apply_transform(&x, class(Rotation::R0, Translation::PosX));
    for r in 0..8 {
        assert_eq!(y.get(r, 0), 0.0);
        for c in 1..8 {
            assert_eq!(y.get(r, c), 1.0);
        }
    }
}

#[test]
fn class_sampler_is_uniform_and_seeded() {
    let draws = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20_000).map(|_| sample_random_class(&mut rng).index()).collect::<Vec<_>>()
    };
    let a = draws(1);
    assert_eq!(a, draws(1));
    let mut counts = [0usize; NUM_CLASSES];
    for i in a {
        counts[i] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let f = *c as f64 / 20_000.0;
        assert!((0.035..=0.065).contains(&f), "class {i}: {f}");
    }
}

#[test]
fn empty_foreground_cannot_be_swapped() {
    let x = SliceImage::zeros(16).unwrap();
    let err = patch_swap(&x, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, geoscore::Error::InsufficientForeground { .. }), "{err}");
}
