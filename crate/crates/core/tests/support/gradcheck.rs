use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geoscore::network::{init_params, NetworkConfig};
use geoscore::synthdata::{generate_dataset, PhantomConfig};
use geoscore::training::{batch_loss_and_gradient, Stage, TrainConfig};
use geoscore::{ModelParams, SliceImage, SplitSpec};

pub const H: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely: central differences
/// carry ~1e-11 rounding noise at this step size.
pub const FLOOR: f64 = 1e-6;

fn tiny_data() -> Vec<SliceImage> {
    let cfg = PhantomConfig {
        side: 16,
        splits: SplitSpec {
            train: 4,
            validation: 1,
            test_normal: 1,
            test_abnormal: 1,
        },
        seed: 5,
        ..Default::default()
    };
    generate_dataset(&cfg).unwrap().train
}

/// Initialized parameters with small random biases. Zero biases on the
/// exactly-zero phantom background put ReLU pre-activations on their kink,
/// where the loss has no derivative to compare against.
pub fn generic_point(seed: u64, net: &NetworkConfig) -> ModelParams {
    let mut p = init_params(seed, net).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let biases: Vec<_> = p
        .layout()
        .tensors()
        .iter()
        .filter(|t| t.name.ends_with(".bias"))
        .map(|t| t.range.clone())
        .collect();
    for r in biases {
        for v in &mut p.values_mut()[r] {
            *v = rng.random_range(-0.05..0.05);
        }
    }
    p
}

/// `|a − n| / max(|a|, |n|, FLOOR)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Worst relative error over every parameter of the tiny model, with the
/// flat index where it occurs.
pub fn check(stage: Stage, freeze_geo: bool, seed: u64) -> (f64, usize) {
    let net = NetworkConfig::tiny();
    let data = tiny_data();
    let config = TrainConfig {
        stage,
        batch_size: 2,
        input_side: 16,
        beta_kl: 0.1,
        epsilon: 0.7,
        freeze_geo,
        seed,
        ..Default::default()
    };
    let params = generic_point(seed, &net);
    let (_, analytic) = batch_loss_and_gradient(&params, &data, &config, 3).unwrap();
    let mut values = params.values().to_vec();
    let loss_at = |values: &[f64]| {
        let p = ModelParams::from_values(net.clone(), values.to_vec()).unwrap();
        batch_loss_and_gradient(&p, &data, &config, 3).unwrap().0.l_total
    };
    let mut worst = (0.0f64, 0usize);
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + H;
        let up = loss_at(&values);
        values[i] = orig - H;
        let down = loss_at(&values);
        values[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let e = rel_err(analytic[i], numeric);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    worst
}

/// `tensor[offset]` name of a flat parameter index.
pub fn describe(index: usize) -> String {
    let params = init_params(0, &NetworkConfig::tiny()).unwrap();
    params
        .layout()
        .tensors()
        .iter()
        .find(|t| t.range.contains(&index))
        .map(|t| format!("{}[{}]", t.name, index - t.range.start))
        .unwrap_or_default()
}
