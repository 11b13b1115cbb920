use geoscore::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use geoscore::network::{init_params, NetworkConfig};
use geoscore::synthdata::{generate_dataset, PhantomConfig};
use geoscore::training::{pretrain, Stage, TrainConfig, TrainLog, TrainState};
use geoscore::{SliceImage, SplitSpec};

use super::transforms::Check;

pub const SIDE: usize = 32;
pub const SEED: u64 = 17;

pub fn data() -> Vec<SliceImage> {
    let cfg = PhantomConfig {
        side: SIDE,
        splits: SplitSpec {
            train: 24,
            validation: 1,
            test_normal: 1,
            test_abnormal: 1,
        },
        seed: 3,
        ..Default::default()
    };
    generate_dataset(&cfg).unwrap().train
}

pub fn net() -> NetworkConfig {
    NetworkConfig {
        input_side: SIDE,
        filters: vec![4, 4, 8, 8],
        latent_dim: 8,
        num_classes: 20,
    }
}

pub fn config(stage: Stage, steps: u64) -> TrainConfig {
    TrainConfig {
        stage,
        batch_size: 4,
        steps,
        input_side: SIDE,
        seed: SEED,
        ..Default::default()
    }
}

pub fn fresh() -> TrainState {
    TrainState::new(init_params(SEED, &net()).unwrap())
}

pub fn bits(log: &TrainLog) -> Vec<[u64; 5]> {
    log.records
        .iter()
        .map(|r| {
            let l = &r.loss;
            [l.l_cr, l.l_geo, l.l_rec, l.l_kl, l.l_total].map(f64::to_bits)
        })
        .collect()
}

pub fn param_bits(st: &TrainState) -> Vec<u64> {
    st.params.values().iter().map(|v| v.to_bits()).collect()
}

/// Saves to disk and reloads, as a resumed CLI run would.
pub fn through_disk(st: &TrainState, stage: Stage, dir: &std::path::Path) -> TrainState {
    let path = dir.join(format!("{stage}_{}.ckpt", st.step));
    let ck = Checkpoint {
        params: st.params.clone(),
        optimizer: st.optimizer.clone(),
        stage: Some(stage),
        seed: SEED,
        step: st.step,
    };
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path, Some(&net())).unwrap();
    TrainState {
        params: back.params,
        optimizer: back.optimizer,
        step: back.step,
    }
}

/// Two 200-step pretraining runs from the same seed.
pub fn pretrain_reruns_are_identical() -> Check {
    let data = data();
    let cfg = config(Stage::Pretrain, 200);
    let (a, log_a) = pretrain(fresh(), &data, &cfg).unwrap();
    let (b, log_b) = pretrain(fresh(), &data, &cfg).unwrap();
    if log_a.records.len() != 200 {
        return Err(format!("{} log records", log_a.records.len()));
    }
    if bits(&log_a) != bits(&log_b) {
        return Err("loss sequences differ".into());
    }
    if param_bits(&a) != param_bits(&b) {
        return Err("parameters differ".into());
    }
    Ok(())
}

/// 80 steps, checkpoint through disk, resume to 200, against 200 straight.
pub fn pretrain_resume_is_bitwise() -> Check {
    let data = data();
    let dir = tempfile::tempdir().unwrap();
    let (straight, log_straight) = pretrain(fresh(), &data, &config(Stage::Pretrain, 200)).unwrap();
    let (half, mut log) = pretrain(fresh(), &data, &config(Stage::Pretrain, 80)).unwrap();
    let resumed = through_disk(&half, Stage::Pretrain, dir.path());
    if resumed.step != 80 {
        return Err(format!("resumed at step {}", resumed.step));
    }
    let (done, rest) = pretrain(resumed, &data, &config(Stage::Pretrain, 200)).unwrap();
    log.extend(rest);
    if done.step != 200 || param_bits(&done) != param_bits(&straight) {
        return Err("resumed parameters differ from straight-through".into());
    }
    if done.optimizer != straight.optimizer {
        return Err("resumed optimizer state differs".into());
    }
    if bits(&log) != bits(&log_straight) {
        return Err("resumed loss sequence differs".into());
    }
    Ok(())
}
