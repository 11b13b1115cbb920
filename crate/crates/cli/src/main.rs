mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand};
use geoscore::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use geoscore::datamodel::{load_manifest, load_split, DatasetManifest};
use geoscore::evaluation::{evaluate, load_test_slices};
use geoscore::metrics::EvalReport;
use geoscore::network::init_params;
use geoscore::scoring::scores_to_tsv;
use geoscore::synthdata::emit_dataset;
use geoscore::training::{run_stage, threads_from_env, TrainState};
use geoscore::{Split, Stage};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "geoscore", version, about = "Self-supervised anomaly scoring for 2-D slices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic phantom benchmark.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output directory for images/, masks/ and manifest.tsv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Context-restoration pretraining.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        /// Continue a pretraining run from its checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Multi-task fine-tuning (or the reconstruction-only baseline with --freeze-geo).
    #[command(group(ArgGroup::new("start").required(true).args(["init", "from_scratch", "resume"])))]
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        /// Start from the parameters of this checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Start from freshly initialized parameters.
        #[arg(long)]
        from_scratch: bool,
        /// Continue a multi-task run from its checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Keep the geometric head fixed and train on untransformed slices.
        #[arg(long)]
        freeze_geo: bool,
    },
    /// Score validation and test splits and print the comparison table.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset directory or manifest file.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to evaluate, as PATH or NAME=PATH[@LAMBDA]; repeat to compare methods.
        #[arg(long = "ckpt", required = true)]
        ckpts: Vec<String>,
        /// Directory for report and score files.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long = "geo-score")]
        geo_score: Option<String>,
        #[arg(long = "dsc-quantile")]
        dsc_quantile: Option<f64>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Blend weight of the reconstruction channel.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    out: PathBuf,
    /// Total step budget.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long = "beta-kl")]
    beta_kl: Option<f64>,
}

/// Usage errors exit with 2, everything else with 1.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<geoscore::Error> for Failure {
    fn from(e: geoscore::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData { common, out } => gen_data(&common, &out),
        Command::Pretrain { common, train, resume } => pretrain(&common, &train, resume.as_deref()),
        Command::Train {
            common,
            train,
            init,
            from_scratch: _,
            resume,
            freeze_geo,
        } => multitask(&common, &train, init.as_deref(), resume.as_deref(), freeze_geo),
        Command::Eval {
            common,
            data,
            ckpts,
            out,
            alpha,
            geo_score,
            dsc_quantile,
        } => {
            let mut extra = Vec::new();
            if let Some(a) = alpha {
                extra.push(("alpha", a.to_string()));
            }
            if let Some(g) = geo_score {
                extra.push(("geo_score", g));
            }
            if let Some(q) = dsc_quantile {
                extra.push(("dsc_quantile", q.to_string()));
            }
            eval(&common, &extra, &data, &ckpts, out.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
fn run_config(common: &Common, flags: &[(&str, String)]) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path).map_err(Failure::Usage)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v).map_err(Failure::Usage)?;
    }
    let mut all: Vec<(&str, String)> = Vec::new();
    if let Some(s) = common.seed {
        all.push(("seed", s.to_string()));
    }
    if let Some(l) = common.lambda {
        all.push(("lambda", l.to_string()));
    }
    all.extend(flags.iter().cloned());
    for (k, v) in all {
        cfg.set(k, &v).map_err(Failure::Usage)?;
    }
    Ok(cfg)
}

fn train_flags(t: &TrainArgs) -> Vec<(&'static str, String)> {
    let mut v = Vec::new();
    if let Some(s) = t.steps {
        v.push(("steps", s.to_string()));
    }
    if let Some(e) = t.epsilon {
        v.push(("epsilon", e.to_string()));
    }
    if let Some(b) = t.beta_kl {
        v.push(("beta_kl", b.to_string()));
    }
    v
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.tsv")
    } else {
        data.to_path_buf()
    }
}

fn open_manifest(data: &Path) -> anyhow::Result<DatasetManifest> {
    let path = manifest_path(data);
    load_manifest(&path).with_context(|| format!("loading manifest {}", path.display()))
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("run_config.txt");
    fs::write(&path, cfg.echo()).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(common: &Common, out: &Path) -> CmdResult {
    let cfg = run_config(common, &[])?;
    cfg.validate()?;
    prepare_out(out, &cfg)?;
    let manifest = emit_dataset(&cfg.phantom(), out)?;
    println!(
        "wrote {} slices to {} (train {}, validation {}, test {})",
        manifest.entries.len(),
        out.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Validation),
        manifest.count(Split::Test),
    );
    Ok(())
}

/// Loads a checkpoint to resume `stage`, aligning the run config with the
/// stored model and seed.
fn resume_state(path: &Path, stage: Stage, cfg: &mut RunConfig, seed_flag: bool) -> anyhow::Result<TrainState> {
    let ck = load_checkpoint(path, None).with_context(|| format!("loading {}", path.display()))?;
    if ck.stage != Some(stage) {
        bail!(
            "{} holds a {} checkpoint, cannot resume {stage}",
            path.display(),
            ck.stage.map_or("parameter-only".to_string(), |s| s.to_string())
        );
    }
    if seed_flag && cfg.seed != ck.seed {
        bail!("--seed {} differs from the checkpoint seed {}", cfg.seed, ck.seed);
    }
    cfg.seed = ck.seed;
    adopt_network(cfg, &ck);
    Ok(TrainState {
        params: ck.params,
        optimizer: ck.optimizer,
        step: ck.step,
    })
}

fn adopt_network(cfg: &mut RunConfig, ck: &Checkpoint) {
    let net = ck.params.config();
    cfg.side = net.input_side;
    cfg.filters = net.filters.clone();
    cfg.latent_dim = net.latent_dim;
}

fn run_training(cfg: &RunConfig, stage: Stage, state: TrainState, data: &Path, out: &Path) -> CmdResult {
    cfg.validate()?;
    let manifest = open_manifest(data)?;
    let train = load_split(&manifest, Split::Train)?;
    prepare_out(out, cfg)?;
    let tc = cfg.train(stage, threads_from_env());
    log::info!(
        "{stage}: {} slices, steps {}..{}, batch {}",
        train.len(),
        state.step,
        tc.steps,
        tc.batch_size
    );
    let snapshot = |st: &TrainState| Checkpoint {
        params: st.params.clone(),
        optimizer: st.optimizer.clone(),
        stage: Some(stage),
        seed: cfg.seed,
        step: st.step,
    };
    let (state, log) = run_stage(state, &train, &tc, &mut |st| {
        let path = out.join(format!("checkpoint_{:06}.ckpt", st.step));
        save_checkpoint(&path, &snapshot(st))
    })?;
    save_checkpoint(&out.join("checkpoint.ckpt"), &snapshot(&state))?;
    log.write(&out.join("train_log.tsv"))?;
    if let Some(last) = log.records.last() {
        println!(
            "{stage} finished at step {}: total {:.6} (l_cr {:.6}, l_geo {:.6}, l_rec {:.6}, l_kl {:.6})",
            state.step, last.loss.l_total, last.loss.l_cr, last.loss.l_geo, last.loss.l_rec, last.loss.l_kl
        );
    } else {
        println!("{stage}: step budget already reached at step {}", state.step);
    }
    Ok(())
}

fn pretrain(common: &Common, t: &TrainArgs, resume: Option<&Path>) -> CmdResult {
    let mut cfg = run_config(common, &train_flags(t))?;
    let state = match resume {
        Some(path) => resume_state(path, Stage::Pretrain, &mut cfg, common.seed.is_some())?,
        None => {
            cfg.validate()?;
            TrainState::new(init_params(cfg.seed, &cfg.network())?)
        }
    };
    run_training(&cfg, Stage::Pretrain, state, &t.data, &t.out)
}

fn multitask(common: &Common, t: &TrainArgs, init: Option<&Path>, resume: Option<&Path>, freeze_geo: bool) -> CmdResult {
    let mut flags = train_flags(t);
    if freeze_geo {
        flags.push(("freeze_geo", "true".into()));
    }
    let mut cfg = run_config(common, &flags)?;
    let state = if let Some(path) = resume {
        resume_state(path, Stage::Multitask, &mut cfg, common.seed.is_some())?
    } else if let Some(path) = init {
        let ck = load_checkpoint(path, None).with_context(|| format!("loading {}", path.display()))?;
        adopt_network(&mut cfg, &ck);
        TrainState::new(ck.params)
    } else {
        cfg.validate()?;
        TrainState::new(init_params(cfg.seed, &cfg.network())?)
    };
    run_training(&cfg, Stage::Multitask, state, &t.data, &t.out)
}

/// `PATH` or `NAME=PATH[@LAMBDA]`.
fn parse_ckpt_arg(arg: &str, default_lambda: f64) -> Result<(String, PathBuf, f64), Failure> {
    let (name, rest) = match arg.split_once('=') {
        Some((n, r)) if !n.is_empty() => (Some(n.to_string()), r),
        _ => (None, arg),
    };
    let (path, lambda) = match rest.rsplit_once('@') {
        Some((p, l)) => {
            let l: f64 = l
                .parse()
                .map_err(|_| Failure::Usage(format!("invalid lambda {l:?} in --ckpt {arg:?}")))?;
            if !(0.0..=1.0).contains(&l) {
                return Err(Failure::Usage(format!("lambda {l} in --ckpt {arg:?} outside [0, 1]")));
            }
            (PathBuf::from(p), l)
        }
        None => (PathBuf::from(rest), default_lambda),
    };
    let name = name.unwrap_or_else(|| {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        match path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
            Some(dir) if stem == "checkpoint" => dir.to_string(),
            _ => stem.to_string(),
        }
    });
    Ok((name, path, lambda))
}

fn eval(common: &Common, extra: &[(&str, String)], data: &Path, ckpts: &[String], out: Option<&Path>) -> CmdResult {
    let cfg = run_config(common, extra)?;
    let methods = ckpts
        .iter()
        .map(|c| parse_ckpt_arg(c, cfg.lambda))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = std::collections::HashSet::new();
    if let Some((n, _, _)) = methods.iter().find(|(n, _, _)| !seen.insert(n.clone())) {
        return Err(Failure::Usage(format!("method name {n:?} given twice")));
    }
    cfg.validate()?;
    let models = methods
        .iter()
        .map(|(_, path, _)| {
            load_checkpoint(path, None)
                .with_context(|| format!("loading {}", path.display()))
                .map(|ck| ck.params)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let manifest = open_manifest(data)?;
    let validation = load_split(&manifest, Split::Validation)?;
    let test = load_test_slices(&manifest)?;
    if let Some(m) = models.iter().find(|m| m.config().input_side != validation.first().map_or(0, |v| v.side())) {
        return Err(anyhow!("model input side {} does not match the dataset", m.config().input_side).into());
    }
    if let Some(out) = out {
        prepare_out(out, &cfg)?;
    }
    let threads = threads_from_env();
    let mut report = EvalReport::default();
    for ((name, _, lambda), params) in methods.iter().zip(&models) {
        let settings = geoscore::evaluation::ScoringSettings {
            lambda: *lambda,
            ..cfg.scoring(threads)
        };
        let ev = evaluate(name, params, &validation, &test, &settings)?;
        log::info!(
            "{name}: lambda {lambda}, channel AUROC geo {:.4} rec {:.4}, DSC threshold {:.6}",
            ev.auroc_geo,
            ev.auroc_rec,
            ev.dsc_threshold
        );
        if let Some(out) = out {
            let path = out.join(format!("scores_{name}.tsv"));
            fs::write(&path, scores_to_tsv(&ev.records)).with_context(|| format!("writing {}", path.display()))?;
        }
        report.rows.push(ev.row);
    }
    print!("{report}");
    if let Some(out) = out {
        fs::write(out.join("report.md"), report.to_string()).context("writing report.md")?;
        fs::write(out.join("report.tsv"), report.to_tsv()).context("writing report.tsv")?;
    }
    Ok(())
}
