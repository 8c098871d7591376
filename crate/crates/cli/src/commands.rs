use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use tvnet::config::Config;
use tvnet::data::{self, load_index, load_samples, Layout, Ledger, Split, SynthConfig};
use tvnet::metrics::{evaluate_directory, EvalOptions, MetricsReport, ThresholdMode};
use tvnet::training::{ablation_suite, predict_directory, train, Checkpoint, TrainConfig};
use tvnet::{Result, TvnetError};

use crate::overrides;

const COMMON_KEYS: [&str; 3] = ["config", "out_dir", "log_level"];

fn known_keys(command: &str) -> Vec<&'static str> {
    let mut keys = COMMON_KEYS.to_vec();
    match command {
        "train" => {
            keys.extend(TrainConfig::KEYS);
            keys.extend(Layout::KEYS);
            keys.extend(["data_root", "resume"]);
        }
        "ablate" => {
            keys.extend(TrainConfig::KEYS);
            keys.extend(Layout::KEYS);
            keys.push("data_root");
        }
        "eval" => keys.extend(["pred_dir", "gt_dir", "exclude_background", "adaptive"]),
        "predict" => keys.extend(["checkpoint", "image_dir"]),
        "synth" => {
            keys.extend(SynthConfig::KEYS);
            keys.push("seed");
        }
        "stats" => {
            keys.extend(Layout::KEYS);
            keys.extend(["data_root", "split"]);
        }
        _ => {}
    }
    keys
}

/// Command-line pairs over the optional `--config` file.
fn effective_config(args: &[String]) -> Result<Config> {
    let cli = overrides::parse(args)?;
    let mut cfg = match cli.get_str("config") {
        Some(path) => Config::load(Path::new(path))?,
        None => Config::new(),
    };
    cfg.merge(&cli);
    Ok(cfg)
}

fn required(cfg: &Config, key: &str) -> Result<PathBuf> {
    cfg.get_str(key)
        .map(PathBuf::from)
        .ok_or_else(|| TvnetError::Config(format!("missing required key {key}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| TvnetError::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| TvnetError::io(path, e))
}

/// Copies log output to stdout and a file.
struct Tee {
    file: Arc<Mutex<File>>,
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stdout().write_all(buf)?;
        self.file.lock().expect("log file lock").write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        std::io::stdout().flush()?;
        self.file.lock().expect("log file lock").flush()
    }
}

fn init_logging(level: &str, log_path: &Path) -> Result<()> {
    let level: log::LevelFilter = level.parse().map_err(|_| {
        TvnetError::Config(format!(
            "log_level must be off/error/warn/info/debug/trace, got {level:?}"
        ))
    })?;
    let file = File::create(log_path).map_err(|e| TvnetError::io(log_path, e))?;
    let tee = Tee {
        file: Arc::new(Mutex::new(file)),
    };
    // No timestamps: identical runs produce identical logs.
    env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| writeln!(buf, "[{}] {}", record.level(), record.args()))
        .target(env_logger::Target::Pipe(Box::new(tee)))
        .try_init()
        .map_err(|e| TvnetError::Config(format!("logger: {e}")))
}

/// Parses and checks the settings, sets up `out_dir` and logging, echoes
/// the effective config and dispatches to the subcommand.
pub fn run(command: &str, args: &[String]) -> Result<()> {
    let cfg = effective_config(args)?;
    cfg.check_keys(&known_keys(command))?;
    let out_dir = PathBuf::from(cfg.get_str("out_dir").unwrap_or(command));
    let log_level = cfg.get_or("log_level", "info".to_string())?;
    create_dir(&out_dir)?;
    init_logging(&log_level, &out_dir.join(format!("{command}.log")))?;
    log::info!("tvnet {command} -> {}", out_dir.display());
    match command {
        "train" => run_train(&cfg, &out_dir),
        "eval" => run_eval(&cfg, &out_dir),
        "predict" => run_predict(&cfg, &out_dir),
        "synth" => run_synth(&cfg, &out_dir),
        "stats" => run_stats(&cfg, &out_dir),
        "ablate" => run_ablate(&cfg, &out_dir),
        other => Err(TvnetError::Config(format!("unknown command {other:?}"))),
    }
}

/// Logs the resolved settings and saves them as a loadable config file.
fn echo_config(effective: &Config, out_dir: &Path) -> Result<()> {
    let text = effective.to_string();
    log::info!("effective config:");
    for line in text.lines() {
        log::info!("  {line}");
    }
    write_file(&out_dir.join("effective_config.txt"), &text)
}

fn with_paths(mut effective: Config, cfg: &Config, keys: &[&str]) -> Result<Config> {
    for key in keys {
        if let Some(v) = cfg.get_str(key) {
            effective.set(key, v)?;
        }
    }
    Ok(effective)
}

fn load_split(root: &Path, split: Split, layout: &Layout) -> Result<Vec<data::Sample>> {
    load_samples(&load_index(root, split, layout)?)
}

fn run_train(cfg: &Config, out_dir: &Path) -> Result<()> {
    let resume = cfg
        .get_str("resume")
        .map(|p| Checkpoint::load(Path::new(p)))
        .transpose()?;
    // A resumed run starts from the checkpoint's settings; explicit keys override.
    let base = match &resume {
        Some(ckpt) => ckpt.config.clone(),
        None => TrainConfig::default(),
    };
    let tc = base.apply(cfg)?;
    tc.validate()?;
    let layout = Layout::default().apply(cfg)?;
    let root = required(cfg, "data_root")?;
    let mut effective = tc.to_config();
    effective.merge(&layout.to_config());
    echo_config(
        &with_paths(
            effective,
            cfg,
            &["data_root", "resume", "out_dir", "log_level"],
        )?,
        out_dir,
    )?;

    let train_samples = load_split(&root, Split::Train, &layout)?;
    let eval_samples = if tc.eval_every > 0 {
        load_split(&root, Split::Test, &layout)?
    } else {
        Vec::new()
    };
    let outcome = train(&tc, &train_samples, &eval_samples, Some(out_dir), resume)?;
    if let Some(last) = outcome.log.last() {
        log::info!(
            "finished: epoch {}, iteration {}, loss {:.6}",
            outcome.checkpoint.epoch,
            last.iteration,
            last.total
        );
    }
    for (epoch, report) in &outcome.evals {
        log::info!(
            "eval after epoch {epoch}: mDice {:.4}, MAE {:.4}",
            report.m_dice,
            report.mae
        );
    }
    log::info!(
        "checkpoint: {}",
        out_dir.join("checkpoints").join("final.ckpt").display()
    );
    Ok(())
}

fn run_eval(cfg: &Config, out_dir: &Path) -> Result<()> {
    let pred_dir = required(cfg, "pred_dir")?;
    let gt_dir = required(cfg, "gt_dir")?;
    let opts = EvalOptions {
        mode: if cfg.get_or("adaptive", false)? {
            ThresholdMode::Adaptive
        } else {
            ThresholdMode::Sweep
        },
        exclude_background: cfg.get_or("exclude_background", true)?,
    };
    let mut effective = Config::new();
    effective.set(
        "adaptive",
        (opts.mode == ThresholdMode::Adaptive).to_string(),
    )?;
    effective.set("exclude_background", opts.exclude_background.to_string())?;
    echo_config(
        &with_paths(
            effective,
            cfg,
            &["pred_dir", "gt_dir", "out_dir", "log_level"],
        )?,
        out_dir,
    )?;

    let report = evaluate_directory(&pred_dir, &gt_dir, &opts)?;
    write_file(&out_dir.join("metrics.csv"), &report.to_csv())?;
    write_file(&out_dir.join("metrics.json"), &report.to_json())?;
    log::info!(
        "{} images scored, {} background images excluded",
        report.per_image.len(),
        report.excluded
    );
    for (name, value) in MetricsReport::COLUMNS.iter().zip(report.mean.values()) {
        log::info!("{name:>12} {value:.4}");
    }
    Ok(())
}

fn run_predict(cfg: &Config, out_dir: &Path) -> Result<()> {
    let ckpt_path = required(cfg, "checkpoint")?;
    let image_dir = required(cfg, "image_dir")?;
    echo_config(
        &with_paths(
            Config::new(),
            cfg,
            &["checkpoint", "image_dir", "out_dir", "log_level"],
        )?,
        out_dir,
    )?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    log::info!("{}", ckpt.summary());
    let input_size = ckpt.config.input_size;
    tvnet::tensor::set_parallel(!ckpt.config.deterministic);
    let (net, params) = ckpt.model()?;
    let written = predict_directory(&net, &params, input_size, &image_dir, out_dir)?;
    log::info!("wrote {} probability maps", written.len());
    Ok(())
}

fn run_synth(cfg: &Config, out_dir: &Path) -> Result<()> {
    let sc = SynthConfig::default().apply(cfg)?;
    sc.validate()?;
    let seed: u64 = cfg.get_or("seed", 0)?;
    let mut effective = sc.to_config();
    effective.set("seed", seed.to_string())?;
    echo_config(
        &with_paths(effective, cfg, &["out_dir", "log_level"])?,
        out_dir,
    )?;
    let ledger = data::synth_generate(&sc, seed, out_dir)?;
    let objects: usize = ledger.images.iter().map(|r| r.objects.len()).sum();
    log::info!(
        "generated {} images ({} train, {} test) with {objects} objects",
        ledger.images.len(),
        ledger.split(Split::Train).count(),
        ledger.split(Split::Test).count()
    );
    Ok(())
}

fn run_stats(cfg: &Config, out_dir: &Path) -> Result<()> {
    let root = required(cfg, "data_root")?;
    let split: Split = cfg.get_or("split", Split::Train)?;
    let layout = Layout::default().apply(cfg)?;
    let mut effective = layout.to_config();
    effective.set("split", split.to_string())?;
    echo_config(
        &with_paths(effective, cfg, &["data_root", "out_dir", "log_level"])?,
        out_dir,
    )?;

    let index = load_index(&root, split, &layout)?;
    let report = data::dataset_stats(&index)?;
    for line in report.summary().lines() {
        log::info!("{line}");
    }
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| TvnetError::Data(e.to_string()))?;
    write_file(&out_dir.join(format!("stats_{split}.json")), &json)?;

    // Generated datasets carry their own ground truth; cross-check it.
    let ledger_path = root.join("ledger.json");
    if ledger_path.is_file() {
        let text =
            std::fs::read_to_string(&ledger_path).map_err(|e| TvnetError::io(&ledger_path, e))?;
        let ledger: Ledger = serde_json::from_str(&text)
            .map_err(|e| TvnetError::Data(format!("{}: {e}", ledger_path.display())))?;
        let expected: BTreeMap<&str, usize> = ledger
            .split(split)
            .map(|r| (r.name.as_str(), r.objects.len()))
            .collect();
        let found: BTreeMap<&str, usize> = index
            .records
            .iter()
            .map(|r| r.name.as_str())
            .zip(report.objects_per_image.iter().copied())
            .collect();
        if expected == found {
            log::info!("object counts match {}", ledger_path.display());
        } else {
            log::warn!("object counts differ from {}", ledger_path.display());
        }
    }
    Ok(())
}

fn run_ablate(cfg: &Config, out_dir: &Path) -> Result<()> {
    let tc = TrainConfig::default().apply(cfg)?;
    tc.validate()?;
    let layout = Layout::default().apply(cfg)?;
    let root = required(cfg, "data_root")?;
    let mut effective = tc.to_config();
    effective.merge(&layout.to_config());
    echo_config(
        &with_paths(effective, cfg, &["data_root", "out_dir", "log_level"])?,
        out_dir,
    )?;

    let train_samples = load_split(&root, Split::Train, &layout)?;
    let test_samples = load_split(&root, Split::Test, &layout)?;
    let report = ablation_suite(&tc, &train_samples, &test_samples, Some(out_dir))?;
    for line in report.to_markdown().lines() {
        log::info!("{line}");
    }
    Ok(())
}
