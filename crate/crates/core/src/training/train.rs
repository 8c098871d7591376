use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::predict::{predict_samples, prepare_samples};
use super::{clip_grad_norm, Checkpoint, Optimizer, TrainConfig};
use crate::autograd::Tape;
use crate::data::augment::{flip_horizontal, flip_vertical};
use crate::data::Sample;
use crate::error::{Result, TvnetError};
use crate::losses::{total_loss, LossWeights};
use crate::metrics::{evaluate_pairs, DirectoryReport, EvalOptions, MetricsReport};
use crate::model::{architecture_summary, ParamStore, TvNet};
use crate::tensor::{self, Tensor};

/// One optimisation step.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    /// 1-based iteration number.
    pub iteration: usize,
    /// 0-based epoch.
    pub epoch: usize,
    pub total: f64,
    pub edge: f64,
    pub levels: BTreeMap<u8, f64>,
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

impl LogRow {
    pub const HEADER: &'static str = "iteration,epoch,total,edge,p6,p5,p4,p3,lr,grad_norm";

    /// Values are written in shortest round-trip form.
    pub fn csv(&self) -> String {
        let level = |l: u8| {
            self.levels
                .get(&l)
                .map(|v| v.to_string())
                .unwrap_or_default()
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.epoch,
            self.total,
            self.edge,
            level(6),
            level(5),
            level(4),
            level(3),
            self.lr,
            self.grad_norm
        )
    }
}

/// Stream of the data-order RNG; parameter initialisation uses the
/// default stream of the same seed.
const DATA_STREAM: u64 = 1;

pub struct Trainer {
    config: TrainConfig,
    net: TvNet,
    params: ParamStore,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    epoch: usize,
    iteration: usize,
    weights: LossWeights,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let (net, params) = TvNet::new(&config.model_config(), config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(DATA_STREAM);
        Ok(Trainer {
            config: config.clone(),
            net,
            params,
            optimizer: Optimizer::new(config),
            rng,
            epoch: 0,
            iteration: 0,
            weights: LossWeights::default(),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let (net, params) = ckpt.model()?;
        Ok(Trainer {
            net,
            params,
            optimizer: ckpt.optimizer,
            rng: ckpt.rng,
            epoch: ckpt.epoch,
            iteration: ckpt.iteration,
            weights: LossWeights::default(),
            config: ckpt.config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Changes the run length of a resumed trainer.
    pub fn set_schedule(&mut self, epochs: usize, max_iters: usize, eval_every: usize) {
        self.config.epochs = epochs;
        self.config.max_iters = max_iters;
        self.config.eval_every = eval_every;
    }

    pub fn net(&self) -> &TvNet {
        &self.net
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            iteration: self.iteration,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            rng: self.rng.clone(),
        }
    }

    fn iteration_budget_spent(&self) -> bool {
        self.config.max_iters > 0 && self.iteration >= self.config.max_iters
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs || self.iteration_budget_spent()
    }

    /// One update on a batch of same-sized samples.
    pub fn step(&mut self, batch: &[Sample]) -> Result<LogRow> {
        let images = Tensor::stack(&batch.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
        let masks = Tensor::stack(&batch.iter().map(|s| s.mask.to_tensor()).collect::<Vec<_>>())?;
        let edges = Tensor::stack(&batch.iter().map(|s| s.edge.to_tensor()).collect::<Vec<_>>())?;
        let iteration = self.iteration + 1;

        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.leaf(images);
        let preds = self.net.forward(&mut tape, &bound, x)?;
        let (loss, breakdown) = total_loss(&mut tape, &preds, &masks, &edges, &self.weights)?;
        if !breakdown.total.is_finite() {
            return Err(TvnetError::Divergence { iteration });
        }
        let grads = tape.backward(loss)?;
        let ids: Vec<_> = self.params.ids().collect();
        let mut g: Vec<Tensor> = ids
            .iter()
            .map(|&id| {
                grads
                    .get(bound[id])
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.params.get(id).shape()))
            })
            .collect();
        let grad_norm = clip_grad_norm(&mut g, self.config.clip_norm);
        if !grad_norm.is_finite() {
            return Err(TvnetError::Divergence { iteration });
        }
        let lr = self.config.lr_at(self.epoch);
        let mut values: Vec<&mut Tensor> = self.params.iter_mut().map(|p| &mut p.value).collect();
        self.optimizer.update(&mut values, &g, lr)?;
        self.iteration = iteration;
        Ok(LogRow {
            iteration,
            epoch: self.epoch,
            total: breakdown.total,
            edge: breakdown.edge_loss,
            levels: breakdown.per_level,
            lr,
            grad_norm,
        })
    }

    /// One pass over `samples` (already at the input size) in a
    /// seed-determined order with random flips. Stops early when the
    /// iteration budget runs out; the epoch counts as complete only when
    /// every batch ran.
    pub fn run_epoch(
        &mut self,
        samples: &[Sample],
        on_row: &mut dyn FnMut(&LogRow) -> Result<()>,
    ) -> Result<()> {
        if samples.is_empty() {
            return Err(TvnetError::Data("no training samples".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut self.rng);
        for chunk in order.chunks(self.config.batch_size) {
            if self.iteration_budget_spent() {
                return Ok(());
            }
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    let mut s = samples[i].clone();
                    if self.rng.gen_bool(self.config.hflip_prob) {
                        s = flip_horizontal(&s);
                    }
                    if self.rng.gen_bool(self.config.vflip_prob) {
                        s = flip_vertical(&s);
                    }
                    s
                })
                .collect();
            let row = self.step(&batch)?;
            on_row(&row)?;
        }
        self.epoch += 1;
        Ok(())
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// `(completed epochs, mean metrics)` for each scheduled evaluation.
    pub evals: Vec<(usize, MetricsReport)>,
}

/// Scores the network on `samples` at their native sizes.
pub fn evaluate_model(
    net: &TvNet,
    params: &ParamStore,
    samples: &[Sample],
    input_size: usize,
    opts: &EvalOptions,
) -> Result<DirectoryReport> {
    let preds = predict_samples(net, params, samples, input_size)?;
    let pairs = samples
        .iter()
        .zip(preds)
        .map(|(s, p)| (s.name.clone(), p, s.mask.clone()))
        .collect();
    evaluate_pairs(pairs, opts)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| TvnetError::io(path, e))
}

fn open_log(path: &Path, header: &str, append: bool) -> Result<File> {
    let exists = path.is_file();
    let mut f = OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)
        .map_err(|e| TvnetError::io(path, e))?;
    if !(append && exists) {
        writeln!(f, "{header}").map_err(|e| TvnetError::io(path, e))?;
    }
    Ok(f)
}

/// Trains on `train_samples`, optionally evaluating on `eval_samples`
/// every `eval_every` epochs.
///
/// With `out_dir`, writes `config.txt`, `summary.txt`, `train_log.csv`,
/// `eval_log.csv`, `checkpoints/epoch_NNN.ckpt` after every epoch and
/// `checkpoints/final.ckpt`. Resuming continues the checkpoint's run
/// with the epoch and iteration limits of `config`; logs are appended.
pub fn train(
    config: &TrainConfig,
    train_samples: &[Sample],
    eval_samples: &[Sample],
    out_dir: Option<&Path>,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    config.validate()?;
    tensor::set_parallel(!config.deterministic);
    let resuming = resume.is_some();
    let mut trainer = match resume {
        Some(ckpt) => {
            let mut t = Trainer::from_checkpoint(ckpt)?;
            t.set_schedule(config.epochs, config.max_iters, config.eval_every);
            t
        }
        None => Trainer::new(config)?,
    };
    let cfg = trainer.config().clone();
    let samples = prepare_samples(train_samples, cfg.input_size)?;
    log::info!(
        "training on {} samples, {} epochs, batch {}, {} parameters",
        samples.len(),
        cfg.epochs,
        cfg.batch_size,
        trainer.params().num_scalars()
    );

    let mut train_log = None;
    let mut eval_log = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| TvnetError::io(dir, e))?;
        write_file(&dir.join("config.txt"), &cfg.to_config().to_string())?;
        write_file(
            &dir.join("summary.txt"),
            &architecture_summary(&cfg.model_config(), trainer.params()),
        )?;
        train_log = Some(open_log(
            &dir.join("train_log.csv"),
            LogRow::HEADER,
            resuming,
        )?);
        let eval_header = format!("epoch,{}", MetricsReport::csv_header());
        eval_log = Some(open_log(&dir.join("eval_log.csv"), &eval_header, resuming)?);
    }

    let mut rows = Vec::new();
    let mut evals = Vec::new();
    while !trainer.finished() {
        let mut on_row = |row: &LogRow| -> Result<()> {
            if let Some(f) = train_log.as_mut() {
                writeln!(f, "{}", row.csv()).map_err(|e| TvnetError::io("train_log.csv", e))?;
            }
            if row.iteration % 10 == 1 {
                log::debug!("iter {} loss {:.5}", row.iteration, row.total);
            }
            rows.push(row.clone());
            Ok(())
        };
        let before = trainer.epoch();
        trainer.run_epoch(&samples, &mut on_row)?;
        if trainer.epoch() == before {
            break;
        }
        let epoch = trainer.epoch();
        log::info!(
            "epoch {epoch}/{} done, last loss {:.5}",
            cfg.epochs,
            rows.last().map_or(f64::NAN, |r| r.total)
        );
        if let Some(dir) = out_dir {
            trainer.checkpoint().save(
                &dir.join("checkpoints")
                    .join(format!("epoch_{epoch:03}.ckpt")),
            )?;
        }
        if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !eval_samples.is_empty() {
            let report = evaluate_model(
                trainer.net(),
                trainer.params(),
                eval_samples,
                cfg.input_size,
                &EvalOptions::default(),
            )?;
            log::info!("epoch {epoch} eval: {}", report.mean.csv_row());
            if let Some(f) = eval_log.as_mut() {
                writeln!(f, "{epoch},{}", report.mean.csv_row())
                    .map_err(|e| TvnetError::io("eval_log.csv", e))?;
            }
            evals.push((epoch, report.mean));
        }
    }
    let checkpoint = trainer.checkpoint();
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join("checkpoints").join("final.ckpt"))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        log: rows,
        evals,
    })
}
