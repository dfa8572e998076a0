//! The `dagger` command line: argument parsing, config resolution and the five
//! subcommands.
//!
//! A run reads an optional TOML config, overlays command-line flags (flags
//! win), and writes everything under `<out>/<run name>/`, starting with the
//! resolved `config.toml`.
//!
//! Exit codes: `0` success, `2` configuration error, `3` data or checkpoint
//! error, `4` unsatisfiable FLOPs budget, `1` anything else.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dagger::DaggerBank;
use crate::data::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::data::report::{self, ResultRow, Summary};
use crate::data::{Augment, Dataset, DatasetSpec, Split};
use crate::error::{Error, Result};
use crate::flops::{self, FlopsBudget};
use crate::graph::config::presets;
use crate::graph::{GateStatus, NetworkConfig, NetworkGraph};
use crate::pruner::{self, Accuracy, PruneConfig, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "dagger", version, about = "FLOPs-constrained filter pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train a network from scratch and write checkpoints.
    Train,
    /// Prune a pretrained network to a FLOPs budget, then finetune it.
    Prune,
    /// Report test accuracy of a checkpoint.
    Eval,
    /// Print the per-layer MAC table.
    Flops,
    /// Summarize a checkpoint: FLOPs, parameters and retained filters.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Prune => "prune",
            Command::Eval => "eval",
            Command::Flops => "flops",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    None,
    Uniform,
    Random,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML run config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Checkpoint, network TOML, or preset name (two_conv, residual,
    /// inverted_residual, vgg6).
    #[arg(long, global = true)]
    pub net: Option<String>,
    /// Dataset TOML, or a CIFAR-10 binary file or directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Absolute FLOPs (MAC) budget.
    #[arg(long, global = true, conflicts_with = "accel")]
    pub budget_flops: Option<u64>,
    /// Acceleration rate; the budget is `C0 / accel`.
    #[arg(long, global = true)]
    pub accel: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub prune_ratio: Option<f64>,
    #[arg(long, global = true)]
    pub gate_iters: Option<usize>,
    #[arg(long, global = true)]
    pub finetune_iters: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; results go to `<out>/<run name>/`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run name, defaulting to the subcommand name.
    #[arg(long, global = true)]
    pub name: Option<String>,
    /// Training epochs (`train`) or final finetuning epochs (`prune`).
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub augment: Augment,
    /// Write `checkpoints/epoch_NNN.ckpt` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(10, 0.05, 0);
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            momentum: t.momentum,
            nesterov: t.nesterov,
            weight_decay: t.weight_decay,
            augment: t.augment,
            checkpoint_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub budget_flops: Option<u64>,
    pub accel: Option<f64>,
    pub lambda: f64,
    pub prune_ratio: f64,
    pub gate_iters: usize,
    pub finetune_iters: usize,
    pub batch_size: usize,
    pub gate_lr: f64,
    pub weight_lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub final_finetune_epochs: usize,
    pub final_lr: f64,
    pub hidden: Option<usize>,
    pub baseline: Baseline,
    pub random_trials: usize,
}

impl Default for PruneSection {
    fn default() -> Self {
        let p = PruneConfig::new(FlopsBudget {
            target: 1,
            pretrained: 1,
            acceleration: None,
        });
        PruneSection {
            budget_flops: None,
            accel: None,
            lambda: p.lambda,
            prune_ratio: p.prune_ratio,
            gate_iters: p.gate_iters,
            finetune_iters: p.finetune_iters,
            batch_size: p.batch_size,
            gate_lr: p.gate_lr,
            weight_lr: p.weight_lr,
            momentum: p.momentum,
            nesterov: p.nesterov,
            weight_decay: p.weight_decay,
            final_finetune_epochs: p.final_finetune_epochs,
            final_lr: p.final_lr,
            hidden: p.hidden,
            baseline: Baseline::None,
            random_trials: 10,
        }
    }
}

/// Everything a run needs, as read from the config file and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: Option<String>,
    pub seed: u64,
    pub out: PathBuf,
    pub net: Option<String>,
    pub data: Option<DatasetSpec>,
    pub eval_batch_size: usize,
    pub train: TrainSection,
    pub prune: PruneSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: None,
            seed: 0,
            out: PathBuf::from("runs"),
            net: None,
            data: None,
            eval_batch_size: 256,
            train: TrainSection::default(),
            prune: PruneSection::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(format!("run config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| config_err(format!("run config: {e}")))
    }

    /// Config file (if any) overlaid with the flags.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = &flags.name {
            cfg.name = Some(v.clone());
        }
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if let Some(v) = &flags.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &flags.net {
            cfg.net = Some(v.clone());
        }
        if let Some(p) = &flags.data {
            cfg.data = Some(data_spec_from_path(p)?);
        }
        if let Some(v) = flags.epochs {
            cfg.train.epochs = v;
            cfg.prune.final_finetune_epochs = v;
        }
        let p = &mut cfg.prune;
        // a budget flag replaces whichever budget form the file used
        if let Some(v) = flags.budget_flops {
            p.budget_flops = Some(v);
            p.accel = None;
        }
        if let Some(v) = flags.accel {
            p.accel = Some(v);
            p.budget_flops = None;
        }
        if let Some(v) = flags.lambda {
            p.lambda = v;
        }
        if let Some(v) = flags.prune_ratio {
            p.prune_ratio = v;
        }
        if let Some(v) = flags.gate_iters {
            p.gate_iters = v;
        }
        if let Some(v) = flags.finetune_iters {
            p.finetune_iters = v;
        }
        if let Some(v) = flags.baseline {
            p.baseline = v;
        }
        if p.budget_flops.is_some() && p.accel.is_some() {
            return Err(config_err("give either budget_flops or accel, not both"));
        }
        Ok(cfg)
    }

    pub fn run_dir(&self, command: Command) -> PathBuf {
        self.out.join(self.name.as_deref().unwrap_or(command.name()))
    }

    pub fn budget(&self, pretrained: u64) -> Result<FlopsBudget> {
        match (self.prune.budget_flops, self.prune.accel) {
            (Some(c), None) => FlopsBudget::new(c, pretrained).map_err(|e| config_err(e.to_string())),
            (None, Some(r)) => FlopsBudget::from_acceleration(pretrained, r).map_err(|e| config_err(e.to_string())),
            (None, None) => Err(config_err("pruning needs --budget-flops or --accel")),
            (Some(_), Some(_)) => Err(config_err("give either budget_flops or accel, not both")),
        }
    }

    pub fn prune_config(&self, budget: FlopsBudget) -> Result<PruneConfig> {
        let p = &self.prune;
        let cfg = PruneConfig {
            budget,
            lambda: p.lambda,
            prune_ratio: p.prune_ratio,
            gate_iters: p.gate_iters,
            finetune_iters: p.finetune_iters,
            batch_size: p.batch_size,
            gate_lr: p.gate_lr,
            weight_lr: p.weight_lr,
            momentum: p.momentum,
            nesterov: p.nesterov,
            weight_decay: p.weight_decay,
            final_finetune_epochs: p.final_finetune_epochs,
            final_lr: p.final_lr,
            hidden: p.hidden,
            seed: self.seed,
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            momentum: t.momentum,
            nesterov: t.nesterov,
            weight_decay: t.weight_decay,
            augment: t.augment,
            seed: self.seed,
        }
    }

    fn load_data(&self, split: Split) -> Result<Dataset> {
        let spec = self.data.as_ref().ok_or_else(|| config_err("this command needs --data"))?;
        spec.load(split).map_err(|e| match e {
            Error::Io { .. } | Error::Invalid(_) => Error::Data(e.to_string()),
            other => other,
        })
    }
}

/// `.toml` files hold a dataset spec; anything else is read as CIFAR-10.
pub fn data_spec_from_path(path: &Path) -> Result<DatasetSpec> {
    if path.extension().is_some_and(|e| e == "toml") {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_err(format!("dataset spec {}: {e}", path.display())))
    } else {
        Ok(DatasetSpec::Cifar10 {
            path: path.to_path_buf(),
            limit: None,
            normalization: None,
        })
    }
}

/// A network ready to use, plus whatever a checkpoint carried alongside it.
#[derive(Debug, Clone)]
pub struct LoadedNet {
    pub graph: NetworkGraph,
    pub bank: Option<DaggerBank>,
    pub meta: CheckpointMeta,
    pub from_checkpoint: bool,
}

fn preset(name: &str, classes: usize, input: [usize; 3]) -> Option<NetworkConfig> {
    let mut cfg = match name {
        "two_conv" => presets::two_conv(classes),
        "residual" => presets::residual(classes),
        "inverted_residual" => presets::inverted_residual(classes),
        "vgg6" => presets::vgg6(classes, input[1], [16, 16, 32, 32, 64, 64]),
        _ => return None,
    };
    cfg.input = input;
    Some(cfg)
}

/// Resolves `--net`: a checkpoint file, a network TOML, or a preset sized to
/// `data` (or `[3, 8, 8]` with 10 classes when there is none).
pub fn load_net(spec: &str, seed: u64, data: Option<&Dataset>) -> Result<LoadedNet> {
    let path = Path::new(spec);
    if path.is_file() {
        let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        if bytes.starts_with(checkpoint::MAGIC) {
            let ck = checkpoint::decode(&bytes)?;
            return Ok(LoadedNet {
                graph: ck.graph,
                bank: ck.bank,
                meta: ck.meta,
                from_checkpoint: true,
            });
        }
        let text = String::from_utf8(bytes).map_err(|_| config_err(format!("{} is neither a checkpoint nor TOML", path.display())))?;
        let cfg = NetworkConfig::from_toml(&text)?;
        return fresh(NetworkGraph::build(&cfg, seed)?, seed);
    }
    let (classes, input) = data.map_or((10, [3, 8, 8]), |d| (d.classes, d.shape));
    let cfg = preset(spec, classes, input).ok_or_else(|| config_err(format!("`{spec}` is not a file or a known preset")))?;
    fresh(NetworkGraph::build(&cfg, seed)?, seed)
}

fn fresh(graph: NetworkGraph, seed: u64) -> Result<LoadedNet> {
    Ok(LoadedNet {
        graph,
        bank: None,
        meta: CheckpointMeta {
            seed,
            ..Default::default()
        },
        from_checkpoint: false,
    })
}

fn check_data(graph: &NetworkGraph, data: &Dataset) -> Result<()> {
    if graph.input_shape != data.shape || graph.classes() != data.classes {
        return Err(Error::Data(format!(
            "network expects {:?} inputs and {} classes, dataset has {:?} and {}",
            graph.input_shape,
            graph.classes(),
            data.shape,
            data.classes
        )));
    }
    Ok(())
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Checkpoint { .. } | Error::CheckpointVersion { .. } => 3,
        Error::UnsatisfiableBudget { .. } => 4,
        _ => 1,
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one command; returns what it prints on stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = RunConfig::resolve(&cli.flags)?;
    let dir = cfg.run_dir(cli.command);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    report::write_text(&dir.join("config.toml"), &cfg.to_toml()?)?;
    match cli.command {
        Command::Train => cmd_train(&cfg, &dir),
        Command::Prune => cmd_prune(&cfg, &dir),
        Command::Eval => cmd_eval(&cfg, &dir),
        Command::Flops => cmd_flops(&cfg, &dir),
        Command::Report => cmd_report(&cfg, &dir),
    }
}

fn net_spec(cfg: &RunConfig) -> Result<&str> {
    cfg.net.as_deref().ok_or_else(|| config_err("this command needs --net"))
}

fn save(graph: &NetworkGraph, bank: Option<&DaggerBank>, meta: CheckpointMeta, path: &Path) -> Result<()> {
    checkpoint::save_checkpoint(
        &Checkpoint {
            graph: graph.clone(),
            bank: bank.cloned(),
            meta,
        },
        path,
    )
}

pub fn cmd_train(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let train_set = cfg.load_data(Split::Train)?;
    let test_set = cfg.load_data(Split::Test)?;
    let mut net = load_net(net_spec(cfg)?, cfg.seed, Some(&train_set))?;
    check_data(&net.graph, &train_set)?;
    let tc = cfg.train_config();
    let every = cfg.train.checkpoint_every;
    let per_epoch = train_set.len().div_ceil(tc.batch_size.max(1)) as u64;
    let mut log = String::from("epoch,lr,train_loss,test_top1,test_loss\n");
    let history = pruner::train(&mut net.graph, &train_set, Some(&test_set), &tc, |g, s| {
        let acc = s.test.as_ref();
        writeln!(
            log,
            "{},{},{},{},{}",
            s.epoch + 1,
            s.lr,
            s.train_loss,
            acc.map(|a| a.top1.to_string()).unwrap_or_default(),
            acc.map(|a| a.loss.to_string()).unwrap_or_default()
        )
        .expect("string write");
        if every > 0 && (s.epoch + 1) % every == 0 {
            let meta = CheckpointMeta {
                seed: cfg.seed,
                step: net.meta.step + per_epoch * (s.epoch as u64 + 1),
                epoch: net.meta.epoch + s.epoch as u64 + 1,
                notes: Default::default(),
            };
            save(g, None, meta, &dir.join(format!("checkpoints/epoch_{:03}.ckpt", s.epoch + 1)))?;
        }
        Ok(())
    })?;
    report::write_text(&dir.join("train_log.csv"), &log)?;
    let meta = CheckpointMeta {
        seed: cfg.seed,
        step: net.meta.step + per_epoch * history.len() as u64,
        epoch: net.meta.epoch + history.len() as u64,
        notes: Default::default(),
    };
    save(&net.graph, None, meta, &dir.join("model.ckpt"))?;
    let acc = pruner::evaluate(&net.graph, &test_set, cfg.eval_batch_size)?;
    report::write_text(&dir.join("eval.json"), &accuracy_json(&acc)?)?;
    Ok(format!(
        "trained {} epochs: test top-1 {:.4}, checkpoint {}\n",
        history.len(),
        acc.top1,
        dir.join("model.ckpt").display()
    ))
}

fn accuracy_json(acc: &Accuracy) -> Result<String> {
    serde_json::to_string_pretty(acc).map_err(|e| Error::Invalid(format!("accuracy: {e}")))
}

fn retained_of(graph: &NetworkGraph) -> Vec<(String, usize)> {
    graph
        .gated_layers()
        .into_iter()
        .map(|l| {
            let g = graph.gate(l).expect("gated");
            (graph.layers[l].id.clone(), g.status.iter().filter(|&&s| s != GateStatus::Pruned).count())
        })
        .collect()
}

fn summary(graph: &NetworkGraph, method: &str, pretrained: u64, budget: u64, rounds: usize, accuracy: Option<Accuracy>) -> Summary {
    let retained_per_layer = retained_of(graph);
    Summary {
        network: graph.name.clone(),
        method: method.into(),
        pretrained_flops: pretrained,
        budget_flops: budget,
        final_flops: flops::total_flops_exact(graph),
        params: graph.effective_param_count(),
        rounds,
        retained_total: retained_per_layer.iter().map(|(_, c)| c).sum(),
        retained_per_layer,
        accuracy,
    }
}

pub fn cmd_prune(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let train_set = cfg.load_data(Split::Train)?;
    let test_set = cfg.load_data(Split::Test)?;
    let net = load_net(net_spec(cfg)?, cfg.seed, Some(&train_set))?;
    check_data(&net.graph, &train_set)?;
    let c0 = flops::architecture_flops(&net.graph);
    let budget = cfg.budget(c0)?;
    let pc = cfg.prune_config(budget)?;
    let meta = |notes: &[(&str, String)]| CheckpointMeta {
        seed: cfg.seed,
        step: net.meta.step,
        epoch: net.meta.epoch,
        notes: notes.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    };
    let mut rows = Vec::new();
    let out = match cfg.prune.baseline {
        Baseline::None => {
            let mut bank = DaggerBank::init(&net.graph, pc.hidden_rule(), pc.seed);
            let mut outcome = pruner::prune_loop(net.graph.clone(), &mut bank, &train_set, &pc)?;
            pruner::final_finetune(&mut outcome.pruned, &train_set, Some(&test_set), &pc)?;
            let acc = pruner::evaluate(&outcome.pruned, &test_set, cfg.eval_batch_size)?;
            let s = summary(&outcome.gated, "dagger", c0, budget.target, outcome.state.round, Some(acc.clone()));
            let s = Summary {
                final_flops: flops::total_flops_exact(&outcome.pruned),
                params: outcome.pruned.param_count(),
                ..s
            };
            report::write_report(&outcome.state, &s, dir)?;
            report::write_text(&dir.join("flops.csv"), &flops_table_csv(&outcome.pruned)?)?;
            save(&outcome.gated, Some(&bank), meta(&[("kind", "gated".into())]), &dir.join("gated.ckpt"))?;
            save(&outcome.pruned, None, meta(&[("kind", "pruned".into())]), &dir.join("pruned.ckpt"))?;
            rows.push(ResultRow {
                method: "dagger".into(),
                seed: cfg.seed,
                flops: s.final_flops,
                params: s.params,
                top1: Some(acc.top1),
            });
            format!(
                "dagger: {} rounds, {} -> {} MACs (budget {}), test top-1 {:.4}\n",
                outcome.state.round, c0, s.final_flops, budget.target, acc.top1
            )
        }
        Baseline::Uniform => {
            let mut b = pruner::uniform_baseline(&net.graph, &budget)?;
            pruner::final_finetune(&mut b.pruned, &train_set, Some(&test_set), &pc)?;
            let acc = pruner::evaluate(&b.pruned, &test_set, cfg.eval_batch_size)?;
            let s = Summary {
                params: b.pruned.param_count(),
                ..summary(&b.gated, "uniform", c0, budget.target, 0, Some(acc.clone()))
            };
            report::write_text(&dir.join("summary.json"), &report::summary_json(&s)?)?;
            report::write_text(&dir.join("flops.csv"), &flops_table_csv(&b.pruned)?)?;
            save(&b.pruned, None, meta(&[("kind", "uniform".into())]), &dir.join("pruned.ckpt"))?;
            rows.push(ResultRow {
                method: "uniform".into(),
                seed: cfg.seed,
                flops: b.flops,
                params: s.params,
                top1: Some(acc.top1),
            });
            format!("uniform: scale {:.4}, {} MACs (budget {}), test top-1 {:.4}\n", b.scale, b.flops, budget.target, acc.top1)
        }
        Baseline::Random => {
            let mut rb = pruner::random_baseline(&net.graph, &budget, cfg.prune.random_trials, cfg.seed)?;
            let mut accs = Vec::new();
            for (t, trial) in rb.trials.iter_mut().enumerate() {
                let trial_cfg = PruneConfig {
                    seed: pc.seed ^ t as u64,
                    ..pc.clone()
                };
                pruner::final_finetune(&mut trial.result.pruned, &train_set, Some(&test_set), &trial_cfg)?;
                let acc = pruner::evaluate(&trial.result.pruned, &test_set, cfg.eval_batch_size)?;
                save(
                    &trial.result.pruned,
                    None,
                    meta(&[("kind", "random".into()), ("trial", t.to_string())]),
                    &dir.join(format!("trials/trial_{t:02}.ckpt")),
                )?;
                rows.push(ResultRow {
                    method: "random".into(),
                    seed: t as u64,
                    flops: trial.result.flops,
                    params: trial.result.pruned.param_count(),
                    top1: Some(acc.top1),
                });
                accs.push(acc.top1);
            }
            rb.mean_accuracy = (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64);
            let json = serde_json::json!({
                "pretrained_flops": c0,
                "budget_flops": budget.target,
                "trials": rows.len(),
                "mean_top1": rb.mean_accuracy,
            });
            report::write_text(&dir.join("summary.json"), &serde_json::to_string_pretty(&json).expect("json"))?;
            format!(
                "random: {} trials, mean test top-1 {}\n",
                rows.len(),
                rb.mean_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
            )
        }
    };
    report::write_text(&dir.join("results.csv"), &report::results_csv(&rows))?;
    Ok(out)
}

pub fn cmd_eval(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let test_set = cfg.load_data(Split::Test)?;
    let net = load_net(net_spec(cfg)?, cfg.seed, Some(&test_set))?;
    check_data(&net.graph, &test_set)?;
    let acc = pruner::evaluate(&net.graph, &test_set, cfg.eval_batch_size)?;
    let json = accuracy_json(&acc)?;
    report::write_text(&dir.join("eval.json"), &json)?;
    Ok(json + "\n")
}

/// Per-layer rows plus a closing `total` row.
pub fn flops_table_csv(graph: &NetworkGraph) -> Result<String> {
    let rows = flops::flops_table(graph);
    let mut text = report::flops_csv(&rows);
    let exact: u64 = rows.iter().map(|r| r.exact_macs).sum();
    let surrogate: f64 = rows.iter().map(|r| r.surrogate).sum();
    writeln!(text, "total,,,,{exact},{surrogate}").expect("string write");
    Ok(text)
}

fn optional_data(cfg: &RunConfig, split: Split) -> Result<Option<Dataset>> {
    cfg.data.as_ref().map(|_| cfg.load_data(split)).transpose()
}

pub fn cmd_flops(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let data = optional_data(cfg, Split::Test)?;
    let net = load_net(net_spec(cfg)?, cfg.seed, data.as_ref())?;
    let text = flops_table_csv(&net.graph)?;
    report::write_text(&dir.join("flops.csv"), &text)?;
    Ok(text)
}

pub fn cmd_report(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let data = optional_data(cfg, Split::Test)?;
    let net = load_net(net_spec(cfg)?, cfg.seed, data.as_ref())?;
    let g = &net.graph;
    let c0 = flops::architecture_flops(g);
    let budget = match (cfg.prune.budget_flops, cfg.prune.accel) {
        (None, None) => c0,
        _ => cfg.budget(c0)?.target,
    };
    let accuracy = match &data {
        Some(d) => {
            check_data(g, d)?;
            Some(pruner::evaluate(g, d, cfg.eval_batch_size)?)
        }
        None => None,
    };
    let s = summary(g, "report", c0, budget, 0, accuracy);
    let json = report::summary_json(&s)?;
    report::write_text(&dir.join("summary.json"), &json)?;
    report::write_text(&dir.join("flops.csv"), &flops_table_csv(g)?)?;
    let mut retained = String::from("layer_id,retained,filters\n");
    for (l, (id, c)) in g.gated_layers().into_iter().zip(&s.retained_per_layer) {
        writeln!(retained, "{id},{c},{}", g.layers[l].n_out).expect("string write");
    }
    report::write_text(&dir.join("retained.csv"), &retained)?;
    Ok(json + "\n")
}
