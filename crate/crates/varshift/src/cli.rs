//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use varshift_core::analytic::{self, ShiftScenario};
use varshift_core::data::{make_dataset, Dataset, LabeledSplit};
use varshift_core::diagnostics::{
    adjust_bn_statistics, prediction_consistency, scan_variance_shift, StreamOptions, VoteOptions,
};
use varshift_core::experiment::CellSpec;
use varshift_core::montecarlo::{
    case_a_grid, case_b_grid, default_sweep_grid, McModel, DEFAULT_SAMPLES, MIN_SAMPLES,
};
use varshift_core::network::{build_network, Network, Placement};
use varshift_core::stats::AveragePolicy;
use varshift_core::train::{eval_accuracy, train};
use varshift_core::RngStream;

use crate::checkpoint::Checkpoint;
use crate::config::{parse_placement, ExperimentConfig};
use crate::dataset::load_csv_dataset;
use crate::error::{AppError, AppResult};
use crate::parallel::par_sweep;
use crate::report::{
    shift_report_csv, simulate_csv, to_csv, to_json, write_file, AnalyticRow, Format, SimulateRow,
    CONSISTENCY_HEADER, HISTORY_HEADER,
};
use crate::runner::run_experiment;

#[derive(Debug, Parser)]
#[command(
    name = "varshift",
    version,
    about = "Variance shift between dropout and batch norm"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Root seed of every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dropout drop ratio, 1 - retain probability.
    #[arg(long, global = true)]
    pub drop_ratio: Option<f64>,
    /// Uout noise half-width.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Output directory; tables go to stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    pub format: OutFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form variance shift ratios.
    Analytic(ScenarioArgs),
    /// Monte Carlo estimates against the closed forms.
    Simulate(SimulateArgs),
    /// Train a network and write a checkpoint with its loss history.
    Train(TrainArgs),
    /// Per-layer moving versus real variance of a checkpoint.
    Scan(ScanArgs),
    /// Re-estimate batch norm statistics and write the adjusted checkpoint.
    Adjust(AdjustArgs),
    /// Train-mode vote accuracy against Eval-mode accuracy.
    Consistency(ConsistencyArgs),
    /// Run a grid of cells from a config file.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Named grid: default, case-a or case-b.
    #[arg(long, value_enum)]
    pub grid: Option<Grid>,
    /// Input mean.
    #[arg(long, default_value_t = 0.0)]
    pub c: f64,
    /// Input variance.
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    /// Number of inputs feeding the weighted sum.
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    /// Correlation between inputs.
    #[arg(long, default_value_t = 0.0)]
    pub rho_x: f64,
    /// Squared cosine between the weights and the all-ones direction.
    #[arg(long, default_value_t = 1.0)]
    pub cos2theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    Default,
    CaseA,
    CaseB,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Samples per scenario.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row and a final `label` column.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// none, drop_a, drop_b, last_layer or uout_b.
    #[arg(long, default_value = "drop_a")]
    pub placement: String,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 6)]
    pub blocks: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[command(flatten)]
    pub data: DataArgs,
    /// Held-out CSV file reported alongside the training accuracy.
    #[arg(long, requires = "data")]
    pub test_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = varshift_core::diagnostics::DEFAULT_PASSES)]
    pub passes: usize,
    #[arg(long, default_value_t = varshift_core::diagnostics::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    Cumulative,
    Ema,
}

#[derive(Debug, Args)]
pub struct AdjustArgs {
    #[command(flatten)]
    pub scan: ScanArgs,
    #[arg(long, value_enum, default_value_t = Policy::Cumulative)]
    pub policy: Policy,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = varshift_core::diagnostics::DEFAULT_VOTES)]
    pub votes: usize,
    #[arg(long, default_value_t = varshift_core::diagnostics::DEFAULT_VOTE_BATCH_SIZE)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// Stream ids shared with the experiment runner.
const STREAM_SCAN: u64 = 2;
const STREAM_VOTES: u64 = 3;
const STREAM_ADJUST: u64 = 4;

pub fn run(cli: Cli) -> AppResult<()> {
    let c = &cli.common;
    if let Some(r) = c.drop_ratio {
        if !(0.0..1.0).contains(&r) {
            return Err(AppError::invalid(format!(
                "--drop-ratio {r} must lie in [0, 1)"
            )));
        }
    }
    if let Some(b) = c.beta {
        if !(0.0..=1.0).contains(&b) {
            return Err(AppError::invalid(format!("--beta {b} must lie in [0, 1]")));
        }
    }
    match &cli.command {
        Command::Analytic(a) => cmd_analytic(c, a),
        Command::Simulate(a) => cmd_simulate(c, a),
        Command::Train(a) => cmd_train(c, a),
        Command::Scan(a) => cmd_scan(c, a),
        Command::Adjust(a) => cmd_adjust(c, a),
        Command::Consistency(a) => cmd_consistency(c, a),
        Command::Experiment(a) => cmd_experiment(c, a),
    }
}

/// Writes `out/<stem>.<ext>` or prints to stdout.
fn emit(
    c: &Common,
    stem: &str,
    csv: impl FnOnce() -> AppResult<String>,
    json: impl FnOnce() -> AppResult<String>,
) -> AppResult<()> {
    let format = Format::from(c.format);
    let text = match format {
        Format::Csv => csv()?,
        Format::Json => json()?,
    };
    match &c.out {
        Some(dir) => write_file(&dir.join(format!("{stem}.{}", format.extension())), &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn require_out(c: &Common, command: &str) -> AppResult<PathBuf> {
    c.out
        .clone()
        .ok_or_else(|| AppError::invalid(format!("`{command}` writes files and needs --out <dir>")))
}

/// The scenario list selected by the flags: a named grid, one explicit
/// scenario when `--drop-ratio` or `--beta` is given, else the default grid.
fn scenarios(c: &Common, a: &ScenarioArgs) -> AppResult<(Vec<ShiftScenario>, bool)> {
    if let Some(grid) = a.grid {
        let list = match grid {
            Grid::Default => default_sweep_grid(),
            Grid::CaseA => case_a_grid(),
            Grid::CaseB => case_b_grid(a.c, a.v, 1.0 - c.drop_ratio.unwrap_or(0.5)),
        };
        return Ok((list, false));
    }
    let s = match (c.drop_ratio, c.beta) {
        (None, None) => return Ok((default_sweep_grid(), false)),
        (Some(_), Some(b)) if b > 0.0 => {
            return Err(AppError::invalid(
                "use either --drop-ratio or --beta, not both",
            ))
        }
        (_, Some(b)) if b > 0.0 => ShiftScenario::uout(a.v, b),
        (r, _) => {
            let p = 1.0 - r.unwrap_or(0.0);
            ShiftScenario::case_b(a.c, a.v, p, a.d, a.rho_x, a.cos2theta)
        }
    };
    McModel::for_scenario(&s)?;
    Ok((vec![s], true))
}

fn analytic_row(s: &ShiftScenario) -> AppResult<AnalyticRow> {
    if s.beta > 0.0 {
        let ratio = analytic::uout_shift_ratio(s.beta)?;
        let r = analytic::ShiftResult {
            var_train: s.v * (1.0 + s.beta * s.beta / 3.0),
            var_test: s.v,
            ratio,
        };
        return Ok(AnalyticRow::new("uout", s, &r));
    }
    if s.d == 1 {
        return Ok(AnalyticRow::new("a", s, &analytic::shift_ratio_case_a(s)?));
    }
    Ok(AnalyticRow::new("b", s, &analytic::shift_ratio_case_b(s)?))
}

fn cmd_analytic(c: &Common, a: &ScenarioArgs) -> AppResult<()> {
    let (list, _) = scenarios(c, a)?;
    let rows = list
        .iter()
        .map(analytic_row)
        .collect::<AppResult<Vec<_>>>()?;
    emit(
        c,
        "analytic",
        || to_csv(&crate::report::ANALYTIC_HEADER, &rows),
        || to_json(&rows),
    )
}

fn cmd_simulate(c: &Common, a: &SimulateArgs) -> AppResult<()> {
    if a.samples < MIN_SAMPLES {
        return Err(AppError::invalid(format!(
            "--samples {} is below the minimum of {MIN_SAMPLES}",
            a.samples
        )));
    }
    let (list, _) = scenarios(c, &a.scenario)?;
    let rng = RngStream::new(c.seed.unwrap_or(0), 0);
    let rows: Vec<SimulateRow> = par_sweep(&list, a.samples, &rng)?
        .iter()
        .map(SimulateRow::from)
        .collect();
    emit(c, "simulate", || simulate_csv(&rows), || to_json(&rows))?;
    let failed: Vec<&SimulateRow> = rows.iter().filter(|r| r.error.is_some()).collect();
    for r in &failed {
        eprintln!(
            "scenario {}: {}",
            r.scenario_id,
            r.error.as_deref().unwrap_or("")
        );
    }
    if !failed.is_empty() {
        return Err(AppError::CellFailures {
            failed: failed.len(),
            total: rows.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    train_acc: f64,
    test_acc: Option<f64>,
    parameter_checksum: u64,
}

fn cmd_train(c: &Common, a: &TrainArgs) -> AppResult<()> {
    let out = require_out(c, "train")?;
    let placement = parse_placement(&a.placement).map_err(AppError::Invalid)?;
    let value = if placement == Placement::UoutB {
        c.beta.unwrap_or(0.1)
    } else {
        c.drop_ratio.unwrap_or(if placement == Placement::None {
            0.0
        } else {
            0.5
        })
    };
    let seed = c.seed.unwrap_or(0);
    let mut spec = CellSpec::toy(placement, value, a.width, seed);
    spec.arch.num_blocks = a.blocks;
    spec.train.epochs = a.epochs;
    spec.train.decay_epochs = vec![a.epochs / 2, a.epochs * 3 / 4];
    spec.train.batch_size = a.batch_size;
    spec.train.learning_rate = a.learning_rate;
    spec.train.momentum = a.momentum;
    spec.train.weight_decay = a.weight_decay;

    let (split, dataset) = match &a.data.data {
        Some(path) => {
            let train = load_csv_dataset(path)?;
            let test = a.test_data.as_deref().map(load_csv_dataset).transpose()?;
            if let Some(t) = &test {
                if t.input_dim() != train.input_dim() {
                    return Err(AppError::invalid(
                        "train and test files have different widths",
                    ));
                }
            }
            spec.arch.input_dim = train.input_dim();
            spec.arch.num_classes = train
                .num_classes()
                .max(test.as_ref().map_or(0, Dataset::num_classes));
            ((train, test), None)
        }
        None => {
            let LabeledSplit { train, test } = make_dataset(&spec.dataset)?;
            ((train, Some(test)), Some(spec.dataset.clone()))
        }
    };
    spec.arch.validate()?;
    spec.train.validate()?;
    let (train_split, test_split) = split;
    let mut net = build_network(&spec.arch, &mut RngStream::new(seed, 0))?;
    let history = train(&mut net, &train_split, &spec.train)?;
    let summary = TrainSummary {
        train_acc: eval_accuracy(&mut net.clone(), &train_split)?,
        test_acc: test_split
            .as_ref()
            .map(|t| eval_accuracy(&mut net.clone(), t))
            .transpose()?,
        parameter_checksum: net.parameter_checksum(),
    };
    Checkpoint {
        arch: spec.arch.clone(),
        dataset,
        network: net,
    }
    .save(&out.join("model.ckpt"))?;
    let format = Format::from(c.format);
    let history_text = match format {
        Format::Csv => to_csv(&HISTORY_HEADER, &history)?,
        Format::Json => to_json(&history)?,
    };
    write_file(
        &out.join(format!("history.{}", format.extension())),
        &history_text,
    )?;
    write_file(&out.join("train.json"), &to_json(&summary)?)
}

/// The checkpoint and the dataset to diagnose it on: `--data` when given,
/// else the training split of the synthetic dataset recorded in the
/// checkpoint.
fn load_subject(checkpoint: &Path, data: &DataArgs) -> AppResult<(Checkpoint, Dataset)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let ds = match (&data.data, &ckpt.dataset) {
        (Some(path), _) => load_csv_dataset(path)?,
        (None, Some(spec)) => make_dataset(spec)?.train,
        (None, None) => {
            return Err(AppError::invalid(
                "the checkpoint records no synthetic dataset; pass --data",
            ))
        }
    };
    if ds.input_dim() != ckpt.arch.input_dim {
        return Err(AppError::invalid(format!(
            "data has {} features, the network expects {}",
            ds.input_dim(),
            ckpt.arch.input_dim
        )));
    }
    Ok((ckpt, ds))
}

fn scan_options(a: &ScanArgs) -> StreamOptions {
    StreamOptions {
        passes: a.passes,
        batch_size: a.batch_size,
        policy: None,
    }
}

fn scan_report(
    c: &Common,
    net: &Network,
    ds: &Dataset,
    opts: &StreamOptions,
    stem: &str,
) -> AppResult<()> {
    let rng = RngStream::new(c.seed.unwrap_or(0), STREAM_SCAN);
    let report = scan_variance_shift(net, ds, opts, &rng)?;
    emit(c, stem, || shift_report_csv(&report), || to_json(&report))
}

fn cmd_scan(c: &Common, a: &ScanArgs) -> AppResult<()> {
    let (ckpt, ds) = load_subject(&a.checkpoint, &a.data)?;
    scan_report(c, &ckpt.network, &ds, &scan_options(a), "shift")
}

fn cmd_adjust(c: &Common, a: &AdjustArgs) -> AppResult<()> {
    let out = require_out(c, "adjust")?;
    let (ckpt, ds) = load_subject(&a.scan.checkpoint, &a.scan.data)?;
    let policy = match a.policy {
        Policy::Cumulative => AveragePolicy::Cumulative,
        Policy::Ema => AveragePolicy::Exponential {
            momentum: ckpt.arch.bn_momentum,
        },
    };
    let opts = StreamOptions {
        policy: Some(policy),
        ..scan_options(&a.scan)
    };
    let rng = RngStream::new(c.seed.unwrap_or(0), STREAM_ADJUST);
    let adjusted = adjust_bn_statistics(&ckpt.network, &ds, &opts, &rng)?;
    scan_report(c, &adjusted, &ds, &scan_options(&a.scan), "shift")?;
    Checkpoint {
        network: adjusted,
        ..ckpt
    }
    .save(&out.join("adjusted.ckpt"))
}

fn cmd_consistency(c: &Common, a: &ConsistencyArgs) -> AppResult<()> {
    let (ckpt, ds) = load_subject(&a.checkpoint, &a.data)?;
    let opts = VoteOptions {
        votes: a.votes,
        batch_size: a.batch_size,
    };
    let rng = RngStream::new(c.seed.unwrap_or(0), STREAM_VOTES);
    let result = prediction_consistency(&ckpt.network, &ds, &opts, &rng)?;
    emit(
        c,
        "consistency",
        || to_csv(&CONSISTENCY_HEADER, &[result]),
        || to_json(&result),
    )
}

fn cmd_experiment(c: &Common, a: &ExperimentArgs) -> AppResult<()> {
    let out = require_out(c, "experiment")?;
    let mut config = ExperimentConfig::load(&a.config)?;
    for (_, s) in &mut config.sections {
        if let Some(seed) = c.seed {
            s.seeds = vec![seed];
        }
        let value = if s.placement == Placement::UoutB {
            c.beta
        } else {
            c.drop_ratio
        };
        if let Some(v) = value {
            s.values = vec![v];
        }
    }
    let summary = run_experiment(&config, &out)?;
    eprintln!("{} cells written to {}", summary.total, out.display());
    Ok(())
}
