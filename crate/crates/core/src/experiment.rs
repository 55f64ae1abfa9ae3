//! One experiment cell: build, train, scan, check consistency, adjust.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{make_dataset, Generator, SyntheticDatasetSpec};
use crate::diagnostics::{
    adjust_bn_statistics, prediction_consistency, scan_variance_shift, Consistency, ShiftReport,
    StreamOptions, VoteOptions,
};
use crate::network::{build_network, ArchSpec, Network, Placement};
use crate::train::{eval_accuracy, train, EpochRecord, TrainConfig};
use crate::{Result, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub name: String,
    pub dataset: SyntheticDatasetSpec,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub scan: StreamOptions,
    pub votes: VoteOptions,
    /// Adjust the batch norm statistics with these options after training.
    pub adjust: Option<StreamOptions>,
    /// Seeds weight initialization and every diagnostic stream.
    pub init_seed: u64,
}

impl CellSpec {
    /// The desk-scale setup: a 6-block MLP trained for 20 epochs on four
    /// noisy 16-d Gaussian blobs. `value` is the drop ratio, or beta for
    /// Uout. The dataset seed is `100 + init_seed`.
    pub fn toy(placement: Placement, value: f64, width: usize, init_seed: u64) -> Self {
        let epochs = 20;
        CellSpec {
            name: format!("{}_{value}_w{width}_s{init_seed}", placement.name()),
            dataset: SyntheticDatasetSpec {
                generator: Generator::GaussianBlobs,
                num_classes: 4,
                samples_per_class: 250,
                input_dim: 16,
                noise_scale: 2.0,
                seed: 100 + init_seed,
            },
            arch: ArchSpec {
                input_dim: 16,
                hidden: vec![width],
                num_blocks: 6,
                num_classes: 4,
                placement,
                drop_ratio: if placement == Placement::UoutB {
                    0.0
                } else {
                    value
                },
                beta: if placement == Placement::UoutB {
                    value
                } else {
                    0.0
                },
                ..Default::default()
            },
            train: TrainConfig {
                epochs,
                batch_size: 32,
                learning_rate: 0.05,
                momentum: 0.9,
                weight_decay: 0.0,
                seed: init_seed,
                decay_epochs: vec![epochs / 2, epochs * 3 / 4],
                decay_factor: 0.1,
            },
            scan: StreamOptions::default(),
            votes: VoteOptions::default(),
            adjust: Some(StreamOptions::adjustment()),
            init_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Eval-mode accuracy on the training split.
    pub train_acc: f64,
    pub test_acc: f64,
    pub report: ShiftReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub history: Vec<EpochRecord>,
    pub trained: Evaluation,
    pub adjusted: Option<Evaluation>,
    pub parameter_checksum: u64,
}

impl CellOutcome {
    pub fn consistency(&self) -> Option<Consistency> {
        self.trained.report.consistency
    }
}

/// Streams derived from the init seed, one per stage.
fn stage(seed: u64, id: u64) -> RngStream {
    RngStream::new(seed, id)
}

pub fn evaluate(
    net: &Network,
    spec: &CellSpec,
    train_split: &crate::data::Dataset,
    test_split: &crate::data::Dataset,
) -> Result<Evaluation> {
    let mut report = scan_variance_shift(net, train_split, &spec.scan, &stage(spec.init_seed, 2))?;
    report.consistency = Some(prediction_consistency(
        net,
        train_split,
        &spec.votes,
        &stage(spec.init_seed, 3),
    )?);
    let mut copy = net.clone();
    Ok(Evaluation {
        train_acc: eval_accuracy(&mut copy, train_split)?,
        test_acc: eval_accuracy(&mut copy, test_split)?,
        report,
    })
}

/// Runs the cell and returns the trained (unadjusted) network with the
/// outcome.
pub fn run_cell(spec: &CellSpec) -> Result<(Network, CellOutcome)> {
    let split = make_dataset(&spec.dataset)?;
    let mut net = build_network(&spec.arch, &mut stage(spec.init_seed, 0))?;
    let history = train(&mut net, &split.train, &spec.train)?;
    let trained = evaluate(&net, spec, &split.train, &split.test)?;
    let adjusted = match &spec.adjust {
        Some(opts) => {
            let fixed = adjust_bn_statistics(&net, &split.train, opts, &stage(spec.init_seed, 4))?;
            Some(evaluate(&fixed, spec, &split.train, &split.test)?)
        }
        None => None,
    };
    let parameter_checksum = net.parameter_checksum();
    Ok((
        net,
        CellOutcome {
            history,
            trained,
            adjusted,
            parameter_checksum,
        },
    ))
}
