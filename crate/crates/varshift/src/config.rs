//! Experiment config files.
//!
//! ```text
//! # comments start with '#'
//! [experiment]
//! seeds = 0, 1, 2, 3, 4
//! epochs = 20
//!
//! [cell fig4]
//! placement = drop_a
//! values = 0.0, 0.1, 0.3, 0.5, 0.7
//! widths = 32
//! ```
//!
//! `[experiment]` holds defaults, every `[cell NAME]` section is a grid
//! over `values x widths x seeds` and may override any default. Unknown
//! or repeated keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use varshift_core::data::{Generator, SyntheticDatasetSpec};
use varshift_core::diagnostics::{StreamOptions, VoteOptions};
use varshift_core::experiment::CellSpec;
use varshift_core::network::{ArchSpec, Placement};
use varshift_core::stats::AveragePolicy;
use varshift_core::train::TrainConfig;

use crate::error::{AppError, AppResult};

/// Every recognized key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("placement", "none | drop_a | drop_b | last_layer | uout_b"),
    (
        "values",
        "drop ratios (or betas for uout_b), comma separated",
    ),
    ("widths", "hidden widths, comma separated; one grid axis"),
    ("seeds", "init seeds, comma separated"),
    ("blocks", "number of Dense-BN-ReLU blocks"),
    ("bn_affine", "true | false"),
    ("bn_momentum", "batch norm moving-average momentum"),
    ("generator", "blobs | rings"),
    ("classes", "number of classes"),
    (
        "samples_per_class",
        "samples per class before the train/test split",
    ),
    ("input_dim", "feature dimension"),
    ("noise", "noise scale of the generator"),
    (
        "data_seed",
        "dataset seed offset; the dataset seed is data_seed + seed",
    ),
    ("epochs", "training epochs"),
    ("batch_size", "training batch size (>= 2)"),
    ("learning_rate", "initial SGD learning rate"),
    ("momentum", "SGD momentum"),
    ("weight_decay", "L2 penalty"),
    (
        "decay_epochs",
        "epochs at which the learning rate is decayed",
    ),
    (
        "decay_factor",
        "learning-rate multiplier at each decay epoch",
    ),
    ("scan_passes", "Eval epochs for the real-variance estimate"),
    ("scan_batch", "batch size of the scan"),
    ("votes", "Train-mode passes in the consistency vote"),
    ("vote_batch", "batch size of the Train-mode passes"),
    ("adjust", "true | false: also adjust BN statistics"),
    ("adjust_passes", "epochs of the BN adjustment"),
    ("adjust_policy", "cumulative | ema"),
];

/// One raw `key = value` line.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    /// `experiment`, or `cell` for grid sections.
    pub kind: String,
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

/// Splits text into sections without interpreting keys.
pub fn parse_sections(text: &str, path: &Path) -> AppResult<Vec<Section>> {
    let err = |line: usize, message: String| AppError::Config {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(header) = content.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| err(line, format!("unterminated section header `{content}`")))?;
            let mut parts = header.split_whitespace();
            let kind = parts.next().unwrap_or("").to_string();
            let name = parts.next().unwrap_or("").to_string();
            if parts.next().is_some() {
                return Err(err(line, format!("malformed section header `{content}`")));
            }
            match (kind.as_str(), name.is_empty()) {
                ("experiment", true) => {}
                ("cell", false) => {}
                _ => {
                    return Err(err(
                        line,
                        format!("expected `[experiment]` or `[cell NAME]`, got `{content}`"),
                    ))
                }
            }
            if sections.iter().any(|s| s.kind == kind && s.name == name) {
                return Err(err(line, format!("duplicate section `{content}`")));
            }
            sections.push(Section {
                kind,
                name,
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim().to_string();
        let section = sections
            .last_mut()
            .ok_or_else(|| err(line, "key outside of any section".into()))?;
        if section.entries.iter().any(|e| e.key == key) {
            return Err(err(line, format!("duplicate key `{key}`")));
        }
        section.entries.push(Entry {
            key,
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(sections)
}

/// Fully resolved settings of one grid section.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub placement: Placement,
    pub values: Vec<f64>,
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub blocks: usize,
    pub bn_affine: bool,
    pub bn_momentum: f64,
    pub generator: Generator,
    pub classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub noise: f64,
    pub data_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub scan_passes: usize,
    pub scan_batch: usize,
    pub votes: usize,
    pub vote_batch: usize,
    pub adjust: bool,
    pub adjust_passes: usize,
    pub adjust_policy: AveragePolicy,
}

impl Default for Settings {
    fn default() -> Self {
        let toy = CellSpec::toy(Placement::DropA, 0.0, 32, 0);
        let adjust = toy.adjust.unwrap_or_default();
        Settings {
            placement: Placement::DropA,
            values: vec![0.0, 0.1, 0.3, 0.5, 0.7],
            widths: toy.arch.hidden.clone(),
            seeds: (0..5).collect(),
            blocks: toy.arch.num_blocks,
            bn_affine: toy.arch.bn_affine,
            bn_momentum: toy.arch.bn_momentum,
            generator: toy.dataset.generator,
            classes: toy.dataset.num_classes,
            samples_per_class: toy.dataset.samples_per_class,
            input_dim: toy.dataset.input_dim,
            noise: toy.dataset.noise_scale,
            data_seed: toy.dataset.seed,
            epochs: toy.train.epochs,
            batch_size: toy.train.batch_size,
            learning_rate: toy.train.learning_rate,
            momentum: toy.train.momentum,
            weight_decay: toy.train.weight_decay,
            decay_epochs: toy.train.decay_epochs.clone(),
            decay_factor: toy.train.decay_factor,
            scan_passes: toy.scan.passes,
            scan_batch: toy.scan.batch_size,
            votes: toy.votes.votes,
            vote_batch: toy.votes.batch_size,
            adjust: true,
            adjust_passes: adjust.passes,
            adjust_policy: adjust.policy.unwrap_or(AveragePolicy::Cumulative),
        }
    }
}

fn scalar<T: FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse `{value}`"))
}

fn list<T: FromStr>(value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(scalar)
        .collect()
}

fn boolean(value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{value}`")),
    }
}

pub fn parse_placement(value: &str) -> Result<Placement, String> {
    Placement::from_name(value).ok_or_else(|| {
        format!("unknown placement `{value}` (none, drop_a, drop_b, last_layer, uout_b)")
    })
}

pub fn parse_generator(value: &str) -> Result<Generator, String> {
    match value {
        "blobs" => Ok(Generator::GaussianBlobs),
        "rings" => Ok(Generator::ConcentricRings),
        _ => Err(format!("unknown generator `{value}` (blobs, rings)")),
    }
}

impl Settings {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "placement" => self.placement = parse_placement(value)?,
            "values" => self.values = list(value)?,
            "widths" => self.widths = list(value)?,
            "seeds" => self.seeds = list(value)?,
            "blocks" => self.blocks = scalar(value)?,
            "bn_affine" => self.bn_affine = boolean(value)?,
            "bn_momentum" => self.bn_momentum = scalar(value)?,
            "generator" => self.generator = parse_generator(value)?,
            "classes" => self.classes = scalar(value)?,
            "samples_per_class" => self.samples_per_class = scalar(value)?,
            "input_dim" => self.input_dim = scalar(value)?,
            "noise" => self.noise = scalar(value)?,
            "data_seed" => self.data_seed = scalar(value)?,
            "epochs" => self.epochs = scalar(value)?,
            "batch_size" => self.batch_size = scalar(value)?,
            "learning_rate" => self.learning_rate = scalar(value)?,
            "momentum" => self.momentum = scalar(value)?,
            "weight_decay" => self.weight_decay = scalar(value)?,
            "decay_epochs" => self.decay_epochs = list(value)?,
            "decay_factor" => self.decay_factor = scalar(value)?,
            "scan_passes" => self.scan_passes = scalar(value)?,
            "scan_batch" => self.scan_batch = scalar(value)?,
            "votes" => self.votes = scalar(value)?,
            "vote_batch" => self.vote_batch = scalar(value)?,
            "adjust" => self.adjust = boolean(value)?,
            "adjust_passes" => self.adjust_passes = scalar(value)?,
            "adjust_policy" => {
                self.adjust_policy = match value {
                    "cumulative" => AveragePolicy::Cumulative,
                    "ema" => AveragePolicy::Exponential {
                        momentum: self.bn_momentum,
                    },
                    _ => return Err(format!("unknown adjust_policy `{value}` (cumulative, ema)")),
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// The cell for one grid point.
    pub fn cell(&self, name: String, value: f64, width: usize, seed: u64) -> CellSpec {
        let uout = self.placement == Placement::UoutB;
        CellSpec {
            name,
            dataset: SyntheticDatasetSpec {
                generator: self.generator,
                num_classes: self.classes,
                samples_per_class: self.samples_per_class,
                input_dim: self.input_dim,
                noise_scale: self.noise,
                seed: self.data_seed.wrapping_add(seed),
            },
            arch: ArchSpec {
                input_dim: self.input_dim,
                hidden: vec![width],
                num_blocks: self.blocks,
                num_classes: self.classes,
                placement: self.placement,
                drop_ratio: if uout { 0.0 } else { value },
                beta: if uout { value } else { 0.0 },
                bn_affine: self.bn_affine,
                bn_momentum: self.bn_momentum,
            },
            train: TrainConfig {
                epochs: self.epochs,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
                seed,
                decay_epochs: self.decay_epochs.clone(),
                decay_factor: self.decay_factor,
            },
            scan: StreamOptions {
                passes: self.scan_passes,
                batch_size: self.scan_batch,
                policy: None,
            },
            votes: VoteOptions {
                votes: self.votes,
                batch_size: self.vote_batch,
            },
            adjust: self.adjust.then_some(StreamOptions {
                passes: self.adjust_passes,
                batch_size: self.scan_batch,
                policy: Some(self.adjust_policy),
            }),
            init_seed: seed,
        }
    }
}

/// A grid point of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    /// Name of the `[cell NAME]` section.
    pub section: String,
    pub placement: Placement,
    pub value: f64,
    pub width: usize,
    pub seed: u64,
    #[serde(skip)]
    pub spec: CellSpec,
}

impl GridCell {
    pub fn id(&self) -> &str {
        &self.spec.name
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub path: PathBuf,
    pub sections: Vec<(String, Settings)>,
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> AppResult<Self> {
        let err = |line: usize, message: String| AppError::Config {
            path: path.to_path_buf(),
            line,
            message,
        };
        let raw = parse_sections(text, path)?;
        let mut defaults = Settings::default();
        for section in raw.iter().filter(|s| s.kind == "experiment") {
            for e in &section.entries {
                defaults
                    .apply(&e.key, &e.value)
                    .map_err(|m| err(e.line, m))?;
            }
        }
        let mut sections = Vec::new();
        for section in raw.iter().filter(|s| s.kind == "cell") {
            let mut settings = defaults.clone();
            for e in &section.entries {
                settings
                    .apply(&e.key, &e.value)
                    .map_err(|m| err(e.line, m))?;
            }
            for (axis, empty) in [
                ("values", settings.values.is_empty()),
                ("widths", settings.widths.is_empty()),
                ("seeds", settings.seeds.is_empty()),
            ] {
                if empty {
                    return Err(err(
                        section.line,
                        format!("cell `{}` has no {axis}", section.name),
                    ));
                }
            }
            sections.push((section.name.clone(), settings));
        }
        if sections.is_empty() {
            return Err(err(0, "empty grid: no `[cell NAME]` sections".into()));
        }
        Ok(ExperimentConfig {
            path: path.to_path_buf(),
            sections,
        })
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Every grid point, ordered by section, value, width, seed.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for (section, s) in &self.sections {
            for &value in &s.values {
                for &width in &s.widths {
                    for &seed in &s.seeds {
                        let name =
                            format!("{section}-{}-v{value}-w{width}-s{seed}", s.placement.name());
                        out.push(GridCell {
                            section: section.clone(),
                            placement: s.placement,
                            value,
                            width,
                            seed,
                            spec: s.cell(name, value, width, seed),
                        });
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> AppResult<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("test.cfg"))
    }

    #[test]
    fn defaults_and_overrides() {
        let cfg = parse(
            "[experiment]\nseeds = 1, 2\nepochs = 3 # short\n\n[cell a]\nplacement = drop_b\nvalues = 0.5\nwidths = 16, 512\nepochs = 4\n",
        )
        .unwrap();
        let cells = cfg.cells();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].spec.train.epochs, 4);
        assert_eq!(cells[0].spec.arch.placement, Placement::DropB);
        assert_eq!(cells[1].seed, 2);
        assert_eq!(cells[2].width, 512);
        assert_eq!(cells[0].id(), "a-drop_b-v0.5-w16-s1");
    }

    #[test]
    fn uout_values_are_betas() {
        let cfg = parse("[cell u]\nplacement = uout_b\nvalues = 0.5\nseeds = 0\n").unwrap();
        let spec = &cfg.cells()[0].spec;
        assert_eq!(spec.arch.beta, 0.5);
        assert_eq!(spec.arch.drop_ratio, 0.0);
    }

    #[test]
    fn unknown_key_is_an_error_with_line() {
        let e = parse("[experiment]\nepochs = 3\nlearnin_rate = 0.1\n[cell a]\n").unwrap_err();
        match e {
            AppError::Config { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("learnin_rate"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_inputs_rejected() {
        for text in [
            "epochs = 3\n",
            "[cell]\n",
            "[cell a\n",
            "[other]\n",
            "[cell a]\nepochs 3\n",
            "[cell a]\nepochs = x\n",
            "[cell a]\nepochs = 1\nepochs = 2\n",
            "[cell a]\n[cell a]\n",
            "[cell a]\nvalues =\n",
            "[cell a]\nplacement = sideways\n",
            "[cell a]\nbn_affine = yes\n",
        ] {
            assert!(parse(text).is_err(), "{text:?}");
        }
    }

    #[test]
    fn empty_grid_is_an_error() {
        assert!(parse("[experiment]\nepochs = 3\n").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn every_documented_key_is_accepted() {
        let samples = [
            ("placement", "none"),
            ("values", "0.1"),
            ("widths", "8"),
            ("seeds", "0"),
            ("blocks", "2"),
            ("bn_affine", "true"),
            ("bn_momentum", "0.2"),
            ("generator", "rings"),
            ("classes", "3"),
            ("samples_per_class", "10"),
            ("input_dim", "4"),
            ("noise", "0.5"),
            ("data_seed", "7"),
            ("epochs", "1"),
            ("batch_size", "8"),
            ("learning_rate", "0.01"),
            ("momentum", "0.5"),
            ("weight_decay", "0.0001"),
            ("decay_epochs", "1, 2"),
            ("decay_factor", "0.5"),
            ("scan_passes", "2"),
            ("scan_batch", "16"),
            ("votes", "3"),
            ("vote_batch", "64"),
            ("adjust", "false"),
            ("adjust_passes", "3"),
            ("adjust_policy", "ema"),
        ];
        assert_eq!(samples.len(), KEYS.len());
        let mut s = Settings::default();
        for ((key, value), (doc_key, _)) in samples.iter().zip(KEYS) {
            assert_eq!(key, doc_key);
            s.apply(key, value).unwrap();
        }
    }
}
