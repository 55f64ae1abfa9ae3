//! Plain-text network checkpoints.
//!
//! ```text
//! varshift-checkpoint 1
//! meta arch.placement = drop_a
//! array layer.0.weight [32, 16] = 0.12 -0.3 ...
//! ```
//!
//! The first line carries the format version. `meta` lines hold scalars,
//! `array` lines hold a declared shape followed by that many values. The
//! architecture metadata is enough to rebuild the layer stack; the arrays
//! then overwrite its parameters and batch norm statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use varshift_core::data::SyntheticDatasetSpec;
use varshift_core::network::{build_network, ArchSpec, Layer, Network};
use varshift_core::stats::AveragePolicy;
use varshift_core::RngStream;

use crate::config::{parse_generator, parse_placement};
use crate::error::{AppError, AppResult};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "varshift-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    /// The dataset the network was trained on, when it was synthetic.
    pub dataset: Option<SyntheticDatasetSpec>,
    pub network: Network,
}

fn generator_name(g: varshift_core::data::Generator) -> &'static str {
    match g {
        varshift_core::data::Generator::GaussianBlobs => "blobs",
        varshift_core::data::Generator::ConcentricRings => "rings",
    }
}

fn policy_name(p: AveragePolicy) -> String {
    match p {
        AveragePolicy::Exponential { momentum } => format!("ema:{momentum}"),
        AveragePolicy::Cumulative => "cumulative".into(),
    }
}

fn parse_policy(s: &str) -> Result<AveragePolicy, String> {
    if s == "cumulative" {
        return Ok(AveragePolicy::Cumulative);
    }
    s.strip_prefix("ema:")
        .and_then(|m| m.parse().ok())
        .map(|momentum| AveragePolicy::Exponential { momentum })
        .ok_or_else(|| format!("bad averaging policy `{s}`"))
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(sep)
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let a = &self.arch;
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\n");
        let mut meta = |k: &str, v: String| {
            let _ = writeln!(out, "meta {k} = {v}");
        };
        meta("arch.input_dim", a.input_dim.to_string());
        meta("arch.hidden", join(&a.hidden, ","));
        meta("arch.num_blocks", a.num_blocks.to_string());
        meta("arch.num_classes", a.num_classes.to_string());
        meta("arch.placement", a.placement.name().into());
        meta("arch.drop_ratio", a.drop_ratio.to_string());
        meta("arch.beta", a.beta.to_string());
        meta("arch.bn_affine", a.bn_affine.to_string());
        meta("arch.bn_momentum", a.bn_momentum.to_string());
        if let Some(d) = &self.dataset {
            meta("data.generator", generator_name(d.generator).into());
            meta("data.num_classes", d.num_classes.to_string());
            meta("data.samples_per_class", d.samples_per_class.to_string());
            meta("data.input_dim", d.input_dim.to_string());
            meta("data.noise_scale", d.noise_scale.to_string());
            meta("data.seed", d.seed.to_string());
        }
        for (i, layer) in self.network.layers().iter().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    array(
                        &mut out,
                        &format!("layer.{i}.weight"),
                        &[d.d_out(), d.d_in()],
                        d.weights(),
                    );
                    if let Some(b) = d.bias() {
                        array(&mut out, &format!("layer.{i}.bias"), &[d.d_out()], b);
                    }
                }
                Layer::BatchNorm(bn) => {
                    let c = bn.channels();
                    let _ = writeln!(out, "meta layer.{i}.updates = {}", bn.running().updates);
                    let _ = writeln!(
                        out,
                        "meta layer.{i}.policy = {}",
                        policy_name(bn.running().policy)
                    );
                    array(
                        &mut out,
                        &format!("layer.{i}.moving_mean"),
                        &[c],
                        bn.moving_mean(),
                    );
                    array(
                        &mut out,
                        &format!("layer.{i}.moving_var"),
                        &[c],
                        bn.moving_var(),
                    );
                    if let Some(af) = bn.affine() {
                        array(&mut out, &format!("layer.{i}.gamma"), &[c], &af.gamma);
                        array(&mut out, &format!("layer.{i}.beta"), &[c], &af.beta);
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn parse(text: &str) -> AppResult<Self> {
        let bad =
            |line: usize, msg: String| AppError::invalid(format!("checkpoint line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad(1, format!("missing `{MAGIC}` header")))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(bad(1, format!("unsupported format version `{version}`")));
        }
        let mut meta: BTreeMap<String, String> = BTreeMap::new();
        let mut arrays: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for (i, line) in lines {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (kind, rest) = line
                .split_once(' ')
                .ok_or_else(|| bad(n, "malformed line".into()))?;
            let (lhs, rhs) = rest
                .split_once('=')
                .ok_or_else(|| bad(n, "missing `=`".into()))?;
            let lhs = lhs.trim();
            match kind {
                "meta" => {
                    if meta
                        .insert(lhs.to_string(), rhs.trim().to_string())
                        .is_some()
                    {
                        return Err(bad(n, format!("duplicate key `{lhs}`")));
                    }
                }
                "array" => {
                    let (key, shape) = lhs
                        .split_once(' ')
                        .ok_or_else(|| bad(n, "array needs a key and a shape".into()))?;
                    let shape = shape
                        .trim()
                        .strip_prefix('[')
                        .and_then(|s| s.strip_suffix(']'))
                        .ok_or_else(|| bad(n, format!("bad shape `{shape}`")))?;
                    let shape: Vec<usize> = shape
                        .split(',')
                        .map(|s| s.trim().parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad(n, format!("bad shape `[{shape}]`")))?;
                    let values: Vec<f64> = rhs
                        .split_whitespace()
                        .map(str::parse)
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad(n, format!("bad value in `{key}`")))?;
                    if values.len() != shape.iter().product::<usize>() {
                        return Err(bad(
                            n,
                            format!("`{key}` declares {shape:?} but has {} values", values.len()),
                        ));
                    }
                    if arrays.insert(key.to_string(), (shape, values)).is_some() {
                        return Err(bad(n, format!("duplicate key `{key}`")));
                    }
                }
                _ => return Err(bad(n, format!("unknown line kind `{kind}`"))),
            }
        }

        fn take(meta: &mut BTreeMap<String, String>, k: &str) -> AppResult<String> {
            meta.remove(k)
                .ok_or_else(|| AppError::invalid(format!("checkpoint is missing `{k}`")))
        }
        fn num<T: std::str::FromStr>(k: &str, v: String) -> AppResult<T> {
            v.parse()
                .map_err(|_| AppError::invalid(format!("checkpoint `{k}`: cannot parse `{v}`")))
        }
        let hidden = take(&mut meta, "arch.hidden")?
            .split(',')
            .map(|s| num("arch.hidden", s.trim().to_string()))
            .collect::<AppResult<Vec<usize>>>()?;
        let arch = ArchSpec {
            input_dim: num("arch.input_dim", take(&mut meta, "arch.input_dim")?)?,
            hidden,
            num_blocks: num("arch.num_blocks", take(&mut meta, "arch.num_blocks")?)?,
            num_classes: num("arch.num_classes", take(&mut meta, "arch.num_classes")?)?,
            placement: parse_placement(&take(&mut meta, "arch.placement")?)
                .map_err(AppError::Invalid)?,
            drop_ratio: num("arch.drop_ratio", take(&mut meta, "arch.drop_ratio")?)?,
            beta: num("arch.beta", take(&mut meta, "arch.beta")?)?,
            bn_affine: num("arch.bn_affine", take(&mut meta, "arch.bn_affine")?)?,
            bn_momentum: num("arch.bn_momentum", take(&mut meta, "arch.bn_momentum")?)?,
        };
        let dataset = if meta.contains_key("data.generator") {
            Some(SyntheticDatasetSpec {
                generator: parse_generator(&take(&mut meta, "data.generator")?)
                    .map_err(AppError::Invalid)?,
                num_classes: num("data.num_classes", take(&mut meta, "data.num_classes")?)?,
                samples_per_class: num(
                    "data.samples_per_class",
                    take(&mut meta, "data.samples_per_class")?,
                )?,
                input_dim: num("data.input_dim", take(&mut meta, "data.input_dim")?)?,
                noise_scale: num("data.noise_scale", take(&mut meta, "data.noise_scale")?)?,
                seed: num("data.seed", take(&mut meta, "data.seed")?)?,
            })
        } else {
            None
        };

        let mut network = build_network(&arch, &mut RngStream::new(0, 0))?;
        let mut grab = |key: String, shape: &[usize]| -> AppResult<Vec<f64>> {
            let (s, v) = arrays
                .remove(&key)
                .ok_or_else(|| AppError::invalid(format!("checkpoint is missing array `{key}`")))?;
            if s != shape {
                return Err(AppError::invalid(format!(
                    "checkpoint array `{key}` has shape {s:?}, expected {shape:?}"
                )));
            }
            Ok(v)
        };
        for (i, layer) in network.layers_mut().iter_mut().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    let w = grab(format!("layer.{i}.weight"), &[d.d_out(), d.d_in()])?;
                    d.weights_mut().copy_from_slice(&w);
                    let out = d.d_out();
                    if let Some(b) = d.bias_mut() {
                        b.copy_from_slice(&grab(format!("layer.{i}.bias"), &[out])?);
                    }
                }
                Layer::BatchNorm(bn) => {
                    let c = bn.channels();
                    let mean = grab(format!("layer.{i}.moving_mean"), &[c])?;
                    let var = grab(format!("layer.{i}.moving_var"), &[c])?;
                    bn.set_moving(mean, var)?;
                    let key = format!("layer.{i}.updates");
                    bn.running_mut().updates = num(&key, take(&mut meta, &key)?)?;
                    let key = format!("layer.{i}.policy");
                    bn.running_mut().policy =
                        parse_policy(&take(&mut meta, &key)?).map_err(AppError::Invalid)?;
                    if let Some(af) = bn.affine_mut() {
                        af.gamma = grab(format!("layer.{i}.gamma"), &[c])?;
                        af.beta = grab(format!("layer.{i}.beta"), &[c])?;
                    }
                }
                _ => {}
            }
        }
        if let Some(k) = meta.keys().next().or_else(|| arrays.keys().next()) {
            return Err(AppError::invalid(format!(
                "checkpoint has unknown key `{k}`"
            )));
        }
        if network
            .parameters()
            .iter()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(AppError::invalid("checkpoint holds non-finite parameters"));
        }
        Ok(Checkpoint {
            arch,
            dataset,
            network,
        })
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        crate::report::write_file(path, &self.to_text())
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text)
    }
}

fn array(out: &mut String, key: &str, shape: &[usize], values: &[f64]) {
    let _ = write!(out, "array {key} [{}] =", join(shape, ", "));
    for v in values {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

#[cfg(test)]
mod tests {
    use super::*;
    use varshift_core::data::make_dataset;
    use varshift_core::network::Placement;
    use varshift_core::train::{train, TrainConfig};

    fn sample(affine: bool) -> Checkpoint {
        let dataset = SyntheticDatasetSpec {
            samples_per_class: 20,
            input_dim: 4,
            ..Default::default()
        };
        let arch = ArchSpec {
            input_dim: 4,
            hidden: vec![6, 5],
            num_blocks: 2,
            placement: Placement::DropA,
            drop_ratio: 0.3,
            bn_affine: affine,
            ..Default::default()
        };
        let mut network = build_network(&arch, &mut RngStream::new(3, 0)).unwrap();
        let split = make_dataset(&dataset).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        };
        train(&mut network, &split.train, &cfg).unwrap();
        Checkpoint {
            arch,
            dataset: Some(dataset),
            network,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for affine in [false, true] {
            let ck = sample(affine);
            let text = ck.to_text();
            assert!(text.starts_with("varshift-checkpoint 1\n"));
            let back = Checkpoint::parse(&text).unwrap();
            assert_eq!(back.arch, ck.arch);
            assert_eq!(back.dataset, ck.dataset);
            assert_eq!(back.network.parameters(), ck.network.parameters());
            for (a, b) in back.network.batch_norms().zip(ck.network.batch_norms()) {
                assert_eq!(a.running(), b.running());
            }
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let text = sample(false).to_text();
        let cases = [
            String::new(),
            text.replacen("varshift-checkpoint 1", "varshift-checkpoint 2", 1),
            text.replacen("[6, 4]", "[4, 6, 1]", 1),
            text.replacen("meta arch.beta", "meta arch.bta", 1),
            format!("{text}meta extra = 1\n"),
            format!("{text}array layer.99.weight [1] = 1\n"),
            format!("{text}weird line = 1\n"),
            text.replacen("layer.0.weight [6, 4] = ", "layer.0.weight [6, 4] = x ", 1),
        ];
        for c in &cases {
            assert!(Checkpoint::parse(c).is_err(), "{}", &c[..c.len().min(80)]);
        }
    }
}
