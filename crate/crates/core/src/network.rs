//! Sequential networks and the builders for each Dropout placement.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::layers::{BatchNorm, Dense, Dropout, Relu, Uout};
use crate::math::sqrt;
use crate::stats::AveragePolicy;
use crate::{Error, LayerMode, Result, RngStream, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    BatchNorm(BatchNorm),
    Relu(Relu),
    Dropout(Dropout),
    Uout(Uout),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Dense,
    BatchNorm,
    Relu,
    Dropout,
    Uout,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::Uout(_) => LayerKind::Uout,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Layer::Dropout(_) | Layer::Uout(_))
    }
}

/// Where the stochastic layers go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Placement {
    /// No Dropout or Uout anywhere.
    None,
    /// Dropout directly before every batch norm layer.
    DropA,
    /// Dropout before the dense layer of every block whose input is a hidden
    /// feature vector (every block but the first); that dense layer feeds
    /// batch norm.
    DropB,
    /// One Dropout after the last block, right before the classifier.
    LastLayer,
    /// Uout in the DropB positions.
    UoutB,
}

impl Placement {
    pub const ALL: [Placement; 5] = [
        Placement::None,
        Placement::DropA,
        Placement::DropB,
        Placement::LastLayer,
        Placement::UoutB,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Placement::None => "none",
            Placement::DropA => "drop_a",
            Placement::DropB => "drop_b",
            Placement::LastLayer => "last_layer",
            Placement::UoutB => "uout_b",
        }
    }

    pub fn from_name(name: &str) -> Option<Placement> {
        Placement::ALL.into_iter().find(|p| p.name() == name)
    }
}

/// Architecture of a Dense -> BN -> ReLU block stack with a linear
/// classifier on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    /// One width per block, or a single width shared by all blocks.
    pub hidden: Vec<usize>,
    pub num_blocks: usize,
    pub num_classes: usize,
    pub placement: Placement,
    /// User-facing drop ratio `1 - p`.
    pub drop_ratio: f64,
    pub beta: f64,
    pub bn_affine: bool,
    pub bn_momentum: f64,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec {
            input_dim: 16,
            hidden: vec![32],
            num_blocks: 6,
            num_classes: 4,
            placement: Placement::None,
            drop_ratio: 0.0,
            beta: 0.0,
            bn_affine: false,
            bn_momentum: BatchNorm::DEFAULT_MOMENTUM,
        }
    }
}

impl ArchSpec {
    pub fn widths(&self) -> Result<Vec<usize>> {
        match self.hidden.len() {
            1 => Ok(vec![self.hidden[0]; self.num_blocks]),
            n if n == self.num_blocks => Ok(self.hidden.clone()),
            n => Err(Error::shape(format!(
                "{n} hidden widths for {} blocks",
                self.num_blocks
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 || self.num_blocks == 0 {
            return Err(Error::shape(
                "need input_dim >= 1, num_classes >= 2 and num_blocks >= 1",
            ));
        }
        if self.widths()?.contains(&0) {
            return Err(Error::shape("hidden widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.drop_ratio) {
            return Err(Error::domain(format!(
                "drop ratio {} must lie in [0, 1)",
                self.drop_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::domain(format!(
                "beta {} must lie in [0, 1]",
                self.beta
            )));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::domain("batch norm momentum must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Called with `(bn_index, input, layer)` right before batch norm layer
/// `bn_index` (0-based, shallow to deep) normalizes `input`.
pub type BnTap<'a> = dyn FnMut(usize, &Tensor, &mut BatchNorm) + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn count(&self, kind: LayerKind) -> usize {
        self.layers.iter().filter(|l| l.kind() == kind).count()
    }

    pub fn has_stochastic_layers(&self) -> bool {
        self.layers.iter().any(Layer::is_stochastic)
    }

    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm> {
        self.layers.iter().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    pub fn batch_norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d.d_out()),
            _ => None,
        })
    }

    pub fn forward(&mut self, x: &Tensor, mode: LayerMode, rng: &mut RngStream) -> Result<Tensor> {
        self.forward_tapped(x, mode, rng, &mut |_, _, _| {})
    }

    /// Forward pass that hands every batch norm input to `tap` first.
    pub fn forward_tapped(
        &mut self,
        x: &Tensor,
        mode: LayerMode,
        rng: &mut RngStream,
        tap: &mut BnTap<'_>,
    ) -> Result<Tensor> {
        let mut h = x.clone();
        let mut bn_index = 0;
        for layer in &mut self.layers {
            h = match layer {
                Layer::Dense(d) => {
                    if mode == LayerMode::Train {
                        d.forward(&h)?
                    } else {
                        d.apply(&h)?
                    }
                }
                Layer::BatchNorm(bn) => {
                    tap(bn_index, &h, bn);
                    bn_index += 1;
                    bn.forward(&h, mode)?
                }
                Layer::Relu(r) => r.forward(&h),
                Layer::Dropout(d) => d.forward(&h, mode, rng),
                Layer::Uout(u) => u.forward(&h, mode, rng),
            };
        }
        Ok(h)
    }

    /// Backpropagates `grad` from the output; parameter gradients are stored
    /// in the layers. Returns the gradient with respect to the input.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = match layer {
                Layer::Dense(d) => d.backward(&g)?,
                Layer::BatchNorm(bn) => bn.backward(&g)?,
                Layer::Relu(r) => r.backward(&g)?,
                Layer::Dropout(d) => d.backward(&g)?,
                Layer::Uout(u) => u.backward(&g)?,
            };
        }
        Ok(g)
    }

    /// Visits every learnable parameter slice with its gradient, in a fixed
    /// order: dense weights and biases, then batch norm scale and shift.
    pub fn for_each_param(&mut self, mut f: impl FnMut(&mut [f64], &[f64])) {
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    for (p, g) in d.params_and_grads() {
                        f(p, g);
                    }
                }
                Layer::BatchNorm(bn) => {
                    if let Some(a) = bn.affine_mut() {
                        let gg = a.grad_gamma().to_vec();
                        let gb = a.grad_beta().to_vec();
                        f(&mut a.gamma, &gg);
                        f(&mut a.beta, &gb);
                    }
                }
                _ => {}
            }
        }
    }

    /// Copies of the learnable parameters in [`for_each_param`](Self::for_each_param) order.
    pub fn parameters(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(d.weights().to_vec());
                    if let Some(b) = d.bias() {
                        out.push(b.to_vec());
                    }
                }
                Layer::BatchNorm(bn) => {
                    if let Some(a) = bn.affine() {
                        out.push(a.gamma.clone());
                        out.push(a.beta.clone());
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// FNV-1a hash over the bit patterns of every learnable parameter.
    pub fn parameter_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for block in self.parameters() {
            for v in block {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Deterministic Eval-mode logits.
    pub fn eval_logits(&mut self, x: &Tensor) -> Result<Tensor> {
        // Eval mode draws no random numbers.
        let mut rng = RngStream::new(0, 0);
        self.forward(x, LayerMode::Eval, &mut rng)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Builds the block stack for `arch`. Dense weights are drawn from
/// `N(0, 1/fan_in)`; biases start at zero.
pub fn build_network(arch: &ArchSpec, rng: &mut RngStream) -> Result<Network> {
    arch.validate()?;
    let widths = arch.widths()?;
    let mut layers = Vec::new();
    let mut fan_in = arch.input_dim;
    let stochastic = |arch: &ArchSpec| -> Result<Layer> {
        Ok(match arch.placement {
            Placement::UoutB => Layer::Uout(Uout::new(arch.beta)?),
            _ => Layer::Dropout(Dropout::from_drop_ratio(arch.drop_ratio)?),
        })
    };
    for (k, &w) in widths.iter().enumerate() {
        if matches!(arch.placement, Placement::DropB | Placement::UoutB) && k > 0 {
            layers.push(stochastic(arch)?);
        }
        layers.push(Layer::Dense(init_dense(fan_in, w, rng)?));
        if arch.placement == Placement::DropA {
            layers.push(stochastic(arch)?);
        }
        layers.push(Layer::BatchNorm(BatchNorm::with_options(
            w,
            AveragePolicy::Exponential {
                momentum: arch.bn_momentum,
            },
            BatchNorm::DEFAULT_EPSILON,
            arch.bn_affine,
        )?));
        layers.push(Layer::Relu(Relu::new()));
        fan_in = w;
    }
    if arch.placement == Placement::LastLayer {
        layers.push(stochastic(arch)?);
    }
    layers.push(Layer::Dense(init_dense(fan_in, arch.num_classes, rng)?));
    Ok(Network::new(layers))
}

fn init_dense(d_in: usize, d_out: usize, rng: &mut RngStream) -> Result<Dense> {
    let scale = 1.0 / sqrt(d_in as f64);
    let w = (0..d_in * d_out)
        .map(|_| scale * rng.standard_normal())
        .collect();
    Dense::new(d_in, d_out, w, Some(vec![0.0; d_out]))
}
