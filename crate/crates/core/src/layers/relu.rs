use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relu {
    active: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let active: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        self.active = Some(active);
        Tensor::from_parts(x.shape().to_vec(), data)
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let active = self
            .active
            .as_ref()
            .ok_or_else(|| Error::state("relu backward without a cached forward"))?;
        if active.len() != grad_out.len() {
            return Err(Error::shape(
                "relu backward: gradient size differs from input",
            ));
        }
        let data = grad_out
            .data()
            .iter()
            .zip(active)
            .map(|(&g, &a)| if a { g } else { 0.0 })
            .collect();
        Ok(Tensor::from_parts(grad_out.shape().to_vec(), data))
    }
}
