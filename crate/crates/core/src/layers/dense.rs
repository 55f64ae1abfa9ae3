use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

/// Affine map `y = x W^T + b` with `W` stored row-major as `[d_out, d_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    d_in: usize,
    d_out: usize,
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
    grad_weights: Vec<f64>,
    grad_bias: Vec<f64>,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(
        d_in: usize,
        d_out: usize,
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::shape("dense dimensions must be positive"));
        }
        if weights.len() != d_in * d_out {
            return Err(Error::shape(format!(
                "dense weights: expected {} values for [{d_out}, {d_in}], got {}",
                d_in * d_out,
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != d_out {
                return Err(Error::shape(format!(
                    "dense bias: expected {d_out} values, got {}",
                    b.len()
                )));
            }
        }
        let finite = weights
            .iter()
            .chain(bias.iter().flatten())
            .all(|w| w.is_finite());
        if !finite {
            return Err(Error::domain("dense parameters must be finite"));
        }
        Ok(Dense {
            d_in,
            d_out,
            grad_weights: vec![0.0; weights.len()],
            grad_bias: vec![0.0; d_out],
            weights,
            bias,
            input: None,
        })
    }

    /// Identity weights and zero bias on a square map.
    pub fn identity(d: usize) -> Result<Self> {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Dense::new(d, d, w, Some(vec![0.0; d]))
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut [f64]> {
        self.bias.as_deref_mut()
    }

    pub fn grad_weights(&self) -> &[f64] {
        &self.grad_weights
    }

    pub fn grad_bias(&self) -> Option<&[f64]> {
        self.bias.as_ref().map(|_| self.grad_bias.as_slice())
    }

    /// Row `o` of `W`, the weight vector feeding output unit `o`.
    pub fn unit_weights(&self, o: usize) -> &[f64] {
        &self.weights[o * self.d_in..(o + 1) * self.d_in]
    }

    /// `(parameter, gradient)` slices: weights, then bias if present.
    pub fn params_and_grads(&mut self) -> impl Iterator<Item = (&mut [f64], &[f64])> {
        let w = (self.weights.as_mut_slice(), self.grad_weights.as_slice());
        let b = self
            .bias
            .as_mut()
            .map(|b| (b.as_mut_slice(), self.grad_bias.as_slice()));
        core::iter::once(w).chain(b)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.apply(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Forward without caching the input.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let m = x.expect_matrix(self.d_in, "dense forward")?;
        let mut out = vec![0.0; m * self.d_out];
        // X [m, in] times W^T [in, out]
        gemm(
            (m, self.d_in, self.d_out),
            x.data(),
            (self.d_in, 1),
            &self.weights,
            (1, self.d_in),
            &mut out,
        );
        if let Some(b) = &self.bias {
            for yr in out.chunks_exact_mut(self.d_out) {
                yr.iter_mut().zip(b).for_each(|(y, b)| *y += b);
            }
        }
        Ok(Tensor::from_parts(vec![m, self.d_out], out))
    }

    /// Stores parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::state("dense backward without a cached forward"))?;
        let m = grad_out.expect_matrix(self.d_out, "dense backward")?;
        if m != x.rows() {
            return Err(Error::shape(format!(
                "dense backward: gradient has {m} rows, input had {}",
                x.rows()
            )));
        }
        let (d_in, d_out) = (self.d_in, self.d_out);
        let g = grad_out.data();
        // G^T [out, m] times X [m, in]
        gemm(
            (d_out, m, d_in),
            g,
            (1, d_out),
            x.data(),
            (d_in, 1),
            &mut self.grad_weights,
        );
        self.grad_bias.iter_mut().for_each(|b| *b = 0.0);
        for gr in g.chunks_exact(d_out) {
            self.grad_bias.iter_mut().zip(gr).for_each(|(b, g)| *b += g);
        }
        // G [m, out] times W [out, in]
        let mut grad_in = vec![0.0; m * d_in];
        gemm(
            (m, d_out, d_in),
            g,
            (d_out, 1),
            &self.weights,
            (d_in, 1),
            &mut grad_in,
        );
        Ok(Tensor::from_parts(vec![m, d_in], grad_in))
    }
}

/// `c = a b` for an `[m, k]` by `[k, n]` product with `c` row-major `[m, n]`.
/// Operands are addressed by `(row stride, column stride)`.
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    assert!(last(m, k, rsa, csa) < a.len());
    assert!(last(k, n, rsb, csb) < b.len());
    assert!(m * n <= c.len());
    // SAFETY: the asserts above keep every addressed element in bounds and
    // `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut d = Dense::identity(3).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        assert_eq!(d.forward(&x).unwrap(), x);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut d = Dense::identity(3).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(d.forward(&x), Err(Error::Shape(_))));
        assert!(Dense::new(2, 2, vec![0.0; 3], None).is_err());
    }

    #[test]
    fn small_affine_map() {
        let mut d = Dense::new(2, 1, vec![2.0, -1.0], Some(vec![0.5])).unwrap();
        let x = Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(d.forward(&x).unwrap().data(), &[2.5]);
        let g = d
            .backward(&Tensor::matrix(1, 1, vec![1.0]).unwrap())
            .unwrap();
        assert_eq!(g.data(), &[2.0, -1.0]);
        assert_eq!(d.grad_weights(), &[3.0, 4.0]);
        assert_eq!(d.grad_bias().unwrap(), &[1.0]);
    }

    #[test]
    fn gemm_matches_naive_product_with_strides() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        // b stored transposed: element (p, j) at j * k + p
        let bt: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![f64::NAN; m * n];
        gemm((m, k, n), &a, (k, 1), &bt, (1, k), &mut c);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * bt[j * k + p]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
    }
}
