//! Bernoulli masks and equicorrelated Gaussian vectors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;
use crate::{Error, Result, RngStream, Tensor};

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("probability {p} is outside [0, 1]")));
    }
    Ok(())
}

/// `n` independent Bernoulli(`p`) draws as a 1-D tensor of zeros and ones.
pub fn sample_bernoulli_mask(p: f64, n: usize, rng: &mut RngStream) -> Result<Tensor> {
    check_probability(p)?;
    if n == 0 {
        return Err(Error::Empty("mask length is zero".into()));
    }
    let data = (0..n)
        .map(|_| if rng.bernoulli(p) { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::from_parts(vec![n], data))
}

/// Parameters of the common-factor Gaussian: every coordinate has mean `c`
/// and variance `v`, every distinct pair has correlation `rho`.
#[derive(Debug, Clone, Copy)]
pub struct Equicorrelated {
    c: f64,
    common: f64,
    own: f64,
}

impl Equicorrelated {
    pub fn new(c: f64, v: f64, rho: f64) -> Result<Self> {
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::domain(format!("variance {v} must be positive")));
        }
        if !c.is_finite() {
            return Err(Error::domain("mean must be finite"));
        }
        if rho.is_nan() || !(0.0..=1.0).contains(&rho) {
            return Err(Error::UnsupportedCorrelation(rho));
        }
        let sd = sqrt(v);
        Ok(Equicorrelated {
            c,
            common: sd * sqrt(rho),
            own: sd * sqrt(1.0 - rho),
        })
    }

    /// Writes one vector `x_i = c + sqrt(v) (sqrt(rho) z0 + sqrt(1 - rho) z_i)`.
    #[inline]
    pub fn fill(&self, out: &mut [f64], rng: &mut RngStream) {
        let shared = self.c + self.common * rng.standard_normal();
        if self.own == 0.0 {
            out.iter_mut().for_each(|x| *x = shared);
        } else {
            for x in out.iter_mut() {
                *x = shared + self.own * rng.standard_normal();
            }
        }
    }
}

/// `n` draws of a `d`-dimensional equicorrelated Gaussian, returned as an
/// `[n, d]` tensor with one sample per row.
///
/// Only `rho` in `[0, 1]` is supported; negative equicorrelation would need
/// a full covariance factorization.
pub fn sample_equicorrelated_gaussian(
    c: f64,
    v: f64,
    rho: f64,
    d: usize,
    n: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let dist = Equicorrelated::new(c, v, rho)?;
    if d == 0 || n == 0 {
        return Err(Error::domain("dimension and count must be at least 1"));
    }
    let mut data: Vec<f64> = vec![0.0; n * d];
    for row in data.chunks_exact_mut(d) {
        dist.fill(row, rng);
    }
    Ok(Tensor::from_parts(vec![n, d], data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::StreamingMoments;

    #[test]
    fn degenerate_masks() {
        let mut rng = RngStream::new(0, 0);
        let ones = sample_bernoulli_mask(1.0, 5, &mut rng).unwrap();
        assert_eq!(ones.data(), &[1.0; 5]);
        let zeros = sample_bernoulli_mask(0.0, 5, &mut rng).unwrap();
        assert_eq!(zeros.data(), &[0.0; 5]);
    }

    #[test]
    fn mask_rejects_bad_probability() {
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            sample_bernoulli_mask(1.5, 3, &mut rng),
            Err(Error::Domain(_))
        ));
        assert!(sample_bernoulli_mask(-0.1, 3, &mut rng).is_err());
    }

    #[test]
    fn fair_mask_mean_and_variance() {
        let n = 1_000_000;
        let mut rng = RngStream::new(42, 1);
        let mask = sample_bernoulli_mask(0.5, n, &mut rng).unwrap();
        let m = StreamingMoments::from_slice(mask.data());
        // binomial standard error sqrt(p(1-p)/n) = 5e-4
        assert!((m.mean() - 0.5).abs() < 0.002, "mean {}", m.mean());
        assert!(m.variance_biased().unwrap() > 0.2499);
    }

    #[test]
    fn mask_variance_matches_p_one_minus_p() {
        let (p, n) = (0.3, 1_000_000);
        let mut rng = RngStream::new(42, 2);
        let mask = sample_bernoulli_mask(p, n, &mut rng).unwrap();
        let var = StreamingMoments::from_slice(mask.data())
            .variance_biased()
            .unwrap();
        // standard error of a sample variance: sqrt((mu4 - sigma^4) / n)
        let sigma2 = p * (1.0 - p);
        let mu4 = sigma2 * (1.0 - 3.0 * p + 3.0 * p * p);
        let se = sqrt((mu4 - sigma2 * sigma2) / n as f64);
        assert!((var - sigma2).abs() < 4.0 * se, "var {var}, se {se}");
    }

    #[test]
    fn mask_is_reproducible() {
        let a = sample_bernoulli_mask(0.3, 100, &mut RngStream::new(9, 2)).unwrap();
        let b = sample_bernoulli_mask(0.3, 100, &mut RngStream::new(9, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_negative_correlation_and_bad_variance() {
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            sample_equicorrelated_gaussian(0.0, 1.0, -0.2, 3, 10, &mut rng),
            Err(Error::UnsupportedCorrelation(_))
        ));
        assert!(matches!(
            sample_equicorrelated_gaussian(0.0, 0.0, 0.2, 3, 10, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn perfect_correlation_repeats_coordinates() {
        let mut rng = RngStream::new(3, 0);
        let x = sample_equicorrelated_gaussian(1.0, 2.0, 1.0, 2, 50, &mut rng).unwrap();
        for i in 0..50 {
            assert_eq!(x.row(i)[0], x.row(i)[1]);
        }
    }

    fn pair_correlation(x: &Tensor, i: usize, j: usize) -> f64 {
        let n = x.rows();
        let (mut mi, mut mj) = (0.0, 0.0);
        for r in 0..n {
            mi += x.row(r)[i];
            mj += x.row(r)[j];
        }
        mi /= n as f64;
        mj /= n as f64;
        let (mut sij, mut sii, mut sjj) = (0.0, 0.0, 0.0);
        for r in 0..n {
            let a = x.row(r)[i] - mi;
            let b = x.row(r)[j] - mj;
            sij += a * b;
            sii += a * a;
            sjj += b * b;
        }
        sij / sqrt(sii * sjj)
    }

    #[test]
    fn independent_coordinates_are_uncorrelated() {
        let mut rng = RngStream::new(5, 0);
        let x = sample_equicorrelated_gaussian(0.0, 1.0, 0.0, 3, 1_000_000, &mut rng).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let r = pair_correlation(&x, i, j);
            assert!(r.abs() < 0.004, "corr({i},{j}) = {r}");
        }
    }

    #[test]
    fn coordinate_moments_match_targets() {
        let mut rng = RngStream::new(6, 0);
        let x = sample_equicorrelated_gaussian(2.0, 4.0, 0.3, 8, 1_000_000, &mut rng).unwrap();
        for k in 0..8 {
            let m = StreamingMoments::from_slice(
                &(0..x.rows()).map(|r| x.row(r)[k]).collect::<Vec<_>>(),
            );
            assert!((m.mean() - 2.0).abs() < 0.008, "mean[{k}] = {}", m.mean());
            let v = m.variance_unbiased().unwrap();
            assert!((v - 4.0).abs() < 0.03, "var[{k}] = {v}");
        }
        // standard error of a correlation estimate ~ (1 - rho^2)/sqrt(n) ~ 1e-3
        let r = pair_correlation(&x, 0, 5);
        assert!((r - 0.3).abs() < 0.004, "corr = {r}");
    }
}
