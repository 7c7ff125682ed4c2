//! Gumbel reparameterization for binary masks and SIC triples.

use rand::distr::Open01;
use rand::Rng;

use crate::autodiff::{sigmoid, Tensor};

/// Logistic noise `log U − log(1 − U)`, the difference of two Gumbels.
pub fn logistic_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    u.ln() - (1.0 - u).ln()
}

/// Standard Gumbel noise `−log(−log U)`.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

/// Relaxed binary sample `sigmoid((x + noise) / s_temp)`.
pub fn binary_soft(x: f64, noise: f64, s_temp: f64) -> f64 {
    sigmoid((x + noise) / s_temp)
}

/// Hard binary sample `1{x + noise > 0}`, i.e. the relaxed sample
/// thresholded at 0.5.
pub fn binary_hard(x: f64, noise: f64) -> f64 {
    if x + noise > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Draws a relaxed binary sample with fresh logistic noise.
pub fn gumbel<R: Rng + ?Sized>(x: f64, rng: &mut R, s_temp: f64) -> f64 {
    binary_soft(x, logistic_noise(rng), s_temp)
}

/// How a forward pass turns logits into masks and SIC decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Differentiable relaxed samples (training).
    Soft,
    /// Binary samples; SIC triples become one-hot.
    Hard,
}

/// Noise realization for one forward pass. Rows of `sic` follow the node
/// order `sample * M + bs`, with one row of three values per unordered user
/// pair inside each node: row `(sample * M + bs) * P + pair`.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelNoise {
    /// Logistic noise on the layer-skip logits, one per layer.
    pub outer: Vec<f64>,
    /// Logistic noise on the neuron-mask logits, `inner[l][j]`.
    pub inner: Vec<Vec<f64>>,
    /// Gumbel noise on the SIC triples.
    pub sic: Tensor,
    pub num_bs: usize,
    pub pairs: usize,
}

impl GumbelNoise {
    pub fn zeros(layers: usize, width: usize, samples: usize, num_bs: usize, users: usize) -> Self {
        let pairs = users * users.saturating_sub(1) / 2;
        Self {
            outer: vec![0.0; layers],
            inner: vec![vec![0.0; width]; layers],
            sic: Tensor::zeros(samples * num_bs * pairs, 3),
            num_bs,
            pairs,
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        layers: usize,
        width: usize,
        samples: usize,
        num_bs: usize,
        users: usize,
    ) -> Self {
        let mut n = Self::zeros(layers, width, samples, num_bs, users);
        n.outer.iter_mut().for_each(|x| *x = logistic_noise(rng));
        n.inner
            .iter_mut()
            .flatten()
            .for_each(|x| *x = logistic_noise(rng));
        n.sic
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = gumbel_noise(rng));
        n
    }

    pub fn samples(&self) -> usize {
        self.sic
            .rows()
            .checked_div(self.num_bs * self.pairs)
            .unwrap_or(0)
    }

    /// Moves the SIC noise of BS `m` to BS `perm[m]`.
    pub fn permute_bs(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        let (mm, pp) = (self.num_bs, self.pairs);
        for b in 0..self.samples() {
            for m in 0..mm {
                for p in 0..pp {
                    let src = (b * mm + m) * pp + p;
                    let dst = (b * mm + perm[m]) * pp + p;
                    out.sic.row_mut(dst).copy_from_slice(self.sic.row(src));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_rng;

    #[test]
    fn zero_noise_at_half() {
        // U = 0.5 gives zero logistic noise.
        assert_eq!(0.5f64.ln() - 0.5f64.ln(), 0.0);
        assert_eq!(binary_soft(0.0, 0.0, 1.0), 0.5);
        assert!(binary_soft(3.0, 0.0, 1e-4) > 1.0 - 1e-12);
    }

    #[test]
    fn hard_sample_frequency_matches_sigmoid() {
        let mut rng = sample_rng(3, 0);
        for x in [-2.0, 0.0, 2.0] {
            let n = 10_000;
            let ones = (0..n)
                .filter(|_| binary_hard(x, logistic_noise(&mut rng)) == 1.0)
                .count();
            assert!((ones as f64 / n as f64 - sigmoid(x)).abs() <= 0.02);
        }
    }

    #[test]
    fn permuting_noise_moves_rows() {
        let mut rng = sample_rng(1, 1);
        let n = GumbelNoise::sample(&mut rng, 2, 3, 2, 3, 3);
        let p = n.permute_bs(&[1, 2, 0]);
        assert_eq!(p.sic.row((3 + 1) * 3 + 2), n.sic.row((3) * 3 + 2));
        assert_eq!(p.outer, n.outer);
    }
}
