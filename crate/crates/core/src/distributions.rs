//! Diagonal Gaussians, categoricals, and the seeded random stream.
//!
//! Each distribution has a plain-value form used for inspection and
//! prediction, and tape-level helpers used inside the objective so that
//! gradients reach the distribution parameters.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, softmax, softplus, Tensor};

/// Lower bound added to every softplus-parameterized standard deviation.
pub const STD_FLOOR: f64 = 1e-4;

/// `½ log(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Floor applied to categorical probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Seeded ChaCha8 stream.
///
/// ChaCha8 output is specified bit-for-bit, and `rand_distr`'s ziggurat
/// normal sampler is deterministic, so a `(seed, stream)` pair yields the
/// same draws on every platform. `stream` selects one of 2⁶⁴ independent
/// ChaCha streams for the same seed.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            seed,
            stream,
            draws: 0,
            rng,
        }
    }

    /// Independent child stream, keyed by a tuple of indices.
    pub fn derive(seed: u64, keys: &[u64]) -> Self {
        // FNV-1a over the keys picks the ChaCha stream id.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for k in keys {
            for b in k.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        Self::with_stream(seed, h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of scalar draws taken so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    pub fn normal(&mut self) -> f64 {
        self.draws += 1;
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.rng.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal_tensor(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| self.normal())
    }

    /// Index drawn from a probability vector by inverse CDF.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Tensor,
    pub std: Tensor,
}

impl DiagGaussian {
    pub fn new(mean: Tensor, std: Tensor) -> Result<Self> {
        mean.check_same_shape(&std, "DiagGaussian")?;
        if let Some(s) = std.data().iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Domain(format!("standard deviation {s} is not positive")));
        }
        Ok(Self { mean, std })
    }

    pub fn standard(k: usize) -> Self {
        Self {
            mean: Tensor::zeros(1, k),
            std: Tensor::filled(1, k, 1.0),
        }
    }

    /// `std = softplus(pre_std) + STD_FLOOR`.
    pub fn from_unconstrained(mean: Tensor, pre_std: &Tensor) -> Result<Self> {
        Self::new(mean, pre_std.map(|v| softplus(v) + STD_FLOOR))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut RngStream) -> Tensor {
        let mut out = self.mean.clone();
        for (o, s) in out.data_mut().iter_mut().zip(self.std.data()) {
            *o += s * rng.normal();
        }
        out
    }

    pub fn log_pdf(&self, x: &Tensor) -> Result<f64> {
        x.check_same_shape(&self.mean, "gaussian_logpdf")?;
        Ok(x
            .data()
            .iter()
            .zip(self.mean.data())
            .zip(self.std.data())
            .map(|((&x, &m), &s)| -HALF_LN_2PI - s.ln() - (x - m).powi(2) / (2.0 * s * s))
            .sum())
    }

    /// `KL(self ‖ p)` in nats.
    pub fn kl(&self, p: &DiagGaussian) -> Result<f64> {
        self.mean.check_same_shape(&p.mean, "kl_gaussian")?;
        let mut total = 0.0;
        for k in 0..self.dim() {
            let (mq, sq) = (self.mean.data()[k], self.std.data()[k]);
            let (mp, sp) = (p.mean.data()[k], p.std.data()[k]);
            total += (sp / sq).ln() + (sq * sq + (mq - mp).powi(2)) / (2.0 * sp * sp) - 0.5;
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Domain("categorical over zero states".into()));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "not a probability vector (sum {total}): {probs:?}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(s: usize) -> Self {
        Self {
            probs: vec![1.0 / s as f64; s],
        }
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        Self {
            probs: softmax(logits),
        }
    }

    pub fn from_log_probs(log_probs: &[f64]) -> Self {
        Self::from_logits(log_probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most probable index; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn sample(&self, rng: &mut RngStream) -> usize {
        rng.categorical(&self.probs)
    }

    /// `KL(self ‖ p)` with `0·log 0 = 0` and `p` floored at [`PROB_FLOOR`].
    pub fn kl(&self, p: &Categorical) -> Result<f64> {
        if self.len() != p.len() {
            return Err(Error::Dimension(format!(
                "kl_categorical: {} vs {} states",
                self.len(),
                p.len()
            )));
        }
        Ok(self
            .probs
            .iter()
            .zip(&p.probs)
            .filter(|(&q, _)| q > 0.0)
            .map(|(&q, &pp)| q * (q.ln() - pp.max(PROB_FLOOR).ln()))
            .sum())
    }
}

/// Gaussian whose parameters live on a tape. Rows index independent
/// distributions; columns index latent dimensions.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVar<'t> {
    pub mean: Var<'t>,
    pub std: Var<'t>,
}

impl<'t> GaussianVar<'t> {
    /// `std = softplus(pre_std) + STD_FLOOR`.
    pub fn from_unconstrained(mean: Var<'t>, pre_std: Var<'t>) -> Self {
        Self {
            mean,
            std: pre_std.softplus().add_scalar(STD_FLOOR),
        }
    }

    /// Reparameterized draw `mean + std ⊙ noise` with caller-supplied noise.
    pub fn rsample_with(&self, noise: &Tensor) -> Result<Var<'t>> {
        let eps = self.mean.tape().constant(noise.clone());
        self.mean.add(self.std.mul(eps)?)
    }

    pub fn rsample(&self, rng: &mut RngStream) -> Result<Var<'t>> {
        let (r, c) = self.mean.shape();
        self.rsample_with(&rng.normal_tensor(r, c))
    }

    /// Per-row `KL(self ‖ p)`, shape `rows × 1`.
    pub fn kl_rows(&self, p: &GaussianVar<'t>) -> Result<Var<'t>> {
        let log_ratio = p.std.log()?.sub(self.std.log()?)?;
        let num = self.std.square().add(self.mean.sub(p.mean)?.square())?;
        let den = p.std.square().mul_scalar(2.0);
        Ok(log_ratio.add(num.div(den)?)?.add_scalar(-0.5).row_sums())
    }

    /// Per-row log-density of `x`, shape `rows × 1`.
    pub fn log_pdf_rows(&self, x: Var<'t>) -> Result<Var<'t>> {
        let z = x.sub(self.mean)?.div(self.std)?;
        Ok(self
            .std
            .log()?
            .add(z.square().mul_scalar(0.5))?
            .add_scalar(HALF_LN_2PI)
            .neg()
            .row_sums())
    }
}

/// `log p(z)` under standard normals, per row.
pub fn standard_normal_log_pdf(z: &[f64]) -> f64 {
    z.iter().map(|v| -HALF_LN_2PI - 0.5 * v * v).sum()
}

/// Normalizes log-weights into a categorical; `None` when every weight is `-inf`.
pub fn normalize_log_weights(log_w: &[f64]) -> Option<Categorical> {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return None;
    }
    Some(Categorical {
        probs: log_w.iter().map(|v| (v - lse).exp()).collect(),
    })
}
