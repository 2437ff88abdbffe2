//! Rolling one-step-ahead prediction, NRMSE scoring, state-conditioned
//! trajectory generation, and imputation. θ is never modified here.

use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, Tape};
use crate::data::TrialTensor;
use crate::distributions::{Categorical, DiagGaussian, GaussianVar, RngStream, HALF_LN_2PI, STD_FLOOR};
use crate::error::{Error, Result};
use crate::inference::{marginal_state_prior, posterior_from_log_likelihoods, INIT_POSTERIOR_STD};
use crate::model::GenerativeParams;
use crate::optim::{Adam, AdamConfig};
use crate::parallel;
use crate::tensor::{softplus_inv, Tensor};

const ROLLOUT_TAG: u64 = 0x726f_6c6c;

/// How a latent is drawn from its conditional prior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentDraw {
    /// Conditional mean.
    #[default]
    Mean,
    /// One sample.
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    /// Adam steps of per-frame inference.
    pub infer_steps: usize,
    pub infer_lr: f64,
    /// Point-prediction latent.
    pub draw: LatentDraw,
    /// Sampled rollouts per frame for intervals; 0 disables intervals.
    pub interval_samples: usize,
    /// Lower and upper interval quantiles.
    pub interval: (f64, f64),
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            infer_steps: 50,
            infer_lr: 0.05,
            draw: LatentDraw::Mean,
            interval_samples: 100,
            interval: (0.05, 0.95),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    /// `T × D` predictions in data units. The first `seed_frames` rows only
    /// seed the history and hold NaN.
    pub predictions: Tensor,
    pub seed_frames: usize,
    /// Sampled state of each predicted frame (`usize::MAX` for seed rows).
    pub per_step_state: Vec<usize>,
    pub nrmse_percent: f64,
    pub per_dim_nrmse: Vec<f64>,
    /// `(lower, upper)` bands, `T × D` each, when requested.
    pub intervals: Option<(Tensor, Tensor)>,
    /// Inferred `T × K` latent means.
    pub latents: Tensor,
    /// Inferred discrete posteriors, `T × S`.
    pub state_posteriors: Tensor,
}

/// `100 · RMSE / (max − min)` over observed entries, with the range taken
/// jointly over all observed truth values. Invariant to a shared affine map
/// of `pred` and `truth`.
pub fn nrmse(pred: &Tensor, truth: &Tensor, mask: Option<&[bool]>) -> Result<f64> {
    Ok(nrmse_breakdown(pred, truth, mask)?.0)
}

/// Pooled NRMSE and the per-column values, all against the pooled range.
pub fn nrmse_breakdown(pred: &Tensor, truth: &Tensor, mask: Option<&[bool]>) -> Result<(f64, Vec<f64>)> {
    truth.check_same_shape(pred, "nrmse")?;
    let (t, d) = truth.shape();
    if let Some(m) = mask {
        if m.len() != t * d {
            return Err(Error::Dimension(format!("mask has {} entries for {t}x{d}", m.len())));
        }
    }
    let observed = |i: usize| mask.map_or(true, |m| m[i]);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut sq = vec![0.0; d];
    let mut cnt = vec![0usize; d];
    for (i, (&p, &y)) in pred.data().iter().zip(truth.data()).enumerate() {
        if !observed(i) {
            continue;
        }
        lo = lo.min(y);
        hi = hi.max(y);
        sq[i % d] += (p - y) * (p - y);
        cnt[i % d] += 1;
    }
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Normalization(format!(
            "truth range is {range}; NRMSE is undefined for constant or empty truth"
        )));
    }
    let total: usize = cnt.iter().sum();
    let pooled = 100.0 * (sq.iter().sum::<f64>() / total as f64).sqrt() / range;
    let per_dim = sq
        .iter()
        .zip(&cnt)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { 100.0 * (s / c as f64).sqrt() / range })
        .collect();
    Ok((pooled, per_dim))
}

/// Gaussian over `z_t` inferred from a single frame given its prior.
struct FrameFit {
    mu: Tensor,
    q_s: Categorical,
}

/// Fits `q(z_t)` to one frame with θ frozen. `priors[s]` are the
/// state-conditional latent priors and `state_prior` their weights; the
/// objective is the frame's negative ELBO with the reconstruction taken in
/// closed form at `σ`, and `q(s_t)` from Bayes' rule at `μ`.
fn infer_frame(
    params: &GenerativeParams,
    x: &[f64],
    mask: &[bool],
    priors: &[DiagGaussian],
    state_prior: &Categorical,
    warm: Tensor,
    cfg: &ForecastConfig,
) -> Result<FrameFit> {
    let k = params.config.latent_dim;
    let sx2 = params.config.sigma_x * params.config.sigma_x;
    let m = Tensor::row(&mask.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect::<Vec<_>>());
    let xm = Tensor::row(&x.iter().zip(mask).map(|(&v, &o)| if o { v } else { 0.0 }).collect::<Vec<_>>());
    // Σ_d m_d W_kd², the variance contribution of each latent coordinate.
    let w_energy = Tensor::from_fn(1, k, |_, j| {
        (0..params.w.cols()).map(|d| m.get(0, d) * params.w.get(j, d).powi(2)).sum()
    });
    let log_prior_s: Vec<f64> = state_prior.probs().iter().map(|&p| p.max(1e-300).ln()).collect();

    let mut mu = warm;
    let mut pre = Tensor::filled(1, k, softplus_inv(INIT_POSTERIOR_STD - STD_FLOOR));
    let mut adam = Adam::new(AdamConfig { lr: cfg.infer_lr, ..AdamConfig::default() });
    for _ in 0..cfg.infer_steps {
        let tape = Tape::new();
        let w = tape.constant(params.w.clone());
        let mu_v = tape.leaf(mu.clone());
        let pre_v = tape.leaf(pre.clone());
        let q = GaussianVar::from_unconstrained(mu_v, pre_v);
        let resid = tape.constant(xm.clone()).sub(mu_v.matmul(w)?.mul(tape.constant(m.clone()))?)?;
        let recon = resid
            .square()
            .sum()
            .add(q.std.square().mul(tape.constant(w_energy.clone()))?.sum())?
            .mul_scalar(0.5 / sx2);
        let mut kl = Vec::with_capacity(priors.len());
        let mut ll = Vec::with_capacity(priors.len());
        for p in priors {
            let pv = GaussianVar {
                mean: tape.constant(p.mean.clone()),
                std: tape.constant(p.std.clone()),
            };
            kl.push(q.kl_rows(&pv)?);
            ll.push(pv.log_pdf_rows(mu_v)?);
        }
        let lp = tape.constant(Tensor::row(&log_prior_s));
        let log_q = concat_cols(&ll)?.add(lp)?.log_softmax_rows();
        let q_s = log_q.exp();
        let kl_s = q_s.mul(log_q.sub(lp)?)?.sum();
        let loss = recon.add(q_s.mul(concat_cols(&kl)?)?.sum())?.add(kl_s)?;
        let g = tape.backward(loss)?;
        let (gm, gp) = (g.wrt(mu_v), g.wrt(pre_v));
        adam.step(vec![&mut mu, &mut pre], &[gm, gp]);
    }
    let ll: Vec<f64> = priors.iter().map(|p| p.log_pdf(&mu)).collect::<Result<_>>()?;
    let q_s = posterior_from_log_likelihoods(state_prior, &ll);
    if !mu.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            detail: "per-frame inference produced a non-finite latent".into(),
        });
    }
    Ok(FrameFit { mu, q_s })
}

/// Least-squares latent for one frame: `argmin_z ‖m ⊙ (x − zW)‖²`, lightly
/// ridged so masked or degenerate frames stay defined.
fn project_frame(params: &GenerativeParams, x: &[f64], mask: &[bool]) -> Result<Tensor> {
    let w = &params.w;
    let (k, d) = w.shape();
    let mut gram = Tensor::from_fn(k, k, |i, j| {
        (0..d).filter(|&c| mask[c]).map(|c| w.get(i, c) * w.get(j, c)).sum()
    });
    for i in 0..k {
        gram.set(i, i, gram.get(i, i) + 1e-6);
    }
    let rhs = Tensor::from_fn(k, 1, |i, _| (0..d).filter(|&c| mask[c]).map(|c| w.get(i, c) * x[c]).sum());
    Ok(gram.inverse()?.matmul(&rhs)?.transpose())
}

fn row_mask(trial: &TrialTensor, t: usize) -> &[bool] {
    let d = trial.dim();
    &trial.mask[t * d..(t + 1) * d]
}

/// Latent means for the first `n` frames, each inferred under the
/// standard-normal prior.
pub fn infer_seed_latents(trial: &TrialTensor, params: &GenerativeParams, n: usize, cfg: &ForecastConfig) -> Result<Vec<Tensor>> {
    if trial.len() < n {
        return Err(Error::Usage(format!("trial {} has {} frames, need {n}", trial.name, trial.len())));
    }
    let k = params.config.latent_dim;
    let prior = [DiagGaussian::standard(k)];
    let one = Categorical::uniform(1);
    (0..n)
        .map(|t| {
            let x = trial.data.row_slice(t);
            let mask = row_mask(trial, t);
            let warm = project_frame(params, x, mask)?;
            Ok(infer_frame(params, x, mask, &prior, &one, warm, cfg)?.mu)
        })
        .collect()
}

fn draw_latent(prior: &DiagGaussian, draw: LatentDraw, rng: &mut RngStream) -> Tensor {
    match draw {
        LatentDraw::Mean => prior.mean.clone(),
        LatentDraw::Sample => prior.sample(rng),
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One-step-ahead prediction over `test`: for each frame, sample the
/// previous state from its posterior, sample the next state from the
/// transition, take the latent from the state's conditional prior and emit;
/// then infer the frame's latent from the actual observation and append it
/// to the history. Scores the predicted frames in data units.
pub fn rolling_predict(test: &TrialTensor, params: &GenerativeParams, cfg: &ForecastConfig) -> Result<ForecastResult> {
    let config = &params.config;
    let lmax = config.max_lag();
    let (t_len, d) = (test.len(), test.dim());
    if t_len <= lmax {
        return Err(Error::Usage(format!(
            "test trial {} has {t_len} frames; need more than the largest lag {lmax}",
            test.name
        )));
    }
    if d != config.obs_dim {
        return Err(Error::Dimension(format!("test trial has {d} columns, model expects {}", config.obs_dim)));
    }
    let (s_count, k) = (config.states, config.latent_dim);
    let mut rng = RngStream::derive(cfg.seed, &[ROLLOUT_TAG]);

    let mut latents: Vec<Tensor> = infer_seed_latents(test, params, lmax, cfg)?;
    let mut posts: Vec<Categorical> = Vec::with_capacity(t_len);
    posts.push(params.initial_state_prior());
    for t in 1..lmax {
        posts.push(marginal_state_prior(params, &posts[t - 1], &latents[t - 1])?);
    }

    let mut pred = Tensor::filled(t_len, d, f64::NAN);
    let mut bands = (cfg.interval_samples > 0).then(|| (Tensor::filled(t_len, d, f64::NAN), Tensor::filled(t_len, d, f64::NAN)));
    let mut states = vec![usize::MAX; lmax];

    for t in lmax..t_len {
        let q_prev = &posts[t - 1];
        let z_prev = &latents[t - 1];
        let trans: Vec<Categorical> = (0..s_count).map(|sp| params.transition_probs(sp, z_prev)).collect::<Result<_>>()?;
        let priors: Vec<DiagGaussian> = (0..s_count).map(|s| params.var_prior_from_past(s, &latents)).collect::<Result<_>>()?;

        let s_prev = rng.categorical(q_prev.probs());
        let s_hat = rng.categorical(trans[s_prev].probs());
        let z_hat = draw_latent(&priors[s_hat], cfg.draw, &mut rng);
        let x_hat = params.emit_mean(&z_hat)?;
        pred.row_slice_mut(t).copy_from_slice(x_hat.data());
        states.push(s_hat);

        if let Some((lo, hi)) = bands.as_mut() {
            let draws = parallel::map_indexed(cfg.interval_samples, |r| {
                let mut rr = RngStream::derive(cfg.seed, &[ROLLOUT_TAG, t as u64, r as u64]);
                let sp = rr.categorical(q_prev.probs());
                let s = rr.categorical(trans[sp].probs());
                let z = priors[s].sample(&mut rr);
                params.emit_mean(&z).map(Tensor::into_data)
            });
            let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
            for c in 0..d {
                let mut col: Vec<f64> = draws.iter().map(|x| x[c]).collect();
                col.sort_by(f64::total_cmp);
                lo.set(t, c, quantile(&col, cfg.interval.0));
                hi.set(t, c, quantile(&col, cfg.interval.1));
            }
        }

        // Marginal state prior for frame t, then infer z_t from x_t.
        let mut state_prior = vec![0.0; s_count];
        for (sp, w) in q_prev.probs().iter().enumerate() {
            for (o, p) in state_prior.iter_mut().zip(trans[sp].probs()) {
                *o += w * p;
            }
        }
        let total: f64 = state_prior.iter().sum();
        let state_prior = Categorical::new(state_prior.iter().map(|p| p / total).collect())?;
        let warm = Tensor::from_fn(1, k, |_, j| {
            priors.iter().zip(state_prior.probs()).map(|(p, w)| w * p.mean.get(0, j)).sum()
        });
        let fit = infer_frame(params, test.data.row_slice(t), row_mask(test, t), &priors, &state_prior, warm, cfg)?;
        latents.push(fit.mu);
        posts.push(fit.q_s);
    }

    let pred_raw = test.destandardize(&pred);
    let truth_raw = test.to_raw();
    let scored_mask: Vec<bool> = test.mask.iter().enumerate().map(|(i, &m)| m && i / d >= lmax).collect();
    let (nrmse_percent, per_dim_nrmse) = nrmse_breakdown(
        &pred_raw.zip_map(&truth_raw, |p, y| if p.is_nan() { y } else { p })?,
        &truth_raw,
        Some(&scored_mask),
    )?;
    let intervals = bands.map(|(lo, hi)| (test.destandardize(&lo), test.destandardize(&hi)));
    let latents = Tensor::from_fn(t_len, k, |i, j| latents[i].get(0, j));
    let state_posteriors = Tensor::from_fn(t_len, s_count, |i, j| posts[i].probs()[j]);
    Ok(ForecastResult {
        predictions: pred_raw,
        seed_frames: lmax,
        per_step_state: states,
        nrmse_percent,
        per_dim_nrmse,
        intervals,
        latents,
        state_posteriors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedTrajectory {
    pub state: usize,
    /// `H × D`, standardized units.
    pub frames: Tensor,
    /// `H × K`.
    pub latents: Tensor,
}

/// Rolls the latent forward `horizon` steps with the state held at `state`,
/// starting from `seed` latents (oldest first, at least the largest lag).
pub fn generate_state_trajectory(
    state: usize,
    seed: &[Tensor],
    horizon: usize,
    params: &GenerativeParams,
    draw: LatentDraw,
    rng: &mut RngStream,
) -> Result<GeneratedTrajectory> {
    let config = &params.config;
    if state >= config.states {
        return Err(Error::Usage(format!("state {state} out of range for a {}-state model", config.states)));
    }
    let lmax = config.max_lag();
    if seed.len() < lmax {
        return Err(Error::Usage(format!("need {lmax} seed latents, got {}", seed.len())));
    }
    let k = config.latent_dim;
    let mut hist: Vec<Tensor> = seed[seed.len() - lmax..].to_vec();
    let mut latents = Tensor::zeros(horizon, k);
    for h in 0..horizon {
        let prior = params.var_prior_from_past(state, &hist)?;
        let z = draw_latent(&prior, draw, rng);
        latents.row_slice_mut(h).copy_from_slice(z.data());
        hist.remove(0);
        hist.push(z);
    }
    let frames = if horizon == 0 {
        Tensor::zeros(0, config.obs_dim)
    } else {
        params.emit_mean(&latents)?
    };
    Ok(GeneratedTrajectory { state, frames, latents })
}

/// Standardized trial with missing entries replaced by `emit_mean(μ_t)`;
/// observed entries pass through unchanged.
pub fn impute(trial: &TrialTensor, params: &GenerativeParams, mu: &Tensor) -> Result<Tensor> {
    if mu.rows() != trial.len() {
        return Err(Error::Dimension(format!(
            "{} latent rows for a {}-frame trial",
            mu.rows(),
            trial.len()
        )));
    }
    let recon = params.emit_mean(mu)?;
    let mut out = trial.data.clone();
    for (i, (v, &m)) in out.data_mut().iter_mut().zip(&trial.mask).enumerate() {
        if !m {
            *v = recon.data()[i];
        }
    }
    Ok(out)
}

/// Gaussian negative log-likelihood constant for `n` observed entries.
pub fn recon_constant(n: usize, sigma_x: f64) -> f64 {
    n as f64 * (HALF_LN_2PI + sigma_x.ln())
}
