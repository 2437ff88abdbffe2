//! Variational inference: per-datapoint Gaussian posteriors over latents,
//! the Bayes-rule discrete posterior, the three-term negative ELBO, and the
//! Adam training loop.
//!
//! The negative ELBO for one trial is
//!
//! ```text
//! recon          = Σ_obs (x − zW)² / (2σ_x²) + n_obs·(½ log 2π + log σ_x)
//! kl_discrete    = Σ_t Σ_{s'} q(s_{t-1}=s') KL(q(s_t) ‖ p(s_t | s', z_{t-1}))
//! kl_continuous  = Σ_t Σ_s q(s_t=s) KL(q(z_t) ‖ p(z_t | z_{t-ℓ}, s))
//! ```
//!
//! with `z` a single reparameterized draw, discrete expectations summed
//! exactly, and `q(s_t) ∝ p(s_t) p(z_t | s_t)` where `p(s_t)` is the
//! forward-recursed marginal `Σ_{s'} q(s_{t-1}=s') p(s_t | s', z_{t-1})`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, concat_rows, Tape, Var};
use crate::data::TrialTensor;
use crate::distributions::{Categorical, GaussianVar, RngStream, HALF_LN_2PI};
use crate::error::{Error, Result};
use crate::model::{GenerativeParams, ModelConfig, ParamVars};
use crate::optim::{Adam, AdamConfig};
use crate::parallel;
use crate::tensor::{softplus_inv, Tensor};

/// Initial posterior standard deviation.
pub const INIT_POSTERIOR_STD: f64 = 0.1;

const NOISE_TAG: u64 = 0x7472_6169_6e;
const INIT_TAG: u64 = 0x696e_6974;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Abort when the loss exceeds this multiple of the initial loss ...
    pub divergence_factor: f64,
    /// ... for this many consecutive epochs.
    pub divergence_patience: usize,
    /// Independent initializations; the one with the best late-training
    /// ELBO is kept.
    pub restarts: usize,
    pub emission_init: EmissionInit,
}

/// Starting point for the emission matrix `W`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmissionInit {
    /// `uniform(±1/√K)`, like every other weight.
    #[default]
    Uniform,
    /// Transposed principal basis, matching the initial posterior means.
    Principal,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            divergence_factor: 1e3,
            divergence_patience: 10,
            restarts: 1,
            emission_init: EmissionInit::Uniform,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Variational parameters φ: one Gaussian per trial and frame, plus the
/// derived discrete posteriors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    /// Per trial, `T × K` posterior means.
    pub mu: Vec<Tensor>,
    /// Per trial, `T × K` unconstrained standard deviations.
    pub pre_sigma: Vec<Tensor>,
    /// Per trial, `T × S` discrete posteriors, refreshed by [`refresh_state_posteriors`].
    pub q_s: Vec<Tensor>,
}

impl VariationalState {
    /// Means from a shared principal-component projection of the data;
    /// standard deviations at [`INIT_POSTERIOR_STD`]; uniform `q_s`.
    pub fn init(trials: &[TrialTensor], config: &ModelConfig) -> Self {
        let basis = principal_basis(trials, config.latent_dim);
        let pre = softplus_inv(INIT_POSTERIOR_STD - crate::distributions::STD_FLOOR);
        let mu = trials
            .iter()
            .map(|t| t.interpolated().matmul(&basis).expect("basis is D x K"))
            .collect::<Vec<_>>();
        let pre_sigma = mu.iter().map(|m| Tensor::filled(m.rows(), m.cols(), pre)).collect();
        let q_s = mu
            .iter()
            .map(|m| Tensor::filled(m.rows(), config.states, 1.0 / config.states as f64))
            .collect();
        Self { mu, pre_sigma, q_s }
    }

    pub fn trials(&self) -> usize {
        self.mu.len()
    }

    pub fn state_posterior(&self, n: usize, t: usize) -> Categorical {
        Categorical::from_log_probs(&self.q_s[n].row_slice(t).iter().map(|p| p.max(1e-300).ln()).collect::<Vec<_>>())
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.mu.iter().chain(&self.pre_sigma).collect()
    }
}

/// Top-`k` principal directions (`D × k`) of the pooled data (gaps filled
/// by [`TrialTensor::interpolated`]), by
/// power iteration with deflation. Directions beyond `D` are zero.
pub fn principal_basis(trials: &[TrialTensor], k: usize) -> Tensor {
    let d = trials.first().map_or(0, TrialTensor::dim);
    let mut cov = Tensor::zeros(d, d);
    let mut n = 0usize;
    for tr in trials {
        let x = tr.interpolated();
        cov.add_assign(&x.transpose().matmul(&x).expect("square"));
        n += tr.len();
    }
    let cov = cov.scale(1.0 / n.max(1) as f64);
    let mut basis = Tensor::zeros(d, k);
    let mut deflated = cov;
    for j in 0..k.min(d) {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + ((i + 2 * j) % 5) as f64 * 0.1).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w: Vec<f64> = (0..d)
                .map(|r| (0..d).map(|c| deflated.get(r, c) * v[c]).sum())
                .collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            lambda = norm;
            v = w.into_iter().map(|x| x / norm).collect();
        }
        // Fix the sign so the largest-magnitude entry is positive.
        let imax = (0..d).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
        if v[imax] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for r in 0..d {
            basis.set(r, j, v[r]);
            for c in 0..d {
                let val = deflated.get(r, c) - lambda * v[r] * v[c];
                deflated.set(r, c, val);
            }
        }
    }
    basis
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboReport {
    pub epoch: usize,
    /// The ELBO itself, `−(recon + kl_discrete + kl_continuous)`.
    pub total: f64,
    pub recon: f64,
    pub kl_discrete: f64,
    pub kl_continuous: f64,
}

impl ElboReport {
    /// Negative ELBO, the quantity minimized.
    pub fn loss(&self) -> f64 {
        self.recon + self.kl_discrete + self.kl_continuous
    }

    fn accumulate(&mut self, other: &ElboReport) {
        self.recon += other.recon;
        self.kl_discrete += other.kl_discrete;
        self.kl_continuous += other.kl_continuous;
        self.total = -self.loss();
    }
}

/// Per-trial objective terms recorded on a tape.
pub struct TrialTerms<'t> {
    pub recon: Var<'t>,
    pub kl_discrete: Var<'t>,
    pub kl_continuous: Var<'t>,
    /// `T × S` log discrete posteriors.
    pub log_q_s: Var<'t>,
}

impl<'t> TrialTerms<'t> {
    pub fn loss(&self) -> Result<Var<'t>> {
        self.recon.add(self.kl_discrete)?.add(self.kl_continuous)
    }

    fn report(&self) -> ElboReport {
        let mut r = ElboReport {
            recon: self.recon.item(),
            kl_discrete: self.kl_discrete.item(),
            kl_continuous: self.kl_continuous.item(),
            ..Default::default()
        };
        r.total = -r.loss();
        r
    }
}

/// Records the negative-ELBO terms of one trial. `noise` (`T × K`) fixes
/// the reparameterization draw.
pub fn trial_terms<'t>(
    theta: &ParamVars<'t>,
    config: &ModelConfig,
    trial: &TrialTensor,
    mu: Var<'t>,
    pre_sigma: Var<'t>,
    noise: &Tensor,
) -> Result<TrialTerms<'t>> {
    let tape = mu.tape();
    let (t_len, k) = mu.shape();
    let states = config.states;
    let lmax = config.max_lag();
    if t_len <= lmax {
        return Err(Error::Usage(format!(
            "trial {} has {t_len} frames; need more than the largest lag {lmax}",
            trial.name
        )));
    }

    let q = GaussianVar::from_unconstrained(mu, pre_sigma);
    let z = q.rsample_with(noise)?;

    // Missing entries are zeroed on both sides of the residual.
    let mask = tape.constant(trial.mask_tensor());
    let x = tape.constant(trial.masked_data());
    let resid = x.sub(theta.emit(z)?.mul(mask)?)?;
    let sx = config.sigma_x;
    let n_obs = trial.observed_count() as f64;
    let recon = resid
        .square()
        .sum()
        .mul_scalar(0.5 / (sx * sx))
        .add_scalar(n_obs * (HALF_LN_2PI + sx.ln()));

    let lagged = config
        .lags
        .iter()
        .map(|&l| z.slice_rows(lmax - l, t_len - l))
        .collect::<Result<Vec<_>>>()?;
    let q_tail = GaussianVar {
        mean: q.mean.slice_rows(lmax, t_len)?,
        std: q.std.slice_rows(lmax, t_len)?,
    };
    let z_tail = z.slice_rows(lmax, t_len)?;
    let mut kl_cols = Vec::with_capacity(states);
    let mut ll_cols = Vec::with_capacity(states);
    for s in 0..states {
        let prior = theta.var_prior(s, &lagged)?;
        kl_cols.push(q_tail.kl_rows(&prior)?);
        ll_cols.push(prior.log_pdf_rows(z_tail)?);
    }
    let kl_by_state = concat_cols(&kl_cols)?;
    let loglik = concat_cols(&ll_cols)?;

    let q_head = GaussianVar {
        mean: q.mean.slice_rows(0, lmax)?,
        std: q.std.slice_rows(0, lmax)?,
    };
    let standard = GaussianVar {
        mean: tape.constant(Tensor::zeros(lmax, k)),
        std: tape.constant(Tensor::filled(lmax, k, 1.0)),
    };
    let kl_head = q_head.kl_rows(&standard)?.sum();

    // Forward recursion of the marginal state prior, then Bayes' rule.
    let log_trans = theta.transition_log_probs(z.slice_rows(0, t_len - 1)?)?;
    let log_init = theta.initial_log_probs();
    let mut log_q = Vec::with_capacity(t_len);
    log_q.push(log_init);
    for t in 1..t_len {
        let block = log_trans.slice_rows((t - 1) * states, t * states)?;
        let log_prior = log_q[t - 1]
            .transpose()
            .tile_cols(states)
            .add(block)?
            .logsumexp_cols();
        let unnorm = if t < lmax {
            log_prior
        } else {
            log_prior.add(loglik.slice_rows(t - lmax, t - lmax + 1)?)?
        };
        log_q.push(unnorm.log_softmax_rows());
    }
    let log_q_s = concat_rows(&log_q)?;
    let q_s = log_q_s.exp();

    let neg_entropy = q_s.mul(log_q_s)?.sum();
    let cross_init = q_s.slice_rows(0, 1)?.mul(log_init)?.sum();
    let q_prev = q_s
        .slice_rows(0, t_len - 1)?
        .reshape((t_len - 1) * states, 1)?
        .tile_cols(states);
    let q_next = q_s
        .slice_rows(1, t_len)?
        .tile_cols(states)
        .reshape((t_len - 1) * states, states)?;
    let cross = q_prev.mul(q_next)?.mul(log_trans)?.sum();
    let kl_discrete = neg_entropy.sub(cross_init)?.sub(cross)?;

    let kl_continuous = q_s
        .slice_rows(lmax, t_len)?
        .mul(kl_by_state)?
        .sum()
        .add(kl_head)?;

    Ok(TrialTerms {
        recon,
        kl_discrete,
        kl_continuous,
        log_q_s,
    })
}

fn check_terms(report: &ElboReport, trial: &str) -> Result<()> {
    for (name, v) in [
        ("reconstruction", report.recon),
        ("discrete KL", report.kl_discrete),
        ("continuous KL", report.kl_continuous),
    ] {
        if !v.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                detail: format!("{name} term is {v} on trial {trial}"),
            });
        }
    }
    Ok(())
}

/// Gradients of the negative ELBO, aligned with θ's tensors and φ's trials.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: ElboReport,
    pub theta: Vec<Tensor>,
    pub mu: Vec<Tensor>,
    pub pre_sigma: Vec<Tensor>,
}

struct TrialGrad {
    report: ElboReport,
    theta: Vec<Tensor>,
    mu: Tensor,
    pre_sigma: Tensor,
}

fn trial_pass(
    params: &GenerativeParams,
    trial: &TrialTensor,
    mu: &Tensor,
    pre_sigma: &Tensor,
    noise: &Tensor,
    with_grad: bool,
) -> Result<TrialGrad> {
    let tape = Tape::new();
    let theta = params.bind(&tape);
    let mu_v = tape.leaf(mu.clone());
    let pre_v = tape.leaf(pre_sigma.clone());
    let terms = trial_terms(&theta, &params.config, trial, mu_v, pre_v, noise)?;
    let report = terms.report();
    check_terms(&report, &trial.name)?;
    if !with_grad {
        return Ok(TrialGrad {
            report,
            theta: Vec::new(),
            mu: Tensor::zeros(0, 0),
            pre_sigma: Tensor::zeros(0, 0),
        });
    }
    let grads = tape.backward(terms.loss()?)?;
    Ok(TrialGrad {
        report,
        theta: theta.leaves().into_iter().map(|v| grads.wrt(v)).collect(),
        mu: grads.wrt(mu_v),
        pre_sigma: grads.wrt(pre_v),
    })
}

fn validate_batch(trials: &[TrialTensor], params: &GenerativeParams, vstate: &VariationalState) -> Result<()> {
    let cfg = &params.config;
    if trials.is_empty() {
        return Err(Error::Usage("no trials".into()));
    }
    if vstate.trials() != trials.len() {
        return Err(Error::Usage(format!(
            "variational state covers {} trials, batch has {}",
            vstate.trials(),
            trials.len()
        )));
    }
    for (tr, mu) in trials.iter().zip(&vstate.mu) {
        if tr.dim() != cfg.obs_dim {
            return Err(Error::Dimension(format!(
                "trial {} has {} columns, model expects {}",
                tr.name,
                tr.dim(),
                cfg.obs_dim
            )));
        }
        if tr.len() <= cfg.max_lag() {
            return Err(Error::Usage(format!(
                "trial {} has {} frames; need more than the largest lag {}",
                tr.name,
                tr.len(),
                cfg.max_lag()
            )));
        }
        if mu.shape() != (tr.len(), cfg.latent_dim) {
            return Err(Error::Dimension(format!("posterior means for trial {} have the wrong shape", tr.name)));
        }
    }
    Ok(())
}

/// Negative ELBO and its gradients over all trials with fixed noise draws.
pub fn evaluate(
    trials: &[TrialTensor],
    params: &GenerativeParams,
    vstate: &VariationalState,
    noises: &[Tensor],
) -> Result<Evaluation> {
    evaluate_impl(trials, params, vstate, noises, true)
}

/// Objective value only.
pub fn elbo_with_noise(
    trials: &[TrialTensor],
    params: &GenerativeParams,
    vstate: &VariationalState,
    noises: &[Tensor],
) -> Result<ElboReport> {
    Ok(evaluate_impl(trials, params, vstate, noises, false)?.report)
}

/// Objective value with noise drawn from `rng`, trial by trial.
pub fn elbo(
    trials: &[TrialTensor],
    params: &GenerativeParams,
    vstate: &VariationalState,
    rng: &mut RngStream,
) -> Result<ElboReport> {
    let k = params.config.latent_dim;
    let noises: Vec<Tensor> = trials.iter().map(|t| rng.normal_tensor(t.len(), k)).collect();
    elbo_with_noise(trials, params, vstate, &noises)
}

fn evaluate_impl(
    trials: &[TrialTensor],
    params: &GenerativeParams,
    vstate: &VariationalState,
    noises: &[Tensor],
    with_grad: bool,
) -> Result<Evaluation> {
    validate_batch(trials, params, vstate)?;
    let per_trial = parallel::map_indexed(trials.len(), |n| {
        trial_pass(params, &trials[n], &vstate.mu[n], &vstate.pre_sigma[n], &noises[n], with_grad)
    });
    let mut report = ElboReport::default();
    let mut theta: Vec<Tensor> = Vec::new();
    let mut mu = Vec::with_capacity(trials.len());
    let mut pre_sigma = Vec::with_capacity(trials.len());
    for g in per_trial {
        let g = g?;
        report.accumulate(&g.report);
        if with_grad {
            if theta.is_empty() {
                theta = g.theta;
            } else {
                for (acc, t) in theta.iter_mut().zip(&g.theta) {
                    acc.add_assign(t);
                }
            }
        }
        mu.push(g.mu);
        pre_sigma.push(g.pre_sigma);
    }
    Ok(Evaluation {
        report,
        theta,
        mu,
        pre_sigma,
    })
}

/// Reparameterization noise for one trial at one epoch.
pub fn epoch_noise(seed: u64, epoch: usize, trial: usize, frames: usize, k: usize) -> Tensor {
    RngStream::derive(seed, &[NOISE_TAG, epoch as u64, trial as u64]).normal_tensor(frames, k)
}

/// Recomputes every `q_s` at the posterior means (zero noise).
pub fn refresh_state_posteriors(
    trials: &[TrialTensor],
    params: &GenerativeParams,
    vstate: &mut VariationalState,
) -> Result<()> {
    validate_batch(trials, params, vstate)?;
    let k = params.config.latent_dim;
    let q = parallel::map_indexed(trials.len(), |n| -> Result<Tensor> {
        let tape = Tape::new();
        let theta = params.bind(&tape);
        let mu = tape.leaf(vstate.mu[n].clone());
        let pre = tape.leaf(vstate.pre_sigma[n].clone());
        let zero = Tensor::zeros(trials[n].len(), k);
        let terms = trial_terms(&theta, &params.config, &trials[n], mu, pre, &zero)?;
        Ok(terms.log_q_s.value().map(f64::exp))
    });
    vstate.q_s = q.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: GenerativeParams,
    pub vstate: VariationalState,
    pub trace: Vec<ElboReport>,
}

/// Initial θ and φ for `trials`, seeded.
pub fn initialize(
    trials: &[TrialTensor],
    config: &ModelConfig,
    emission: EmissionInit,
    seed: u64,
) -> Result<(GenerativeParams, VariationalState)> {
    config.validate()?;
    let mut params = GenerativeParams::init(config, &mut RngStream::derive(seed, &[INIT_TAG]))?;
    let vstate = VariationalState::init(trials, config);
    if emission == EmissionInit::Principal {
        params.w = principal_basis(trials, config.latent_dim).transpose();
    }
    Ok((params, vstate))
}

/// Seed of restart `r`; restart 0 uses `seed` itself.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        RngStream::derive(seed, &[INIT_TAG, r as u64]).next_u64()
    }
}

/// Mean loss over the last (up to) 50 epochs; a steadier ranking signal
/// than the final single-sample value.
pub fn late_loss(trace: &[ElboReport]) -> f64 {
    let tail = &trace[trace.len().saturating_sub(50)..];
    tail.iter().map(ElboReport::loss).sum::<f64>() / tail.len().max(1) as f64
}

/// Maximizes the ELBO jointly over θ and φ with full-batch Adam. With
/// several restarts the runs proceed independently and the one with the
/// lowest [`late_loss`] wins (ties to the earliest); runs that diverge are
/// dropped unless all do.
pub fn fit(data: &[TrialTensor], config: &ModelConfig, opt: &OptimizerConfig, seed: u64) -> Result<FitResult> {
    let runs = parallel::map_indexed(opt.restarts.max(1), |r| {
        let s = restart_seed(seed, r);
        let (params, vstate) = initialize(data, config, opt.emission_init, s)?;
        fit_from(data, params, vstate, opt, s, |_| {})
    });
    let mut best: Option<FitResult> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(f) => {
                if best.as_ref().map_or(true, |b| late_loss(&f.trace) < late_loss(&b.trace)) {
                    best = Some(f);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one restart runs"),
    }
}

/// [`fit`] from given starting values; `on_epoch` sees each report.
pub fn fit_from(
    data: &[TrialTensor],
    mut params: GenerativeParams,
    mut vstate: VariationalState,
    opt: &OptimizerConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&ElboReport),
) -> Result<FitResult> {
    validate_batch(data, &params, &vstate)?;
    let k = params.config.latent_dim;
    let mut adam = Adam::new(opt.adam());
    let mut trace = Vec::with_capacity(opt.epochs);
    let mut initial_loss = None;
    let mut over = 0usize;
    for epoch in 0..opt.epochs {
        let noises: Vec<Tensor> = data
            .iter()
            .enumerate()
            .map(|(n, t)| epoch_noise(seed, epoch, n, t.len(), k))
            .collect();
        let eval = evaluate(data, &params, &vstate, &noises).map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::Divergence { epoch, detail },
            other => other,
        })?;
        let mut report = eval.report;
        report.epoch = epoch;
        on_epoch(&report);
        trace.push(report);

        let loss = report.loss();
        let base = *initial_loss.get_or_insert(loss);
        if loss > opt.divergence_factor * base.abs() {
            over += 1;
            if over >= opt.divergence_patience {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!(
                        "loss {loss:.4e} exceeded {}x the initial {base:.4e} for {over} epochs \
                         (recon {:.4e}, discrete KL {:.4e}, continuous KL {:.4e})",
                        opt.divergence_factor, report.recon, report.kl_discrete, report.kl_continuous
                    ),
                });
            }
        } else {
            over = 0;
        }

        let mut grads = eval.theta;
        grads.extend(eval.mu);
        grads.extend(eval.pre_sigma);
        let mut targets = params.tensors_mut();
        targets.extend(vstate.mu.iter_mut());
        targets.extend(vstate.pre_sigma.iter_mut());
        adam.step(targets, &grads);
        if !params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: "generative parameters became non-finite".into(),
            });
        }
    }
    refresh_state_posteriors(data, &params, &mut vstate)?;
    Ok(FitResult { params, vstate, trace })
}

/// Bayes' rule over states in log space; falls back to the prior when every
/// numerator underflows.
pub fn posterior_from_log_likelihoods(prior: &Categorical, log_lik: &[f64]) -> Categorical {
    let log_w: Vec<f64> = prior
        .probs()
        .iter()
        .zip(log_lik)
        .map(|(&p, &l)| if p > 0.0 { p.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    crate::distributions::normalize_log_weights(&log_w).unwrap_or_else(|| prior.clone())
}

/// `q(s_t = s) ∝ prior_t[s] · p(z_t | z_{t-ℓ}, s)`, with `past` ending at `z_{t-1}`.
pub fn discrete_posterior(
    params: &GenerativeParams,
    z_t: &Tensor,
    past: &[Tensor],
    prior_t: &Categorical,
) -> Result<Categorical> {
    let log_lik = (0..params.config.states)
        .map(|s| params.var_prior_from_past(s, past)?.log_pdf(z_t))
        .collect::<Result<Vec<_>>>()?;
    Ok(posterior_from_log_likelihoods(prior_t, &log_lik))
}

/// `p(s_t) = Σ_{s'} q(s_{t-1}=s') p(s_t | s', z_{t-1})`.
pub fn marginal_state_prior(params: &GenerativeParams, q_prev: &Categorical, z_prev: &Tensor) -> Result<Categorical> {
    let s_count = params.config.states;
    let mut out = vec![0.0; s_count];
    for (sp, &w) in q_prev.probs().iter().enumerate() {
        let trans = params.transition_probs(sp, z_prev)?;
        for (o, p) in out.iter_mut().zip(trans.probs()) {
            *o += w * p;
        }
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Categorical::new(out)
}

/// Most probable state per frame; ties go to the lowest index.
pub fn segment(vstate: &VariationalState, n: usize) -> Vec<usize> {
    let q = &vstate.q_s[n];
    (0..q.rows())
        .map(|t| {
            let row = q.row_slice(t);
            (0..row.len()).fold(0, |b, s| if row[s] > row[b] { s } else { b })
        })
        .collect()
}
