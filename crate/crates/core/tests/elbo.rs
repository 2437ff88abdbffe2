//! The training objective against a plain-loop reference and against finite
//! differences, plus the cases where a term must vanish.

use dsvar::data::TrialTensor;
use dsvar::distributions::{RngStream, STD_FLOOR};
use dsvar::inference::{
    elbo_with_noise, evaluate, fit, initialize, ElboReport, EmissionInit, OptimizerConfig, VariationalState,
};
use dsvar::model::{GenerativeParams, LagMlp, ModelConfig};
use dsvar::tensor::{softplus, softplus_inv};
use dsvar::Tensor;

const LN_2PI_HALF: f64 = 0.918_938_533_204_672_7;

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let l = lse(v);
    v.iter().map(|x| x - l).collect()
}

fn mlp(net: &LagMlp, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dense = |w: &Tensor, b: &Tensor, x: &[f64]| -> Vec<f64> {
        (0..w.cols())
            .map(|j| b.get(0, j) + (0..w.rows()).map(|i| x[i] * w.get(i, j)).sum::<f64>())
            .collect()
    };
    let mut h = z.to_vec();
    for layer in &net.hidden {
        h = dense(&layer.w, &layer.b, &h).into_iter().map(f64::tanh).collect();
    }
    (
        dense(&net.mean_head.w, &net.mean_head.b, &h),
        dense(&net.std_head.w, &net.std_head.b, &h),
    )
}

fn kl_diag(mq: &[f64], sq: &[f64], mp: &[f64], sp: &[f64]) -> f64 {
    (0..mq.len())
        .map(|i| (sp[i] / sq[i]).ln() + (sq[i].powi(2) + (mq[i] - mp[i]).powi(2)) / (2.0 * sp[i].powi(2)) - 0.5)
        .sum()
}

fn log_normal(z: &[f64], m: &[f64], s: &[f64]) -> f64 {
    (0..z.len())
        .map(|i| -LN_2PI_HALF - s[i].ln() - (z[i] - m[i]).powi(2) / (2.0 * s[i] * s[i]))
        .sum()
}

/// The negative ELBO written out frame by frame.
fn reference(p: &GenerativeParams, trial: &TrialTensor, mu: &Tensor, pre: &Tensor, noise: &Tensor) -> ElboReport {
    let c = &p.config;
    let (t_len, k, d, s_n) = (trial.len(), c.latent_dim, c.obs_dim, c.states);
    let lmax = c.max_lag();
    let sd = |t: usize| -> Vec<f64> { (0..k).map(|j| softplus(pre.get(t, j)) + STD_FLOOR).collect() };
    let z: Vec<Vec<f64>> = (0..t_len)
        .map(|t| (0..k).map(|j| mu.get(t, j) + sd(t)[j] * noise.get(t, j)).collect())
        .collect();

    let mut recon = 0.0;
    let mut n_obs = 0.0;
    for t in 0..t_len {
        for j in 0..d {
            if trial.observed(t, j) {
                let xhat: f64 = (0..k).map(|i| z[t][i] * p.w.get(i, j)).sum();
                recon += (trial.data.get(t, j) - xhat).powi(2) / (2.0 * c.sigma_x.powi(2));
                n_obs += 1.0;
            }
        }
    }
    recon += n_obs * (LN_2PI_HALF + c.sigma_x.ln());

    let log_trans = |zp: &[f64], sp: usize| -> Vec<f64> {
        let logits: Vec<f64> = (0..s_n)
            .map(|n| {
                let bias = p.phi_bias.as_ref().map_or(0.0, |b| b.get(sp, n));
                bias + (0..k).map(|i| p.phi.get(sp * s_n + n, i) * zp[i]).sum::<f64>()
            })
            .collect();
        log_softmax(&logits)
    };
    let prior = |t: usize, s: usize| -> (Vec<f64>, Vec<f64>) {
        let mut m = vec![0.0; k];
        let mut ps = vec![0.0; k];
        for (li, &l) in c.lags.iter().enumerate() {
            let (a, b) = mlp(&p.mlp[s][li], &z[t - l]);
            for i in 0..k {
                m[i] += a[i];
                ps[i] += b[i];
            }
        }
        (m, ps.into_iter().map(|v| softplus(v) + STD_FLOOR).collect())
    };

    let log_init = log_softmax(p.init_logits.data());
    let mut log_q = vec![log_init.clone()];
    let mut kl_c = 0.0;
    let mut kl_by_state = vec![vec![0.0; s_n]; t_len];
    for t in 0..t_len {
        let mq = mu.row_slice(t);
        if t < lmax {
            kl_c += kl_diag(mq, &sd(t), &vec![0.0; k], &vec![1.0; k]);
        }
        if t == 0 {
            continue;
        }
        let mut lp: Vec<f64> = (0..s_n)
            .map(|n| lse(&(0..s_n).map(|sp| log_q[t - 1][sp] + log_trans(&z[t - 1], sp)[n]).collect::<Vec<_>>()))
            .collect();
        if t >= lmax {
            for s in 0..s_n {
                let (pm, ps) = prior(t, s);
                lp[s] += log_normal(&z[t], &pm, &ps);
                kl_by_state[t][s] = kl_diag(mq, &sd(t), &pm, &ps);
            }
        }
        log_q.push(log_softmax(&lp));
    }
    let q: Vec<Vec<f64>> = log_q.iter().map(|r| r.iter().map(|v| v.exp()).collect()).collect();
    for t in lmax..t_len {
        kl_c += (0..s_n).map(|s| q[t][s] * kl_by_state[t][s]).sum::<f64>();
    }
    let mut kl_d: f64 = (0..t_len).map(|t| (0..s_n).map(|s| q[t][s] * log_q[t][s]).sum::<f64>()).sum();
    kl_d -= (0..s_n).map(|s| q[0][s] * log_init[s]).sum::<f64>();
    for t in 1..t_len {
        for sp in 0..s_n {
            let lt = log_trans(&z[t - 1], sp);
            for n in 0..s_n {
                kl_d -= q[t - 1][sp] * q[t][n] * lt[n];
            }
        }
    }
    ElboReport {
        epoch: 0,
        total: -(recon + kl_d + kl_c),
        recon,
        kl_discrete: kl_d,
        kl_continuous: kl_c,
    }
}

struct Toy {
    trials: Vec<TrialTensor>,
    params: GenerativeParams,
    vstate: VariationalState,
    noises: Vec<Tensor>,
}

fn toy(config: ModelConfig, frames: &[usize], seed: u64) -> Toy {
    let mut rng = RngStream::new(seed);
    let d = config.obs_dim;
    let trials: Vec<TrialTensor> = frames
        .iter()
        .enumerate()
        .map(|(n, &t)| {
            let raw = rng.normal_tensor(t, d);
            let mask = (0..t * d).map(|i| (i + n) % 5 != 3).collect();
            TrialTensor::from_raw(format!("toy{n}"), raw, Some(mask)).unwrap()
        })
        .collect();
    let (mut params, mut vstate) = initialize(&trials, &config, EmissionInit::Uniform, seed).unwrap();
    if let Some(b) = params.phi_bias.as_mut() {
        *b = rng.normal_tensor(b.rows(), b.cols());
    }
    params.init_logits = rng.normal_tensor(1, config.states);
    for (mu, pre) in vstate.mu.iter_mut().zip(vstate.pre_sigma.iter_mut()) {
        *mu = rng.normal_tensor(mu.rows(), mu.cols());
        *pre = rng.normal_tensor(pre.rows(), pre.cols()).scale(0.5);
    }
    let noises = trials
        .iter()
        .map(|t| rng.normal_tensor(t.len(), config.latent_dim))
        .collect();
    Toy {
        trials,
        params,
        vstate,
        noises,
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn matches_plain_reference() {
    for (bias, states) in [(false, 2), (true, 3), (false, 1)] {
        let mut cfg = ModelConfig::new(states, 2, vec![1, 3], 3);
        cfg.hidden = 5;
        cfg.sigma_x = 0.7;
        cfg.transition_bias = bias;
        let t = toy(cfg, &[9, 6], 3);
        let got = elbo_with_noise(&t.trials, &t.params, &t.vstate, &t.noises).unwrap();
        let mut want = ElboReport::default();
        for n in 0..2 {
            let r = reference(&t.params, &t.trials[n], &t.vstate.mu[n], &t.vstate.pre_sigma[n], &t.noises[n]);
            want.recon += r.recon;
            want.kl_discrete += r.kl_discrete;
            want.kl_continuous += r.kl_continuous;
        }
        for (name, a, b) in [
            ("recon", got.recon, want.recon),
            ("kl_discrete", got.kl_discrete, want.kl_discrete),
            ("kl_continuous", got.kl_continuous, want.kl_continuous),
        ] {
            assert!(close(a, b, 1e-9), "S={states} bias={bias} {name}: {a} vs {b}");
        }
        assert!(close(got.total, -got.loss(), 1e-12));
    }
}

/// Every θ and φ entry of a small problem.
#[test]
fn gradient_matches_finite_differences() {
    let mut cfg = ModelConfig::new(2, 1, vec![1], 2);
    cfg.hidden = 2;
    cfg.transition_bias = true;
    let t = toy(cfg, &[4, 4], 11);
    let eval = evaluate(&t.trials, &t.params, &t.vstate, &t.noises).unwrap();
    let loss = |p: &GenerativeParams, v: &VariationalState| elbo_with_noise(&t.trials, p, v, &t.noises).unwrap().loss();
    let eps = 1e-5;
    let mut checked = 0;

    let n_theta = t.params.tensors().len();
    for i in 0..n_theta {
        for j in 0..t.params.tensors()[i].len() {
            let mut plus = t.params.clone();
            plus.tensors_mut()[i].data_mut()[j] += eps;
            let mut minus = t.params.clone();
            minus.tensors_mut()[i].data_mut()[j] -= eps;
            let numeric = (loss(&plus, &t.vstate) - loss(&minus, &t.vstate)) / (2.0 * eps);
            let analytic = eval.theta[i].data()[j];
            assert!(close(analytic, numeric, 1e-4), "θ[{i}][{j}]: {analytic} vs {numeric}");
            checked += 1;
        }
    }
    for n in 0..t.trials.len() {
        for which in 0..2 {
            for j in 0..t.vstate.mu[n].len() {
                let bump = |delta: f64| {
                    let mut v = t.vstate.clone();
                    let target = if which == 0 { &mut v.mu[n] } else { &mut v.pre_sigma[n] };
                    target.data_mut()[j] += delta;
                    loss(&t.params, &v)
                };
                let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let analytic = if which == 0 { &eval.mu[n] } else { &eval.pre_sigma[n] }.data()[j];
                assert!(close(analytic, numeric, 1e-4), "φ trial {n} part {which} [{j}]: {analytic} vs {numeric}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 20);
}

#[test]
fn single_state_has_no_discrete_kl() {
    let mut cfg = ModelConfig::new(1, 2, vec![1, 2], 3);
    cfg.hidden = 4;
    let t = toy(cfg, &[12], 5);
    let r = elbo_with_noise(&t.trials, &t.params, &t.vstate, &t.noises).unwrap();
    assert!(r.kl_discrete.abs() < 1e-12, "{}", r.kl_discrete);
    assert!(r.kl_continuous > 0.0);
}

#[test]
fn posterior_equal_to_prior_has_no_continuous_kl() {
    let mut cfg = ModelConfig::new(2, 2, vec![1, 2], 3);
    cfg.hidden = 4;
    let mut t = toy(cfg, &[10], 6);
    // Zero every network weight: the prior becomes N(0, softplus(Σ b_std) + floor).
    let unit = softplus_inv(1.0 - STD_FLOOR);
    for per_state in &mut t.params.mlp {
        for (li, net) in per_state.iter_mut().enumerate() {
            for d in net.hidden.iter_mut().chain([&mut net.mean_head, &mut net.std_head]) {
                d.w = d.w.map(|_| 0.0);
                d.b = d.b.map(|_| 0.0);
            }
            if li == 0 {
                net.std_head.b = net.std_head.b.map(|_| unit);
            }
        }
    }
    t.vstate.mu[0] = t.vstate.mu[0].map(|_| 0.0);
    t.vstate.pre_sigma[0] = t.vstate.pre_sigma[0].map(|_| unit);
    let r = elbo_with_noise(&t.trials, &t.params, &t.vstate, &t.noises).unwrap();
    assert!(r.kl_continuous.abs() < 1e-12, "{}", r.kl_continuous);
}

#[test]
fn missing_entries_do_not_touch_the_objective() {
    let cfg = ModelConfig::new(2, 2, vec![1, 2], 3);
    let t = toy(cfg, &[10], 7);
    let base = evaluate(&t.trials, &t.params, &t.vstate, &t.noises).unwrap();
    let mut poked = t.trials.clone();
    for (v, &m) in poked[0].data.data_mut().iter_mut().zip(&t.trials[0].mask) {
        if !m {
            *v = 1e6;
        }
    }
    let after = evaluate(&poked, &t.params, &t.vstate, &t.noises).unwrap();
    assert_eq!(base.report, after.report);
    assert_eq!(base.theta, after.theta);
    assert_eq!(base.mu, after.mu);
}

#[test]
fn fit_is_deterministic() {
    let mut cfg = ModelConfig::new(2, 2, vec![1, 2], 3);
    cfg.hidden = 4;
    let t = toy(cfg.clone(), &[20, 15], 8);
    let opt = OptimizerConfig {
        epochs: 30,
        restarts: 2,
        ..Default::default()
    };
    let a = fit(&t.trials, &cfg, &opt, 42).unwrap();
    let b = fit(&t.trials, &cfg, &opt, 42).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.vstate, b.vstate);
    assert_eq!(a.trace, b.trace);
    let c = fit(&t.trials, &cfg, &opt, 43).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn transition_bias_sets_persistence() {
    let mut cfg = ModelConfig::new(3, 2, vec![1], 2);
    cfg.transition_bias = true;
    let mut t = toy(cfg, &[5], 9);
    t.params.phi = t.params.phi.map(|_| 0.0);
    t.params.phi_bias = Some(Tensor::from_fn(3, 3, |i, j| if i == j { 20.0 } else { 0.0 }));
    for s in 0..3 {
        let p = t.params.transition_probs(s, &Tensor::row(&[0.3, -1.0])).unwrap();
        assert!(p.probs()[s] > 0.999_999);
    }
    t.params.phi_bias = Some(Tensor::zeros(3, 3));
    let p = t.params.transition_probs(1, &Tensor::row(&[0.3, -1.0])).unwrap();
    assert!(p.probs().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
}
