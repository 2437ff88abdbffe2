use dsvar::checkpoint::Checkpoint;
use dsvar::data::{Dataset, TrialTensor};
use dsvar::distributions::{Categorical, RngStream};
use dsvar::forecast::{generate_state_trajectory, impute, infer_seed_latents, rolling_predict, ForecastConfig, LatentDraw};
use dsvar::inference::{fit, posterior_from_log_likelihoods, OptimizerConfig};
use dsvar::model::{GenerativeParams, ModelConfig};
use dsvar::simulate::synthetic_split;
use dsvar::{Error, Tensor};
use proptest::prelude::*;

fn trained() -> (Dataset, GenerativeParams, dsvar::inference::FitResult) {
    let split = synthetic_split(120, 60, 3).unwrap();
    let ds = Dataset::from_raw("s", vec![split.train.trial], vec![split.test.trial]).unwrap();
    let mut cfg = ModelConfig::new(2, 2, vec![1, 2], 4);
    cfg.sigma_x = 0.1;
    cfg.hidden = 8;
    let opt = OptimizerConfig {
        epochs: 60,
        ..Default::default()
    };
    let f = fit(&ds.train, &cfg, &opt, 1).unwrap();
    (ds, f.params.clone(), f)
}

fn cfg(samples: usize) -> ForecastConfig {
    ForecastConfig {
        interval_samples: samples,
        seed: 9,
        ..Default::default()
    }
}

#[test]
fn predictions_never_see_the_future() {
    let (ds, params, _) = trained();
    let test = &ds.test[0];
    let base = rolling_predict(test, &params, &cfg(8)).unwrap();
    let cut = 30;
    let mut poked = test.clone();
    for t in cut..poked.len() {
        for v in poked.data.row_slice_mut(t) {
            *v += 50.0;
        }
    }
    let after = rolling_predict(&poked, &params, &cfg(8)).unwrap();
    for t in 0..=cut {
        for j in 0..test.dim() {
            let (a, b) = (base.predictions.get(t, j), after.predictions.get(t, j));
            assert!(a.to_bits() == b.to_bits(), "frame {t} col {j}: {a} vs {b}");
        }
    }
    assert_ne!(base.predictions.row_slice(cut + 1), after.predictions.row_slice(cut + 1));
}

#[test]
fn prediction_leaves_parameters_alone_and_repeats() {
    let (ds, params, _) = trained();
    let before = Checkpoint::new(&params, 0).to_json().unwrap();
    let a = rolling_predict(&ds.test[0], &params, &cfg(5)).unwrap();
    let b = rolling_predict(&ds.test[0], &params, &cfg(5)).unwrap();
    assert_eq!(before, Checkpoint::new(&params, 0).to_json().unwrap());
    assert_eq!(a.nrmse_percent.to_bits(), b.nrmse_percent.to_bits());
    assert_eq!(a.per_step_state, b.per_step_state);

    let seed_rows = a.seed_frames;
    assert_eq!(seed_rows, 2);
    assert!(a.predictions.row_slice(0).iter().all(|v| v.is_nan()));
    assert!(a.predictions.row_slice(seed_rows).iter().all(|v| v.is_finite()));
    let (lo, hi) = a.intervals.as_ref().unwrap();
    for t in seed_rows..lo.rows() {
        for j in 0..lo.cols() {
            assert!(lo.get(t, j) <= hi.get(t, j));
        }
    }
    assert!(rolling_predict(&ds.test[0], &params, &cfg(0)).unwrap().intervals.is_none());
}

#[test]
fn checkpoint_round_trip_reproduces_forecasts() {
    let (ds, params, f) = trained();
    let ck = Checkpoint::new(&params, 1).with_variational(f.vstate.clone());
    let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
    let restored = back.params().unwrap();
    assert_eq!(restored, params);
    assert_eq!(back.variational.as_ref(), Some(&f.vstate));
    let a = rolling_predict(&ds.test[0], &params, &cfg(3)).unwrap();
    let b = rolling_predict(&ds.test[0], &restored, &cfg(3)).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.predictions), bits(&b.predictions));
    assert_eq!(a.latents, b.latents);
    assert_eq!(a.per_step_state, b.per_step_state);
}

#[test]
fn too_short_test_trial_is_rejected() {
    let (_, params, _) = trained();
    let short = TrialTensor::from_raw("short", Tensor::zeros(2, 4), None).unwrap();
    assert!(matches!(rolling_predict(&short, &params, &cfg(0)), Err(Error::Usage(_))));
}

#[test]
fn generation_edge_cases() {
    let (ds, mut params, _) = trained();
    let seed = infer_seed_latents(&ds.test[0], &params, 2, &cfg(0)).unwrap();
    let mut rng = RngStream::new(4);
    let empty = generate_state_trajectory(0, &seed, 0, &params, LatentDraw::Sample, &mut rng).unwrap();
    assert_eq!(empty.frames.shape(), (0, 4));
    assert_eq!(empty.latents.shape(), (0, 2));
    assert!(generate_state_trajectory(2, &seed, 5, &params, LatentDraw::Mean, &mut rng).is_err());
    assert!(generate_state_trajectory(0, &seed[..1], 5, &params, LatentDraw::Mean, &mut rng).is_err());

    let a = generate_state_trajectory(1, &seed, 40, &params, LatentDraw::Sample, &mut RngStream::new(5)).unwrap();
    let b = generate_state_trajectory(1, &seed, 40, &params, LatentDraw::Sample, &mut RngStream::new(5)).unwrap();
    assert_eq!(a, b);

    // With every network weight at zero the conditional mean is zero.
    for net in params.mlp.iter_mut().flatten() {
        for d in net.hidden.iter_mut().chain([&mut net.mean_head, &mut net.std_head]) {
            d.w = d.w.map(|_| 0.0);
            d.b = d.b.map(|_| 0.0);
        }
    }
    let g = generate_state_trajectory(0, &seed, 10, &params, LatentDraw::Mean, &mut rng).unwrap();
    assert!(g.latents.data().iter().all(|&v| v == 0.0));
    assert!(g.frames.data().iter().all(|&v| v == 0.0));
}

#[test]
fn imputation_only_fills_missing_cells() {
    let (ds, params, f) = trained();
    let full = &ds.train[0];
    let out = impute(full, &params, &f.vstate.mu[0]).unwrap();
    assert_eq!(&out, &full.data);

    let mask: Vec<bool> = (0..full.mask.len()).map(|i| i % 7 != 0).collect();
    let mut holey = full.clone();
    holey.mask = mask.clone();
    let out = impute(&holey, &params, &f.vstate.mu[0]).unwrap();
    let recon = params.emit_mean(&f.vstate.mu[0]).unwrap();
    for (i, &m) in mask.iter().enumerate() {
        let want = if m { full.data.data()[i] } else { recon.data()[i] };
        assert_eq!(out.data()[i].to_bits(), want.to_bits());
    }
    assert!(impute(full, &params, &Tensor::zeros(3, 2)).is_err());
}

proptest! {
    #[test]
    fn bayes_rule_ignores_shared_offsets(
        prior in prop::collection::vec(0.01f64..1.0, 3),
        ll in prop::collection::vec(-30.0f64..30.0, 3),
        shift in -500.0f64..500.0,
    ) {
        let total: f64 = prior.iter().sum();
        let prior = Categorical::new(prior.iter().map(|p| p / total).collect()).unwrap();
        let a = posterior_from_log_likelihoods(&prior, &ll);
        let shifted: Vec<f64> = ll.iter().map(|v| v + shift).collect();
        let b = posterior_from_log_likelihoods(&prior, &shifted);
        prop_assert!((a.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
