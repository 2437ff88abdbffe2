use std::fs;
use std::path::{Path, PathBuf};

use dsvar::checkpoint::Checkpoint;
use dsvar::data::{load_trials, read_trial_csv, write_trial_csv, Dataset, Manifest, ManifestEntry, Split, TrialTensor};
use dsvar::distributions::RngStream;
use dsvar::forecast::{
    generate_state_trajectory, impute as impute_trial, infer_seed_latents, nrmse, rolling_predict, ForecastConfig,
    LatentDraw,
};
use dsvar::inference::{fit_from, initialize, restart_seed, late_loss, segment as argmax_states, ElboReport, OptimizerConfig};
use dsvar::model::ModelConfig;
use dsvar::presets::Preset;
use dsvar::simulate::{pendulum_split, synthetic_split, PendulumConfig};
use dsvar::{Error, Result, Tensor};
use serde::Serialize;
use serde_json::json;

use crate::output::{file_name, file_stem, write_json, write_table};
use crate::{GenerateArgs, PredictArgs, RunArgs, SimulateArgs};

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 2,
        Error::Format(_) | Error::Json(_) | Error::Validation(_) | Error::Dimension(_) => 3,
        Error::Divergence { .. } => 4,
        Error::Io { .. } => 5,
        Error::Domain(_) | Error::Normalization(_) => 1,
    }
}

/// Everything that determines a run; echoed into every JSON artifact.
#[derive(Clone, Debug, Serialize)]
struct RunConfig {
    command: String,
    manifest: Option<PathBuf>,
    preset: Option<String>,
    states: usize,
    latent_dim: usize,
    lags: Vec<usize>,
    hidden: usize,
    sigma_x: f64,
    transition_bias: bool,
    optimizer: OptimizerConfig,
    seed: u64,
    out: PathBuf,
}

impl RunConfig {
    fn resolve(command: &str, a: &RunArgs) -> Result<Self> {
        let preset = match &a.preset {
            Some(name) => Preset::by_name(name)?,
            None => Preset {
                name: String::new(),
                states: 2,
                latent_dim: 2,
                lags: vec![1, 2],
                hidden: 16,
                sigma_x: 1.0,
                transition_bias: false,
                optimizer: OptimizerConfig::default(),
            },
        };
        let mut optimizer = preset.optimizer.clone();
        if let Some(lr) = a.lr {
            optimizer.lr = lr;
        }
        if let Some(e) = a.epochs {
            optimizer.epochs = e;
        }
        if let Some(r) = a.restarts {
            optimizer.restarts = r;
        }
        Ok(Self {
            command: command.into(),
            manifest: a.manifest.clone(),
            preset: a.preset.clone(),
            states: if a.no_switch { 1 } else { a.states.unwrap_or(preset.states) },
            latent_dim: a.latent_dim.unwrap_or(preset.latent_dim),
            lags: a.lags.clone().unwrap_or(preset.lags),
            hidden: a.hidden.unwrap_or(preset.hidden),
            sigma_x: a.sigma_x.unwrap_or(preset.sigma_x),
            transition_bias: a.transition_bias || preset.transition_bias,
            optimizer,
            seed: a.seed,
            out: a.out.clone(),
        })
    }

    fn model(&self, obs_dim: usize) -> ModelConfig {
        let mut c = ModelConfig::new(self.states, self.latent_dim, self.lags.clone(), obs_dim);
        c.hidden = self.hidden;
        c.sigma_x = self.sigma_x;
        c.transition_bias = self.transition_bias;
        c
    }

    /// Takes the model settings from a checkpoint.
    fn adopt(mut self, ck: &Checkpoint) -> Self {
        let c = &ck.config;
        self.states = c.states;
        self.latent_dim = c.latent_dim;
        self.lags = c.lags.clone();
        self.hidden = c.hidden;
        self.sigma_x = c.sigma_x;
        self.transition_bias = c.transition_bias;
        self
    }

    fn manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Usage("--manifest is required".into()))
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn checkpoint_path(a: &RunArgs) -> PathBuf {
    a.checkpoint.clone().unwrap_or_else(|| a.out.join("checkpoint.json"))
}

fn load_checkpoint(a: &RunArgs) -> Result<Checkpoint> {
    let path = checkpoint_path(a);
    if !path.exists() {
        return Err(Error::Usage(format!(
            "checkpoint {} not found; run `dsvar train` first or pass --checkpoint",
            path.display()
        )));
    }
    Checkpoint::load(&path)
}

/// The manifest's trials, standardized with the checkpoint's statistics so
/// that every command sees the data exactly as training did.
fn dataset_for(ck: &Checkpoint, manifest: &Path) -> Result<Dataset> {
    let mut ds = load_trials(manifest)?;
    if let Some(stats) = &ck.standardization {
        ds.train = ds.train.iter().map(|t| stats.apply(t)).collect::<Result<_>>()?;
        ds.test = ds.test.iter().map(|t| stats.apply(t)).collect::<Result<_>>()?;
        ds.standardization = stats.clone();
    }
    if let Some(t) = ds.train.iter().chain(&ds.test).find(|t| t.dim() != ck.config.obs_dim) {
        return Err(Error::Dimension(format!(
            "trial {} has {} columns, checkpoint expects {}",
            t.name,
            t.dim(),
            ck.config.obs_dim
        )));
    }
    Ok(ds)
}

fn raw_trials(manifest: &Path, split: Split) -> Result<Vec<TrialTensor>> {
    let m = Manifest::read(manifest)?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    m.trials
        .iter()
        .filter(|e| e.split == split)
        .map(|e| read_trial_csv(&base.join(&e.path)))
        .collect()
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    prepare_out(&a.out)?;
    if !(0.0..1.0).contains(&a.mask_fraction) {
        return Err(Error::Usage("--mask-fraction must be in [0, 1)".into()));
    }
    let (train, test, labels) = match a.preset.as_str() {
        "pendulum" => {
            let cfg = PendulumConfig {
                steps: a.steps.unwrap_or(400),
                ..Default::default()
            };
            let (train, test) = pendulum_split(&cfg)?;
            (train, test, None)
        }
        "synthetic2" => {
            let t = a.steps.unwrap_or(500);
            let split = synthetic_split(t, t / 2, a.seed)?;
            let labels = (split.train.labels.clone(), split.test.labels.clone());
            (split.train.trial, split.test.trial, Some(labels))
        }
        other => return Err(Error::Usage(format!("cannot simulate preset {other:?}; use pendulum or synthetic2"))),
    };
    let mut mask: Vec<bool> = train.mask.clone();
    if a.mask_fraction > 0.0 {
        let mut rng = RngStream::derive(a.seed, &[0x6d61_736b]);
        for m in mask.iter_mut() {
            if rng.uniform() < a.mask_fraction {
                *m = false;
            }
        }
    }
    write_trial_csv(&a.out.join("train.csv"), &train.columns, &train.to_raw(), Some(&mask))?;
    write_trial_csv(&a.out.join("test.csv"), &test.columns, &test.to_raw(), None)?;
    if a.mask_fraction > 0.0 {
        write_trial_csv(&a.out.join("train_complete.csv"), &train.columns, &train.to_raw(), None)?;
    }
    if let Some((tr, te)) = labels {
        for (name, l) in [("train_labels.csv", tr), ("test_labels.csv", te)] {
            let rows: Vec<Vec<Option<f64>>> = l.iter().enumerate().map(|(t, &s)| vec![Some(t as f64), Some(s as f64)]).collect();
            write_table(&a.out.join(name), &["t".into(), "state".into()], &rows)?;
        }
    }
    Manifest {
        name: a.preset.clone(),
        trials: vec![
            ManifestEntry {
                path: "train.csv".into(),
                split: Split::Train,
            },
            ManifestEntry {
                path: "test.csv".into(),
                split: Split::Test,
            },
        ],
    }
    .write(&a.out.join("manifest.json"))?;
    write_json(
        &a.out.join("simulate_summary.json"),
        &json!({ "preset": a.preset, "steps": a.steps, "mask_fraction": a.mask_fraction, "seed": a.seed }),
    )?;
    println!("wrote {}", a.out.join("manifest.json").display());
    Ok(())
}

fn trace_rows(trace: &[ElboReport]) -> Vec<Vec<Option<f64>>> {
    trace
        .iter()
        .map(|r| {
            vec![
                Some(r.epoch as f64),
                Some(r.total),
                Some(r.recon),
                Some(r.kl_discrete),
                Some(r.kl_continuous),
            ]
        })
        .collect()
}

pub fn train(a: &RunArgs) -> Result<()> {
    let run = RunConfig::resolve("train", a)?;
    let ds = load_trials(run.manifest()?)?;
    let config = run.model(ds.train[0].dim());
    prepare_out(&a.out)?;

    // Restarts are run one after another here so each can report progress.
    let mut best: Option<(dsvar::inference::FitResult, usize)> = None;
    let restarts = run.optimizer.restarts.max(1);
    let mut last_err = None;
    for r in 0..restarts {
        let seed = restart_seed(run.seed, r);
        let (params, vstate) = initialize(&ds.train, &config, run.optimizer.emission_init, seed)?;
        let every = (run.optimizer.epochs / 10).max(1);
        let res = fit_from(&ds.train, params, vstate, &run.optimizer, seed, |rep| {
            if rep.epoch % every == 0 || rep.epoch + 1 == run.optimizer.epochs {
                eprintln!(
                    "[restart {r}] epoch {:>5}  elbo {:>12.4}  recon {:>12.4}  kl_s {:>10.4}  kl_z {:>10.4}",
                    rep.epoch, rep.total, rep.recon, rep.kl_discrete, rep.kl_continuous
                );
            }
        });
        match res {
            Ok(f) => {
                if best.as_ref().map_or(true, |(b, _)| late_loss(&f.trace) < late_loss(&b.trace)) {
                    best = Some((f, r));
                }
            }
            Err(e @ Error::Divergence { .. }) if restarts > 1 => {
                eprintln!("[restart {r}] {e}");
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    let (fit, chosen) = match (best, last_err) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("at least one restart runs"),
    };

    let header: Vec<String> = ["epoch", "total", "recon", "kl_discrete", "kl_continuous"].map(String::from).to_vec();
    write_table(&a.out.join("trace.csv"), &header, &trace_rows(&fit.trace))?;
    let train_names: Vec<&str> = ds.train.iter().map(|t| t.name.as_str()).collect();
    Checkpoint::new(&fit.params, run.seed)
        .with_standardization(ds.standardization.clone())
        .with_variational(fit.vstate.clone())
        .with_meta(json!({ "run": run, "train_trials": train_names, "restart": chosen }))
        .save(&a.out.join("checkpoint.json"))?;
    let first = fit.trace.first().copied().unwrap_or_default();
    let last = fit.trace.last().copied().unwrap_or_default();
    write_json(
        &a.out.join("train_summary.json"),
        &json!({
            "run": run,
            "model": config,
            "param_count": fit.params.param_count(),
            "restart": chosen,
            "initial": first,
            "final": last,
            "train_trials": train_names,
        }),
    )?;
    println!(
        "trained {} epochs; ELBO {:.4} -> {:.4}; checkpoint {}",
        fit.trace.len(),
        first.total,
        last.total,
        a.out.join("checkpoint.json").display()
    );
    Ok(())
}

fn label_rows(q: &Tensor, labels: &[usize]) -> Vec<Vec<Option<f64>>> {
    (0..q.rows())
        .map(|t| {
            let mut row = vec![Some(t as f64), Some(labels[t] as f64)];
            row.extend(q.row_slice(t).iter().map(|&p| Some(p)));
            row
        })
        .collect()
}

pub fn segment(a: &RunArgs) -> Result<()> {
    let ck = load_checkpoint(a)?;
    let run = RunConfig::resolve("segment", a)?.adopt(&ck);
    let ds = dataset_for(&ck, run.manifest()?)?;
    let params = ck.params()?;
    prepare_out(&a.out)?;
    let s = ck.config.states;
    let mut header = vec!["t".to_string(), "state".to_string()];
    header.extend((0..s).map(|i| format!("q{i}")));
    let mut summary = Vec::new();

    let vstate = ck
        .variational
        .as_ref()
        .ok_or_else(|| Error::Usage("checkpoint has no variational state".into()))?;
    if vstate.trials() != ds.train.len() || vstate.mu.iter().zip(&ds.train).any(|(m, t)| m.rows() != t.len()) {
        return Err(Error::Usage("manifest train trials do not match the checkpoint".into()));
    }
    for (n, trial) in ds.train.iter().enumerate() {
        let labels = argmax_states(vstate, n);
        let path = a.out.join(format!("labels_{}.csv", file_stem(&trial.name)));
        write_table(&path, &header, &label_rows(&vstate.q_s[n], &labels))?;
        summary.push(json!({ "trial": trial.name, "split": "train", "frames": labels.len(), "file": file_name(&path) }));
    }
    // Test trials: discrete posteriors from frame-by-frame inference.
    let fc = ForecastConfig {
        interval_samples: 0,
        seed: run.seed,
        ..Default::default()
    };
    for trial in &ds.test {
        let r = rolling_predict(trial, &params, &fc)?;
        let q = &r.state_posteriors;
        let labels: Vec<usize> = (0..q.rows())
            .map(|t| {
                let row = q.row_slice(t);
                (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b })
            })
            .collect();
        let path = a.out.join(format!("labels_{}.csv", file_stem(&trial.name)));
        write_table(&path, &header, &label_rows(q, &labels))?;
        summary.push(json!({ "trial": trial.name, "split": "test", "frames": labels.len(), "file": file_name(&path) }));
    }
    write_json(&a.out.join("segment_summary.json"), &json!({ "run": run, "trials": summary }))?;
    println!("wrote labels for {} trials", summary.len());
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let ck = load_checkpoint(&a.run)?;
    let run = RunConfig::resolve("predict", &a.run)?.adopt(&ck);
    let ds = dataset_for(&ck, run.manifest()?)?;
    if ds.test.is_empty() {
        return Err(Error::Usage("manifest has no test trials".into()));
    }
    let params = ck.params()?;
    prepare_out(&a.run.out)?;
    let fc = ForecastConfig {
        interval_samples: a.interval_samples,
        draw: if a.sample { LatentDraw::Sample } else { LatentDraw::Mean },
        seed: run.seed,
        ..Default::default()
    };
    let mut per_trial = Vec::new();
    let mut all_pred = Vec::new();
    let mut all_truth = Vec::new();
    let mut all_mask = Vec::new();
    for trial in &ds.test {
        let r = rolling_predict(trial, &params, &fc)?;
        let d = trial.dim();
        let mut header = vec!["t".to_string()];
        header.extend(trial.columns.iter().map(|c| format!("{c}_pred")));
        if r.intervals.is_some() {
            header.extend(trial.columns.iter().map(|c| format!("{c}_lo")));
            header.extend(trial.columns.iter().map(|c| format!("{c}_hi")));
        }
        header.push("state".into());
        let rows: Vec<Vec<Option<f64>>> = (0..trial.len())
            .map(|t| {
                let mut row = vec![Some(t as f64)];
                row.extend(r.predictions.row_slice(t).iter().map(|&v| Some(v)));
                if let Some((lo, hi)) = &r.intervals {
                    row.extend(lo.row_slice(t).iter().map(|&v| Some(v)));
                    row.extend(hi.row_slice(t).iter().map(|&v| Some(v)));
                }
                row.push((t >= r.seed_frames).then(|| r.per_step_state[t] as f64));
                row
            })
            .collect();
        let path = a.run.out.join(format!("predictions_{}.csv", file_stem(&trial.name)));
        write_table(&path, &header, &rows)?;

        let truth = trial.to_raw();
        for t in r.seed_frames..trial.len() {
            all_pred.extend_from_slice(r.predictions.row_slice(t));
            all_truth.extend_from_slice(truth.row_slice(t));
            all_mask.extend((0..d).map(|j| trial.observed(t, j)));
        }
        per_trial.push(json!({
            "trial": trial.name,
            "nrmse_percent": r.nrmse_percent,
            "per_dim_nrmse": r.per_dim_nrmse,
            "scored_frames": trial.len() - r.seed_frames,
            "file": file_name(&path),
        }));
    }
    let d = ds.test[0].dim();
    let rows = all_truth.len() / d;
    let pooled = nrmse(
        &Tensor::new(rows, d, all_pred)?,
        &Tensor::new(rows, d, all_truth)?,
        Some(&all_mask),
    )?;
    write_json(
        &a.run.out.join("predict_summary.json"),
        &json!({
            "run": run,
            "forecast": fc,
            "nrmse_percent": pooled,
            "trials": per_trial,
        }),
    )?;
    println!("NRMSE {pooled:.4}% over {} test trial(s)", ds.test.len());
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let ck = load_checkpoint(&a.run)?;
    let run = RunConfig::resolve("generate", &a.run)?.adopt(&ck);
    let ds = dataset_for(&ck, run.manifest()?)?;
    let params = ck.params()?;
    let states: Vec<usize> = match a.state {
        Some(s) if s >= ck.config.states => {
            return Err(Error::Usage(format!(
                "state {s} out of range for a {}-state model",
                ck.config.states
            )))
        }
        Some(s) => vec![s],
        None => (0..ck.config.states).collect(),
    };
    let source = ds
        .test
        .first()
        .or_else(|| ds.train.first())
        .ok_or_else(|| Error::Usage("manifest has no trials".into()))?;
    prepare_out(&a.run.out)?;
    let lmax = ck.config.max_lag();
    let seed_latents = infer_seed_latents(source, &params, lmax, &ForecastConfig::default())?;
    let draw = if a.mean { LatentDraw::Mean } else { LatentDraw::Sample };
    let mut files = Vec::new();
    for &s in &states {
        let mut rng = RngStream::derive(run.seed, &[0x67656e, s as u64]);
        let g = generate_state_trajectory(s, &seed_latents, a.horizon, &params, draw, &mut rng)?;
        let frames = source.destandardize(&g.frames);
        let mut header = vec!["t".to_string()];
        header.extend(source.columns.iter().cloned());
        header.extend((0..ck.config.latent_dim).map(|k| format!("z{k}")));
        let rows: Vec<Vec<Option<f64>>> = (0..a.horizon)
            .map(|h| {
                let mut row = vec![Some(h as f64)];
                row.extend(frames.row_slice(h).iter().map(|&v| Some(v)));
                row.extend(g.latents.row_slice(h).iter().map(|&v| Some(v)));
                row
            })
            .collect();
        let path = a.run.out.join(format!("trajectory_state{s}.csv"));
        write_table(&path, &header, &rows)?;
        files.push(file_name(&path));
    }
    write_json(
        &a.run.out.join("generate_summary.json"),
        &json!({
            "run": run,
            "horizon": a.horizon,
            "draw": draw,
            "seed_trial": source.name,
            "seed_frames": lmax,
            "files": files,
        }),
    )?;
    println!("wrote {} trajectories", files.len());
    Ok(())
}

pub fn impute(a: &RunArgs) -> Result<()> {
    let ck = load_checkpoint(a)?;
    let run = RunConfig::resolve("impute", a)?.adopt(&ck);
    let manifest = run.manifest()?;
    let ds = dataset_for(&ck, manifest)?;
    let raw = raw_trials(manifest, Split::Train)?;
    let params = ck.params()?;
    let vstate = ck
        .variational
        .as_ref()
        .ok_or_else(|| Error::Usage("checkpoint has no variational state".into()))?;
    if vstate.trials() != ds.train.len() || vstate.mu.iter().zip(&ds.train).any(|(m, t)| m.rows() != t.len()) {
        return Err(Error::Usage("manifest train trials do not match the checkpoint".into()));
    }
    prepare_out(&a.out)?;
    let mut summary = Vec::new();
    for (n, (trial, original)) in ds.train.iter().zip(&raw).enumerate() {
        let filled = trial.destandardize(&impute_trial(trial, &params, &vstate.mu[n])?);
        // Observed cells are copied verbatim from the input file.
        let mut out = original.data.clone();
        for (i, (v, &m)) in out.data_mut().iter_mut().zip(&trial.mask).enumerate() {
            if !m {
                *v = filled.data()[i];
            }
        }
        let path = a.out.join(format!("imputed_{}.csv", file_stem(&trial.name)));
        write_trial_csv(&path, &trial.columns, &out, None)?;
        summary.push(json!({
            "trial": trial.name,
            "imputed_entries": trial.mask.iter().filter(|m| !**m).count(),
            "file": file_name(&path),
        }));
    }
    write_json(&a.out.join("impute_summary.json"), &json!({ "run": run, "trials": summary }))?;
    println!("imputed {} trial(s)", summary.len());
    Ok(())
}
