//! Data generators: the nonlinear pendulum `θ̈ + g sin θ = 0` and a
//! ground-truth switching vector-autoregressive process whose regime labels
//! serve as a segmentation oracle.

use serde::{Deserialize, Serialize};

use crate::data::TrialTensor;
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumConfig {
    /// Number of recorded frames.
    pub steps: usize,
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Initial angle in radians.
    pub theta0: f64,
    /// Initial angular velocity in rad/s.
    pub omega0: f64,
    /// Gravitational acceleration in m/s².
    pub g: f64,
    /// RK4 steps per recorded interval.
    pub substeps: usize,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            dt: 0.05,
            theta0: std::f64::consts::FRAC_PI_3,
            omega0: 0.0,
            g: 9.81,
            substeps: 4,
        }
    }
}

/// One classical fourth-order Runge–Kutta step of `y' = f(y)`.
pub fn rk4_step<const N: usize>(f: impl Fn(&[f64; N]) -> [f64; N], y: &[f64; N], h: f64) -> [f64; N] {
    let axpy = |a: &[f64; N], k: &[f64; N], s: f64| -> [f64; N] {
        let mut out = *a;
        for i in 0..N {
            out[i] += s * k[i];
        }
        out
    };
    let k1 = f(y);
    let k2 = f(&axpy(y, &k1, h / 2.0));
    let k3 = f(&axpy(y, &k2, h / 2.0));
    let k4 = f(&axpy(y, &k3, h));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// `(θ, ω)` at each recorded frame, starting with the initial condition.
pub fn integrate_pendulum(cfg: &PendulumConfig) -> Result<Vec<[f64; 2]>> {
    if !(cfg.dt > 0.0) {
        return Err(Error::Validation(format!("dt must be positive, got {}", cfg.dt)));
    }
    if cfg.substeps == 0 {
        return Err(Error::Validation("substeps must be at least 1".into()));
    }
    let g = cfg.g;
    let f = |y: &[f64; 2]| [y[1], -g * y[0].sin()];
    let h = cfg.dt / cfg.substeps as f64;
    let mut state = [cfg.theta0, cfg.omega0];
    let mut out = Vec::with_capacity(cfg.steps);
    for i in 0..cfg.steps {
        if i > 0 {
            for _ in 0..cfg.substeps {
                state = rk4_step(f, &state, h);
            }
        }
        out.push(state);
    }
    Ok(out)
}

/// Mechanical energy per unit mass and length², `½ω² − g cos θ`.
pub fn pendulum_energy(theta: f64, omega: f64, g: f64) -> f64 {
    0.5 * omega * omega - g * theta.cos()
}

/// Bob coordinates `(sin θ, −cos θ)` for a unit-length pendulum.
pub fn simulate_pendulum(cfg: &PendulumConfig) -> Result<TrialTensor> {
    let states = integrate_pendulum(cfg)?;
    let raw = Tensor::from_fn(states.len(), 2, |i, j| {
        let th = states[i][0];
        if j == 0 {
            th.sin()
        } else {
            -th.cos()
        }
    });
    Ok(TrialTensor::from_raw("pendulum", raw, None)?.with_columns(vec!["x".into(), "y".into()]))
}

/// Regime dynamics `z_t = Σ_i coeffs[i]·z_{t-1-i} + noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarRegime {
    /// Lag-1 first; each `K × K`, acting on column vectors.
    pub coeffs: Vec<Tensor>,
}

impl VarRegime {
    /// Scalar damped oscillator `z_t = 2r cos(ω) z_{t-1} − r² z_{t-2}`
    /// applied independently to each of `k` dimensions.
    pub fn damped_oscillator(k: usize, radius: f64, freq: f64) -> Self {
        let a1 = Tensor::identity(k).scale(2.0 * radius * freq.cos());
        let a2 = Tensor::identity(k).scale(-radius * radius);
        Self { coeffs: vec![a1, a2] }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// Spectral radius of the companion matrix, from `‖C^n‖^{1/n}` with
    /// `n = 2^40` reached by repeated squaring.
    pub fn spectral_radius(&self) -> f64 {
        let k = self.coeffs[0].rows();
        let p = self.order();
        let n = k * p;
        let mut c = Tensor::zeros(n, n);
        for (i, a) in self.coeffs.iter().enumerate() {
            for r in 0..k {
                for col in 0..k {
                    c.set(r, i * k + col, a.get(r, col));
                }
            }
        }
        for i in k..n {
            c.set(i, i - k, 1.0);
        }
        let mut log_norm = 0.0;
        let mut m = c;
        let squarings = 40;
        for _ in 0..squarings {
            let norm = m.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            log_norm = 2.0 * (log_norm + norm.ln());
            m = m.scale(1.0 / norm);
            m = m.matmul(&m).expect("square");
        }
        let final_norm = m.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if final_norm == 0.0 {
            return 0.0;
        }
        ((log_norm + final_norm.ln()) / 2f64.powi(squarings)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub regimes: Vec<VarRegime>,
    /// `(regime, dwell length)` segments; `T` is the total length.
    pub schedule: Vec<(usize, usize)>,
    /// Latent innovation standard deviation.
    pub noise_std: f64,
    /// Observation noise standard deviation.
    pub obs_noise_std: f64,
    /// `K × D`.
    pub emission: Tensor,
    /// Latents before the first frame, most recent last. Drawn from
    /// `N(0, 0.5²)` when empty.
    pub initial: Vec<Tensor>,
}

impl SyntheticSpec {
    /// Two second-order regimes (slow and fast damped oscillations) over a
    /// fixed alternating schedule of total length `t`, observed through a
    /// fixed `2 × 4` emission.
    pub fn two_regime(t: usize) -> Self {
        let pattern = [60, 80, 50, 90, 70, 60, 90];
        let mut schedule = Vec::new();
        let mut total = 0;
        let mut i = 0;
        while total < t {
            let len = pattern[i % pattern.len()].min(t - total);
            schedule.push((i % 2, len));
            total += len;
            i += 1;
        }
        Self {
            regimes: vec![
                VarRegime::damped_oscillator(2, 0.97, 0.15),
                VarRegime::damped_oscillator(2, 0.97, 0.9),
            ],
            schedule,
            noise_std: 0.1,
            obs_noise_std: 0.05,
            emission: Tensor::from_rows(&[vec![1.0, 0.4, -0.6, 0.2], vec![-0.3, 0.9, 0.5, 0.8]])
                .expect("fixed shape"),
            initial: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.schedule.iter().map(|(_, n)| n).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.emission.rows()
    }

    pub fn obs_dim(&self) -> usize {
        self.emission.cols()
    }

    pub fn max_order(&self) -> usize {
        self.regimes.iter().map(VarRegime::order).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::Validation("no regimes".into()));
        }
        let k = self.latent_dim();
        for (r, reg) in self.regimes.iter().enumerate() {
            if reg.order() == 0 || reg.order() > 2 {
                return Err(Error::Validation(format!("regime {r} has order {}, expected 1 or 2", reg.order())));
            }
            if reg.coeffs.iter().any(|a| a.shape() != (k, k)) {
                return Err(Error::Validation(format!("regime {r} coefficients are not {k}x{k}")));
            }
            let rho = reg.spectral_radius();
            if !(rho < 1.0) {
                return Err(Error::Validation(format!("regime {r} is unstable (spectral radius {rho:.4})")));
            }
        }
        if let Some((r, _)) = self.schedule.iter().find(|(r, _)| *r >= self.regimes.len()) {
            return Err(Error::Validation(format!("schedule references unknown regime {r}")));
        }
        if !self.initial.is_empty()
            && (self.initial.len() != self.max_order() || self.initial.iter().any(|z| z.len() != k))
        {
            return Err(Error::Validation("initial latents do not match order and dimension".into()));
        }
        if !(self.noise_std >= 0.0 && self.obs_noise_std >= 0.0) {
            return Err(Error::Validation("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.schedule
            .iter()
            .flat_map(|&(r, n)| std::iter::repeat(r).take(n))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub trial: TrialTensor,
    pub labels: Vec<usize>,
    /// `T × K` ground-truth latents.
    pub latents: Tensor,
}

pub fn generate_switching_var(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticSample> {
    spec.validate()?;
    let mut rng = RngStream::derive(seed, &[0x5157]);
    let (k, d, t_len) = (spec.latent_dim(), spec.obs_dim(), spec.len());
    let p = spec.max_order();
    let mut past: Vec<Vec<f64>> = if spec.initial.is_empty() {
        (0..p).map(|_| (0..k).map(|_| 0.5 * rng.normal()).collect()).collect()
    } else {
        spec.initial.iter().map(|z| z.data().to_vec()).collect()
    };
    let labels = spec.labels();
    let mut latents = Tensor::zeros(t_len, k);
    for (t, &r) in labels.iter().enumerate() {
        let reg = &spec.regimes[r];
        let mut z = vec![0.0; k];
        for (i, a) in reg.coeffs.iter().enumerate() {
            let prev = &past[past.len() - 1 - i];
            for row in 0..k {
                z[row] += (0..k).map(|c| a.get(row, c) * prev[c]).sum::<f64>();
            }
        }
        for v in z.iter_mut() {
            *v += spec.noise_std * rng.normal();
        }
        latents.row_slice_mut(t).copy_from_slice(&z);
        past.push(z);
        if past.len() > p {
            past.remove(0);
        }
    }
    let mut obs = latents.matmul(&spec.emission)?;
    for v in obs.data_mut() {
        *v += spec.obs_noise_std * rng.normal();
    }
    debug_assert_eq!(obs.shape(), (t_len, d));
    let trial = TrialTensor::from_raw("synthetic", obs, None)?;
    Ok(SyntheticSample {
        trial,
        labels,
        latents,
    })
}

/// First half of the trajectory for training, second half for testing,
/// both in raw coordinates.
pub fn pendulum_split(cfg: &PendulumConfig) -> Result<(TrialTensor, TrialTensor)> {
    let full = simulate_pendulum(cfg)?;
    let half = full.len() / 2;
    Ok((
        full.slice_frames(0, half, "pendulum-train")?,
        full.slice_frames(half, full.len(), "pendulum-test")?,
    ))
}

#[derive(Clone, Debug)]
pub struct SyntheticSplit {
    pub train: SyntheticSample,
    pub test: SyntheticSample,
}

/// Two independent draws from [`SyntheticSpec::two_regime`].
pub fn synthetic_split(train_len: usize, test_len: usize, seed: u64) -> Result<SyntheticSplit> {
    let mut train = generate_switching_var(&SyntheticSpec::two_regime(train_len), seed)?;
    let test_seed = RngStream::derive(seed, &[0x7465_7374]).next_u64();
    let mut test = generate_switching_var(&SyntheticSpec::two_regime(test_len), test_seed)?;
    train.trial.name = "synthetic-train".into();
    test.trial.name = "synthetic-test".into();
    Ok(SyntheticSplit { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_stays_put() {
        let cfg = PendulumConfig {
            theta0: 0.0,
            ..Default::default()
        };
        let tr = simulate_pendulum(&cfg).unwrap();
        for t in 0..tr.len() {
            assert_eq!(tr.data.get(t, 0), 0.0);
            assert_eq!(tr.data.get(t, 1), -1.0);
        }
    }

    #[test]
    fn energy_conserved_over_default_run() {
        let cfg = PendulumConfig::default();
        let states = integrate_pendulum(&cfg).unwrap();
        let e0 = pendulum_energy(states[0][0], states[0][1], cfg.g);
        let worst = states
            .iter()
            .map(|s| ((pendulum_energy(s[0], s[1], cfg.g) - e0) / e0).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn small_angle_period() {
        let cfg = PendulumConfig {
            theta0: 0.01,
            ..Default::default()
        };
        let states = integrate_pendulum(&cfg).unwrap();
        // Linear interpolation of downward zero crossings of θ.
        let mut crossings = Vec::new();
        for i in 1..states.len() {
            let (a, b) = (states[i - 1][0], states[i][0]);
            if a > 0.0 && b <= 0.0 {
                crossings.push((i - 1) as f64 + a / (a - b));
            }
        }
        assert!(crossings.len() >= 3);
        let n = crossings.len() - 1;
        let period = (crossings[n] - crossings[0]) / n as f64 * cfg.dt;
        let expected = 2.0 * std::f64::consts::PI / cfg.g.sqrt();
        assert!(((period - expected) / expected).abs() <= 0.02, "{period} vs {expected}");
    }

    #[test]
    fn rk4_convergence_order() {
        let run = |dt: f64| {
            integrate_pendulum(&PendulumConfig {
                steps: 41,
                dt,
                substeps: 1,
                ..Default::default()
            })
            .unwrap()
            .last()
            .copied()
            .unwrap()
        };
        // Compare at a common final time of 2 s.
        let coarse = run(0.05);
        let half = integrate_pendulum(&PendulumConfig { steps: 81, dt: 0.025, substeps: 1, ..Default::default() }).unwrap()[80];
        let quarter = integrate_pendulum(&PendulumConfig { steps: 161, dt: 0.0125, substeps: 1, ..Default::default() }).unwrap()[160];
        let e1 = (coarse[0] - half[0]).abs().max((coarse[1] - half[1]).abs());
        let e2 = (half[0] - quarter[0]).abs().max((half[1] - quarter[1]).abs());
        let order = (e1 / e2).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn bad_dt_rejected() {
        let cfg = PendulumConfig { dt: 0.0, ..Default::default() };
        assert!(simulate_pendulum(&cfg).is_err());
    }

    #[test]
    fn geometric_decay_without_noise() {
        let spec = SyntheticSpec {
            regimes: vec![VarRegime { coeffs: vec![Tensor::scalar(0.5)] }],
            schedule: vec![(0, 20)],
            noise_std: 0.0,
            obs_noise_std: 0.0,
            emission: Tensor::scalar(1.0),
            initial: vec![Tensor::scalar(1.0)],
        };
        let s = generate_switching_var(&spec, 3).unwrap();
        for t in 0..20 {
            // Frame t is t+1 steps after the initial latent.
            assert!((s.latents.get(t, 0) - 0.5f64.powi(t as i32 + 1)).abs() < 1e-15);
        }
    }

    #[test]
    fn labels_follow_schedule() {
        let spec = SyntheticSpec::two_regime(500);
        let s = generate_switching_var(&spec, 1).unwrap();
        assert_eq!(s.labels.len(), 500);
        assert_eq!(s.trial.len(), 500);
        assert!(s.labels.iter().all(|&l| l < 2));
        let switches: Vec<usize> = (1..500).filter(|&t| s.labels[t] != s.labels[t - 1]).collect();
        let mut boundary = 0;
        let expected: Vec<usize> = spec.schedule[..spec.schedule.len() - 1]
            .iter()
            .map(|(_, n)| {
                boundary += n;
                boundary
            })
            .collect();
        assert_eq!(switches, expected);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SyntheticSpec::two_regime(200);
        let a = generate_switching_var(&spec, 5).unwrap();
        let b = generate_switching_var(&spec, 5).unwrap();
        assert_eq!(a.trial.data, b.trial.data);
        let c = generate_switching_var(&spec, 6).unwrap();
        assert_ne!(a.trial.data, c.trial.data);
    }

    #[test]
    fn unstable_regime_rejected() {
        let mut spec = SyntheticSpec::two_regime(100);
        spec.regimes[1] = VarRegime::damped_oscillator(2, 1.05, 0.3);
        assert!(matches!(generate_switching_var(&spec, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn spectral_radius_of_damped_oscillator() {
        let r = VarRegime::damped_oscillator(2, 0.9, 0.4).spectral_radius();
        assert!((r - 0.9).abs() < 1e-6, "{r}");
    }
}
