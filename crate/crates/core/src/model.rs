//! Generative side of the model: linear emission, recurrent discrete
//! transitions, and the switching deep vector-autoregressive latent prior.
//!
//! For state `s` and lag set `ℓ`, the latent prior is
//!
//! ```text
//! z_t | z_{t-ℓ}, s_t = s  ~  N(mean_s, diag(std_s²))
//! mean_s = Σ_{l∈ℓ} MeanHead(MLP_{s,l}(z_{t-l}))
//! std_s  = softplus(Σ_{l∈ℓ} StdHead(MLP_{s,l}(z_{t-l}))) + floor
//! ```
//!
//! and discrete states follow `s_t | s_{t-1}, z_{t-1} ~ Cat(softmax(Φ_{s_{t-1}} z_{t-1}))`.
//! For `t ≤ max(ℓ)` the latent prior is a standard normal.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::distributions::{Categorical, DiagGaussian, GaussianVar, RngStream, STD_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::{softplus, Tensor};

/// How the per-lag pre-std heads are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdCombine {
    /// Summed over lags, exactly like the mean heads.
    #[default]
    Sum,
    /// Averaged over lags.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of discrete states `S`.
    pub states: usize,
    /// Latent dimension `K`.
    pub latent_dim: usize,
    /// Lag set, strictly increasing.
    pub lags: Vec<usize>,
    /// Observation dimension `D`.
    pub obs_dim: usize,
    pub hidden: usize,
    pub mlp_layers: usize,
    /// Observation noise standard deviation, in standardized units.
    pub sigma_x: f64,
    #[serde(default)]
    pub std_combine: StdCombine,
    /// Adds a per-(previous, next) state bias to the transition logits.
    /// Off by default: transitions then depend on `z_{t-1}` only through
    /// `Φ`, and a zero latent gives uniform transitions.
    #[serde(default)]
    pub transition_bias: bool,
}

impl ModelConfig {
    /// Defaults for everything but the problem dimensions.
    pub fn new(states: usize, latent_dim: usize, lags: Vec<usize>, obs_dim: usize) -> Self {
        Self {
            states,
            latent_dim,
            lags,
            obs_dim,
            hidden: 16,
            mlp_layers: 1,
            sigma_x: 1.0,
            std_combine: StdCombine::Sum,
            transition_bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.states == 0 {
            return Err(Error::Validation("state count must be at least 1".into()));
        }
        if self.latent_dim == 0 || self.obs_dim == 0 {
            return Err(Error::Validation("latent and observation dims must be at least 1".into()));
        }
        if self.lags.is_empty() {
            return Err(Error::Validation("lag set is empty".into()));
        }
        if self.lags[0] == 0 || self.lags.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "lags must be positive and strictly increasing, got {:?}",
                self.lags
            )));
        }
        if self.mlp_layers > 0 && self.hidden == 0 {
            return Err(Error::Validation("hidden width must be at least 1".into()));
        }
        if !(self.sigma_x > 0.0) || !self.sigma_x.is_finite() {
            return Err(Error::Validation(format!("sigma_x must be positive, got {}", self.sigma_x)));
        }
        Ok(())
    }

    pub fn max_lag(&self) -> usize {
        *self.lags.last().expect("validated non-empty")
    }
}

/// Fully connected layer `x ↦ x·w + b` with `w: in × out`, `b: 1 × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    fn init(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let a = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: Tensor::from_fn(fan_in, fan_out, |_, _| rng.uniform_range(-a, a)),
            b: Tensor::from_fn(1, fan_out, |_, _| rng.uniform_range(-a, a)),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = x.matmul(&self.w).expect("layer shapes fixed at construction");
        for i in 0..y.rows() {
            for (v, b) in y.row_slice_mut(i).iter_mut().zip(self.b.data()) {
                *v += b;
            }
        }
        y
    }
}

/// The network for one `(state, lag)` pair: tanh hidden layers and two
/// linear heads producing a mean and a pre-softplus std.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagMlp {
    pub hidden: Vec<Dense>,
    pub mean_head: Dense,
    pub std_head: Dense,
}

impl LagMlp {
    fn init(k: usize, hidden: usize, layers: usize, rng: &mut RngStream) -> Self {
        let mut dims = k;
        let mut hs = Vec::with_capacity(layers);
        for _ in 0..layers {
            hs.push(Dense::init(dims, hidden, rng));
            dims = hidden;
        }
        Self {
            hidden: hs,
            mean_head: Dense::init(dims, k, rng),
            std_head: Dense::init(dims, k, rng),
        }
    }

    /// `(mean head, pre-std head)` for each row of `x`.
    pub fn forward(&self, x: &Tensor) -> (Tensor, Tensor) {
        let mut h = x.clone();
        for layer in &self.hidden {
            h = layer.forward(&h).map(f64::tanh);
        }
        (self.mean_head.forward(&h), self.std_head.forward(&h))
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for d in self.hidden.iter().chain([&self.mean_head, &self.std_head]) {
            out.push(&d.w);
            out.push(&d.b);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for d in self
            .hidden
            .iter_mut()
            .chain([&mut self.mean_head, &mut self.std_head])
        {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out
    }

    fn names(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.hidden.len() {
            out.push(format!("{prefix}.hidden{i}.w"));
            out.push(format!("{prefix}.hidden{i}.b"));
        }
        for head in ["mean_head", "std_head"] {
            out.push(format!("{prefix}.{head}.w"));
            out.push(format!("{prefix}.{head}.b"));
        }
        out
    }
}

/// All generative parameters θ.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeParams {
    pub config: ModelConfig,
    /// Emission matrix, `K × D`.
    pub w: Tensor,
    /// Transition weights, `(S·S) × K`; row `p·S + n` maps `z_{t-1}` to the
    /// logit of moving from state `p` to state `n`.
    pub phi: Tensor,
    /// `S × S` transition logit bias, row = previous state; present only
    /// with `transition_bias`.
    pub phi_bias: Option<Tensor>,
    /// `1 × S`.
    pub init_logits: Tensor,
    /// Indexed `[state][lag position]`.
    pub mlp: Vec<Vec<LagMlp>>,
}

impl GenerativeParams {
    pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let (s, k, d) = (config.states, config.latent_dim, config.obs_dim);
        let a = 1.0 / (k as f64).sqrt();
        let w = Tensor::from_fn(k, d, |_, _| rng.uniform_range(-a, a));
        let phi = Tensor::from_fn(s * s, k, |_, _| rng.uniform_range(-a, a));
        let mlp = (0..s)
            .map(|_| {
                config
                    .lags
                    .iter()
                    .map(|_| LagMlp::init(k, config.hidden, config.mlp_layers, rng))
                    .collect()
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            w,
            phi,
            phi_bias: config.transition_bias.then(|| Tensor::zeros(s, s)),
            init_logits: Tensor::zeros(1, s),
            mlp,
        })
    }

    /// Every parameter tensor in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.w, &self.phi, &self.init_logits];
        out.extend(self.phi_bias.as_ref());
        for per_state in &self.mlp {
            for net in per_state {
                out.extend(net.tensors());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w, &mut self.phi, &mut self.init_logits];
        out.extend(self.phi_bias.as_mut());
        for per_state in &mut self.mlp {
            for net in per_state {
                out.extend(net.tensors_mut());
            }
        }
        out
    }

    /// Names aligned with [`GenerativeParams::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["W".to_string(), "Phi".to_string(), "init_logits".to_string()];
        if self.phi_bias.is_some() {
            out.push("Phi_bias".to_string());
        }
        for (s, per_state) in self.mlp.iter().enumerate() {
            for (li, net) in per_state.iter().enumerate() {
                out.extend(net.names(&format!("mlp.s{s}.lag{}", self.config.lags[li])));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameters of the state/lag networks alone.
    pub fn temporal_param_count(&self) -> usize {
        self.mlp
            .iter()
            .flatten()
            .map(|n| n.tensors().iter().map(|t| t.len()).sum::<usize>())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// `zᵀW` for a `1 × K` latent (or row-wise for `T × K`).
    pub fn emit_mean(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols() != self.config.latent_dim {
            return Err(Error::Dimension(format!(
                "emit_mean: latent has {} columns, expected {}",
                z.cols(),
                self.config.latent_dim
            )));
        }
        z.matmul(&self.w)
    }

    pub fn transition_probs(&self, s_prev: usize, z_prev: &Tensor) -> Result<Categorical> {
        let s = self.config.states;
        if s_prev >= s {
            return Err(Error::Usage(format!("state {s_prev} out of range for S={s}")));
        }
        let block = self.phi.slice_rows(s_prev * s, (s_prev + 1) * s)?;
        let mut logits = block.matmul(&z_prev.reshape(z_prev.len(), 1)?)?.into_data();
        if let Some(b) = &self.phi_bias {
            for (l, v) in logits.iter_mut().zip(b.row_slice(s_prev)) {
                *l += v;
            }
        }
        Ok(Categorical::from_logits(&logits))
    }

    pub fn initial_state_prior(&self) -> Categorical {
        Categorical::from_logits(self.init_logits.data())
    }

    /// Prior over `z_t` given `z_hist[l] = z_{t-l}` for every lag `l`.
    pub fn var_prior(&self, s: usize, z_hist: &BTreeMap<usize, Tensor>) -> Result<DiagGaussian> {
        if s >= self.config.states {
            return Err(Error::Usage(format!(
                "state {s} out of range for S={}",
                self.config.states
            )));
        }
        let k = self.config.latent_dim;
        let mut mean = Tensor::zeros(1, k);
        let mut pre = Tensor::zeros(1, k);
        for (li, lag) in self.config.lags.iter().enumerate() {
            let z = z_hist
                .get(lag)
                .ok_or_else(|| Error::Usage(format!("history is missing lag {lag}")))?;
            let (m, p) = self.mlp[s][li].forward(&z.reshape(1, k)?);
            mean.add_assign(&m);
            pre.add_assign(&p);
        }
        if self.config.std_combine == StdCombine::Mean {
            pre = pre.scale(1.0 / self.config.lags.len() as f64);
        }
        DiagGaussian::new(mean, pre.map(|v| softplus(v) + STD_FLOOR))
    }

    /// [`GenerativeParams::var_prior`] with the history given as a sequence
    /// whose last element is `z_{t-1}`. Falls back to the standard normal
    /// when the sequence is shorter than the largest lag.
    pub fn var_prior_from_past(&self, s: usize, past: &[Tensor]) -> Result<DiagGaussian> {
        if past.len() < self.config.max_lag() {
            return Ok(DiagGaussian::standard(self.config.latent_dim));
        }
        let hist = self
            .config
            .lags
            .iter()
            .map(|&l| (l, past[past.len() - l].clone()))
            .collect();
        self.var_prior(s, &hist)
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> ParamVars<'t> {
        let mlp = self
            .mlp
            .iter()
            .map(|per_state| per_state.iter().map(|n| MlpVars::bind(n, tape)).collect())
            .collect();
        ParamVars {
            w: tape.leaf(self.w.clone()),
            phi: tape.leaf(self.phi.clone()),
            phi_bias: self.phi_bias.as_ref().map(|b| tape.leaf(b.clone())),
            init_logits: tape.leaf(self.init_logits.clone()),
            mlp,
            lags: self.config.lags.clone(),
            states: self.config.states,
            std_combine: self.config.std_combine,
        }
    }
}

pub struct DenseVars<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
}

impl<'t> DenseVars<'t> {
    fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let rows = x.shape().0;
        x.matmul(self.w)?.add(self.b.tile_rows(rows))
    }
}

pub struct MlpVars<'t> {
    pub hidden: Vec<DenseVars<'t>>,
    pub mean_head: DenseVars<'t>,
    pub std_head: DenseVars<'t>,
}

impl<'t> MlpVars<'t> {
    fn bind(net: &LagMlp, tape: &'t Tape) -> Self {
        let d = |l: &Dense| DenseVars {
            w: tape.leaf(l.w.clone()),
            b: tape.leaf(l.b.clone()),
        };
        Self {
            hidden: net.hidden.iter().map(d).collect(),
            mean_head: d(&net.mean_head),
            std_head: d(&net.std_head),
        }
    }

    pub fn forward(&self, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let mut h = x;
        for layer in &self.hidden {
            h = layer.forward(h)?.tanh();
        }
        Ok((self.mean_head.forward(h)?, self.std_head.forward(h)?))
    }

    fn leaves(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        for d in self.hidden.iter().chain([&self.mean_head, &self.std_head]) {
            out.push(d.w);
            out.push(d.b);
        }
        out
    }
}

/// θ bound onto a tape as leaves.
pub struct ParamVars<'t> {
    pub w: Var<'t>,
    pub phi: Var<'t>,
    pub phi_bias: Option<Var<'t>>,
    pub init_logits: Var<'t>,
    pub mlp: Vec<Vec<MlpVars<'t>>>,
    lags: Vec<usize>,
    states: usize,
    std_combine: StdCombine,
}

impl<'t> ParamVars<'t> {
    /// Leaves in the order of [`GenerativeParams::tensors`].
    pub fn leaves(&self) -> Vec<Var<'t>> {
        let mut out = vec![self.w, self.phi, self.init_logits];
        out.extend(self.phi_bias);
        for per_state in &self.mlp {
            for net in per_state {
                out.extend(net.leaves());
            }
        }
        out
    }

    /// Emission means for each latent row.
    pub fn emit(&self, z: Var<'t>) -> Result<Var<'t>> {
        z.matmul(self.w)
    }

    /// `log p(s_t = n | s_{t-1} = p, z_{t-1})` for each row of `z_prev`
    /// (`m × K`), laid out `(m·S) × S` with row `i·S + p`, column `n`.
    pub fn transition_log_probs(&self, z_prev: Var<'t>) -> Result<Var<'t>> {
        let m = z_prev.shape().0;
        let s = self.states;
        let mut logits = z_prev.matmul(self.phi.transpose())?.reshape(m * s, s)?;
        if let Some(b) = self.phi_bias {
            logits = logits.add(b.tile_rows(m))?;
        }
        Ok(logits.log_softmax_rows())
    }

    pub fn initial_log_probs(&self) -> Var<'t> {
        self.init_logits.log_softmax_rows()
    }

    /// Prior over `m` latents for state `s`; `lagged[i]` holds the `m × K`
    /// rows of `z_{t - lags[i]}`.
    pub fn var_prior(&self, s: usize, lagged: &[Var<'t>]) -> Result<GaussianVar<'t>> {
        if lagged.len() != self.lags.len() {
            return Err(Error::Usage(format!(
                "expected {} lagged inputs, got {}",
                self.lags.len(),
                lagged.len()
            )));
        }
        let mut mean: Option<Var<'t>> = None;
        let mut pre: Option<Var<'t>> = None;
        for (net, &x) in self.mlp[s].iter().zip(lagged) {
            let (m, p) = net.forward(x)?;
            mean = Some(match mean {
                Some(acc) => acc.add(m)?,
                None => m,
            });
            pre = Some(match pre {
                Some(acc) => acc.add(p)?,
                None => p,
            });
        }
        let mut pre = pre.expect("lag set non-empty");
        if self.std_combine == StdCombine::Mean {
            pre = pre.mul_scalar(1.0 / self.lags.len() as f64);
        }
        Ok(GaussianVar::from_unconstrained(mean.expect("lag set non-empty"), pre))
    }
}
