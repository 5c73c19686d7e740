//! The forecasting model: per step, every node runs one shared LSTM stack on
//! the concatenation of its previous target and its graph-convolved
//! covariate row, and a mixture head turns the hidden state into a
//! next-value distribution. Conditioning is teacher forced; forecasting
//! draws ancestrally and feeds the draws back.

mod forecast_io;

pub use forecast_io::{read_forecast_csv, write_forecast_csv, write_samples_csv, ForecastTable};

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{DensityError, GmmParams, SigmaLink};
use crate::graph::{diffusion_convolve, GraphError};
use crate::nn::lstm::uniform_fan_in;
use crate::nn::tape::{Tape, TensorId};
use crate::nn::{lstm_step_tape, LstmCellParams, LstmTapeIds, NnError, ParamStore};
use crate::seeding;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("window has unobserved targets at step {step}")]
    MissingTargets { step: usize },
    #[error("checkpoint does not match the run configuration: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub n_layers: usize,
    pub mixture_k: usize,
    pub horizon: usize,
    /// Trajectories drawn per forecast.
    pub n_samples: usize,
    pub covariate_dim: usize,
    #[serde(default)]
    pub sigma_link: SigmaLink,
    pub sigma_floor: f64,
    /// When false the graph-convolved covariates are zeroed, leaving a
    /// target-only autoregressive model.
    pub use_covariates: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 16,
            n_layers: 1,
            mixture_k: 5,
            horizon: 7,
            n_samples: 12,
            covariate_dim: 2,
            sigma_link: SigmaLink::Softplus,
            sigma_floor: 1e-6,
            use_covariates: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_size == 0
            || self.n_layers == 0
            || self.mixture_k == 0
            || self.horizon == 0
            || self.n_samples == 0
        {
            return Err(ModelError::ShapeMismatch(
                "all model dimensions must be positive".into(),
            ));
        }
        if self.mixture_k > 16 {
            return Err(ModelError::ShapeMismatch(format!(
                "mixture_k = {} exceeds 16",
                self.mixture_k
            )));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        1 + self.covariate_dim
    }
}

/// Per-layer (hidden, cell) values, each N×H.
pub type LayerStates = Vec<(Array2<f64>, Array2<f64>)>;

/// Inputs for one recurrence step.
pub struct StepInput {
    /// Previous targets, one per node.
    pub z_prev: Array1<f64>,
    /// Graph-convolved covariates, N×P.
    pub gc: Array2<f64>,
    pub state: LayerStates,
}

/// Model parameters plus the node count they are shaped for.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub n_nodes: usize,
    pub params: ParamStore,
}

/// Checkpoint metadata stored beside the tensors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub cfg: ModelConfig,
    pub n_nodes: usize,
    pub node_ids: Vec<String>,
}

impl Model {
    /// Initialize parameters: edge mask at ones plus small noise, LSTM and
    /// head weights uniform in ±1/√fan_in, zero biases except the forget
    /// gate block.
    pub fn new(cfg: ModelConfig, n_nodes: usize, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        if n_nodes == 0 {
            return Err(ModelError::ShapeMismatch("need at least one node".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seeding::fanout(seed, "model-init"));
        let mut params = ParamStore::new();

        let edge = Array2::from_shape_fn((n_nodes, n_nodes), |_| {
            1.0 + rand::Rng::random_range(&mut rng, -0.01..0.01)
        });
        params.insert("edge.w", edge)?;

        let (h, k) = (cfg.hidden_size, cfg.mixture_k);
        for layer in 0..cfg.n_layers {
            let input = if layer == 0 { cfg.input_dim() } else { h };
            let cell = LstmCellParams::init(input, h, &mut rng);
            params.insert(&format!("lstm{layer}.w_ih"), cell.w_ih)?;
            params.insert(&format!("lstm{layer}.w_hh"), cell.w_hh)?;
            params.insert(&format!("lstm{layer}.bias"), cell.bias)?;
        }
        for head in ["weight", "mean", "scale"] {
            params.insert(&format!("head.{head}.w"), uniform_fan_in(k, h, &mut rng))?;
            params.insert(&format!("head.{head}.b"), Array2::zeros((1, k)))?;
        }
        Ok(Self {
            cfg,
            n_nodes,
            params,
        })
    }

    /// Zero every state tensor: the h₀ = c₀ = 0 start of the recurrence.
    pub fn zero_state(&self) -> LayerStates {
        (0..self.cfg.n_layers)
            .map(|_| {
                (
                    Array2::zeros((self.n_nodes, self.cfg.hidden_size)),
                    Array2::zeros((self.n_nodes, self.cfg.hidden_size)),
                )
            })
            .collect()
    }

    pub fn save(&self, path: &std::path::Path, node_ids: &[String]) -> Result<(), ModelError> {
        let meta = CheckpointMeta {
            cfg: self.cfg.clone(),
            n_nodes: self.n_nodes,
            node_ids: node_ids.to_vec(),
        };
        let meta = serde_json::to_string(&meta)
            .map_err(|e| ModelError::CheckpointMismatch(e.to_string()))?;
        self.params.save(path, &meta)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, CheckpointMeta), ModelError> {
        let (params, meta) = ParamStore::load(path)?;
        let meta: CheckpointMeta = serde_json::from_str(&meta)
            .map_err(|e| ModelError::CheckpointMismatch(format!("bad metadata: {e}")))?;
        meta.cfg.validate()?;
        let model = Self {
            cfg: meta.cfg.clone(),
            n_nodes: meta.n_nodes,
            params,
        };
        model.check_param_shapes()?;
        Ok((model, meta))
    }

    /// Reject a checkpoint whose shapes or node order disagree with the data
    /// it is being applied to.
    pub fn ensure_compatible(
        &self,
        meta: &CheckpointMeta,
        node_ids: &[String],
        covariate_dim: usize,
    ) -> Result<(), ModelError> {
        if meta.node_ids != node_ids {
            return Err(ModelError::CheckpointMismatch(format!(
                "checkpoint was trained on {} node(s) {:?}…, data has {} node(s) {:?}…",
                meta.node_ids.len(),
                meta.node_ids.first(),
                node_ids.len(),
                node_ids.first()
            )));
        }
        if self.cfg.covariate_dim != covariate_dim {
            return Err(ModelError::CheckpointMismatch(format!(
                "checkpoint expects {} covariate feature(s), data has {covariate_dim}",
                self.cfg.covariate_dim
            )));
        }
        Ok(())
    }

    fn check_param_shapes(&self) -> Result<(), ModelError> {
        let want = Model::new(self.cfg.clone(), self.n_nodes, 0)?;
        if want.params.len() != self.params.len() {
            return Err(ModelError::CheckpointMismatch(format!(
                "expected {} tensors, found {}",
                want.params.len(),
                self.params.len()
            )));
        }
        for id in want.params.ids() {
            let name = want.params.name(id);
            let found = self
                .params
                .id(name)
                .ok_or_else(|| ModelError::CheckpointMismatch(format!("missing tensor {name}")))?;
            if self.params.value(found).dim() != want.params.value(id).dim() {
                return Err(ModelError::CheckpointMismatch(format!(
                    "tensor {name} is {:?}, expected {:?}",
                    self.params.value(found).dim(),
                    want.params.value(id).dim()
                )));
            }
        }
        Ok(())
    }

    fn leased(&self, tape: &mut Tape) -> Leased {
        let all = self.params.lease(tape);
        let id = |name: &str| all[self.params.id(name).expect("known name").0];
        Leased {
            edge: id("edge.w"),
            lstm: (0..self.cfg.n_layers)
                .map(|l| LstmTapeIds {
                    w_ih: id(&format!("lstm{l}.w_ih")),
                    w_hh: id(&format!("lstm{l}.w_hh")),
                    bias: id(&format!("lstm{l}.bias")),
                })
                .collect(),
            head_weight: (id("head.weight.w"), id("head.weight.b")),
            head_mean: (id("head.mean.w"), id("head.mean.b")),
            head_scale: (id("head.scale.w"), id("head.scale.b")),
            all,
        }
    }

    /// One recurrence step on the tape. Returns the mixture tensors and the
    /// next state ids.
    fn step_on_tape(
        &self,
        tape: &mut Tape,
        leased: &Leased,
        z_prev: TensorId,
        gc: TensorId,
        state: &[(TensorId, TensorId)],
    ) -> (StepDistTape, Vec<(TensorId, TensorId)>) {
        let mut x = tape.concat_cols(z_prev, gc);
        let mut next_state = Vec::with_capacity(state.len());
        for (layer, &(h_prev, c_prev)) in state.iter().enumerate() {
            let (h, c) = lstm_step_tape(
                tape,
                leased.lstm[layer],
                self.cfg.hidden_size,
                x,
                h_prev,
                c_prev,
            );
            next_state.push((h, c));
            x = h;
        }

        let logits = dense(tape, x, leased.head_weight);
        let log_w = tape.log_softmax_rows(logits);
        let mu = dense(tape, x, leased.head_mean);
        let raw = dense(tape, x, leased.head_scale);
        let positive = match self.cfg.sigma_link {
            SigmaLink::Softplus => tape.softplus(raw),
            SigmaLink::Exp => tape.exp(raw),
        };
        let sigma = tape.add_scalar(positive, self.cfg.sigma_floor);
        (StepDistTape { log_w, mu, sigma }, next_state)
    }

    /// Per-node NLL column (N×1) of observed z under the step's mixture.
    fn nll_on_tape(&self, tape: &mut Tape, dist: &StepDistTape, z: TensorId) -> TensorId {
        const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
        let k = self.cfg.mixture_k;
        let zb = tape.broadcast_col(z, k);
        let diff = tape.sub(zb, dist.mu);
        let u = tape.div(diff, dist.sigma);
        let sq = tape.mul(u, u);
        let half = tape.scale(sq, -0.5);
        let ln_sigma = tape.ln(dist.sigma);
        let centered = tape.sub(half, ln_sigma);
        let log_pdf = tape.add_scalar(centered, -HALF_LN_2PI);
        let joint = tape.add(log_pdf, dist.log_w);
        let lse = tape.logsumexp_rows(joint);
        tape.neg(lse)
    }

    /// Teacher-forced unroll of a whole window on one tape. The loss is the
    /// mean NLL over `loss_range` steps; per-step means are reported for all
    /// steps. The step-t input is the observed target of step t−1 (zero for
    /// the first step of the window).
    pub fn forward_window(
        &self,
        view: &WindowView<'_>,
        loss_range: std::ops::Range<usize>,
    ) -> Result<WindowForward, ModelError> {
        self.check_view(view)?;
        let t_len = view.targets.ncols();
        if loss_range.start >= loss_range.end || loss_range.end > t_len {
            return Err(ModelError::ShapeMismatch(format!(
                "loss range {loss_range:?} outside window of {t_len} steps"
            )));
        }
        for (t, col) in view.targets.columns().into_iter().enumerate() {
            if col.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::MissingTargets { step: t });
            }
        }

        let n = self.n_nodes;
        let mut tape = Tape::new();
        let leased = self.leased(&mut tape);
        let mut state: Vec<(TensorId, TensorId)> = self
            .zero_state()
            .into_iter()
            .map(|(h, c)| (tape.constant(h), tape.constant(c)))
            .collect();

        let mut per_step_nll = Vec::with_capacity(t_len);
        let mut step_dists = Vec::with_capacity(t_len);
        let mut loss_terms: Option<TensorId> = None;

        for t in 0..t_len {
            let z_prev_col = if t == 0 {
                Array2::zeros((n, 1))
            } else {
                view.targets.column(t - 1).to_owned().insert_axis(Axis(1))
            };
            let z_prev = tape.constant(z_prev_col);
            let gc = self.gc_on_tape(&mut tape, &leased, view, t);
            let (dist, next_state) = self.step_on_tape(&mut tape, &leased, z_prev, gc, &state);
            state = next_state;

            let z = tape.constant(view.targets.column(t).to_owned().insert_axis(Axis(1)));
            let nll_col = self.nll_on_tape(&mut tape, &dist, z);
            let nll_sum = tape.sum(nll_col);
            per_step_nll.push(tape.value(nll_sum)[[0, 0]] / n as f64);
            step_dists.push(self.dist_values(&tape, &dist));
            if loss_range.contains(&t) {
                loss_terms = Some(match loss_terms {
                    Some(acc) => tape.add(acc, nll_sum),
                    None => nll_sum,
                });
            }
        }

        let total = loss_terms.expect("nonempty loss range");
        let loss = tape.scale(total, 1.0 / (n * loss_range.len()) as f64);
        let loss_value = tape.value(loss)[[0, 0]];
        let final_state = state
            .iter()
            .map(|&(h, c)| (tape.value(h).clone(), tape.value(c).clone()))
            .collect();

        Ok(WindowForward {
            lease: leased.all,
            loss,
            loss_value,
            per_step_nll,
            step_dists,
            final_state,
            tape,
        })
    }

    fn gc_on_tape(
        &self,
        tape: &mut Tape,
        leased: &Leased,
        view: &WindowView<'_>,
        t: usize,
    ) -> TensorId {
        if self.cfg.use_covariates {
            let ta = tape.constant(view.transitions[t].clone());
            let x = tape.constant(view.covariates[t].clone());
            let masked = tape.mul(leased.edge, ta);
            tape.matmul(masked, x)
        } else {
            tape.constant(Array2::zeros((self.n_nodes, self.cfg.covariate_dim)))
        }
    }

    fn dist_values(&self, tape: &Tape, dist: &StepDistTape) -> Vec<GmmParams> {
        let log_w = tape.value(dist.log_w);
        let mu = tape.value(dist.mu);
        let sigma = tape.value(dist.sigma);
        (0..self.n_nodes)
            .map(|i| GmmParams {
                weights: log_w.row(i).iter().map(|&lw| lw.exp()).collect(),
                means: mu.row(i).to_vec(),
                sigmas: sigma.row(i).to_vec(),
            })
            .collect()
    }

    fn check_view(&self, view: &WindowView<'_>) -> Result<(), ModelError> {
        let n = self.n_nodes;
        let t = view.targets.ncols();
        if view.targets.nrows() != n {
            return Err(ModelError::ShapeMismatch(format!(
                "targets have {} rows for {} nodes",
                view.targets.nrows(),
                n
            )));
        }
        if view.covariates.len() != t || view.transitions.len() != t {
            return Err(ModelError::ShapeMismatch(format!(
                "{} covariate and {} transition matrices for {t} steps",
                view.covariates.len(),
                view.transitions.len()
            )));
        }
        for x in view.covariates {
            if x.dim() != (n, self.cfg.covariate_dim) {
                return Err(ModelError::ShapeMismatch(format!(
                    "covariates are {:?}, want ({n}, {})",
                    x.dim(),
                    self.cfg.covariate_dim
                )));
            }
        }
        for a in view.transitions {
            if a.dim() != (n, n) {
                return Err(ModelError::ShapeMismatch(format!(
                    "transition is {:?}, want ({n}, {n})",
                    a.dim()
                )));
            }
        }
        Ok(())
    }

    /// Value-level single step (used by forecasting; shares the tape
    /// implementation with training).
    pub fn forward_step(&self, input: &StepInput) -> Result<(Vec<GmmParams>, LayerStates), ModelError> {
        if input.z_prev.len() != self.n_nodes {
            return Err(ModelError::ShapeMismatch(format!(
                "z_prev has {} entries for {} nodes",
                input.z_prev.len(),
                self.n_nodes
            )));
        }
        if input.gc.dim() != (self.n_nodes, self.cfg.covariate_dim) {
            return Err(ModelError::ShapeMismatch(format!(
                "gc is {:?}, want ({}, {})",
                input.gc.dim(),
                self.n_nodes,
                self.cfg.covariate_dim
            )));
        }
        if input.state.len() != self.cfg.n_layers {
            return Err(ModelError::ShapeMismatch(format!(
                "state has {} layers, want {}",
                input.state.len(),
                self.cfg.n_layers
            )));
        }
        let mut tape = Tape::new();
        let leased = self.leased(&mut tape);
        let z_prev = tape.constant(input.z_prev.clone().insert_axis(Axis(1)));
        let gc = tape.constant(input.gc.clone());
        let state: Vec<(TensorId, TensorId)> = input
            .state
            .iter()
            .map(|(h, c)| (tape.constant(h.clone()), tape.constant(c.clone())))
            .collect();
        let (dist, next) = self.step_on_tape(&mut tape, &leased, z_prev, gc, &state);
        let dists = self.dist_values(&tape, &dist);
        let next_values = next
            .iter()
            .map(|&(h, c)| (tape.value(h).clone(), tape.value(c).clone()))
            .collect();
        Ok((dists, next_values))
    }

    /// Teacher-forced pass over the conditioning range, returning the state
    /// at its end together with the per-step mean NLL diagnostics.
    pub fn condition(
        &self,
        view: &WindowView<'_>,
    ) -> Result<(LayerStates, Vec<f64>), ModelError> {
        let t = view.targets.ncols();
        let fwd = self.forward_window(view, 0..t)?;
        Ok((fwd.final_state, fwd.per_step_nll))
    }

    /// Mean NLL over the window's prediction steps (teacher forced).
    pub fn window_nll(
        &self,
        view: &WindowView<'_>,
        loss_range: std::ops::Range<usize>,
    ) -> Result<f64, ModelError> {
        Ok(self.forward_window(view, loss_range)?.loss_value)
    }

    /// Draw `n_samples` trajectories over the prediction steps, feeding each
    /// drawn value back as the next step's input. Trajectory s uses its own
    /// seeded stream, so artifacts are reproducible and order independent.
    pub fn ancestral_sample(
        &self,
        state: &LayerStates,
        z_last: &Array1<f64>,
        pred_covariates: &[Array2<f64>],
        pred_transitions: &[Array2<f64>],
        seed: u64,
    ) -> Result<ForecastArtifact, ModelError> {
        let horizon = pred_covariates.len();
        if horizon == 0 || pred_transitions.len() != horizon {
            return Err(ModelError::ShapeMismatch(format!(
                "{} covariate and {} transition matrices for the prediction range",
                pred_covariates.len(),
                pred_transitions.len()
            )));
        }
        let n = self.n_nodes;
        let s_count = self.cfg.n_samples;
        let edge = self
            .params
            .value(self.params.id("edge.w").expect("edge parameter"));

        // Graph-convolved covariates are sample independent.
        let mut gcs = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let gc = if self.cfg.use_covariates {
                diffusion_convolve(edge, &pred_transitions[t], &pred_covariates[t])?
            } else {
                Array2::zeros((n, self.cfg.covariate_dim))
            };
            gcs.push(gc);
        }

        let mut samples = Vec::with_capacity(s_count);
        let mut step_means = Vec::with_capacity(s_count);
        for s in 0..s_count {
            let mut rng =
                ChaCha20Rng::seed_from_u64(seeding::fanout_indexed(seed, "trajectory", s as u64));
            let mut traj = Array2::zeros((n, horizon));
            let mut means = Array2::zeros((n, horizon));
            let mut z_prev = z_last.clone();
            let mut st = state.clone();
            for t in 0..horizon {
                let (dists, next) = self.forward_step(&StepInput {
                    z_prev: z_prev.clone(),
                    gc: gcs[t].clone(),
                    state: st,
                })?;
                st = next;
                for (i, dist) in dists.iter().enumerate() {
                    let draw = crate::density::gmm_sample(dist, &mut rng);
                    traj[[i, t]] = draw;
                    means[[i, t]] = crate::density::gmm_moments(dist).0;
                }
                z_prev = traj.column(t).to_owned();
            }
            samples.push(traj);
            step_means.push(means);
        }

        let mut point = Array2::zeros((n, horizon));
        for means in &step_means {
            point += means;
        }
        point /= s_count as f64;

        let quantile = |q: f64| -> Array2<f64> {
            let mut out = Array2::zeros((n, horizon));
            let mut vals = Vec::with_capacity(s_count);
            for i in 0..n {
                for t in 0..horizon {
                    vals.clear();
                    vals.extend(samples.iter().map(|s| s[[i, t]]));
                    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
                    let pos = q * (s_count - 1) as f64;
                    let lo = pos.floor() as usize;
                    let frac = pos - lo as f64;
                    out[[i, t]] = if lo + 1 < s_count {
                        vals[lo] * (1.0 - frac) + vals[lo + 1] * frac
                    } else {
                        vals[lo]
                    };
                }
            }
            out
        };

        Ok(ForecastArtifact {
            q10: quantile(0.1),
            q50: quantile(0.5),
            q90: quantile(0.9),
            point,
            samples,
        })
    }
}

fn dense(tape: &mut Tape, x: TensorId, (w, b): (TensorId, TensorId)) -> TensorId {
    let lin = tape.matmul_trans_b(x, w);
    tape.add_row(lin, b)
}

struct Leased {
    all: Vec<TensorId>,
    edge: TensorId,
    lstm: Vec<LstmTapeIds>,
    head_weight: (TensorId, TensorId),
    head_mean: (TensorId, TensorId),
    head_scale: (TensorId, TensorId),
}

struct StepDistTape {
    log_w: TensorId,
    mu: TensorId,
    sigma: TensorId,
}

/// Borrowed window of aligned targets, covariates, and transitions.
pub struct WindowView<'a> {
    pub targets: ndarray::ArrayView2<'a, f64>,
    pub covariates: &'a [Array2<f64>],
    pub transitions: &'a [Array2<f64>],
}

/// Everything a training step needs from one forward pass.
pub struct WindowForward {
    pub tape: Tape,
    pub lease: Vec<TensorId>,
    pub loss: TensorId,
    pub loss_value: f64,
    /// Mean NLL per step over nodes, for every step of the window.
    pub per_step_nll: Vec<f64>,
    /// Mixture parameters per step per node.
    pub step_dists: Vec<Vec<GmmParams>>,
    pub final_state: LayerStates,
}

/// Sampled trajectories with per-node, per-step quantiles and the
/// trajectory-averaged mixture means.
#[derive(Clone, Debug)]
pub struct ForecastArtifact {
    pub q10: Array2<f64>,
    pub q50: Array2<f64>,
    pub q90: Array2<f64>,
    /// Mixture mean of each step's parameters, averaged over trajectories.
    pub point: Array2<f64>,
    pub samples: Vec<Array2<f64>>,
}

impl ForecastArtifact {
    pub fn n_nodes(&self) -> usize {
        self.point.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.point.ncols()
    }
}
