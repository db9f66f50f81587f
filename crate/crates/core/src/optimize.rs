//! Training: Adam for the unpenalized initial estimator, and the proximal
//! gradient loop for (adaptive) group Lasso on one weight layer.
//!
//! The penalized objective is
//!
//! ```text
//! L(W, b) + λ Σ_j w_j ‖W_ℓ[:, j]‖
//! ```
//!
//! with `w_j = 1 / ‖W̃_ℓ[:, j]‖²` taken from the initial estimator (adaptive)
//! or `w_j = 1` (plain group Lasso). Each epoch takes a full-batch gradient
//! step of size `γ` on every parameter and then applies the group
//! soft-threshold to the columns of `W_ℓ`; all other tensors keep the plain
//! gradient step.

use std::collections::BTreeSet;
use std::time::Instant;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::network::{self, column_norms, init_params, Architecture, Gradients, MlpParams};
use crate::par::Execution;
use crate::{Error, Result};

/// Step size shared by Adam and the proximal loop.
pub const DEFAULT_LEARNING_RATE: f64 = 0.005;
/// Final weights below this magnitude are set to zero.
pub const DEFAULT_TRUNCATION: f64 = 1e-4;
/// Initial-estimator columns with smaller norm are eliminated up front.
pub const ELIMINATION_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: MlpParams,
    pub second_moment: MlpParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut MlpParams, grads: &Gradients, state: &mut AdamState) {
    state.step += 1;
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    let t = state.step as i32;
    let correct1 = 1.0 - beta1.powi(t);
    let correct2 = 1.0 - beta2.powi(t);
    let tensors = params
        .slices_mut()
        .zip(grads.slices())
        .zip(state.first_moment.slices_mut().zip(state.second_moment.slices_mut()));
    for ((p, g), (m, v)) in tensors {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / correct1;
            let v_hat = v[i] / correct2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialFit {
    pub params: MlpParams,
    /// Training loss before each iteration, then the final loss.
    pub loss_trace: Vec<f64>,
}

/// Unpenalized full-batch Adam from a seeded initialization.
pub fn fit_initial(
    arch: &Architecture,
    data: &Dataset,
    iter_max: usize,
    seed: u64,
    adam: AdamConfig,
    exec: Execution,
) -> Result<InitialFit> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("cannot fit an empty dataset".into()));
    }
    let mut params = init_params(arch, seed);
    let mut state = AdamState::new(&params, adam);
    let mut loss_trace = Vec::with_capacity(iter_max + 1);
    for iter in 0..iter_max {
        let (loss, grads) = network::loss_and_grad(exec, &params, arch, data.x.view(), data.y.view())?;
        if !loss.is_finite() {
            return Err(Error::Divergence { stage: "adam", step: iter });
        }
        loss_trace.push(loss);
        adam_step(&mut params, &grads, &mut state);
    }
    let final_loss = network::loss_mse(&params, arch, data.x.view(), data.y.view())?;
    if !final_loss.is_finite() || !params.is_finite() {
        return Err(Error::Divergence { stage: "adam", step: iter_max });
    }
    loss_trace.push(final_loss);
    Ok(InitialFit { params, loss_trace })
}

/// Column-wise group soft-threshold, in place.
///
/// Column `j` is scaled by `max(0, ‖W[:,j]‖ - λγ w_j) / ‖W[:,j]‖`. Columns with
/// an infinite weight are pre-eliminated and always set to zero.
pub fn group_prox_inplace(w: &mut Array2<f64>, column_weights: &[f64], lambda: f64, gamma: f64) {
    debug_assert_eq!(w.ncols(), column_weights.len());
    for (mut col, &wj) in w.axis_iter_mut(Axis(1)).zip(column_weights) {
        if wj.is_infinite() {
            col.fill(0.0);
            continue;
        }
        let threshold = lambda * gamma * wj;
        if threshold == 0.0 {
            continue;
        }
        let norm = col.dot(&col).sqrt();
        if norm <= threshold {
            col.fill(0.0);
        } else {
            let scale = (norm - threshold) / norm;
            col.mapv_inplace(|v| v * scale);
        }
    }
}

/// Proximal map of `λ Σ_j w_j ‖W[:,j]‖` with step `γ`.
pub fn group_prox(w: &Array2<f64>, column_weights: &[f64], lambda: f64, gamma: f64) -> Array2<f64> {
    let mut out = w.clone();
    group_prox_inplace(&mut out, column_weights, lambda, gamma);
    out
}

/// `w_j = 1 / ‖W̃_ℓ[:,j]‖²`, infinite for columns the initial fit already zeroed.
pub fn make_adaptive_weights(initial: &MlpParams, penalized_layer: usize) -> Vec<f64> {
    column_norms(initial.layer(penalized_layer))
        .into_iter()
        .map(|n| if n < ELIMINATION_NORM { f64::INFINITY } else { 1.0 / (n * n) })
        .collect()
}

/// Which weights the group penalty carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `w_j = 1/‖W̃[:,j]‖²` from the initial estimator.
    Adaptive,
    /// `w_j = 1`.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxConfig {
    pub lambda: f64,
    pub gamma: f64,
    /// 1 for input selection, 2 for the linear-combination variant.
    pub penalized_layer: usize,
    /// Infinite entries (pre-eliminated columns) serialize as `null`.
    #[serde(with = "infinite_as_null")]
    pub column_weights: Vec<f64>,
    pub epoch_max: usize,
    pub truncation: f64,
    /// Start from the initial estimator instead of a fresh initialization.
    pub warm_start: bool,
    /// Retry once at `γ/5` when the loop diverges.
    pub retry_on_divergence: bool,
    /// Return the visited iterate with the lowest penalized objective rather
    /// than the last one. Fixed-step descent on a tanh network can spike late.
    pub keep_best: bool,
    /// Adam iterations on the selected support after the proximal loop
    /// (debiasing refit); 0 disables it.
    pub refit_iters: usize,
    pub refit_solver: RefitSolver,
}

/// Optimizer for the debiasing refit on the selected support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitSolver {
    /// Adam with a cosine learning-rate decay.
    #[default]
    Adam,
    /// Limited-memory BFGS with a More-Thuente line search.
    Lbfgs,
}

impl ProxConfig {
    pub fn new(lambda: f64, penalized_layer: usize, column_weights: Vec<f64>, epoch_max: usize) -> Self {
        ProxConfig {
            lambda,
            gamma: DEFAULT_LEARNING_RATE,
            penalized_layer,
            column_weights,
            epoch_max,
            truncation: DEFAULT_TRUNCATION,
            warm_start: false,
            retry_on_divergence: true,
            keep_best: true,
            refit_iters: 0,
            refit_solver: RefitSolver::Adam,
        }
    }

    /// Penalty weights of the requested kind.
    pub fn column_weights_for(kind: PenaltyKind, initial: &MlpParams, penalized_layer: usize) -> Vec<f64> {
        match kind {
            PenaltyKind::Adaptive => make_adaptive_weights(initial, penalized_layer),
            PenaltyKind::Plain => vec![1.0; initial.layer(penalized_layer).ncols()],
        }
    }

    fn validate(&self, arch: &Architecture) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.penalized_layer == 0 || self.penalized_layer >= arch.depth() {
            return Err(Error::InvalidConfig(format!(
                "penalized layer {} must be a hidden weight layer (1..{})",
                self.penalized_layer,
                arch.depth() - 1
            )));
        }
        let cols = arch.layer_dims[self.penalized_layer - 1];
        if self.column_weights.len() != cols {
            return Err(Error::ShapeMismatch(format!(
                "{} column weights for a layer with {cols} columns",
                self.column_weights.len()
            )));
        }
        if self.column_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidConfig("column weights must be positive or infinite".into()));
        }
        Ok(())
    }

    /// `λ Σ_j w_j ‖W_ℓ[:,j]‖`; pre-eliminated columns contribute nothing (they are zero).
    pub fn penalty(&self, params: &MlpParams) -> f64 {
        column_norms(params.layer(self.penalized_layer))
            .iter()
            .zip(&self.column_weights)
            .filter(|(_, w)| w.is_finite())
            .map(|(n, w)| w * n)
            .sum::<f64>()
            * self.lambda
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: MlpParams,
    /// 1-based columns of the penalized layer that survive truncation.
    pub support: BTreeSet<usize>,
    /// Training loss at the start of every epoch, then after the last one.
    pub loss_trace: Vec<f64>,
    /// Penalized objective `L + R` along the same iterates.
    pub objective_trace: Vec<f64>,
    /// Loss before each refit iteration, then the final loss; empty without a refit.
    pub refit_trace: Vec<f64>,
    pub lambda: f64,
    /// Step size actually used (smaller than requested after a retry).
    pub gamma: f64,
    pub penalized_layer: usize,
    /// Training loss of the proximal iterate that was kept.
    pub best_loss: f64,
}

impl FitResult {
    /// Training loss of the returned parameters.
    pub fn final_loss(&self) -> f64 {
        match self.refit_trace.last() {
            Some(v) => *v,
            None => self.best_loss,
        }
    }
}

/// Proximal gradient descent on `L + R`. `initial` supplies the warm start
/// when `cfg.warm_start` is set; otherwise the loop starts from a fresh
/// initialization drawn from `seed`.
pub fn fit_penalized(
    arch: &Architecture,
    data: &Dataset,
    initial: &MlpParams,
    cfg: &ProxConfig,
    seed: u64,
    exec: Execution,
) -> Result<FitResult> {
    cfg.validate(arch)?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("cannot fit an empty dataset".into()));
    }
    match run_prox(arch, data, initial, cfg, cfg.gamma, seed, exec) {
        Err(Error::Divergence { .. }) if cfg.retry_on_divergence => {
            run_prox(arch, data, initial, cfg, cfg.gamma / 5.0, seed, exec)
        }
        other => other,
    }
}

fn run_prox(
    arch: &Architecture,
    data: &Dataset,
    initial: &MlpParams,
    cfg: &ProxConfig,
    gamma: f64,
    seed: u64,
    exec: Execution,
) -> Result<FitResult> {
    let layer = cfg.penalized_layer - 1;
    let mut params = if cfg.warm_start {
        initial.check(arch)?;
        initial.clone()
    } else {
        init_params(arch, seed)
    };
    // pre-eliminated columns start and stay at zero
    for (mut col, w) in params.weights[layer].axis_iter_mut(Axis(1)).zip(&cfg.column_weights) {
        if w.is_infinite() {
            col.fill(0.0);
        }
    }

    let mut loss_trace = Vec::with_capacity(cfg.epoch_max + 1);
    let mut objective_trace = Vec::with_capacity(cfg.epoch_max + 1);
    let mut best: Option<(f64, f64, MlpParams)> = None;
    for epoch in 0..cfg.epoch_max {
        let (loss, grads) = network::loss_and_grad(exec, &params, arch, data.x.view(), data.y.view())?;
        if !loss.is_finite() {
            return Err(Error::Divergence { stage: "proximal gradient", step: epoch });
        }
        let objective = loss + cfg.penalty(&params);
        loss_trace.push(loss);
        objective_trace.push(objective);
        if cfg.keep_best && epoch > 0 && best.as_ref().is_none_or(|(o, _, _)| objective < *o) {
            best = Some((objective, loss, params.clone()));
        }
        params.add_scaled(-gamma, &grads);
        group_prox_inplace(&mut params.weights[layer], &cfg.column_weights, cfg.lambda, gamma);
    }
    let loss = network::loss_mse(&params, arch, data.x.view(), data.y.view())?;
    if !loss.is_finite() || !params.is_finite() {
        return Err(Error::Divergence { stage: "proximal gradient", step: cfg.epoch_max });
    }
    let objective = loss + cfg.penalty(&params);
    loss_trace.push(loss);
    objective_trace.push(objective);
    let mut best_loss = loss;
    if let Some((o, l, p)) = best {
        if o < objective {
            params = p;
            best_loss = l;
        }
    }

    params.truncate_weights(cfg.truncation);
    let mut support = network::extract_support(&params, cfg.penalized_layer, cfg.truncation);
    let mut refit_trace = Vec::new();
    if cfg.refit_iters > 0 {
        let refit = match cfg.refit_solver {
            RefitSolver::Adam => refit_on_support,
            RefitSolver::Lbfgs => refit_on_support_lbfgs,
        };
        refit_trace = refit(arch, data, &mut params, cfg.penalized_layer, &support, cfg.refit_iters, exec)?;
        params.truncate_weights(cfg.truncation);
        support = network::extract_support(&params, cfg.penalized_layer, cfg.truncation);
    }
    Ok(FitResult {
        params,
        support,
        loss_trace,
        objective_trace,
        refit_trace,
        lambda: cfg.lambda,
        gamma,
        penalized_layer: cfg.penalized_layer,
        best_loss,
    })
}

struct MaskedLoss<'a> {
    arch: &'a Architecture,
    data: &'a Dataset,
    template: MlpParams,
    layer: usize,
    masked: &'a [usize],
    exec: Execution,
}

impl MaskedLoss<'_> {
    fn params(&self, flat: &[f64]) -> MlpParams {
        let mut p = self.template.clone();
        p.assign_flat(flat);
        p
    }
}

impl CostFunction for MaskedLoss<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, flat: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let p = self.params(flat);
        Ok(network::loss_mse(&p, self.arch, self.data.x.view(), self.data.y.view())?)
    }
}

impl Gradient for MaskedLoss<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, flat: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let p = self.params(flat);
        let (_, mut g) = network::loss_and_grad(self.exec, &p, self.arch, self.data.x.view(), self.data.y.view())?;
        for &j in self.masked {
            g.weights[self.layer].column_mut(j).fill(0.0);
        }
        Ok(g.to_flat())
    }
}

/// L-BFGS on the columns of `penalized_layer` listed in `support`; the other
/// columns stay at zero. Returns the best loss seen per iteration. A failed
/// line search ends the refit early with the best iterate so far.
pub fn refit_on_support_lbfgs(
    arch: &Architecture,
    data: &Dataset,
    params: &mut MlpParams,
    penalized_layer: usize,
    support: &BTreeSet<usize>,
    iters: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    let layer = penalized_layer - 1;
    let masked: Vec<usize> = (0..params.weights[layer].ncols()).filter(|j| !support.contains(&(j + 1))).collect();
    for &j in &masked {
        params.weights[layer].column_mut(j).fill(0.0);
    }
    let start_loss = network::loss_mse(params, arch, data.x.view(), data.y.view())?;
    let problem = MaskedLoss { arch, data, template: params.clone(), layer, masked: &masked, exec };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 10)
        .with_tolerance_grad(0.0)
        .and_then(|s| s.with_tolerance_cost(0.0))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut trace = vec![start_loss];
    let result = Executor::new(problem, solver)
        .configure(|state| state.param(params.to_flat()).max_iters(iters as u64))
        .run();
    if let Ok(res) = result {
        let state = res.state();
        if let Some(best) = state.get_best_param() {
            if state.get_best_cost() < start_loss {
                params.assign_flat(best);
            }
        }
    }
    let loss = network::loss_mse(params, arch, data.x.view(), data.y.view())?;
    if !loss.is_finite() || !params.is_finite() {
        return Err(Error::Divergence { stage: "refit", step: iters });
    }
    trace.push(loss);
    Ok(trace)
}

/// Unpenalized Adam on the columns of `penalized_layer` listed in `support`
/// (1-based); every other column of that layer stays at zero. The learning
/// rate follows a cosine decay from the default down to 1% of it. Returns the
/// loss trace.
pub fn refit_on_support(
    arch: &Architecture,
    data: &Dataset,
    params: &mut MlpParams,
    penalized_layer: usize,
    support: &BTreeSet<usize>,
    iters: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    let layer = penalized_layer - 1;
    let masked: Vec<usize> = (0..params.weights[layer].ncols()).filter(|j| !support.contains(&(j + 1))).collect();
    for &j in &masked {
        params.weights[layer].column_mut(j).fill(0.0);
    }
    let base = AdamConfig::default();
    let lr_min = base.learning_rate * 0.01;
    let mut state = AdamState::new(params, base);
    let mut trace = Vec::with_capacity(iters + 1);
    for iter in 0..iters {
        let phase = std::f64::consts::PI * iter as f64 / iters as f64;
        state.config.learning_rate = lr_min + 0.5 * (base.learning_rate - lr_min) * (1.0 + phase.cos());
        let (loss, mut grads) = network::loss_and_grad(exec, params, arch, data.x.view(), data.y.view())?;
        if !loss.is_finite() {
            return Err(Error::Divergence { stage: "refit", step: iter });
        }
        trace.push(loss);
        for &j in &masked {
            grads.weights[layer].column_mut(j).fill(0.0);
        }
        adam_step(params, &grads, &mut state);
    }
    let loss = network::loss_mse(params, arch, data.x.view(), data.y.view())?;
    if !loss.is_finite() || !params.is_finite() {
        return Err(Error::Divergence { stage: "refit", step: iters });
    }
    trace.push(loss);
    Ok(trace)
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        values
            .iter()
            .map(|v| v.is_finite().then_some(*v))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Option<f64>>::deserialize(d)?;
        Ok(raw.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect())
    }
}

/// JSON record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ProxConfig,
    pub seed: u64,
    /// Loss every 50 epochs, plus the final loss.
    pub loss_trace: Vec<f64>,
    /// Loss of the returned parameters (after any refit).
    pub final_loss: f64,
    pub support: BTreeSet<usize>,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub const TRACE_STRIDE: usize = 50;

    pub fn new(cfg: &ProxConfig, seed: u64, fit: &FitResult, started: Instant) -> Self {
        let mut loss_trace: Vec<f64> = fit.loss_trace.iter().step_by(Self::TRACE_STRIDE).copied().collect();
        if (fit.loss_trace.len() - 1) % Self::TRACE_STRIDE != 0 {
            loss_trace.push(*fit.loss_trace.last().expect("nonempty trace"));
        }
        RunRecord {
            config: ProxConfig { gamma: fit.gamma, ..cfg.clone() },
            seed,
            loss_trace,
            final_loss: fit.final_loss(),
            support: fit.support.clone(),
            wall_seconds: started.elapsed().as_secs_f64(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{NoiseSpec, Scales};
    use crate::network::{forward, Activation};
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};

    fn toy_dataset(arch: &Architecture, m: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = arch.inputs();
        let x: Array2<f64> = Array2::from_shape_fn((m, d), |_| rng.random_range(-1.5..1.5));
        let y = x.column(0).mapv(|v| v.sin()) + x.column(1).mapv(|v| 0.5 * v * v);
        Dataset {
            x: x.clone(),
            y: y.clone(),
            scales: Scales::identity(d),
            true_support: BTreeSet::from([1, 2]),
            raw_x: x,
            raw_y: y,
            times: Array1::zeros(m),
            noise: NoiseSpec::noiseless(),
        }
    }

    #[test]
    fn adam_zero_gradient_is_stationary() {
        let arch = Architecture::new(3, 4, 2, Activation::Tanh);
        let mut p = init_params(&arch, 1);
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamState::new(&p, AdamConfig::default());
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut st);
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 10);
    }

    #[test]
    fn adam_scalar_recurrence() {
        let arch = Architecture { layer_dims: vec![1, 1], first_activation: Activation::Tanh };
        let mut p = MlpParams::zeros(&arch);
        p.weights[0][[0, 0]] = 1.0;
        let mut st = AdamState::new(&p, AdamConfig::default());
        let mut g = p.zeros_like();
        // two steps with gradients 0.3 then -0.1, recurrence written out by hand
        let (lr, b1, b2, eps) = (0.005f64, 0.9f64, 0.999f64, 1e-8f64);
        let mut w = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, grad) in [0.3f64, -0.1].into_iter().enumerate() {
            g.weights[0][[0, 0]] = grad;
            adam_step(&mut p, &g, &mut st);
            m = b1 * m + (1.0 - b1) * grad;
            v = b2 * v + (1.0 - b2) * grad * grad;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p.weights[0][[0, 0]] - w).abs() < 1e-15);
        // the first step moves by lr·g/(|g|+ε') ≈ lr in the direction of -g
        let mut q = MlpParams::zeros(&arch);
        let mut st = AdamState::new(&q, AdamConfig::default());
        g.weights[0][[0, 0]] = 0.3;
        adam_step(&mut q, &g, &mut st);
        assert!((q.weights[0][[0, 0]] + 0.005 * 0.3 / (0.3 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn prox_closed_form_examples() {
        let w = array![[3.0], [4.0]];
        let out = group_prox(&w, &[1.0], 2.0, 1.0);
        assert!((out[[0, 0]] - 1.8).abs() < 1e-15 && (out[[1, 0]] - 2.4).abs() < 1e-15);
        let out = group_prox(&w, &[1.0], 6.0, 1.0);
        assert_eq!(out, array![[0.0], [0.0]]);
        // norm exactly at the threshold
        let out = group_prox(&w, &[1.0], 5.0, 1.0);
        assert_eq!(out, array![[0.0], [0.0]]);
        // λ = 0 is the identity, bit for bit
        let w = array![[0.1, -2.0, 3.3], [1e-9, 7.0, -0.25]];
        assert_eq!(group_prox(&w, &[1.0, 2.0, 0.5], 0.0, 0.005), w);
        // infinite weight always zeroes
        let out = group_prox(&w, &[1.0, f64::INFINITY, 1.0], 0.0, 0.005);
        assert_eq!(out.column(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(out.column(0), w.column(0));
    }

    #[test]
    fn adaptive_weights() {
        let arch = Architecture { layer_dims: vec![3, 2, 1], first_activation: Activation::Tanh };
        let mut p = MlpParams::zeros(&arch);
        p.weights[0] = array![[1.0, 0.0, 2.0], [0.0, 0.0, 0.0]];
        let w = make_adaptive_weights(&p, 1);
        assert_eq!(w[0], 1.0);
        assert!(w[1].is_infinite());
        assert_eq!(w[2], 0.25);
        let plain = ProxConfig::column_weights_for(PenaltyKind::Plain, &p, 1);
        assert_eq!(plain, vec![1.0; 3]);
    }

    #[test]
    fn adaptive_weights_match_scratch_norms() {
        let arch = Architecture::new(9, 6, 3, Activation::Tanh);
        let p = init_params(&arch, 17);
        for layer in [1, 2] {
            let w = make_adaptive_weights(&p, layer);
            let mat = p.layer(layer);
            for j in 0..mat.ncols() {
                let mut ss = 0.0;
                for i in 0..mat.nrows() {
                    ss += mat[[i, j]] * mat[[i, j]];
                }
                assert!((w[j] - 1.0 / ss).abs() < 1e-12 * w[j]);
            }
        }
    }

    #[test]
    fn fit_initial_zero_iterations_returns_init() {
        let arch = Architecture::new(4, 5, 2, Activation::Tanh);
        let data = toy_dataset(&arch, 30, 1);
        let fit = fit_initial(&arch, &data, 0, 9, AdamConfig::default(), Execution::Sequential).unwrap();
        assert_eq!(fit.params, init_params(&arch, 9));
        assert_eq!(fit.loss_trace.len(), 1);
    }

    #[test]
    fn fit_initial_recovers_realizable_target() {
        let arch = Architecture::new(3, 5, 2, Activation::Tanh);
        let teacher = init_params(&arch, 100);
        let mut data = toy_dataset(&arch, 200, 4);
        data.y = forward(&teacher, &arch, data.x.view()).unwrap();
        let fit = fit_initial(&arch, &data, 3000, 7, AdamConfig::default(), Execution::Sequential).unwrap();
        assert!(fit.final_loss_below(1e-3), "final {}", fit.loss_trace.last().unwrap());
        assert!(fit.loss_trace.last().unwrap() < &fit.loss_trace[0]);
    }

    impl InitialFit {
        fn final_loss_below(&self, v: f64) -> bool {
            *self.loss_trace.last().unwrap() < v
        }
    }

    #[test]
    fn zero_lambda_is_plain_gradient_descent() {
        let arch = Architecture::new(4, 5, 2, Activation::Tanh);
        let data = toy_dataset(&arch, 50, 2);
        let init = init_params(&arch, 3);
        let mut cfg = ProxConfig::new(0.0, 1, vec![1.0; 4], 20);
        cfg.truncation = 0.0;
        let fit = fit_penalized(&arch, &data, &init, &cfg, 3, Execution::Sequential).unwrap();
        let mut p = init_params(&arch, 3);
        for _ in 0..20 {
            let g = network::backward(&p, &arch, data.x.view(), data.y.view()).unwrap();
            p.add_scaled(-cfg.gamma, &g);
        }
        assert_eq!(fit.params, p);
    }

    #[test]
    fn huge_lambda_kills_every_column() {
        let arch = Architecture::new(4, 5, 2, Activation::Tanh);
        let data = toy_dataset(&arch, 50, 2);
        let init = init_params(&arch, 3);
        let cfg = ProxConfig::new(1e6, 1, vec![1.0; 4], 1);
        let fit = fit_penalized(&arch, &data, &init, &cfg, 3, Execution::Sequential).unwrap();
        assert!(fit.support.is_empty());
        assert!(fit.params.weights[0].iter().all(|&v| v == 0.0));
        let out = forward(&fit.params, &arch, data.x.view()).unwrap();
        assert!(out.iter().all(|&v| v == out[0]));
    }

    #[test]
    fn unit_adaptive_weights_equal_plain_group_lasso() {
        let arch = Architecture::new(4, 5, 2, Activation::Tanh);
        let data = toy_dataset(&arch, 40, 6);
        let init = init_params(&arch, 1);
        let adaptive = ProxConfig::new(0.3, 1, vec![1.0; 4], 30);
        let plain = ProxConfig {
            column_weights: ProxConfig::column_weights_for(PenaltyKind::Plain, &init, 1),
            ..adaptive.clone()
        };
        let a = fit_penalized(&arch, &data, &init, &adaptive, 5, Execution::Sequential).unwrap();
        let b = fit_penalized(&arch, &data, &init, &plain, 5, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_column_is_absorbing_under_large_lambda() {
        let arch = Architecture::new(4, 5, 2, Activation::Tanh);
        let data = toy_dataset(&arch, 40, 6);
        let init = init_params(&arch, 1);
        let mut cfg = ProxConfig::new(1000.0, 1, vec![1.0; 4], 1);
        cfg.truncation = 0.0;
        let one = fit_penalized(&arch, &data, &init, &cfg, 5, Execution::Sequential).unwrap();
        assert!(one.support.is_empty());
        let mut cfg = cfg.clone();
        cfg.warm_start = true;
        cfg.epoch_max = 25;
        let more = fit_penalized(&arch, &data, &one.params, &cfg, 5, Execution::Sequential).unwrap();
        assert!(more.params.weights[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pre_eliminated_columns_stay_zero() {
        let arch = Architecture::new(4, 5, 2, Activation::Tanh);
        let data = toy_dataset(&arch, 40, 6);
        let init = init_params(&arch, 1);
        let cfg = ProxConfig::new(0.0, 1, vec![1.0, f64::INFINITY, 1.0, 1.0], 10);
        let fit = fit_penalized(&arch, &data, &init, &cfg, 5, Execution::Sequential).unwrap();
        assert!(fit.params.weights[0].column(1).iter().all(|&v| v == 0.0));
        assert!(!fit.support.contains(&2));
    }

    #[test]
    fn divergence_retries_then_reports() {
        let arch = Architecture::new(4, 5, 2, Activation::Tanh);
        let mut data = toy_dataset(&arch, 40, 6);
        data.y.mapv_inplace(|v| v * 1e200);
        let init = init_params(&arch, 1);
        let cfg = ProxConfig::new(0.0, 1, vec![1.0; 4], 50);
        match fit_penalized(&arch, &data, &init, &cfg, 5, Execution::Sequential) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|f| f.lambda)),
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let arch = Architecture::new(4, 5, 2, Activation::Tanh);
        let data = toy_dataset(&arch, 10, 6);
        let init = init_params(&arch, 1);
        let base = ProxConfig::new(0.1, 1, vec![1.0; 4], 5);
        let bad = [
            ProxConfig { gamma: 0.0, ..base.clone() },
            ProxConfig { penalized_layer: 3, ..base.clone() },
            ProxConfig { column_weights: vec![1.0; 3], ..base.clone() },
            ProxConfig { column_weights: vec![1.0, 0.0, 1.0, 1.0], ..base.clone() },
        ];
        for cfg in bad {
            assert!(fit_penalized(&arch, &data, &init, &cfg, 1, Execution::Sequential).is_err());
        }
    }

    #[test]
    fn run_record_subsamples_trace() {
        let arch = Architecture::new(4, 5, 2, Activation::Tanh);
        let data = toy_dataset(&arch, 20, 6);
        let init = init_params(&arch, 1);
        let cfg = ProxConfig::new(0.01, 1, vec![1.0; 4], 120);
        let fit = fit_penalized(&arch, &data, &init, &cfg, 1, Execution::Sequential).unwrap();
        let mut rec = RunRecord::new(&cfg, 1, &fit, Instant::now());
        rec.config.column_weights[2] = f64::INFINITY;
        // epochs 0, 50, 100, then the final loss after epoch 120
        assert_eq!(rec.loss_trace.len(), 4);
        assert_eq!(*rec.loss_trace.last().unwrap(), *fit.loss_trace.last().unwrap());
        let back: RunRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        assert_eq!(back, rec);
    }
}
