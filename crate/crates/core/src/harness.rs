//! Experiment orchestration: configs, seeded replicates, method comparison,
//! and table emission.
//!
//! One trajectory is integrated per experiment and shared by every
//! replicate; replicates differ only in their noise draws (and, with
//! `perturb_initial_condition`, in a small random offset of `x0`). Every
//! replicate runs each requested method with its own λ sweep and is scored
//! on the noiseless test window.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array1;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::{make_dataset, make_test_set_window, Dataset, NoiseSpec, TargetFunction, TargetId};
use crate::dictionary::{self, IstaOptions, LassoProblem, SparseCoefficients};
use crate::dynamics::{integrate, OdeConfig, Trajectory};
use crate::metrics::{relative_test_error, selection_metrics};
use crate::network::{self, Activation, Architecture, MlpParams, SavedModel};
use crate::optimize::{fit_initial, fit_penalized, AdamConfig, FitResult, PenaltyKind, ProxConfig, RefitSolver};
use crate::par::{self, Execution};
use crate::rng::{self, Purpose};
use crate::selection::{self, network_dof, BicRecord, DofConvention, PathPoint, SweepOptions};
use crate::{Error, Result};

/// Overrides `output_dir` when set.
pub const ENV_OUTPUT_DIR: &str = "AGLNET_OUTPUT_DIR";
/// Overrides `workers` when set.
pub const ENV_WORKERS: &str = "AGLNET_WORKERS";

/// Largest tolerated fraction of failed (replicate, method) runs.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    AdaptiveGl,
    GroupLasso,
    PlainNn,
    Dictionary,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::AdaptiveGl, Method::GroupLasso, Method::PlainNn, Method::Dictionary];

    pub fn label(self) -> &'static str {
        match self {
            Method::AdaptiveGl => "adaptive_gl",
            Method::GroupLasso => "group_lasso",
            Method::PlainNn => "plain_nn",
            Method::Dictionary => "dictionary",
        }
    }

    fn penalty(self) -> Option<PenaltyKind> {
        match self {
            Method::AdaptiveGl => Some(PenaltyKind::Adaptive),
            Method::GroupLasso => Some(PenaltyKind::Plain),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseLevel {
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl NoiseLevel {
    pub fn both(sigma: f64) -> Self {
        NoiseLevel { sigma_x: sigma, sigma_y: sigma }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub dim: usize,
    pub forcing: f64,
    pub dt: f64,
    /// Training window `(t_a, t_b]`.
    pub train_window: [f64; 2],
    /// Test window `(t_a, t_b]`; the trajectory is integrated up to its end.
    pub test_window: [f64; 2],
    /// Window over which the noise amplitudes are measured; the training
    /// window when absent.
    pub scale_window: Option<[f64; 2]>,
    /// Redraw `x0 + N(0, 1e-3²)` per replicate instead of sharing one trajectory.
    pub perturb_initial_condition: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            dim: 40,
            forcing: 8.0,
            dt: 0.01,
            train_window: [0.0, 80.0],
            test_window: [80.0, 100.0],
            scale_window: None,
            perturb_initial_condition: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub first_activation: Activation,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig { hidden_layers: 3, width: 20, first_activation: Activation::Tanh }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Adam iterations for the initial estimator (also the plain network).
    pub adam_iters: usize,
    /// Proximal epochs per λ.
    pub prox_epochs: usize,
    pub learning_rate: f64,
    pub warm_start: bool,
    pub keep_best: bool,
    pub refit_iters: usize,
    pub refit_solver: RefitSolver,
    pub truncation: f64,
    pub lambda_grid: Vec<f64>,
    pub dof: DofConvention,
    pub mse_floor: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            adam_iters: 10_000,
            prox_epochs: 5_000,
            learning_rate: crate::optimize::DEFAULT_LEARNING_RATE,
            warm_start: false,
            keep_best: true,
            refit_iters: 0,
            refit_solver: RefitSolver::Adam,
            truncation: crate::optimize::DEFAULT_TRUNCATION,
            lambda_grid: selection::LambdaGrid::default().values().to_vec(),
            dof: DofConvention::default(),
            mse_floor: SweepOptions::default().mse_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionaryConfig {
    pub degree: u32,
    pub lambda_grid: Vec<f64>,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        DictionaryConfig {
            degree: 2,
            lambda_grid: selection::LambdaGrid::default().values().to_vec(),
            max_iter: IstaOptions::default().max_iter,
            tolerance: IstaOptions::default().tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub target: TargetId,
    /// Seed of the linear-combination matrix.
    pub combo_seed: u64,
    pub noise: Vec<NoiseLevel>,
    pub system: SystemConfig,
    pub architecture: ArchitectureConfig,
    /// 1 selects inputs, 2 selects first-layer units.
    pub penalized_layer: usize,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub base_seed: u64,
    pub training: TrainingConfig,
    pub dictionary: DictionaryConfig,
    pub output_dir: PathBuf,
    /// 0 uses every core; 1 runs sequentially.
    pub workers: usize,
    /// Store wall-clock seconds in the reports. Off makes `runs.jsonl`
    /// byte-reproducible.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            target: TargetId::LorenzRhs(25),
            combo_seed: 1,
            noise: vec![NoiseLevel::both(0.02)],
            system: SystemConfig::default(),
            architecture: ArchitectureConfig::default(),
            penalized_layer: 1,
            methods: Method::ALL.to_vec(),
            replicates: 1,
            base_seed: 2022,
            training: TrainingConfig::default(),
            dictionary: DictionaryConfig::default(),
            output_dir: PathBuf::from("out"),
            workers: 0,
            record_timing: true,
        }
    }
}

pub const PRESETS: [&str; 7] = ["table1", "noise-sweep", "noiseless", "nonpoly-1", "nonpoly-2", "nonpoly-3", "linear-combo"];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Named configurations for the published experiments.
    pub fn preset(name: &str) -> Result<Self> {
        let base = ExperimentConfig { name: name.into(), ..Default::default() };
        let cfg = match name {
            "table1" => ExperimentConfig { replicates: 100, ..base },
            "noise-sweep" => ExperimentConfig {
                target: TargetId::LorenzRhs(10),
                noise: [0.02, 0.03, 0.04, 0.05].map(NoiseLevel::both).to_vec(),
                replicates: 100,
                ..base
            },
            "noiseless" => ExperimentConfig {
                target: TargetId::LorenzRhs(10),
                noise: vec![NoiseLevel::both(0.0)],
                ..base
            },
            "nonpoly-1" => ExperimentConfig {
                target: TargetId::Setting1,
                noise: vec![NoiseLevel { sigma_x: 0.0, sigma_y: 0.02 }],
                methods: vec![Method::AdaptiveGl, Method::Dictionary],
                ..base
            },
            "nonpoly-2" => ExperimentConfig {
                target: TargetId::Setting2,
                noise: vec![NoiseLevel { sigma_x: 0.02, sigma_y: 0.0 }],
                methods: vec![Method::AdaptiveGl, Method::Dictionary],
                ..base
            },
            "nonpoly-3" => ExperimentConfig {
                target: TargetId::Setting3,
                noise: vec![NoiseLevel::both(0.02)],
                methods: vec![Method::AdaptiveGl, Method::Dictionary],
                ..base
            },
            "linear-combo" => ExperimentConfig {
                target: TargetId::LinearCombo,
                noise: vec![NoiseLevel { sigma_x: 0.0, sigma_y: 0.02 }],
                architecture: ArchitectureConfig { first_activation: Activation::Identity, ..Default::default() },
                penalized_layer: 2,
                methods: vec![Method::AdaptiveGl, Method::Dictionary],
                ..base
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset {other:?}; known: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    /// Apply the output-directory and worker-count environment overrides.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Ok(w) = std::env::var(ENV_WORKERS) {
            self.workers = w
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{ENV_WORKERS} must be a nonnegative integer, got {w:?}")))?;
        }
        Ok(())
    }

    pub fn execution(&self) -> Execution {
        if self.workers == 0 {
            Execution::Parallel
        } else {
            Execution::from_workers(self.workers)
        }
    }

    pub fn architecture(&self) -> Architecture {
        let a = &self.architecture;
        Architecture::new(self.system.dim, a.width, a.hidden_layers, a.first_activation)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("method set is empty".into());
        }
        if self.noise.is_empty() {
            return bad("at least one noise level is required".into());
        }
        if self.noise.iter().any(|n| !(n.sigma_x >= 0.0 && n.sigma_y >= 0.0)) {
            return bad("noise levels must be nonnegative".into());
        }
        if self.architecture.hidden_layers == 0 || self.architecture.width == 0 {
            return bad("the network needs at least one hidden layer of positive width".into());
        }
        if self.penalized_layer == 0 || self.penalized_layer > self.architecture.hidden_layers {
            return bad(format!(
                "penalized layer {} must be in 1..={}",
                self.penalized_layer, self.architecture.hidden_layers
            ));
        }
        let t = &self.training;
        if t.lambda_grid.is_empty() || t.lambda_grid.iter().any(|v| !(*v >= 0.0)) {
            return bad("training.lambda_grid must be nonempty and nonnegative".into());
        }
        if !(t.learning_rate > 0.0) {
            return bad("training.learning_rate must be positive".into());
        }
        let d = &self.dictionary;
        if d.degree == 0 {
            return bad("dictionary.degree must be at least 1".into());
        }
        if self.methods.contains(&Method::Dictionary)
            && (d.lambda_grid.is_empty() || d.lambda_grid.iter().any(|v| !(*v >= 0.0)))
        {
            return bad("dictionary.lambda_grid must be nonempty and nonnegative".into());
        }
        let [a, b] = self.system.train_window;
        let [c, e] = self.system.test_window;
        if !(a < b && c < e) {
            return bad("time windows must be nonempty".into());
        }
        self.ode(None).steps()?;
        Ok(())
    }

    /// Integration setup covering both windows; `x0` defaults to the
    /// standard perturbed start.
    pub fn ode(&self, x0: Option<Vec<f64>>) -> OdeConfig {
        let s = &self.system;
        let t_final = s.train_window[1].max(s.test_window[1]);
        let mut ode = OdeConfig::lorenz96_standard(t_final);
        ode.forcing = s.forcing;
        ode.dt = s.dt;
        ode.x0 = x0.unwrap_or_else(|| {
            let mut x = vec![1.0; s.dim];
            if s.dim >= 20 {
                x[19] = 1.008;
            }
            x
        });
        ode
    }
}

/// One method on one replicate at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub replicate: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Seed of the method's fit (the noise seed for the dictionary).
    pub seed: u64,
    /// Absent when the target has no input-level truth (linear combinations).
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub relative_error: f64,
    /// Chosen by BIC; absent for the unpenalized network.
    pub lambda: Option<f64>,
    /// Selected input variables, 1-based.
    pub support: BTreeSet<usize>,
    /// Selected columns of the penalized layer when it is not the input layer.
    pub unit_support: Option<BTreeSet<usize>>,
    pub train_mse: f64,
    pub path: Vec<BicRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: Method,
    pub replicate: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub replicates: usize,
    pub excluded: usize,
    pub sensitivity_mean: Option<f64>,
    pub sensitivity_std: Option<f64>,
    pub specificity_mean: Option<f64>,
    pub specificity_std: Option<f64>,
    pub relative_error_mean: f64,
    pub relative_error_std: f64,
    pub support_size_mean: f64,
}

/// Test-set predictions behind the learned-curve figures.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub method: Method,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub times: Array1<f64>,
    pub f_true: Array1<f64>,
    pub f_hat: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<RunReport>,
    pub failures: Vec<Failure>,
    pub summary: Vec<SummaryRow>,
    /// Replicate 0 of every noise level.
    pub curves: Vec<Curve>,
}

/// A trained model of any method, for `eval` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFile {
    Network(SavedModel),
    Dictionary(dictionary::DictionaryReport),
}

impl ModelFile {
    /// Predictions in original output units from original-unit inputs.
    pub fn predict_raw(&self, raw_x: &ndarray::Array2<f64>) -> Result<Array1<f64>> {
        match self {
            ModelFile::Network(m) => {
                if raw_x.ncols() != m.scales.sigma.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "model expects {} inputs, data has {}",
                        m.scales.sigma.len(),
                        raw_x.ncols()
                    )));
                }
                let params = m.params()?;
                let x = m.scales.apply_x(raw_x);
                let y = network::forward(&params, &m.architecture, x.view())?;
                Ok(m.scales.invert_y(&y))
            }
            ModelFile::Dictionary(r) => {
                if let Some(t) = r.terms.iter().find(|t| t.exponents.len() != raw_x.ncols()) {
                    return Err(Error::ShapeMismatch(format!(
                        "model term {} has {} exponents, data has {} inputs",
                        t.label,
                        t.exponents.len(),
                        raw_x.ncols()
                    )));
                }
                let exps: Vec<Vec<u32>> = r.terms.iter().map(|t| t.exponents.clone()).collect();
                let feats = dictionary::evaluate_monomials(raw_x.view(), &exps);
                let coef = Array1::from_iter(r.terms.iter().map(|t| t.original));
                Ok(feats.dot(&coef))
            }
        }
    }

    /// Selected input variables (1-based).
    pub fn input_support(&self) -> BTreeSet<usize> {
        match self {
            ModelFile::Network(m) => match m.params() {
                Ok(p) => network::extract_support(&p, 1, 0.0),
                Err(_) => BTreeSet::new(),
            },
            ModelFile::Dictionary(r) => r
                .terms
                .iter()
                .flat_map(|t| t.exponents.iter().enumerate().filter(|(_, e)| **e > 0).map(|(j, _)| j + 1))
                .collect(),
        }
    }
}

struct NetPoint {
    fit: FitResult,
    dof: usize,
}

impl PathPoint for NetPoint {
    fn mse(&self) -> f64 {
        self.fit.final_loss()
    }
    fn dof(&self) -> usize {
        self.dof
    }
    fn support(&self) -> BTreeSet<usize> {
        self.fit.support.clone()
    }
}

impl PathPoint for SparseCoefficients {
    fn mse(&self) -> f64 {
        self.mse
    }
    fn dof(&self) -> usize {
        self.support.len()
    }
    fn support(&self) -> BTreeSet<usize> {
        self.support.iter().map(|i| i + 1).collect()
    }
}

/// Everything a method needs for one replicate at one noise level.
pub struct ReplicateData {
    pub train: Dataset,
    pub test: Dataset,
    pub noise_seed: u64,
}

/// Build the training and test sets of replicate `replicate`.
pub fn replicate_data(
    cfg: &ExperimentConfig,
    shared: &Trajectory,
    target: &TargetFunction,
    level: NoiseLevel,
    replicate: usize,
) -> Result<ReplicateData> {
    let r = replicate as u64;
    let owned;
    let traj = if cfg.system.perturb_initial_condition {
        let mut rng = rng::stream(rng::derive_seed(cfg.base_seed, r, "system", Purpose::InitialCondition), 0);
        let x0 = cfg
            .ode(None)
            .x0
            .iter()
            .map(|v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + 1e-3 * e
            })
            .collect();
        owned = integrate(&cfg.ode(Some(x0)))?;
        &owned
    } else {
        shared
    };
    let noise_seed = rng::derive_seed(cfg.base_seed, r, "data", Purpose::InputNoise);
    let noise = NoiseSpec { sigma_x: level.sigma_x, sigma_y: level.sigma_y, seed: noise_seed };
    let [a, b] = cfg.system.train_window;
    let window = cfg.system.scale_window.map(|[s, e]| (s, e));
    let train = make_dataset(traj, target, &noise, (a, b), window)?;
    let [c, e] = cfg.system.test_window;
    let test = make_test_set_window(traj, target, &train.scales, (c, e))?;
    Ok(ReplicateData { train, test, noise_seed })
}

/// Result of fitting one method, before scoring.
pub struct MethodFit {
    pub model: ModelFile,
    pub lambda: Option<f64>,
    pub support: BTreeSet<usize>,
    pub unit_support: Option<BTreeSet<usize>>,
    pub train_mse: f64,
    pub path: Vec<BicRecord>,
    pub seed: u64,
}

fn prox_config(cfg: &ExperimentConfig, lambda: f64, weights: Vec<f64>) -> ProxConfig {
    let t = &cfg.training;
    let mut pc = ProxConfig::new(lambda, cfg.penalized_layer, weights, t.prox_epochs);
    pc.gamma = t.learning_rate;
    pc.truncation = t.truncation;
    pc.warm_start = t.warm_start;
    pc.keep_best = t.keep_best;
    pc.refit_iters = t.refit_iters;
    pc.refit_solver = t.refit_solver;
    pc
}

fn input_support(params: &MlpParams) -> BTreeSet<usize> {
    network::extract_support(params, 1, 0.0)
}

fn network_fit(
    cfg: &ExperimentConfig,
    arch: &Architecture,
    data: &ReplicateData,
    initial: &MlpParams,
    method: Method,
    replicate: usize,
    exec: Execution,
) -> Result<MethodFit> {
    let layer = cfg.penalized_layer;
    let Some(kind) = method.penalty() else {
        let mut params = initial.clone();
        params.truncate_weights(cfg.training.truncation);
        let train_mse = network::loss_mse(&params, arch, data.train.x.view(), data.train.y.view())?;
        let seed = rng::derive_seed(cfg.base_seed, replicate as u64, "initial", Purpose::InitialFit);
        let unit_support = (layer > 1).then(|| network::extract_support(&params, layer, 0.0));
        return Ok(MethodFit {
            support: input_support(&params),
            unit_support,
            model: ModelFile::Network(SavedModel::new(arch, &params, &data.train.scales, layer)),
            lambda: None,
            train_mse,
            path: Vec::new(),
            seed,
        });
    };
    let seed = rng::derive_seed(cfg.base_seed, replicate as u64, method.label(), Purpose::PenalizedFit);
    let weights = ProxConfig::column_weights_for(kind, initial, layer);
    let opts = SweepOptions { mse_floor: cfg.training.mse_floor };
    let result = selection::sweep(&cfg.training.lambda_grid, data.train.len(), &opts, exec, |lambda| {
        let pc = prox_config(cfg, lambda, weights.clone());
        let fit = fit_penalized(arch, &data.train, initial, &pc, seed, exec)?;
        let dof = network_dof(arch, layer, fit.support.len(), cfg.training.dof);
        Ok(NetPoint { fit, dof })
    })?;
    let fit = result.chosen.fit;
    let (support, unit_support) = if layer == 1 {
        (fit.support.clone(), None)
    } else {
        (input_support(&fit.params), Some(fit.support.clone()))
    };
    Ok(MethodFit {
        model: ModelFile::Network(SavedModel::new(arch, &fit.params, &data.train.scales, layer)),
        lambda: Some(result.chosen_lambda),
        support,
        unit_support,
        train_mse: fit.final_loss(),
        path: result.path,
        seed,
    })
}

fn dictionary_fit(cfg: &ExperimentConfig, data: &ReplicateData, exec: Execution) -> Result<MethodFit> {
    let dcfg = &cfg.dictionary;
    let dict = dictionary::build_dictionary(data.train.x.view(), dcfg.degree)?;
    let problem = LassoProblem::new(dict.features.view(), data.train.y.view())?;
    drop(dict.features);
    let opts = IstaOptions { max_iter: dcfg.max_iter, tolerance: dcfg.tolerance, truncation: cfg.training.truncation };
    let sopts = SweepOptions { mse_floor: cfg.training.mse_floor };
    let result = selection::sweep(&dcfg.lambda_grid, data.train.len(), &sopts, exec, |lambda| {
        dictionary::solve_problem(&problem, lambda, &opts)
    })?;
    let sc = result.chosen;
    let support = dictionary::dict_support_variables(&sc, &dict.exponents);
    let report = dictionary::DictionaryReport::new(dcfg.degree, &dict.exponents, &sc, &data.train.scales);
    Ok(MethodFit {
        model: ModelFile::Dictionary(report),
        lambda: Some(result.chosen_lambda),
        support,
        unit_support: None,
        train_mse: sc.mse,
        path: result.path,
        seed: data.noise_seed,
    })
}

/// Fit `method` on one replicate. `initial` is the shared Adam estimator,
/// required by every network method.
pub fn fit_method(
    cfg: &ExperimentConfig,
    data: &ReplicateData,
    initial: Option<&MlpParams>,
    method: Method,
    replicate: usize,
    exec: Execution,
) -> Result<MethodFit> {
    match method {
        Method::Dictionary => dictionary_fit(cfg, data, exec),
        _ => {
            let initial = initial.ok_or_else(|| Error::InvalidConfig("network methods need the initial fit".into()))?;
            network_fit(cfg, &cfg.architecture(), data, initial, method, replicate, exec)
        }
    }
}

/// The unpenalized Adam fit shared by the network methods of a replicate.
pub fn initial_estimator(cfg: &ExperimentConfig, data: &ReplicateData, replicate: usize, exec: Execution) -> Result<MlpParams> {
    let seed = rng::derive_seed(cfg.base_seed, replicate as u64, "initial", Purpose::InitialFit);
    let adam = AdamConfig { learning_rate: cfg.training.learning_rate, ..AdamConfig::default() };
    Ok(fit_initial(&cfg.architecture(), &data.train, cfg.training.adam_iters, seed, adam, exec)?.params)
}

struct Scored {
    report: RunReport,
    curve: Option<Curve>,
}

fn score(
    cfg: &ExperimentConfig,
    data: &ReplicateData,
    fit: MethodFit,
    method: Method,
    replicate: usize,
    level: NoiseLevel,
    started: Instant,
) -> Result<Scored> {
    let f_hat = fit.model.predict_raw(&data.test.raw_x)?;
    let relative_error = relative_test_error(data.test.raw_y.view(), f_hat.view())?;
    let truth = &data.train.true_support;
    let (sensitivity, specificity) = if truth.is_empty() {
        (None, None)
    } else {
        let rep = selection_metrics(&fit.support, truth, cfg.system.dim)?;
        (Some(rep.sensitivity), Some(rep.specificity))
    };
    let curve = (replicate == 0).then(|| Curve {
        method,
        sigma_x: level.sigma_x,
        sigma_y: level.sigma_y,
        times: data.test.times.clone(),
        f_true: data.test.raw_y.clone(),
        f_hat,
    });
    Ok(Scored {
        report: RunReport {
            method,
            replicate,
            sigma_x: level.sigma_x,
            sigma_y: level.sigma_y,
            seed: fit.seed,
            sensitivity,
            specificity,
            relative_error,
            lambda: fit.lambda,
            support: fit.support,
            unit_support: fit.unit_support,
            train_mse: fit.train_mse,
            path: fit.path,
            wall_seconds: cfg.record_timing.then(|| started.elapsed().as_secs_f64()),
        },
        curve,
    })
}

fn run_replicate(
    cfg: &ExperimentConfig,
    shared: &Trajectory,
    target: &TargetFunction,
    level: NoiseLevel,
    replicate: usize,
    exec: Execution,
) -> Vec<(Method, std::result::Result<Scored, String>)> {
    let data = match replicate_data(cfg, shared, target, level, replicate) {
        Ok(d) => d,
        Err(e) => return cfg.methods.iter().map(|&m| (m, Err(e.to_string()))).collect(),
    };
    let needs_net = cfg.methods.iter().any(|m| *m != Method::Dictionary);
    let started = Instant::now();
    let initial = needs_net.then(|| initial_estimator(cfg, &data, replicate, exec));
    let initial_secs = started.elapsed();
    par::map(exec, &cfg.methods, |&method| {
        let started = Instant::now();
        if let (Some(Err(e)), true) = (&initial, method != Method::Dictionary) {
            return (method, Err(e.to_string()));
        }
        let init = initial.as_ref().and_then(|r| r.as_ref().ok());
        // the shared initial fit is charged to every network method
        let started = if method == Method::Dictionary { started } else { started.checked_sub(initial_secs).unwrap_or(started) };
        let out = fit_method(cfg, &data, init, method, replicate, exec)
            .and_then(|fit| score(cfg, &data, fit, method, replicate, level, started));
        (method, out.map_err(|e| e.to_string()))
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Mean and sample standard deviation of each metric per (method, noise level).
pub fn summarize(reports: &[RunReport], failures: &[Failure], methods: &[Method], levels: &[NoiseLevel]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for level in levels {
        for &method in methods {
            let same = |m: Method, sx: f64, sy: f64| m == method && sx == level.sigma_x && sy == level.sigma_y;
            let runs: Vec<&RunReport> = reports.iter().filter(|r| same(r.method, r.sigma_x, r.sigma_y)).collect();
            let excluded = failures.iter().filter(|f| same(f.method, f.sigma_x, f.sigma_y)).count();
            if runs.is_empty() {
                continue;
            }
            let opt = |get: fn(&RunReport) -> Option<f64>| {
                let v: Vec<f64> = runs.iter().filter_map(|r| get(r)).collect();
                if v.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_std(&v);
                    (Some(m), Some(s))
                }
            };
            let (sensitivity_mean, sensitivity_std) = opt(|r| r.sensitivity);
            let (specificity_mean, specificity_std) = opt(|r| r.specificity);
            let errors: Vec<f64> = runs.iter().map(|r| r.relative_error).collect();
            let (relative_error_mean, relative_error_std) = mean_std(&errors);
            let sizes: Vec<f64> = runs.iter().map(|r| r.support.len() as f64).collect();
            rows.push(SummaryRow {
                method,
                sigma_x: level.sigma_x,
                sigma_y: level.sigma_y,
                replicates: runs.len(),
                excluded,
                sensitivity_mean,
                sensitivity_std,
                specificity_mean,
                specificity_std,
                relative_error_mean,
                relative_error_std,
                support_size_mean: mean_std(&sizes).0,
            });
        }
    }
    rows
}

/// Run every replicate, method and noise level of `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let exec = cfg.execution();
    let target = TargetFunction::new(cfg.target, cfg.system.dim, cfg.combo_seed)?;
    let shared = integrate(&cfg.ode(None))?;

    let tasks: Vec<(NoiseLevel, usize)> = cfg
        .noise
        .iter()
        .flat_map(|&level| (0..cfg.replicates).map(move |r| (level, r)))
        .collect();
    let results = par::map(exec, &tasks, |&(level, r)| run_replicate(cfg, &shared, &target, level, r, exec));

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut curves = Vec::new();
    for (&(level, replicate), per_method) in tasks.iter().zip(results) {
        for (method, out) in per_method {
            match out {
                Ok(s) => {
                    reports.push(s.report);
                    curves.extend(s.curve);
                }
                Err(error) => failures.push(Failure {
                    method,
                    replicate,
                    sigma_x: level.sigma_x,
                    sigma_y: level.sigma_y,
                    error,
                }),
            }
        }
    }
    let total = tasks.len() * cfg.methods.len();
    if failures.len() as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { failed: failures.len(), total });
    }
    let summary = summarize(&reports, &failures, &cfg.methods, &cfg.noise);
    Ok(ExperimentOutcome { reports, failures, summary, curves })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write `summary.csv`, `runs.jsonl`, `curves.csv` and `failures.jsonl` into `dir`.
pub fn emit_tables(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut out = BufWriter::new(fs::File::create(dir.join("summary.csv"))?);
    writeln!(
        out,
        "method,sigma_x,sigma_y,replicates,excluded,sensitivity_mean,sensitivity_std,specificity_mean,specificity_std,relative_error_mean,relative_error_std,support_size_mean"
    )?;
    for r in &outcome.summary {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.sigma_x,
            r.sigma_y,
            r.replicates,
            r.excluded,
            fmt_opt(r.sensitivity_mean),
            fmt_opt(r.sensitivity_std),
            fmt_opt(r.specificity_mean),
            fmt_opt(r.specificity_std),
            r.relative_error_mean,
            r.relative_error_std,
            r.support_size_mean
        )?;
    }
    out.flush()?;

    let mut out = BufWriter::new(fs::File::create(dir.join("runs.jsonl"))?);
    for r in &outcome.reports {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    out.flush()?;

    let mut out = BufWriter::new(fs::File::create(dir.join("failures.jsonl"))?);
    for f in &outcome.failures {
        serde_json::to_writer(&mut out, f)?;
        writeln!(out)?;
    }
    out.flush()?;

    let mut out = BufWriter::new(fs::File::create(dir.join("curves.csv"))?);
    writeln!(out, "method,sigma_x,sigma_y,index,t,f_true,f_hat")?;
    for c in &outcome.curves {
        for i in 0..c.f_true.len() {
            writeln!(
                out,
                "{},{},{},{},{},{:e},{:e}",
                c.method,
                c.sigma_x,
                c.sigma_y,
                i + 1,
                c.times[i],
                c.f_true[i],
                c.f_hat[i]
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Parse a `runs.jsonl` file.
pub fn read_runs(path: &Path) -> Result<Vec<RunReport>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
