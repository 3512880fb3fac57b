//! Experiment configuration, the multi-trial driver, and file formats.

pub mod io;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{linear_cca, pca_energy, pca_project};
use crate::error::{NmcaError, Result};
use crate::metrics::{composition_residuals, mean_std, measured_scir, subspace_distance, TrialResult};
use crate::nmca::{embed, run_nmca, MapKind, TrainConfig};
use crate::numerics::{self, Matrix};
use crate::synth::{generate_views, DistortionKind, MultiviewDataset, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nmca,
    /// NMCA keeping only the whitening constraint on `U`.
    NmcaNoZeroMean,
    Cca,
    Pca,
}

/// One parameter varied over a list of values. Every other setting comes
/// from the base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "param", content = "values", rename_all = "snake_case")]
pub enum Sweep {
    Samples(Vec<usize>),
    ScirDb(Vec<f64>),
    /// Replaces every channel distortion by `CubicAffine { alpha }`.
    CubicAlpha(Vec<f64>),
    /// Sets `K`; each view keeps its channel count with `R_q = M_q - K`.
    LatentDim(Vec<usize>),
    /// Hidden widths used for both `f` and `g`.
    Hidden(Vec<Vec<usize>>),
}

impl Sweep {
    pub fn len(&self) -> usize {
        match self {
            Sweep::Samples(v) | Sweep::LatentDim(v) => v.len(),
            Sweep::ScirDb(v) | Sweep::CubicAlpha(v) => v.len(),
            Sweep::Hidden(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn name(&self) -> &'static str {
        match self {
            Sweep::Samples(_) => "samples",
            Sweep::ScirDb(_) => "scir_db",
            Sweep::CubicAlpha(_) => "cubic_alpha",
            Sweep::LatentDim(_) => "latent_dim",
            Sweep::Hidden(_) => "hidden",
        }
    }

    fn value(&self, i: usize) -> serde_json::Value {
        match self {
            Sweep::Samples(v) | Sweep::LatentDim(v) => v[i].into(),
            Sweep::ScirDb(v) | Sweep::CubicAlpha(v) => v[i].into(),
            Sweep::Hidden(v) => v[i].clone().into(),
        }
    }

    fn apply(&self, i: usize, synth: &mut SynthConfig, train: &mut TrainConfig) {
        match self {
            Sweep::Samples(v) => synth.samples = v[i],
            Sweep::ScirDb(v) => synth.target_scir_db = Some(v[i]),
            Sweep::CubicAlpha(v) => {
                for view in &mut synth.views {
                    view.distortions.fill(DistortionKind::CubicAffine { alpha: v[i] });
                }
            }
            Sweep::LatentDim(v) => {
                synth.shared_dim = v[i];
                train.latent_dim = v[i];
                for view in &mut synth.views {
                    view.private_dim = view.channels.saturating_sub(v[i]);
                    view.permutation = None;
                }
            }
            Sweep::Hidden(v) => {
                train.f_hidden = v[i].clone();
                train.g_hidden = v[i].clone();
            }
        }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Nmca]
}

fn default_trials() -> usize {
    10
}

fn default_probe_grid() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    /// PCA keeps the fewest components reaching this fraction of the
    /// variance instead of `K` components.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_energy: Option<f64>,
    /// Grid size of the composition probes behind the affine residuals
    /// (0 skips them).
    #[serde(default = "default_probe_grid")]
    pub probe_grid: usize,
}

impl ExperimentConfig {
    pub fn new(synth: SynthConfig, train: TrainConfig, methods: Vec<Method>, trials: usize) -> Self {
        ExperimentConfig {
            synth,
            methods,
            train,
            trials,
            base_seed: 0,
            sweep: None,
            pca_energy: None,
            probe_grid: default_probe_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NmcaError::InvalidConfig(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if let Some(f) = self.pca_energy {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("pca_energy = {f} is not in (0, 1]"));
            }
        }
        for i in 0..self.points() {
            let (synth, train) = self.point_configs(i);
            synth.validate().map_err(|e| NmcaError::InvalidConfig(format!("sweep point {i}: {e}")))?;
            if self.methods.iter().any(|m| matches!(m, Method::Nmca | Method::NmcaNoZeroMean)) {
                train.validate(synth.samples).map_err(|e| NmcaError::InvalidConfig(format!("sweep point {i}: {e}")))?;
            }
        }
        match &self.sweep {
            Some(s) if s.is_empty() => bad("sweep has no values".into()),
            Some(Sweep::CubicAlpha(v)) if v.iter().any(|a| !(*a >= 0.0)) => bad("cubic alpha must be non-negative".into()),
            Some(Sweep::LatentDim(v)) if v.contains(&0) => bad("latent_dim values must be positive".into()),
            Some(Sweep::LatentDim(v)) if self.synth.views.iter().any(|view| v.iter().any(|&k| k > view.channels)) => {
                bad("latent_dim exceeds a view's channel count".into())
            }
            _ => Ok(()),
        }
    }

    fn points(&self) -> usize {
        self.sweep.as_ref().map_or(1, Sweep::len)
    }

    fn point_configs(&self, point: usize) -> (SynthConfig, TrainConfig) {
        let mut synth = self.synth.clone();
        let mut train = self.train.clone();
        if let Some(s) = &self.sweep {
            s.apply(point, &mut synth, &mut train);
        }
        train.latent_dim = synth.shared_dim;
        (synth, train)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Mean and population standard deviation of `dist` over successful
    /// trials.
    pub mean_dist: f64,
    pub std_dist: f64,
    pub trials: Vec<TrialResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<TrialFailure>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<serde_json::Value>,
    pub methods: Vec<MethodResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config: ExperimentConfig,
    pub points: Vec<PointResult>,
}

impl ResultRecord {
    pub fn failed_trials(&self) -> usize {
        self.points.iter().flat_map(|p| &p.methods).map(|m| m.failures.len()).sum()
    }

    pub fn method(&self, point: usize, method: Method) -> Option<&MethodResult> {
        self.points.get(point)?.methods.iter().find(|m| m.method == method)
    }

    /// Same record with every timing field set to zero.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for m in r.points.iter_mut().flat_map(|p| &mut p.methods) {
            m.seconds = 0.0;
            m.trials.iter_mut().for_each(|t| t.seconds = 0.0);
        }
        r
    }
}

/// Stacked views, `sum_q M_q x N`.
fn stack_views(views: &[Matrix]) -> Matrix {
    let rows = views.iter().map(Matrix::nrows).sum();
    let mut out = Matrix::zeros(rows, views[0].ncols());
    let mut r = 0;
    for v in views {
        out.rows_mut(r, v.nrows()).copy_from(v);
        r += v.nrows();
    }
    out
}

/// One method on one data set.
pub fn run_method(
    method: Method,
    data: &MultiviewDataset,
    train: &TrainConfig,
    pca_fraction: Option<f64>,
    probe_grid: usize,
) -> Result<TrialResult> {
    let truth = data.truth.as_ref().ok_or(NmcaError::MissingGroundTruth)?;
    let start = Instant::now();
    let k = train.latent_dim;
    let mut result = TrialResult {
        seed: train.seed,
        dist: f64::NAN,
        view_dists: Vec::new(),
        scir_db: measured_scir(&truth.shared, &truth.private).ok(),
        affine_residuals: Vec::new(),
        min_abs_b: None,
        loss_trace: Vec::new(),
        seconds: 0.0,
    };
    match method {
        Method::Nmca | Method::NmcaNoZeroMean => {
            let cfg = TrainConfig { zero_mean: method == Method::Nmca, ..train.clone() };
            let (model, trace) = run_nmca(data, &cfg)?;
            result.dist = subspace_distance(&truth.shared, &model.u)?;
            result.view_dists = (0..data.num_views())
                .map(|q| subspace_distance(&truth.shared, &embed(&model, &data.views[q], q)?))
                .collect::<Result<_>>()?;
            if probe_grid > 0 && cfg.map_kind == MapKind::PerChannel {
                result.affine_residuals = composition_residuals(&model, truth, probe_grid)?;
            }
            result.min_abs_b = Some(model.min_abs_b());
            result.loss_trace = trace.epochs.iter().map(|e| e.loss.total).collect();
        }
        Method::Cca => {
            if data.num_views() != 2 {
                return Err(NmcaError::InvalidConfig("linear CCA takes exactly two views".into()));
            }
            let sol = linear_cca(&data.views[0], &data.views[1], k)?;
            // Scored like the other methods' `B_q y`: projections of the
            // observed, uncentred views.
            result.view_dists = (0..2)
                .map(|q| subspace_distance(&truth.shared, &(&sol.b[q] * &data.views[q])))
                .collect::<Result<_>>()?;
            result.dist = result.view_dists[0];
        }
        Method::Pca => {
            let stacked = stack_views(&data.views);
            let sol = match pca_fraction {
                Some(f) => pca_energy(&stacked, f)?,
                None => pca_project(&stacked, k.min(stacked.nrows()))?,
            };
            result.dist = subspace_distance(&truth.shared, &sol.scores)?;
        }
    }
    result.seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Runs every method at every sweep point for `cfg.trials` seeds
/// (`base_seed + i`), with fresh data and initialization per trial. Trials
/// run on up to `jobs` threads; the record does not depend on `jobs`.
pub fn run_trials(cfg: &ExperimentConfig, jobs: usize) -> Result<ResultRecord> {
    cfg.validate()?;
    let tasks: Vec<(usize, Method, u64)> = (0..cfg.points())
        .flat_map(|p| cfg.methods.iter().flat_map(move |&m| (0..cfg.trials as u64).map(move |t| (p, m, t))))
        .collect();
    let run = |&(point, method, trial): &(usize, Method, u64)| -> std::result::Result<TrialResult, TrialFailure> {
        let seed = cfg.base_seed.wrapping_add(trial);
        let (mut synth, mut train) = cfg.point_configs(point);
        synth.seed = seed;
        train.seed = seed;
        let fail = |e: NmcaError| TrialFailure { seed, error: e.to_string() };
        let data = generate_views(&synth).map_err(fail)?;
        run_method(method, &data, &train, cfg.pca_energy, cfg.probe_grid).map_err(fail)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| NmcaError::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| tasks.par_iter().map(run).collect());

    let mut points = Vec::with_capacity(cfg.points());
    let mut outcomes = outcomes.into_iter();
    for p in 0..cfg.points() {
        let mut methods = Vec::with_capacity(cfg.methods.len());
        for &method in &cfg.methods {
            let mut trials = Vec::new();
            let mut failures = Vec::new();
            for outcome in outcomes.by_ref().take(cfg.trials) {
                match outcome {
                    Ok(t) => trials.push(t),
                    Err(f) => failures.push(f),
                }
            }
            let dists: Vec<f64> = trials.iter().map(|t| t.dist).collect();
            let (mean_dist, std_dist) = mean_std(&dists);
            let seconds = trials.iter().map(|t| t.seconds).sum();
            methods.push(MethodResult { method, mean_dist, std_dist, trials, failures, seconds });
        }
        points.push(PointResult {
            param: cfg.sweep.as_ref().map(|s| s.name().to_string()),
            value: cfg.sweep.as_ref().map(|s| s.value(p)),
            methods,
        });
    }
    Ok(ResultRecord { config: cfg.clone(), points })
}

/// Quality of a trained model on a data set: distances of the per-view
/// embeddings and their average to the true shared subspace, and the
/// affine residuals of the learned compositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub view_dists: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scir_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub affine_residuals: Vec<Vec<f64>>,
    pub min_abs_b: f64,
    /// `sum_q ||E - B_q f_q(Y_q)||_F^2` with `E` the centred average
    /// embedding.
    pub matching_spread: f64,
}

pub fn evaluate_model(model: &crate::nmca::NmcaModel, data: &MultiviewDataset, probe_grid: usize) -> Result<EvalMetrics> {
    if data.num_views() != model.num_views() {
        return Err(NmcaError::Shape(format!("model has {} views, data has {}", model.num_views(), data.num_views())));
    }
    let embeddings: Vec<Matrix> = (0..data.num_views()).map(|q| embed(model, &data.views[q], q)).collect::<Result<_>>()?;
    let mut avg = Matrix::zeros(model.latent_dim(), data.samples());
    for e in &embeddings {
        avg += e;
    }
    avg /= embeddings.len() as f64;
    let centred = numerics::center_rows(&avg);
    let matching_spread = embeddings.iter().map(|e| (&numerics::center_rows(e) - &centred).norm_squared()).sum();
    let mut metrics = EvalMetrics {
        samples: data.samples(),
        dist: None,
        view_dists: Vec::new(),
        scir_db: None,
        affine_residuals: Vec::new(),
        min_abs_b: model.min_abs_b(),
        matching_spread,
    };
    if let Some(truth) = &data.truth {
        metrics.dist = Some(subspace_distance(&truth.shared, &centred)?);
        metrics.view_dists = embeddings.iter().map(|e| subspace_distance(&truth.shared, e)).collect::<Result<_>>()?;
        metrics.scir_db = measured_scir(&truth.shared, &truth.private).ok();
        if probe_grid > 0 && model.f_banks.iter().all(|b| b.channel_eval(0, 0.0).is_ok()) {
            metrics.affine_residuals = composition_residuals(model, truth, probe_grid)?;
        }
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_train() -> TrainConfig {
        TrainConfig { epochs: 3, inner_steps: 2, f_hidden: vec![4], g_hidden: vec![4], ..TrainConfig::default() }
    }

    fn quick(methods: Vec<Method>, trials: usize) -> ExperimentConfig {
        ExperimentConfig::new(SynthConfig { samples: 120, ..SynthConfig::benchmark(0) }, quick_train(), methods, trials)
    }

    #[test]
    fn linear_baselines_fail_on_nonlinear_data() {
        let mut cfg = quick(vec![Method::Cca, Method::Pca], 10);
        cfg.synth.samples = 1000;
        let r = run_trials(&cfg, 1).unwrap();
        for m in &r.points[0].methods {
            assert!(m.mean_dist > 0.9, "{:?}: {}", m.method, m.mean_dist);
            assert_eq!(m.trials.len(), 10);
        }
    }

    #[test]
    fn deterministic_and_independent_of_jobs() {
        let cfg = quick(vec![Method::Nmca, Method::Cca], 2);
        let a = run_trials(&cfg, 1).unwrap().without_timing();
        let b = run_trials(&cfg, 1).unwrap().without_timing();
        let c = run_trials(&cfg, 3).unwrap().without_timing();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn aggregates_match_trials() {
        let cfg = quick(vec![Method::Nmca], 3);
        let r = run_trials(&cfg, 1).unwrap();
        let m = &r.points[0].methods[0];
        let dists: Vec<f64> = m.trials.iter().map(|t| t.dist).collect();
        assert_eq!(mean_std(&dists), (m.mean_dist, m.std_dist));
        assert!(m.std_dist >= 0.0);
        assert_eq!(m.trials.iter().map(|t| t.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(m.trials.iter().all(|t| (0.0..=1.0).contains(&t.dist) && t.loss_trace.len() == 3));
    }

    #[test]
    fn sweeps_apply_to_their_parameter() {
        let mut cfg = quick(vec![Method::Cca], 1);
        cfg.sweep = Some(Sweep::Samples(vec![100, 150]));
        let r = run_trials(&cfg, 1).unwrap();
        assert_eq!(r.points.len(), 2);
        assert_eq!(r.points[1].value, Some(150.into()));

        let (s, t) = cfg_with(Sweep::LatentDim(vec![3]), 0);
        assert_eq!((s.shared_dim, t.latent_dim), (3, 3));
        assert!(s.views.iter().all(|v| v.private_dim == v.channels - 3));
        let (s, _) = cfg_with(Sweep::CubicAlpha(vec![0.5]), 0);
        assert!(s.views.iter().flat_map(|v| &v.distortions).all(|d| *d == DistortionKind::CubicAffine { alpha: 0.5 }));
        let (_, t) = cfg_with(Sweep::Hidden(vec![vec![8, 8]]), 0);
        assert_eq!(t.f_hidden, vec![8, 8]);
    }

    fn cfg_with(sweep: Sweep, point: usize) -> (SynthConfig, TrainConfig) {
        let mut cfg = quick(vec![Method::Nmca], 1);
        cfg.synth = SynthConfig::latent_dim_sweep(2, 0);
        cfg.sweep = Some(sweep);
        cfg.point_configs(point)
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let mut cfg = quick(vec![Method::Cca, Method::Pca], 2);
        cfg.synth.views.push(cfg.synth.views[0].clone());
        let r = run_trials(&cfg, 1).unwrap();
        let cca = r.method(0, Method::Cca).unwrap();
        assert_eq!(cca.failures.len(), 2);
        assert!(cca.mean_dist.is_nan());
        assert_eq!(r.method(0, Method::Pca).unwrap().trials.len(), 2);
        assert_eq!(r.failed_trials(), 2);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = quick(vec![Method::Nmca], 0);
        assert!(cfg.validate().is_err());
        cfg.trials = 1;
        cfg.sweep = Some(Sweep::Samples(vec![]));
        assert!(cfg.validate().is_err());
        cfg.sweep = Some(Sweep::CubicAlpha(vec![-1.0]));
        assert!(cfg.validate().is_err());
        cfg.sweep = Some(Sweep::LatentDim(vec![4]));
        assert!(cfg.validate().is_err());
        cfg.sweep = None;
        cfg.methods.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let mut cfg = quick(vec![Method::Nmca, Method::NmcaNoZeroMean], 2);
        cfg.sweep = Some(Sweep::ScirDb(vec![-10.0, -20.0]));
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"param\":\"scir_db\""));
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        let mut value = serde_json::to_value(&cfg).unwrap();
        value["bogus"] = 1.into();
        assert!(serde_json::from_value::<ExperimentConfig>(value).is_err());
    }

    #[test]
    fn evaluate_identity_model() {
        let data = generate_views(&SynthConfig { samples: 200, ..SynthConfig::benchmark(2) }).unwrap();
        let b = vec![Matrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]); 2];
        let model = crate::nmca::NmcaModel::identity(b, Matrix::zeros(2, 200));
        let m = evaluate_model(&model, &data, 50).unwrap();
        assert!((0.0..=1.0).contains(&m.dist.unwrap()));
        assert_eq!(m.view_dists.len(), 2);
        assert_eq!(m.affine_residuals.len(), 2);
        assert_eq!(m.min_abs_b, 0.0);
    }
}
