//! Long-horizon prediction error, spectrum diagnostics and cross-variant
//! comparison.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::dynamics::{integrate, DynamicsError, OdeSpec, Trajectory, WindowDataset};
use crate::koopman::{KaeModel, ModelError, Variant};
use crate::linalg::{self, Complex, LinalgError, Matrix};
use crate::training::{count_ops, train, Architecture, EpochLog, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation request: {0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Data(#[from] DynamicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Ground truth for a prediction run: raw states `x(t0) ..= x(t0 + P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonTruth {
    pub t0: usize,
    pub states: Matrix,
}

impl HorizonTruth {
    /// Takes `x(t0) ..= x(t0 + horizon)` from `traj`, continuing the
    /// integration of `ode` from its last sample when `traj` is too short.
    pub fn from_trajectory(traj: &Trajectory, ode: &OdeSpec, t0: usize, horizon: usize) -> Result<Self> {
        if t0 >= traj.len() {
            return Err(EvalError::Contract(format!(
                "t0 = {t0} is outside the trajectory ({} samples)",
                traj.len()
            )));
        }
        let end = t0 + horizon + 1;
        let states = if end <= traj.len() {
            traj.slice(t0, end).states
        } else {
            let missing = end - traj.len();
            let tail = integrate(&ode.model(), traj.state(traj.len() - 1), traj.dt, missing + 1)?;
            let d = traj.dim();
            let mut data = traj.slice(t0, traj.len()).states.into_data();
            data.extend_from_slice(&tail.states.data()[d..]);
            Matrix::new(end - t0, d, data)?
        };
        Ok(Self { t0, states })
    }

    /// Truth for the first test anchor of `dataset`.
    pub fn for_test_split(traj: &Trajectory, ode: &OdeSpec, dataset: &WindowDataset, horizon: usize) -> Result<Self> {
        Self::from_trajectory(traj, ode, dataset.test_start(), horizon)
    }

    pub fn horizon(&self) -> usize {
        self.states.rows() - 1
    }
}

/// Per-step errors of a single-encoding rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub t0: usize,
    /// `errors[τ - 1]` is `ε_pred(τ)`, in normalized coordinates.
    pub errors: Vec<f64>,
    pub average: f64,
    /// Raw-coordinate ground truth, one row per reported step.
    pub truth: Matrix,
    /// Raw-coordinate predictions, one row per reported step.
    pub predicted: Matrix,
    /// First step whose latent or decoded state was non-finite.
    pub diverged_at: Option<usize>,
}

pub const PREDICTION_CSV_HEADER: &str = "tau,err,x1_true,x2_true,x3_true,x1_pred,x2_pred,x3_pred";

impl PredictionReport {
    pub fn to_csv(&self) -> String {
        let d = self.truth.cols();
        let mut s = String::from("tau,err");
        for i in 1..=d {
            let _ = write!(s, ",x{i}_true");
        }
        for i in 1..=d {
            let _ = write!(s, ",x{i}_pred");
        }
        s.push('\n');
        for (k, e) in self.errors.iter().enumerate() {
            let _ = write!(s, "{},{e:.17e}", k + 1);
            for v in self.truth.row(k).iter().chain(self.predicted.row(k)) {
                let _ = write!(s, ",{v:.17e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Encodes `x(t0)` once, advances the latent `P` times with `K` and
/// decodes every step. A non-finite latent or decoded state truncates the
/// report at that step.
pub fn predict_horizon(model: &KaeModel, truth: &HorizonTruth, horizon: usize) -> Result<PredictionReport> {
    if horizon == 0 {
        return Err(EvalError::Contract("horizon must be at least 1".into()));
    }
    if truth.horizon() < horizon {
        return Err(EvalError::Contract(format!(
            "ground truth covers {} steps, horizon is {horizon}",
            truth.horizon()
        )));
    }
    if truth.states.cols() != model.dims.n {
        return Err(EvalError::Contract(format!(
            "ground truth has {} state dimensions, model expects {}",
            truth.states.cols(),
            model.dims.n
        )));
    }
    let norm = &model.normalization;
    let x0 = Matrix::new(1, model.dims.n, norm.normalize_row(truth.states.row(0)))?;
    let z0 = model.encode(&x0)?;
    let k = model.koopman_matrix()?;
    let m = model.dims.m;

    let mut latents = Vec::with_capacity(horizon * m);
    let mut z = z0.row(0).to_vec();
    let mut diverged_at = None;
    for tau in 1..=horizon {
        z = k.matvec(&z)?;
        if z.iter().any(|v| !v.is_finite()) {
            diverged_at = Some(tau);
            break;
        }
        latents.extend_from_slice(&z);
    }
    let steps = latents.len() / m;
    let mut errors = Vec::with_capacity(steps);
    let mut predicted = Vec::with_capacity(steps * model.dims.n);
    if steps > 0 {
        let decoded = model.decode(&Matrix::new(steps, m, latents)?)?;
        for tau in 1..=steps {
            let pred = decoded.row(tau - 1);
            if diverged_at.is_none() && pred.iter().any(|v| !v.is_finite()) {
                diverged_at = Some(tau);
                break;
            }
            let target = norm.normalize_row(truth.states.row(tau));
            errors.push(target.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum());
            predicted.extend(norm.denormalize_row(pred));
        }
    }
    let n = errors.len();
    let truth_rows = truth.states.data()[model.dims.n..(n + 1) * model.dims.n].to_vec();
    let average = if n == 0 { f64::NAN } else { errors.iter().sum::<f64>() / n as f64 };
    Ok(PredictionReport {
        t0: truth.t0,
        errors,
        average,
        truth: Matrix::new(n, model.dims.n, truth_rows)?,
        predicted: Matrix::new(n, model.dims.n, predicted)?,
        diverged_at,
    })
}

/// Raw-coordinate predictions `x̂(1) ..= x̂(P)` from a raw initial state.
pub fn forecast(model: &KaeModel, x0: &[f64], horizon: usize) -> Result<Matrix> {
    if x0.len() != model.dims.n {
        return Err(EvalError::Contract(format!(
            "initial state has {} components, model expects {}",
            x0.len(),
            model.dims.n
        )));
    }
    let norm = &model.normalization;
    let z0 = model.encode(&Matrix::new(1, model.dims.n, norm.normalize_row(x0))?)?;
    let zs = model.rollout_forward(z0.row(0), horizon)?;
    let latents = Matrix::new(horizon, model.dims.m, zs.concat())?;
    let decoded = model.decode(&latents)?;
    if !decoded.all_finite() {
        return Err(ModelError::Diverged { step: horizon }.into());
    }
    Ok(norm.denormalize(&decoded))
}

/// Eigenvalue diagnostics of the learned operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub k: Vec<Complex>,
    pub uf: Option<Vec<Complex>>,
    pub vf: Option<Vec<Complex>>,
    /// Singular values of `K`: the `s_f` parameter for USVD, computed
    /// otherwise.
    pub sf: Vec<f64>,
    /// `max_i | |λ_i(K)| - 1 |`.
    pub max_deviation: f64,
}

pub const SPECTRUM_CSV_HEADER: &str = "component,re,im,abs";

impl SpectrumReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{SPECTRUM_CSV_HEADER}\n");
        let mut rows = |name: &str, vals: &[Complex]| {
            for c in vals {
                let _ = writeln!(s, "{name},{:.17e},{:.17e},{:.17e}", c.re, c.im, c.abs());
            }
        };
        rows("K", &self.k);
        if let Some(u) = &self.uf {
            rows("Uf", u);
        }
        if let Some(v) = &self.vf {
            rows("Vf", v);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub fn spectrum(model: &KaeModel) -> Result<SpectrumReport> {
    let k = model.koopman_matrix()?;
    let eig = linalg::eigenvalues(&k)?;
    let max_deviation = eig.unit_circle_deviation();
    let (uf, vf, sf) = match model.variant {
        Variant::Usvd => (
            Some(linalg::eigenvalues(model.param("op.Uf")?)?.eigenvalues),
            Some(linalg::eigenvalues(model.param("op.Vf")?)?.eigenvalues),
            model.param("op.sf")?.data().to_vec(),
        ),
        Variant::Isvd => {
            let svd = linalg::svd(&k)?;
            (
                Some(linalg::eigenvalues(&svd.u)?.eigenvalues),
                Some(linalg::eigenvalues(&svd.v)?.eigenvalues),
                svd.sigma,
            )
        }
        Variant::Vanilla | Variant::Ckae => (None, None, linalg::svd(&k)?.sigma),
    };
    Ok(SpectrumReport {
        k: eig.eigenvalues,
        uf,
        vf,
        sf,
        max_deviation,
    })
}

/// A finished comparison run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub avg_err: f64,
    pub report: PredictionReport,
    pub model: KaeModel,
    pub logs: Vec<EpochLog>,
}

/// One (variant configuration, seed) cell of a comparison.
#[derive(Debug, Clone)]
pub struct ComparisonCell {
    pub variant: Variant,
    pub seed: u64,
    pub ops_per_step: u64,
    pub outcome: std::result::Result<RunSummary, String>,
}

pub const COMPARISON_CSV_HEADER: &str = "variant,seed,avg_err_1000,ops_per_step";

/// Worker count from `KOOPMAN_SVD_THREADS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("KOOPMAN_SVD_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn run_cell(config: &TrainConfig, dataset: &WindowDataset, truth: &HorizonTruth, horizon: usize) -> std::result::Result<RunSummary, String> {
    let out = train(config, dataset, None).map_err(|e: TrainError| e.to_string())?;
    let report = predict_horizon(&out.model, truth, horizon).map_err(|e| e.to_string())?;
    if let Some(tau) = report.diverged_at {
        return Err(format!("prediction diverged at step {tau}"));
    }
    Ok(RunSummary {
        avg_err: report.average,
        report,
        model: out.model,
        logs: out.logs,
    })
}

/// Trains every configuration for every seed (overriding `seed`) and
/// scores each on `truth`. Runs are spread over `workers` threads; a
/// failed run is recorded in its cell. Cells come back in
/// configuration-major, seed-minor order whatever the scheduling.
pub fn compare_variants(
    configs: &[TrainConfig],
    dataset: &WindowDataset,
    truth: &HorizonTruth,
    horizon: usize,
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<ComparisonCell>> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(EvalError::Contract("comparison needs at least one configuration and one seed".into()));
    }
    let jobs: Vec<TrainConfig> = configs
        .iter()
        .flat_map(|c| seeds.iter().map(move |&seed| TrainConfig { seed, ..c.clone() }))
        .collect();
    let results: Mutex<Vec<Option<ComparisonCell>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(config) = jobs.get(i) else { break };
                let ops = count_ops(
                    config.variant,
                    &Architecture::from(config.dims),
                    config.batch_size,
                    config.wf,
                    config.wb,
                );
                let cell = ComparisonCell {
                    variant: config.variant,
                    seed: config.seed,
                    ops_per_step: ops.per_step(),
                    outcome: run_cell(config, dataset, truth, horizon),
                };
                results.lock().expect("no worker panicked")[i] = Some(cell);
            });
        }
    });
    Ok(results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|c| c.expect("every job ran"))
        .collect())
}

pub fn comparison_csv(cells: &[ComparisonCell]) -> String {
    let mut s = format!("{COMPARISON_CSV_HEADER}\n");
    for c in cells {
        let err = match &c.outcome {
            Ok(r) => format!("{:.17e}", r.avg_err),
            Err(_) => "failed".to_string(),
        };
        let _ = writeln!(s, "{},{},{err},{}", c.variant, c.seed, c.ops_per_step);
    }
    s
}

/// Median of the successful runs' average errors, per variant, in first
/// appearance order.
pub fn median_by_variant(cells: &[ComparisonCell]) -> Vec<(Variant, Option<f64>)> {
    let mut order: Vec<Variant> = Vec::new();
    for c in cells {
        if !order.contains(&c.variant) {
            order.push(c.variant);
        }
    }
    order
        .into_iter()
        .map(|v| {
            let errs: Vec<f64> = cells
                .iter()
                .filter(|c| c.variant == v)
                .filter_map(|c| c.outcome.as_ref().ok().map(|r| r.avg_err))
                .collect();
            (v, median(&errs))
        })
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
