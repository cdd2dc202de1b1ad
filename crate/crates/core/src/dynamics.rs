//! Training data: the three-state mean-field model of the cylinder wake,
//! integrated with classic RK4, plus windowing and normalization.
//!
//! The model is
//!
//! ```text
//! x1' = mu x1 - omega x2 + A x1 x3
//! x2' = omega x1 + mu x2 + A x2 x3
//! x3' = -lambda (x3 - x1^2 - x2^2)
//! ```
//!
//! whose limit cycle has radius `sqrt(-mu / A)` on the slow manifold
//! `x3 = x1^2 + x2^2`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid ODE spec: {0}")]
    InvalidSpec(String),
    #[error("integration diverged at step {step}")]
    Diverged { step: usize },
    #[error("contract error: {0}")]
    Contract(String),
    #[error("trajectory CSV line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// A vector field `x' = f(x)` to integrate.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderWake {
    pub mu: f64,
    pub omega: f64,
    pub amp: f64,
    pub lam: f64,
}

impl Default for CylinderWake {
    fn default() -> Self {
        Self {
            mu: 0.1,
            omega: 1.0,
            amp: -0.1,
            lam: 10.0,
        }
    }
}

impl CylinderWake {
    /// Radius of the limit cycle, `sqrt(-mu / A)`.
    pub fn attractor_radius(&self) -> f64 {
        (-self.mu / self.amp).sqrt()
    }
}

impl VectorField for CylinderWake {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        out[0] = self.mu * x1 - self.omega * x2 + self.amp * x1 * x3;
        out[1] = self.omega * x1 + self.mu * x2 + self.amp * x2 * x3;
        out[2] = -self.lam * (x3 - x1 * x1 - x2 * x2);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeSpec {
    pub mu: f64,
    pub omega: f64,
    pub amp: f64,
    pub lam: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub x0: [f64; 3],
}

impl Default for OdeSpec {
    fn default() -> Self {
        let m = CylinderWake::default();
        Self {
            mu: m.mu,
            omega: m.omega,
            amp: m.amp,
            lam: m.lam,
            dt: 0.1,
            n_steps: 1500,
            x0: [1.0, 0.0, 1.0],
        }
    }
}

impl OdeSpec {
    pub fn model(&self) -> CylinderWake {
        CylinderWake {
            mu: self.mu,
            omega: self.omega,
            amp: self.amp,
            lam: self.lam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(DynamicsError::InvalidSpec(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.n_steps < 2 {
            return Err(DynamicsError::InvalidSpec(format!(
                "n_steps must be at least 2, got {}",
                self.n_steps
            )));
        }
        let params = [self.mu, self.omega, self.amp, self.lam];
        if params.iter().chain(&self.x0).any(|v| !v.is_finite()) {
            return Err(DynamicsError::InvalidSpec(
                "non-finite model parameter or x0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// One row per time step.
    pub states: Matrix,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        self.states.row(i)
    }

    /// Rows `start..end` as a new trajectory.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        let d = self.dim();
        let data = self.states.data()[start * d..end * d].to_vec();
        Trajectory {
            states: Matrix::from_raw(end - start, d, data),
            dt: self.dt,
        }
    }

    /// CSV with header `t,x1,x2,...`, 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for k in 0..self.dim() {
            let _ = write!(out, ",x{}", k + 1);
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{:.16e}", i as f64 * self.dt);
            for v in self.state(i) {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Trajectory> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(DynamicsError::Parse {
            line: 1,
            detail: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2
            || cols[0] != "t"
            || cols[1..]
                .iter()
                .enumerate()
                .any(|(k, c)| *c != format!("x{}", k + 1))
        {
            return Err(DynamicsError::Parse {
                line: 1,
                detail: format!("expected header t,x1,x2,..., got `{header}`"),
            });
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut data = Vec::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(DynamicsError::Parse {
                    line: i + 1,
                    detail: format!("expected {} fields, got {}", dim + 1, fields.len()),
                });
            }
            for (k, f) in fields.iter().enumerate() {
                let v: f64 = f.parse().map_err(|_| DynamicsError::Parse {
                    line: i + 1,
                    detail: format!("not a number: `{f}`"),
                })?;
                if !v.is_finite() {
                    return Err(DynamicsError::Parse {
                        line: i + 1,
                        detail: "non-finite value".into(),
                    });
                }
                if k == 0 {
                    times.push(v);
                } else {
                    data.push(v);
                }
            }
        }
        if times.len() < 2 {
            return Err(DynamicsError::Parse {
                line: 1,
                detail: "need at least two rows".into(),
            });
        }
        let dt = times[1] - times[0];
        let n = times.len();
        Ok(Trajectory {
            states: Matrix::from_raw(n, dim, data),
            dt,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Trajectory> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// One classic fourth-order Runge–Kutta step.
pub fn rk4_step<F: VectorField + ?Sized>(f: &F, x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    f.eval(x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    f.eval(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    f.eval(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    f.eval(&tmp, &mut k4);
    (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrates any vector field for `n_steps` samples (the first is `x0`).
pub fn integrate<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    if x0.len() != f.dim() {
        return Err(DynamicsError::InvalidSpec(format!(
            "x0 has {} components, field has {}",
            x0.len(),
            f.dim()
        )));
    }
    let d = f.dim();
    let mut data = Vec::with_capacity(n_steps * d);
    data.extend_from_slice(x0);
    let mut x = x0.to_vec();
    for step in 1..n_steps {
        x = rk4_step(f, &x, dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::Diverged { step });
        }
        data.extend_from_slice(&x);
    }
    Ok(Trajectory {
        states: Matrix::from_raw(n_steps, d, data),
        dt,
    })
}

pub fn simulate(spec: &OdeSpec) -> Result<Trajectory> {
    spec.validate()?;
    integrate(&spec.model(), &spec.x0, spec.dt, spec.n_steps)
}

/// Per-dimension affine map `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Zero-mean, unit-variance statistics of the given rows. A dimension
    /// whose standard deviation is below `1e-3 * max(1, |mean|)` is only
    /// shifted, never scaled.
    pub fn fit(states: &Matrix) -> Self {
        let (n, d) = states.shape();
        let mut shift = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for k in 0..d {
            let mean = (0..n).map(|i| states[(i, k)]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (states[(i, k)] - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            shift[k] = mean;
            if std > 1e-3 * mean.abs().max(1.0) {
                scale[k] = std;
            }
        }
        Self { shift, scale }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn normalize_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, c))| (v - s) / c)
            .collect()
    }

    pub fn denormalize_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, c))| v * c + s)
            .collect()
    }

    pub fn normalize(&self, m: &Matrix) -> Matrix {
        self.map_rows(m, |r| self.normalize_row(r))
    }

    pub fn denormalize(&self, m: &Matrix) -> Matrix {
        self.map_rows(m, |r| self.denormalize_row(r))
    }

    fn map_rows(&self, m: &Matrix, f: impl Fn(&[f64]) -> Vec<f64>) -> Matrix {
        let data: Vec<f64> = (0..m.rows()).flat_map(|i| f(m.row(i))).collect();
        Matrix::from_raw(m.rows(), m.cols(), data)
    }
}

/// Which part of the temporal split a window belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Mini-batch drawn from windows: the anchor states plus their past and
/// future targets. `past[i]` holds `x(t - i - 1)`, `future[k]` holds
/// `x(t + k + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub center: Matrix,
    pub future: Vec<Matrix>,
    pub past: Vec<Matrix>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.center.rows()
    }
}

/// Sliding windows of length `wb + 1 + wf` over a (normalized) trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub states: Matrix,
    pub dt: f64,
    pub wf: usize,
    pub wb: usize,
    pub normalization: Normalization,
    n_train: usize,
    n_val: usize,
}

pub fn make_windows(
    traj: &Trajectory,
    wf: usize,
    wb: usize,
    normalize: bool,
) -> Result<WindowDataset> {
    let len = traj.len();
    if len < wf + wb + 1 {
        return Err(DynamicsError::Contract(format!(
            "trajectory of length {len} is too short for wf={wf}, wb={wb}"
        )));
    }
    let count = len - wf - wb;
    let n_train = count * 8 / 10;
    let n_val = count * 9 / 10 - n_train;
    let normalization = if normalize {
        // Statistics over every state touched by a training window.
        let covered = (n_train.max(1) + wf + wb).min(len);
        Normalization::fit(&traj.slice(0, covered).states)
    } else {
        Normalization::identity(traj.dim())
    };
    Ok(WindowDataset {
        states: normalization.normalize(&traj.states),
        dt: traj.dt,
        wf,
        wb,
        normalization,
        n_train,
        n_val,
    })
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.states.rows() - self.wf - self.wb
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    /// Trajectory index of the anchor state of window `w`.
    pub fn center_index(&self, w: usize) -> usize {
        w + self.wb
    }

    /// The `wb + 1 + wf` states of window `w`.
    pub fn window(&self, w: usize) -> Matrix {
        let d = self.dim();
        let span = self.wb + 1 + self.wf;
        Matrix::from_raw(span, d, self.states.data()[w * d..(w + span) * d].to_vec())
    }

    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.n_train,
            Split::Validation => self.n_train..self.n_train + self.n_val,
            Split::Test => self.n_train + self.n_val..self.len(),
        }
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.split_range(split).collect()
    }

    /// States covered by training windows (the normalization sample).
    pub fn train_states(&self) -> Matrix {
        let end = (self.n_train.max(1) + self.wf + self.wb).min(self.states.rows());
        let d = self.dim();
        Matrix::from_raw(end, d, self.states.data()[..end * d].to_vec())
    }

    /// First trajectory index after the training/validation material;
    /// anchor of the first test window.
    pub fn test_start(&self) -> usize {
        self.center_index(self.split_range(Split::Test).start)
    }

    pub fn batch(&self, windows: &[usize]) -> Result<Batch> {
        if windows.is_empty() {
            return Err(DynamicsError::Contract("empty batch".into()));
        }
        if let Some(&w) = windows.iter().find(|&&w| w >= self.len()) {
            return Err(DynamicsError::Contract(format!(
                "window {w} out of range (dataset has {})",
                self.len()
            )));
        }
        let gather = |offset: isize| -> Matrix {
            let d = self.dim();
            let mut data = Vec::with_capacity(windows.len() * d);
            for &w in windows {
                let idx = (self.center_index(w) as isize + offset) as usize;
                data.extend_from_slice(self.states.row(idx));
            }
            Matrix::from_raw(windows.len(), d, data)
        };
        Ok(Batch {
            center: gather(0),
            future: (1..=self.wf as isize).map(gather).collect(),
            past: (1..=self.wb as isize).map(|i| gather(-i)).collect(),
        })
    }
}
