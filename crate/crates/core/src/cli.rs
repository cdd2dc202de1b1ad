//! Command-line front end: data generation, training, evaluation,
//! spectrum diagnostics and variant comparison.
//!
//! Exit codes: 0 success, 2 usage, 3 numeric failure, 4 artifact mismatch.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{make_windows, simulate, DynamicsError, OdeSpec, Trajectory};
use crate::evaluation::{
    self, compare_variants, comparison_csv, median_by_variant, predict_horizon, spectrum, EvalError, HorizonTruth,
};
use crate::koopman::{Dims, KaeModel, LossWeights, ModelError, Variant};
use crate::linalg::LinalgError;
use crate::training::{train, IsvdRefresh, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Artifact(String),
    #[error(transparent)]
    Clap(#[from] clap::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Artifact(_) => 4,
            CliError::Clap(e) => e.exit_code(),
        }
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Dimension(_) => CliError::Artifact(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::InvalidSpec(_) | DynamicsError::Contract(_) => CliError::Usage(e.to_string()),
            DynamicsError::Diverged { .. } => CliError::Numeric(e.to_string()),
            DynamicsError::Parse { .. } | DynamicsError::Io(_) => CliError::Artifact(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::UnsupportedVariant(_) => CliError::Usage(e.to_string()),
            ModelError::Diverged { .. } => CliError::Numeric(e.to_string()),
            ModelError::Linalg(inner) => inner.into(),
            ModelError::Autodiff(_) => CliError::Numeric(e.to_string()),
            ModelError::Dimension(_) | ModelError::Checkpoint(_) | ModelError::Io(_) => {
                CliError::Artifact(e.to_string())
            }
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Diverged { .. } => CliError::Numeric(e.to_string()),
            TrainError::Data(inner) => inner.into(),
            TrainError::Model(inner) => inner.into(),
            TrainError::Io(_) => CliError::Artifact(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Contract(_) => CliError::Usage(e.to_string()),
            EvalError::Model(inner) => inner.into(),
            EvalError::Linalg(inner) => inner.into(),
            EvalError::Data(inner) => inner.into(),
            EvalError::Io(_) => CliError::Artifact(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Artifact(format!("{}: {e}", path.display()))
}

/// Flat experiment configuration. Every key is optional; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mu: f64,
    pub omega: f64,
    pub amp: f64,
    pub lam: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub x0: [f64; 3],
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub w_id: f64,
    pub w_f: f64,
    pub w_b: f64,
    pub w_sv: f64,
    pub w_c: f64,
    pub wf: usize,
    pub wb: usize,
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub normalize: bool,
    pub isvd_refresh: IsvdRefresh,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ode = OdeSpec::default();
        let t = TrainConfig::default();
        Self {
            mu: ode.mu,
            omega: ode.omega,
            amp: ode.amp,
            lam: ode.lam,
            dt: ode.dt,
            n_steps: ode.n_steps,
            x0: ode.x0,
            variant: t.variant,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            w_id: t.weights.id,
            w_f: t.weights.f,
            w_b: t.weights.b,
            w_sv: t.weights.sv,
            w_c: t.weights.c,
            wf: t.wf,
            wb: t.wb,
            latent_dim: t.dims.m,
            hidden_width: t.dims.h,
            normalize: true,
            isvd_refresh: t.isvd_refresh,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            horizon: 1000,
            seeds: vec![0, 1, 2],
            variants: Variant::ALL.to_vec(),
            out_dir: PathBuf::from("runs"),
        }
    }
}

const SCHEMA: &[(&str, &str)] = &[
    ("mu", "ODE growth rate"),
    ("omega", "ODE angular frequency"),
    ("amp", "ODE cubic coupling A"),
    ("lam", "ODE slow-manifold relaxation rate"),
    ("dt", "sample spacing"),
    ("n_steps", "number of samples, including x0"),
    ("x0", "initial state"),
    ("variant", "vanilla | ckae | isvd | usvd"),
    ("epochs", "training epochs"),
    ("batch_size", "windows per optimizer step"),
    ("lr", "Adam learning rate"),
    ("w_id", "reconstruction weight"),
    ("w_f", "forward prediction weight"),
    ("w_b", "backward prediction weight"),
    ("w_sv", "singular value weight"),
    ("w_c", "consistency / unitarity weight"),
    ("wf", "forward window"),
    ("wb", "backward window"),
    ("latent_dim", "latent dimension M"),
    ("hidden_width", "hidden layer width h"),
    ("normalize", "per-dimension standardization from the training split"),
    ("isvd_refresh", "per-step | per-epoch"),
    ("seed", "master seed for initialization and shuffling"),
    ("checkpoint_every", "numbered checkpoint cadence in epochs, 0 disables"),
    ("horizon", "prediction horizon P"),
    ("seeds", "seeds used by compare"),
    ("variants", "variants used by compare"),
    ("out_dir", "default output directory"),
];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Documented TOML with every key at its current value.
    pub fn to_documented_toml(&self) -> String {
        let table = toml::Table::try_from(self).expect("config serializes");
        let mut s = String::new();
        for (key, doc) in SCHEMA {
            let value = &table[*key];
            let _ = writeln!(s, "# {doc}\n{key} = {value}");
        }
        s
    }

    pub fn ode(&self) -> OdeSpec {
        OdeSpec {
            mu: self.mu,
            omega: self.omega,
            amp: self.amp,
            lam: self.lam,
            dt: self.dt,
            n_steps: self.n_steps,
            x0: self.x0,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            variant: self.variant,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weights: LossWeights {
                id: self.w_id,
                f: self.w_f,
                b: self.w_b,
                sv: self.w_sv,
                c: self.w_c,
            },
            wf: self.wf,
            wb: self.wb,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            dims: Dims {
                n: 3,
                m: self.latent_dim,
                h: self.hidden_width,
            },
            isvd_refresh: self.isvd_refresh,
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

#[derive(Debug, Parser)]
#[command(name = "koopman-svd", version, about = "Koopman autoencoders with unrolled SVD operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML); defaults apply to missing keys
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the cylinder-wake system and write a trajectory CSV
    GenerateData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        steps: Option<u64>,
    },
    /// Train one variant
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Long-horizon prediction error of a checkpoint from the first test anchor
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        horizon: Option<u64>,
        /// Prediction CSV (default: prediction.csv next to the checkpoint)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail with exit 4 unless the checkpoint holds this variant
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Eigenvalues of the learned operator and its SVD factors
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Spectrum CSV (default: spectrum.csv next to the checkpoint)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score several variants over several seeds
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Option<Vec<Variant>>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        horizon: Option<u64>,
    },
    /// Print the effective configuration as documented TOML
    PrintConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn read_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    Trajectory::read_csv(path).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<KaeModel, CliError> {
    KaeModel::load(path).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map(|p| p.join(name)).unwrap_or_else(|| PathBuf::from(name))
}

/// Parses `args` (including the program name) and runs the command,
/// writing human-readable output to `out`.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if e.exit_code() == 0 => {
            let _ = write!(out, "{}", e.render());
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let mut say = |line: String| writeln!(out, "{line}").map_err(|e| CliError::Artifact(e.to_string()));

    match cli.command {
        Command::GenerateData { common, out: path, steps } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = steps {
                cfg.n_steps = n as usize;
            }
            let ode = cfg.ode();
            let traj = simulate(&ode)?;
            traj.write_csv(&path)?;
            let radius = ode.model().attractor_radius();
            let tail = traj.len() / 2;
            let dev = (tail..traj.len())
                .map(|i| {
                    let x = traj.state(i);
                    ((x[0] * x[0] + x[1] * x[1]).sqrt() - radius).abs() / radius
                })
                .fold(0.0, f64::max);
            say(format!(
                "wrote {} samples (dt = {}) to {}; attractor radius {radius:.6}, max relative deviation over the second half {dev:.3e}",
                traj.len(),
                traj.dt,
                path.display()
            ))?;
        }
        Command::Train {
            common,
            variant,
            data,
            out: dir,
            epochs,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let dir = dir.unwrap_or_else(|| cfg.out_dir.join(cfg.variant.name()));
            let traj = read_trajectory(&data)?;
            let tc = cfg.train_config();
            let ds = make_windows(&traj, tc.wf, tc.wb, cfg.normalize)?;
            std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            std::fs::write(dir.join("config.toml"), cfg.to_documented_toml()).map_err(|e| io_err(&dir, e))?;
            let outcome = train(&tc, &ds, Some(&dir))?;
            match outcome.logs.last() {
                Some(last) => say(format!(
                    "trained {} for {} epochs: total {:.6e}, v_sigma {:.6e}, val_total {:.6e}; checkpoint {}",
                    tc.variant,
                    last.epoch,
                    last.train.total,
                    last.train.v_sigma,
                    last.val.total,
                    dir.join("checkpoint.json").display()
                ))?,
                None => say(format!("wrote initial checkpoint {}", dir.join("checkpoint.json").display()))?,
            }
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            horizon,
            out: path,
            variant,
        } => {
            let cfg = load_config(&common)?;
            let model = load_checkpoint(&checkpoint)?;
            if let Some(v) = variant {
                if v != model.variant {
                    return Err(CliError::Artifact(format!(
                        "checkpoint holds a `{}` model, expected `{v}`",
                        model.variant
                    )));
                }
            }
            let traj = read_trajectory(&data)?;
            if traj.dim() != model.dims.n {
                return Err(CliError::Artifact(format!(
                    "data has {} state dimensions, checkpoint expects {}",
                    traj.dim(),
                    model.dims.n
                )));
            }
            let p = horizon.map(|h| h as usize).unwrap_or(cfg.horizon);
            let ds = make_windows(&traj, model.wf, model.wb, false)?;
            let truth = HorizonTruth::for_test_split(&traj, &cfg.ode(), &ds, p)?;
            let report = predict_horizon(&model, &truth, p)?;
            let path = path.unwrap_or_else(|| sibling(&checkpoint, "prediction.csv"));
            report.write_csv(&path)?;
            say(format!(
                "avg_err_{p} = {:.6e} (t0 = {}, {} steps, {})",
                report.average,
                report.t0,
                report.errors.len(),
                path.display()
            ))?;
            if let Some(tau) = report.diverged_at {
                return Err(CliError::Numeric(format!("prediction diverged at step {tau}")));
            }
        }
        Command::Spectrum {
            common: _,
            checkpoint,
            out: path,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let report = spectrum(&model)?;
            let path = path.unwrap_or_else(|| sibling(&checkpoint, "spectrum.csv"));
            report.write_csv(&path)?;
            say(format!(
                "max | |lambda| - 1 | = {:.6e} over {} eigenvalues of K ({})",
                report.max_deviation,
                report.k.len(),
                path.display()
            ))?;
        }
        Command::Compare {
            common,
            data,
            out: dir,
            epochs,
            seeds,
            variants,
            horizon,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(v) = variants {
                cfg.variants = v;
            }
            if let Some(h) = horizon {
                cfg.horizon = h as usize;
            }
            let dir = dir.unwrap_or_else(|| cfg.out_dir.clone());
            let traj = read_trajectory(&data)?;
            let base = cfg.train_config();
            let ds = make_windows(&traj, base.wf, base.wb, cfg.normalize)?;
            let truth = HorizonTruth::for_test_split(&traj, &cfg.ode(), &ds, cfg.horizon)?;
            let configs: Vec<TrainConfig> = cfg
                .variants
                .iter()
                .map(|&variant| TrainConfig { variant, ..base.clone() })
                .collect();
            let cells = compare_variants(
                &configs,
                &ds,
                &truth,
                cfg.horizon,
                &cfg.seeds,
                evaluation::worker_count(),
            )?;
            std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            let path = dir.join("comparison.csv");
            std::fs::write(&path, comparison_csv(&cells)).map_err(|e| io_err(&path, e))?;
            for cell in &cells {
                if let Err(msg) = &cell.outcome {
                    say(format!("{} seed {} failed: {msg}", cell.variant, cell.seed))?;
                }
            }
            for (v, med) in median_by_variant(&cells) {
                match med {
                    Some(m) => say(format!("{v}: median avg_err_{} = {m:.6e}", cfg.horizon))?,
                    None => say(format!("{v}: every run failed"))?,
                }
            }
            say(format!("wrote {}", path.display()))?;
        }
        Command::PrintConfig { common } => {
            let cfg = load_config(&common)?;
            write!(out, "{}", cfg.to_documented_toml()).map_err(|e| CliError::Artifact(e.to_string()))?;
        }
    }
    Ok(())
}

/// Entry point for the binary: runs and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    match run(args, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            e.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_toml_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_documented_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), SCHEMA.len());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("epochs = 3\nlearning_rate = 0.1\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let ok = ExperimentConfig::from_toml("epochs = 3\n").unwrap();
        assert_eq!(ok.epochs, 3);
        assert_eq!(ok.lr, 1e-2);
    }

    #[test]
    fn defaults_follow_the_reference_parameters() {
        let t = ExperimentConfig::default().train_config();
        assert_eq!(t, TrainConfig::default());
        assert_eq!(ExperimentConfig::default().ode(), OdeSpec::default());
    }
}
