//! Mini-batch training with Adam, per-epoch logging and checkpointing,
//! and analytic operation counts.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Adam, AutodiffError, Graph};
use crate::dynamics::{DynamicsError, Split, WindowDataset};
use crate::koopman::{Dims, KaeModel, LossWeights, ModelError, Variant};
use crate::losses::{build_objective, LossBreakdown};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DynamicsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "training diverged at epoch {epoch}, step {step}: non-finite {term}{}",
        last_checkpoint.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default()
    )]
    Diverged {
        epoch: usize,
        step: usize,
        term: String,
        last_checkpoint: Option<PathBuf>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// When an ISVD model re-decomposes `K` and `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IsvdRefresh {
    PerStep,
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub wf: usize,
    pub wb: usize,
    pub seed: u64,
    /// Write a numbered checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub dims: Dims,
    pub isvd_refresh: IsvdRefresh,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Usvd,
            epochs: 1000,
            batch_size: 16,
            lr: 1e-2,
            weights: LossWeights::default(),
            wf: 20,
            wb: 20,
            seed: 0,
            checkpoint_every: 100,
            dims: Dims::default(),
            isvd_refresh: IsvdRefresh::PerStep,
        }
    }
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(TrainError::Config(format!(
                "lr must be finite and nonnegative, got {}",
                self.lr
            )));
        }
        if self.wf == 0 {
            return Err(TrainError::Config("wf must be at least 1".into()));
        }
        if self.variant.has_backward() && self.wb == 0 {
            return Err(TrainError::Config(format!(
                "variant `{}` needs wb >= 1",
                self.variant
            )));
        }
        self.weights.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub wall_ms: f64,
    pub ops_cumulative: u64,
}

pub const EPOCH_CSV_HEADER: &str =
    "epoch,r_t,f_tw,b_tw,c1,v_sigma,s_unitary,c_cross,total,val_total,ops_cumulative,wall_ms";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let mut s = format!("{}", self.epoch);
        for v in self.train.values() {
            let _ = write!(s, ",{v:.17e}");
        }
        let _ = write!(
            s,
            ",{:.17e},{},{:.3}",
            self.val.total, self.ops_cumulative, self.wall_ms
        );
        s
    }
}

/// Analytic multiply–add counts for one training step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub encode: u64,
    pub reconstruct: u64,
    pub forward_rollout: u64,
    pub forward_decode: u64,
    pub backward_rollout: u64,
    pub backward_decode: u64,
    /// Materializing `K`/`G` from factors and the operator-only loss terms.
    pub operator: u64,
    /// SVD work outside the graph (ISVD only).
    pub svd: u64,
}

/// Cost multiplier of a forward plus reverse pass over matmul-dominated
/// graphs: each product `AB` needs `dC Bᵀ` and `Aᵀ dC` on the way back.
pub const TRAINING_PASS_FACTOR: u64 = 3;

/// Jacobi sweeps assumed per SVD in [`count_ops`]; the median observed for
/// near-orthogonal 8x8 operators is 5-6.
pub const JACOBI_SWEEP_ESTIMATE: u64 = 6;

impl OpCount {
    /// Encoder, forward rollout and forward decodes.
    pub fn prediction_path(&self) -> u64 {
        self.encode + self.forward_rollout + self.forward_decode
    }

    /// Multiply–adds of one forward evaluation of the objective.
    pub fn graph_forward(&self) -> u64 {
        self.encode
            + self.reconstruct
            + self.forward_rollout
            + self.forward_decode
            + self.backward_rollout
            + self.backward_decode
            + self.operator
    }

    /// Forward and reverse pass plus any work outside the graph.
    pub fn per_step(&self) -> u64 {
        TRAINING_PASS_FACTOR * self.graph_forward() + self.svd
    }
}

/// Architecture description for operation counting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub n: usize,
    pub m: usize,
    pub hidden: Vec<usize>,
}

impl From<Dims> for Architecture {
    fn from(d: Dims) -> Self {
        Self {
            n: d.n,
            m: d.m,
            hidden: vec![d.h, d.h],
        }
    }
}

fn mlp_cost(widths: &[usize]) -> u64 {
    widths.windows(2).map(|w| (w[0] * w[1]) as u64).sum()
}

/// Multiply–adds of one one-sided Jacobi SVD of an `m x m` matrix:
/// per column pair three dot products plus two column rotations of the
/// working matrix and of `V`, then the final column normalization.
pub fn jacobi_svd_cost(m: usize, sweeps: u64) -> u64 {
    let m = m as u64;
    let pairs = m * (m - 1) / 2;
    sweeps * pairs * (3 * m + 4 * m + 4 * m) + m * m
}

pub fn count_ops(
    variant: Variant,
    arch: &Architecture,
    batch: usize,
    wf: usize,
    wb: usize,
) -> OpCount {
    let b = batch as u64;
    let m = arch.m as u64;
    let m3 = m * m * m;
    let enc_widths: Vec<usize> = std::iter::once(arch.n)
        .chain(arch.hidden.iter().copied())
        .chain(std::iter::once(arch.m))
        .collect();
    let dec_widths: Vec<usize> = enc_widths.iter().rev().copied().collect();
    let enc = b * mlp_cost(&enc_widths);
    let dec = b * mlp_cost(&dec_widths);
    let step = b * m * m;
    let (wf, wb) = (wf as u64, wb as u64);

    let mut c = OpCount {
        encode: enc,
        reconstruct: dec,
        forward_rollout: wf * step,
        forward_decode: wf * dec,
        ..OpCount::default()
    };
    if variant.has_backward() {
        c.backward_rollout = wb * step;
        c.backward_decode = wb * dec;
    }
    match variant {
        Variant::Vanilla => {}
        // GK
        Variant::Ckae => c.operator = m3,
        Variant::Usvd => {
            // U diag(s) Vᵀ for K and G, four Gram products for S, two for C.
            c.operator = 2 * (m * m + m3) + 4 * m3 + 2 * m3;
        }
        Variant::Isvd => {
            // Projection residuals K - target, G - target (no products in graph).
            c.operator = 0;
            // Two SVDs, two U Vᵀ projection targets, S and C on the cached factors.
            c.svd = 2 * jacobi_svd_cost(arch.m, JACOBI_SWEEP_ESTIMATE) + 2 * m3 + 6 * m3;
        }
    }
    c
}

/// Everything a caller may want back from a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: KaeModel,
    pub logs: Vec<EpochLog>,
    pub final_checkpoint: Option<PathBuf>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Mean objective over a split, evaluated in fixed-size chunks.
pub fn evaluate_split(
    model: &KaeModel,
    dataset: &WindowDataset,
    split: Split,
) -> Result<LossBreakdown> {
    let idx = dataset.split_indices(split);
    if idx.is_empty() {
        return Ok(LossBreakdown::default());
    }
    let mut parts = Vec::new();
    for chunk in idx.chunks(256) {
        let batch = dataset.batch(chunk)?;
        parts.push((crate::losses::aggregate(model, &batch)?, chunk.len()));
    }
    Ok(LossBreakdown::weighted_mean(&parts))
}

fn write_checkpoint(model: &KaeModel, dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    model.save(&path)?;
    Ok(path)
}

/// Trains a fresh model on the training split of `dataset`.
///
/// With `out_dir`, writes `checkpoint.json` (initial, then final), numbered
/// checkpoints every `checkpoint_every` epochs and appends one row per
/// epoch to `epochs.csv`.
pub fn train(
    config: &TrainConfig,
    dataset: &WindowDataset,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.wf < config.wf || dataset.wb < config.wb {
        return Err(TrainError::Config(format!(
            "dataset windows (wf={}, wb={}) are shorter than the configured horizons (wf={}, wb={})",
            dataset.wf, dataset.wb, config.wf, config.wb
        )));
    }
    if dataset.dim() != config.dims.n {
        return Err(TrainError::Config(format!(
            "dataset has {} state dimensions, model expects {}",
            dataset.dim(),
            config.dims.n
        )));
    }
    let train_idx = dataset.split_indices(Split::Train);
    if train_idx.is_empty() && config.epochs > 0 {
        return Err(TrainError::Config("training split is empty".into()));
    }

    let mut model = KaeModel::new(
        config.variant,
        config.dims,
        config.weights,
        config.wf,
        config.wb,
        config.seed,
    )?;
    model.normalization = dataset.normalization.clone();
    let mut opt = Adam::new(&model.params, config.lr);

    let mut csv: Option<File> = None;
    let mut last_checkpoint = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        last_checkpoint = Some(write_checkpoint(&model, dir, "checkpoint.json")?);
        let mut f = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(dir.join("epochs.csv"))?;
        writeln!(f, "{EPOCH_CSV_HEADER}")?;
        csv = Some(f);
    }

    let ops = count_ops(
        config.variant,
        &Architecture::from(config.dims),
        config.batch_size,
        config.wf,
        config.wb,
    );
    let per_step_no_svd = ops.per_step() - ops.svd;
    let mut ops_cumulative = 0u64;
    let mut logs = Vec::with_capacity(config.epochs);
    let started = Instant::now();
    let trim = |b: &crate::dynamics::Batch| crate::dynamics::Batch {
        center: b.center.clone(),
        future: b.future[..config.wf].to_vec(),
        past: b.past[..config.wb].to_vec(),
    };

    for epoch in 1..=config.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut epoch_rng(config.seed, epoch));
        if config.variant == Variant::Isvd && config.isvd_refresh == IsvdRefresh::PerEpoch {
            model.refresh_isvd()?;
            ops_cumulative += ops.svd;
        }
        let mut parts = Vec::with_capacity(order.len() / config.batch_size + 1);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            if config.variant == Variant::Isvd && config.isvd_refresh == IsvdRefresh::PerStep {
                model.refresh_isvd()?;
                ops_cumulative += ops.svd;
            }
            let batch = trim(&dataset.batch(chunk)?);
            let mut g = Graph::new();
            let bound = model.bind(&mut g)?;
            let obj = build_objective(&mut g, &model, &bound, &batch)?;
            let breakdown = obj.breakdown(&g);
            if let Some(term) = breakdown.first_non_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    term: term.to_string(),
                    last_checkpoint,
                });
            }
            g.backward(obj.total).map_err(ModelError::from)?;
            model.params.zero_grad();
            g.accumulate_into(&mut model.params);
            match opt.step(&mut model.params) {
                Ok(()) => {}
                Err(AutodiffError::NonFiniteGradient { name }) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        step,
                        term: format!("gradient of {name}"),
                        last_checkpoint,
                    })
                }
                Err(e) => return Err(ModelError::from(e).into()),
            }
            ops_cumulative += per_step_no_svd;
            parts.push((breakdown, chunk.len()));
        }
        if config.variant == Variant::Isvd {
            // Keep the cache consistent with the parameters for evaluation.
            model.refresh_isvd()?;
        }
        let val = evaluate_split(&model, dataset, Split::Validation)?;
        let log = EpochLog {
            epoch,
            train: LossBreakdown::weighted_mean(&parts),
            val,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            ops_cumulative,
        };
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", log.csv_row())?;
        }
        logs.push(log);
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                last_checkpoint = Some(write_checkpoint(
                    &model,
                    dir,
                    &format!("checkpoint_epoch_{epoch:04}.json"),
                )?);
            }
        }
    }

    let final_checkpoint = match out_dir {
        Some(dir) => Some(write_checkpoint(&model, dir, "checkpoint.json")?),
        None => None,
    };
    Ok(TrainOutcome {
        model,
        logs,
        final_checkpoint,
    })
}

/// Centered moving average with window `w` (shrinking at the edges).
pub fn smooth(values: &[f64], w: usize) -> Vec<f64> {
    let half = w / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + w - half).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_windows, simulate, OdeSpec};

    fn small_dataset(wf: usize, wb: usize) -> WindowDataset {
        let traj = simulate(&OdeSpec {
            n_steps: 120,
            ..OdeSpec::default()
        })
        .unwrap();
        make_windows(&traj, wf, wb, true).unwrap()
    }

    #[test]
    fn defaults_match_the_reference_table() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.lr, 1e-2);
        assert_eq!((c.wf, c.wb), (20, 20));
        let w = c.weights;
        assert_eq!([w.id, w.f, w.b, w.sv, w.c], [1.0, 1.0, 1e-2, 1e-4, 1.0]);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let ds = small_dataset(2, 2);
        let config = TrainConfig {
            epochs: 0,
            wf: 2,
            wb: 2,
            ..TrainConfig::default()
        };
        let out = train(&config, &ds, None).unwrap();
        assert!(out.logs.is_empty());
        let mut fresh = KaeModel::new(Variant::Usvd, config.dims, config.weights, 2, 2, 0).unwrap();
        fresh.normalization = ds.normalization.clone();
        assert_eq!(out.model, fresh);
    }

    #[test]
    fn config_errors() {
        let ds = small_dataset(2, 2);
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&bad, &ds, None), Err(TrainError::Config(_))));
        let too_long = TrainConfig {
            wf: 5,
            wb: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&too_long, &ds, None),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn divergence_names_the_term() {
        let ds = small_dataset(2, 2);
        let config = TrainConfig {
            variant: Variant::Vanilla,
            epochs: 2,
            wf: 2,
            wb: 2,
            weights: LossWeights {
                f: f64::MAX,
                ..LossWeights::default()
            },
            ..TrainConfig::default()
        };
        match train(&config, &ds, None) {
            Err(TrainError::Diverged {
                epoch, step, term, ..
            }) => {
                assert_eq!((epoch, step), (1, 0));
                assert_eq!(term, "total");
            }
            other => panic!("expected divergence, got {:?}", other.map(|o| o.logs.len())),
        }
    }

    #[test]
    fn vanilla_op_count_matches_linear_formula() {
        let arch = Architecture {
            n: 4,
            m: 4,
            hidden: vec![],
        };
        let c = count_ops(Variant::Vanilla, &arch, 16, 1, 0);
        assert_eq!(c.prediction_path(), 16 * (2 * 4 * 4 + 4 * 4));
    }

    #[test]
    fn op_count_ordering() {
        let arch = Architecture::from(Dims::default());
        let per = |v| count_ops(v, &arch, 16, 20, 20).per_step();
        assert!(per(Variant::Usvd) > per(Variant::Ckae));
        assert!(per(Variant::Ckae) > per(Variant::Vanilla));
        assert!(per(Variant::Isvd) > per(Variant::Usvd));
    }

    #[test]
    fn smoothing_preserves_constants() {
        assert_eq!(smooth(&[2.0; 7], 3), vec![2.0; 7]);
        let s = smooth(&[0.0, 3.0, 0.0], 3);
        assert_eq!(s, vec![1.5, 1.0, 1.5]);
    }

    #[test]
    fn epoch_csv_row_has_all_columns() {
        let log = EpochLog {
            epoch: 3,
            train: LossBreakdown::default(),
            val: LossBreakdown::default(),
            wall_ms: 1.0,
            ops_cumulative: 7,
        };
        assert_eq!(
            log.csv_row().split(',').count(),
            EPOCH_CSV_HEADER.split(',').count()
        );
    }
}
