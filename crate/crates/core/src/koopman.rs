//! Koopman autoencoders: tanh MLP encoder/decoder around a latent linear
//! operator, in four parameterizations.
//!
//! * [`Variant::Vanilla`]: dense forward matrix `K`.
//! * [`Variant::Ckae`]: dense `K` and backward matrix `G`.
//! * [`Variant::Isvd`]: dense `K`, `G`, with their SVDs recomputed outside
//!   the graph once per training round.
//! * [`Variant::Usvd`]: `K = U_f diag(s_f) V_fᵀ` and
//!   `G = V_b diag(1 / max(s_b, eps)) U_bᵀ`, with the factors themselves
//!   trainable.
//!
//! States are batched as rows, so a latent step is `Z ← Z Kᵀ`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, ParamSet, Var};
use crate::dynamics::Normalization;
use crate::linalg::{self, LinalgError, Matrix, SvdResult};

/// Clamp applied to `s_b` before inversion.
pub const SIGMA_B_EPS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("latent rollout diverged at step {step}")]
    Diverged { step: usize },
    #[error("variant `{0}` has no backward operator")]
    UnsupportedVariant(Variant),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vanilla,
    Ckae,
    Isvd,
    Usvd,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Vanilla,
        Variant::Ckae,
        Variant::Isvd,
        Variant::Usvd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Ckae => "ckae",
            Variant::Isvd => "isvd",
            Variant::Usvd => "usvd",
        }
    }

    pub fn has_backward(self) -> bool {
        !matches!(self, Variant::Vanilla)
    }

    pub fn has_svd_terms(self) -> bool {
        matches!(self, Variant::Isvd | Variant::Usvd)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                format!("unknown variant `{s}` (expected one of vanilla, ckae, isvd, usvd)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub h: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self { n: 3, m: 8, h: 16 }
    }
}

/// Loss weights `(ω_id, ω_f, ω_b, ω_sv, ω_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub id: f64,
    pub f: f64,
    pub b: f64,
    pub sv: f64,
    pub c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            id: 1.0,
            f: 1.0,
            b: 1e-2,
            sv: 1e-4,
            c: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.id, self.f, self.b, self.sv, self.c];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(ModelError::Config(format!(
                "loss weights must be finite and nonnegative, got {all:?}"
            )));
        }
        Ok(())
    }

    /// Zeroes the weights of terms the variant does not have.
    pub fn for_variant(self, variant: Variant) -> Self {
        match variant {
            Variant::Vanilla => Self {
                b: 0.0,
                sv: 0.0,
                c: 0.0,
                ..self
            },
            Variant::Ckae => Self { sv: 0.0, ..self },
            Variant::Isvd | Variant::Usvd => self,
        }
    }
}

/// Cached SVDs of the dense `K` and `G` of an ISVD model.
#[derive(Debug, Clone, PartialEq)]
pub struct IsvdCache {
    pub k: SvdResult,
    pub g: SvdResult,
}

impl IsvdCache {
    /// `(U_f, V_f, U_b, V_b)` read off the cached SVDs.
    ///
    /// `G = V_b Σ_b⁻¹ U_bᵀ`, so `V_b` comes from `G`'s left vectors and
    /// `U_b` from its right ones. Inverting reverses the singular value
    /// order, so `G`'s triplets are taken last-to-first, and each pair of
    /// columns is flipped if that brings it closer to the `K` factors
    /// (the flip leaves `G` unchanged).
    pub fn factors(&self) -> (Matrix, Matrix, Matrix, Matrix) {
        let m = self.k.u.cols();
        let (uf, vf) = (self.k.u.clone(), self.k.v.clone());
        let mut ub = Matrix::zeros(m, m);
        let mut vb = Matrix::zeros(m, m);
        for j in 0..m {
            let src = m - 1 - j;
            let dot: f64 = (0..m)
                .map(|i| self.g.v[(i, src)] * uf[(i, j)] + self.g.u[(i, src)] * vf[(i, j)])
                .sum();
            let sign = if dot < 0.0 { -1.0 } else { 1.0 };
            for i in 0..m {
                ub[(i, j)] = sign * self.g.v[(i, src)];
                vb[(i, j)] = sign * self.g.u[(i, src)];
            }
        }
        (uf, vf, ub, vb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KaeModel {
    pub variant: Variant,
    pub dims: Dims,
    pub weights: LossWeights,
    pub wf: usize,
    pub wb: usize,
    pub params: ParamSet,
    pub normalization: Normalization,
    pub isvd_cache: Option<IsvdCache>,
}

const LAYERS: usize = 3;

fn layer_shapes(dims: Dims) -> ([(usize, usize); LAYERS], [(usize, usize); LAYERS]) {
    let Dims { n, m, h } = dims;
    ([(n, h), (h, h), (h, m)], [(m, h), (h, h), (h, n)])
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_raw(
        fan_in,
        fan_out,
        (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-a..a))
            .collect(),
    )
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_raw(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Result<Matrix> {
    Ok(linalg::qr_orthogonal(&gaussian(rng, n, n, 1.0))?)
}

impl KaeModel {
    /// Fresh model with deterministic initialization from `seed`.
    ///
    /// USVD starts from shared factors (`U_b = U_f`, `V_b = V_f`) and unit
    /// singular values, so `K` is orthogonal and `GK = I` at step zero.
    pub fn new(
        variant: Variant,
        dims: Dims,
        weights: LossWeights,
        wf: usize,
        wb: usize,
        seed: u64,
    ) -> Result<Self> {
        if dims.n == 0 || dims.m == 0 || dims.h == 0 {
            return Err(ModelError::Config(format!(
                "dimensions must be positive: {dims:?}"
            )));
        }
        weights.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let (enc, dec) = layer_shapes(dims);
        for (prefix, shapes) in [("enc", enc), ("dec", dec)] {
            for (i, &(fi, fo)) in shapes.iter().enumerate() {
                params.push(format!("{prefix}.W{}", i + 1), xavier(&mut rng, fi, fo));
                params.push(format!("{prefix}.b{}", i + 1), Matrix::zeros(1, fo));
            }
        }
        let m = dims.m;
        let near_identity = |rng: &mut ChaCha8Rng| {
            Matrix::identity(m)
                .add(&gaussian(rng, m, m, 0.01))
                .expect("same shape")
        };
        match variant {
            Variant::Vanilla => {
                params.push("op.K", near_identity(&mut rng));
            }
            Variant::Ckae | Variant::Isvd => {
                params.push("op.K", near_identity(&mut rng));
                params.push("op.G", near_identity(&mut rng));
            }
            Variant::Usvd => {
                let u = random_orthogonal(&mut rng, m)?;
                let v = random_orthogonal(&mut rng, m)?;
                params.push("op.Uf", u.clone());
                params.push("op.Vf", v.clone());
                params.push("op.sf", Matrix::filled(1, m, 1.0));
                params.push("op.Ub", u);
                params.push("op.Vb", v);
                params.push("op.sb", Matrix::filled(1, m, 1.0));
            }
        }
        let mut model = Self {
            variant,
            dims,
            weights: weights.for_variant(variant),
            wf,
            wb,
            params,
            normalization: Normalization::identity(dims.n),
            isvd_cache: None,
        };
        if variant == Variant::Isvd {
            model.refresh_isvd()?;
        }
        Ok(model)
    }

    pub fn param(&self, name: &str) -> Result<&Matrix> {
        self.params
            .get(name)
            .map(|t| &t.value)
            .ok_or_else(|| ModelError::Config(format!("model has no parameter `{name}`")))
    }

    pub fn set_param(&mut self, name: &str, value: Matrix) -> Result<()> {
        let t = self
            .params
            .get_mut(name)
            .ok_or_else(|| ModelError::Config(format!("model has no parameter `{name}`")))?;
        if t.value.shape() != value.shape() {
            return Err(ModelError::Dimension(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                t.value.shape(),
                value.shape()
            )));
        }
        t.value = value;
        if self.variant == Variant::Isvd && name.starts_with("op.") {
            self.refresh_isvd()?;
        }
        Ok(())
    }

    /// Recomputes the SVD caches of `K` and `G` from the current values.
    pub fn refresh_isvd(&mut self) -> Result<()> {
        if self.variant != Variant::Isvd {
            return Err(ModelError::Config(format!(
                "refresh_isvd called on a `{}` model",
                self.variant
            )));
        }
        let k = linalg::svd(self.param("op.K")?)?;
        let g = linalg::svd(self.param("op.G")?)?;
        self.isvd_cache = Some(IsvdCache { k, g });
        Ok(())
    }

    /// Binds every parameter into `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<BoundModel> {
        let mut leaf = |name: &str| -> Result<Var> {
            let idx = self
                .params
                .index_of(name)
                .ok_or_else(|| ModelError::Config(format!("model has no parameter `{name}`")))?;
            Ok(g.param(&self.params, idx))
        };
        let mut enc = Vec::with_capacity(LAYERS);
        let mut dec = Vec::with_capacity(LAYERS);
        for i in 1..=LAYERS {
            enc.push((leaf(&format!("enc.W{i}"))?, leaf(&format!("enc.b{i}"))?));
        }
        for i in 1..=LAYERS {
            dec.push((leaf(&format!("dec.W{i}"))?, leaf(&format!("dec.b{i}"))?));
        }
        let operator = match self.variant {
            Variant::Vanilla => BoundOperator::Dense {
                k: leaf("op.K")?,
                g: None,
            },
            Variant::Ckae | Variant::Isvd => BoundOperator::Dense {
                k: leaf("op.K")?,
                g: Some(leaf("op.G")?),
            },
            Variant::Usvd => BoundOperator::Factored(UsvdFactors {
                uf: leaf("op.Uf")?,
                vf: leaf("op.Vf")?,
                sf: leaf("op.sf")?,
                ub: leaf("op.Ub")?,
                vb: leaf("op.Vb")?,
                sb: leaf("op.sb")?,
            }),
        };
        let (k, g_op) = match operator {
            BoundOperator::Dense { k, g } => (k, g),
            BoundOperator::Factored(f) => {
                let (k, gm) = materialize_usvd(g, &f)?;
                (k, Some(gm))
            }
        };
        let kt = g.transpose(k);
        let gt = g_op.map(|x| g.transpose(x));
        Ok(BoundModel {
            variant: self.variant,
            dims: self.dims,
            enc,
            dec,
            operator,
            k,
            kt,
            g: g_op,
            gt,
        })
    }

    /// Materialized forward operator `K`.
    pub fn koopman_matrix(&self) -> Result<Matrix> {
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        Ok(g.value(b.k).clone())
    }

    /// Materialized backward operator `G`.
    pub fn backward_matrix(&self) -> Result<Matrix> {
        if !self.variant.has_backward() {
            return Err(ModelError::UnsupportedVariant(self.variant));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        Ok(g.value(b.g.expect("variant has G")).clone())
    }

    fn check_width(&self, x: &Matrix, width: usize, what: &str) -> Result<()> {
        if x.cols() != width {
            return Err(ModelError::Dimension(format!(
                "{what} must have width {width}, got {}",
                x.cols()
            )));
        }
        if !x.all_finite() {
            return Err(ModelError::Dimension(format!(
                "{what} contains non-finite values"
            )));
        }
        Ok(())
    }

    /// Encodes a batch of states (rows) into latents.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x, self.dims.n, "encoder input")?;
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let xv = g.constant(x.clone());
        let z = b.encode(&mut g, xv)?;
        Ok(g.value(z).clone())
    }

    /// Decodes a batch of latents (rows) into states.
    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.check_width(z, self.dims.m, "decoder input")?;
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let zv = g.constant(z.clone());
        let x = b.decode(&mut g, zv)?;
        Ok(g.value(x).clone())
    }

    /// `z(t+1) .. z(t+tau)` from `z(t)` by repeated multiplication with `K`.
    pub fn rollout_forward(&self, z0: &[f64], tau: usize) -> Result<Vec<Vec<f64>>> {
        rollout(&self.koopman_matrix()?, z0, tau)
    }

    /// `z(t-1) .. z(t-tau)` from `z(t)` by repeated multiplication with `G`.
    pub fn rollout_backward(&self, z0: &[f64], tau: usize) -> Result<Vec<Vec<f64>>> {
        rollout(&self.backward_matrix()?, z0, tau)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let cp = Checkpoint {
            variant: self.variant,
            dims: self.dims,
            weights: self.weights,
            wf: self.wf,
            wb: self.wb,
            normalization: self.normalization.clone(),
            params: self
                .params
                .iter()
                .map(|(name, t)| NamedArray {
                    name: name.to_string(),
                    shape: [t.value.rows(), t.value.cols()],
                    data: t.value.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&cp).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cp: Checkpoint =
            serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut model = Self::new(cp.variant, cp.dims, cp.weights, cp.wf, cp.wb, 0)?;
        if cp.normalization.dim() != cp.dims.n {
            return Err(ModelError::Checkpoint(
                "normalization width does not match N".into(),
            ));
        }
        model.normalization = cp.normalization;
        model.weights = cp.weights;
        let expected: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        let found: Vec<&str> = cp.params.iter().map(|a| a.name.as_str()).collect();
        if expected.len() != found.len() || expected.iter().zip(&found).any(|(a, b)| a != b) {
            return Err(ModelError::Checkpoint(format!(
                "parameter names {found:?} do not match variant `{}` (expected {expected:?})",
                cp.variant
            )));
        }
        for arr in cp.params {
            let m = Matrix::new(arr.shape[0], arr.shape[1], arr.data)
                .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", arr.name)))?;
            let t = model.params.get_mut(&arr.name).expect("name checked");
            if t.value.shape() != m.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "{} has shape {:?}, expected {:?}",
                    arr.name,
                    m.shape(),
                    t.value.shape()
                )));
            }
            t.value = m;
        }
        if model.variant == Variant::Isvd {
            model.refresh_isvd()?;
        }
        Ok(model)
    }
}

fn rollout(k: &Matrix, z0: &[f64], tau: usize) -> Result<Vec<Vec<f64>>> {
    if tau == 0 {
        return Err(ModelError::Config(
            "rollout horizon must be at least 1".into(),
        ));
    }
    let mut out = Vec::with_capacity(tau);
    let mut z = z0.to_vec();
    for step in 1..=tau {
        z = k.matvec(&z)?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Diverged { step });
        }
        out.push(z.clone());
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    variant: Variant,
    dims: Dims,
    weights: LossWeights,
    wf: usize,
    wb: usize,
    normalization: Normalization,
    params: Vec<NamedArray>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedArray {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct UsvdFactors {
    pub uf: Var,
    pub vf: Var,
    pub sf: Var,
    pub ub: Var,
    pub vb: Var,
    pub sb: Var,
}

#[derive(Debug, Clone, Copy)]
pub enum BoundOperator {
    Dense { k: Var, g: Option<Var> },
    Factored(UsvdFactors),
}

/// `K = U_f diag(s_f) V_fᵀ`, `G = V_b diag(1/max(s_b, eps)) U_bᵀ`.
fn materialize_usvd(g: &mut Graph, f: &UsvdFactors) -> Result<(Var, Var)> {
    let sf = g.diag_from_vector(f.sf)?;
    let vft = g.transpose(f.vf);
    let us = g.matmul(f.uf, sf)?;
    let k = g.matmul(us, vft)?;

    let inv = g.reciprocal_clamped(f.sb, SIGMA_B_EPS)?;
    let sb = g.diag_from_vector(inv)?;
    let ubt = g.transpose(f.ub);
    let vs = g.matmul(f.vb, sb)?;
    let gm = g.matmul(vs, ubt)?;
    Ok((k, gm))
}

/// A model's parameters bound into one [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub variant: Variant,
    pub dims: Dims,
    enc: Vec<(Var, Var)>,
    dec: Vec<(Var, Var)>,
    pub operator: BoundOperator,
    pub k: Var,
    kt: Var,
    pub g: Option<Var>,
    gt: Option<Var>,
}

impl BoundModel {
    fn mlp(g: &mut Graph, layers: &[(Var, Var)], x: Var) -> Result<Var> {
        let batch = g.shape(x).0;
        let ones = g.constant(Matrix::filled(batch, 1, 1.0));
        let mut h = x;
        for (i, &(w, b)) in layers.iter().enumerate() {
            let lin = g.matmul(h, w)?;
            let bias = g.matmul(ones, b)?;
            h = g.add(lin, bias)?;
            if i + 1 < layers.len() {
                h = g.tanh(h)?;
            }
        }
        Ok(h)
    }

    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<Var> {
        Self::mlp(g, &self.enc, x)
    }

    pub fn decode(&self, g: &mut Graph, z: Var) -> Result<Var> {
        Self::mlp(g, &self.dec, z)
    }

    /// One forward latent step on a batch of row latents.
    pub fn step_forward(&self, g: &mut Graph, z: Var) -> Result<Var> {
        Ok(g.matmul(z, self.kt)?)
    }

    pub fn step_backward(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let gt = self
            .gt
            .ok_or(ModelError::UnsupportedVariant(self.variant))?;
        Ok(g.matmul(z, gt)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(variant: Variant) -> KaeModel {
        KaeModel::new(variant, Dims::default(), LossWeights::default(), 3, 3, 42).unwrap()
    }

    #[test]
    fn parameter_names_follow_schema() {
        let names: Vec<String> = model(Variant::Usvd)
            .params
            .iter()
            .map(|(n, _)| n.to_string())
            .collect();
        assert_eq!(&names[..2], &["enc.W1", "enc.b1"]);
        assert_eq!(
            &names[12..],
            &["op.Uf", "op.Vf", "op.sf", "op.Ub", "op.Vb", "op.sb"]
        );
        let ck: Vec<String> = model(Variant::Ckae)
            .params
            .iter()
            .map(|(n, _)| n.to_string())
            .collect();
        assert_eq!(&ck[12..], &["op.K", "op.G"]);
    }

    #[test]
    fn weights_zeroed_per_variant() {
        let w = model(Variant::Vanilla).weights;
        assert_eq!((w.b, w.sv, w.c), (0.0, 0.0, 0.0));
        assert_eq!(model(Variant::Ckae).weights.sv, 0.0);
        assert_eq!(model(Variant::Usvd).weights, LossWeights::default());
        let bad = LossWeights {
            c: -1.0,
            ..LossWeights::default()
        };
        assert!(KaeModel::new(Variant::Usvd, Dims::default(), bad, 1, 1, 0).is_err());
    }

    #[test]
    fn zero_final_encoder_layer_outputs_bias() {
        let mut m = model(Variant::Vanilla);
        m.set_param("enc.W3", Matrix::zeros(16, 8)).unwrap();
        let bias = Matrix::new(1, 8, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
        m.set_param("enc.b3", bias.clone()).unwrap();
        let x = Matrix::new(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 7.0]).unwrap();
        let z = m.encode(&x).unwrap();
        assert_eq!(z.row(0), bias.data());
        assert_eq!(z.row(1), bias.data());
    }

    #[test]
    fn encode_preserves_batch_order() {
        let m = model(Variant::Ckae);
        let x = Matrix::new(3, 3, (0..9).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let z = m.encode(&x).unwrap();
        assert_eq!(z.shape(), (3, 8));
        for r in 0..3 {
            let single = Matrix::new(1, 3, x.row(r).to_vec()).unwrap();
            assert_eq!(m.encode(&single).unwrap().row(0), z.row(r));
        }
        assert!(m.encode(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn rollout_with_scaled_identity() {
        let mut m = model(Variant::Vanilla);
        m.set_param("op.K", Matrix::identity(8)).unwrap();
        let z0: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        assert!(m.rollout_forward(&z0, 5).unwrap().iter().all(|z| *z == z0));
        m.set_param("op.K", Matrix::identity(8).scale(0.5)).unwrap();
        let z3 = &m.rollout_forward(&z0, 3).unwrap()[2];
        let expected: Vec<f64> = z0.iter().map(|v| v * 0.125).collect();
        assert_eq!(*z3, expected);
        assert!(m.rollout_forward(&z0, 0).is_err());
    }

    #[test]
    fn backward_rollout_requires_g() {
        let m = model(Variant::Vanilla);
        assert!(matches!(
            m.rollout_backward(&[0.0; 8], 1),
            Err(ModelError::UnsupportedVariant(Variant::Vanilla))
        ));
        let mut c = model(Variant::Ckae);
        c.set_param("op.G", Matrix::identity(8)).unwrap();
        let z0 = vec![1.0; 8];
        assert!(c.rollout_backward(&z0, 4).unwrap().iter().all(|z| *z == z0));
    }

    #[test]
    fn exact_inverse_undoes_forward_rollout() {
        let mut c = model(Variant::Ckae);
        let k = c.param("op.K").unwrap().clone();
        c.set_param("op.G", linalg::invert(&k).unwrap()).unwrap();
        let z0: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let fwd = c.rollout_forward(&z0, 6).unwrap();
        let back = c.rollout_backward(fwd.last().unwrap(), 6).unwrap();
        let err: f64 = back[5]
            .iter()
            .zip(&z0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8);
    }

    #[test]
    fn usvd_materialization_matches_dense_product() {
        let mut m = model(Variant::Usvd);
        m.set_param(
            "op.sf",
            Matrix::new(1, 8, (0..8).map(|i| 0.8 + 0.05 * i as f64).collect()).unwrap(),
        )
        .unwrap();
        let u = m.param("op.Uf").unwrap().clone();
        let v = m.param("op.Vf").unwrap().clone();
        let s = m.param("op.sf").unwrap().data().to_vec();
        let dense = u
            .matmul(&Matrix::from_diag(&s))
            .unwrap()
            .matmul(&v.transpose())
            .unwrap();
        let k = m.koopman_matrix().unwrap();
        assert!(k
            .sub(&dense)
            .unwrap()
            .data()
            .iter()
            .all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn usvd_orthogonal_rollout_preserves_norm() {
        let mut m = model(Variant::Usvd);
        let q = m.param("op.Uf").unwrap().clone();
        m.set_param("op.Vf", q).unwrap();
        let z0: Vec<f64> = (0..8).map(|i| 0.3 * i as f64 - 1.0).collect();
        let n0 = z0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let zs = m.rollout_forward(&z0, 1000).unwrap();
        let n = zs[999].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(((n - n0) / n0).abs() < 1e-6);
    }

    #[test]
    fn usvd_shared_factors_give_inverse() {
        let m = model(Variant::Usvd);
        let gk = m
            .backward_matrix()
            .unwrap()
            .matmul(&m.koopman_matrix().unwrap())
            .unwrap();
        assert!(gk.sub(&Matrix::identity(8)).unwrap().frobenius_norm() < 1e-8);
    }

    #[test]
    fn isvd_cache_tracks_k() {
        let mut m = model(Variant::Isvd);
        m.set_param("op.K", Matrix::identity(8)).unwrap();
        assert_eq!(m.isvd_cache.as_ref().unwrap().k.sigma, vec![1.0; 8]);
        m.set_param("op.K", Matrix::identity(8).scale(2.0)).unwrap();
        let sigma = &m.isvd_cache.as_ref().unwrap().k.sigma;
        assert_eq!(*sigma, vec![2.0; 8]);
        let v: f64 = sigma.iter().map(|s| (s - 1.0).powi(2)).sum();
        assert_eq!(v, 8.0);
        assert!(model(Variant::Ckae).refresh_isvd().is_err());
    }

    #[test]
    fn isvd_factors_pair_inverse_operators() {
        let mut m = model(Variant::Isvd);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = Matrix::new(
            8,
            8,
            (0..64)
                .map(|i| if i % 9 == 0 { 1.5 } else { 0.0 } + 0.3 * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
        .unwrap();
        m.set_param("op.G", linalg::invert(&k).unwrap()).unwrap();
        m.set_param("op.K", k).unwrap();
        let (uf, vf, ub, vb) = m.isvd_cache.as_ref().unwrap().factors();
        for (a, b) in [(&vf, &vb), (&uf, &ub)] {
            let d = a
                .matmul(&b.transpose())
                .unwrap()
                .sub(&Matrix::identity(8))
                .unwrap();
            assert!(d.frobenius_norm() < 1e-8, "{}", d.frobenius_norm());
        }
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        for variant in Variant::ALL {
            let m = model(variant);
            let back = KaeModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m);
        }
        let json = model(Variant::Ckae).to_json().unwrap();
        let tampered = json.replace("\"ckae\"", "\"usvd\"");
        assert!(matches!(
            KaeModel::from_json(&tampered),
            Err(ModelError::Checkpoint(_))
        ));
        assert!(matches!(
            KaeModel::from_json("{}"),
            Err(ModelError::Checkpoint(_))
        ));
    }
}
