//! Loss terms and per-variant objectives.
//!
//! All matrix norms are Frobenius. Prediction losses average over the
//! mini-batch and the horizon; each sample contributes its squared
//! Euclidean error.
//!
//! | term        | definition                                         |
//! |-------------|----------------------------------------------------|
//! | `r_t`       | mean ‖x − D(E(x))‖²                                |
//! | `f_tw`      | mean over τ ≤ W_f of ‖x(t+τ) − D(K^τ E(x(t)))‖²    |
//! | `b_tw`      | mean over i ≤ W_b of ‖x(t−i) − D(G^i E(x(t)))‖²    |
//! | `c1`        | ‖GK − I‖²                                          |
//! | `v_sigma`   | ‖I − Σ_f‖² + ‖I − Σ_b‖²                            |
//! | `s_unitary` | S(U_f, V_f) + S(U_b, V_b), S(U,V) = ‖UᵀU−I‖² + ‖VᵀV−I‖² |
//! | `c_cross`   | ‖V_f V_bᵀ − I‖² + ‖U_f U_bᵀ − I‖²                  |
//!
//! ISVD keeps `K` and `G` dense, so its spectral terms are read off the
//! cached SVDs. The singular-value term reaches `K` and `G` through the
//! projection penalty `‖K − U_K V_Kᵀ‖² + ‖G − U_G V_Gᵀ‖²`, whose value is
//! `‖Σ_K − I‖² + ‖Σ_G − I‖²` and whose gradient at the cached point equals
//! the gradient of that sum through the SVD. `s_unitary` and `c_cross`
//! are constants of the cached factors.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::dynamics::Batch;
use crate::koopman::{BoundModel, BoundOperator, KaeModel, ModelError, Result, Variant};
use crate::linalg::{matmul_unchecked, Matrix};

/// Component values of one objective evaluation. Inactive terms are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub r_t: f64,
    pub f_tw: f64,
    pub b_tw: f64,
    pub c1: f64,
    pub v_sigma: f64,
    pub s_unitary: f64,
    pub c_cross: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const COMPONENTS: [&'static str; 8] = [
        "r_t",
        "f_tw",
        "b_tw",
        "c1",
        "v_sigma",
        "s_unitary",
        "c_cross",
        "total",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.r_t,
            self.f_tw,
            self.b_tw,
            self.c1,
            self.v_sigma,
            self.s_unitary,
            self.c_cross,
            self.total,
        ]
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::COMPONENTS
            .iter()
            .zip(self.values())
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| *n)
    }

    /// Weighted mean of several breakdowns (weights are sample counts).
    pub fn weighted_mean(parts: &[(LossBreakdown, usize)]) -> LossBreakdown {
        let n: usize = parts.iter().map(|(_, c)| c).sum();
        let mut acc = [0.0; 8];
        for (b, c) in parts {
            for (a, v) in acc.iter_mut().zip(b.values()) {
                *a += v * *c as f64;
            }
        }
        let acc = acc.map(|a| a / n.max(1) as f64);
        LossBreakdown {
            r_t: acc[0],
            f_tw: acc[1],
            b_tw: acc[2],
            c1: acc[3],
            v_sigma: acc[4],
            s_unitary: acc[5],
            c_cross: acc[6],
            total: acc[7],
        }
    }
}

/// Graph nodes of every active loss term plus the weighted total.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub r_t: Var,
    pub f_tw: Var,
    pub b_tw: Option<Var>,
    pub c1: Option<Var>,
    pub v_sigma: Option<Var>,
    pub s_unitary: Option<Var>,
    pub c_cross: Option<Var>,
    pub total: Var,
}

impl Objective {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let opt = |v: Option<Var>| v.map_or(0.0, |v| g.scalar(v));
        LossBreakdown {
            r_t: g.scalar(self.r_t),
            f_tw: g.scalar(self.f_tw),
            b_tw: opt(self.b_tw),
            c1: opt(self.c1),
            v_sigma: opt(self.v_sigma),
            s_unitary: opt(self.s_unitary),
            c_cross: opt(self.c_cross),
            total: g.scalar(self.total),
        }
    }
}

fn identity(g: &mut Graph, n: usize) -> Var {
    g.constant(Matrix::identity(n))
}

/// `(1/B) ‖x − D(z)‖_F²` for a batch of rows.
fn decoded_error(g: &mut Graph, m: &BoundModel, z: Var, target: Var) -> Result<Var> {
    let xhat = m.decode(g, z)?;
    let d = g.sub(target, xhat)?;
    let sq = g.frobenius_norm_sq(d);
    let b = g.shape(target).0 as f64;
    Ok(g.scale(sq, 1.0 / b))
}

/// Reconstruction error `R_T` of the batch anchors, given their latents.
pub fn reconstruction_term(g: &mut Graph, m: &BoundModel, x: Var, z: Var) -> Result<Var> {
    decoded_error(g, m, z, x)
}

fn rollout_term(
    g: &mut Graph,
    m: &BoundModel,
    z0: Var,
    targets: &[Var],
    forward: bool,
) -> Result<Var> {
    if targets.is_empty() {
        return Err(ModelError::Config(
            "prediction horizon must be at least 1".into(),
        ));
    }
    let mut z = z0;
    let mut acc: Option<Var> = None;
    for &target in targets {
        z = if forward {
            m.step_forward(g, z)?
        } else {
            m.step_backward(g, z)?
        };
        let e = decoded_error(g, m, z, target)?;
        acc = Some(match acc {
            Some(a) => g.add(a, e)?,
            None => e,
        });
    }
    Ok(g.scale(acc.expect("nonempty"), 1.0 / targets.len() as f64))
}

/// `F_{T,W}`: forward multi-step prediction error.
pub fn forward_term(g: &mut Graph, m: &BoundModel, z0: Var, future: &[Var]) -> Result<Var> {
    rollout_term(g, m, z0, future, true)
}

/// `B_{T,W}`: backward multi-step prediction error through `G`.
pub fn backward_term(g: &mut Graph, m: &BoundModel, z0: Var, past: &[Var]) -> Result<Var> {
    if m.g.is_none() {
        return Err(ModelError::UnsupportedVariant(m.variant));
    }
    rollout_term(g, m, z0, past, false)
}

/// `‖GK − I‖_F²`.
pub fn c1_term(g: &mut Graph, k: Var, gm: Var) -> Result<Var> {
    let n = g.shape(k).0;
    let gk = g.matmul(gm, k)?;
    let i = identity(g, n);
    let d = g.sub(gk, i)?;
    Ok(g.frobenius_norm_sq(d))
}

/// `‖1 − s_f‖² + ‖1 − s_b‖²` for singular-value vectors.
pub fn sigma_term(g: &mut Graph, sf: Var, sb: Var) -> Result<Var> {
    let mut parts = Vec::with_capacity(2);
    for s in [sf, sb] {
        let (r, c) = g.shape(s);
        let ones = g.constant(Matrix::filled(r, c, 1.0));
        let d = g.sub(ones, s)?;
        parts.push(g.frobenius_norm_sq(d));
    }
    Ok(g.add(parts[0], parts[1])?)
}

fn gram_defect(g: &mut Graph, a: Var, b: Var, transpose_first: bool) -> Result<Var> {
    let n = g.shape(a).0;
    let prod = if transpose_first {
        let at = g.transpose(a);
        g.matmul(at, b)?
    } else {
        let bt = g.transpose(b);
        g.matmul(a, bt)?
    };
    let i = identity(g, n);
    let d = g.sub(prod, i)?;
    Ok(g.frobenius_norm_sq(d))
}

/// `‖UᵀU − I‖² + ‖VᵀV − I‖²`.
pub fn unitarity_term(g: &mut Graph, u: Var, v: Var) -> Result<Var> {
    let a = gram_defect(g, u, u, true)?;
    let b = gram_defect(g, v, v, true)?;
    Ok(g.add(a, b)?)
}

/// `‖V_f V_bᵀ − I‖² + ‖U_f U_bᵀ − I‖²`.
pub fn cross_term(g: &mut Graph, uf: Var, ub: Var, vf: Var, vb: Var) -> Result<Var> {
    let a = gram_defect(g, vf, vb, false)?;
    let b = gram_defect(g, uf, ub, false)?;
    Ok(g.add(a, b)?)
}

fn weighted_sum(g: &mut Graph, terms: &[(f64, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(w, v) in terms {
        let s = g.scale(v, w);
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    Ok(acc.unwrap_or_else(|| g.constant(Matrix::zeros(1, 1))))
}

fn gram_defect_value(a: &Matrix, b: &Matrix, transpose_first: bool) -> f64 {
    let prod = if transpose_first {
        matmul_unchecked(&a.transpose(), b)
    } else {
        matmul_unchecked(a, &b.transpose())
    };
    prod.sub(&Matrix::identity(a.rows()))
        .expect("square")
        .frobenius_norm_sq()
}

/// Records the variant's objective on `batch` into `g`.
pub fn build_objective(
    g: &mut Graph,
    model: &KaeModel,
    m: &BoundModel,
    batch: &Batch,
) -> Result<Objective> {
    let w = model.weights;
    w.validate()?;
    if batch.future.is_empty() {
        return Err(ModelError::Config(
            "batch has no forward targets (wf = 0)".into(),
        ));
    }
    let x = g.constant(batch.center.clone());
    let z = m.encode(g, x)?;
    let r_t = reconstruction_term(g, m, x, z)?;
    let future: Vec<Var> = batch.future.iter().map(|t| g.constant(t.clone())).collect();
    let f_tw = forward_term(g, m, z, &future)?;
    let mut terms = vec![(w.id, r_t), (w.f, f_tw)];
    let mut obj = Objective {
        r_t,
        f_tw,
        b_tw: None,
        c1: None,
        v_sigma: None,
        s_unitary: None,
        c_cross: None,
        total: r_t,
    };

    if model.variant.has_backward() {
        if batch.past.is_empty() {
            return Err(ModelError::Config(
                "batch has no backward targets (wb = 0)".into(),
            ));
        }
        let past: Vec<Var> = batch.past.iter().map(|t| g.constant(t.clone())).collect();
        let b_tw = backward_term(g, m, z, &past)?;
        terms.push((w.b, b_tw));
        obj.b_tw = Some(b_tw);
    }

    match (model.variant, m.operator) {
        (Variant::Vanilla, _) => {}
        (Variant::Ckae, _) => {
            let c1 = c1_term(g, m.k, m.g.expect("ckae has G"))?;
            terms.push((w.c, c1));
            obj.c1 = Some(c1);
        }
        (Variant::Usvd, BoundOperator::Factored(f)) => {
            let v = sigma_term(g, f.sf, f.sb)?;
            let sfw = unitarity_term(g, f.uf, f.vf)?;
            let sbw = unitarity_term(g, f.ub, f.vb)?;
            let s = g.add(sfw, sbw)?;
            let c = cross_term(g, f.uf, f.ub, f.vf, f.vb)?;
            terms.extend([(w.sv, v), (w.c, s), (w.c, c)]);
            obj.v_sigma = Some(v);
            obj.s_unitary = Some(s);
            obj.c_cross = Some(c);
        }
        (Variant::Isvd, _) => {
            let cache = model
                .isvd_cache
                .as_ref()
                .ok_or_else(|| ModelError::Config("ISVD model has no SVD cache".into()))?;
            let gm = m.g.expect("isvd has G");
            // Projection targets: singular values clamped to 1.
            let mut proj = Vec::with_capacity(2);
            for (op, svd) in [(m.k, &cache.k), (gm, &cache.g)] {
                let target = g.constant(matmul_unchecked(&svd.u, &svd.v.transpose()));
                let d = g.sub(op, target)?;
                proj.push(g.frobenius_norm_sq(d));
            }
            let v = g.add(proj[0], proj[1])?;
            let (uf, vf, ub, vb) = cache.factors();
            let (uf, vf, ub, vb) = (&uf, &vf, &ub, &vb);
            let s_val = gram_defect_value(uf, uf, true)
                + gram_defect_value(vf, vf, true)
                + gram_defect_value(ub, ub, true)
                + gram_defect_value(vb, vb, true);
            let c_val = gram_defect_value(vf, vb, false) + gram_defect_value(uf, ub, false);
            let s = g.constant(Matrix::filled(1, 1, s_val));
            let c = g.constant(Matrix::filled(1, 1, c_val));
            terms.extend([(w.sv, v), (w.c, s), (w.c, c)]);
            obj.v_sigma = Some(v);
            obj.s_unitary = Some(s);
            obj.c_cross = Some(c);
        }
        (Variant::Usvd, BoundOperator::Dense { .. }) => unreachable!("usvd binds factors"),
    }
    obj.total = weighted_sum(g, &terms)?;
    Ok(obj)
}

/// Evaluates every term of the model's objective on one batch.
pub fn aggregate(model: &KaeModel, batch: &Batch) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let m = model.bind(&mut g)?;
    let obj = build_objective(&mut g, model, &m, batch)?;
    Ok(obj.breakdown(&g))
}

fn with_latents<T>(
    model: &KaeModel,
    center: &Matrix,
    f: impl FnOnce(&mut Graph, &BoundModel, Var, Var) -> Result<T>,
) -> Result<T> {
    if center.cols() != model.dims.n {
        return Err(ModelError::Dimension(format!(
            "batch width {} does not match N = {}",
            center.cols(),
            model.dims.n
        )));
    }
    let mut g = Graph::new();
    let m = model.bind(&mut g)?;
    let x = g.constant(center.clone());
    let z = m.encode(&mut g, x)?;
    f(&mut g, &m, x, z)
}

/// `R_T` on a batch of states.
pub fn reconstruction_loss(model: &KaeModel, states: &Matrix) -> Result<f64> {
    with_latents(model, states, |g, m, x, z| {
        let v = reconstruction_term(g, m, x, z)?;
        Ok(g.scalar(v))
    })
}

/// `F_{T,W}` over the first `wf` forward targets of the batch.
pub fn forward_loss(model: &KaeModel, batch: &Batch, wf: usize) -> Result<f64> {
    if wf == 0 || wf > batch.future.len() {
        return Err(ModelError::Config(format!(
            "wf = {wf} needs 1..={} forward targets",
            batch.future.len()
        )));
    }
    with_latents(model, &batch.center, |g, m, _, z| {
        let t: Vec<Var> = batch.future[..wf]
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        let v = forward_term(g, m, z, &t)?;
        Ok(g.scalar(v))
    })
}

/// `B_{T,W}` over the first `wb` backward targets of the batch.
pub fn backward_loss(model: &KaeModel, batch: &Batch, wb: usize) -> Result<f64> {
    if !model.variant.has_backward() {
        return Err(ModelError::UnsupportedVariant(model.variant));
    }
    if wb == 0 || wb > batch.past.len() {
        return Err(ModelError::Config(format!(
            "wb = {wb} needs 1..={} backward targets",
            batch.past.len()
        )));
    }
    with_latents(model, &batch.center, |g, m, _, z| {
        let t: Vec<Var> = batch.past[..wb]
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        let v = backward_term(g, m, z, &t)?;
        Ok(g.scalar(v))
    })
}

fn eval_scalar(build: impl FnOnce(&mut Graph) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let v = build(&mut g)?;
    Ok(g.scalar(v))
}

fn require_same_square(mats: &[&Matrix]) -> Result<()> {
    let n = mats[0].rows();
    if mats.iter().any(|m| m.rows() != n || m.cols() != n) {
        return Err(ModelError::Dimension(
            "expected square matrices of the same size".into(),
        ));
    }
    Ok(())
}

pub fn consistency_c1(k: &Matrix, gm: &Matrix) -> Result<f64> {
    require_same_square(&[k, gm])?;
    eval_scalar(|g| {
        let k = g.constant(k.clone());
        let gm = g.constant(gm.clone());
        c1_term(g, k, gm)
    })
}

pub fn sigma_loss(sf: &[f64], sb: &[f64]) -> Result<f64> {
    if sf.len() != sb.len() || sf.is_empty() {
        return Err(ModelError::Dimension(
            "singular-value vectors must have equal nonzero length".into(),
        ));
    }
    eval_scalar(|g| {
        let a = g.constant(Matrix::new(1, sf.len(), sf.to_vec())?);
        let b = g.constant(Matrix::new(1, sb.len(), sb.to_vec())?);
        sigma_term(g, a, b)
    })
}

pub fn unitarity_loss(u: &Matrix, v: &Matrix) -> Result<f64> {
    require_same_square(&[u, v])?;
    eval_scalar(|g| {
        let u = g.constant(u.clone());
        let v = g.constant(v.clone());
        unitarity_term(g, u, v)
    })
}

pub fn cross_consistency(uf: &Matrix, ub: &Matrix, vf: &Matrix, vb: &Matrix) -> Result<f64> {
    require_same_square(&[uf, ub, vf, vb])?;
    eval_scalar(|g| {
        let (uf, ub, vf, vb) = (
            g.constant(uf.clone()),
            g.constant(ub.clone()),
            g.constant(vf.clone()),
            g.constant(vb.clone()),
        );
        cross_term(g, uf, ub, vf, vb)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_windows, simulate, OdeSpec};
    use crate::koopman::{Dims, LossWeights};
    use crate::linalg::{invert, qr_orthogonal};

    fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
    }

    fn sample_batch(wf: usize, wb: usize) -> Batch {
        let traj = simulate(&OdeSpec {
            n_steps: 200,
            ..OdeSpec::default()
        })
        .unwrap();
        let ds = make_windows(&traj, wf, wb, true).unwrap();
        ds.batch(&[0, 17, 33, 101]).unwrap()
    }

    #[test]
    fn c1_values() {
        let k = Matrix::new(2, 2, vec![2.0, 1.0, 0.5, 3.0]).unwrap();
        assert!(consistency_c1(&k, &invert(&k).unwrap()).unwrap() < 1e-28);
        let k2 = Matrix::identity(3).scale(2.0);
        assert_eq!(consistency_c1(&k2, &Matrix::identity(3)).unwrap(), 3.0);
        assert!(consistency_c1(&k2, &Matrix::identity(2)).is_err());
    }

    #[test]
    fn sigma_values() {
        assert_eq!(sigma_loss(&[1.0; 4], &[1.0; 4]).unwrap(), 0.0);
        let v = sigma_loss(&[1.1, 0.9], &[1.0, 1.0]).unwrap();
        assert!((v - 0.02).abs() < 1e-15);
        assert!(sigma_loss(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn unitarity_and_cross_values() {
        let q = qr_orthogonal(
            &Matrix::new(3, 3, vec![1.0, 2.0, 0.0, -1.0, 0.5, 3.0, 0.2, 0.1, 1.0]).unwrap(),
        )
        .unwrap();
        assert!(unitarity_loss(&q, &q).unwrap() < 1e-20);
        assert_eq!(
            unitarity_loss(&Matrix::identity(2).scale(2.0), &Matrix::identity(2)).unwrap(),
            18.0
        );
        assert!(cross_consistency(&q, &q, &q, &q).unwrap() < 1e-20);
        let i = Matrix::identity(2);
        let r = qr_orthogonal(&Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert!((cross_consistency(&i, &i.scale(-1.0), &r, &r).unwrap() - 8.0).abs() < 1e-14);
    }

    #[test]
    fn decoder_emitting_zero_gives_mean_square_norm() {
        let mut m = KaeModel::new(
            Variant::Vanilla,
            Dims::default(),
            LossWeights::default(),
            1,
            0,
            1,
        )
        .unwrap();
        m.set_param("dec.W3", Matrix::zeros(16, 3)).unwrap();
        let x = Matrix::new(2, 3, vec![1.0, 2.0, 2.0, 0.0, 3.0, 4.0]).unwrap();
        assert_eq!(reconstruction_loss(&m, &x).unwrap(), (9.0 + 25.0) / 2.0);
    }

    #[test]
    fn reconstruction_matches_direct_computation() {
        let m = KaeModel::new(
            Variant::Usvd,
            Dims::default(),
            LossWeights::default(),
            2,
            2,
            5,
        )
        .unwrap();
        let b = sample_batch(2, 2);
        let xt = m.decode(&m.encode(&b.center).unwrap()).unwrap();
        let direct = (0..b.size())
            .map(|i| sq_dist(b.center.row(i), xt.row(i)))
            .sum::<f64>()
            / b.size() as f64;
        assert!((reconstruction_loss(&m, &b.center).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn forward_loss_matches_brute_force_loop() {
        let m = KaeModel::new(
            Variant::Ckae,
            Dims::default(),
            LossWeights::default(),
            3,
            3,
            9,
        )
        .unwrap();
        let b = sample_batch(3, 3);
        let k = m.koopman_matrix().unwrap();
        let gm = m.backward_matrix().unwrap();
        let mut fwd = 0.0;
        let mut bwd = 0.0;
        for s in 0..b.size() {
            let x = Matrix::new(1, 3, b.center.row(s).to_vec()).unwrap();
            let z0 = m.encode(&x).unwrap().row(0).to_vec();
            for (op, targets, acc) in [(&k, &b.future, &mut fwd), (&gm, &b.past, &mut bwd)] {
                let mut z = z0.clone();
                for t in targets.iter() {
                    z = op.matvec(&z).unwrap();
                    let xhat = m.decode(&Matrix::new(1, 8, z.clone()).unwrap()).unwrap();
                    *acc += sq_dist(t.row(s), xhat.row(0));
                }
            }
        }
        let norm = (b.size() * 3) as f64;
        assert!((forward_loss(&m, &b, 3).unwrap() - fwd / norm).abs() < 1e-12);
        assert!((backward_loss(&m, &b, 3).unwrap() - bwd / norm).abs() < 1e-12);
    }

    #[test]
    fn backward_loss_rejects_vanilla() {
        let m = KaeModel::new(
            Variant::Vanilla,
            Dims::default(),
            LossWeights::default(),
            2,
            2,
            1,
        )
        .unwrap();
        assert!(matches!(
            backward_loss(&m, &sample_batch(2, 2), 2),
            Err(ModelError::UnsupportedVariant(Variant::Vanilla))
        ));
    }

    #[test]
    fn zero_weights_give_zero_total() {
        let zero = LossWeights {
            id: 0.0,
            f: 0.0,
            b: 0.0,
            sv: 0.0,
            c: 0.0,
        };
        for v in Variant::ALL {
            let m = KaeModel::new(v, Dims::default(), zero, 2, 2, 3).unwrap();
            assert_eq!(aggregate(&m, &sample_batch(2, 2)).unwrap().total, 0.0);
        }
    }

    #[test]
    fn usvd_at_init_has_no_spectral_penalty() {
        let m = KaeModel::new(
            Variant::Usvd,
            Dims::default(),
            LossWeights::default(),
            2,
            2,
            3,
        )
        .unwrap();
        let l = aggregate(&m, &sample_batch(2, 2)).unwrap();
        assert!(l.v_sigma < 1e-20 && l.s_unitary < 1e-20 && l.c_cross < 1e-20);
        let w = m.weights;
        let expected = w.id * l.r_t + w.f * l.f_tw + w.b * l.b_tw;
        assert!((l.total - expected).abs() < 1e-12);
        assert_eq!(l.c1, 0.0);
    }

    #[test]
    fn negative_weight_is_config_error() {
        let mut m = KaeModel::new(
            Variant::Ckae,
            Dims::default(),
            LossWeights::default(),
            2,
            2,
            3,
        )
        .unwrap();
        m.weights.b = -1.0;
        assert!(matches!(
            aggregate(&m, &sample_batch(2, 2)),
            Err(ModelError::Config(_))
        ));
    }
}
