#![allow(dead_code)]

use koopman_svd::autodiff::{Graph, Var};
use koopman_svd::dynamics::{integrate, simulate, Batch, CylinderWake, OdeSpec};
use koopman_svd::koopman::{Dims, KaeModel, LossWeights, Variant};
use koopman_svd::linalg::{self, Matrix};
use koopman_svd::losses::build_objective;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_INSTANCES: usize = 20;
const FD_STEP: f64 = 1e-6;
const REL_FLOOR: f64 = 1e-6;

/// Outcome of one family of checks: the worst value of its metric.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub instances: usize,
    pub worst: f64,
}

impl Check {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst.is_finite() && self.worst < tol
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

fn perturbed(m: &Matrix, idx: usize, h: f64) -> Matrix {
    let mut d = m.data().to_vec();
    d[idx] += h;
    Matrix::new(m.rows(), m.cols(), d).unwrap()
}

type OpBuilder = fn(&mut Graph, &[Var], &mut ChaCha8Rng) -> Var;

struct OpCase {
    name: &'static str,
    /// Input shapes from a random size triple.
    shapes: fn(usize, usize, usize) -> Vec<(usize, usize)>,
    /// Maps a raw Gaussian input entry into the op's well-behaved domain.
    domain: fn(f64) -> f64,
    build: OpBuilder,
}

fn id(x: f64) -> f64 {
    x
}

fn away_from_zero(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        x.signum() * 1e-2 + x
    } else {
        x
    }
}

fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            shapes: |r, k, c| vec![(r, k), (k, c)],
            domain: id,
            build: |g, v, _| g.matmul(v[0], v[1]).unwrap(),
        },
        OpCase {
            name: "add",
            shapes: |r, c, _| vec![(r, c), (r, c)],
            domain: id,
            build: |g, v, _| g.add(v[0], v[1]).unwrap(),
        },
        OpCase {
            name: "sub",
            shapes: |r, c, _| vec![(r, c), (r, c)],
            domain: id,
            build: |g, v, _| g.sub(v[0], v[1]).unwrap(),
        },
        OpCase {
            name: "scale",
            shapes: |r, c, _| vec![(r, c)],
            domain: id,
            build: |g, v, rng| {
                let s = rng.gen_range(-3.0..3.0);
                g.scale(v[0], s)
            },
        },
        OpCase {
            name: "elementwise_mul",
            shapes: |r, c, _| vec![(r, c), (r, c)],
            domain: id,
            build: |g, v, _| g.mul(v[0], v[1]).unwrap(),
        },
        OpCase {
            name: "tanh",
            shapes: |r, c, _| vec![(r, c)],
            domain: |x| 1.5 * x,
            build: |g, v, _| g.tanh(v[0]).unwrap(),
        },
        OpCase {
            name: "relu",
            shapes: |r, c, _| vec![(r, c)],
            domain: away_from_zero,
            build: |g, v, _| g.relu(v[0]).unwrap(),
        },
        OpCase {
            name: "transpose",
            shapes: |r, c, _| vec![(r, c)],
            domain: id,
            build: |g, v, _| g.transpose(v[0]),
        },
        OpCase {
            name: "diag_from_vector",
            shapes: |_, c, _| vec![(1, c)],
            domain: id,
            build: |g, v, _| g.diag_from_vector(v[0]).unwrap(),
        },
        OpCase {
            name: "frobenius_norm_sq",
            shapes: |r, c, _| vec![(r, c)],
            domain: id,
            build: |g, v, _| g.frobenius_norm_sq(v[0]),
        },
        OpCase {
            name: "mean",
            shapes: |r, c, _| vec![(r, c)],
            domain: id,
            build: |g, v, _| g.mean(v[0]),
        },
        OpCase {
            name: "sum",
            shapes: |r, c, _| vec![(r, c)],
            domain: id,
            build: |g, v, _| g.sum(v[0]),
        },
        OpCase {
            name: "reciprocal_clamped",
            shapes: |r, c, _| vec![(r, c)],
            // Mostly in (0.3, 2.3); entries below -1 exercise the clamp.
            domain: |x| if x < -1.0 { x } else { 0.3 + 0.5 * x.abs() },
            build: |g, v, _| g.reciprocal_clamped(v[0], 1e-3).unwrap(),
        },
    ]
}

/// Scalar `sum(op(inputs) ∘ W)` for a fixed random weighting `W`.
fn op_scalar(case: &OpCase, inputs: &[Matrix], seed: u64) -> (Graph, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.variable(m.clone())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (case.build)(&mut g, &vars, &mut rng);
    let (r, c) = g.shape(out);
    let w = g.constant(gaussian(&mut rng, r, c, 1.0));
    let prod = g.mul(out, w).unwrap();
    let loss = g.sum(prod);
    (g, vars, loss)
}

/// Central differences against reverse mode for every operator.
pub fn operator_gradient_suite(instances: usize) -> Vec<Check> {
    op_cases()
        .iter()
        .enumerate()
        .map(|(ci, case)| {
            let mut worst: f64 = 0.0;
            for inst in 0..instances {
                let seed = 1000 * ci as u64 + inst as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (a, b, c) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6));
                let inputs: Vec<Matrix> = (case.shapes)(a, b, c)
                    .into_iter()
                    .map(|(r, c)| {
                        let m = gaussian(&mut rng, r, c, 1.0);
                        Matrix::new(r, c, m.data().iter().map(|&x| (case.domain)(x)).collect()).unwrap()
                    })
                    .collect();
                let build_seed = seed ^ 0x5eed;
                let (mut g, vars, loss) = op_scalar(case, &inputs, build_seed);
                g.backward(loss).unwrap();
                for (k, input) in inputs.iter().enumerate() {
                    let analytic = g.grad(vars[k]).unwrap_or_else(|| Matrix::zeros(input.rows(), input.cols()));
                    for idx in 0..input.data().len() {
                        let h = FD_STEP * input.data()[idx].abs().max(1.0);
                        let eval = |m: Matrix| {
                            let mut ins = inputs.clone();
                            ins[k] = m;
                            let (g, _, loss) = op_scalar(case, &ins, build_seed);
                            g.scalar(loss)
                        };
                        let fd = (eval(perturbed(input, idx, h)) - eval(perturbed(input, idx, -h))) / (2.0 * h);
                        worst = worst.max(rel_err(analytic.data()[idx], fd));
                    }
                }
            }
            Check {
                name: case.name.to_string(),
                instances,
                worst,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    R,
    F,
    B,
    C1,
    V,
    S,
    C,
    Total,
}

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::R => "R_T",
            Term::F => "F_TW",
            Term::B => "B_TW",
            Term::C1 => "C1",
            Term::V => "V",
            Term::S => "S",
            Term::C => "C",
            Term::Total => "L",
        }
    }
}

pub const GRAD_DIMS: Dims = Dims { n: 3, m: 4, h: 5 };
const GRAD_WINDOW: usize = 3;

/// Small model with every parameter pushed away from its structured
/// initialization so the regularizers are non-trivial.
pub fn random_model(variant: Variant, seed: u64) -> KaeModel {
    let mut m = KaeModel::new(variant, GRAD_DIMS, LossWeights::default(), GRAD_WINDOW, GRAD_WINDOW, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let names: Vec<String> = m.params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let cur = m.param(&name).unwrap().clone();
        let next = if name == "op.sf" || name == "op.sb" {
            let d = (0..cur.data().len()).map(|_| rng.gen_range(0.5..1.5)).collect();
            Matrix::new(cur.rows(), cur.cols(), d).unwrap()
        } else {
            cur.add(&gaussian(&mut rng, cur.rows(), cur.cols(), 0.3)).unwrap()
        };
        m.set_param(&name, next).unwrap();
    }
    m
}

pub fn random_batch(seed: u64, size: usize) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba7c);
    let n = GRAD_DIMS.n;
    Batch {
        center: gaussian(&mut rng, size, n, 0.8),
        future: (0..GRAD_WINDOW).map(|_| gaussian(&mut rng, size, n, 0.8)).collect(),
        past: (0..GRAD_WINDOW).map(|_| gaussian(&mut rng, size, n, 0.8)).collect(),
    }
}

fn term_var(obj: &koopman_svd::losses::Objective, term: Term) -> Var {
    match term {
        Term::R => Some(obj.r_t),
        Term::F => Some(obj.f_tw),
        Term::B => obj.b_tw,
        Term::C1 => obj.c1,
        Term::V => obj.v_sigma,
        Term::S => obj.s_unitary,
        Term::C => obj.c_cross,
        Term::Total => Some(obj.total),
    }
    .expect("term active for this variant")
}

pub fn term_value(model: &KaeModel, batch: &Batch, term: Term) -> f64 {
    let mut g = Graph::new();
    let b = model.bind(&mut g).unwrap();
    let obj = build_objective(&mut g, model, &b, batch).unwrap();
    g.scalar(term_var(&obj, term))
}

/// Gradient of one term with respect to every parameter, by name.
pub fn term_gradient(model: &KaeModel, batch: &Batch, term: Term) -> Vec<(String, Matrix)> {
    let mut g = Graph::new();
    let b = model.bind(&mut g).unwrap();
    let obj = build_objective(&mut g, model, &b, batch).unwrap();
    g.backward(term_var(&obj, term)).unwrap();
    let mut params = model.params.clone();
    params.zero_grad();
    g.accumulate_into(&mut params);
    params.iter().map(|(n, t)| (n.to_string(), t.grad.clone())).collect()
}

/// How a finite-difference probe moves a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    /// Write the tensor directly; ISVD caches stay at the linearization point.
    Frozen,
    /// Go through `set_param`, which recomputes ISVD caches.
    Refreshed,
}

fn with_entry(model: &KaeModel, name: &str, idx: usize, h: f64, probe: Probe) -> KaeModel {
    let mut m = model.clone();
    let cur = m.param(name).unwrap().clone();
    let next = perturbed(&cur, idx, h);
    match probe {
        Probe::Frozen => m.params.get_mut(name).unwrap().value = next,
        Probe::Refreshed => m.set_param(name, next).unwrap(),
    }
    m
}

/// Worst relative error between reverse mode and central differences over
/// `samples` random parameter entries per instance.
pub fn term_gradient_check(variant: Variant, term: Term, probe: Probe, instances: usize, samples: usize) -> Check {
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let seed = 97 * inst as u64 + variant as u64 * 7919 + term as u64 * 104729;
        let model = random_model(variant, seed);
        let batch = random_batch(seed, 4);
        let grads = term_gradient(&model, &batch, term);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
        for _ in 0..samples {
            let (name, grad) = &grads[rng.gen_range(0..grads.len())];
            let idx = rng.gen_range(0..grad.data().len());
            let x = model.param(name).unwrap().data()[idx];
            let h = FD_STEP * x.abs().max(1.0);
            let up = term_value(&with_entry(&model, name, idx, h, probe), &batch, term);
            let down = term_value(&with_entry(&model, name, idx, -h, probe), &batch, term);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(grad.data()[idx], fd));
        }
    }
    Check {
        name: format!("{} ({variant})", term.name()),
        instances,
        worst,
    }
}

/// Every loss term on a variant where it is differentiable end to end.
pub fn loss_gradient_suite(instances: usize) -> Vec<Check> {
    let frozen = [
        (Variant::Vanilla, Term::R),
        (Variant::Vanilla, Term::F),
        (Variant::Vanilla, Term::Total),
        (Variant::Ckae, Term::B),
        (Variant::Ckae, Term::C1),
        (Variant::Ckae, Term::Total),
        (Variant::Usvd, Term::F),
        (Variant::Usvd, Term::B),
        (Variant::Usvd, Term::V),
        (Variant::Usvd, Term::S),
        (Variant::Usvd, Term::C),
        (Variant::Usvd, Term::Total),
        (Variant::Isvd, Term::V),
        (Variant::Isvd, Term::Total),
    ];
    let mut out: Vec<Check> = frozen
        .iter()
        .map(|&(v, t)| term_gradient_check(v, t, Probe::Frozen, instances, 24))
        .collect();
    // The ISVD projection penalty has the gradient of Σ(σ - 1)² through
    // the recomputed SVD.
    let mut through_svd = term_gradient_check(Variant::Isvd, Term::V, Probe::Refreshed, instances, 24);
    through_svd.name = "V (isvd, through SVD)".into();
    out.push(through_svd);
    out
}

/// Matrix families for the linear algebra oracle suite.
pub fn random_matrix(rng: &mut ChaCha8Rng, k: usize) -> Matrix {
    let m = rng.gen_range(1..=64);
    let a = gaussian(rng, m, m, 1.0);
    match k % 5 {
        0 => a,
        // symmetric
        1 => a.add(&a.transpose()).unwrap().scale(0.5),
        // rank deficient
        2 => {
            let r = (m / 2).max(1);
            let b = gaussian(rng, m, r, 1.0);
            let c = gaussian(rng, r, m, 1.0);
            b.matmul(&c).unwrap()
        }
        // orthogonal
        3 => linalg::qr_orthogonal(&a).unwrap(),
        // graded scales
        _ => {
            let d: Vec<f64> = (0..m).map(|i| 10f64.powf(-4.0 * i as f64 / m as f64)).collect();
            a.matmul(&Matrix::from_diag(&d)).unwrap()
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LinalgWorst {
    pub svd_reconstruction: f64,
    pub svd_orthogonality: f64,
    pub eig_trace: f64,
    pub eig_det: f64,
}

/// SVD reconstruction and orthogonality (relative to ‖A‖), eigenvalue
/// sum against the trace and product against the LU determinant.
pub fn linalg_suite(count: usize) -> LinalgWorst {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut w = LinalgWorst::default();
    for k in 0..count {
        let a = random_matrix(&mut rng, k);
        let m = a.rows();
        let s = linalg::svd(&a).unwrap();
        let norm = a.frobenius_norm().max(f64::MIN_POSITIVE);
        w.svd_reconstruction = w.svd_reconstruction.max(a.sub(&s.reconstruct()).unwrap().frobenius_norm() / norm);
        let ou = linalg::orthogonality_defect(&s.u).unwrap();
        let ov = linalg::orthogonality_defect(&s.v).unwrap();
        w.svd_orthogonality = w.svd_orthogonality.max(ou).max(ov);

        // Rank-deficient products have a zero determinant that only the
        // trace check can use.
        let spec = linalg::eigenvalues(&a).unwrap();
        let sum = spec.sum();
        let scale = a.frobenius_norm().max(1.0);
        let trace_err = ((sum.re - a.trace()).abs() + sum.im.abs()) / scale;
        w.eig_trace = w.eig_trace.max(trace_err);
        if k % 5 != 2 && m <= 64 {
            let det = linalg::determinant(&a).unwrap();
            let prod = spec.product();
            let det_err = ((prod.re - det).abs() + prod.im.abs()) / det.abs();
            w.eig_det = w.eig_det.max(det_err);
        }
    }
    w
}

#[derive(Debug, Clone, Copy)]
pub struct DynamicsReport {
    /// Self-convergence ratio `|x_h - x_{h/2}| / |x_{h/2} - x_{h/4}|`.
    pub self_convergence: f64,
    /// Error ratio against the exact limit-cycle solution on dt halving.
    pub exact_ratio: f64,
    /// `max |r - 1|` over the default 1500-sample trajectory.
    pub radius_deviation: f64,
    /// `max |x3 - 1|` over the default trajectory.
    pub x3_deviation: f64,
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn dynamics_suite() -> DynamicsReport {
    let field = CylinderWake::default();
    // Off the attractor: transient spiral onto the limit cycle.
    let x0 = [0.3, -0.2, 0.5];
    let t_end = 5.0;
    let end_state = |dt: f64| {
        let n = (t_end / dt).round() as usize;
        integrate(&field, &x0, dt, n + 1).unwrap().state(n).to_vec()
    };
    let (a, b, c) = (end_state(0.05), end_state(0.025), end_state(0.0125));
    let self_convergence = diff_norm(&a, &b) / diff_norm(&b, &c);

    // On the limit cycle the exact solution is (cos t, sin t, 1).
    let exact_err = |dt: f64| {
        let n = (20.0 / dt).round() as usize;
        let traj = integrate(&field, &[1.0, 0.0, 1.0], dt, n + 1).unwrap();
        let t = n as f64 * dt;
        diff_norm(traj.state(n), &[t.cos(), t.sin(), 1.0])
    };
    let exact_ratio = exact_err(0.1) / exact_err(0.05);

    let traj = simulate(&OdeSpec::default()).unwrap();
    let mut radius_deviation: f64 = 0.0;
    let mut x3_deviation: f64 = 0.0;
    for i in 0..traj.len() {
        let x = traj.state(i);
        radius_deviation = radius_deviation.max(((x[0] * x[0] + x[1] * x[1]).sqrt() - 1.0).abs());
        x3_deviation = x3_deviation.max((x[2] - 1.0).abs());
    }
    DynamicsReport {
        self_convergence,
        exact_ratio,
        radius_deviation,
        x3_deviation,
    }
}
