use koopman_svd::dynamics::{make_windows, Batch, Normalization, Split, Trajectory};
use koopman_svd::evaluation::{predict_horizon, HorizonTruth};
use koopman_svd::koopman::{Dims, KaeModel, LossWeights, Variant};
use koopman_svd::linalg::{self, Matrix};
use koopman_svd::losses::forward_loss;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const VARIANTS: [Variant; 4] = [Variant::Vanilla, Variant::Ckae, Variant::Isvd, Variant::Usvd];

fn gaussian(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    Matrix::new(rows, cols, d).unwrap()
}

fn model(variant: Variant, m: usize, seed: u64) -> KaeModel {
    KaeModel::new(variant, Dims { n: 3, m, h: 6 }, LossWeights::default(), 2, 2, seed).unwrap()
}

fn trajectory(len: usize, seed: u64) -> Trajectory {
    Trajectory {
        states: gaussian(seed, len, 3),
        dt: 0.1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalization_round_trips(seed in any::<u64>(), rows in 2usize..40, offset in -50.0f64..50.0) {
        let x = gaussian(seed, rows, 4).add(&Matrix::filled(rows, 4, offset)).unwrap();
        let norm = Normalization::fit(&x);
        let back = norm.denormalize(&norm.normalize(&x));
        let err = back.sub(&x).unwrap().frobenius_norm() / x.frobenius_norm();
        prop_assert!(err < 1e-12, "relative round-trip error {err}");
    }

    #[test]
    fn normalized_training_states_are_standardized(seed in any::<u64>(), len in 30usize..120) {
        let ds = make_windows(&trajectory(len, seed), 2, 2, true).unwrap();
        let s = ds.train_states();
        for k in 0..3 {
            let col = s.column(k);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn checkpoints_round_trip_exactly(v in 0usize..4, m in 1usize..6, seed in any::<u64>()) {
        let a = model(VARIANTS[v], m, seed);
        let text = a.to_json().unwrap();
        let b = KaeModel::from_json(&text).unwrap();
        prop_assert_eq!(b.to_json().unwrap(), text);
        prop_assert_eq!(a.koopman_matrix().unwrap(), b.koopman_matrix().unwrap());
    }

    #[test]
    fn windows_cover_splits_in_order(len in 10usize..400, wf in 1usize..5, wb in 1usize..5) {
        let ds = make_windows(&trajectory(len, 7), wf, wb, false).unwrap();
        let (tr, va, te) = (ds.split_range(Split::Train), ds.split_range(Split::Validation), ds.split_range(Split::Test));
        prop_assert_eq!(tr.start, 0);
        prop_assert_eq!(tr.end, va.start);
        prop_assert_eq!(va.end, te.start);
        prop_assert_eq!(te.end, len - wf - wb);
        let w = ds.len() - 1;
        let win = ds.window(w);
        prop_assert_eq!(win.rows(), wb + 1 + wf);
        prop_assert_eq!(win.row(wb), ds.states.row(ds.center_index(w)));
        let b = ds.batch(&[w]).unwrap();
        prop_assert_eq!(b.future[0].row(0), ds.states.row(ds.center_index(w) + 1));
        prop_assert_eq!(b.past[0].row(0), ds.states.row(ds.center_index(w) - 1));
    }

    #[test]
    fn one_step_horizon_equals_one_step_loss(v in 0usize..4, m in 1usize..6, seed in any::<u64>()) {
        let mdl = model(VARIANTS[v], m, seed);
        let states = gaussian(seed ^ 1, 2, 3);
        let truth = HorizonTruth { t0: 0, states: states.clone() };
        let report = predict_horizon(&mdl, &truth, 1).unwrap();
        let batch = Batch {
            center: Matrix::new(1, 3, states.row(0).to_vec()).unwrap(),
            future: vec![Matrix::new(1, 3, states.row(1).to_vec()).unwrap()],
            past: vec![],
        };
        let loss = forward_loss(&mdl, &batch, 1).unwrap();
        prop_assert!((report.average - loss).abs() <= 1e-12 * loss.max(1.0), "{} vs {}", report.average, loss);
    }

    #[test]
    fn rollout_matches_matrix_power(m in 1usize..10, tau in 1usize..40, seed in any::<u64>()) {
        let mut k = gaussian(seed, m, m);
        let s = linalg::svd(&k).unwrap();
        k = k.scale(1.0 / s.sigma[0].max(1e-12));
        let z0 = gaussian(seed ^ 2, 1, m).into_data();
        let mut z = z0.clone();
        for _ in 0..tau {
            z = k.matvec(&z).unwrap();
        }
        let direct = k.pow(tau as u32).unwrap().matvec(&z0).unwrap();
        let err = z.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn orthogonal_matrices_have_unit_spectrum(m in 1usize..=64, seed in any::<u64>()) {
        let q = linalg::qr_orthogonal(&gaussian(seed, m, m)).unwrap();
        let dev = linalg::eigenvalues(&q).unwrap().unit_circle_deviation();
        prop_assert!(dev < 1e-8, "{dev}");
    }
}

#[test]
fn fresh_usvd_model_has_unit_spectrum() {
    for seed in 0..5 {
        let k = model(Variant::Usvd, 8, seed).koopman_matrix().unwrap();
        assert!(linalg::eigenvalues(&k).unwrap().unit_circle_deviation() < 1e-6);
    }
}
