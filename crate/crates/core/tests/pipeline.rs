use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rmfgp::benchmarks::{advection_problem, generate_data, linear_problem, nonlinear_problem, relative_error};
use rmfgp::data::{make_nested, sample_uniform, Dataset, Fidelity};
use rmfgp::gp::{fit_gp, NoiseMode};
use rmfgp::linalg::{orthogonality_defect, orthonormalize};
use rmfgp::multifidelity::{fit_nargp, predict_nargp, MultiFidelityConfig};
use rmfgp::pipeline::{build_final_surrogate, rotate_inputs, run_loop, run_rmfgp, Flag, RmfgpConfig};
use rmfgp::sdr::subspace_distance;
use rmfgp::Error;

fn random_rotation(p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    orthonormalize(&DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0))).unwrap()
}

fn high(r: &[f64]) -> f64 {
    (2.0 * (r[0] + r[1])).sin() + 0.5 * r[2]
}

fn low(r: &[f64]) -> f64 {
    high(r) + 0.3 * r[3]
}

fn small_problem(seed: u64) -> (Dataset<f64>, rmfgp::NestedSplit, Dataset<f64>) {
    let xl = sample_uniform::<f64>(60, 4, seed).unwrap();
    let low_set = Dataset::from_fn(xl, Fidelity::Low, low).unwrap();
    let split = make_nested(&low_set, 12, high, seed + 1).unwrap();
    let xt = sample_uniform::<f64>(80, 4, seed + 2).unwrap();
    let test = Dataset::from_fn(xt, Fidelity::High, high).unwrap();
    (low_set, split, test)
}

fn fast_config() -> RmfgpConfig {
    let mut config = RmfgpConfig::default().with_batches(vec![3, 3]);
    config.mf.low.restarts = 2;
    config.mf.high.restarts = 2;
    config.mf.n_mc = 30;
    config.sdr_samples = 400;
    config.final_gp.restarts = 2;
    config.gpdr.gp.restarts = 2;
    config.gpdr.alternations = 2;
    config.with_seed(5)
}

#[test]
fn rotation_identities() {
    let x = sample_uniform::<f64>(7, 4, 1).unwrap();
    let id = DMatrix::identity(4, 4);
    assert_eq!(rotate_inputs(&x, &id).unwrap(), x);
    let r1 = random_rotation(4, 2);
    let r2 = random_rotation(4, 3);
    let back = rotate_inputs(&rotate_inputs(&x, &r1).unwrap(), &r1.transpose()).unwrap();
    assert!((back - &x).abs().max() < 1e-10);
    let two_step = rotate_inputs(&rotate_inputs(&x, &r1).unwrap(), &r2).unwrap();
    let one_step = rotate_inputs(&x, &(&r1 * &r2)).unwrap();
    assert!((two_step - one_step).abs().max() < 1e-10);
}

#[test]
fn rotation_rejects_non_orthogonal() {
    let x = DMatrix::from_element(2, 2, 1.0);
    let shear = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    assert!(matches!(rotate_inputs(&x, &shear), Err(Error::NotOrthogonal { .. })));
    assert!(rotate_inputs(&x, &DMatrix::identity(3, 3)).is_err());
}

#[test]
fn identity_rotations_reduce_to_plain_gp() {
    let (low_set, split, test) = small_problem(10);
    let mut config = fast_config().with_flag(Flag::Rotate);
    config.identity_rotations = true;
    let result = run_rmfgp(&low_set, &split, &test, high, &config).unwrap();
    assert_eq!(result.m1, DMatrix::identity(4, 4));
    let plain = fit_gp(result.final_high.x(), result.final_high.y(), &config.final_gp).unwrap();
    let a = result.surrogate.predict_mean(test.x()).unwrap();
    let b = plain.predict_mean(test.x()).unwrap();
    assert!((a - b).abs().max() < 1e-8);
}

#[test]
fn loop_bookkeeping_and_orthogonality() {
    let (low_set, split, test) = small_problem(20);
    let config = fast_config();
    let outcome = run_loop(&low_set, &split, &test, high, &config).unwrap();
    assert_eq!(outcome.history.len(), 3);
    assert_eq!(outcome.a_hats.len(), 3);
    let sizes: Vec<usize> = outcome.history.iter().map(|h| h.n_high).collect();
    assert_eq!(sizes, vec![15, 18, 18]);
    assert!(outcome.history[2].chosen.is_empty());
    assert_eq!(outcome.final_high.len(), 18);
    assert_eq!(&outcome.high_indices[..12], &split.indices[..]);
    // labels come from the exact function on original coordinates
    for (i, &row) in outcome.high_indices.iter().enumerate() {
        let x: Vec<f64> = low_set.x().row(row).iter().copied().collect();
        assert_eq!(outcome.final_high.y()[i], high(&x));
    }
    assert!(orthogonality_defect(&outcome.a_t) < 1e-8);
    let mut m1 = outcome.a_t.clone();
    for a in &outcome.a_hats {
        assert!(orthogonality_defect(a) < 1e-8);
        m1 = &m1 * a;
        assert!(orthogonality_defect(&m1) < 1e-8);
    }
    assert!((m1 - &outcome.m1).abs().max() < 1e-12);
    for record in &outcome.history {
        assert!(record.relative_error.is_finite() && record.relative_error >= 0.0);
    }
}

#[test]
fn reduced_surrogate_contract() {
    let (low_set, split, test) = small_problem(30);
    let mut config = fast_config();
    config.final_gp.noise = NoiseMode::Fixed(0.0);
    config.gpdr.gp.noise = NoiseMode::Fixed(0.0);
    let outcome = run_loop(&low_set, &split, &test, high, &config).unwrap();

    let rotated = build_final_surrogate(&outcome, Flag::Rotate, &config).unwrap();
    let fitted = rotated.surrogate.predict_mean(rotated.final_high.x()).unwrap();
    assert!((fitted - rotated.final_high.y()).abs().max() < 1e-6);

    config.s = 3;
    let reduced = build_final_surrogate(&outcome, Flag::Reduce, &config).unwrap();
    let d = reduced.d_hat.unwrap();
    assert_eq!(reduced.m.shape(), (4, d));
    assert_eq!(reduced.m1_hat.as_ref().unwrap().shape(), (4, 3));
    assert_eq!(reduced.m2.as_ref().unwrap().shape(), (3, d));
    assert!(orthogonality_defect(&reduced.m) < 1e-8);
    let span = reduced.m1_hat.as_ref().unwrap() * reduced.m2.as_ref().unwrap();
    assert!(subspace_distance(&span, &reduced.m).unwrap() < 1e-8);
    let direct = reduced.surrogate.predict_mean(test.x()).unwrap();
    let manual = reduced.surrogate.model.predict_mean(&(test.x() * &reduced.m)).unwrap();
    assert!((direct - manual).abs().max() < 1e-12);
}

#[test]
fn dimension_order_is_enforced() {
    let (low_set, split, test) = small_problem(40);
    let mut config = fast_config();
    let outcome = run_loop(&low_set, &split, &test, high, &config).unwrap();
    config.s = 4;
    assert!(matches!(
        build_final_surrogate(&outcome, Flag::Reduce, &config),
        Err(Error::DimensionOrder { s: 4, p: 4, .. })
    ));
    config.s = 1;
    assert!(matches!(build_final_surrogate(&outcome, Flag::Reduce, &config), Err(Error::DimensionOrder { .. })));
}

#[test]
fn sign_flipped_rotation_gives_same_nargp() {
    let (low_set, split, test) = small_problem(50);
    let r = random_rotation(4, 9);
    let flip = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0, -1.0, 1.0]));
    let rf = &r * flip;
    assert!(subspace_distance(&r.columns(0, 2).into_owned(), &rf.columns(0, 2).into_owned()).unwrap() < 1e-12);
    let config = MultiFidelityConfig::default().with_seed(3);
    let mut preds = Vec::new();
    for rot in [&r, &rf] {
        let l = Dataset::new(low_set.x() * rot, low_set.y().clone(), Fidelity::Low).unwrap();
        let h = Dataset::new(split.high.x() * rot, split.high.y().clone(), Fidelity::High).unwrap();
        let model = fit_nargp(&l, &h, &config).unwrap();
        preds.push(predict_nargp(&model, &(test.x() * rot), 200, 1).unwrap().0);
    }
    let e0 = relative_error(test.y(), &preds[0]).unwrap();
    let e1 = relative_error(test.y(), &preds[1]).unwrap();
    assert!((e0 - e1).abs() < 1e-3, "{e0} vs {e1}");
}

fn full_config(batches: Vec<usize>, seed: u64) -> RmfgpConfig {
    RmfgpConfig::default().with_batches(batches).with_seed(seed)
}

#[test]
fn linear_subspace_recovery_over_five_seeds() {
    let problem = linear_problem();
    let truth = problem.reference_subspace().unwrap().basis;
    let mut total = 0.0;
    for seed in 0..5 {
        let data = generate_data(&problem, 200, 30, 500, seed).unwrap();
        let config = full_config(vec![5, 5], seed);
        let result = run_rmfgp(&data.low, &data.split, &data.test, |r| problem.high(r), &config).unwrap();
        assert_eq!(result.final_high.len(), 40);
        total += subspace_distance(&truth, &result.m).unwrap();
    }
    assert!(total / 5.0 <= 0.15, "mean distance {}", total / 5.0);
}

#[test]
fn nonlinear_reduced_run() {
    let problem = nonlinear_problem();
    let data = generate_data(&problem, 200, 15, 500, 0).unwrap();
    let config = full_config(vec![2, 3], 0);
    let result = run_rmfgp(&data.low, &data.split, &data.test, |r| problem.high(r), &config).unwrap();
    assert_eq!(result.d_hat, Some(1));
    let e = relative_error(data.test.y(), &result.surrogate.predict_mean(data.test.x()).unwrap()).unwrap();
    assert!(e <= 0.03, "relative error {e}");
}

#[test]
fn advection_reduced_run() {
    let problem = advection_problem(1.0, 0.5, 1.0);
    let data = generate_data(&problem, 200, 20, 500, 0).unwrap();
    let config = full_config(vec![5, 5], 0);
    let result = run_rmfgp(&data.low, &data.split, &data.test, |r| problem.high(r), &config).unwrap();
    let e = relative_error(data.test.y(), &result.surrogate.predict_mean(data.test.x()).unwrap()).unwrap();
    assert!(e <= 0.35, "relative error {e}");
}

#[test]
fn rerun_is_deterministic() {
    let (low_set, split, test) = small_problem(60);
    let config = fast_config();
    let a = run_rmfgp(&low_set, &split, &test, high, &config).unwrap();
    let b = run_rmfgp(&low_set, &split, &test, high, &config).unwrap();
    assert_eq!(a.m, b.m);
    assert_eq!(a.high_indices, b.high_indices);
}
