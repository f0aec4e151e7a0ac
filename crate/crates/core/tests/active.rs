use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use rmfgp::active::{acquire, should_stop, top_k, AcquisitionState};
use rmfgp::data::{make_nested, sample_uniform, Dataset, Fidelity};
use rmfgp::gp::{ArdKernelParams, GpConfig, GpModel, Hyperparameters, NargpKernel, NoiseMode};
use rmfgp::multifidelity::{augment, fit_nargp, MultiFidelityConfig, NargpModel};
use rmfgp::Error;

fn two_point_model() -> NargpModel<f64> {
    let xl = DMatrix::from_fn(15, 1, |i, _| i as f64 / 14.0);
    let yl = DVector::from_fn(15, |i, _| (3.0 * xl[(i, 0)]).sin());
    let gp_low = GpModel::condition(
        xl,
        yl,
        Hyperparameters {
            kernel: ArdKernelParams::isotropic(1, 1.0, 0.3),
            noise_variance: 0.0,
        },
        true,
    )
    .unwrap();
    let xh = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let mu = gp_low.predict_mean(&xh).unwrap();
    let mut kernel = NargpKernel::new(1);
    kernel.delta.signal_variance = 0.1;
    let gp_high = GpModel::condition(
        augment(&xh, &mu),
        DVector::from_vec(vec![0.0, 2.0 * 3f64.sin()]),
        Hyperparameters {
            kernel,
            noise_variance: 0.0,
        },
        true,
    )
    .unwrap();
    NargpModel {
        gp_low,
        gp_high,
        n_mc: 20,
        mc_seed: 0,
    }
}

#[test]
fn selection_matches_brute_force_scan() {
    let model = two_point_model();
    let pool = DMatrix::from_fn(101, 1, |i, _| i as f64 / 100.0);
    let chosen = acquire(&model, &pool, 1, 20, 4).unwrap();
    let (_, v) = rmfgp::multifidelity::predict_nargp(&model, &pool, 20, 4).unwrap();
    let mut best = (0, f64::MIN);
    for i in 0..101 {
        if v[i] > best.1 {
            best = (i, v[i]);
        }
    }
    assert_eq!(chosen, vec![best.0]);
    assert!(chosen[0] > 10 && chosen[0] < 90, "{chosen:?}");
}

#[test]
fn forced_choice_and_empty_pool() {
    let model = two_point_model();
    let one = DMatrix::from_element(1, 1, 0.4);
    assert_eq!(acquire(&model, &one, 1, 10, 0).unwrap(), vec![0]);
    assert!(matches!(acquire(&model, &DMatrix::zeros(0, 1), 1, 10, 0), Err(Error::EmptyPool)));
    assert!(acquire(&model, &one, 2, 10, 0).is_err());
}

#[test]
fn training_duplicates_are_never_chosen() {
    let x = sample_uniform::<f64>(30, 2, 1).unwrap();
    let f = |r: &[f64]| (3.0 * r[0]).sin() + r[1];
    let low = Dataset::from_fn(x, Fidelity::Low, f).unwrap();
    let split = make_nested(&low, 8, |r| f(r).powi(2), 2).unwrap();
    let mut config = MultiFidelityConfig::default();
    config.high = GpConfig::default().with_restarts(3).with_noise(NoiseMode::Fixed(0.0));
    let model = fit_nargp(&low, &split.high, &config).unwrap();
    let mut pool = split.high.x().rows(0, 3).into_owned();
    pool = pool.insert_rows(3, 1, 0.0);
    // outside the sampled box, so the model is uncertain there
    pool[(3, 0)] = 1.6;
    pool[(3, 1)] = -0.4;
    let (_, var) = rmfgp::multifidelity::predict_nargp(&model, &pool, 50, 1).unwrap();
    assert!(var[3] > 1e-6, "{var}");
    let picked = acquire(&model, &pool, 3, 50, 1).unwrap();
    assert_eq!(picked[0], 3);
}

#[test]
fn stop_rule() {
    let state = AcquisitionState::new(vec![0, 1], 10, 0.01, 3, vec![2]).unwrap();
    assert!(should_stop(0.0, &state, 0));
    assert!(!should_stop(1.0, &state, 1));
    assert!(should_stop(1.0, &state, 3));
    let disabled = AcquisitionState::new(vec![0], 5, 0.0, 2, vec![1]).unwrap();
    assert!(!should_stop(0.0, &disabled, 0));
}

#[test]
fn commit_moves_indices_out_of_pool() {
    let mut state = AcquisitionState::new(vec![4, 1], 8, 0.0, 2, vec![2, 3]).unwrap();
    assert_eq!(state.pool_indices, vec![0, 2, 3, 5, 6, 7]);
    let chosen = state.commit(&[3, 0]).unwrap();
    assert_eq!(chosen, vec![5, 0]);
    assert_eq!(state.pool_indices, vec![2, 3, 6, 7]);
    assert_eq!(state.high_indices, vec![4, 1, 5, 0]);
    assert_eq!(state.batch_size(0), 2);
    assert_eq!(state.batch_size(5), 3);
    assert!(state.commit(&[1, 1]).is_err());
}

proptest! {
    #[test]
    fn top_k_equals_sorted_brute_force(values in prop::collection::vec(0u8..6, 1..40), k in 0usize..10) {
        let k = k.min(values.len());
        let v = DVector::from_iterator(values.len(), values.iter().map(|&x| x as f64));
        let got = top_k(&v, k);
        // brute force: repeatedly take the first maximum among the rest
        let mut left: Vec<usize> = (0..values.len()).collect();
        let mut want = Vec::new();
        for _ in 0..k {
            let (pos, _) = left.iter().enumerate().fold((0, f64::MIN), |(bp, bv), (p, &i)| if v[i] > bv { (p, v[i]) } else { (bp, bv) });
            want.push(left.remove(pos));
        }
        prop_assert_eq!(got, want);
    }

    #[test]
    fn pool_and_high_stay_disjoint(picks in prop::collection::vec(0usize..50, 1..10)) {
        let mut state = AcquisitionState::new(vec![0, 1, 2], 60, 0.0, 10, vec![1]).unwrap();
        for p in picks {
            let pos = p % state.pool_indices.len();
            state.commit(&[pos]).unwrap();
            for h in &state.high_indices {
                prop_assert!(!state.pool_indices.contains(h));
            }
            prop_assert_eq!(state.high_indices.len() + state.pool_indices.len(), 60);
        }
    }
}
