mod common;

use common::{random_tensor, rng};
use impasto_core::fusion::{fuse_maps, FusionState, FusionWeights};
use impasto_core::oracle::{LspSpec, SurrogateOracle};
use impasto_core::{Plane, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn maps(k: usize, h: usize, w: usize, seed: u64) -> Vec<Plane> {
    let mut r = rng(seed);
    (0..k)
        .map(|_| Plane::from_fn(h, w, |_, _| 0.6 + 0.4 * r.random::<f64>()))
        .collect()
}

fn fuse_oracle(maps: &[Plane], omega: &[f64]) -> Plane {
    let z: f64 = omega.iter().map(|w| w.exp()).sum();
    Plane::from_fn(maps[0].height(), maps[0].width(), |y, x| {
        maps.iter().zip(omega).map(|(m, w)| w.exp() / z * m.get(y, x)).sum()
    })
}

#[test]
fn fusion_matches_softmax_sum() {
    let m = maps(5, 12, 9, 1);
    let mut r = rng(2);
    for _ in 0..50 {
        let omega: Vec<f64> = (0..5).map(|_| r.random_range(-3.0..3.0)).collect();
        let got = fuse_maps(&m, Some(&FusionWeights::from_omega(omega.clone()).unwrap())).unwrap();
        let want = fuse_oracle(&m, &omega);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn uniform_logits_and_no_weights_agree() {
    let m = maps(5, 8, 8, 3);
    let a = fuse_maps(&m, Some(&FusionWeights::uniform(5))).unwrap();
    let b = fuse_maps(&m, None).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn spec(target: &Tensor) -> LspSpec<'_> {
    LspSpec {
        lambda_e: 1.0,
        lambda_sd: 1.0,
        target,
        seed: 0,
    }
}

#[test]
fn identical_maps_have_zero_gradient() {
    let one = maps(1, 16, 16, 4).remove(0);
    let st = FusionState::new(vec![one; 5], 1e-2, 5e7).unwrap();
    let x = random_tensor(16, 16, 3, 5);
    let y = random_tensor(16, 16, 3, 6);
    let d = random_tensor(16, 16, 3, 7).map(|v| (v - 0.5) * 0.06);
    let step = st.objective_and_gradient(&x, &d, &spec(&y), &mut SurrogateOracle::new()).unwrap();
    assert!(step.grad.iter().all(|g| g.abs() < 1e-12), "{:?}", step.grad);
}

#[test]
fn zero_perturbation_leaves_weights() {
    let mut st = FusionState::new(maps(5, 16, 16, 8), 1e-2, 5e7).unwrap();
    let before = st.weights().clone();
    let x = random_tensor(16, 16, 3, 9);
    let y = random_tensor(16, 16, 3, 10);
    st.iwr_update(&x, &Tensor::zeros(16, 16, 3), &spec(&y), &mut SurrogateOracle::new())
        .unwrap();
    assert_eq!(st.weights(), &before);
    assert_eq!(st.weight_log().lines().count(), 2);
}

#[test]
fn small_steps_descend() {
    let mut st = FusionState::new(maps(5, 16, 16, 11), 1e-3, 5e3).unwrap();
    let x = random_tensor(16, 16, 3, 12);
    let y = random_tensor(16, 16, 3, 13);
    let d = random_tensor(16, 16, 3, 14).map(|v| (v - 0.5) * 0.06);
    let mut o = SurrogateOracle::new();
    let s = spec(&y);
    let start = st.objective(st.weights(), &x, &d, &s, &mut o).unwrap();
    let mut prev = start;
    for _ in 0..10 {
        st.iwr_update(&x, &d, &s, &mut o).unwrap();
        let now = st.objective(st.weights(), &x, &d, &s, &mut o).unwrap();
        assert!(now <= prev + 1e-6, "{now} > {prev}");
        prev = now;
    }
    assert!(prev < start, "{prev} >= {start}");
    assert_eq!(st.weight_log().lines().count(), 11);
    // The reference map never moves.
    assert_eq!(st.initial_map(), &fuse_maps(st.components(), None).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_invariant(omega in prop::collection::vec(-5.0f64..5.0, 5), c in -50.0f64..50.0) {
        let m = maps(5, 6, 7, 15);
        let a = fuse_maps(&m, Some(&FusionWeights::from_omega(omega.clone()).unwrap())).unwrap();
        let shifted: Vec<f64> = omega.iter().map(|w| w + c).collect();
        let b = fuse_maps(&m, Some(&FusionWeights::from_omega(shifted).unwrap())).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn fused_within_component_bounds(omega in prop::collection::vec(-30.0f64..30.0, 5), seed in any::<u64>()) {
        let m = maps(5, 6, 7, seed);
        let f = fuse_maps(&m, Some(&FusionWeights::from_omega(omega).unwrap())).unwrap();
        for i in 0..42 {
            let lo = m.iter().map(|p| p.data()[i]).fold(f64::INFINITY, f64::min);
            let hi = m.iter().map(|p| p.data()[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(f.data()[i] >= lo - 1e-12 && f.data()[i] <= hi + 1e-12);
        }
    }
}
