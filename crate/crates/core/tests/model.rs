mod common;

use proptest::prelude::*;
use tvnet::autograd::Tape;
use tvnet::model::{
    decompose_regions, region_maps, AttentionConfig, BackboneSpec, Fba, Hrf, ModelConfig,
    ParamStore, TvNet,
};
use tvnet::Tensor;

#[test]
fn regions_partition_unity_on_random_logits() {
    let mut rng = common::rng(1);
    for i in 0..1000 {
        let scale = [0.5, 4.0, 40.0][i % 3];
        let logits = common::random_tensor(&mut rng, [1, 1, 8, 8], scale);
        let r = region_maps(&logits);
        for j in 0..logits.len() {
            let parts = [r.strong.data()[j], r.weak.data()[j], r.background.data()[j]];
            assert!(parts.iter().all(|v| (0.0..=1.0).contains(v)), "{parts:?}");
            assert!((parts.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn saturated_logits_select_one_region_exactly() {
    let logits = Tensor::from_vec([1, 1, 1, 3], vec![1e3, 0.0, -1e3]).unwrap();
    let r = region_maps(&logits);
    assert_eq!(r.strong.data(), [1.0, 0.0, 0.0]);
    assert_eq!(r.weak.data(), [0.0, 1.0, 0.0]);
    assert_eq!(r.background.data(), [0.0, 0.0, 1.0]);
}

#[test]
fn strong_and_background_never_overlap() {
    let mut rng = common::rng(2);
    let logits = common::random_tensor(&mut rng, [2, 1, 6, 6], 5.0);
    let mut tape = Tape::new();
    let p = tape.leaf(logits);
    let r = decompose_regions(&mut tape, p).unwrap();
    let (s, b) = (tape.value(r.strong), tape.value(r.background));
    assert!(s.data().iter().zip(b.data()).all(|(s, b)| s * b == 0.0));
}

fn zero_params(store: &mut ParamStore, prefix: &str) {
    for p in store.iter_mut().filter(|p| p.name.starts_with(prefix)) {
        p.value = Tensor::zeros(p.value.shape());
    }
}

#[test]
fn fusion_is_identity_without_update_branch() {
    let mut rng = common::rng(3);
    let mut store = ParamStore::new();
    let attention = AttentionConfig {
        reduction: 2,
        spatial_kernel: 3,
    };
    let hrf = Hrf::new(&mut store, &mut rng, 4, 3, 5, 4, attention);
    zero_params(&mut store, "hrf4.fuse.");
    let f2 = common::random_tensor(&mut rng, [2, 3, 16, 16], 3.0);
    let fi = common::random_tensor(&mut rng, [2, 5, 4, 4], 3.0);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let (a, b) = (tape.leaf(f2), tape.leaf(fi.clone()));
    let fused = hrf.fuse(&mut tape, &bound, a, b).unwrap();
    assert_eq!(tape.value(fused), &fi);
}

#[test]
fn attention_is_identity_without_region_branches() {
    let mut rng = common::rng(4);
    let mut store = ParamStore::new();
    let fba = Fba::new(&mut store, &mut rng, 3, 4, 2);
    for k in 0..2 {
        for r in ["strong", "weak", "background"] {
            zero_params(&mut store, &format!("fba3.step{k}.{r}."));
        }
    }
    let feature = common::random_tensor(&mut rng, [1, 4, 8, 8], 3.0);
    let prediction = common::random_tensor(&mut rng, [1, 1, 4, 4], 3.0);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let (f, p) = (tape.leaf(feature.clone()), tape.leaf(prediction));
    let out = fba.forward(&mut tape, &bound, f, p).unwrap();
    assert_eq!(tape.value(out.feature), &feature);
}

fn config(use_hrf: bool, use_fba: bool) -> ModelConfig {
    ModelConfig {
        backbone: BackboneSpec::toy(4),
        channels: 8,
        use_hrf,
        use_fba,
        ..ModelConfig::default()
    }
}

#[test]
fn toggles_change_exactly_their_modules() {
    let modules = |h, f| TvNet::new(&config(h, f), 0).unwrap().1.counts_by_module();
    for fba in [false, true] {
        common::check_toggle_delta(
            &modules(false, fba),
            &modules(true, fba),
            common::HRF_MODULES,
        )
        .unwrap();
    }
    for hrf in [false, true] {
        common::check_toggle_delta(
            &modules(hrf, false),
            &modules(hrf, true),
            common::FBA_MODULES,
        )
        .unwrap();
    }
}

#[test]
fn forward_shapes_follow_the_pyramid() {
    for (h, f) in [(false, false), (true, true)] {
        let (net, params) = TvNet::new(&config(h, f), 0).unwrap();
        let image = Tensor::full([2, 3, 64, 96], 0.5);
        let out = net.predict(&params, &image).unwrap();
        assert_eq!(out.final_prob.shape(), [2, 1, 64, 96]);
        assert_eq!(out.p6.shape()[..2], [2, 1]);
        assert_eq!(out.edge_logits.is_some(), h);
        assert_eq!(
            out.p3.as_ref().map(|t| t.shape()),
            f.then_some([2, 1, 8, 12])
        );
        assert!(out
            .final_prob
            .data()
            .iter()
            .all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn bad_input_sizes_are_rejected() {
    let (net, params) = TvNet::new(&config(true, true), 0).unwrap();
    assert!(net
        .predict(&params, &Tensor::zeros([1, 3, 48, 64]))
        .is_err());
    assert!(net
        .predict(&params, &Tensor::zeros([1, 3, 64, 70]))
        .is_err());
    assert!(net
        .predict(&params, &Tensor::zeros([1, 1, 64, 64]))
        .is_err());
}

#[test]
fn same_seed_same_parameters() {
    let a = TvNet::new(&config(true, true), 9).unwrap().1;
    let b = TvNet::new(&config(true, true), 9).unwrap().1;
    let c = TvNet::new(&config(true, true), 10).unwrap().1;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

proptest! {
    #[test]
    fn region_maps_sum_to_one(v in proptest::collection::vec(-50.0f64..50.0, 1..64)) {
        let n = v.len();
        let r = region_maps(&Tensor::from_vec([1, 1, 1, n], v).unwrap());
        for j in 0..n {
            let sum = r.strong.data()[j] + r.weak.data()[j] + r.background.data()[j];
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(r.weak.data()[j] >= 0.0);
        }
    }

    #[test]
    fn regions_are_monotone_in_the_logit(a in -20.0f64..20.0, d in 0.0f64..5.0) {
        let r = region_maps(&Tensor::from_vec([1, 1, 1, 2], vec![a, a + d]).unwrap());
        prop_assert!(r.strong.data()[1] >= r.strong.data()[0]);
        prop_assert!(r.background.data()[1] <= r.background.data()[0]);
    }
}
