use proptest::prelude::*;
use thoughtcal::eval::{consistency_rate, majority_vote, pass_at_1, pass_at_n};
use thoughtcal::losses::{consistency_loss, ebm_loss_batch, ebm_loss_single, hinge_loss, total_loss, EbmPair};
use thoughtcal::{HingeOrientation, LossConfig, Tensor};

fn orientation() -> impl Strategy<Value = HingeOrientation> {
    prop_oneof![Just(HingeOrientation::Paper), Just(HingeOrientation::Swapped)]
}

#[test]
fn singleton_batch_is_hinge_plus_consistency() {
    let raw = Tensor::vector(vec![0.0, 0.0]);
    let cal = Tensor::vector(vec![3.0, 4.0]);
    let cfg = LossConfig::default();
    let pair = EbmPair {
        e_raw: 0.5,
        e_cal: 0.2,
        l_raw: &raw,
        l_cal: &cal,
    };
    let expect = hinge_loss(0.5, 0.2, cfg.margin, cfg.hinge_orientation) + consistency_loss(&cal, &raw, cfg.lambda).unwrap();
    assert_eq!(ebm_loss_batch(&[pair], &cfg).unwrap(), expect);
}

#[test]
fn consistency_rate_of_reported_accuracies() {
    assert!((consistency_rate(85.26, 90.48).unwrap() - 94.23).abs() <= 0.01);
    assert!((consistency_rate(81.03, 90.63).unwrap() - 89.41).abs() <= 0.01);
    assert!(consistency_rate(10.0, 0.0).is_err());
}

proptest! {
    #[test]
    fn hinge_is_nonnegative_and_bounded_by_margin_shift(
        e_raw in -1e3f64..1e3, e_cal in -1e3f64..1e3, m in 0.0f64..10.0, o in orientation(),
    ) {
        let h = hinge_loss(e_raw, e_cal, m, o);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (e_raw - e_cal).abs() + m + 1e-9);
        prop_assert!(hinge_loss(e_raw, e_cal, m + 1.0, o) >= h);
    }

    #[test]
    fn orientations_mirror_each_other(e_raw in -1e3f64..1e3, e_cal in -1e3f64..1e3, m in 0.0f64..10.0) {
        prop_assert_eq!(
            hinge_loss(e_raw, e_cal, m, HingeOrientation::Paper),
            hinge_loss(e_cal, e_raw, m, HingeOrientation::Swapped)
        );
    }

    #[test]
    fn batch_loss_is_order_invariant_mean(
        items in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -2.0f64..2.0, -2.0f64..2.0), 1..8),
        rot in 0usize..8,
    ) {
        let cfg = LossConfig::default();
        let raws: Vec<Tensor> = items.iter().map(|t| Tensor::vector(vec![t.2])).collect();
        let cals: Vec<Tensor> = items.iter().map(|t| Tensor::vector(vec![t.3])).collect();
        let pairs: Vec<EbmPair> = items
            .iter()
            .enumerate()
            .map(|(i, t)| EbmPair { e_raw: t.0, e_cal: t.1, l_raw: &raws[i], l_cal: &cals[i] })
            .collect();
        let mut rotated = pairs.clone();
        rotated.rotate_left(rot % pairs.len());
        let a = ebm_loss_batch(&pairs, &cfg).unwrap();
        let b = ebm_loss_batch(&rotated, &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        let singles: Vec<f64> = pairs.iter().map(|p| ebm_loss_single(p, &cfg).unwrap()).collect();
        let lo = singles.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = singles.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
    }

    #[test]
    fn total_loss_ablation(l_lm in -10.0f64..10.0, l_ebm in 0.0f64..10.0, alpha in 0.0f64..1.0) {
        prop_assert_eq!(total_loss(l_lm, l_ebm, 0.0), l_lm);
        prop_assert_eq!(total_loss(l_lm, 0.0, alpha), l_lm);
        prop_assert!(total_loss(l_lm, l_ebm, alpha) >= l_lm);
    }

    #[test]
    fn vote_returns_a_most_frequent_answer(answers in prop::collection::vec(0u32..5, 1..20)) {
        let v = majority_vote(&answers).unwrap();
        let count = |x: u32| answers.iter().filter(|&&a| a == x).count();
        prop_assert!(answers.contains(&v));
        prop_assert!(answers.iter().all(|&a| count(a) < count(v) || (count(a) == count(v) && a >= v)));
    }

    #[test]
    fn unanimous_chains_make_pass1_equal_passn(
        rows in prop::collection::vec((0u32..4, 0u32..4), 1..30), n in 1usize..6,
    ) {
        let chains: Vec<Vec<u32>> = rows.iter().map(|r| vec![r.0; n]).collect();
        let gold: Vec<u32> = rows.iter().map(|r| r.1).collect();
        let p1 = pass_at_1(&chains, &gold, n).unwrap();
        let pn = pass_at_n(&chains, &gold, n).unwrap();
        prop_assert!((p1 - pn).abs() < 1e-12);
        prop_assert!((0.0..=100.0).contains(&p1));
    }

    #[test]
    fn single_chain_pass1_is_passn(rows in prop::collection::vec((0u32..4, 0u32..4), 1..30)) {
        let chains: Vec<Vec<u32>> = rows.iter().map(|r| vec![r.0]).collect();
        let gold: Vec<u32> = rows.iter().map(|r| r.1).collect();
        prop_assert_eq!(pass_at_1(&chains, &gold, 1).unwrap(), pass_at_n(&chains, &gold, 1).unwrap());
    }
}
