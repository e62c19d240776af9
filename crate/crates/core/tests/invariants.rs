use proptest::prelude::*;

use prefnas_core::controller::Preference;
use prefnas_core::metrics::{hypervolume, p_use_oracle, uniformity, LossFront};
use prefnas_core::numkernel::{Rng, Tensor};
use prefnas_core::objectives::{active_loss, dichotomize, gumbel_softmax, inactive_loss, regularizer, LossWeights};
use prefnas_core::searchspace::{
    compute_p_use, decode_architecture, forward_hard, forward_soft, resource_usage, AnchorConfig, AnchorNet,
    BranchSample, BranchingLogits, TreeArchitecture,
};

fn random_sample(rng: &mut Rng, layers: usize, n: usize) -> BranchSample {
    let mut values = Vec::with_capacity(layers * n * n);
    for _ in 0..layers * n {
        let row: Vec<f64> = (0..n).map(|_| rng.uniform() + 1e-3).collect();
        let s: f64 = row.iter().sum();
        values.extend(row.iter().map(|v| v / s));
    }
    BranchSample::new(layers, n, values).unwrap()
}

fn random_tree(rng: &mut Rng, layers: usize, n: usize) -> TreeArchitecture {
    let parents = (0..layers).map(|_| (0..n).map(|_| rng.below(n)).collect()).collect();
    TreeArchitecture::new(n, parents).unwrap()
}

fn small_anchor(n: usize, layers: usize, seed: u64) -> AnchorNet {
    let config = AnchorConfig {
        tasks: n,
        layers,
        input_dim: 5,
        width: 6,
        output_dims: vec![2; n],
    };
    AnchorNet::random(config, &mut Rng::new(seed)).unwrap()
}

fn point(dims: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.2, dims)
}

fn front_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..=4).prop_flat_map(|d| (prop::collection::vec(point(d), 0..8), point(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn hypervolume_never_decreases_when_adding_a_point((points, extra) in front_strategy()) {
        let reference = vec![1.0; extra.len()];
        let base = hypervolume(&LossFront::new(points.clone(), reference.clone()).unwrap()).unwrap();
        let mut more = points;
        more.push(extra);
        let grown = hypervolume(&LossFront::new(more, reference).unwrap()).unwrap();
        prop_assert!(grown >= base - 1e-12);
    }

    #[test]
    fn hypervolume_ignores_duplicates_and_dominated_points((points, shift) in front_strategy()) {
        prop_assume!(!points.is_empty());
        let reference = vec![1.0; shift.len()];
        let base = hypervolume(&LossFront::new(points.clone(), reference.clone()).unwrap()).unwrap();
        let mut more = points.clone();
        more.push(points[0].clone());
        more.push(points[0].iter().zip(&shift).map(|(p, s)| p + s).collect());
        let after = hypervolume(&LossFront::new(more, reference).unwrap()).unwrap();
        prop_assert!((after - base).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn hypervolume_is_bounded_by_the_reference_box((points, _) in front_strategy()) {
        let d = points.first().map_or(2, |p| p.len());
        let hv = hypervolume(&LossFront::new(points, vec![1.0; d]).unwrap()).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&hv));
    }

    #[test]
    fn uniformity_is_scale_invariant(seed in any::<u64>(), scale in 1e-3f64..1e3, n in 2usize..6) {
        let mut rng = Rng::new(seed);
        let pref = Preference::new(rng.sample_dirichlet(&vec![1.0; n]).unwrap(), 0.5).unwrap();
        let losses: Vec<f64> = (0..n).map(|_| rng.uniform() + 0.01).collect();
        let scaled: Vec<f64> = losses.iter().map(|l| l * scale).collect();
        let a = uniformity(&pref, &losses).unwrap();
        let b = uniformity(&pref, &scaled).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a <= 1.0 + 1e-12);
    }

    #[test]
    fn p_use_matches_enumeration(seed in any::<u64>(), n in 2usize..=3, layers in 1usize..=3) {
        let nu = random_sample(&mut Rng::new(seed), layers, n);
        let exact = p_use_oracle(&nu).unwrap();
        let dp = compute_p_use(&nu);
        for (a, b) in exact.iter().flatten().zip(dp.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        prop_assert!(dp[layers].iter().all(|&p| p == 1.0));
    }

    #[test]
    fn gumbel_rows_lie_on_the_simplex(seed in any::<u64>(), zeta in 0.05f64..10.0) {
        let mut rng = Rng::new(seed);
        let values: Vec<f64> = (0..2 * 16).map(|_| 4.0 * rng.normal()).collect();
        let alpha = BranchingLogits::new(2, 4, values).unwrap();
        let nu = gumbel_softmax(&alpha, zeta, &mut rng).unwrap();
        for b in 0..2 {
            for j in 0..4 {
                let row = nu.row(b, j);
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn decoded_parents_are_row_maxima(seed in any::<u64>(), n in 2usize..5, layers in 1usize..4) {
        let mut rng = Rng::new(seed);
        let values: Vec<f64> = (0..layers * n * n).map(|_| rng.normal()).collect();
        let alpha = BranchingLogits::new(layers, n, values).unwrap();
        let tree = decode_architecture(&alpha);
        for b in 0..layers {
            for j in 0..n {
                let row = alpha.row(b, j);
                let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(row[tree.parent(b, j)], best);
            }
        }
    }

    #[test]
    fn resource_ratio_is_one_only_when_fully_branched(seed in any::<u64>(), n in 2usize..=3, layers in 1usize..=3) {
        let anchor = small_anchor(n, layers, 1);
        let tree = random_tree(&mut Rng::new(seed), layers, n);
        let ratio = resource_usage(&anchor, &tree).ratio_to_anchor;
        prop_assert!(ratio > 0.0 && ratio <= 1.0);
        let all_active = tree.active_mask().iter().flatten().all(|&a| a);
        prop_assert_eq!(ratio == 1.0, all_active);
    }

    #[test]
    fn cross_edges_vanish_only_for_separate_streams(seed in any::<u64>(), n in 2usize..=3, layers in 1usize..=3) {
        let tree = random_tree(&mut Rng::new(seed), layers, n);
        let stays = (0..layers).all(|b| (0..n).all(|j| !tree.is_active(b + 1, j) || tree.parent(b, j) == j));
        prop_assert_eq!(tree.cross_task_edges().is_empty(), stays);
    }

    #[test]
    fn one_hot_soft_routing_equals_hard_routing(seed in any::<u64>(), n in 2usize..=3, layers in 1usize..=3) {
        let anchor = small_anchor(n, layers, seed);
        let mut rng = Rng::new(seed ^ 7);
        let tree = random_tree(&mut rng, layers, n);
        let x = rng.normal_tensor(&[7, 5], 1.0);
        let soft = forward_soft(&anchor, &BranchSample::one_hot(&tree), &x, None).unwrap();
        let hard = forward_hard(&anchor, &tree, &x, None).unwrap().outputs;
        for (s, h) in soft.iter().zip(&hard) {
            for (a, b) in s.data().iter().zip(h.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn regularizer_terms_are_nonnegative(seed in any::<u64>(), c in 0.0f64..=1.0) {
        let mut rng = Rng::new(seed);
        let n = 3;
        let nu = random_sample(&mut rng, 3, n);
        let pref = Preference::new(rng.sample_dirichlet(&[0.5; 3]).unwrap(), c).unwrap();
        let dich = dichotomize(&pref, 0.2).unwrap();
        let affinity = Tensor::matrix(n, n, (0..n * n).map(|_| rng.uniform()).collect()).unwrap();
        let p_use = compute_p_use(&nu);
        let reg = regularizer(&pref, &dich, &nu, &affinity, &p_use, &LossWeights::new(n)).unwrap();
        prop_assert!(reg.active >= 0.0 && reg.inactive >= 0.0 && reg.omega >= 0.0);
        prop_assert_eq!(inactive_loss(&nu, &dich).unwrap(), reg.inactive);
    }

    #[test]
    fn active_loss_ignores_inactive_rows(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let n = 3;
        let nu = random_sample(&mut rng, 2, n);
        let pref = Preference::new(vec![0.45, 0.45, 0.1], 1.0).unwrap();
        let dich = dichotomize(&pref, 0.2).unwrap();
        let affinity = Tensor::filled(&[n, n], 0.7);
        let p_use = compute_p_use(&nu);
        let base = active_loss(&nu, &dich, &affinity, &p_use).unwrap();
        let other = random_sample(&mut rng, 2, n);
        let mut blocks: Vec<Tensor> = (0..2).map(|b| nu.block_tensor(b)).collect();
        for (b, block) in blocks.iter_mut().enumerate() {
            let row = other.row(b, 2).to_vec();
            block.data_mut()[2 * n..3 * n].copy_from_slice(&row);
        }
        let changed = BranchSample::from_blocks(&blocks).unwrap();
        prop_assert_eq!(active_loss(&changed, &dich, &affinity, &p_use).unwrap(), base);
    }

    #[test]
    fn normalized_preferences_lie_on_the_simplex(raw in prop::collection::vec(0.01f64..5.0, 2..6), c in 0.0f64..=1.0) {
        let (pref, rescaled) = Preference::normalized(raw.clone(), c).unwrap();
        prop_assert!((pref.r().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(rescaled, (raw.iter().sum::<f64>() - 1.0).abs() > 1e-6);
    }
}
