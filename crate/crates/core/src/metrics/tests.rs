use super::*;
use crate::numkernel::Rng;
use crate::searchspace::compute_p_use;

fn front(points: &[&[f64]], reference: &[f64]) -> LossFront {
    LossFront::new(points.iter().map(|p| p.to_vec()).collect(), reference.to_vec()).unwrap()
}

#[test]
fn staircase_area() {
    let f = front(&[&[1.0, 3.0], &[2.0, 2.0], &[3.0, 1.0]], &[4.0, 4.0]);
    assert!((hypervolume(&f).unwrap() - 6.0).abs() < 1e-12);
}

#[test]
fn single_point_is_a_box() {
    let f = front(&[&[0.5, 0.25, 0.0, 0.1]], &[1.0, 1.0, 1.0, 1.0]);
    assert!((hypervolume(&f).unwrap() - 0.5 * 0.75 * 1.0 * 0.9).abs() < 1e-12);
}

#[test]
fn points_outside_reference_are_clipped() {
    let f = front(&[&[2.0, 0.5], &[0.5, 0.5]], &[1.0, 1.0]);
    assert!((hypervolume(&f).unwrap() - 0.25).abs() < 1e-12);
    let empty = front(&[&[1.0, 0.5]], &[1.0, 1.0]);
    assert_eq!(hypervolume(&empty).unwrap(), 0.0);
}

#[test]
fn five_objectives_need_monte_carlo() {
    let f = front(&[&[0.5; 5]], &[1.0; 5]);
    assert!(hypervolume(&f).is_err());
    let est = hypervolume_mc(&f, 20_000, &mut Rng::new(1)).unwrap();
    assert!((est.value - 0.5f64.powi(5)).abs() < 1e-12);
}

#[test]
fn monte_carlo_agrees_with_exact() {
    let f = front(
        &[&[0.2, 0.7, 0.5], &[0.6, 0.3, 0.4], &[0.4, 0.4, 0.9], &[0.8, 0.1, 0.2]],
        &[1.0, 1.0, 1.0],
    );
    let exact = hypervolume(&f).unwrap();
    let est = hypervolume_mc(&f, 200_000, &mut Rng::new(3)).unwrap();
    assert!(est.stderr > 0.0);
    assert!((est.value - exact).abs() < 4.0 * est.stderr, "{exact} vs {est:?}");
    assert!(hypervolume_mc(&f, 100, &mut Rng::new(3)).is_err());
}

#[test]
fn uniformity_hand_case() {
    let pref = Preference::new(vec![0.5, 0.5], 0.0).unwrap();
    let (a, b): (f64, f64) = (0.25, 0.75);
    let expected = 1.0 - (a * (2.0 * a).ln() + b * (2.0 * b).ln());
    assert!((uniformity(&pref, &[1.0, 3.0]).unwrap() - expected).abs() < 1e-12);
    assert!((uniformity(&pref, &[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn uniformity_zero_weight_and_errors() {
    let corner = Preference::new(vec![1.0, 0.0, 0.0], 0.5).unwrap();
    let expected = 1.0 - 3f64.ln();
    assert!((uniformity(&corner, &[0.4, 0.1, 0.2]).unwrap() - expected).abs() < 1e-12);
    assert!(uniformity(&corner, &[0.0, 1.0, 1.0]).is_err());
    assert!(uniformity(&corner, &[1.0, 1.0]).is_err());
}

#[test]
fn enumeration_counts_and_cap() {
    let trees = enumerate_trees(2, 3).unwrap();
    assert_eq!(trees.len(), 64);
    let mut sigs: Vec<String> = trees.iter().map(|t| t.signature()).collect();
    sigs.sort();
    sigs.dedup();
    assert_eq!(sigs.len(), 64);
    assert_eq!(enumerate_trees(3, 4).unwrap().len(), 531_441);
    assert!(matches!(enumerate_trees(4, 4), Err(Error::TooLarge { .. })));
}

#[test]
fn oracle_matches_dynamic_program() {
    let mut rng = Rng::new(11);
    for (n, layers) in [(2, 1), (2, 3), (3, 2), (3, 3)] {
        let values: Vec<f64> = (0..layers * n)
            .flat_map(|_| {
                let row: Vec<f64> = (0..n).map(|_| rng.uniform() + 0.01).collect();
                let s: f64 = row.iter().sum();
                row.into_iter().map(move |v| v / s)
            })
            .collect();
        let nu = BranchSample::new(layers, n, values).unwrap();
        let oracle = p_use_oracle(&nu).unwrap();
        let dp = compute_p_use(&nu);
        for (a, b) in oracle.iter().flatten().zip(dp.iter().flatten()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn central_differences_of_a_polynomial() {
    let g = finite_diff(|x| x[0] * x[0] * x[1] + 3.0 * x[1], &[2.0, -1.0], 1e-4).unwrap();
    assert!((g[0] + 4.0).abs() < 1e-8);
    assert!((g[1] - 7.0).abs() < 1e-8);
    assert!(finite_diff(|x| x[0], &[1.0], 0.0).is_err());
}

#[test]
fn grid_layout() {
    let grid = default_grid(3, 8, 0.2, 5, &[0.0, 1.0]).unwrap();
    assert_eq!(grid.len(), 16);
    assert_eq!(grid[0].r(), &[1.0, 0.0, 0.0]);
    assert!((grid[3].r()[1] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(grid[8].c(), 1.0);
    assert_eq!(grid[4].r(), grid[12].r());
    assert_eq!(grid, default_grid(3, 8, 0.2, 5, &[0.0, 1.0]).unwrap());
}

#[test]
fn hand_hypervolumes() {
    assert_eq!(hypervolume(&front(&[&[1.0, 1.0]], &[3.0, 3.0])).unwrap(), 4.0);
    let pair = front(&[&[1.0, 2.0], &[2.0, 1.0]], &[3.0, 3.0]);
    assert_eq!(hypervolume(&pair).unwrap(), 3.0);
    let est = hypervolume_mc(&pair, 1_000_000, &mut Rng::new(2)).unwrap();
    assert!((est.value - 3.0).abs() <= 3.0 * est.stderr);
    assert_eq!(hypervolume_mc(&front(&[], &[3.0, 3.0]), 10_000, &mut Rng::new(2)).unwrap().value, 0.0);
}

#[test]
fn small_enumerations() {
    assert_eq!(enumerate_trees(2, 2).unwrap().len(), 16);
    assert_eq!(enumerate_trees(1, 3).unwrap().len(), 1);
    assert_eq!(enumerate_trees(3, 2).unwrap().len(), 729);
}

#[test]
fn oracle_half_half_case() {
    let nu = BranchSample::new(1, 2, vec![0.5; 4]).unwrap();
    let p = p_use_oracle(&nu).unwrap();
    assert_eq!(p[0], vec![0.75, 0.75]);
    assert_eq!(p[1], vec![1.0, 1.0]);
    let identity = p_use_oracle(&BranchSample::identity(3, 3)).unwrap();
    assert!(identity.iter().flatten().all(|&v| v == 1.0));
}

#[test]
fn finite_diff_spec_cases() {
    let g = finite_diff(|x| x[0] * x[0], &[3.0], 1e-6).unwrap();
    assert!((g[0] - 6.0).abs() < 1e-9);
    assert_eq!(finite_diff(|_| 2.5, &[1.0, -4.0], 1e-6).unwrap(), vec![0.0, 0.0]);
    assert!(finite_diff(|x| x[0].sqrt(), &[0.0], 1e-6).is_err());
}
