use prefnas_core::benchsynth::{generate, Split, TaskSuiteSpec};
use prefnas_core::controller::{predict, Preference};
use prefnas_core::metrics::{default_grid, preference_sweep};
use prefnas_core::searchspace::AnchorConfig;
use prefnas_core::trainer::{train_pipeline, TrainConfig};

fn run(seed: u64) -> (prefnas_core::trainer::TrainedBundle, prefnas_core::benchsynth::TaskDataset) {
    let data = generate(&TaskSuiteSpec {
        train: 256,
        val: 32,
        test: 64,
        seed,
        ..Default::default()
    })
    .unwrap();
    let config = TrainConfig {
        anchor_steps: 60,
        edge_steps: 40,
        weight_steps: 20,
        zeta_interval: 5,
        affinity_probes: 16,
        seed,
        ..Default::default()
    };
    let anchor = AnchorConfig {
        tasks: 3,
        layers: 2,
        input_dim: 16,
        width: 8,
        output_dims: vec![4; 3],
    };
    (train_pipeline(&config, &anchor, &data).unwrap(), data)
}

#[test]
fn pipeline_is_reproducible_and_sweepable() {
    let (a, data) = run(9);
    let (b, _) = run(9);
    assert_eq!(a.anchor.to_params().fingerprint(), b.anchor.to_params().fingerprint());
    assert_eq!(a.edge_report.fingerprint, b.edge_report.fingerprint);
    assert_eq!(a.weight_report.fingerprint, b.weight_report.fingerprint);
    assert_eq!(a.affinity, b.affinity);
    for i in 0..3 {
        assert_eq!(a.affinity.matrix[i][i], 1.0);
    }

    let grid = default_grid(3, 8, 0.2, 1, &[0.0, 1.0]).unwrap();
    let test = data.split(Split::Test);
    let sweep = preference_sweep(&a.anchor, &a.edge, Some(&a.weight), &grid, test, &[2.0; 3]).unwrap();
    assert_eq!(sweep.rows.len(), 16);
    assert_eq!(sweep.per_c.len(), 2);
    assert!(sweep.rows.iter().all(|r| r.resource_ratio > 0.0 && r.resource_ratio <= 1.0));
    let csv = sweep.to_csv();
    assert!(csv.starts_with("pref_1,pref_2,pref_3,c,resource_ratio,loss_1,loss_2,loss_3,tree_signature\n"));
    let again = preference_sweep(&b.anchor, &b.edge, Some(&b.weight), &grid, test, &[2.0; 3]).unwrap();
    assert_eq!(again.to_csv(), csv);
}

#[test]
fn prediction_is_a_pure_function_of_the_preference() {
    let (bundle, data) = run(2);
    let pref = Preference::new(vec![0.6, 0.3, 0.1], 0.4).unwrap();
    let (t1, m1) = predict(&bundle.edge, Some(&bundle.weight), &bundle.anchor, &pref).unwrap();
    let (t2, m2) = predict(&bundle.edge, Some(&bundle.weight), &bundle.anchor, &pref).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(m1.forward(&data.test.inputs).unwrap(), m2.forward(&data.test.inputs).unwrap());
}

#[test]
fn splits_are_disjoint() {
    let data = generate(&TaskSuiteSpec {
        train: 128,
        val: 32,
        test: 32,
        ..Default::default()
    })
    .unwrap();
    let rows = |s: Split| -> Vec<Vec<u64>> {
        let t = &data.split(s).inputs;
        (0..t.rows()).map(|r| t.row_slice(r).iter().map(|v| v.to_bits()).collect()).collect()
    };
    let train = rows(Split::Train);
    for other in [rows(Split::Val), rows(Split::Test)] {
        assert!(other.iter().all(|r| !train.contains(r)));
    }
}
