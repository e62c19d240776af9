//! End-to-end acceptance run: one PASS/FAIL line per criterion.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use prefnas_cli::checkpoint::{load_bundle, Bundle, Component};
use prefnas_cli::commands;
use prefnas_cli::config::RunConfig;
use prefnas_core::benchsynth::TaskDataset;
use prefnas_core::controller::{predict, Preference, WeightHypernet};
use prefnas_core::metrics::{hypervolume, hypervolume_mc, p_use_oracle, uniformity, LossFront};
use prefnas_core::numkernel::{kernel, Graph, Rng, Tensor};
use prefnas_core::objectives::gumbel_softmax;
use prefnas_core::searchspace::{compute_p_use, BranchSample, BranchingLogits};
use prefnas_core::trainer::{stage1_terms, temperature, StepSample};

const SEED: u64 = 0;
const BUDGET: Duration = Duration::from_secs(600);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn random_sample(rng: &mut Rng, layers: usize, n: usize) -> BranchSample {
    let mut values = Vec::with_capacity(layers * n * n);
    for _ in 0..layers * n {
        let row = rng.sample_dirichlet(&vec![0.7; n]).expect("positive concentration");
        values.extend(row);
    }
    BranchSample::new(layers, n, values).expect("rows on the simplex")
}

fn p_use_correctness() -> Verdict {
    let started = Instant::now();
    let mut rng = Rng::new(SEED).substream("criterion-1");
    let mut worst: f64 = 0.0;
    for n in [2, 3] {
        for layers in [1, 2, 3] {
            for _ in 0..100 {
                let nu = random_sample(&mut rng, layers, n);
                let oracle = p_use_oracle(&nu).expect("enumerable");
                for (a, b) in oracle.iter().flatten().zip(compute_p_use(&nu).iter().flatten()) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(worst <= 1e-10 && secs < 5.0, format!("max abs err {worst:.2e}, {secs:.2}s"))
}

fn gumbel_calibration() -> Verdict {
    let n = 4;
    let mut rng = Rng::new(SEED).substream("criterion-2");
    let logits: Vec<f64> = (0..n * n).map(|_| 1.5 * rng.normal()).collect();
    let alpha = BranchingLogits::new(1, n, logits.clone()).expect("shape");
    let draws = 100_000;
    let mut counts = vec![vec![0usize; n]; n];
    let mut worst_sum: f64 = 0.0;
    for _ in 0..draws {
        let nu = gumbel_softmax(&alpha, 1.0, &mut rng).expect("positive temperature");
        for (j, count) in counts.iter_mut().enumerate() {
            let row = nu.row(0, j);
            worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
            let best = (0..n).max_by(|&a, &b| row[a].total_cmp(&row[b])).expect("non-empty row");
            count[best] += 1;
        }
    }
    let mut worst_freq: f64 = 0.0;
    for (j, count) in counts.iter().enumerate() {
        let soft = kernel::softmax_rows(&Tensor::row(logits[j * n..(j + 1) * n].to_vec()));
        for k in 0..n {
            worst_freq = worst_freq.max((count[k] as f64 / draws as f64 - soft.data()[k]).abs());
        }
    }
    verdict(
        worst_freq <= 0.01 && worst_sum <= 1e-9,
        format!("max freq gap {worst_freq:.4}, max row-sum err {worst_sum:.1e}"),
    )
}

fn gradient_fidelity(config: &RunConfig, bundle: &Bundle, data: &TaskDataset) -> Verdict {
    let mut rng = Rng::new(SEED).substream("criterion-3");
    let mut sample = StepSample::draw(&mut rng, &config.train, &bundle.anchor, data).expect("sample");
    sample.pref = Preference::new(vec![0.5, 0.35, 0.15], 0.7).expect("valid preference");
    let zeta = temperature(0, &config.train);
    let weights = config.train.loss_weights(3);
    let tau = config.train.tau_for(3);
    let aff = bundle.affinity.tensor();
    let loss_at = |edge: &prefnas_core::controller::EdgeHypernet| {
        let g = Graph::new();
        let vars = edge.params().as_params(&g);
        let terms = stage1_terms(&g, edge, &vars, &bundle.anchor, &aff, &sample, zeta, &weights, tau).expect("loss");
        (g, vars, terms)
    };
    let (g, vars, terms) = loss_at(&bundle.edge);
    let omega = g.item(terms.reg.omega);
    let grads = g.backward(terms.total).expect("backward");
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.below(bundle.edge.params().scalar_count());
        let (slot, idx) = bundle.edge.params().locate(k).expect("in range");
        let analytic = grads.wrt(vars[slot]).data()[idx];
        let probe = |delta: f64| {
            let mut edge = bundle.edge.clone();
            edge.params_mut().tensors_mut()[slot].data_mut()[idx] += delta;
            let (g, _, t) = loss_at(&edge);
            g.item(t.total)
        };
        let numeric = (probe(h) - probe(-h)) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    verdict(worst <= 1e-4, format!("max rel err {worst:.2e} over 20 parameters, omega {omega:.4}"))
}

fn hypervolume_checks() -> Verdict {
    let front = |points: Vec<Vec<f64>>, reference: Vec<f64>| LossFront::new(points, reference).expect("finite front");
    let hand_a = hypervolume(&front(vec![vec![1.0, 1.0]], vec![3.0, 3.0])).expect("2-d");
    let hand_b = hypervolume(&front(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![3.0, 3.0])).expect("2-d");
    let mut rng = Rng::new(SEED).substream("criterion-4");
    let mut worst_mc: f64 = 0.0;
    for _ in 0..20 {
        let points: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.uniform()).collect()).collect();
        let f = front(points, vec![1.0; 3]);
        let exact = hypervolume(&f).expect("3-d");
        let mc = hypervolume_mc(&f, 1_000_000, &mut rng).expect("enough samples");
        worst_mc = worst_mc.max((mc.value - exact).abs() / exact);
    }
    let mut invariants = true;
    for _ in 0..100 {
        let d = 2 + rng.below(3);
        let count = 1 + rng.below(6);
        let points: Vec<Vec<f64>> = (0..count).map(|_| (0..d).map(|_| 1.2 * rng.uniform()).collect()).collect();
        let reference = vec![1.0; d];
        let base = hypervolume(&front(points.clone(), reference.clone())).expect("exact");
        let mut grown = points.clone();
        grown.push((0..d).map(|_| 1.2 * rng.uniform()).collect());
        let more = hypervolume(&front(grown, reference.clone())).expect("exact");
        let mut padded = points.clone();
        padded.push(points[0].clone());
        padded.push(points[0].iter().map(|v| v + rng.uniform()).collect());
        let same = hypervolume(&front(padded, reference)).expect("exact");
        invariants &= more >= base - 1e-12 && (same - base).abs() <= 1e-12;
    }
    verdict(
        hand_a == 4.0 && hand_b == 3.0 && worst_mc <= 0.01 && invariants,
        format!("hand cases {hand_a}, {hand_b}; max MC rel err {worst_mc:.4}; invariants hold: {invariants}"),
    )
}

fn ratio_of(run: &Path, r: &str, c: f64) -> f64 {
    let out = Command::new(env!("CARGO_BIN_EXE_prefnas"))
        .args(["predict", "--out"])
        .arg(run)
        .args(["--r", r, "--c", &c.to_string()])
        .output()
        .expect("predict runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).expect("predict emits JSON");
    report["ratio_to_anchor"].as_f64().expect("ratio")
}

fn cost_controllability(run: &Path, train_secs: f64) -> Verdict {
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("sweep_summary.json")).expect("summary written")).expect("json");
    let per_c = summary["per_c"].as_array().expect("per-cost summary");
    let mean_at = |c: f64| {
        per_c
            .iter()
            .find(|s| s["c"].as_f64() == Some(c))
            .and_then(|s| s["mean_ratio"].as_f64())
            .expect("cost present")
    };
    let (r0, r1) = (mean_at(0.0), mean_at(1.0));
    let mut corners_ok = true;
    let mut detail = String::new();
    for c in [0.0, 0.5, 1.0] {
        let uniform = ratio_of(run, "1,1,1", c);
        let corners: Vec<f64> = ["1,0,0", "0,1,0", "0,0,1"].iter().map(|r| ratio_of(run, r, c)).collect();
        corners_ok &= corners.iter().all(|&v| v <= uniform);
        detail += &format!("; c={c}: uniform {uniform:.3}, one-hot {:.3}/{:.3}/{:.3}", corners[0], corners[1], corners[2]);
    }
    verdict(
        r1 <= r0 && corners_ok && train_secs <= BUDGET.as_secs_f64(),
        format!("mean ratio c=0 {r0:.4}, c=1 {r1:.4}{detail}; train {train_secs:.1}s"),
    )
}

fn task_controllability(config: &RunConfig, bundle: &Bundle, data: &TaskDataset) -> Verdict {
    let levels = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut rng = Rng::new(SEED).substream("criterion-6");
    let splits: Vec<Vec<f64>> = (0..8).map(|_| rng.sample_dirichlet(&[1.0, 1.0]).expect("valid")).collect();
    let mut pass = true;
    let mut detail = Vec::new();
    for k in 0..3 {
        let mut curve = Vec::new();
        for &rk in &levels {
            let mut total = 0.0;
            let mut count = 0.0;
            for c in [0.0, 0.5, 1.0] {
                for split in &splits {
                    let mut others = split.iter();
                    let r: Vec<f64> = (0..3)
                        .map(|j| if j == k { rk } else { (1.0 - rk) * others.next().expect("two others") })
                        .collect();
                    let pref = Preference::normalized(r, c).expect("valid").0;
                    let losses = commands::evaluate(config, bundle, data, &pref, true).expect("evaluation");
                    total += losses[k];
                    count += 1.0;
                }
            }
            curve.push(total / count);
        }
        pass &= curve.windows(2).all(|w| w[1] <= 1.05 * w[0]);
        let shown: Vec<String> = curve.iter().map(|v| format!("{v:.4}")).collect();
        detail.push(format!("task{} [{}]", k + 1, shown.join(" ")));
    }
    verdict(pass, detail.join("; "))
}

fn cross_task_adaptation(run: &Path) -> Verdict {
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("hv_eval.json")).expect("hv report written")).expect("json");
    let mut pass = true;
    let mut detail = Vec::new();
    for entry in report["per_c"].as_array().expect("per-cost entries") {
        let c = entry["c"].as_f64().expect("c");
        let with = entry["hv_adapted"].as_f64().expect("hv");
        let without = entry["hv_unadapted"].as_f64().expect("hv");
        if c == 0.0 || c == 1.0 {
            pass &= with >= without;
        }
        detail.push(format!("c={c}: with {with:.4}, without {without:.4}"));
    }
    verdict(pass && detail.len() >= 2, detail.join("; "))
}

fn identity_modulation(bundle: &Bundle, data: &TaskDataset) -> Verdict {
    let fresh = WeightHypernet::new(&bundle.anchor, &mut Rng::new(SEED).substream("criterion-8"));
    let mut rng = Rng::new(SEED).substream("criterion-8/prefs");
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let pref = Preference::new(rng.sample_dirichlet(&[0.5; 3]).expect("valid"), rng.uniform()).expect("valid");
        let (_, with) = predict(&bundle.edge, Some(&fresh), &bundle.anchor, &pref).expect("predict");
        let (_, without) = predict(&bundle.edge, None, &bundle.anchor, &pref).expect("predict");
        let a = with.forward(&data.test.inputs).expect("forward");
        let b = without.forward(&data.test.inputs).expect("forward");
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.data().iter().zip(y.data()) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    verdict(worst <= 1e-12, format!("max abs diff {worst:.1e}"))
}

fn determinism(a: &Path, b: &Path) -> Verdict {
    let mut differing = Vec::new();
    for c in Component::ALL {
        for ext in ["json", "bin"] {
            let name = format!("checkpoints/{}.{ext}", c.tag());
            if fs::read(a.join(&name)).ok() != fs::read(b.join(&name)).ok() {
                differing.push(name);
            }
        }
    }
    if fs::read(a.join("sweep.csv")).ok() != fs::read(b.join("sweep.csv")).ok() {
        differing.push("sweep.csv".into());
    }
    let pass = differing.is_empty();
    verdict(
        pass,
        if pass {
            "8 checkpoint files and sweep.csv byte-identical".to_string()
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn uniformity_checks() -> Verdict {
    let half = Preference::new(vec![0.5, 0.5], 0.0).expect("valid");
    let hand = uniformity(&half, &[1.0, 3.0]).expect("positive mass");
    let equal2 = uniformity(&half, &[2.0, 2.0]).expect("positive mass");
    let equal3 = uniformity(&Preference::uniform(3, 0.0).expect("valid"), &[0.7; 3]).expect("positive mass");
    let mut rng = Rng::new(SEED).substream("criterion-10");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 2 + rng.below(4);
        let pref = Preference::new(rng.sample_dirichlet(&vec![1.0; n]).expect("valid"), 0.5).expect("valid");
        let losses: Vec<f64> = (0..n).map(|_| rng.uniform() + 1e-3).collect();
        let scale = (8.0 * rng.uniform() - 4.0).exp();
        let scaled: Vec<f64> = losses.iter().map(|l| l * scale).collect();
        let a = uniformity(&pref, &losses).expect("positive mass");
        let b = uniformity(&pref, &scaled).expect("positive mass");
        worst = worst.max((a - b).abs());
    }
    verdict(
        (hand - 0.8692).abs() <= 1e-4 && equal2 == 1.0 && equal3 == 1.0 && worst <= 1e-12,
        format!("hand {hand:.6}; equal cases {equal2}, {equal3}; max scaling gap {worst:.1e}"),
    )
}

fn affinity_structure(config: &RunConfig, bundle: &Bundle) -> Verdict {
    let a = &bundle.affinity.matrix;
    let clusters = &config.suite.clusters;
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                if clusters[i] == clusters[j] { &mut intra } else { &mut inter }.push(a[i][j]);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let diagonal = (0..a.len()).all(|i| a[i][i] == 1.0);
    let (mi, me) = (mean(&intra), mean(&inter));
    verdict(mi > me && diagonal, format!("intra {mi:.4}, inter {me:.4}, unit diagonal: {diagonal}"))
}

fn prefnas(args: &[&str], cwd: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_prefnas"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "prefnas {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let root = work.path();
    fs::write(root.join("run.json"), format!("{{\"seed\": {SEED}}}\n")).expect("write config");

    let mut results: Vec<(usize, &str, Verdict)> = vec![
        (1, "P_use correctness", p_use_correctness()),
        (2, "Gumbel calibration", gumbel_calibration()),
        (4, "Hypervolume", hypervolume_checks()),
        (10, "Uniformity", uniformity_checks()),
    ];

    let started = Instant::now();
    prefnas(&["train", "--config", "run.json", "--out", "a"], root);
    let train_secs = started.elapsed().as_secs_f64();
    prefnas(&["train", "--config", "run.json", "--out", "b"], root);
    for run in ["a", "b"] {
        prefnas(&["sweep", "--out", run, "--grid", "25"], root);
    }
    prefnas(&["eval-hv", "--out", "a"], root);

    let run = root.join("a");
    let config = RunConfig::read(&run.join("config.json"))
        .and_then(|c| c.resolve(None))
        .expect("echoed config");
    let bundle = load_bundle(&run, &config).expect("checkpoints load");
    let data = commands::dataset(&config).expect("suite");

    results.push((3, "Gradient fidelity", gradient_fidelity(&config, &bundle, &data)));
    results.push((5, "Cost controllability", cost_controllability(&run, train_secs)));
    results.push((6, "Task controllability", task_controllability(&config, &bundle, &data)));
    results.push((7, "Cross-task adaptation", cross_task_adaptation(&run)));
    results.push((8, "Identity modulation", identity_modulation(&bundle, &data)));
    results.push((9, "Determinism", determinism(&run, &root.join("b"))));
    results.push((11, "Affinity structure", affinity_structure(&config, &bundle)));
    results.sort_by_key(|r| r.0);

    let mut passed = 0;
    for (id, name, v) in &results {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {tag} {name}: {}", v.detail);
        passed += usize::from(v.pass);
    }
    println!("{passed}/{} criteria passed", results.len());
    // report-only by default so the rest of the workspace suite still runs
    if passed != results.len() && std::env::var_os("PREFNAS_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
