//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero on any failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use gcl_core::augment::{drop_edges, make_contrastive_batch, mask_attributes, AugmentConfig, GraphView};
use gcl_core::evaluation::{embeddings, evaluate, proportion_sweep};
use gcl_core::graph_data::{generate_synthetic, normalize_adjacency, split_dataset, Connectome, Dataset, SplitSpec, SyntheticSpec};
use gcl_core::losses::{ce_loss, mse_loss, supcon_loss, SupConBatch};
use gcl_core::model::{forward_full, ModelConfig, ModelParams};
use gcl_core::optim::{init_params, GradCheckInstance, ObjectiveKind};
use gcl_core::rng::RngStream;
use gcl_core::training::{finetune_observed, pretrain_contrastive, train, TrainConfig};
use ndarray::{Array1, Array2};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn synthetic_dataset() -> Dataset {
    generate_synthetic(&SyntheticSpec {
        n_subjects: 1000,
        n_nodes: 32,
        class_gap: 0.3,
        noise_sigma: 0.05,
        seed: 0,
    })
    .expect("generator runs")
}

/// CL + augmentation + Encoder-Decoder with the reduced schedule.
fn reduced_cl_config() -> TrainConfig {
    let mut cfg = TrainConfig::contrastive(32);
    cfg.pretrain.epochs = 300;
    cfg.finetune.total_epochs = 60;
    cfg.finetune.frozen_epochs = 30;
    cfg
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for kind in [ObjectiveKind::Baseline, ObjectiveKind::Pretrain, ObjectiveKind::FinetuneCe] {
        for seed in 0..5 {
            let inst = GradCheckInstance::seeded(kind, seed).map_err(|e| e.to_string())?;
            let report = inst.check(1e-6).map_err(|e| e.to_string())?;
            worst = worst.max(report.max_rel_error());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-5 && secs < 10.0, format!("max relative error {worst:.2e} over 15 instances in {secs:.2}s"))
}

/// Direct transcription of the supervised contrastive sum.
fn supcon_oracle(z: &[Array1<f64>], y: &[u8], tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..z.len() {
        let positives: Vec<usize> = (0..z.len()).filter(|&p| p != i && y[p] == y[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let mut acc = 0.0;
        for &p in &positives {
            let mut denom = 0.0;
            for a in 0..z.len() {
                if a != i {
                    denom += (z[i].dot(&z[a]) / tau).exp();
                }
            }
            acc += ((z[i].dot(&z[p]) / tau).exp() / denom).ln();
        }
        total += -acc / positives.len() as f64;
    }
    total
}

fn contrastive_oracle() -> Outcome {
    let mut rng = RngStream::new(2024).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let b = rng.random_range(1..=8);
        let dim = rng.random_range(1..=6);
        let tau = rng.random_range(0.1..=1.0);
        let z: Vec<Array1<f64>> = (0..2 * b).map(|_| Array1::from_shape_fn(dim, |_| rng.random_range(-1.5..1.5))).collect();
        let y: Vec<u8> = (0..b).flat_map(|_| {
            let label = rng.random_range(0..2u8);
            [label, label]
        }).collect();
        let got = supcon_loss(&SupConBatch::new(z.clone(), y.clone(), tau).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let want = supcon_oracle(&z, &y, tau);
        worst = worst.max((got - want).abs());
    }
    let pair = supcon_loss(&SupConBatch::new(vec![Array1::from(vec![0.3, -1.0]); 2], vec![1, 1], 1.0).unwrap()).unwrap();
    let same = supcon_loss(&SupConBatch::new(vec![Array1::from(vec![0.7, 0.2]); 4], vec![0, 0, 1, 1], 1.0).unwrap()).unwrap();
    let four_ln3 = 4.0 * 3f64.ln();
    check(
        worst < 1e-10 && pair == 0.0 && (same - four_ln3).abs() < 1e-9,
        format!("oracle max |diff| {worst:.2e}; 2B=2 same-label {pair}; identical B=2 {same:.12} vs 4 ln 3 {four_ln3:.12}"),
    )
}

fn loss_components() -> Outcome {
    let mse = mse_loss(&Array2::<f64>::ones((2, 2)), &Array2::<f64>::zeros((2, 2))).map_err(|e| e.to_string())?;
    let ce0 = ce_loss(0.5, 0);
    let ce1 = ce_loss(0.5, 1);
    let ln2 = 2f64.ln();
    check(
        mse == 1.0 && (ce0 - ln2).abs() < 1e-12 && (ce1 - ln2).abs() < 1e-12,
        format!("mse {mse}; ce(0.5,0) {ce0:.15}; ce(0.5,1) {ce1:.15}"),
    )
}

fn random_sc(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    let density = rng.random_range(0.0..1.0);
    let mut sc = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                let w = rng.random_range(0.01..3.0);
                sc[[i, j]] = w;
                sc[[j, i]] = w;
            }
        }
    }
    sc
}

fn structural_invariants() -> Outcome {
    let mut rng = RngStream::new(77).rng();
    let mut violations = Vec::new();
    for trial in 0..1000 {
        let n = rng.random_range(2..=12);
        let sc = random_sc(n, &mut rng);
        let widths: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=6)).collect();
        let params = init_params(&ModelConfig::new(n, widths).unwrap(), trial);
        let out = forward_full(&GraphView::clean(sc.view()).unwrap(), &params).unwrap();
        let asym = (&out.sigma_hat - &out.sigma_hat.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if asym > 1e-12 {
            violations.push(format!("trial {trial}: sigma_hat asymmetry {asym:e}"));
        }
        if out.x_layers.iter().any(|x| x.iter().any(|v| *v < 0.0)) || out.sigma_hat.iter().any(|v| *v < 0.0) {
            violations.push(format!("trial {trial}: negative activation"));
        }

        // Permutation equivariance of the normalization.
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = Array2::from_shape_fn((n, n), |(i, j)| sc[[perm[i], perm[j]]]);
        let a = normalize_adjacency(sc.view()).unwrap();
        let b = normalize_adjacency(permuted.view()).unwrap();
        let diff = (0..n * n).fold(0.0f64, |m, k| m.max((b[[k / n, k % n]] - a[[perm[k / n], perm[k % n]]]).abs()));
        if diff > 1e-12 {
            violations.push(format!("trial {trial}: normalization not equivariant ({diff:e})"));
        }

        // Augmentations keep labels and never add support.
        let cfg = AugmentConfig {
            edge_drop_prob: rng.random_range(0.0..=1.0),
            mask_count_max: rng.random_range(0..=n),
            seed: 0,
        };
        let stream = RngStream::new(trial);
        let dropped = drop_edges(sc.view(), &cfg, &mut stream.child(1).rng()).unwrap();
        if dropped.iter().zip(sc.iter()).any(|(d, s)| *d != 0.0 && d != s) {
            violations.push(format!("trial {trial}: edge dropping altered or added an edge"));
        }
        let mask = mask_attributes(n, &cfg, &mut stream.child(2).rng()).unwrap();
        let eye = Array2::<f64>::eye(n);
        if mask.iter().zip(eye.iter()).any(|(m, e)| *m != 0.0 && m != e) {
            violations.push(format!("trial {trial}: masking produced a feature outside the identity"));
        }
        let label = (trial % 2) as u8;
        let fc = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.5 });
        let subject = Connectome::new("s", sc.clone(), fc, label).unwrap();
        let views = make_contrastive_batch(&[&subject], &cfg, &stream.child(3)).unwrap();
        if views.len() != 2 || views.iter().any(|v| v.label != label) {
            violations.push(format!("trial {trial}: contrastive views lost the label"));
        }
        let clean = normalize_adjacency(sc.view()).unwrap();
        for v in &views {
            if v.view.a_norm.iter().zip(clean.iter()).enumerate().any(|(k, (x, c))| *x != 0.0 && *c == 0.0 && k / n != k % n) {
                violations.push(format!("trial {trial}: augmented adjacency gained an edge"));
            }
        }
    }
    check(
        violations.is_empty(),
        format!("1000 trials, {} violations{}", violations.len(), violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()),
    )
}

fn freeze_semantics() -> Outcome {
    let ds = generate_synthetic(&SyntheticSpec {
        n_subjects: 60,
        n_nodes: 10,
        seed: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let split = split_dataset(&ds, &SplitSpec::default()).unwrap();
    let mut cfg = TrainConfig::contrastive(10);
    cfg.finetune.frozen_epochs = 100;
    cfg.finetune.total_epochs = 101;
    let pretrained = init_params(&ModelConfig::new(10, vec![8, 4]).unwrap(), 5);
    let mut frozen_changed = 0;
    let mut frozen_epochs = 0;
    let mut full_changed = false;
    finetune_observed(&pretrained, &split.train, &split.val, &cfg, &mut |_, epoch, p| {
        if epoch <= 100 {
            frozen_epochs += 1;
            if !p.encoder_eq(&pretrained) {
                frozen_changed += 1;
            }
        } else {
            full_changed = !p.encoder_eq(&pretrained);
        }
    })
    .map_err(|e| e.to_string())?;
    check(
        frozen_epochs == 100 && frozen_changed == 0 && full_changed,
        format!("{frozen_epochs} frozen epochs, {frozen_changed} with encoder changes; encoder updated in epoch 101: {full_changed}"),
    )
}

/// Fraction of inter-block node pairs that carry an edge.
fn inter_block_density(s: &Connectome) -> f64 {
    let n = s.n();
    let half = n / 2;
    let edges = (0..half).flat_map(|i| (half..n).map(move |j| (i, j))).filter(|&(i, j)| s.sc()[[i, j]] != 0.0).count();
    edges as f64 / (half * (n - half)) as f64
}

/// Best single threshold on the scalar feature, fitted on train.
fn scalar_oracle_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let feats: Vec<(f64, u8)> = train.subjects().iter().map(|s| (inter_block_density(s), s.label())).collect();
    let mut best = (0.0, f64::NEG_INFINITY);
    for &(t, _) in &feats {
        let acc = feats.iter().filter(|(f, y)| u8::from(*f > t) == *y).count() as f64 / feats.len() as f64;
        if acc > best.1 {
            best = (t, acc);
        }
    }
    let threshold = best.0;
    test.subjects().iter().filter(|s| u8::from(inter_block_density(s) > threshold) == s.label()).count() as f64 / test.len() as f64
}

struct Pipeline {
    test_accuracy: f64,
    pretrained: ModelParams,
    val: Dataset,
}

fn end_to_end(pipeline: &mut Option<Pipeline>) -> Outcome {
    let start = Instant::now();
    let ds = synthetic_dataset();
    let split = split_dataset(&ds, &SplitSpec::default()).map_err(|e| e.to_string())?;
    let oracle = scalar_oracle_accuracy(&split.train, &split.test);
    if oracle < 0.90 {
        return Err(format!("scalar inter-block oracle only reaches {oracle:.3}"));
    }
    let model = ModelConfig::with_default_widths(32);
    let outcome = train(&split.train, &split.val, &model, &reduced_cl_config()).map_err(|e| e.to_string())?;
    let acc = evaluate(&outcome.params, &split.test).map_err(|e| e.to_string())?.accuracy;
    let secs = start.elapsed().as_secs_f64();
    *pipeline = Some(Pipeline {
        test_accuracy: acc,
        pretrained: outcome.pretrained.expect("contrastive mode pre-trains"),
        val: split.val,
    });
    check(
        acc >= 0.90 && secs < 900.0,
        format!("test accuracy {acc:.3} (scalar oracle {oracle:.3}) in {secs:.0}s"),
    )
}

fn data_scarcity(full_seed0: Option<f64>) -> Outcome {
    let ds = synthetic_dataset();
    let model = ModelConfig::with_default_widths(32);
    let cfg = reduced_cl_config();
    let mut lines = Vec::new();
    for seed in [0u64, 1] {
        let grid: &[f64] = if seed == 0 && full_seed0.is_some() { &[0.5] } else { &[0.5, 1.0] };
        let res = proportion_sweep(&ds, &SplitSpec::default(), grid, std::slice::from_ref(&cfg), &[seed], &model, 1)
            .map_err(|e| e.to_string())?;
        let acc = |p: f64| res.rows.iter().find(|r| r.proportion == p).and_then(|r| r.accuracy);
        let half = acc(0.5).ok_or("proportion 0.5 run failed")?;
        let full = acc(1.0).or(full_seed0).ok_or("proportion 1.0 run failed")?;
        lines.push(format!("seed {seed}: 0.5 -> {half:.3}, 1.0 -> {full:.3}"));
        if (full - half).abs() <= 0.05 {
            return Ok(lines.join("; "));
        }
    }
    Err(lines.join("; "))
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let small = ["--pretrain-epochs", "5", "--baseline-epochs", "5", "--finetune-K", "4", "--finetune-M", "2"];
    let steps: Vec<Vec<&str>> = vec![
        vec!["generate", "--subjects", "80", "--nodes", "12", "--seed", "7", "--out", "data"],
        [&["train", "--data", "data", "--out", "cl", "--seed", "4"][..], &small].concat(),
        [&["train", "--data", "data", "--out", "base", "--mode", "baseline", "--augment", "on"][..], &small].concat(),
        vec!["evaluate", "--checkpoint", "cl/checkpoint.json", "--data", "data", "--subset", "test", "--per-subject", "--out", "eval.json"],
        vec!["export-embeddings", "--checkpoint", "cl/checkpoint_pretrained.json", "--data", "data", "--out", "emb.csv"],
        [&["sweep", "--data", "data", "--out", "sweep", "--proportions", "0.5,1.0", "--configs", "cl/encoder/da,baseline/encoder_decoder/none", "--jobs", "2"][..], &small].concat(),
        vec!["gradcheck", "--seed", "1"],
    ];
    let mut stdout = Vec::new();
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        fs::create_dir(&dir).unwrap();
        let mut outputs = Vec::new();
        for args in &steps {
            let out = Command::new(env!("CARGO_BIN_EXE_gcl"))
                .args(args)
                .current_dir(&dir)
                .env_remove("GCL_SEED")
                .env("RUST_LOG", "off")
                .output()
                .map_err(|e| e.to_string())?;
            if !out.status.success() {
                return Err(format!("`gcl {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
            }
            outputs.push(out.stdout);
        }
        stdout.push(outputs);
    }
    let a = tree(&root.path().join("a"));
    let b = tree(&root.path().join("b"));
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    check(
        a.len() == b.len() && differing.is_empty() && stdout[0] == stdout[1],
        format!("{} files and {} command outputs compared, {} differ {:?}", a.len(), steps.len(), differing.len(), differing),
    )
}

fn embedding_separation(pipeline: &Option<Pipeline>) -> Outcome {
    let (params, val) = match pipeline {
        Some(p) => (p.pretrained.clone(), p.val.clone()),
        None => {
            let ds = synthetic_dataset();
            let split = split_dataset(&ds, &SplitSpec::default()).map_err(|e| e.to_string())?;
            let (params, _) =
                pretrain_contrastive(&split.train, &split.val, &ModelConfig::with_default_widths(32), &reduced_cl_config())
                    .map_err(|e| e.to_string())?;
            (params, split.val)
        }
    };
    let z = embeddings(&params, &val).map_err(|e| e.to_string())?;
    let y: Vec<u8> = val.subjects().iter().map(|s| s.label()).collect();
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..z.nrows() {
        for j in i + 1..z.nrows() {
            let d = z.row(i).dot(&z.row(j));
            if y[i] == y[j] {
                within += d;
                nw += 1;
            } else {
                cross += d;
                nc += 1;
            }
        }
    }
    let (within, cross) = (within / nw as f64, cross / nc as f64);
    check(within > cross, format!("mean within-class dot {within:.4} vs cross-class {cross:.4}"))
}

fn main() {
    let mut pipeline = None;
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 gradient correctness", gradient_correctness()),
        ("2 contrastive loss oracle", contrastive_oracle()),
        ("3 loss component values", loss_components()),
        ("4 structural invariants", structural_invariants()),
        ("5 freeze semantics", freeze_semantics()),
    ];
    results.push(("6 end-to-end synthetic accuracy", end_to_end(&mut pipeline)));
    let full = pipeline.as_ref().map(|p| p.test_accuracy);
    results.push(("7 data-scarcity trend", data_scarcity(full)));
    results.push(("8 determinism", determinism()));
    results.push(("9 embedding separation", embedding_separation(&pipeline)));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS [{name}] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{name}] {detail}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
