//! The acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion over all of them. Run with `--nocapture` to see the table.

mod common;

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

#[path = "../../core/tests/common/gradients.rs"]
mod gradients;

use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use editforge::attention::{decoupled_attention, text_cross_attention, AttentionParams, ExpertBank, RoutingMode};
use editforge::diffusion::{cfg_compose, GuidanceScales};
use editforge::filter::{cosine, directional_similarity, l1_distance};
use editforge::fixtures::{run_overfit, run_routing_ablation, OVERFIT_PAIRS, OVERFIT_STEPS, OVERFIT_LEARNING_RATE};
use editforge::instruct::{parse_response, validate_instruction, EditRecord, Generator, InContextPool, Outcome, ResponseFields, VerbConstraints, Violation};
use editforge::model::{train_stage1, train_stage2, AnySdModel, ModelConfig, TrainConfig};
use editforge::param::{OptimizerKind, StageTag};
use editforge::providers::stub::StubTextGenerator;
use editforge::providers::EmbeddingVector;
use editforge::rng::{derive, normal_tensor, seeded};
use editforge::task::EditTaskType;
use editforge::tensor::Tensor;
use editforge::toy::{recolor_example, EditExample, Scene};
use rand::Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.random_range(-10.0..10.0)).collect())
}

fn c1_cfg_collapse() -> Verdict {
    let start = Instant::now();
    let mut rng = seeded(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=16);
        let e: Vec<Tensor> = (0..4).map(|_| random_vec(&mut rng, n)).collect();
        let out = cfg_compose(&e[0], &e[1], &e[2], Some(&e[3]), &GuidanceScales::unit()).map_err(|e| e.to_string())?;
        worst = worst.max(out.max_abs_diff(&e[3]));
    }
    let took = start.elapsed();
    check(
        worst < 1e-12 && took < Duration::from_secs(1),
        format!("max abs error {worst:.2e} over 1000 cases in {took:.2?}"),
    )
}

fn c2_two_condition() -> Verdict {
    let mut rng = seeded(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=16);
        let e: Vec<Tensor> = (0..3).map(|_| random_vec(&mut rng, n)).collect();
        let s = GuidanceScales {
            image: rng.random_range(-5.0..10.0),
            text: rng.random_range(-5.0..10.0),
            visual: rng.random_range(-100.0..100.0),
        };
        let three = cfg_compose(&e[0], &e[1], &e[2], Some(&e[2]), &s).unwrap();
        let two: Vec<f64> = (0..n)
            .map(|k| {
                let (u, i, t) = (e[0].data()[k], e[1].data()[k], e[2].data()[k]);
                u + s.image * (i - u) + s.text * (t - i)
            })
            .collect();
        if three.data() != two.as_slice() {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} of 1000 cases differ from the two-condition form"))
}

fn c3_null_visual() -> Verdict {
    let mut rng = seeded(3);
    let mut mismatches = 0;
    for _ in 0..500 {
        let d_model = rng.random_range(1..=8);
        let d = rng.random_range(1..=8);
        let d_cond = rng.random_range(1..=8);
        let experts = rng.random_range(1..=4);
        let p = AttentionParams::random(&mut rng, d_model, d);
        let bank = ExpertBank {
            experts: (0..experts)
                .map(|_| editforge::attention::ExpertParams {
                    w_k: normal_tensor(&mut rng, &[d_cond, d], 1.0),
                    w_v: normal_tensor(&mut rng, &[d_cond, d], 1.0),
                })
                .collect(),
        };
        let (rows, keys) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let z = normal_tensor(&mut rng, &[rows, d_model], 1.0);
        let c = normal_tensor(&mut rng, &[keys, d_model], 1.0);
        let weights = vec![1.0 / experts as f64; experts];
        let a = decoupled_attention(&z, &c, None, &p, &bank, &weights).unwrap();
        let b = text_cross_attention(&z, &c, &p).unwrap();
        if a.data().iter().zip(b.data()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} of 500 configurations differ bitwise"))
}

fn c4_gradients() -> Verdict {
    let start = Instant::now();
    let results = gradients::gradient_suite();
    let took = start.elapsed();
    let (worst_name, worst) = results
        .iter()
        .fold(("", 0.0f64), |acc, (n, e)| if *e > acc.1 { (n, *e) } else { acc });
    check(
        worst < gradients::TOLERANCE && took < Duration::from_secs(60),
        format!("{} checks, worst relative error {worst:.2e} ({worst_name}) in {took:.2?}", results.len()),
    )
}

/// Expected expert (one-based) for each task.
const EXPERT_TABLE: [(&str, usize); 25] = [
    ("tone transfer", 1),
    ("background change", 1),
    ("style change", 1),
    ("implicit change", 2),
    ("relation change", 2),
    ("add", 3),
    ("remove", 3),
    ("replace", 3),
    ("color alter", 3),
    ("appearance alter", 3),
    ("material change", 3),
    ("action change", 3),
    ("textual change", 3),
    ("counting", 3),
    ("movement", 4),
    ("outpaint", 4),
    ("resize", 4),
    ("rotation change", 4),
    ("visual layout", 5),
    ("visual depth", 6),
    ("material transfer", 7),
    ("image reference", 8),
    ("visual scribble", 9),
    ("visual segmentation", 10),
    ("visual sketch", 11),
];

fn c5_routing() -> Verdict {
    let model = AnySdModel::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    for (name, expert) in EXPERT_TABLE {
        let task: EditTaskType = name.parse().map_err(|_| format!("unknown task {name}"))?;
        let w = model.routing_weights(task).unwrap();
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || w.iter().any(|&x| x < 0.0) {
            problems.push(format!("{name}: weights sum to {sum}"));
        }
        let top = editforge::attention::argmax(&w) + 1;
        if top != expert {
            problems.push(format!("{name}: argmax expert {top}, table {expert}"));
        }
    }
    check(problems.is_empty(), if problems.is_empty() { "25 tasks on the simplex, argmax matches the table".into() } else { problems.join("; ") })
}

fn c6_overfit() -> Verdict {
    let start = Instant::now();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (_, report) = single.install(run_overfit).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let ratio = report.final_eval_loss / report.initial_eval_loss;
    check(
        ratio < 0.1 && report.loss_history.len() == OVERFIT_STEPS && took < Duration::from_secs(300),
        format!(
            "{OVERFIT_PAIRS} pairs, {} steps at lr {OVERFIT_LEARNING_RATE:e}: loss {:.4} -> {:.4} (ratio {ratio:.4}) in {took:.1?} on one thread",
            report.loss_history.len(),
            report.initial_eval_loss,
            report.final_eval_loss
        ),
    )
}

fn c7_ablation() -> Verdict {
    let runs = run_routing_ablation(&[RoutingMode::Soft, RoutingMode::Shared]).map_err(|e| e.to_string())?;
    let (soft, shared) = (&runs[0], &runs[1]);
    check(
        soft.final_eval_loss < shared.final_eval_loss && soft.router_delta > 0.0,
        format!(
            "routed {:.5} vs shared {:.5} final loss; router moved {:.3}",
            soft.final_eval_loss, shared.final_eval_loss, soft.router_delta
        ),
    )
}

fn freeze_data() -> Vec<EditExample> {
    let mut rng = seeded(3);
    (0..4)
        .map(|i| {
            let scene = Scene::centered(&mut rng);
            let mut ex = recolor_example(&scene, if scene.color == "red" { "blue" } else { "red" }, 8, 8);
            ex.task = if i % 2 == 0 { EditTaskType::ColorAlter } else { EditTaskType::ImageReference };
            ex.reference = Some(scene.render(8, 8));
            ex
        })
        .collect()
}

fn c8_stage_freeze() -> Verdict {
    let cfg = TrainConfig {
        steps: 3,
        batch_size: 4,
        learning_rate: 1e-3,
        optimizer: OptimizerKind::adam(),
        eval_draws: 1,
        ..TrainConfig::default()
    };
    let data = freeze_data();
    let mut m = AnySdModel::new(ModelConfig::tiny()).unwrap();
    let snap = |m: &AnySdModel| -> Vec<(String, StageTag, Tensor)> {
        m.store.iter().map(|(_, p)| (p.name.clone(), p.stage, p.tensor.clone())).collect()
    };
    let diff = |before: &[(String, StageTag, Tensor)], m: &AnySdModel| -> Vec<String> {
        before.iter().filter(|(n, _, t)| m.param(n).unwrap() != t).map(|(n, _, _)| n.clone()).collect()
    };
    let tagged = |before: &[(String, StageTag, Tensor)], tag| -> Vec<String> {
        before.iter().filter(|(_, s, _)| *s == tag).map(|(n, _, _)| n.clone()).collect()
    };
    let s0 = snap(&m);
    train_stage1(&mut m, &data, &cfg).unwrap();
    let stage1_ok = diff(&s0, &m) == tagged(&s0, StageTag::Backbone);
    let s1 = snap(&m);
    train_stage2(&mut m, &data, &cfg).unwrap();
    let stage2_ok = diff(&s1, &m) == tagged(&s1, StageTag::Adapter);
    check(
        stage1_ok && stage2_ok,
        format!(
            "stage 1 changed exactly the {} backbone tensors: {stage1_ok}; stage 2 changed exactly the {} adapter tensors: {stage2_ok}",
            tagged(&s0, StageTag::Backbone).len(),
            tagged(&s1, StageTag::Adapter).len()
        ),
    )
}

fn c9_metrics() -> Verdict {
    let ev = |v: &[f64]| EmbeddingVector {
        values: v.to_vec(),
        provider: "p".into(),
    };
    let mut rng = seeded(9);
    let mut problems = Vec::new();
    for _ in 0..200 {
        let img = Tensor::new(&[4, 5, 3], (0..60).map(|_| rng.random::<f64>()).collect()).unwrap();
        if l1_distance(&img, &img).unwrap() != 0.0 {
            problems.push("l1(identical) != 0");
        }
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c = cosine(&ev(&v), &ev(&v)).unwrap();
        if c.value != 1.0 || c.degenerate {
            problems.push("cosine(identical) != 1");
        }
        let t: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let u: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d = directional_similarity(&ev(&v), &ev(&v), &ev(&t), &ev(&u)).unwrap();
        if d.value != 0.0 || !d.degenerate {
            problems.push("directional(no-op) is not flagged zero");
        }
    }
    problems.dedup();

    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.jsonl");
    let summary = dir.path().join("summary.json");
    run_ok(&[
        "filter",
        "--input",
        s(&toy50().join("manifest.jsonl")),
        "--output",
        s(&report),
        "--summary",
        s(&summary),
    ]);
    if read(&report) != read(toy50().join("golden_report.jsonl")) {
        problems.push("gauntlet report differs from golden");
    }
    if read(&summary) != read(toy50().join("golden_summary.json")) {
        problems.push("gauntlet summary differs from golden");
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "analytic cases exact on 200 draws; 50-record report and summary match golden bytes".into()
        } else {
            problems.join("; ")
        },
    )
}

fn c10_masks() -> Verdict {
    let mut rng = seeded(10);
    let (mut worst, mut extensive, mut boundary) = (0.0f64, true, true);
    for _ in 0..200 {
        let r = oracles::run_case(&mut rng);
        worst = worst.max(r.max_err);
        extensive &= r.extensive;
        boundary &= r.merge_boundary;
    }
    check(
        worst < 1e-9 && extensive && boundary,
        format!("max oracle error {worst:.2e} over 200 cases; extensive {extensive}; merge boundary {boundary}"),
    )
}

fn c11_protocol() -> Verdict {
    let mut problems = Vec::new();
    let cat = "{'edit': 'add a hat to the cat', 'edited object': 'hat', 'output': 'Beautiful cat wearing a hat with mojito sitting in a cafe on the street.'}";
    match parse_response(cat) {
        Ok(f) if f
            == (ResponseFields {
                edit: "add a hat to the cat".into(),
                edited_object: "hat".into(),
                output: "Beautiful cat wearing a hat with mojito sitting in a cafe on the street.".into(),
            }) => {}
        other => problems.push(format!("cat/hat example parsed to {other:?}")),
    }

    let stub = StubTextGenerator;
    let generator = Generator::new(&stub);
    let items: Vec<(String, EditTaskType)> = (0..100)
        .map(|i| {
            let scene = Scene::random(&mut derive(17, &format!("scene/{i}")));
            (scene.caption(), EditTaskType::ALL[i % 25])
        })
        .collect();
    let mut pool = InContextPool::seeded();
    let before = pool.total();
    let out = generator.generate_batch(&items, &mut pool, 23).map_err(|e| e.to_string())?;
    let accepted = out.iter().filter(|o| matches!(o, Outcome::Accepted { .. })).count();
    if pool.total() - before != accepted {
        problems.push(format!("pool grew {} for {accepted} acceptances", pool.total() - before));
    }

    let desk = EditRecord::new(
        EditTaskType::ActionChange,
        "a static desk in an office",
        ResponseFields {
            edit: "change the action of the static desk".into(),
            edited_object: "desk".into(),
            output: "a desk walking across an office".into(),
        },
    );
    let v = validate_instruction(&desk, &VerbConstraints::default());
    if v != [Violation::InanimateActionTarget] {
        problems.push(format!("inanimate fixture gave {v:?}"));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("cat/hat exact; 100 generations, {accepted} accepted = pool growth; desk rejected ({})", v[0].code())
        } else {
            problems.join("; ")
        },
    )
}

/// gen-instructions -> synthesize -> filter -> train stage 1 -> edit in
/// `dir`, with relative paths so two runs are comparable byte for byte.
fn pipeline(dir: &Path) {
    std::fs::write(
        dir.join("config.json"),
        r#"{"seed": 3, "image_size": 16, "thresholds": {"min_resolution": 16}, "stage1": {"steps": 15}}"#,
    )
    .unwrap();
    let run = |args: &[&str]| {
        let out = editforge()
            .current_dir(dir)
            .args(["--config", "config.json", "--stub-providers"])
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["gen-instructions", "--toy", "24", "--output", "records.jsonl", "--pool-out", "pool.jsonl"]);
    run(&["synthesize", "--input", "records.jsonl", "--output-dir", "data"]);
    run(&["filter", "--input", "data/manifest.jsonl", "--output", "report.jsonl", "--accepted", "data/accepted.jsonl"]);
    run(&["train", "--input", "data/accepted.jsonl", "--checkpoint", "ckpt"]);
    run(&[
        "edit",
        "--checkpoint",
        "ckpt",
        "--image",
        "data/images/0000.png",
        "--instruction",
        "make the square red",
        "--output",
        "edited.png",
        "--report",
        "edit.json",
    ]);
}

fn c12_determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    if fa != fb {
        return Err(format!("file sets differ: {fa:?} vs {fb:?}"));
    }
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| read(a.path().join(f)) != read(b.path().join(f)))
        .map(|f| f.display().to_string())
        .collect();
    let has = |name: &str| fa.iter().any(|f| f.to_str() == Some(name));
    let complete = ["records.jsonl", "report.jsonl", "ckpt/manifest.json", "edited.png", "edit.json"]
        .iter()
        .all(|n| has(n));
    check(
        differing.is_empty() && complete,
        format!("{} artifacts, {} differ {differing:?}; pipeline complete: {complete}", fa.len(), differing.len()),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 12] = [
        ("CFG collapse identity", c1_cfg_collapse),
        ("two-condition reduction", c2_two_condition),
        ("null-visual attention reduction", c3_null_visual),
        ("gradient suite", c4_gradients),
        ("routing configuration", c5_routing),
        ("toy overfit", c6_overfit),
        ("routing ablation direction", c7_ablation),
        ("stage-freeze contracts", c8_stage_freeze),
        ("metric gauntlet", c9_metrics),
        ("mask algebra oracles", c10_masks),
        ("instruction protocol", c11_protocol),
        ("end-to-end determinism", c12_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match verdict {
            Ok(d) => println!("[PASS] {:>2}. {name}: {d}", i + 1),
            Err(d) => {
                println!("[FAIL] {:>2}. {name}: {d}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
