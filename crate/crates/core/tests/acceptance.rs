//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smplgait::checkpoint::Checkpoint;
use smplgait::eval::{
    evaluate_embeddings, load_embeddings, partition, query_metrics, save_embeddings, EmbeddingRecord, EvalConfig,
    RetrievalReport,
};
use smplgait::losses::LossConfig;
use smplgait::manifest::{DatasetManifest, Split};
use smplgait::nn::ParamStore;
use smplgait::pipeline::{embed_test_splits, evaluate_model, load_train_set};
use smplgait::preprocess::PreprocessConfig;
use smplgait::synth::{generate_dataset, SplitMode, SynthConfig, ViewCluster};
use smplgait::train::{TrainConfig, Trainer, FINAL_CHECKPOINT, LOG_FILE};
use smplgait::{GaitSample, Mode, ModelConfig, PartEmbedding, SmplGait};

use common::{gradient_check, mini_trainer, random_batch, random_sample};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant, detail: String) -> Outcome {
    let took = start.elapsed();
    ensure(took < limit, format!("{detail}, {:.1}s (limit {}s)", took.as_secs_f64(), limit.as_secs()))
}

fn desk_3d() -> ModelConfig {
    ModelConfig {
        stn_dropout: vec![0.0; 3],
        ..ModelConfig::desk()
    }
}

fn max_abs_diff(a: &PartEmbedding, b: &PartEmbedding) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn zeroed_stn_equals_plain_pipeline() -> Outcome {
    let start = Instant::now();
    let cfg = desk_3d();
    let mut store = ParamStore::new();
    let with_3d = SmplGait::new(&cfg, &mut store, 5).map_err(|e| e.to_string())?;
    with_3d.zero_stn_output(&mut store);
    let plain_cfg = ModelConfig {
        enable_3d_branch: false,
        ..cfg.clone()
    };
    let mut plain_store = ParamStore::new();
    let plain = SmplGait::new(&plain_cfg, &mut plain_store, 6).map_err(|e| e.to_string())?;
    plain_store.copy_from(&store).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let frames = rng.random_range(1..6);
        let s = random_sample(&mut rng, i, frames, cfg.input_height, cfg.input_width);
        let a = with_3d.embed_sequence(&store, &s, Mode::Eval).map_err(|e| e.to_string())?;
        let b = plain.embed_sequence(&plain_store, &s, Mode::Eval).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&a, &b));
    }
    let detail = format!("100 inputs, max abs diff {worst:e}");
    ensure(worst == 0.0, detail.clone())?;
    within(Duration::from_secs(60), start, detail)
}

fn gradients_match_finite_differences() -> Outcome {
    let start = Instant::now();
    let mut groups = 0;
    let mut worst = (String::new(), 0.0f64);
    for (enable_3d, seed) in [(true, 17), (false, 17)] {
        let mut t = mini_trainer(enable_3d);
        for g in gradient_check(&mut t, &random_batch(seed), 1e-5) {
            groups += 1;
            if g.rel_err >= worst.1 {
                worst = (g.name, g.rel_err);
            }
        }
    }
    let detail = format!("{groups} groups, worst {} rel err {:.2e}", worst.0, worst.1);
    ensure(worst.1 < 1e-4, detail.clone())?;
    within(Duration::from_secs(300), start, detail)
}

fn shuffled(s: &GaitSample, rng: &mut ChaCha8Rng) -> GaitSample {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.shuffle(rng);
    s.select(&order).unwrap()
}

fn frame_order_is_irrelevant() -> Outcome {
    let cfg = desk_3d();
    let mut store = ParamStore::new();
    let model = SmplGait::new(&cfg, &mut store, 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut differing = 0;
    for i in 0..50 {
        let frames = rng.random_range(2..20);
        let s = random_sample(&mut rng, i, frames, cfg.input_height, cfg.input_width);
        let base = model.embed_sequence(&store, &s, Mode::Eval).map_err(|e| e.to_string())?;
        let perm = model
            .embed_sequence(&store, &shuffled(&s, &mut rng), Mode::Eval)
            .map_err(|e| e.to_string())?;
        let same = base.values.iter().zip(&perm.values).all(|(a, b)| a.to_bits() == b.to_bits());
        differing += usize::from(!same);
    }
    ensure(differing == 0, format!("50 sequences, {differing} not bit-identical"))
}

/// Direct-definition metrics of one query: cosine per part, averaged, sorted
/// descending; precision at every hit; rank of the last hit.
struct Oracle {
    rank1: f64,
    rank5: f64,
    ap: f64,
    inp: f64,
}

fn oracle(q: &PartEmbedding, q_subject: u32, gallery: &[EmbeddingRecord]) -> Option<Oracle> {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut scored: Vec<(f64, bool)> = gallery
        .iter()
        .map(|g| {
            let s: f64 = (0..q.parts).map(|p| cos(q.part(p), g.embedding.part(p))).sum::<f64>() / q.parts as f64;
            (s, g.subject_id == q_subject)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let positives = scored.iter().filter(|s| s.1).count();
    if positives == 0 {
        return None;
    }
    let mut hits = 0;
    let mut ap = 0.0;
    let mut last = 0;
    for (k, s) in scored.iter().enumerate() {
        if s.1 {
            hits += 1;
            ap += hits as f64 / (k + 1) as f64;
            last = k + 1;
        }
    }
    let hit_within = |n: usize| f64::from(u8::from(scored.iter().take(n).any(|s| s.1)));
    Some(Oracle {
        rank1: hit_within(1),
        rank5: hit_within(5),
        ap: ap / positives as f64,
        inp: positives as f64 / last as f64,
    })
}

fn record(rng: &mut ChaCha8Rng, i: usize, subjects: u32, split: Split) -> EmbeddingRecord {
    let (parts, dim) = (3, 4);
    let values = (0..parts * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    EmbeddingRecord {
        sequence_id: format!("{split}{i}"),
        subject_id: rng.random_range(0..subjects),
        camera_id: 0,
        split,
        embedding: PartEmbedding::new(parts, dim, values).unwrap(),
    }
}

fn metrics_match_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut count_mismatch = 0;
    for _ in 0..200 {
        let subjects = rng.random_range(2..6);
        let nq = rng.random_range(1..6);
        let ng = rng.random_range(1..=20);
        let query: Vec<_> = (0..nq).map(|i| record(&mut rng, i, subjects, Split::Query)).collect();
        let gallery: Vec<_> = (0..ng).map(|i| record(&mut rng, i, subjects, Split::Gallery)).collect();
        let report = evaluate_embeddings(&query, &gallery, &EvalConfig::default()).map_err(|e| e.to_string())?;
        let per: Vec<Oracle> = query
            .iter()
            .filter_map(|q| oracle(&q.embedding, q.subject_id, &gallery))
            .collect();
        if per.len() != report.metrics.evaluated || nq - per.len() != report.metrics.skipped {
            count_mismatch += 1;
            continue;
        }
        if per.is_empty() {
            continue;
        }
        let mean = |f: fn(&Oracle) -> f64| per.iter().map(f).sum::<f64>() / per.len() as f64;
        let m = &report.metrics;
        for (got, want) in [
            (m.rank1, mean(|o| o.rank1)),
            (m.rank5, mean(|o| o.rank5)),
            (m.map, mean(|o| o.ap)),
            (m.minp, mean(|o| o.inp)),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    let (ap, inp) = query_metrics(&[true, false, true]).ok_or("worked example skipped")?;
    let worked = (ap - 5.0 / 6.0).abs() < 1e-12 && (inp - 2.0 / 3.0).abs() < 1e-12;
    ensure(
        worst <= 1e-9 && count_mismatch == 0 && worked,
        format!(
            "200 instances, max diff {worst:e}, {count_mismatch} count mismatches; [1,0,1] -> AP {ap:.4}, INP {inp:.4}"
        ),
    )
}

fn shape_contract() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (h, w, map, g) in [(128, 88, (256, 32, 22), 704), (64, 44, (256, 16, 11), 176)] {
        let cfg = ModelConfig::default().with_input(h, w);
        let mut store = ParamStore::new();
        let model = SmplGait::new(&cfg, &mut store, 0).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = random_sample(&mut rng, 0, 1, h, w);
        let fm = model.sln_forward(&store, s.frames()).map_err(|e| e.to_string())?;
        let tv = model.stn_forward(&store, s.smpls(), Mode::Eval).map_err(|e| e.to_string())?;
        let got_map = fm[0].shape();
        let got_g = tv[0].values.len();
        ok &= got_map == map && got_g == g;
        lines.push(format!("{w}x{h}: map {got_map:?} |g| {got_g}"));
        if h == 128 {
            let e = model.embed_sequence(&store, &s, Mode::Eval).map_err(|e| e.to_string())?;
            ok &= (e.parts, e.dim) == (31, 256);
            lines.push(format!("embedding {}x{}", e.parts, e.dim));
        }
    }
    ensure(ok, lines.join("; "))
}

fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        ids_per_batch: 4,
        samples_per_id: 4,
        frames: 8,
        // 32 training sequences / 16 per batch = 2 iterations per epoch
        epochs: 150,
        lr_milestones: vec![],
        seed,
        ..TrainConfig::default()
    }
}

fn desk_dataset(dir: &Path, views: Vec<ViewCluster>, mode: SplitMode) -> Result<DatasetManifest, String> {
    let cfg = SynthConfig {
        num_subjects: 16,
        sequences_per_subject: 4,
        min_frames: 60,
        max_frames: 60,
        views,
        input_height: 32,
        input_width: 24,
        seed: 7,
        ..SynthConfig::default()
    };
    generate_dataset(&cfg, dir, mode).map_err(|e| e.to_string())
}

fn desk_pre() -> PreprocessConfig {
    PreprocessConfig::with_size(32, 24)
}

/// Trains on the manifest's training split and evaluates the final model.
fn train_and_evaluate(
    manifest: &DatasetManifest,
    model: ModelConfig,
    train: TrainConfig,
) -> Result<(RetrievalReport, u64), String> {
    let data = load_train_set(manifest, &desk_pre()).map_err(|e| e.to_string())?;
    let mut t = Trainer::new(model, LossConfig::default(), train, data.classes.clone()).map_err(|e| e.to_string())?;
    t.run(&data, None).map_err(|e| e.to_string())?;
    let report = evaluate_model(&t.model, &t.store, manifest, &desk_pre(), &EvalConfig::default())
        .map_err(|e| e.to_string())?;
    Ok((report, t.iteration))
}

fn desk_overfit() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let single = vec![ViewCluster {
        center_deg: 0.0,
        spread_deg: 0.0,
    }];
    let manifest = desk_dataset(dir.path(), single, SplitMode::Standard)?;
    let (report, iters) = train_and_evaluate(&manifest, ModelConfig::desk(), desk_train_config(0))?;
    let r1 = report.metrics.rank1;
    let detail = format!("Rank-1 {r1:.3} after {iters} iterations");
    ensure(r1 >= 0.95 && iters <= 300, detail.clone())?;
    within(Duration::from_secs(600), start, detail)
}

fn branch_helps_across_views() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let views = vec![
        ViewCluster {
            center_deg: 0.0,
            spread_deg: 10.0,
        },
        ViewCluster {
            center_deg: 80.0,
            spread_deg: 10.0,
        },
    ];
    let manifest = desk_dataset(dir.path(), views, SplitMode::Confounded)?;
    let mut with = Vec::new();
    let mut without = Vec::new();
    for seed in 0..3 {
        for enable_3d in [true, false] {
            let cfg = ModelConfig {
                enable_3d_branch: enable_3d,
                ..ModelConfig::desk()
            };
            let (report, _) = train_and_evaluate(&manifest, cfg, desk_train_config(seed))?;
            if enable_3d { &mut with } else { &mut without }.push(report.metrics.map);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    ensure(
        mean(&with) > mean(&without),
        format!(
            "mAP with 3D {:.3} ({}) vs without {:.3} ({})",
            mean(&with),
            fmt(&with),
            mean(&without),
            fmt(&without)
        ),
    )
}

fn schedule_conformance() -> Outcome {
    let cfg = TrainConfig::default();
    let bad: Vec<usize> = (0..cfg.epochs)
        .filter(|&e| {
            let want = match e {
                0..200 => 1e-3,
                200..600 => 1e-4,
                _ => 1e-5,
            };
            cfg.lr_at(e) != want
        })
        .collect();
    ensure(
        bad.is_empty(),
        format!("{} epochs checked, {} mismatches {:?}", cfg.epochs, bad.len(), &bad[..bad.len().min(5)]),
    )
}

fn small_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        ids_per_batch: 4,
        samples_per_id: 2,
        frames: 6,
        epochs: 4,
        lr_milestones: vec![2],
        seed,
        ..TrainConfig::default()
    }
}

fn determinism_and_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let synth = SynthConfig {
        num_subjects: 8,
        sequences_per_subject: 3,
        min_frames: 25,
        max_frames: 30,
        input_height: 32,
        input_width: 24,
        noise: 0.1,
        ..SynthConfig::default()
    };
    let manifest = generate_dataset(&synth, &root.join("data"), SplitMode::Standard).map_err(|e| e.to_string())?;
    let data = load_train_set(&manifest, &desk_pre()).map_err(|e| e.to_string())?;
    let e = |e: smplgait::GaitError| e.to_string();
    let mut logs = Vec::new();
    let mut last = None;
    for run in ["a", "b"] {
        let out = root.join(run);
        let mut t = Trainer::new(desk_3d(), LossConfig::default(), small_train_config(9), data.classes.clone()).map_err(e)?;
        t.run(&data, Some(&out)).map_err(e)?;
        logs.push(std::fs::read_to_string(out.join(LOG_FILE)).map_err(|e| e.to_string())?);
        last = Some(t);
    }
    let trainer = last.unwrap();
    let logs_equal = logs[0] == logs[1] && logs[0].lines().count() > 1;

    let eval = EvalConfig::default();
    let pre = desk_pre();
    let direct = evaluate_model(&trainer.model, &trainer.store, &manifest, &pre, &eval).map_err(e)?;
    let ckpt = Checkpoint::load(root.join("b").join(FINAL_CHECKPOINT)).map_err(e)?;
    let (model, store) = ckpt.build_model().map_err(e)?;
    let reloaded = evaluate_model(&model, &store, &manifest, &pre, &eval).map_err(e)?;
    let reload_equal = direct.to_csv() == reloaded.to_csv() && direct.summary_json() == reloaded.summary_json();

    let emb_path = root.join("emb.bin");
    save_embeddings(&emb_path, &embed_test_splits(&model, &store, &manifest, &pre, &eval).map_err(e)?).map_err(e)?;
    let (q, g) = partition(load_embeddings(&emb_path).map_err(e)?);
    let staged = evaluate_embeddings(&q, &g, &eval).map_err(e)?;
    let staged_equal = staged.to_csv() == reloaded.to_csv() && staged.summary_json() == reloaded.summary_json();

    ensure(
        logs_equal && reload_equal && staged_equal,
        format!(
            "identical logs {logs_equal} ({} rows), reload report equal {reload_equal}, embed-then-evaluate equal {staged_equal}",
            logs[0].lines().count() - 1
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("zeroed 3D branch equals silhouette-only pipeline", zeroed_stn_equals_plain_pipeline),
        ("analytic gradients match finite differences", gradients_match_finite_differences),
        ("embedding invariant to frame order", frame_order_is_irrelevant),
        ("retrieval metrics match brute-force oracle", metrics_match_oracle),
        ("feature map, transform and embedding shapes", shape_contract),
        ("desk-scale training reaches Rank-1 >= 0.95", desk_overfit),
        ("3D branch improves cross-view mAP", branch_helps_across_views),
        ("learning-rate schedule", schedule_conformance),
        ("determinism and checkpoint/embedding round trips", determinism_and_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
