use std::collections::HashMap;
use std::path::Path;

use scribcod::debate::{EndpointDescriptor, Script, Verdict};
use scribcod::losses::{build_mixed_target, Supervision};
use scribcod::pipeline::{
    evaluate, ingest_dataset, load_eval_set, lr_at, prepare_training_set, run_stage1, synthetic_sample,
    write_fixture_corpus, FixedPredictor, PipelineConfig, Split, Stage1Backends, Stage1Options, TrainSample, Trainer,
    IMAGE_EXTENSIONS, LAST_CHECKPOINT,
};
use scribcod::raster::save_mask;

fn toy() -> PipelineConfig {
    PipelineConfig::preset(true)
}

#[test]
fn three_image_fixture_gives_three_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy();
    write_fixture_corpus(dir.path(), &cfg.layout, 3, 32, 0).unwrap();
    let m = ingest_dataset(dir.path(), &cfg.layout, Split::Train).unwrap();
    assert_eq!(m.records.len(), 3);
    assert_eq!(m.usable().count(), 3);
}

#[test]
fn missing_scribble_flags_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy();
    write_fixture_corpus(dir.path(), &cfg.layout, 3, 32, 0).unwrap();
    std::fs::remove_file(dir.path().join(&cfg.layout.scribbles).join("fixture_01.png")).unwrap();
    let m = ingest_dataset(dir.path(), &cfg.layout, Split::Train).unwrap();
    let flagged: Vec<&str> = m.flagged().map(|r| r.image_id.as_str()).collect();
    assert_eq!(flagged, ["fixture_01"]);
    // Evaluation does not need scribbles.
    let eval = ingest_dataset(dir.path(), &cfg.layout, Split::Eval).unwrap();
    assert_eq!(eval.usable().count(), 3);
}

#[test]
fn mixed_extension_corpus_matches_directory_walk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy();
    let images = dir.path().join(&cfg.layout.images);
    let scribbles = dir.path().join(&cfg.layout.scribbles);
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&scribbles).unwrap();
    for (i, ext) in ["png", "jpg", "bmp", "JPEG", "png"].iter().enumerate() {
        let s = synthetic_sample(format!("img{i}"), 32, i as u64).unwrap();
        s.image.save(images.join(format!("img{i}.{ext}"))).unwrap();
        s.scribbles.save(scribbles.join(format!("img{i}.png"))).unwrap();
    }
    std::fs::write(images.join("notes.txt"), "not an image").unwrap();
    std::fs::create_dir(images.join("nested.png")).unwrap();

    let mut walk: Vec<(String, String)> = std::fs::read_dir(&images)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .filter(|p| {
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_lowercase();
            IMAGE_EXTENSIONS.contains(&ext.as_str())
        })
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), p.to_string_lossy().into_owned()))
        .collect();
    walk.sort();

    let m = ingest_dataset(dir.path(), &cfg.layout, Split::Train).unwrap();
    let got: Vec<(String, String)> =
        m.records.iter().map(|r| (r.image_id.clone(), r.image.to_string_lossy().into_owned())).collect();
    assert_eq!(got, walk);
    assert_eq!(m.usable().count(), 5);
}

#[test]
fn empty_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ingest_dataset(dir.path(), &toy().layout, Split::Train).is_err());
}

fn stage1_with_judge(root: &Path, verdict: Verdict, max_new_images: Option<usize>) -> scribcod::pipeline::Stage1Summary {
    let mut cfg = toy();
    cfg.debate.judge = EndpointDescriptor::scripted(Script::Verdict { verdict });
    let data = root.join("data");
    if !data.exists() {
        write_fixture_corpus(&data, &cfg.layout, 3, 48, 2).unwrap();
    }
    let manifest = ingest_dataset(&data, &cfg.layout, Split::Train).unwrap();
    let backends = Stage1Backends::from_config(&cfg.debate, &manifest, root).unwrap();
    let options = Stage1Options {
        sampling: cfg.sampling,
        max_parallel: 2,
        logical_clock: true,
        max_new_images,
    };
    run_stage1(&manifest, &backends, &options, &root.join("stage1")).unwrap()
}

#[test]
fn retain_judge_accepts_every_oracle_mask() {
    let dir = tempfile::tempdir().unwrap();
    let summary = stage1_with_judge(dir.path(), Verdict::Retain, None);
    assert!(summary.complete);
    assert_eq!(summary.manifest.entries.len(), 3);
    for e in &summary.manifest.entries {
        assert!(dir.path().join("stage1").join(&e.mask_path).is_file());
    }
}

#[test]
fn discard_judge_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let summary = stage1_with_judge(dir.path(), Verdict::Discard, None);
    assert!(summary.complete);
    assert!(summary.manifest.entries.is_empty());
}

#[test]
fn interrupted_run_resumes_to_the_same_manifest() {
    let full = tempfile::tempdir().unwrap();
    let expected = stage1_with_judge(full.path(), Verdict::Retain, None);
    let resumed = tempfile::tempdir().unwrap();
    let partial = stage1_with_judge(resumed.path(), Verdict::Retain, Some(1));
    assert!(!partial.complete);
    assert_eq!(partial.manifest.entries.len(), 1);
    let finished = stage1_with_judge(resumed.path(), Verdict::Retain, None);
    assert!(finished.complete);
    assert_eq!(finished.manifest, expected.manifest);
    let read = |root: &Path| std::fs::read(scribcod::pipeline::pseudo_manifest_path(&root.join("stage1"))).unwrap();
    assert_eq!(read(full.path()), read(resumed.path()));
}

#[test]
fn training_set_uses_accepted_masks() {
    let dir = tempfile::tempdir().unwrap();
    let summary = stage1_with_judge(dir.path(), Verdict::Retain, None);
    let cfg = toy();
    let dataset = ingest_dataset(dir.path().join("data"), &cfg.layout, Split::Train).unwrap();
    let samples = prepare_training_set(&dataset, &summary.manifest, &dir.path().join("stage1"), &cfg).unwrap();
    assert_eq!(samples.len(), 3);
    assert!(samples.iter().all(|s| s.image.dim() == (64, 64) && s.target.mixed.dim() == (64, 64)));

    let empty = scribcod::debate::AcceptanceManifest::new();
    assert!(prepare_training_set(&dataset, &empty, &dir.path().join("stage1"), &cfg).is_err());
}

fn train_samples(n: usize) -> Vec<TrainSample> {
    (0..n)
        .map(|i| {
            let s = synthetic_sample(format!("s{i}"), 64, 50 + i as u64).unwrap();
            let target = build_mixed_target(&[s.ground_truth.clone()], &s.scribbles, 1).unwrap();
            TrainSample {
                image_id: s.image_id,
                image: s.image,
                target,
            }
        })
        .collect()
}

#[test]
fn resumed_training_reproduces_the_loss_trajectory() {
    let mut cfg = toy();
    cfg.train.batch_size = 2;
    cfg.train.epochs = 4;
    let samples = train_samples(3);
    let straight = Trainer::new(cfg.clone()).unwrap().run(&samples, None, None).unwrap();
    assert!(straight.complete);

    let dir = tempfile::tempdir().unwrap();
    let first = Trainer::new(cfg.clone()).unwrap().run(&samples, Some(dir.path()), Some(2)).unwrap();
    assert!(!first.complete);
    let mut resumed = Trainer::resume(cfg, &dir.path().join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(resumed.next_step(), first.history.len());
    let second = resumed.run(&samples, Some(dir.path()), None).unwrap();
    assert!(second.complete);

    let joined: Vec<_> = first.history.iter().chain(&second.history).collect();
    assert_eq!(joined.len(), straight.history.len());
    for (a, b) in straight.history.iter().zip(joined) {
        assert_eq!((a.epoch, a.step), (b.epoch, b.step));
        assert!((a.loss.total - b.loss.total).abs() <= 1e-5, "step {}: {} vs {}", a.step, a.loss.total, b.loss.total);
    }
    let log = std::fs::read_to_string(dir.path().join(scribcod::pipeline::TRAIN_LOG)).unwrap();
    assert_eq!(log.lines().count(), straight.history.len());
}

#[test]
fn mask_supervision_logs_zero_scribble_terms() {
    let mut cfg = toy();
    cfg.loss.supervision = Supervision::Mask;
    let report = Trainer::new(cfg).unwrap().run(&train_samples(2), None, Some(1)).unwrap();
    assert!(!report.history.is_empty());
    for step in &report.history {
        assert_eq!(step.loss.scrib, [0.0; 3]);
        assert_eq!(step.loss.debias, [0.0; 3]);
    }
}

#[test]
fn schedule_endpoints() {
    let cfg = PipelineConfig::full().train;
    let per_epoch = 10;
    let warmup = cfg.warmup_epochs * per_epoch;
    let last = cfg.epochs * per_epoch - 1;
    assert_eq!(lr_at(0, &cfg, per_epoch), 0.0);
    assert!((lr_at(warmup, &cfg, per_epoch) - 0.03).abs() < 1e-12);
    assert!(lr_at(last, &cfg, per_epoch) <= 1e-6 * 0.03 + 1e-3 * 0.03);
    assert!(lr_at(cfg.epochs * per_epoch, &cfg, per_epoch) <= 1e-6 * 0.03);
}

#[test]
fn ground_truth_predictor_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy();
    let samples = write_fixture_corpus(dir.path(), &cfg.layout, 3, 32, 9).unwrap();
    let manifest = ingest_dataset(dir.path(), &cfg.layout, Split::Eval).unwrap();
    let eval = load_eval_set(&manifest).unwrap();
    let predictor = FixedPredictor {
        maps: samples.iter().map(|s| (s.image_id.clone(), s.ground_truth.mapv(|b| b as u8 as f64))).collect::<HashMap<_, _>>(),
    };
    let table = evaluate(&predictor, &eval, "fixtures").unwrap();
    assert_eq!(table.images, 3);
    assert_eq!(table.mean.mae, 0.0);
    assert!((table.mean.s_measure - 1.0).abs() < 1e-9);
    table.write(&dir.path().join("out")).unwrap();
    assert!(evaluate(&predictor, &[], "empty").is_err());
}

#[test]
fn ground_truth_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy();
    write_fixture_corpus(dir.path(), &cfg.layout, 2, 32, 9).unwrap();
    let gt = dir.path().join(&cfg.layout.ground_truth).join("fixture_00.png");
    save_mask(&ndarray::Array2::from_elem((16, 16), true), &gt).unwrap();
    let manifest = ingest_dataset(dir.path(), &cfg.layout, Split::Eval).unwrap();
    assert_eq!(manifest.flagged().count(), 1);
}

#[test]
fn shipped_config_files_equal_the_presets() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (file, preset) in [("full.toml", PipelineConfig::full()), ("toy.toml", PipelineConfig::toy())] {
        let text = std::fs::read_to_string(configs.join(file)).unwrap();
        let parsed = PipelineConfig::from_toml_str(&text, &PipelineConfig::full()).unwrap();
        assert_eq!(parsed, preset, "{file}");
    }
}
