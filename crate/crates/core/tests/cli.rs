use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mix2::data::audio::write_wav_i16;
use mix2::data::{build_subset, cache, CountLaw, SubsetMode, SyntheticSpec};
use mix2::experiment::runner::{prepare, PredictionSet};
use mix2::experiment::ExperimentConfig;
use mix2::metrics::{binarize, per_class_f};
use mix2::nn::{predict_probabilities, train_epoch, AdamWConfig, AdamWState, Architecture, EpochConfig, TappedNetwork};
use mix2::mixops::{Mix2Policy, MixStrategy};

fn mix2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mix2"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let mut cfg = ExperimentConfig::default();
    cfg.data.synthetic = SyntheticSpec {
        n_classes: 5,
        counts: CountLaw::Explicit {
            counts: vec![80, 50, 30, 20, 12],
        },
        polyphony: vec![0.7, 0.3],
        feature_dim: 8,
        ..Default::default()
    };
    cfg.data.frequent_threshold = 40;
    cfg.data.common_threshold = 15;
    cfg.model.hidden = vec![12];
    cfg.training.epochs = 2;
    cfg.training.batch_size = 32;
    cfg.training.seeds = vec![1, 2, 3];
    let path = dir.join("tiny.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_is_deterministic_and_sidecar_matches_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mix2(&["gen-data", "--config", s(&cfg), "--seed", "11", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("train_count"));
    }
    let bytes = std::fs::read(a.join("features.bin")).unwrap();
    assert_eq!(bytes, std::fs::read(b.join("features.bin")).unwrap());

    let ds = cache::decode(&bytes, Path::new("features.bin")).unwrap();
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("features.json")).unwrap()).unwrap();
    let recount = ds.examples.iter().filter(|e| e.is_negative()).count() as f64 / ds.len() as f64;
    assert_eq!(sidecar["negative_fraction"].as_f64().unwrap(), recount);
    assert!((recount - 0.36).abs() < 0.01);
    for p in sidecar["profiles"].as_array().unwrap() {
        let n = p["train_count"].as_u64().unwrap();
        let expected = if n >= 40 {
            "frequent"
        } else if n >= 15 {
            "common"
        } else {
            "rare"
        };
        assert_eq!(p["group"], expected);
    }
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = mix2(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for seed in [1, 2, 3] {
        assert!(out.join(format!("checkpoints/seed{seed}.ckpt")).exists());
    }
    let log: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("train_log.json")).unwrap()).unwrap();
    assert_eq!(log.as_array().unwrap().len(), 3);

    let o = mix2(&["eval", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let eval_dir = out.join("eval/seed2");
    for f in ["report.json", "report.csv", "predictions.json"] {
        assert!(eval_dir.join(f).exists(), "{f}");
    }

    // Every reported cell is recomputable from the stored predictions.
    let preds: PredictionSet =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("predictions.json")).unwrap()).unwrap();
    let stored: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    let recomputed = preds.report(None).unwrap();
    assert_eq!(serde_json::to_value(&recomputed).unwrap(), stored);
    let bin = binarize(&preds.probability_matrix().unwrap(), 0.5).unwrap();
    let (_, f) = per_class_f(bin.view(), preds.label_matrix().unwrap().view()).unwrap();
    let ids: Vec<Option<f64>> = recomputed.classes.iter().map(|c| c.f_score).collect();
    assert_eq!(ids, f);

    let o = mix2(&["report", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("table.csv")).unwrap();
    assert!(table.starts_with(
        "policy,frequent_mean,frequent_std,common_mean,common_std,rare_mean,rare_std,all_mean,all_std\n"
    ));
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn ablate_grid_bookkeeping() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("grid");
    let o = Command::new(env!("CARGO_BIN_EXE_mix2"))
        .args(["ablate", "--config", s(&cfg), "--out", s(&out)])
        .env("MIX2_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let runs: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("runs.json")).unwrap()).unwrap();
    assert_eq!(runs.as_array().unwrap().len(), 24);
    let table = std::fs::read_to_string(out.join("table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    let policies: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(
        policies,
        ["none", "mixup", "manifold", "multimix", "mixup+manifold", "mixup+multimix", "manifold+multimix", "mix2"]
    );
    let plot = std::fs::read_to_string(out.join("plots/polyphony_mix2.csv")).unwrap();
    assert!(plot.starts_with("polyphony_level,macro_f,std\n1,"));
    let mix2_log: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("runs/mix2/seed1/train_log.json")).unwrap()).unwrap();
    assert_eq!(mix2_log["weights"], serde_json::json!([0.0, 0.25, 0.5, 0.25]));
}

#[test]
fn duplicate_seeds_have_zero_std() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_config(dir.path());
    let mut cfg = ExperimentConfig::load(&base).unwrap();
    cfg.training.seeds = vec![4, 4];
    cfg.output.dir = dir.path().join("dup");
    let summary = mix2::experiment::cmd_ablate(&cfg).unwrap();
    for p in &summary.policies {
        for c in [p.row.frequent, p.row.common, p.row.rare, p.row.all] {
            if c.mean.is_some() {
                assert_eq!(c.std, Some(0.0), "{}", p.policy);
            }
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mix2(&["train", "--policy", "cutmix"])), 1);
    assert_eq!(code(&mix2(&["eval", "--subset", "37"])), 1);
    assert_eq!(code(&mix2(&["frobnicate"])), 1);
    assert_eq!(code(&mix2(&["--help"])), 0);
    let missing = dir.path().join("none.toml");
    assert_eq!(code(&mix2(&["train", "--config", s(&missing)])), 2);
    let cfg = tiny_config(dir.path());
    assert_eq!(code(&mix2(&["report", "--out", s(dir.path())])), 2);
    assert_eq!(code(&mix2(&["train", "--config", s(&cfg), "--threshold", "2"])), 1);

    let lr = dir.path().join("diverge.toml");
    let mut c = ExperimentConfig::load(&cfg).unwrap();
    c.optimizer.lr = 1e200;
    c.training.seeds = vec![0];
    std::fs::write(&lr, c.to_toml()).unwrap();
    let o = mix2(&["train", "--config", s(&lr), "--out", s(&dir.path().join("d"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lr"));
}

#[test]
fn eval_names_both_shapes_on_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("m");
    assert_eq!(code(&mix2(&["train", "--config", s(&cfg), "--seed", "1", "--out", s(&out)])), 0);
    let mut other = ExperimentConfig::load(&cfg).unwrap();
    other.data.synthetic.feature_dim = 9;
    let other_path = dir.path().join("other.toml");
    std::fs::write(&other_path, other.to_toml()).unwrap();
    let o = mix2(&["eval", "--config", s(&other_path), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("expects 8 inputs") && err.contains("provides 9 inputs"), "{err}");
}

fn tone(seconds: usize, freq: f32) -> Vec<f32> {
    (0..seconds * 22_050)
        .map(|i| 0.3 * (2.0 * std::f32::consts::PI * freq * i as f32 / 22_050.0).sin())
        .collect()
}

#[test]
fn featurize_wav_directory() {
    let dir = tempfile::tempdir().unwrap();
    let audio = dir.path().join("audio");
    std::fs::create_dir(&audio).unwrap();
    write_wav_i16(&audio.join("recA.wav"), &tone(60, 1000.0), 22_050).unwrap();
    write_wav_i16(&audio.join("recB.wav"), &tone(4, 3000.0), 22_050).unwrap();
    std::fs::write(audio.join("broken.wav"), b"RIFF nonsense").unwrap();
    let mut csv = String::from("recording_id,offset_s,class_list\n");
    for k in 0..58 {
        let classes = if k % 3 == 0 { "" } else { "HYLMIN;BOAFAB" };
        csv.push_str(&format!("recA,{k},{classes}\n"));
    }
    csv.push_str("recB,0,BOAFAB\nrecB,1,\n");
    let ann = dir.path().join("ann.csv");
    std::fs::write(&ann, &csv).unwrap();

    let run = |out: &Path| {
        mix2(&["featurize", "--audio-dir", s(&audio), "--annotations", s(&ann), "--out", s(out)])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = run(&a);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("recA: 58 segments"));
    assert_eq!(code(&run(&b)), 0);
    let bytes = std::fs::read(a.join("features.bin")).unwrap();
    assert_eq!(bytes, std::fs::read(b.join("features.bin")).unwrap());

    let ds = cache::decode(&bytes, Path::new("f")).unwrap();
    assert_eq!(ds.len(), 60);
    assert_eq!(ds.feature_shape(), Some((128, 376)));
    assert_eq!(ds.class_names, ["BOAFAB", "HYLMIN"]);
    assert!(ds.examples[0].labels.iter().all(|&b| !b));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "recording_id,offset_s,class_list\nrecA,0,X\nrecA,zero,Y\n").unwrap();
    let o = mix2(&["featurize", "--audio-dir", s(&audio), "--annotations", s(&bad), "--out", s(&a)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let junk = dir.path().join("junk");
    std::fs::create_dir(&junk).unwrap();
    std::fs::write(junk.join("x.wav"), b"not audio").unwrap();
    let o = mix2(&["featurize", "--audio-dir", s(&junk), "--annotations", s(&ann), "--out", s(&a)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn memorizing_a_tiny_set_scores_near_one() {
    let spec = SyntheticSpec {
        n_classes: 3,
        counts: CountLaw::Explicit { counts: vec![12, 10, 8] },
        polyphony: vec![0.8, 0.2],
        negative_fraction: 0.2,
        feature_dim: 8,
        noise_std: 0.05,
        ..Default::default()
    };
    let ds = mix2::data::generate_synthetic(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = TappedNetwork::new(Architecture::new(8, vec![32], 3).unwrap(), &mut rng);
    let mut opt = AdamWState::new(AdamWConfig::default());
    let cfg = EpochConfig {
        policy: Mix2Policy::single(MixStrategy::NoMix),
        batch_size: 8,
        ..Default::default()
    };
    for _ in 0..200 {
        train_epoch(&mut net, &mut opt, &ds, &cfg, &mut rng).unwrap();
    }
    let probs = predict_probabilities(&net, &ds, cfg.view, 16).unwrap();
    let bin = binarize(&probs, 0.5).unwrap();
    let truth = mix2::metrics::labels_to_bool(&ds.label_matrix());
    let (_, f) = per_class_f(bin.view(), truth.view()).unwrap();
    let macro_f = mix2::metrics::macro_f_all(&f).unwrap();
    assert!(macro_f > 0.95, "{macro_f}");
}

#[test]
fn negative_free_subset_has_no_empty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&tiny_config(dir.path())).unwrap();
    cfg.data.subset = SubsetMode::DropNonOverlapAndNegatives;
    let prep = prepare(&cfg).unwrap();
    assert!(prep.split.test.examples.iter().all(|e| !e.is_negative()));
    assert!(prep.split.train.examples.iter().all(|e| !e.is_negative()));
    assert_eq!(build_subset(&prep.split, SubsetMode::DropNonOverlapAndNegatives), prep.split);
}
