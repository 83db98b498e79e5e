use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use univnet::dsp::{read_features, write_wav, AudioBuffer, SAMPLE_RATE};
use univnet::training::checkpoint_path;

fn univnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_univnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tone(seconds: f32, freq: f32) -> AudioBuffer {
    let sr = SAMPLE_RATE as f32;
    let n = (seconds * sr) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f32 / sr;
            0.2 * (std::f32::consts::TAU * freq * t).sin() + 0.05 * (std::f32::consts::TAU * 3.1 * freq * t).sin()
        })
        .collect();
    AudioBuffer::new(samples, SAMPLE_RATE).unwrap()
}

fn corpus(dir: &Path) -> PathBuf {
    let wavs = dir.join("wavs");
    std::fs::create_dir_all(&wavs).unwrap();
    for (name, secs, f) in [("a", 1.0, 180.0), ("b", 0.6, 220.0), ("c", 0.8, 140.0)] {
        write_wav(wavs.join(format!("{name}.wav")), &tone(secs, f)).unwrap();
    }
    wavs
}

const TINY_CONFIG: &str = r#"{
    "channels": 4, "batch_size": 1, "segment_frames": 8,
    "warmup_steps": 1, "total_steps": 2,
    "mrsd_channels": 2, "mpwd_channels": [2, 4]
}"#;

/// Extracts features and trains a two-step checkpoint; returns
/// (features dir, stats file, checkpoint).
fn trained(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let wavs = corpus(dir);
    let feats = dir.join("feats");
    let stats = dir.join("stats.uvs");
    let out = univnet(&["extract", "--wav-dir", path(&wavs), "--out-dir", path(&feats), "--stats-out", path(&stats)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let config = dir.join("config.json");
    std::fs::write(&config, TINY_CONFIG).unwrap();
    let run = dir.join("run");
    let out = univnet(&[
        "--config", path(&config), "--seed", "4", "train", "--wav-dir", path(&wavs), "--out-dir", path(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (feats, stats, checkpoint_path(&run, 2))
}

#[test]
fn extract_writes_one_feature_file_per_wav_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let wavs = corpus(dir.path());
    let extract = |name: &str| {
        let feats = dir.path().join(name);
        let stats = dir.path().join(format!("{name}.uvs"));
        let out = univnet(&["extract", "--wav-dir", path(&wavs), "--out-dir", path(&feats), "--stats-out", path(&stats)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (feats, stats)
    };
    let (feats, stats) = extract("f1");
    let mut names: Vec<String> = std::fs::read_dir(&feats)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["a.uvf", "b.uvf", "c.uvf"]);
    let a = read_features(feats.join("a.uvf")).unwrap();
    assert_eq!((a.n_frames, a.n_mels), (94, 100));
    assert!(a.normalized);

    let (feats2, stats2) = extract("f2");
    assert_eq!(std::fs::read(&stats).unwrap(), std::fs::read(&stats2).unwrap());
    for n in &names {
        assert_eq!(std::fs::read(feats.join(n)).unwrap(), std::fs::read(feats2.join(n)).unwrap());
    }
}

#[test]
fn extract_reports_unreadable_files_as_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let wavs = corpus(dir.path());
    std::fs::write(wavs.join("broken.wav"), b"RIFF but not really").unwrap();
    let out = univnet(&[
        "extract",
        "--wav-dir",
        path(&wavs),
        "--out-dir",
        path(&dir.path().join("f")),
        "--stats-out",
        path(&dir.path().join("s.uvs")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.wav"));
}

#[test]
fn train_infer_and_evaluate_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (feats, stats, ckpt) = trained(dir.path());
    assert!(ckpt.is_file());
    assert_eq!(std::fs::read_to_string(dir.path().join("run/loss.csv")).unwrap().lines().count(), 3);

    let infer = |out: &Path, seed: &str| {
        univnet(&[
            "--seed", seed, "infer", "--checkpoint", path(&ckpt), "--mel", path(&feats.join("a.uvf")),
            "--stats", path(&stats), "--out", path(out),
        ])
    };
    let (w1, w2, w3) = (dir.path().join("1.wav"), dir.path().join("2.wav"), dir.path().join("3.wav"));
    for (w, seed) in [(&w1, "9"), (&w2, "9"), (&w3, "10")] {
        let out = infer(w, seed);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let audio = univnet::dsp::load_wav(&w1).unwrap();
    assert_eq!(audio.len(), 94 * 256);
    assert_eq!(std::fs::read(&w1).unwrap(), std::fs::read(&w2).unwrap());
    assert_ne!(std::fs::read(&w1).unwrap(), std::fs::read(&w3).unwrap());

    // identical files score zero
    let out = univnet(&["eval-rmse", "--reference", path(&w1), "--generated", path(&w2)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["rmse"].as_f64(), Some(0.0));
    assert_eq!(report["n_pairs"].as_u64(), Some(1));

    let bench = dir.path().join("bench.json");
    let out = univnet(&["bench", "--checkpoint", path(&ckpt), "--seconds", "0.2", "--out", path(&bench)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&bench).unwrap()).unwrap();
    assert!(report["realtime_factor"].as_f64().unwrap() > 0.0);
}

#[test]
fn infer_rejects_mismatched_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let (feats, _, ckpt) = trained(dir.path());
    let other = dir.path().join("other");
    std::fs::create_dir_all(&other).unwrap();
    write_wav(other.join("z.wav"), &tone(0.5, 400.0)).unwrap();
    let stats = dir.path().join("other.uvs");
    let out = univnet(&["extract", "--wav-dir", path(&other), "--out-dir", path(&dir.path().join("of")), "--stats-out", path(&stats)]);
    assert!(out.status.success());
    let out = univnet(&[
        "infer", "--checkpoint", path(&ckpt), "--mel", path(&feats.join("a.uvf")), "--stats", path(&stats),
        "--out", path(&dir.path().join("x.wav")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("x.wav").exists());
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("gc.json");
    let out = univnet(&["gradcheck", "--out", path(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!String::from_utf8_lossy(&out.stderr).contains("FAIL"));
    assert!(report.is_file());
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(univnet(&["bogus"]).status.code(), Some(1));
    assert_eq!(univnet(&["infer", "--checkpoint", "x.uvc"]).status.code(), Some(1));
    assert_eq!(univnet(&["--threads", "4", "gradcheck"]).status.code(), Some(1));
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(univnet(&["--config", path(&config), "gradcheck"]).status.code(), Some(1));

    let missing = dir.path().join("missing.uvc");
    let out = univnet(&["infer", "--checkpoint", path(&missing), "--wav", "a.wav", "--out", "o.wav"]);
    assert_eq!(out.status.code(), Some(2));
    let garbage = dir.path().join("garbage.uvc");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = univnet(&["bench", "--checkpoint", path(&garbage)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(univnet(&["--help"]).status.success());
}
