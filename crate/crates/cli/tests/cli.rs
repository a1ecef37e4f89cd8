use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fc2mfn::ctensor::read_container;
use fc2mfn::presets::Preset;
use fc2mfn_cli::commands::CLASS_COLORS;
use fc2mfn_cli::config::{all_keys, RunConfig};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fc2mfn")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Two distinct valid values per key: the first goes in the file, the
/// second on the command line.
fn values(key: &str) -> (&'static str, &'static str) {
    match key {
        "preset" => ("paper", "toy"),
        "data" => ("/tmp/a", "/tmp/b"),
        "out" => ("/tmp/c", "/tmp/d"),
        "model.stage_widths" => ("2,4,8,16", "3,6,12,24"),
        "model.base_width" => ("2", "3"),
        "model.num_classes" => ("4", "5"),
        "model.aspp_dilations" => ("1,2", "1,3"),
        "model.pool_window" => ("3", "4"),
        "model.pool_stride" => ("3", "4"),
        "model.delta" => ("0.5", "2.0"),
        "model.image_height" => ("32", "128"),
        "model.image_width" => ("32", "128"),
        "model.fuse_slave" => ("false", "true"),
        "train.learning_rate" => ("1e-3", "1e-4"),
        "train.beta1" => ("0.8", "0.7"),
        "train.beta2" => ("0.99", "0.98"),
        "train.epsilon" => ("1e-7", "1e-6"),
        "train.batch_size" => ("4", "8"),
        "train.epochs" => ("5", "6"),
        "train.seed" => ("1", "2"),
        "train.eval_interval" => ("2", "3"),
        "gen.count" => ("10", "20"),
        "gen.train_count" => ("1", "2"),
        "gen.height" => ("32", "128"),
        "gen.width" => ("32", "128"),
        "gen.buildings" => ("1,2", "2,3"),
        "gen.building_rows" => ("4,8", "5,9"),
        "gen.building_cols" => ("4,8", "5,9"),
        "gen.building_height" => ("2.0,4.0", "3.0,5.0"),
        "gen.incidence" => ("0.5", "0.6"),
        "gen.reflectivity" => ("0.2,1.0,2.0", "0.3,1.0,2.0"),
        "gen.looks" => ("4", "16"),
        "gen.kz" => ("0.4", "0.3"),
        "gen.phase_noise" => ("0.1", "0.3"),
        "gen.seed" => ("1", "2"),
        _ => panic!("no test values for {key}"),
    }
}

fn pair(k: &str, v: &str) -> (String, String) {
    (k.to_string(), v.to_string())
}

#[test]
fn precedence_default_file_flag_for_every_key() {
    let toy = RunConfig::resolve(None, &[pair("preset", "toy")]).unwrap();
    assert_eq!(toy, RunConfig::from_preset(Preset::Toy));
    assert_eq!(RunConfig::resolve(None, &[]).unwrap(), RunConfig::from_preset(Preset::Paper));
    for key in all_keys() {
        let (a, b) = values(&key);
        if key == "preset" {
            let file = RunConfig::resolve(Some("preset = paper\n"), &[]).unwrap();
            assert_eq!(file.preset, Preset::Paper);
            let flag = RunConfig::resolve(Some("preset = paper\n"), &[pair("preset", "toy")]).unwrap();
            assert_eq!(flag, toy);
            continue;
        }
        let file_text = format!("preset = toy\n{key} = {a}\n");
        let mut want_file = toy.clone();
        want_file.set(&key, a).unwrap();
        let mut want_flag = toy.clone();
        want_flag.set(&key, a).unwrap();
        want_flag.set(&key, b).unwrap();
        let file = RunConfig::resolve(Some(&file_text), &[]).unwrap();
        let flag = RunConfig::resolve(Some(&file_text), &[pair(&key, b)]).unwrap();
        assert_eq!(file, want_file, "{key}: file over default");
        assert_ne!(file, toy, "{key}: file value takes effect");
        assert_eq!(flag, want_flag, "{key}: flag over file");
        assert_ne!(flag, file, "{key}: flag value takes effect");
    }
}

#[test]
fn unknown_key_is_rejected() {
    assert!(RunConfig::resolve(Some("model.depth = 3\n"), &[]).is_err());
    assert!(RunConfig::resolve(None, &[pair("train.momentum", "0.9")]).is_err());
    assert!(RunConfig::resolve(None, &[pair("preset", "huge")]).is_err());
}

#[test]
fn binary_applies_file_then_set_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "preset = toy\ntrain.epochs = 7\nmodel.delta = 0.5\n").unwrap();
    let c = cfg.to_str().unwrap();
    let o = bin(&["report", "--config", c, "--set", "model.delta=2.0"]);
    assert!(o.status.success());
    let o = bin(&["gen-data", "--config", c, "--set", "gen.looks=4", "--count", "2", "--out", tmp.path().join("d").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("# train.epochs = 7\n"));
    assert!(s.contains("# model.delta = 0.5\n"));
    assert!(s.contains("# gen.looks = 4\n"));
    assert!(s.contains("# gen.count = 2\n"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let d = d.to_str().unwrap();
    assert_eq!(bin(&["gen-data", "--preset", "toy"]).status.code(), Some(2));
    assert_eq!(bin(&["gen-data", "--preset", "toy", "--set", "gen.colour=1", "--out", d]).status.code(), Some(2));
    assert_eq!(bin(&["gen-data", "--preset", "toy", "--set", "nonsense", "--out", d]).status.code(), Some(2));
    assert_eq!(bin(&["gradcheck", "--preset", "paper"]).status.code(), Some(2));
    assert_eq!(bin(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(
        bin(&["eval", "--checkpoint", "/nonexistent/ck.cxt", "--data", "/nonexistent"]).status.code(),
        Some(1)
    );

    assert!(bin(&["gen-data", "--preset", "toy", "--count", "4", "--out", d]).status.success());
    let t = tmp.path().join("t");
    let t = t.to_str().unwrap();
    let o = bin(&["train", "--preset", "toy", "--data", d, "--out", t, "--epochs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = tmp.path().join("t/checkpoint.cxt");
    let ck = ck.to_str().unwrap();
    assert_eq!(bin(&["eval", "--checkpoint", ck, "--data", d, "--min-miou", "0"]).status.code(), Some(0));
    assert_eq!(bin(&["eval", "--checkpoint", ck, "--data", d, "--min-miou", "1.01"]).status.code(), Some(1));
    assert_eq!(bin(&["eval", "--checkpoint", ck, "--data", d, "--split", "middle"]).status.code(), Some(2));

    // Sample size differs from the model's input size.
    let small = tmp.path().join("small");
    let small = small.to_str().unwrap();
    assert!(bin(&["gen-data", "--preset", "toy", "--count", "2", "--set", "gen.height=32", "--set", "gen.width=32", "--out", small])
        .status
        .success());
    let o = bin(&["train", "--preset", "toy", "--data", small, "--out", tmp.path().join("t2").to_str().unwrap(), "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

fn manifest_splits(dir: &Path) -> (usize, usize) {
    let text = fs::read_to_string(dir.join(fc2mfn::datagen::MANIFEST)).unwrap();
    let m = fc2mfn::datagen::Manifest::parse(&text).unwrap();
    (m.train_files().count(), m.test_files().count())
}

#[test]
fn count_flag_uses_default_split_rule() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let o = bin(&["gen-data", "--preset", "toy", "--count", "40", "--set", "gen.height=16", "--set", "gen.width=16", "--set", "gen.building_rows=3,6", "--set", "gen.building_cols=3,6", "--set", "gen.buildings=1,2", "--out", d.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest_splits(&d), (28, 12));
    let s = stdout(&o);
    assert!(s.contains("train = 28\n") && s.contains("test = 12\n"));
}

#[test]
fn predict_writes_labels_and_color_map() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let t = tmp.path().join("t");
    assert!(bin(&["gen-data", "--preset", "toy", "--count", "2", "--out", d.to_str().unwrap()]).status.success());
    assert!(bin(&["train", "--preset", "toy", "--data", d.to_str().unwrap(), "--out", t.to_str().unwrap(), "--epochs", "1"])
        .status
        .success());
    let out = tmp.path().join("pred.cxt");
    let o = bin(&[
        "predict",
        "--checkpoint",
        t.join("checkpoint.cxt").to_str().unwrap(),
        "--sample",
        d.join("sample_0.cxt").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--debug",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c = read_container(&out).unwrap();
    let label = c.real("label").unwrap();
    assert_eq!(label.shape(), &[64, 64]);
    assert!(label.data().iter().all(|&v| v == 0.0 || v == 1.0 || v == 2.0));

    let ppm = fs::read(out.with_extension("ppm")).unwrap();
    let head = b"P6\n64 64\n255\n";
    assert_eq!(&ppm[..head.len()], head);
    let pixels = &ppm[head.len()..];
    assert_eq!(pixels.len(), 64 * 64 * 3);
    for (px, &v) in pixels.chunks(3).zip(label.data()) {
        assert_eq!(px, CLASS_COLORS[v as usize]);
    }

    let log = fs::read_to_string(t.join("train.log")).unwrap();
    assert!(log.contains("epoch="));
}

#[test]
fn gradcheck_command_passes_on_toy() {
    let o = bin(&["gradcheck", "--seed", "3"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let s = stdout(&o);
    assert!(s.contains("all cases passed"));
    assert!(s.lines().filter(|l| l.ends_with("PASS")).count() >= 17);
}

#[test]
fn paper_preset_report_annotates_published_figures() {
    let o = bin(&["report", "--preset", "paper"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for v in ["73.927M", "1.82T", "280 MB"] {
        assert!(s.lines().any(|l| l.contains(v) && l.contains("paper-reported")), "{v}");
    }
}
