use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use fc2mfn::ctensor::{write_container, Entry, TensorContainer};
use fc2mfn::datagen::{generate_dataset, load_dataset, load_sample, Sample, GROUND, LAYOVER, SHADOW};
use fc2mfn::gradsuite::{full_suite, CaseResult};
use fc2mfn::model::{report_text, Checkpoint, Fc2mfn};
use fc2mfn::presets::{gradcheck_model, Preset};
use fc2mfn::training::{decode_predictions, evaluate, LabelMap, Trainer, CLASS_NAMES, LOSS_NORMALIZATION};
use fc2mfn::{Error, RTensor};

use crate::config::RunConfig;
use crate::{Command, Common};

/// What a command concluded, as opposed to how it failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CheckFailed,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Self::Success => 0,
            Self::CheckFailed => 1,
        }
    }
}

/// 2 for configuration and usage problems, 1 for everything else.
pub fn error_exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        _ => 1,
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn resolve(common: &Common, flags: Vec<(String, String)>) -> Result<RunConfig> {
    let text = match &common.config {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?),
        None => None,
    };
    let mut all = Vec::new();
    if let Some(p) = &common.preset {
        all.push(("preset".to_string(), p.clone()));
    }
    all.extend(flags);
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        all.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(RunConfig::resolve(text.as_deref(), &all)?)
}

fn flag<T: ToString>(flags: &mut Vec<(String, String)>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        flags.push((key.to_string(), v.to_string()));
    }
}

fn path_flag(flags: &mut Vec<(String, String)>, key: &str, v: &Option<PathBuf>) {
    if let Some(v) = v {
        flags.push((key.to_string(), v.display().to_string()));
    }
}

pub fn run(command: &Command, out: &mut dyn Write) -> Result<Outcome> {
    match command {
        Command::GenData { common, out: dir, seed, count } => {
            let mut f = Vec::new();
            path_flag(&mut f, "out", dir);
            flag(&mut f, "gen.seed", seed);
            flag(&mut f, "gen.count", count);
            if count.is_some() {
                f.push(("gen.train_count".into(), "auto".into()));
            }
            gen_data(&resolve(common, f)?, out)
        }
        Command::Train { common, data, out: dir, epochs, lr, batch_size, delta, seed } => {
            let mut f = Vec::new();
            path_flag(&mut f, "data", data);
            path_flag(&mut f, "out", dir);
            flag(&mut f, "train.epochs", epochs);
            flag(&mut f, "train.learning_rate", lr);
            flag(&mut f, "train.batch_size", batch_size);
            flag(&mut f, "model.delta", delta);
            flag(&mut f, "train.seed", seed);
            train(&resolve(common, f)?, out)
        }
        Command::Eval { checkpoint, data, split, min_miou } => eval(checkpoint, data, split, *min_miou, out),
        Command::Predict { checkpoint, sample, out: path, debug } => predict(checkpoint, sample, path, *debug, out),
        Command::Gradcheck { preset, seed, seeds, tolerance } => gradcheck(preset, *seed, *seeds, *tolerance, out),
        Command::Report { common } => report(&resolve(common, Vec::new())?, out),
    }
}

pub fn gen_data(rc: &RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    let dir = rc.out.as_ref().ok_or_else(|| usage("gen-data needs --out (or `out = ...` in the config)"))?;
    write!(out, "{}", rc.header("# "))?;
    let summary = generate_dataset(&rc.gen, dir).with_context(|| format!("writing dataset to {}", dir.display()))?;
    let train = summary.manifest.train_files().count();
    let test = summary.manifest.test_files().count();
    writeln!(out, "samples = {}", train + test)?;
    writeln!(out, "train = {train}")?;
    writeln!(out, "test = {test}")?;
    writeln!(out, "regenerated_scenes = {}", summary.regenerated)?;
    let total: u64 = summary.class_pixels.iter().sum();
    for c in [SHADOW, GROUND, LAYOVER] {
        let n = summary.class_pixels[c as usize];
        writeln!(
            out,
            "class[{c}:{}] pixels = {n} frequency = {:.6}",
            CLASS_NAMES[c as usize],
            n as f64 / total.max(1) as f64
        )?;
    }
    writeln!(out, "manifest = {}", dir.join(fc2mfn::datagen::MANIFEST).display())?;
    Ok(Outcome::Success)
}

fn check_sizes(rc: &RunConfig, samples: &[Sample]) -> Result<()> {
    let (h, w) = rc.model.image_size;
    for s in samples {
        if (s.labels.height, s.labels.width) != (h, w) {
            return Err(usage(format!(
                "dataset images are {}x{} but the model expects {h}x{w}; set model.image_height/model.image_width or pick the matching preset",
                s.labels.height, s.labels.width
            )));
        }
    }
    Ok(())
}

pub fn train(rc: &RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    let data = rc.data.as_ref().ok_or_else(|| usage("train needs --data"))?;
    let dir = rc.out.as_ref().ok_or_else(|| usage("train needs --out"))?;
    rc.model.validate()?;
    rc.train.validate()?;
    let ds = load_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?;
    check_sizes(rc, &ds.train)?;
    check_sizes(rc, &ds.test)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut log = rc.header("# ");
    log.push_str(&format!("# loss_normalization = {LOSS_NORMALIZATION}\n"));
    log.push_str(&format!("# train_samples = {}\n# test_samples = {}\n", ds.train.len(), ds.test.len()));
    write!(out, "{log}")?;

    let start = Instant::now();
    let model = Fc2mfn::build(rc.model.clone(), rc.train.seed)?;
    let mut trainer = Trainer::new(model, rc.train.clone())?;
    for _ in 0..rc.train.epochs {
        let line = trainer.run_epoch(&ds.train, &ds.test)?.line();
        writeln!(out, "{line}")?;
        log.push_str(&line);
        log.push('\n');
    }
    if !ds.test.is_empty() {
        let (report, loss) = evaluate(&trainer.model, &ds.test)?;
        let text = format!("final test metrics (loss = {loss:.9}):\n{report}\n");
        write!(out, "{text}")?;
        log.push_str(&text);
    }
    let ck_path = dir.join("checkpoint.cxt");
    trainer.checkpoint().save(&ck_path).with_context(|| format!("writing {}", ck_path.display()))?;
    fs::write(dir.join("train.log"), &log)?;
    writeln!(out, "checkpoint = {}", ck_path.display())?;
    writeln!(out, "elapsed_seconds = {:.1}", start.elapsed().as_secs_f64())?;
    Ok(Outcome::Success)
}

fn load_model(path: &Path) -> Result<Fc2mfn> {
    Ok(Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?.model()?)
}

pub fn eval(checkpoint: &Path, data: &Path, split: &str, min_miou: Option<f64>, out: &mut dyn Write) -> Result<Outcome> {
    let model = load_model(checkpoint)?;
    let ds = load_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let samples: Vec<Sample> = match split {
        "train" => ds.train,
        "test" => ds.test,
        "all" => ds.train.into_iter().chain(ds.test).collect(),
        other => return Err(usage(format!("unknown split {other:?} (expected train, test or all)"))),
    };
    let (report, loss) = evaluate(&model, &samples)?;
    writeln!(out, "# checkpoint = {}", checkpoint.display())?;
    writeln!(out, "# data = {}", data.display())?;
    writeln!(out, "# split = {split}")?;
    writeln!(out, "samples = {}", samples.len())?;
    writeln!(out, "loss = {loss:.9}")?;
    writeln!(out, "{report}")?;
    match min_miou {
        Some(t) if !(report.mean_iou >= t) => {
            writeln!(out, "mean IoU {:.6} is below {t}", report.mean_iou)?;
            Ok(Outcome::CheckFailed)
        }
        _ => Ok(Outcome::Success),
    }
}

/// RGB per class: shadow black, ground red, layover green.
pub const CLASS_COLORS: [[u8; 3]; 3] = [[0, 0, 0], [255, 0, 0], [0, 255, 0]];

pub fn color_map_ppm(labels: &LabelMap) -> Vec<u8> {
    let mut v = format!("P6\n{} {}\n255\n", labels.width, labels.height).into_bytes();
    for &c in &labels.data {
        v.extend_from_slice(&CLASS_COLORS[c as usize]);
    }
    v
}

pub fn predict(checkpoint: &Path, sample: &Path, path: &Path, debug: bool, out: &mut dyn Write) -> Result<Outcome> {
    let model = load_model(checkpoint)?;
    let s = load_sample(sample).with_context(|| format!("loading sample {}", sample.display()))?;
    let x = fc2mfn::training::batch_inputs(&[&s])?;
    let pred = decode_predictions(&model.forward(&x, false)?)?.remove(0);
    let mut c = TensorContainer::new();
    let data = pred.data.iter().map(|&v| v as f64).collect();
    c.insert("label", Entry::Real(RTensor::new(vec![pred.height, pred.width], data)?));
    write_container(path, &c).with_context(|| format!("writing {}", path.display()))?;
    writeln!(out, "label_map = {}", path.display())?;
    let mut counts = [0u64; 3];
    for &v in &pred.data {
        counts[v as usize] += 1;
    }
    for (i, n) in counts.iter().enumerate() {
        writeln!(out, "class[{i}:{}] pixels = {n}", CLASS_NAMES[i])?;
    }
    if debug {
        let ppm = path.with_extension("ppm");
        fs::write(&ppm, color_map_ppm(&pred)).with_context(|| format!("writing {}", ppm.display()))?;
        writeln!(out, "color_map = {}", ppm.display())?;
    }
    Ok(Outcome::Success)
}

fn case_line(seed: u64, r: &CaseResult, tolerance: f64) -> String {
    format!(
        "seed={seed} case={} max_rel_error={:.3e} coords={} draws={} {}",
        r.name,
        r.report.max_rel_error,
        r.report.coords.len(),
        r.attempts,
        if r.passed(tolerance) { "PASS" } else { "FAIL" }
    )
}

pub fn gradcheck(preset: &str, seed: u64, seeds: u64, tolerance: f64, out: &mut dyn Write) -> Result<Outcome> {
    match Preset::parse(preset) {
        Some(Preset::Toy) => {}
        Some(Preset::Paper) => return Err(usage("gradcheck runs only at toy scale (--preset toy)")),
        None => return Err(usage(format!("unknown preset {preset:?}"))),
    }
    if !(tolerance > 0.0) {
        return Err(usage("tolerance must be positive"));
    }
    let cfg = gradcheck_model();
    writeln!(out, "# preset = {preset}")?;
    writeln!(out, "# tolerance = {tolerance:e}")?;
    writeln!(out, "# step = {:e}", fc2mfn::gradsuite::STEP)?;
    writeln!(out, "# min_kink_margin = {:e}", fc2mfn::gradsuite::MIN_MARGIN)?;
    for line in cfg.to_text().lines() {
        writeln!(out, "# model.{line}")?;
    }
    let mut failed = 0;
    for s in seed..seed + seeds {
        for r in full_suite(&cfg, s)? {
            writeln!(out, "{}", case_line(s, &r, tolerance))?;
            let lines = r.failure_lines(tolerance);
            for l in &lines {
                writeln!(out, "  {l}")?;
            }
            failed += usize::from(!lines.is_empty());
        }
    }
    if failed > 0 {
        writeln!(out, "{failed} case(s) failed")?;
        return Ok(Outcome::CheckFailed);
    }
    writeln!(out, "all cases passed")?;
    Ok(Outcome::Success)
}

pub fn report(rc: &RunConfig, out: &mut dyn Write) -> Result<Outcome> {
    rc.model.validate()?;
    for line in rc.model.to_text().lines() {
        writeln!(out, "# model.{line}")?;
    }
    write!(out, "{}", report_text(&rc.model, rc.preset == Preset::Paper))?;
    Ok(Outcome::Success)
}
