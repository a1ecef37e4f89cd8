//! Synthetic InSAR building scenes.
//!
//! Geometry: range increases with the column index. A building of height
//! `h` over footprint rows `r0..r1`, columns `c0..c1` produces
//!
//! * a layover strip of `ceil(h / tan θ)` columns ending at `c0` (class 2),
//! * a shadow strip of `ceil(h · tan θ)` columns starting at `c1` (class 0),
//!
//! over the footprint rows, clipped to the image. Everything else is
//! ground (class 1). Layover wins over shadow, shadow over ground.
//!
//! Radiometry: amplitude is the class reflectivity times the mean of
//! `looks` independent `|CN(0, 1)|` draws. The master phase ψ is uniform;
//! the interferometric phase is `φ = wrap(k_z · elevation) + σ·N(0, 1)`,
//! where elevation is the building height over its footprint and its
//! layover strip and 0 elsewhere. The slave is `A·e^{i(ψ − φ)}` and the
//! phase channel is `angle(master · conj(slave))`.
//!
//! Seeds: sample `i` uses `split_mix(seed, i)`; if its scene lacks a class
//! it is redrawn from `split_mix(split_mix(seed, i), attempt)`. Within a
//! sample, sub-streams 0..=3 drive the scene, speckle, ψ and phase noise.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::ctensor::{angle, read_container, write_container, CTensor, Entry, RTensor, TensorContainer};
use crate::error::{Error, Result};
use crate::text::{parse, parse_list, parse_list_f64};
use crate::rng::{split_mix, CounterRng, DESCRIPTION};
use crate::training::LabelMap;

pub const SHADOW: u8 = 0;
pub const GROUND: u8 = 1;
pub const LAYOVER: u8 = 2;

pub const MANIFEST: &str = "manifest.txt";
const MAX_ATTEMPTS: u64 = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct Building {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub buildings: Vec<Building>,
    /// Incidence angle in radians.
    pub incidence: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.incidence > 0.0 && self.incidence < PI / 2.0) {
            return Err(Error::Config(format!("incidence {} must lie in (0, π/2)", self.incidence)));
        }
        for b in &self.buildings {
            if b.rows.0 >= b.rows.1 || b.cols.0 >= b.cols.1 || b.rows.1 > self.height || b.cols.1 > self.width {
                return Err(Error::Config(format!("building {b:?} outside a {}x{} scene", self.height, self.width)));
            }
            if !(b.height > 0.0 && b.height.is_finite()) {
                return Err(Error::Config(format!("building height {} must be positive", b.height)));
            }
        }
        Ok(())
    }
}

/// `ceil` that ignores round-off just above an integer.
fn strip_width(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

pub fn layover_width(height: f64, incidence: f64) -> usize {
    strip_width(height / incidence.tan())
}

pub fn shadow_width(height: f64, incidence: f64) -> usize {
    strip_width(height * incidence.tan())
}

/// Elevation map alongside the labels.
fn render(scene: &SceneSpec) -> (LabelMap, Vec<f64>) {
    let (h, w) = (scene.height, scene.width);
    let mut labels = LabelMap::filled(h, w, GROUND);
    let mut elevation = vec![0.0; h * w];
    for b in &scene.buildings {
        let ws = shadow_width(b.height, scene.incidence);
        for r in b.rows.0..b.rows.1 {
            for c in b.cols.1..(b.cols.1 + ws).min(w) {
                if labels.get(r, c) != LAYOVER {
                    labels.set(r, c, SHADOW);
                }
            }
            for c in b.cols.0..b.cols.1 {
                elevation[r * w + c] = b.height;
            }
        }
    }
    for b in &scene.buildings {
        let wl = layover_width(b.height, scene.incidence);
        for r in b.rows.0..b.rows.1 {
            for c in b.cols.0.saturating_sub(wl)..b.cols.0 {
                labels.set(r, c, LAYOVER);
                elevation[r * w + c] = b.height;
            }
        }
    }
    (labels, elevation)
}

pub fn render_labels(scene: &SceneSpec) -> LabelMap {
    render(scene).0
}

/// Wraps to (−π, π].
pub fn wrap(x: f64) -> f64 {
    angle(x.cos(), x.sin())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub count: usize,
    /// Explicit train split size; otherwise `round(count · 216 / 312)`.
    pub train_count: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub buildings: (usize, usize),
    pub building_rows: (usize, usize),
    pub building_cols: (usize, usize),
    pub building_height: (f64, f64),
    pub incidence: f64,
    /// Shadow, ground, layover.
    pub reflectivity: [f64; 3],
    pub looks: usize,
    pub kz: f64,
    pub phase_noise: f64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            count: 40,
            train_count: None,
            height: 64,
            width: 64,
            buildings: (2, 4),
            building_rows: (8, 20),
            building_cols: (6, 14),
            building_height: (3.0, 8.0),
            incidence: PI / 4.0,
            reflectivity: [0.1, 1.0, 3.0],
            looks: 8,
            kz: 0.5,
            phase_noise: 0.2,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.count == 0 || self.height == 0 || self.width == 0 || self.looks == 0 {
            return bad("count, image size and looks must be ≥ 1".into());
        }
        if self.train_count.is_some_and(|t| t > self.count) {
            return bad(format!("train_count exceeds count {}", self.count));
        }
        if self.buildings.0 > self.buildings.1 {
            return bad(format!("buildings range {:?} is empty", self.buildings));
        }
        for (name, (lo, hi), lim) in [("building_rows", self.building_rows, self.height), ("building_cols", self.building_cols, self.width)] {
            if lo == 0 || lo > hi || hi > lim {
                return bad(format!("{name} range ({lo}, {hi}) must be within 1..={lim}"));
            }
        }
        let (lo, hi) = self.building_height;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("building_height range ({lo}, {hi}) must be positive"));
        }
        if !(self.incidence > 0.0 && self.incidence < PI / 2.0) {
            return bad(format!("incidence {} must lie in (0, π/2)", self.incidence));
        }
        if !self.reflectivity.iter().all(|&r| r > 0.0 && r.is_finite()) {
            return bad(format!("reflectivities must be positive, got {:?}", self.reflectivity));
        }
        if !(self.phase_noise >= 0.0 && self.kz.is_finite()) {
            return bad("phase_noise must be ≥ 0 and kz finite".into());
        }
        Ok(())
    }

    pub fn train_split(&self) -> usize {
        self.train_count.unwrap_or_else(|| ((self.count * 216) as f64 / 312.0).round() as usize)
    }

    /// `key = value` lines; also the manifest header.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "count = {}", self.count);
        if let Some(t) = self.train_count {
            let _ = writeln!(s, "train_count = {t}");
        }
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "buildings = {},{}", self.buildings.0, self.buildings.1);
        let _ = writeln!(s, "building_rows = {},{}", self.building_rows.0, self.building_rows.1);
        let _ = writeln!(s, "building_cols = {},{}", self.building_cols.0, self.building_cols.1);
        let _ = writeln!(s, "building_height = {:?},{:?}", self.building_height.0, self.building_height.1);
        let _ = writeln!(s, "incidence = {:?}", self.incidence);
        let r = self.reflectivity;
        let _ = writeln!(s, "reflectivity = {:?},{:?},{:?}", r[0], r[1], r[2]);
        let _ = writeln!(s, "looks = {}", self.looks);
        let _ = writeln!(s, "kz = {:?}", self.kz);
        let _ = writeln!(s, "phase_noise = {:?}", self.phase_noise);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let pair_u = |v: &str| -> Result<(usize, usize)> {
            let l = parse_list(key, v)?;
            match l[..] {
                [a, b] => Ok((a, b)),
                _ => Err(Error::Config(format!("{key} expects two values"))),
            }
        };
        match key {
            "count" => self.count = parse(key, value)?,
            "train_count" => self.train_count = if value == "auto" { None } else { Some(parse(key, value)?) },
            "height" => self.height = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "buildings" => self.buildings = pair_u(value)?,
            "building_rows" => self.building_rows = pair_u(value)?,
            "building_cols" => self.building_cols = pair_u(value)?,
            "building_height" => match parse_list_f64(key, value)?[..] {
                [a, b] => self.building_height = (a, b),
                _ => return Err(Error::Config(format!("{key} expects two values"))),
            },
            "incidence" => self.incidence = parse(key, value)?,
            "reflectivity" => match parse_list_f64(key, value)?[..] {
                [a, b, c] => self.reflectivity = [a, b, c],
                _ => return Err(Error::Config(format!("{key} expects three values"))),
            },
            "looks" => self.looks = parse(key, value)?,
            "kz" => self.kz = parse(key, value)?,
            "phase_noise" => self.phase_noise = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown generator key {key:?}"))),
        }
        Ok(())
    }
}

fn range_usize(rng: &mut CounterRng, (lo, hi): (usize, usize)) -> usize {
    rng.int_inclusive(lo, hi)
}

/// Draws building count, footprints and heights.
pub fn sample_scene(params: &GenParams, seed: u64) -> SceneSpec {
    let mut rng = CounterRng::new(split_mix(seed, 0));
    let n = range_usize(&mut rng, params.buildings);
    let buildings = (0..n)
        .map(|_| {
            let rows = range_usize(&mut rng, params.building_rows);
            let cols = range_usize(&mut rng, params.building_cols);
            let r0 = rng.int_inclusive(0, params.height - rows);
            let c0 = rng.int_inclusive(0, params.width - cols);
            let height = rng.range(params.building_height.0, params.building_height.1);
            Building { rows: (r0, r0 + rows), cols: (c0, c0 + cols), height }
        })
        .collect();
    SceneSpec { height: params.height, width: params.width, buildings, incidence: params.incidence }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `1×H×W`
    pub master: CTensor,
    /// `1×H×W`
    pub slave: CTensor,
    /// `H×W`, values in (−π, π].
    pub phase: RTensor,
    pub labels: LabelMap,
}

/// Master, slave and phase channel for a scene.
pub fn render_sar_pair(scene: &SceneSpec, params: &GenParams, seed: u64) -> (CTensor, CTensor, RTensor) {
    let (labels, elevation) = render(scene);
    let (h, w) = (scene.height, scene.width);
    let mut speckle = CounterRng::new(split_mix(seed, 1));
    let mut psi_rng = CounterRng::new(split_mix(seed, 2));
    let mut noise = CounterRng::new(split_mix(seed, 3));
    let n = h * w;
    let (mut mr, mut mi, mut sr, mut si, mut ph) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for p in 0..n {
        let mut mag = 0.0;
        for _ in 0..params.looks {
            let (x, y) = (speckle.normal(), speckle.normal());
            mag += (0.5 * (x * x + y * y)).sqrt();
        }
        let a = params.reflectivity[labels.data[p] as usize] * mag / params.looks as f64;
        let psi = psi_rng.phase();
        let phi = wrap(params.kz * elevation[p]) + params.phase_noise * noise.normal();
        let (m_re, m_im) = (a * psi.cos(), a * psi.sin());
        let (s_re, s_im) = (a * (psi - phi).cos(), a * (psi - phi).sin());
        mr.push(m_re);
        mi.push(m_im);
        sr.push(s_re);
        si.push(s_im);
        // master · conj(slave)
        ph.push(angle(m_re * s_re + m_im * s_im, m_im * s_re - m_re * s_im));
    }
    (
        CTensor::from_parts(vec![1, h, w], mr, mi),
        CTensor::from_parts(vec![1, h, w], sr, si),
        RTensor::from_parts(vec![h, w], ph),
    )
}

fn has_all_classes(l: &LabelMap) -> bool {
    [SHADOW, GROUND, LAYOVER].iter().all(|c| l.data.contains(c))
}

/// Sample `i` of a dataset and the number of redraws it needed.
pub fn generate_sample(params: &GenParams, index: usize) -> Result<(Sample, u64)> {
    let base = split_mix(params.seed, index as u64);
    for attempt in 0..MAX_ATTEMPTS {
        let seed = if attempt == 0 { base } else { split_mix(base, attempt) };
        let scene = sample_scene(params, seed);
        let labels = render_labels(&scene);
        if !has_all_classes(&labels) {
            continue;
        }
        let (master, slave, phase) = render_sar_pair(&scene, params, seed);
        return Ok((Sample { master, slave, phase, labels }, attempt));
    }
    Err(Error::Dataset(format!("sample {index}: no scene with all three classes after {MAX_ATTEMPTS} draws")))
}

impl Sample {
    pub fn to_container(&self) -> TensorContainer {
        let mut c = TensorContainer::new();
        c.insert("master", Entry::Complex(self.master.clone()));
        c.insert("slave", Entry::Complex(self.slave.clone()));
        c.insert("phase", Entry::Real(self.phase.clone()));
        let l = &self.labels;
        let data = l.data.iter().map(|&v| f64::from(v)).collect();
        c.insert("label", Entry::Real(RTensor::from_parts(vec![l.height, l.width], data)));
        c
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let label = c.real("label")?;
        let [h, w] = label.shape()[..] else {
            return Err(Error::Dataset(format!("label shape {:?} is not 2-D", label.shape())));
        };
        let mut data = Vec::with_capacity(h * w);
        for &v in label.data() {
            if !(v == 0.0 || v == 1.0 || v == 2.0) {
                return Err(Error::Dataset(format!("label value {v} outside {{0, 1, 2}}")));
            }
            data.push(v as u8);
        }
        let master = c.complex("master")?.clone();
        let slave = c.complex("slave")?.clone();
        let phase = c.real("phase")?.clone();
        for (name, shape) in [("master", master.shape()), ("slave", slave.shape())] {
            if shape != [1, h, w] {
                return Err(Error::Dataset(format!("{name} shape {shape:?}, expected [1, {h}, {w}]")));
            }
        }
        if phase.shape() != [h, w] {
            return Err(Error::Dataset(format!("phase shape {:?}, expected [{h}, {w}]", phase.shape())));
        }
        Ok(Self { master, slave, phase, labels: LabelMap { height: h, width: w, data } })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub header: String,
    pub entries: Vec<(String, bool)>,
}

impl Manifest {
    pub fn train_files(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(|e| e.1).map(|e| e.0.as_str())
    }

    pub fn test_files(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(|e| !e.1).map(|e| e.0.as_str())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = String::new();
        let mut entries = Vec::new();
        for line in text.lines() {
            if let Some(h) = line.strip_prefix('#') {
                header.push_str(h.trim_start());
                header.push('\n');
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            match line.split_whitespace().collect::<Vec<_>>()[..] {
                [f, "train"] => entries.push((f.to_string(), true)),
                [f, "test"] => entries.push((f.to_string(), false)),
                _ => return Err(Error::Dataset(format!("bad manifest line {line:?}"))),
            }
        }
        Ok(Self { header, entries })
    }
}

/// Summary of a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct GenSummary {
    pub manifest: Manifest,
    pub manifest_text: String,
    pub regenerated: u64,
    /// Pixel counts per class over all samples.
    pub class_pixels: [u64; 3],
}

/// Generates every sample in index order.
pub fn generate_samples(params: &GenParams) -> Result<(Vec<Sample>, u64)> {
    params.validate()?;
    let mut samples = Vec::with_capacity(params.count);
    let mut redraws = 0;
    for i in 0..params.count {
        let (s, a) = generate_sample(params, i)?;
        redraws += a;
        samples.push(s);
    }
    Ok((samples, redraws))
}

pub fn generate_dataset(params: &GenParams, out_dir: &Path) -> Result<GenSummary> {
    let (samples, regenerated) = generate_samples(params)?;
    fs::create_dir_all(out_dir)?;
    let n_train = params.train_split();
    let mut text = String::new();
    for line in params.to_text().lines() {
        let _ = writeln!(text, "# {line}");
    }
    let _ = writeln!(text, "# train_samples = {n_train}");
    let _ = writeln!(text, "# test_samples = {}", params.count - n_train);
    let _ = writeln!(text, "# regenerated_scenes = {regenerated}");
    let _ = writeln!(text, "# sample_seed = split_mix(seed, index); redraw a = split_mix(split_mix(seed, index), a)");
    let _ = writeln!(text, "# prng = {DESCRIPTION}");
    let mut class_pixels = [0u64; 3];
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = format!("sample_{i}.cxt");
        write_container(&out_dir.join(&name), &s.to_container())?;
        let train = i < n_train;
        let _ = writeln!(text, "{name} {}", if train { "train" } else { "test" });
        for &c in &s.labels.data {
            class_pixels[c as usize] += 1;
        }
        entries.push((name, train));
    }
    fs::write(out_dir.join(MANIFEST), &text)?;
    let manifest = Manifest::parse(&text)?;
    Ok(GenSummary { manifest, manifest_text: text, regenerated, class_pixels })
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn load_sample(path: &Path) -> Result<Sample> {
    Sample::from_container(&read_container(path)?)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::Dataset(format!("{}: {e}", mpath.display())))?;
    let manifest = Manifest::parse(&text)?;
    let load = |files: Vec<&str>| -> Result<Vec<Sample>> { files.into_iter().map(|f| load_sample(&dir.join(f))).collect() };
    let train = load(manifest.train_files().collect())?;
    let test = load(manifest.test_files().collect())?;
    Ok(Dataset { dir: dir.to_path_buf(), manifest, train, test })
}
