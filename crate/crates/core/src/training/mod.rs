//! Complex one-hot learning: loss, Adam, evaluation and the training loop.

mod adam;
mod loss;
mod metrics;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{
    complex_error, complex_one_hot, decode_predictions, decode_predictions_imag, loss_graph, real_loss, LabelMap,
};
pub use metrics::{metrics, ConfusionMatrix, MetricsReport, CLASS_NAMES};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::autodiff::Graph;
use crate::ctensor::{CTensor, RTensor};
use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Fc2mfn, Inputs};
use crate::rng::{split_mix, CounterRng};
use crate::text::parse;

/// How `n` in the loss is counted; echoed in run headers.
pub const LOSS_NORMALIZATION: &str = "n = batch x classes x height x width (complex elements)";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Evaluate on the test split every this many epochs (0 disables).
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), batch_size: 2, epochs: 100, seed: 0, eval_interval: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.learning_rate > 0.0 && self.adam.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.adam.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate = {:?}", self.adam.learning_rate);
        let _ = writeln!(s, "beta1 = {:?}", self.adam.beta1);
        let _ = writeln!(s, "beta2 = {:?}", self.adam.beta2);
        let _ = writeln!(s, "epsilon = {:?}", self.adam.epsilon);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "eval_interval = {}", self.eval_interval);
        s
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" => self.adam.learning_rate = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "epsilon" => self.adam.epsilon = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown train key {key:?}"))),
        }
        Ok(())
    }
}

/// Stacks samples into `N×1×H×W` model inputs.
pub fn batch_inputs(samples: &[&Sample]) -> Result<Inputs> {
    let first = samples.first().ok_or_else(|| Error::Dataset("empty batch".into()))?;
    let (h, w) = (first.labels.height, first.labels.width);
    let n = samples.len();
    let mut mr = Vec::with_capacity(n * h * w);
    let mut mi = Vec::with_capacity(n * h * w);
    let mut sr = Vec::with_capacity(n * h * w);
    let mut si = Vec::with_capacity(n * h * w);
    let mut ph = Vec::with_capacity(n * h * w);
    for s in samples {
        if s.master.numel() != h * w || s.slave.numel() != h * w || s.phase.numel() != h * w {
            return Err(Error::Shape("samples in a batch must share one size".into()));
        }
        mr.extend_from_slice(s.master.re());
        mi.extend_from_slice(s.master.im());
        sr.extend_from_slice(s.slave.re());
        si.extend_from_slice(s.slave.im());
        ph.extend_from_slice(s.phase.data());
    }
    let shape = vec![n, 1, h, w];
    Ok(Inputs {
        master: CTensor::new(shape.clone(), mr, mi)?,
        slave: CTensor::new(shape.clone(), sr, si)?,
        phase: RTensor::new(shape, ph)?,
    })
}

fn batch_targets(samples: &[&Sample], num_classes: usize) -> Result<CTensor> {
    let labels: Vec<&LabelMap> = samples.iter().map(|s| &s.labels).collect();
    complex_one_hot(&labels, num_classes)
}

/// Inference-mode metrics and mean loss over `samples`.
pub fn evaluate(model: &Fc2mfn, samples: &[Sample]) -> Result<(MetricsReport, f64)> {
    if samples.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty split".into()));
    }
    let k = model.config.num_classes;
    let mut cm = ConfusionMatrix::new(k);
    let mut loss = 0.0;
    for s in samples {
        let out = model.forward(&batch_inputs(&[s])?, false)?;
        let target = batch_targets(&[s], k)?;
        loss += real_loss(&complex_error(&target, &out)?);
        cm.add(&s.labels, &decode_predictions(&out)?[0])?;
    }
    Ok((cm.report(), loss / samples.len() as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub test: Option<(f64, MetricsReport)>,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let mut s = format!("epoch={} train_loss={:.9}", self.epoch, self.train_loss);
        if let Some((loss, r)) = &self.test {
            let _ = write!(s, " test_loss={:.9} oa={:.6} mpa={:.6} miou={:.6}", loss, r.overall_accuracy, r.mean_pixel_accuracy, r.mean_iou);
        }
        s
    }
}

/// Model plus optimizer state, advanced one epoch at a time.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Fc2mfn,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub epoch: usize,
    pub logs: Vec<EpochLog>,
}

impl Trainer {
    pub fn new(model: Fc2mfn, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { model, adam: AdamState::default(), config, epoch: 0, logs: Vec::new() })
    }

    /// One optimizer step on a batch; returns the batch loss.
    pub fn step(&mut self, batch: &[&Sample]) -> Result<f64> {
        let x = batch_inputs(batch)?;
        let target = batch_targets(batch, self.model.config.num_classes)?;
        let mut g = Graph::new();
        let (out, binder, stats) = self.model.forward_train(&mut g, &x, true)?;
        let t = g.constant(target);
        let loss = loss_graph(&mut g, t, out)?;
        let value = g.scalar(loss)?;
        if !value.is_finite() {
            return Err(Error::NonFinite);
        }
        g.backward(loss)?;
        let mut grads = BTreeMap::new();
        for (path, v) in &binder.vars {
            let gr = g.grad(*v).ok_or_else(|| Error::MissingGradient(path.clone()))?;
            grads.insert(path.clone(), gr.clone());
        }
        drop(binder);
        adam_step(&mut self.model.params.params, &grads, &mut self.adam, &self.config.adam)?;
        self.model.apply_bn_stats(&stats);
        Ok(value)
    }

    /// Shuffled pass over `train`; evaluates on `test` at the configured
    /// interval.
    pub fn run_epoch(&mut self, train: &[Sample], test: &[Sample]) -> Result<&EpochLog> {
        if train.is_empty() {
            return Err(Error::Dataset("training split is empty".into()));
        }
        let epoch = self.epoch + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        CounterRng::new(split_mix(self.config.seed, epoch as u64)).shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            total += self.step(&batch)?;
            batches += 1;
        }
        let interval = self.config.eval_interval;
        let test_result = if interval > 0 && !test.is_empty() && epoch % interval == 0 {
            let (r, l) = evaluate(&self.model, test)?;
            Some((l, r))
        } else {
            None
        };
        self.epoch = epoch;
        self.logs.push(EpochLog { epoch, train_loss: total / batches as f64, test: test_result });
        Ok(self.logs.last().expect("just pushed"))
    }

    pub fn log_text(&self) -> String {
        self.logs.iter().map(|l| l.line() + "\n").collect()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model);
        ck.adam_m = self.adam.m.clone();
        ck.adam_v = self.adam.v.clone();
        ck.step = self.adam.t;
        ck.log = self.log_text();
        ck
    }
}

/// Runs `cfg.epochs` epochs, calling `on_epoch` after each.
pub fn train(
    model: Fc2mfn,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Trainer> {
    let mut t = Trainer::new(model, cfg)?;
    for _ in 0..t.config.epochs {
        let log = t.run_epoch(train_set, test_set)?;
        on_epoch(log);
    }
    Ok(t)
}
