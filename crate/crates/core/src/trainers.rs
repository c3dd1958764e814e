//! Centralized, local and federated training.
//!
//! All three paradigms share one epoch routine. Randomness is drawn from
//! streams keyed by `(seed, purpose, client, epoch)`: a single-client local
//! run and a single-client federation therefore see exactly the same
//! initialization and batch order as the centralized run.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{fit_normalizer, apply_normalizer, WindowedDataset, WindowedSample};
use crate::error::{Error, Result};
use crate::metrics::{confusion_at, es_update, evaluate, fl_es_score, EsDecision, EsMetric, EsMonitor, MetricsReport};
use crate::model::{build_model, Model, ModelConfig, PatientBatch};
use crate::nn::{adam_step, bce_loss, sgd_step, stream, AdamConfig, AdamState, Matrix, NormMode, ParamVector, Rng};
use crate::partition::FoldPlan;

/// Patients per forward pass when only predicting.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_pos: f64,
    pub w_neg: f64,
}

impl ClassWeights {
    pub fn of(&self, label: u8) -> f64 {
        if label == 1 {
            self.w_pos
        } else {
            self.w_neg
        }
    }
}

/// `w_c = n / n_c`; an absent class gets weight 0.
pub fn class_weights(labels: &[u8]) -> ClassWeights {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let neg = n - pos;
    let w = |count: f64, name: &str| {
        if count == 0.0 {
            log::warn!("no {name} samples in the training set; its class weight is 0");
            0.0
        } else {
            n / count
        }
    };
    ClassWeights {
        w_pos: w(pos, "positive"),
        w_neg: w(neg, "negative"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_halving_every: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub es_metric: EsMetric,
    pub batch_base: usize,
    pub optimizer: Optimizer,
    pub adam: AdamConfig,
    /// Decision threshold for precision, recall and F1.
    pub threshold: f64,
    pub seed: u64,
    /// Use these weights instead of per-client ones (test-only).
    #[serde(skip)]
    pub global_class_weights: Option<ClassWeights>,
    /// Batch normalization in inference mode during training (test-only).
    #[serde(skip)]
    pub freeze_batchnorm: bool,
    /// One minibatch per epoch holding the whole training set (test-only).
    #[serde(skip)]
    pub full_batch: bool,
    /// Keep parameters after every epoch or round (test-only).
    #[serde(skip)]
    pub record_params: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            lr_halving_every: 5,
            max_epochs: 100,
            patience: 30,
            es_metric: EsMetric::Loss,
            batch_base: 512,
            optimizer: Optimizer::Adam,
            adam: AdamConfig::default(),
            threshold: 0.5,
            seed: 0,
            global_class_weights: None,
            freeze_batchnorm: false,
            full_batch: false,
            record_params: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.lr_halving_every == 0 || self.patience == 0 || self.batch_base == 0 {
            return Err(Error::Config("lr_halving_every, patience and batch_base must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlConfig {
    pub clients: usize,
    pub local_epochs: usize,
    pub participation: f64,
    pub rounds_max: usize,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            clients: 1,
            local_epochs: 1,
            participation: 1.0,
            rounds_max: 100,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 || self.local_epochs == 0 {
            return Err(Error::Config("K and E must be at least 1".into()));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config(format!("C must lie in (0, 1], got {}", self.participation)));
        }
        Ok(())
    }
}

/// `lr0 · 0.5^floor(epoch / lr_halving_every)`
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 * 0.5f64.powi((epoch / config.lr_halving_every) as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub phase: String,
    pub client: Option<usize>,
    pub metric: String,
    pub value: f64,
}

/// Append-only training trace. Wall-clock rows are kept apart so two runs
/// compare equal when everything deterministic matches.
#[derive(Debug, Clone, Default)]
pub struct RoundLog {
    pub entries: Vec<LogEntry>,
    pub wall_seconds: Vec<(usize, f64)>,
}

impl PartialEq for RoundLog {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl RoundLog {
    pub fn push(&mut self, epoch: usize, phase: &str, client: Option<usize>, metric: &str, value: f64) {
        self.entries.push(LogEntry {
            epoch,
            phase: phase.to_string(),
            client,
            metric: metric.to_string(),
            value,
        });
    }

    pub fn value(&self, epoch: usize, phase: &str, client: Option<usize>, metric: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.epoch == epoch && e.phase == phase && e.client == client && e.metric == metric)
            .map(|e| e.value)
    }

    /// `epoch,phase,client,metric,value`, wall time as `wall_s` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,phase,client,metric,value\n");
        let row = |out: &mut String, e: usize, phase: &str, c: Option<usize>, m: &str, v: f64| {
            let c = c.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{e},{phase},{c},{m},{v}");
        };
        for e in &self.entries {
            row(&mut out, e.epoch, &e.phase, e.client, &e.metric, e.value);
        }
        for &(e, s) in &self.wall_seconds {
            row(&mut out, e, "global", None, "wall_s", s);
        }
        out
    }
}

/// Normalized samples of one fold, grouped the way the paradigms consume them.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub train: Vec<WindowedSample>,
    pub val: Vec<WindowedSample>,
}

#[derive(Debug, Clone)]
pub struct FoldData {
    pub clients: Vec<ClientData>,
    pub test: Vec<WindowedSample>,
}

impl FoldData {
    /// Looks up the plan's ids and normalizes with min/max fitted on every
    /// client's training and validation windows.
    pub fn build(dataset: &WindowedDataset, fold: &FoldPlan) -> Result<Self> {
        let clients: Vec<(Vec<&WindowedSample>, Vec<&WindowedSample>)> = fold
            .clients
            .iter()
            .map(|c| Ok((dataset.select(&c.train)?, dataset.select(&c.val)?)))
            .collect::<Result<_>>()?;
        let fitted = clients.iter().flat_map(|(t, v)| t.iter().chain(v.iter()).copied());
        let stats = fit_normalizer(fitted.collect::<Vec<_>>());
        let norm = |xs: &[&WindowedSample]| xs.iter().map(|s| apply_normalizer(&stats, s)).collect::<Vec<_>>();
        Ok(Self {
            clients: clients
                .iter()
                .map(|(t, v)| ClientData {
                    train: norm(t),
                    val: norm(v),
                })
                .collect(),
            test: norm(&dataset.select(&fold.test)?),
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let first = self
            .test
            .first()
            .or_else(|| self.clients.iter().flat_map(|c| c.train.first()).next())
            .ok_or_else(|| Error::Validation("fold holds no samples".into()))?;
        Ok(ModelConfig::with_steps(first.vitals.rows(), first.labs.rows()))
    }

    pub fn dt_pred_mean_hours(&self) -> f64 {
        self.test.iter().map(|s| s.dt_pred_hours).sum::<f64>() / self.test.len().max(1) as f64
    }
}

fn batch_of(samples: &[&WindowedSample]) -> Result<PatientBatch> {
    PatientBatch::from_windows(samples.iter().map(|s| &s.vitals), samples.iter().map(|s| &s.labs))
}

/// Risk scores in sample order, batch normalization in inference mode.
pub fn predict_all(model: &Model, samples: &[&WindowedSample]) -> Result<Vec<f64>> {
    let mut m = model.clone();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        out.extend(m.forward(&batch_of(chunk)?, NormMode::Infer)?.risk);
    }
    Ok(out)
}

fn refs(samples: &[WindowedSample]) -> Vec<&WindowedSample> {
    samples.iter().collect()
}

fn labels(samples: &[&WindowedSample]) -> Vec<u8> {
    samples.iter().map(|s| s.label).collect()
}

/// Validation score under each metric: unweighted mean BCE or F1.
fn val_scores(model: &Model, samples: &[&WindowedSample], metrics: &[EsMetric], threshold: f64) -> Result<Vec<f64>> {
    let scores = predict_all(model, samples)?;
    let ys = labels(samples);
    metrics
        .iter()
        .map(|m| match m {
            EsMetric::Loss => {
                let n = scores.len();
                let pred = Matrix::from_vec(n, 1, scores.clone())?;
                let y = Matrix::from_vec(n, 1, ys.iter().map(|&y| f64::from(y)).collect())?;
                Ok(bce_loss(&pred, &y, &Matrix::filled(n, 1, 1.0))?.0)
            }
            EsMetric::F1 => Ok(confusion_at(&scores, &ys, threshold)?.f1()),
        })
        .collect()
}

fn test_report(model: &Model, test: &[WindowedSample], threshold: f64) -> Result<(MetricsReport, Vec<f64>)> {
    let t = refs(test);
    let scores = predict_all(model, &t)?;
    Ok((evaluate(&scores, &labels(&t), threshold)?, scores))
}

enum OptState {
    Adam(AdamState),
    Sgd,
}

impl OptState {
    fn new(config: &TrainConfig, params: &ParamVector) -> Self {
        match config.optimizer {
            Optimizer::Adam => OptState::Adam(AdamState::new(params, config.adam)),
            Optimizer::Sgd => OptState::Sgd,
        }
    }

    fn step(&mut self, params: &mut ParamVector, grads: &ParamVector, lr: f64) -> Result<()> {
        match self {
            OptState::Adam(s) => adam_step(params, grads, s, lr),
            OptState::Sgd => sgd_step(params, grads, lr),
        }
    }
}

/// Minibatch index ranges; a trailing batch of one joins its predecessor.
fn batch_bounds(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(batch.max(1)).map(|s| (s, (s + batch).min(n))).collect();
    if out.len() > 1 && out[out.len() - 1].1 - out[out.len() - 1].0 == 1 {
        let last = out.pop().expect("len > 1");
        out.last_mut().expect("len > 0").1 = last.1;
    }
    out
}

struct EpochCtx<'a> {
    config: &'a TrainConfig,
    weights: ClassWeights,
    batch: usize,
    lr: f64,
    epoch: usize,
    client: usize,
}

/// One pass over `data` in seeded random order; returns the mean batch loss.
fn train_epoch(model: &mut Model, opt: &mut OptState, data: &[&WindowedSample], ctx: &EpochCtx<'_>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Validation(format!("client {} has no training data", ctx.client)));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    Rng::derive(ctx.config.seed, &[stream::SHUFFLE, ctx.client as u64, ctx.epoch as u64]).shuffle(&mut order);
    let batch = if ctx.config.full_batch { data.len() } else { ctx.batch };
    let mode = if ctx.config.freeze_batchnorm {
        NormMode::Infer
    } else {
        NormMode::Train
    };
    let bounds = batch_bounds(data.len(), batch);
    let mut total = 0.0;
    for (b, &(lo, hi)) in bounds.iter().enumerate() {
        let members: Vec<&WindowedSample> = order[lo..hi].iter().map(|&i| data[i]).collect();
        let cache = model.forward_cached(&batch_of(&members)?, mode)?;
        let n = members.len();
        let y = Matrix::from_vec(n, 1, members.iter().map(|s| f64::from(s.label)).collect())?;
        let w = Matrix::from_vec(n, 1, members.iter().map(|s| ctx.weights.of(s.label)).collect())?;
        let (loss, d_risk) = bce_loss(cache.risk(), &y, &w)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: ctx.epoch,
                client: ctx.client,
                batch: b,
            });
        }
        let grads = model.backward(&cache, &d_risk)?;
        let mut params = model.get_params();
        opt.step(&mut params, &grads, ctx.lr)?;
        model.set_params(&params)?;
        total += loss;
    }
    Ok(total / bounds.len() as f64)
}

fn local_weights(config: &TrainConfig, train: &[&WindowedSample]) -> ClassWeights {
    config.global_class_weights.unwrap_or_else(|| class_weights(&labels(train)))
}

fn init_model(model_config: &ModelConfig, config: &TrainConfig, client: usize) -> Result<Model> {
    build_model(model_config.clone(), &mut Rng::derive(config.seed, &[stream::INIT, client as u64]))
}

/// Result of one trained model evaluated on the fold's test set.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub log: RoundLog,
    pub test: MetricsReport,
    pub test_scores: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    /// Parameters after every epoch or round, if requested.
    pub history: Vec<ParamVector>,
}

/// Early-stopping monitors sharing one training trajectory. Training goes
/// on until every monitor has stopped; each then reports its own snapshot,
/// exactly as if it had been the only one.
struct Monitors {
    metrics: Vec<EsMetric>,
    monitors: Vec<EsMonitor>,
    stopped_after: Vec<Option<usize>>,
    history: Vec<ParamVector>,
}

impl Monitors {
    fn new(metrics: &[EsMetric], patience: usize) -> Result<Self> {
        if metrics.is_empty() {
            return Err(Error::Config("at least one early-stopping metric is required".into()));
        }
        Ok(Self {
            metrics: metrics.to_vec(),
            monitors: metrics.iter().map(|&m| EsMonitor::new(m, patience)).collect(),
            stopped_after: vec![None; metrics.len()],
            history: Vec::new(),
        })
    }

    /// Returns true once all monitors have stopped.
    fn update(&mut self, epoch: usize, scores: &[f64], params: &ParamVector) -> bool {
        for (i, m) in self.monitors.iter_mut().enumerate() {
            if self.stopped_after[i].is_none() {
                if let EsDecision::Stop { .. } = es_update(m, epoch, scores[i], params) {
                    self.stopped_after[i] = Some(epoch);
                }
            }
        }
        self.stopped_after.iter().all(Option::is_some)
    }

    fn finish(
        self,
        mut model: Model,
        initial: &ParamVector,
        log: &RoundLog,
        epochs_run: usize,
        test: &[WindowedSample],
        threshold: f64,
    ) -> Result<Vec<TrainOutcome>> {
        let mut out = Vec::with_capacity(self.monitors.len());
        for (i, m) in self.monitors.iter().enumerate() {
            let run = self.stopped_after[i].map_or(epochs_run, |e| e + 1);
            let best = m.best_or(initial);
            model.set_params(&best)?;
            let (report, scores) = test_report(&model, test, threshold)?;
            let own = |metric: &str| {
                metric == self.metrics[i].name() || !self.metrics.iter().any(|m| m.name() == metric)
            };
            let log = RoundLog {
                entries: log
                    .entries
                    .iter()
                    .filter(|e| e.epoch < run && (e.phase == "train" || own(&e.metric)))
                    .cloned()
                    .collect(),
                wall_seconds: log.wall_seconds.iter().filter(|w| w.0 < run).copied().collect(),
            };
            out.push(TrainOutcome {
                params: best,
                log,
                test: report,
                test_scores: scores,
                best_epoch: m.best_epoch,
                epochs_run: run,
                history: self.history.iter().take(run).cloned().collect(),
            });
        }
        Ok(out)
    }
}

/// Single model on one pool with early stopping on `val`.
#[allow(clippy::too_many_arguments)]
fn train_single(
    model_config: &ModelConfig,
    train: &[&WindowedSample],
    val: &[&WindowedSample],
    test: &[WindowedSample],
    config: &TrainConfig,
    metrics: &[EsMetric],
    client: usize,
    batch: usize,
) -> Result<Vec<TrainOutcome>> {
    config.validate()?;
    let mut model = init_model(model_config, config, client)?;
    let initial = model.get_params();
    let weights = local_weights(config, train);
    let mut opt = OptState::new(config, &initial);
    let mut monitors = Monitors::new(metrics, config.patience)?;
    let mut log = RoundLog::default();
    let mut epochs_run = 0;
    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, config);
        let ctx = EpochCtx {
            config,
            weights,
            batch,
            lr,
            epoch,
            client,
        };
        let loss = train_epoch(&mut model, &mut opt, train, &ctx)?;
        let scores = val_scores(&model, val, metrics, config.threshold)?;
        let params = model.get_params();
        log.push(epoch, "train", Some(client), "lr", lr);
        log.push(epoch, "train", Some(client), "loss", loss);
        for (m, s) in metrics.iter().zip(&scores) {
            log.push(epoch, "val", Some(client), m.name(), *s);
        }
        log.wall_seconds.push((epoch, started.elapsed().as_secs_f64()));
        if config.record_params {
            monitors.history.push(params.clone());
        }
        epochs_run = epoch + 1;
        if monitors.update(epoch, &scores, &params) {
            break;
        }
    }
    monitors.finish(model, &initial, &log, epochs_run, test, config.threshold)
}

fn single<T>(mut v: Vec<T>) -> T {
    v.swap_remove(0)
}

/// One model on the union of every client's training data, validated on the
/// union of their validation data, with minibatches of `batch_base`.
pub fn train_cml(data: &FoldData, model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    Ok(single(train_cml_multi(data, model_config, config, &[config.es_metric])?))
}

/// [`train_cml`] once per early-stopping metric, sharing the trajectory.
pub fn train_cml_multi(
    data: &FoldData,
    model_config: &ModelConfig,
    config: &TrainConfig,
    metrics: &[EsMetric],
) -> Result<Vec<TrainOutcome>> {
    let train: Vec<&WindowedSample> = data.clients.iter().flat_map(|c| c.train.iter()).collect();
    let val: Vec<&WindowedSample> = data.clients.iter().flat_map(|c| c.val.iter()).collect();
    train_single(model_config, &train, &val, &data.test, config, metrics, 0, config.batch_base)
}

/// Independent per-client models with minibatches of `batch_base / K`,
/// each evaluated on the shared test set.
pub fn train_lml(data: &FoldData, model_config: &ModelConfig, config: &TrainConfig) -> Result<Vec<TrainOutcome>> {
    Ok(train_lml_multi(data, model_config, config, &[config.es_metric])?
        .into_iter()
        .map(single)
        .collect())
}

/// [`train_lml`] per early-stopping metric: `result[client][metric]`.
pub fn train_lml_multi(
    data: &FoldData,
    model_config: &ModelConfig,
    config: &TrainConfig,
    metrics: &[EsMetric],
) -> Result<Vec<Vec<TrainOutcome>>> {
    let k = data.clients.len();
    let batch = (config.batch_base / k).max(2);
    data.clients
        .iter()
        .enumerate()
        .map(|(i, c)| train_single(model_config, &refs(&c.train), &refs(&c.val), &data.test, config, metrics, i, batch))
        .collect()
}

/// Mean of the clients' test metrics.
pub fn mean_report(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Validation("no reports to average".into()))?;
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        auroc: mean(|r| r.auroc),
        auprc: mean(|r| r.auprc),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        threshold: first.threshold,
        n: first.n,
        n_pos: first.n_pos,
    })
}

/// `Σ (n_k / n) · θ_k`, accumulated in the given (ascending client) order.
pub fn aggregate(params: &[ParamVector], sizes: &[usize]) -> Result<ParamVector> {
    let first = params
        .first()
        .ok_or_else(|| Error::Validation("nothing to aggregate".into()))?;
    if params.len() != sizes.len() {
        return Err(Error::dim("client sizes", params.len().to_string(), sizes.len().to_string()));
    }
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return Err(Error::Validation("client sizes sum to zero".into()));
    }
    let mut out = ParamVector::zeros(first.layout().to_vec());
    for (p, &k) in params.iter().zip(sizes) {
        first
            .check_layout(p)
            .map_err(|e| Error::Layout(format!("client update does not match the global model: {e}")))?;
        let w = k as f64 / n as f64;
        for (o, v) in out.values_mut().iter_mut().zip(p.values()) {
            *o += w * v;
        }
    }
    Ok(out)
}

fn participants(config: &TrainConfig, fl: &FlConfig, round: usize) -> Vec<usize> {
    let k = fl.clients;
    if fl.participation >= 1.0 {
        return (0..k).collect();
    }
    let m = ((fl.participation * k as f64).round() as usize).clamp(1, k);
    let mut all: Vec<usize> = (0..k).collect();
    Rng::derive(config.seed, &[stream::PARTICIPATION, round as u64]).shuffle(&mut all);
    let mut chosen = all[..m].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Federated averaging: broadcast, `E` local epochs with fresh optimizer
/// state, size-weighted aggregation, validation on every client, early
/// stopping on the validation-size-weighted score.
pub fn train_fl(data: &FoldData, model_config: &ModelConfig, config: &TrainConfig, fl: &FlConfig) -> Result<TrainOutcome> {
    Ok(single(train_fl_multi(data, model_config, config, fl, &[config.es_metric])?))
}

/// [`train_fl`] once per early-stopping metric, sharing the rounds.
pub fn train_fl_multi(
    data: &FoldData,
    model_config: &ModelConfig,
    config: &TrainConfig,
    fl: &FlConfig,
    metrics: &[EsMetric],
) -> Result<Vec<TrainOutcome>> {
    config.validate()?;
    fl.validate()?;
    if fl.clients != data.clients.len() {
        return Err(Error::Config(format!(
            "federation expects {} clients but the fold has {}",
            fl.clients,
            data.clients.len()
        )));
    }
    let batch = (config.batch_base / fl.clients).max(2);
    let mut global = init_model(model_config, config, 0)?;
    let initial = global.get_params();
    let trains: Vec<Vec<&WindowedSample>> = data.clients.iter().map(|c| refs(&c.train)).collect();
    let vals: Vec<Vec<&WindowedSample>> = data.clients.iter().map(|c| refs(&c.val)).collect();
    let weights: Vec<ClassWeights> = trains.iter().map(|t| local_weights(config, t)).collect();
    let val_sizes: Vec<usize> = vals.iter().map(Vec::len).collect();

    let mut monitors = Monitors::new(metrics, config.patience)?;
    let mut log = RoundLog::default();
    let mut rounds_run = 0;
    for round in 0..fl.rounds_max {
        let started = Instant::now();
        let lr = lr_at(round, config);
        let selected = participants(config, fl, round);
        let broadcast = global.get_params();
        let mut updates = Vec::with_capacity(selected.len());
        let mut sizes = Vec::with_capacity(selected.len());
        for &k in &selected {
            let mut local = global.clone();
            local.set_params(&broadcast)?;
            let mut opt = OptState::new(config, &broadcast);
            for e in 0..fl.local_epochs {
                let ctx = EpochCtx {
                    config,
                    weights: weights[k],
                    batch,
                    lr,
                    epoch: round * fl.local_epochs + e,
                    client: k,
                };
                let loss = train_epoch(&mut local, &mut opt, &trains[k], &ctx)?;
                log.push(round, "train", Some(k), "loss", loss);
            }
            updates.push(local.get_params());
            sizes.push(trains[k].len());
        }
        global.set_params(&aggregate(&updates, &sizes)?)?;

        // per_client[k][metric]
        let per_client = vals
            .iter()
            .map(|v| val_scores(&global, v, metrics, config.threshold))
            .collect::<Result<Vec<_>>>()?;
        let mut scores = Vec::with_capacity(metrics.len());
        for (i, m) in metrics.iter().enumerate() {
            let client_scores: Vec<f64> = per_client.iter().map(|s| s[i]).collect();
            for (k, s) in client_scores.iter().enumerate() {
                log.push(round, "val", Some(k), m.name(), *s);
            }
            let score = fl_es_score(&client_scores, &val_sizes)?;
            log.push(round, "global", None, m.name(), score);
            scores.push(score);
        }
        log.push(round, "global", None, "lr", lr);
        log.wall_seconds.push((round, started.elapsed().as_secs_f64()));
        let params = global.get_params();
        if config.record_params {
            monitors.history.push(params.clone());
        }
        rounds_run = round + 1;
        if monitors.update(round, &scores, &params) {
            break;
        }
    }
    monitors.finish(global, &initial, &log, rounds_run, &data.test, config.threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSpec;

    fn scalar(v: f64) -> ParamVector {
        ParamVector::new(vec![ParamSpec::new("x", 1, 1)], vec![v]).unwrap()
    }

    #[test]
    fn reference_cohort_weights() {
        let mut labels = vec![0u8; 18_281];
        labels[..804].fill(1);
        let w = class_weights(&labels);
        assert!((w.w_pos - 22.74).abs() <= 0.01, "{}", w.w_pos);
        assert!((w.w_neg - 1.046).abs() <= 0.001, "{}", w.w_neg);
    }

    #[test]
    fn balanced_and_degenerate_weights() {
        assert_eq!(class_weights(&[0, 1, 0, 1]), ClassWeights { w_pos: 2.0, w_neg: 2.0 });
        assert_eq!(class_weights(&[0, 0, 0]), ClassWeights { w_pos: 0.0, w_neg: 1.0 });
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 0.01);
        assert_eq!(lr_at(4, &c), 0.01);
        assert_eq!(lr_at(5, &c), 0.005);
        assert_eq!(lr_at(12, &c), 0.0025);
    }

    #[test]
    fn weighted_aggregation() {
        let a = aggregate(&[scalar(1.0), scalar(3.0)], &[1, 3]).unwrap();
        assert_eq!(a.values(), &[2.5]);
        assert_eq!(aggregate(&[scalar(0.7)], &[42]).unwrap().values(), &[0.7]);
        let m = aggregate(&[scalar(1.0), scalar(2.0)], &[5, 5]).unwrap();
        assert_eq!(m.values(), &[1.5]);
    }

    #[test]
    fn aggregation_order_is_immaterial() {
        let ps: Vec<ParamVector> = [0.1, 0.7, 0.3333, 1e-3].iter().map(|&v| scalar(v)).collect();
        let sizes = [3, 5, 7, 11];
        let a = aggregate(&ps, &sizes).unwrap().values()[0];
        let rev: Vec<ParamVector> = ps.iter().rev().cloned().collect();
        let sr: Vec<usize> = sizes.iter().rev().copied().collect();
        let b = aggregate(&rev, &sr).unwrap().values()[0];
        assert!((a - b).abs() <= 1e-15);
        assert_eq!(a, aggregate(&ps, &sizes).unwrap().values()[0]);
    }

    #[test]
    fn aggregation_rejects_layout_mismatch() {
        let other = ParamVector::new(vec![ParamSpec::new("y", 1, 1)], vec![0.0]).unwrap();
        assert!(matches!(aggregate(&[scalar(1.0), other], &[1, 1]), Err(Error::Layout(_))));
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        assert_eq!(batch_bounds(10, 4), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(batch_bounds(9, 4), vec![(0, 4), (4, 9)]);
        assert_eq!(batch_bounds(3, 8), vec![(0, 3)]);
    }

    #[test]
    fn participation_sampling() {
        let c = TrainConfig::default();
        let fl = FlConfig {
            clients: 8,
            participation: 0.5,
            ..FlConfig::default()
        };
        let a = participants(&c, &fl, 3);
        assert_eq!(a.len(), 4);
        assert_eq!(a, participants(&c, &fl, 3));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        let full = FlConfig { clients: 8, ..FlConfig::default() };
        assert_eq!(participants(&c, &full, 0), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn log_csv_layout() {
        let mut log = RoundLog::default();
        log.push(0, "val", Some(1), "f1", 0.5);
        log.push(0, "global", None, "f1", 0.25);
        log.wall_seconds.push((0, 1.0));
        let csv = log.to_csv();
        assert!(csv.starts_with("epoch,phase,client,metric,value\n0,val,1,f1,0.5\n0,global,,f1,0.25\n"));
        let mut other = log.clone();
        other.wall_seconds[0].1 = 9.0;
        assert_eq!(log, other);
    }
}
