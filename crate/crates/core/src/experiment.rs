//! Configuration-driven experiment grid: cohort, splits, training, tables.
//!
//! A work unit is one `(paradigm, K, Δt_data, fold)` combination. It trains
//! once and reports one row per configured early-stopping metric, since the
//! metric only decides which snapshot is kept. Units write their results to
//! `runs/<key>/result.json` so an interrupted grid can be resumed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    build_records, generate_synthetic_cohort, load_events, load_outcomes, select_cohort, write_events,
    write_outcomes, CohortSpec, PatientRecord, SynthAudit, SynthConfig, WindowedDataset,
};
use crate::error::{Error, Result};
use crate::metrics::{EsMetric, MetricsReport};
use crate::nn::serialize_params;
use crate::partition::{make_split_plan, SplitPlan};
use crate::trainers::{
    mean_report, train_cml_multi, train_fl_multi, train_lml_multi, FlConfig, FoldData, TrainConfig, TrainOutcome,
};

pub const RESULTS_HEADER: &str = "paradigm,clients,dt_data_h,es_metric,fold,auroc,auprc,precision,recall,f1,dt_pred_mean_h";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Cml,
    Lml,
    Fl,
}

impl Paradigm {
    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Cml => "cml",
            Paradigm::Lml => "lml",
            Paradigm::Fl => "fl",
        }
    }
}

impl std::fmt::Display for Paradigm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Event and outcome CSVs; relative paths are taken from the config's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub events: PathBuf,
    pub outcomes: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlSettings {
    pub local_epochs: usize,
    pub participation: f64,
}

impl Default for FlSettings {
    fn default() -> Self {
        Self {
            local_epochs: 1,
            participation: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub folds: usize,
    pub val_fraction: f64,
    pub dt_data_hours: Vec<f64>,
    pub paradigms: Vec<Paradigm>,
    pub clients: Vec<usize>,
    pub es_metrics: Vec<EsMetric>,
    /// CSV input; synthetic data is generated when absent.
    pub data: Option<CsvSource>,
    pub synthetic: SynthConfig,
    pub cohort: CohortSpec,
    pub train: TrainConfig,
    pub fl: FlSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("results"),
            folds: 5,
            val_fraction: 0.2,
            dt_data_hours: vec![8.0, 16.0, 24.0],
            paradigms: vec![Paradigm::Cml, Paradigm::Lml, Paradigm::Fl],
            clients: vec![2, 4, 8],
            es_metrics: vec![EsMetric::Loss],
            data: None,
            synthetic: SynthConfig::default(),
            cohort: CohortSpec::default(),
            train: TrainConfig::default(),
            fl: FlSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(d) = &mut self.data {
            fix(&mut d.events);
            fix(&mut d.outcomes);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.cohort.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if self.dt_data_hours.is_empty() || self.paradigms.is_empty() || self.es_metrics.is_empty() {
            return bad("dt_data_hours, paradigms and es_metrics must be non-empty".into());
        }
        for &dt in &self.dt_data_hours {
            if !(dt > 0.0) || dt > self.cohort.dt_min_hours {
                return bad(format!("dt_data {dt} h must be positive and at most dt_min = {} h", self.cohort.dt_min_hours));
            }
        }
        let federated = self.paradigms.iter().any(|p| *p != Paradigm::Cml);
        if federated && self.clients.is_empty() {
            return bad("clients must be non-empty when lml or fl is requested".into());
        }
        if self.clients.contains(&0) {
            return bad("client counts must be positive".into());
        }
        self.fl_config(1).validate()?;
        if self.data.is_none() {
            self.synthetic.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    fn fl_config(&self, clients: usize) -> FlConfig {
        FlConfig {
            clients,
            local_epochs: self.fl.local_epochs,
            participation: self.fl.participation,
            rounds_max: self.train.max_epochs,
        }
    }

    /// Training units in result order.
    pub fn units(&self) -> Vec<Unit> {
        let mut out = Vec::new();
        for &paradigm in &self.paradigms {
            let ks: Vec<usize> = match paradigm {
                Paradigm::Cml => vec![1],
                _ => self.clients.clone(),
            };
            for k in ks {
                for &dt in &self.dt_data_hours {
                    for fold in 0..self.folds {
                        out.push(Unit {
                            paradigm,
                            clients: k,
                            dt_data_hours: dt,
                            fold,
                        });
                    }
                }
            }
        }
        out
    }

    fn client_counts(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = self.units().iter().map(|u| u.clients).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub paradigm: Paradigm,
    pub clients: usize,
    pub dt_data_hours: f64,
    pub fold: usize,
}

impl Unit {
    pub fn key(&self) -> String {
        format!("{}-k{}-dt{}-fold{}", self.paradigm, self.clients, self.dt_data_hours, self.fold)
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub paradigm: Paradigm,
    pub clients: usize,
    pub dt_data_h: f64,
    pub es_metric: EsMetric,
    pub fold: usize,
    #[serde(with = "nan_as_null")]
    pub auroc: f64,
    #[serde(with = "nan_as_null")]
    pub auprc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub dt_pred_mean_h: f64,
    pub test_ids_sha256: String,
    /// Epoch or round of the restored snapshot; one per client for lml.
    pub best_epochs: Vec<Option<usize>>,
}

impl ResultRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.paradigm,
            self.clients,
            self.dt_data_h,
            self.es_metric,
            self.fold,
            self.auroc,
            self.auprc,
            self.precision,
            self.recall,
            self.f1,
            self.dt_pred_mean_h
        )
    }

    pub fn metric(&self, name: &str) -> f64 {
        match name {
            "auroc" => self.auroc,
            "auprc" => self.auprc,
            "precision" => self.precision,
            "recall" => self.recall,
            "f1" => self.f1,
            "dt_pred_mean_h" => self.dt_pred_mean_h,
            _ => f64::NAN,
        }
    }
}

pub const METRIC_NAMES: [&str; 5] = ["auroc", "auprc", "precision", "recall", "f1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// `(mean, sample std with denominator n − 1)`; std is 0 for a single value.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub paradigm: Paradigm,
    pub clients: usize,
    pub dt_data_h: f64,
    pub es_metric: EsMetric,
    pub folds: usize,
    pub metrics: BTreeMap<String, MeanStd>,
}

/// Mean ± std over folds for every configuration, in first-appearance order.
pub fn aggregate_rows(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<(AggregateRow, Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        let same = |a: &AggregateRow| {
            a.paradigm == r.paradigm && a.clients == r.clients && a.dt_data_h == r.dt_data_h && a.es_metric == r.es_metric
        };
        match groups.iter_mut().find(|(a, _)| same(a)) {
            Some((_, members)) => members.push(r),
            None => groups.push((
                AggregateRow {
                    paradigm: r.paradigm,
                    clients: r.clients,
                    dt_data_h: r.dt_data_h,
                    es_metric: r.es_metric,
                    folds: 0,
                    metrics: BTreeMap::new(),
                },
                vec![r],
            )),
        }
    }
    groups
        .into_iter()
        .map(|(mut a, members)| {
            a.folds = members.len();
            for name in METRIC_NAMES.iter().chain(["dt_pred_mean_h"].iter()) {
                let vals: Vec<f64> = members.iter().map(|r| r.metric(name)).collect();
                a.metrics.insert(name.to_string(), mean_std(&vals));
            }
            a
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UnitResult {
    key: String,
    es_metrics: Vec<EsMetric>,
    rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsFile {
    pub seed: u64,
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    /// Worker threads; 0 picks the rayon default.
    pub jobs: usize,
    pub dry_run: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
    pub skipped_units: usize,
    pub output_dir: PathBuf,
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Human-readable description of the grid, one line per unit.
pub fn describe_grid(config: &ExperimentConfig) -> String {
    let units = config.units();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} training units, {} result rows, output {}",
        units.len(),
        units.len() * config.es_metrics.len(),
        config.output_dir.display()
    );
    let es: Vec<&str> = config.es_metrics.iter().map(|m| m.name()).collect();
    for u in &units {
        let _ = writeln!(out, "  {}  es={}", u.key(), es.join(","));
    }
    out
}

fn hash_ids(ids: &[Arc<str>]) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Selected and imputed cohort for the configured data source.
pub fn prepare_records(config: &ExperimentConfig) -> Result<(Vec<PatientRecord>, serde_json::Value)> {
    let (events, outcomes, synth) = match &config.data {
        Some(src) => (load_events(&src.events)?, load_outcomes(&src.outcomes)?, None),
        None => {
            let g = generate_synthetic_cohort(config.seed, &config.synthetic, &config.cohort)?;
            (g.events, g.outcomes, Some(g.audit))
        }
    };
    let cohort = select_cohort(events, &outcomes, &config.cohort)?;
    let audit = serde_json::json!({
        "retained": cohort.stays.len(),
        "deaths": cohort.deaths(),
        "later_stay_events_dropped": cohort.later_stay_events_dropped,
        "dropped": cohort.audit,
        "synthetic": synth,
    });
    Ok((build_records(&cohort), audit))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn load_unit(dir: &Path, key: &str, es: &[EsMetric]) -> Option<Vec<ResultRow>> {
    let text = std::fs::read_to_string(dir.join("result.json")).ok()?;
    let r: UnitResult = serde_json::from_str(&text).ok()?;
    (r.key == key && r.es_metrics == es).then_some(r.rows)
}

fn row_for(unit: &Unit, es: EsMetric, report: &MetricsReport, data: &FoldData, hash: &str, best: Vec<Option<usize>>) -> ResultRow {
    ResultRow {
        paradigm: unit.paradigm,
        clients: unit.clients,
        dt_data_h: unit.dt_data_hours,
        es_metric: es,
        fold: unit.fold,
        auroc: report.auroc,
        auprc: report.auprc,
        precision: report.precision,
        recall: report.recall,
        f1: report.f1,
        dt_pred_mean_h: data.dt_pred_mean_hours(),
        test_ids_sha256: hash.to_string(),
        best_epochs: best,
    }
}

fn run_unit(
    config: &ExperimentConfig,
    unit: &Unit,
    dataset: &WindowedDataset,
    plan: &SplitPlan,
    dir: &Path,
) -> Result<Vec<ResultRow>> {
    let fold = &plan.folds[unit.fold];
    let data = FoldData::build(dataset, fold)?;
    let model_config = data.model_config()?;
    let train = config.train_config();
    let es = &config.es_metrics;
    let hash = hash_ids(&fold.test);
    std::fs::create_dir_all(dir)?;
    let save = |name: String, o: &TrainOutcome| -> Result<()> {
        write_atomic(&dir.join(format!("model-{name}.fmp")), &serialize_params(&o.params)?)?;
        write_atomic(&dir.join(format!("log-{name}.csv")), o.log.to_csv().as_bytes())
    };
    let mut rows = Vec::with_capacity(es.len());
    match unit.paradigm {
        Paradigm::Cml | Paradigm::Fl => {
            let outcomes = if unit.paradigm == Paradigm::Cml {
                train_cml_multi(&data, &model_config, &train, es)?
            } else {
                train_fl_multi(&data, &model_config, &train, &config.fl_config(unit.clients), es)?
            };
            for (m, o) in es.iter().zip(&outcomes) {
                save(m.name().to_string(), o)?;
                rows.push(row_for(unit, *m, &o.test, &data, &hash, vec![o.best_epoch]));
            }
        }
        Paradigm::Lml => {
            let per_client = train_lml_multi(&data, &model_config, &train, es)?;
            for (i, m) in es.iter().enumerate() {
                let mut reports = Vec::new();
                let mut best = Vec::new();
                for (k, outcomes) in per_client.iter().enumerate() {
                    save(format!("{}-client{k}", m.name()), &outcomes[i])?;
                    reports.push(outcomes[i].test.clone());
                    best.push(outcomes[i].best_epoch);
                }
                rows.push(row_for(unit, *m, &mean_report(&reports)?, &data, &hash, best));
            }
        }
    }
    let result = UnitResult {
        key: unit.key(),
        es_metrics: es.clone(),
        rows: rows.clone(),
    };
    write_atomic(&dir.join("result.json"), serde_json::to_string_pretty(&result)?.as_bytes())?;
    Ok(rows)
}

fn write_results(config: &ExperimentConfig, rows: &[ResultRow]) -> Result<Vec<AggregateRow>> {
    let aggregates = aggregate_rows(rows);
    let out = &config.output_dir;
    write_atomic(&out.join("results.csv"), results_csv(rows).as_bytes())?;
    let file = ResultsFile {
        seed: config.seed,
        rows: rows.to_vec(),
        aggregates: aggregates.clone(),
    };
    write_atomic(&out.join("results.json"), serde_json::to_string_pretty(&file)?.as_bytes())?;
    Ok(aggregates)
}

/// Runs the whole grid. Every unit is a pure function of the config, so
/// the output does not depend on `jobs` or on resuming.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    if options.dry_run {
        print!("{}", describe_grid(config));
        return Ok(RunSummary {
            rows: Vec::new(),
            aggregates: Vec::new(),
            skipped_units: 0,
            output_dir: config.output_dir.clone(),
        });
    }
    let out = &config.output_dir;
    std::fs::create_dir_all(out.join("runs"))?;
    std::fs::write(out.join("config.toml"), toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?)?;

    let (records, audit) = prepare_records(config)?;
    write_atomic(&out.join("cohort_audit.json"), serde_json::to_string_pretty(&audit)?.as_bytes())?;
    log::info!("cohort: {} patients", records.len());

    let mut ids: Vec<(Arc<str>, u8)> = records.iter().map(|r| (r.patient_id.clone(), r.label)).collect();
    ids.sort();
    let mut plans = BTreeMap::new();
    for k in config.client_counts() {
        let plan = make_split_plan(&ids, config.folds, k, config.val_fraction, config.seed)?;
        plan.validate(&ids)?;
        plan.save(&out.join(format!("splits-k{k}.json")))?;
        plans.insert(k, plan);
    }
    let mut datasets = Vec::new();
    for &dt in &config.dt_data_hours {
        datasets.push((dt, WindowedDataset::build(&records, dt, &config.cohort)?));
    }
    drop(records);

    let units = config.units();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<(bool, Result<Vec<ResultRow>>)> = pool.install(|| {
        use rayon::prelude::*;
        units
            .par_iter()
            .map(|u| {
                let dir = out.join("runs").join(u.key());
                if options.resume {
                    if let Some(rows) = load_unit(&dir, &u.key(), &config.es_metrics) {
                        log::info!("{}: already complete", u.key());
                        return (true, Ok(rows));
                    }
                }
                let dataset = &datasets
                    .iter()
                    .find(|(dt, _)| *dt == u.dt_data_hours)
                    .expect("dataset for every configured window")
                    .1;
                log::info!("{}: training", u.key());
                (false, run_unit(config, u, dataset, &plans[&u.clients], &dir))
            })
            .collect()
    });

    let skipped = results.iter().filter(|r| r.0).count();
    let mut unit_rows = Vec::with_capacity(units.len());
    let mut first_error = None;
    for (u, (_, r)) in units.iter().zip(results) {
        match r {
            Ok(rows) => unit_rows.push((*u, rows)),
            Err(e) => {
                log::error!("{} failed: {e}", u.key());
                first_error.get_or_insert(e);
            }
        }
    }
    // rows ordered by paradigm, K, Δt, ES metric, fold
    let mut rows = Vec::new();
    let mut i = 0;
    while i < unit_rows.len() {
        let head = unit_rows[i].0;
        let mut j = i;
        while j < unit_rows.len()
            && unit_rows[j].0.paradigm == head.paradigm
            && unit_rows[j].0.clients == head.clients
            && unit_rows[j].0.dt_data_hours == head.dt_data_hours
        {
            j += 1;
        }
        for m in &config.es_metrics {
            for (_, r) in &unit_rows[i..j] {
                rows.extend(r.iter().filter(|row| row.es_metric == *m).cloned());
            }
        }
        i = j;
    }
    let aggregates = write_results(config, &rows)?;
    if let Some(e) = first_error {
        return Err(e);
    }
    Ok(RunSummary {
        rows,
        aggregates,
        skipped_units: skipped,
        output_dir: out.clone(),
    })
}

/// Parses a `results.csv` written by [`run_experiment`].
pub fn read_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::Validation(format!("unexpected results header `{}`", header.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let err = |what: &str| Error::Validation(format!("results.csv line {}: bad {what}", i + 2));
        let num = |j: usize, what: &str| rec[j].parse::<f64>().map_err(|_| err(what));
        let paradigm = match &rec[0] {
            "cml" => Paradigm::Cml,
            "lml" => Paradigm::Lml,
            "fl" => Paradigm::Fl,
            _ => return Err(err("paradigm")),
        };
        rows.push(ResultRow {
            paradigm,
            clients: rec[1].parse().map_err(|_| err("clients"))?,
            dt_data_h: num(2, "dt_data_h")?,
            es_metric: rec[3].parse().map_err(|_| err("es_metric"))?,
            fold: rec[4].parse().map_err(|_| err("fold"))?,
            auroc: num(5, "auroc")?,
            auprc: num(6, "auprc")?,
            precision: num(7, "precision")?,
            recall: num(8, "recall")?,
            f1: num(9, "f1")?,
            dt_pred_mean_h: num(10, "dt_pred_mean_h")?,
            test_ids_sha256: String::new(),
            best_epochs: Vec::new(),
        });
    }
    Ok(rows)
}

/// Mean ± std tables of `results_dir/results.csv`, also written to
/// `summary.md` next to it.
pub fn summarize(results_dir: &Path) -> Result<String> {
    let path = results_dir.join("results.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    let rows = read_results_csv(&text)?;
    if rows.is_empty() {
        return Err(Error::Validation(format!("{} holds no result rows", path.display())));
    }
    let table = summary_table(&aggregate_rows(&rows));
    std::fs::write(results_dir.join("summary.md"), &table)?;
    Ok(table)
}

pub fn summary_table(aggregates: &[AggregateRow]) -> String {
    let mut out = String::new();
    let mut es: Vec<EsMetric> = aggregates.iter().map(|a| a.es_metric).collect();
    es.sort();
    es.dedup();
    for m in es {
        let _ = writeln!(out, "## early stopping on {m}\n");
        let _ = writeln!(out, "| dt_data | paradigm | K | AUROC | AUPRC | Precision | Recall | F1 | avg dt_pred | folds |");
        let _ = writeln!(out, "|---|---|---|---|---|---|---|---|---|---|");
        let mut rows: Vec<&AggregateRow> = aggregates.iter().filter(|a| a.es_metric == m).collect();
        rows.sort_by(|a, b| {
            a.dt_data_h
                .total_cmp(&b.dt_data_h)
                .then(a.paradigm.cmp(&b.paradigm))
                .then(a.clients.cmp(&b.clients))
        });
        for a in rows {
            let cell = |name: &str| {
                let s = &a.metrics[name];
                format!("{:.2} ± {:.2}", s.mean, s.std)
            };
            let folds = if a.folds == 1 {
                "1 (std undefined)".to_string()
            } else {
                a.folds.to_string()
            };
            let _ = writeln!(
                out,
                "| {} h | {} | {} | {} | {} | {} | {} | {} | {:.1} h | {} |",
                a.dt_data_h,
                a.paradigm.name().to_uppercase(),
                a.clients,
                cell("auroc"),
                cell("auprc"),
                cell("precision"),
                cell("recall"),
                cell("f1"),
                a.metrics["dt_pred_mean_h"].mean,
                folds
            );
        }
        out.push('\n');
    }
    out
}

/// Writes `events.csv`, `outcomes.csv` and `synth_audit.json` into `dir`.
pub fn gen_data(seed: u64, synth: &SynthConfig, spec: &CohortSpec, dir: &Path) -> Result<SynthAudit> {
    let g = generate_synthetic_cohort(seed, synth, spec)?;
    std::fs::create_dir_all(dir)?;
    write_events(std::io::BufWriter::new(std::fs::File::create(dir.join("events.csv"))?), &g.events)?;
    write_outcomes(std::io::BufWriter::new(std::fs::File::create(dir.join("outcomes.csv"))?), &g.outcomes)?;
    std::fs::write(dir.join("synth_audit.json"), serde_json::to_string_pretty(&g.audit)?)?;
    Ok(g.audit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(p: Paradigm, k: usize, fold: usize, auroc: f64) -> ResultRow {
        ResultRow {
            paradigm: p,
            clients: k,
            dt_data_h: 24.0,
            es_metric: EsMetric::Loss,
            fold,
            auroc,
            auprc: 0.5,
            precision: 0.5,
            recall: 0.5,
            f1: 0.5,
            dt_pred_mean_h: 19.2,
            test_ids_sha256: String::new(),
            best_epochs: vec![],
        }
    }

    #[test]
    fn empty_config_is_default_setup() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate().unwrap();
        assert_eq!(c.train.lr0, 0.01);
        assert_eq!(c.train.max_epochs, 100);
        assert_eq!(c.train.patience, 30);
        assert_eq!(c.folds, 5);
        assert_eq!(c.fl.local_epochs, 1);
        assert_eq!(c.fl.participation, 1.0);
    }

    #[test]
    fn default_grid_size() {
        let c = ExperimentConfig::default();
        // 3 windows × (CML + 3 × LML + 3 × FL) × 5 folds
        assert_eq!(c.units().len(), 105);
        assert_eq!(aggregate_rows(&[]).len(), 0);
    }

    #[test]
    fn config_errors_are_located() {
        let err = ExperimentConfig::from_toml("folds = 5\n[train]\nlr = 3\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let c = ExperimentConfig::from_toml("dt_data_hours = [48]").unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_toml("paradigms = [\"fl\"]\nclients = []").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn aggregates_use_sample_std() {
        let rows: Vec<ResultRow> = [0.8, 0.9, 0.85, 0.95, 0.75]
            .iter()
            .enumerate()
            .map(|(f, &a)| row(Paradigm::Cml, 1, f, a))
            .collect();
        let agg = aggregate_rows(&rows);
        assert_eq!(agg.len(), 1);
        let s = &agg[0].metrics["auroc"];
        assert!((s.mean - 0.85).abs() < 1e-12);
        // deviations ±0.05, ±0.1, 0: Σ = 0.025, / 4
        assert!((s.std - (0.025f64 / 4.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[0.3]).std, 0.0);
    }

    #[test]
    fn csv_roundtrip() {
        let rows = vec![row(Paradigm::Fl, 8, 0, 0.9), row(Paradigm::Lml, 8, 1, f64::NAN)];
        let text = results_csv(&rows);
        assert!(text.starts_with(RESULTS_HEADER));
        assert!(text.contains("\nfl,8,24,loss,0,0.9,0.5,0.5,0.5,0.5,19.2\n"));
        let back = read_results_csv(&text).unwrap();
        assert_eq!(back[0].auroc, 0.9);
        assert!(back[1].auroc.is_nan());
    }

    #[test]
    fn summarize_needs_results() {
        let dir = tempfile::tempdir().unwrap();
        assert!(summarize(dir.path()).is_err());
        std::fs::write(dir.path().join("results.csv"), results_csv(&[row(Paradigm::Cml, 1, 0, 0.9)])).unwrap();
        let table = summarize(dir.path()).unwrap();
        assert!(table.contains("0.90 ± 0.00"));
        assert!(table.contains("1 (std undefined)"));
        assert!(dir.path().join("summary.md").exists());
    }

    #[test]
    fn dry_run_touches_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            output_dir: dir.path().join("out"),
            ..ExperimentConfig::default()
        };
        let s = run_experiment(
            &config,
            &RunOptions {
                dry_run: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert!(s.rows.is_empty());
        assert!(!dir.path().join("out").exists());
        assert!(describe_grid(&config).starts_with("105 training units, 105 result rows"));
    }
}
