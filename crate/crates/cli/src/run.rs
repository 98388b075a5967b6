//! Train, eval and theory runs over a resolved [`ExperimentConfig`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use dan_core::dan::{best_layer, ReportKind, Validation};
use dan_core::data::{
    fit_standardizer, load_delimited_set, load_idx, split, split_count, subsample, Delimiter, DelimitedOptions, LabelColumn,
};
use dan_core::regression::{accuracy, classify_rows};
use dan_core::theory::{dynamics_trace, span_gain_check_columns, DistanceDynamics, SPAN_TOLERANCE};
use dan_core::{dan_fit, encode_one_hot, kdan_fit, serial, AnyModel, Dataset, Error as CoreError, LayerReport, ModelFile, Standardizer};
use serde::Serialize;

use crate::config::{DataFormat, ExperimentConfig, ModelChoice};

/// Default output directory when none is configured.
pub const DEFAULT_OUT: &str = "dan-out";

/// Slack on the observed residual comparison between consecutive layers.
const RESIDUAL_SLACK: f64 = 1e-8;

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    let result = fs::write(&partial, bytes).and_then(|_| fs::rename(&partial, path));
    if result.is_err() {
        let _ = fs::remove_file(&partial);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn delimited_options(cfg: &ExperimentConfig) -> Result<DelimitedOptions> {
    let spec = &cfg.dataset;
    let label_column = match spec.label_column.as_str() {
        "first" => LabelColumn::First,
        "last" => LabelColumn::Last,
        other => LabelColumn::Index(
            other
                .parse()
                .map_err(|_| anyhow!("dataset.label_column: expected first, last or an index, got `{other}`"))?,
        ),
    };
    let delimiter = match spec.delimiter.as_str() {
        "whitespace" => Delimiter::Whitespace,
        "\\t" | "tab" => Delimiter::Char('\t'),
        d => {
            let mut chars = d.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Delimiter::Char(c),
                _ => bail!("dataset.delimiter: expected one character or `whitespace`, got `{d}`"),
            }
        }
    };
    Ok(DelimitedOptions {
        label_column,
        delimiter,
        has_header: spec.header,
    })
}

/// Loads the configured files: the first part is training data, the
/// optional second a held-out test set.
pub fn load_parts(cfg: &ExperimentConfig) -> Result<Vec<Dataset>> {
    let paths = &cfg.dataset.paths;
    if paths.is_empty() {
        bail!("dataset.paths: at least one file is required");
    }
    match cfg.format() {
        DataFormat::Idx => {
            if paths.len() != 2 && paths.len() != 4 {
                bail!("dataset.paths: IDX data takes image/label pairs (2 or 4 files), got {}", paths.len());
            }
            paths
                .chunks(2)
                .map(|p| load_idx(&p[0], &p[1]).with_context(|| format!("loading {}", p[0].display())))
                .collect()
        }
        DataFormat::Delimited => {
            if paths.len() > 2 {
                bail!("dataset.paths: delimited data takes a table or a train/test pair, got {} files", paths.len());
            }
            let opts = delimited_options(cfg)?;
            load_delimited_set(paths, &opts).with_context(|| format!("loading {}", paths[0].display()))
        }
    }
}

/// The train/test data of one trial, standardized with training statistics.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub standardizer: Option<Standardizer>,
}

pub fn trial_data(cfg: &ExperimentConfig, parts: &[Dataset], trial: usize) -> Result<TrialData> {
    let seed = cfg.seed.wrapping_add(trial as u64);
    let spec = &cfg.dataset;
    let (train, test) = match parts {
        [train, test] if cfg.trials == 1 => (train.clone(), Some(test.clone())),
        [train, test] => {
            let pooled = Dataset::concat(&[train, test])?;
            let (a, b) = split_count(&pooled, train.len(), seed)?;
            (a, Some(b))
        }
        [all] => {
            let (a, b) = match spec.train_size {
                Some(n) => split_count(all, n, seed)?,
                None => split(all, spec.train_fraction, spec.stratified, seed)?,
            };
            (a, Some(b))
        }
        _ => bail!("dataset.paths: expected one or two data parts, got {}", parts.len()),
    };
    let train = match spec.max_train {
        Some(n) => subsample(&train, n, seed),
        None => train,
    };
    let test = test.filter(|t| !t.is_empty());
    if !cfg.standardize() {
        return Ok(TrialData { train, test, standardizer: None });
    }
    let s = fit_standardizer(&train);
    Ok(TrialData {
        train: s.apply_dataset(&train)?,
        test: test.map(|t| s.apply_dataset(&t)).transpose()?,
        standardizer: Some(s),
    })
}

pub fn fit(choice: &ModelChoice, data: &TrialData) -> Result<(AnyModel, Vec<LayerReport>)> {
    let y = data.train.targets()?;
    let validation = data.test.as_ref().map(|t| Validation {
        features: &t.features,
        labels: &t.labels,
    });
    Ok(match choice {
        ModelChoice::Dan(c) => {
            let (m, r) = dan_fit(&data.train.features, &y, c, validation)?;
            (AnyModel::Dan(m), r)
        }
        ModelChoice::Kdan(c) => {
            let (m, r) = kdan_fit(&data.train.features, &y, c, validation)?;
            (AnyModel::Kdan(m), r)
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub train_rows: usize,
    pub test_rows: usize,
    /// Accuracy of the final classifier.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub best_layer: Option<usize>,
    pub seconds: f64,
    #[serde(skip)]
    pub reports: Vec<LayerReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub model: String,
    pub trials: Vec<TrialResult>,
    pub mean_test_accuracy: Option<f64>,
    pub std_test_accuracy: Option<f64>,
    pub mean_train_accuracy: f64,
    pub total_seconds: f64,
    pub model_path: PathBuf,
    pub report_path: PathBuf,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

pub fn layer_table(trials: &[TrialResult]) -> String {
    let mut out = String::from("trial\tseed\tlayer\tkind\ttrain_acc\ttest_acc\ttrain_residual\tintra\tinter\tbest\n");
    for t in trials {
        for r in &t.reports {
            let kind = match r.kind {
                ReportKind::Layer => "layer",
                ReportKind::FineTune => "ft",
            };
            let best = r.kind == ReportKind::Layer && Some(r.layer_index) == t.best_layer;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{kind}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.trial,
                t.seed,
                r.layer_index,
                r.train_accuracy,
                fmt_opt(r.validation_accuracy),
                r.train_residual,
                fmt_opt(r.intra_distance),
                fmt_opt(r.inter_distance),
                if best { "*" } else { "" }
            );
        }
    }
    out
}

fn model_label(cfg: &ExperimentConfig) -> String {
    cfg.model_spec()
        .ok()
        .and_then(|s| s.kind)
        .and_then(|k| serde_json::to_value(k).ok())
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let choice = cfg.resolve()?;
    let parts = load_parts(cfg)?;
    let dir = out_dir(cfg)?;
    let started = Instant::now();
    let mut trials = Vec::with_capacity(cfg.trials);
    let mut first_model = None;
    for t in 0..cfg.trials {
        let seed = cfg.seed.wrapping_add(t as u64);
        let data = trial_data(cfg, &parts, t)?;
        let clock = Instant::now();
        let (model, reports) = fit(&choice, &data).with_context(|| format!("trial {t} (seed {seed})"))?;
        let seconds = clock.elapsed().as_secs_f64();
        let last = reports.last().expect("at least one layer report");
        trials.push(TrialResult {
            trial: t,
            seed,
            train_rows: data.train.len(),
            test_rows: data.test.as_ref().map_or(0, Dataset::len),
            train_accuracy: last.train_accuracy,
            test_accuracy: last.validation_accuracy,
            best_layer: best_layer(&reports),
            seconds,
            reports,
        });
        if t == 0 {
            first_model = Some(ModelFile {
                model,
                standardizer: data.standardizer,
            });
        }
    }
    let model_path = dir.join("model.danm");
    serial::save(&model_path, first_model.as_ref().expect("trials >= 1"))?;
    let report_path = dir.join("layers.tsv");
    write_atomic(&report_path, layer_table(&trials).as_bytes())?;

    let tests: Option<Vec<f64>> = trials.iter().map(|t| t.test_accuracy).collect();
    let test_stats = tests.map(|v| mean_std(&v));
    let summary = TrainSummary {
        model: model_label(cfg),
        mean_test_accuracy: test_stats.map(|s| s.0),
        std_test_accuracy: test_stats.map(|s| s.1),
        mean_train_accuracy: mean_std(&trials.iter().map(|t| t.train_accuracy).collect::<Vec<_>>()).0,
        trials,
        total_seconds: started.elapsed().as_secs_f64(),
        model_path,
        report_path,
    };
    write_atomic(&dir.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartEval {
    pub part: String,
    pub rows: usize,
    /// Accuracy of `argmax p^(ℓ)` for each layer.
    pub layer_accuracy: Vec<f64>,
    pub final_accuracy: f64,
    pub predictions: Vec<usize>,
    /// `confusion[true][predicted]`.
    pub confusion: Option<Vec<Vec<usize>>>,
}

/// Evaluates a stored model on every loaded part of the dataset.
pub fn run_eval(model_path: &Path, cfg: &ExperimentConfig, confusion: bool) -> Result<Vec<PartEval>> {
    let file = serial::load(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let parts = load_parts(cfg)?;
    let names = ["train", "test"];
    let mut evals = Vec::with_capacity(parts.len());
    for (i, part) in parts.iter().enumerate() {
        let name = if parts.len() == 1 { "data" } else { names[i] };
        evals.push(eval_part(&file, part, name, confusion).with_context(|| format!("evaluating {name}"))?);
    }
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        let mut tsv = String::from("part\tlayer\taccuracy\n");
        for e in &evals {
            for (l, a) in e.layer_accuracy.iter().enumerate() {
                let _ = writeln!(tsv, "{}\t{}\t{a}", e.part, l + 1);
            }
            let _ = writeln!(tsv, "{}\tfinal\t{}", e.part, e.final_accuracy);
        }
        write_atomic(&dir.join("eval.tsv"), tsv.as_bytes())?;
        write_atomic(&dir.join("eval.json"), &serde_json::to_vec_pretty(&evals)?)?;
    }
    Ok(evals)
}

pub fn eval_part(file: &ModelFile, part: &Dataset, name: &str, confusion: bool) -> Result<PartEval> {
    let expected = file.model.input_dim();
    if part.dim() != expected {
        return Err(CoreError::shape("eval features", expected, part.dim()).into());
    }
    let classes = file.model.class_count();
    if let Some((row, &label)) = part.labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        bail!("row {row}: label {label} is out of range for a {classes}-class model");
    }
    let x = match &file.standardizer {
        Some(s) => s.apply(&part.features)?,
        None => part.features.clone(),
    };
    let out = file.model.forward_batch(&x)?;
    let layer_accuracy = out
        .trace
        .responses
        .iter()
        .map(|p| Ok(accuracy(&classify_rows(p)?, &part.labels)))
        .collect::<Result<Vec<_>>>()?;
    let predictions = classify_rows(&out.response)?;
    let confusion = confusion.then(|| {
        let mut m = vec![vec![0; classes]; classes];
        for (&t, &p) in part.labels.iter().zip(&predictions) {
            m[t][p] += 1;
        }
        m
    });
    Ok(PartEval {
        part: name.to_string(),
        rows: part.len(),
        layer_accuracy,
        final_accuracy: accuracy(&predictions, &part.labels),
        predictions,
        confusion,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpanLayer {
    pub layer: usize,
    /// Target columns whose ReLU-ed prediction leaves the column space.
    pub columns_out_of_span: usize,
    pub columns: usize,
    /// `None` when the rank precondition fails.
    pub condition_holds: Option<bool>,
    pub note: Option<String>,
    pub residual: f64,
    pub next_residual: f64,
    pub residual_non_increasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DynamicsSummary {
    pub gap_non_decreasing: bool,
    pub max_relative_deviation: f64,
    pub bounds_hold: bool,
    pub gaps: Vec<f64>,
}

impl DynamicsSummary {
    fn of(d: &DistanceDynamics) -> Self {
        Self {
            gap_non_decreasing: d.gap_non_decreasing(),
            max_relative_deviation: d.max_relative_deviation(),
            bounds_hold: d.bounds_hold(1e-9),
            gaps: d.gaps(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TheorySummary {
    pub model: String,
    pub depth: usize,
    pub train: DynamicsSummary,
    pub test: Option<DynamicsSummary>,
    /// Why the test-set trace was skipped, if it was.
    pub test_note: Option<String>,
    pub span_gain: Vec<SpanLayer>,
    /// Every layer that met the out-of-span condition also saw its
    /// training residual stay level or fall.
    pub theorem_consistent: bool,
    pub seconds: f64,
    #[serde(skip)]
    pub train_dynamics: DistanceDynamics,
    #[serde(skip)]
    pub test_dynamics: Option<DistanceDynamics>,
}

pub fn run_theory(cfg: &ExperimentConfig) -> Result<TheorySummary> {
    let choice = cfg.resolve()?;
    let parts = load_parts(cfg)?;
    let dir = out_dir(cfg)?;
    let started = Instant::now();
    let data = trial_data(cfg, &parts, 0)?;
    let (model, reports) = fit(&choice, &data)?;
    let train = dynamics_trace(&model, &data.train.features, &data.train.labels, cfg.pairs, cfg.seed)?;
    let (test, test_note) = match &data.test {
        Some(t) => match dynamics_trace(&model, &t.features, &t.labels, cfg.pairs, cfg.seed) {
            Ok(d) => (Some(d), None),
            Err(e @ CoreError::Sampling(_)) => (None, Some(e.to_string())),
            Err(e) => return Err(e.into()),
        },
        None => (None, Some("no test data".into())),
    };
    let span_gain = match &model {
        AnyModel::Dan(m) => span_layers(m, &data.train, &reports)?,
        AnyModel::Kdan(_) => Vec::new(),
    };
    let theorem_consistent = span_gain
        .iter()
        .all(|s| s.condition_holds != Some(true) || s.residual_non_increasing);

    write_atomic(&dir.join("dynamics.tsv"), train.to_tsv().as_bytes())?;
    if let Some(t) = &test {
        write_atomic(&dir.join("dynamics_test.tsv"), t.to_tsv().as_bytes())?;
    }
    let summary = TheorySummary {
        model: model_label(cfg),
        depth: model.depth(),
        train: DynamicsSummary::of(&train),
        test: test.as_ref().map(DynamicsSummary::of),
        test_note,
        span_gain,
        theorem_consistent,
        seconds: started.elapsed().as_secs_f64(),
        train_dynamics: train,
        test_dynamics: test,
    };
    write_atomic(&dir.join("theory.json"), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

fn span_layers(model: &dan_core::DanModel, train: &Dataset, reports: &[LayerReport]) -> Result<Vec<SpanLayer>> {
    if !model.config.relu_enabled {
        return Ok(Vec::new());
    }
    let y = encode_one_hot(&train.labels, model.class_count)?;
    let trace = model.forward_batch(&train.features)?.trace;
    let layer_reports: Vec<&LayerReport> = reports.iter().filter(|r| r.kind == ReportKind::Layer).collect();
    let mut out = Vec::new();
    for layer in 1..model.depth() {
        let h = trace.layer_input(layer);
        let (residual, next_residual) = (layer_reports[layer - 1].train_residual, layer_reports[layer].train_residual);
        let (columns_out_of_span, condition_holds, note) = match span_gain_check_columns(&h, &y, model.config.lambda_at(layer)) {
            Ok(v) => {
                let out = v.iter().filter(|c| !c.in_span && c.condition_holds(SPAN_TOLERANCE)).count();
                (out, Some(out > 0), None)
            }
            Err(e @ CoreError::Precondition(_)) => (0, None, Some(e.to_string())),
            Err(e) => return Err(e.into()),
        };
        out.push(SpanLayer {
            layer,
            columns_out_of_span,
            columns: y.class_count(),
            condition_holds,
            note,
            residual,
            next_residual,
            residual_non_increasing: next_residual <= residual + RESIDUAL_SLACK * residual.max(1.0),
        });
    }
    Ok(out)
}
