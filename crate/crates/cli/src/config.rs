//! Experiment configuration: a TOML file, optional named presets and
//! command-line overrides, resolved in the order flags > file > preset >
//! model defaults.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dan_core::{DanConfig, Error as CoreError, FtClassifier, KdanConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Dan,
    Kdan,
    KdanTrim,
    Ridge,
    Krr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FtKind {
    Regression,
    Nn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Idx,
    Delimited,
}

/// Model hyperparameters; unset fields fall through to the next source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: Option<ModelKind>,
    pub depth: Option<usize>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda_ft: Option<f64>,
    pub beta_ft: Option<f64>,
    pub relu: Option<bool>,
    pub ft: Option<bool>,
    pub ft_classifier: Option<FtKind>,
}

impl ModelSpec {
    /// Fields of `self` win over those of `base`.
    pub fn over(self, base: ModelSpec) -> ModelSpec {
        ModelSpec {
            kind: self.kind.or(base.kind),
            depth: self.depth.or(base.depth),
            lambda: self.lambda.or(base.lambda),
            gamma: self.gamma.or(base.gamma),
            lambda_ft: self.lambda_ft.or(base.lambda_ft),
            beta_ft: self.beta_ft.or(base.beta_ft),
            relu: self.relu.or(base.relu),
            ft: self.ft.or(base.ft),
            ft_classifier: self.ft_classifier.or(base.ft_classifier),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// Detected from the file names when unset.
    pub format: Option<DataFormat>,
    /// Delimited: `[data]` or `[train, test]`. IDX: `[images, labels]` or
    /// `[train images, train labels, test images, test labels]`.
    pub paths: Vec<PathBuf>,
    /// `"first"`, `"last"` or a zero-based column index.
    pub label_column: String,
    /// A single character, or `"whitespace"`.
    pub delimiter: String,
    pub header: bool,
    /// Training rows per trial; overrides `train_fraction`.
    pub train_size: Option<usize>,
    /// Used when no test file is given and `train_size` is unset.
    pub train_fraction: f64,
    pub stratified: bool,
    /// Cap on training rows, drawn at random per trial.
    pub max_train: Option<usize>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            format: None,
            paths: Vec::new(),
            label_column: "last".into(),
            delimiter: ",".into(),
            header: false,
            train_size: None,
            train_fraction: 2.0 / 3.0,
            stratified: false,
            max_train: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub trials: usize,
    pub seed: u64,
    /// On by default for delimited tables, off for IDX pixels.
    pub standardize: Option<bool>,
    pub out: Option<PathBuf>,
    /// Monte-Carlo pairs per distance estimate in theory runs.
    pub pairs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            trials: 1,
            seed: 0,
            standardize: None,
            out: None,
            pairs: dan_core::dan::REPORT_DISTANCE_PAIRS,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn format(&self) -> DataFormat {
        self.dataset.format.unwrap_or_else(|| {
            let idx = self.dataset.paths.iter().any(|p| {
                let name = p.file_name().map(|n| n.to_string_lossy().to_lowercase()).unwrap_or_default();
                name.contains("ubyte") || name.ends_with(".idx")
            });
            if idx {
                DataFormat::Idx
            } else {
                DataFormat::Delimited
            }
        })
    }

    pub fn standardize(&self) -> bool {
        self.standardize.unwrap_or(self.format() == DataFormat::Delimited)
    }

    /// Model hyperparameters with the preset folded in.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let preset = match &self.preset {
            Some(name) => preset(name).ok_or_else(|| anyhow!("preset: unknown name `{name}` (known: {})", PRESET_NAMES.join(", ")))?,
            None => ModelSpec::default(),
        };
        Ok(self.model.clone().over(preset))
    }

    pub fn resolve(&self) -> Result<ModelChoice> {
        if self.trials == 0 {
            bail!("trials: must be at least 1");
        }
        if self.pairs == 0 {
            bail!("pairs: must be at least 1");
        }
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
            bail!("dataset.train_fraction: must lie in (0, 1), got {}", self.dataset.train_fraction);
        }
        resolve_model(&self.model_spec()?)
    }
}

/// A validated model configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelChoice {
    Dan(DanConfig),
    Kdan(KdanConfig),
}

fn field_error(e: CoreError) -> anyhow::Error {
    match e {
        CoreError::InvalidParameter { name, reason } => {
            let field = match name {
                "lambda_layer" => "lambda",
                "gamma_layer" => "gamma",
                other => other,
            };
            anyhow!("model.{field}: {reason}")
        }
        other => other.into(),
    }
}

pub fn resolve_model(spec: &ModelSpec) -> Result<ModelChoice> {
    let kind = spec.kind.ok_or_else(|| anyhow!("model.kind: required (dan, kdan, kdan-trim, ridge or krr)"))?;
    let single_layer = matches!(kind, ModelKind::Ridge | ModelKind::Krr);
    if single_layer && spec.depth.is_some_and(|d| d != 1) {
        bail!("model.depth: {kind:?} is a single layer; got depth {}", spec.depth.unwrap_or(1));
    }
    let depth = if single_layer { 1 } else { spec.depth.unwrap_or(3) };
    let choice = match kind {
        ModelKind::Dan | ModelKind::Ridge => {
            let defaults = DanConfig::default();
            let ridge = kind == ModelKind::Ridge;
            ModelChoice::Dan(DanConfig {
                depth,
                lambda_layer: spec.lambda.unwrap_or(defaults.lambda_layer),
                layer_lambdas: Vec::new(),
                lambda_ft: spec.lambda_ft.unwrap_or(defaults.lambda_ft),
                beta_ft: spec.beta_ft.unwrap_or(defaults.beta_ft),
                relu_enabled: !ridge && spec.relu.unwrap_or(true),
                ft_enabled: !ridge && spec.ft.unwrap_or(true),
                ft_classifier: match spec.ft_classifier.unwrap_or(FtKind::Regression) {
                    FtKind::Regression => FtClassifier::Regression,
                    FtKind::Nn => FtClassifier::NearestNeighbor,
                },
            })
        }
        ModelKind::Kdan | ModelKind::KdanTrim | ModelKind::Krr => {
            if spec.relu == Some(false) {
                bail!("model.relu: kernel stacks always apply ReLU");
            }
            if spec.ft_classifier == Some(FtKind::Nn) {
                bail!("model.ft_classifier: nearest-neighbor FT is only available for dan");
            }
            let defaults = KdanConfig::default();
            let trim = match kind {
                ModelKind::Kdan => !spec.ft.unwrap_or(true),
                _ => true,
            };
            if kind != ModelKind::Kdan && spec.ft == Some(true) {
                bail!("model.ft: {kind:?} has no FT layer");
            }
            ModelChoice::Kdan(KdanConfig {
                depth,
                lambda_layer: spec.lambda.unwrap_or(defaults.lambda_layer),
                gamma_layer: spec.gamma.unwrap_or(defaults.gamma_layer),
                lambda_ft: spec.lambda_ft.unwrap_or(defaults.lambda_ft),
                beta_ft: spec.beta_ft.unwrap_or(defaults.beta_ft),
                trim,
            })
        }
    };
    match &choice {
        ModelChoice::Dan(c) => c.validate().map_err(field_error)?,
        ModelChoice::Kdan(c) => c.validate().map_err(field_error)?,
    }
    Ok(choice)
}

pub const PRESET_NAMES: [&str; 8] = [
    "mushroom", "letter", "satimage", "shuttle", "usps", "australian", "mnist-dan", "mnist-kdan",
];

/// Hand-tuned hyperparameters for the public benchmark sets.
pub fn preset(name: &str) -> Option<ModelSpec> {
    let trim = |lambda: f64, gamma: f64, depth: usize| ModelSpec {
        kind: Some(ModelKind::KdanTrim),
        depth: Some(depth),
        lambda: Some(lambda),
        gamma: Some(gamma),
        ..Default::default()
    };
    Some(match name {
        "mushroom" => trim(0.4, 0.9, 5),
        "letter" => trim(0.1, 0.25, 4),
        "satimage" => trim(0.01, 0.2, 4),
        "shuttle" => trim(0.01, 0.9, 6),
        "usps" => trim(0.001, 0.01, 4),
        "australian" => trim(1e-4, 0.009, 3),
        "mnist-dan" => ModelSpec {
            kind: Some(ModelKind::Dan),
            depth: Some(5),
            lambda: Some(1.0),
            lambda_ft: Some(1e-5),
            beta_ft: Some(0.5),
            ..Default::default()
        },
        "mnist-kdan" => ModelSpec {
            kind: Some(ModelKind::Kdan),
            depth: Some(3),
            lambda: Some(0.01),
            gamma: Some(0.01),
            lambda_ft: Some(0.01),
            beta_ft: Some(0.5),
            ..Default::default()
        },
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file_and_preset() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            preset = "letter"
            [model]
            depth = 2
            "#,
        )
        .unwrap();
        let spec = ModelSpec { lambda: Some(0.5), ..Default::default() }.over(cfg.model_spec().unwrap());
        let ModelChoice::Kdan(k) = resolve_model(&spec).unwrap() else { panic!() };
        assert_eq!((k.depth, k.lambda_layer, k.gamma_layer, k.trim), (2, 0.5, 0.25, true));
    }

    #[test]
    fn errors_name_the_field() {
        let bad = ModelSpec { kind: Some(ModelKind::Dan), beta_ft: Some(2.0), ..Default::default() };
        assert!(resolve_model(&bad).unwrap_err().to_string().starts_with("model.beta_ft"));
        let bad = ModelSpec { kind: Some(ModelKind::Krr), gamma: Some(-1.0), ..Default::default() };
        assert!(resolve_model(&bad).unwrap_err().to_string().starts_with("model.gamma"));
        assert!(resolve_model(&ModelSpec::default()).unwrap_err().to_string().starts_with("model.kind"));
        assert!(ExperimentConfig::from_toml("[model]\nlamda = 1.0").is_err());
    }

    #[test]
    fn ridge_is_a_plain_single_layer() {
        let ModelChoice::Dan(c) = resolve_model(&ModelSpec { kind: Some(ModelKind::Ridge), ..Default::default() }).unwrap() else {
            panic!()
        };
        assert_eq!((c.depth, c.relu_enabled, c.ft_enabled), (1, false, false));
    }

    #[test]
    fn format_detection() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.paths = vec!["train-images-idx3-ubyte".into(), "train-labels-idx1-ubyte".into()];
        assert_eq!(cfg.format(), DataFormat::Idx);
        assert!(!cfg.standardize());
        cfg.dataset.paths = vec!["letter.dat".into()];
        assert!(cfg.standardize());
    }
}
