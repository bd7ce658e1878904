//! Effective run configuration.
//!
//! Settings come from an optional `key = value` file and then from command
//! line flags, which win. Keys use the flag spelling (`strict-folds`);
//! underscores are accepted too. `#` starts a comment.

use std::fs;
use std::path::{Path, PathBuf};

use regionbow::annotators::{default_c_grid, SmoParams};
use regionbow::evaluation::{ExperimentConfig, FeatureCombo};
use regionbow::keypoints::SiftParams;
use regionbow::vocabulary::{VocabularyKind, VocabularyParams};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub workspace: PathBuf,
    pub seed: u64,
    pub set: u8,
    pub features: String,
    pub kinds: Vec<VocabularyKind>,
    pub k: usize,
    pub force: bool,
    pub strict_folds: bool,
    pub folds: usize,
    pub inner_folds: usize,
    pub c_grid: Vec<f64>,
    pub sift: SiftParams,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub smo: SmoParams,
    pub gram_threshold: usize,
    pub out: PathBuf,
    pub synth_images: usize,
    pub synth_concepts: usize,
}

impl Default for Config {
    fn default() -> Self {
        let smo = SmoParams::default();
        Config {
            images: None,
            labels: None,
            categories: None,
            workspace: PathBuf::from("workspace"),
            seed: 42,
            set: 2,
            features: "IBOW+ColHist+Wav".into(),
            kinds: VocabularyKind::ALL.to_vec(),
            k: 200,
            force: false,
            strict_folds: false,
            folds: 10,
            inner_folds: 10,
            c_grid: default_c_grid(),
            sift: SiftParams::default(),
            kmeans_max_iter: 100,
            kmeans_tol: 1e-4,
            smo,
            gram_threshold: 12_000,
            out: PathBuf::from("synth"),
            synth_images: 60,
            synth_concepts: 3,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse `{value}`"))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| value.into())
}

fn flag(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "" | "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got `{value}`")),
    }
}

impl Config {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "images" => self.images = opt_path(value),
            "labels" => self.labels = opt_path(value),
            "categories" => self.categories = opt_path(value),
            "workspace" => self.workspace = value.into(),
            "seed" => self.seed = num(k, value)?,
            "set" => self.set = num(k, value)?,
            "features" => self.features = value.into(),
            "kind" => {
                self.kinds = if value == "all" {
                    VocabularyKind::ALL.to_vec()
                } else {
                    value
                        .split(',')
                        .map(|s| {
                            VocabularyKind::parse(s.trim())
                                .ok_or_else(|| format!("kind: unknown vocabulary kind `{s}`"))
                        })
                        .collect::<std::result::Result<_, _>>()?
                }
            }
            "k" => self.k = num(k, value)?,
            "force" => self.force = flag(k, value)?,
            "strict-folds" => self.strict_folds = flag(k, value)?,
            "folds" => self.folds = num(k, value)?,
            "inner-folds" => self.inner_folds = num(k, value)?,
            "c-grid" => {
                self.c_grid = value
                    .split(',')
                    .map(|s| num::<f64>(k, s.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "scales-per-octave" => self.sift.scales_per_octave = num(k, value)?,
            "sigma0" => self.sift.sigma0 = num(k, value)?,
            "contrast-threshold" => self.sift.contrast_threshold = num(k, value)?,
            "edge-threshold" => self.sift.edge_threshold = num(k, value)?,
            "upsample" => self.sift.upsample = flag(k, value)?,
            "kmeans-max-iter" => self.kmeans_max_iter = num(k, value)?,
            "kmeans-tol" => self.kmeans_tol = num(k, value)?,
            "smo-eps" => self.smo.eps = num(k, value)?,
            "smo-max-iter" => self.smo.max_iter = num(k, value)?,
            "full-gram-threshold" => self.smo.full_gram_threshold = num(k, value)?,
            "cache-rows" => self.smo.cache_rows = num(k, value)?,
            "gram-threshold" => self.gram_threshold = num(k, value)?,
            "out" => self.out = value.into(),
            "synth-images" => self.synth_images = num(k, value)?,
            "synth-concepts" => self.synth_concepts = num(k, value)?,
            _ => return Err(format!("unknown setting `{key}`")),
        }
        Ok(())
    }

    /// Applies every line of a config file, collecting all errors.
    pub fn apply_text(&mut self, path: &Path, text: &str, errors: &mut Vec<String>) {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("{}:{}: expected key = value", path.display(), i + 1));
                continue;
            };
            if let Err(e) = self.set(key, value) {
                errors.push(format!("{}:{}: {e}", path.display(), i + 1));
            }
        }
    }

    /// Builds a config from an optional file and then `overrides`.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Config> {
        let mut cfg = Config::default();
        let mut errors = Vec::new();
        if let Some(path) = file {
            match fs::read_to_string(path) {
                Ok(text) => cfg.apply_text(path, &text, &mut errors),
                Err(e) => errors.push(format!("config file {}: {e}", path.display())),
            }
        }
        for (k, v) in overrides {
            if let Err(e) = cfg.set(k, v) {
                errors.push(e);
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Config(errors))
        }
    }

    /// Every setting in canonical `key = value` form, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let join = |v: &[f64]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("images", path(&self.images)),
            ("labels", path(&self.labels)),
            ("categories", path(&self.categories)),
            ("workspace", self.workspace.display().to_string()),
            ("seed", self.seed.to_string()),
            ("set", self.set.to_string()),
            ("features", self.features.clone()),
            (
                "kind",
                self.kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(","),
            ),
            ("k", self.k.to_string()),
            ("force", self.force.to_string()),
            ("strict-folds", self.strict_folds.to_string()),
            ("folds", self.folds.to_string()),
            ("inner-folds", self.inner_folds.to_string()),
            ("c-grid", join(&self.c_grid)),
            ("scales-per-octave", self.sift.scales_per_octave.to_string()),
            ("sigma0", self.sift.sigma0.to_string()),
            ("contrast-threshold", self.sift.contrast_threshold.to_string()),
            ("edge-threshold", self.sift.edge_threshold.to_string()),
            ("upsample", self.sift.upsample.to_string()),
            ("kmeans-max-iter", self.kmeans_max_iter.to_string()),
            ("kmeans-tol", self.kmeans_tol.to_string()),
            ("smo-eps", self.smo.eps.to_string()),
            ("smo-max-iter", self.smo.max_iter.to_string()),
            ("full-gram-threshold", self.smo.full_gram_threshold.to_string()),
            ("cache-rows", self.smo.cache_rows.to_string()),
            ("gram-threshold", self.gram_threshold.to_string()),
            ("out", self.out.display().to_string()),
            ("synth-images", self.synth_images.to_string()),
            ("synth-concepts", self.synth_concepts.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn vocabulary_params(&self) -> VocabularyParams {
        VocabularyParams {
            k: self.k,
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
        }
    }

    fn dataset_errors(&self, errors: &mut Vec<String>) {
        for (name, p, dir) in [
            ("images", &self.images, true),
            ("labels", &self.labels, true),
            ("categories", &self.categories, false),
        ] {
            match p {
                None => errors.push(format!("{name}: required")),
                Some(p) if dir && !p.is_dir() => errors.push(format!("{name}: {} is not a directory", p.display())),
                Some(p) if !dir && !p.is_file() => errors.push(format!("{name}: {} is not a file", p.display())),
                _ => {}
            }
        }
    }

    fn sift_errors(&self, errors: &mut Vec<String>) {
        let s = &self.sift;
        if s.scales_per_octave == 0 {
            errors.push("scales-per-octave: must be at least 1".into());
        }
        if !positive(s.sigma0 as f64)
            || !non_negative(s.contrast_threshold as f64)
            || !positive(s.edge_threshold as f64 - 1.0)
        {
            errors.push(
                "sigma0 and edge-threshold must be positive (edge-threshold > 1), contrast-threshold non-negative"
                    .into(),
            );
        }
    }

    fn vocab_errors(&self, errors: &mut Vec<String>) {
        if self.k == 0 {
            errors.push("k: must be at least 1".into());
        }
        if self.kmeans_max_iter == 0 {
            errors.push("kmeans-max-iter: must be at least 1".into());
        }
        if !non_negative(self.kmeans_tol) {
            errors.push("kmeans-tol: must be non-negative".into());
        }
    }

    pub fn validate_extract(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.dataset_errors(&mut errors);
        self.sift_errors(&mut errors);
        finish(errors)
    }

    pub fn validate_vocab(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.dataset_errors(&mut errors);
        self.sift_errors(&mut errors);
        self.vocab_errors(&mut errors);
        if self.kinds.is_empty() {
            errors.push("kind: at least one vocabulary kind is required".into());
        }
        finish(errors)
    }

    /// Checks every run setting and returns the experiment configuration.
    pub fn validate_run(&self) -> Result<ExperimentConfig> {
        let mut errors = Vec::new();
        self.dataset_errors(&mut errors);
        self.sift_errors(&mut errors);
        self.vocab_errors(&mut errors);
        let combo = match self.features.parse::<FeatureCombo>() {
            Ok(c) => Some(c),
            Err(e) => {
                errors.push(format!("features: {e}"));
                None
            }
        };
        if !(1..=4).contains(&self.set) {
            errors.push(format!("set: must be 1-4, got {}", self.set));
        }
        if self.folds < 2 {
            errors.push("folds: must be at least 2".into());
        }
        if self.inner_folds < 2 {
            errors.push("inner-folds: must be at least 2".into());
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !positive(*c) || !c.is_finite()) {
            errors.push("c-grid: needs one or more positive values".into());
        }
        if !positive(self.smo.eps) {
            errors.push("smo-eps: must be positive".into());
        }
        finish(errors)?;
        let mut cfg = ExperimentConfig::new(self.set, combo.expect("validated"), self.seed)
            .map_err(|e| CliError::config(e.to_string()))?;
        cfg.folds = self.folds;
        cfg.inner_folds = self.inner_folds;
        cfg.c_grid = self.c_grid.clone();
        cfg.smo = self.smo.clone();
        cfg.strict_folds = self.strict_folds;
        cfg.gram_threshold = self.gram_threshold;
        Ok(cfg)
    }

    pub fn validate_synth(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.synth_images == 0 {
            errors.push("synth-images: must be at least 1".into());
        }
        if !(1..=9).contains(&self.synth_concepts) {
            errors.push(format!("synth-concepts: must be 1-9, got {}", self.synth_concepts));
        }
        finish(errors)
    }

    pub fn validate_analyze(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.dataset_errors(&mut errors);
        self.sift_errors(&mut errors);
        finish(errors)
    }
}

// false for NaN
fn positive(x: f64) -> bool {
    x > 0.0
}

fn non_negative(x: f64) -> bool {
    x >= 0.0
}

fn finish(errors: Vec<String>) -> Result<()> {
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(errors))
    }
}
