//! Run configuration: one TOML document covering every stage of a run.
//!
//! ```toml
//! seed = 1
//! threads = 0                      # 0 = all cores
//!
//! [dataset]
//! views = ["view0.csv", "view1.csv"]   # relative to this file
//! format = "dense-csv"                 # or "sparse-coo"
//! skip_header = true
//! labels = "labels.txt"                # optional
//! normalize = true
//!
//! [affinity]
//! kind = "zero-one-knn"                # "gaussian" (sigma2), "dot-product"
//! k = 5
//! orientation = "row"                  # or "column"
//!
//! [diffusion]
//! alpha = 0.01
//! max_iters = 20
//! tol = 1e-8
//! k_fuse = 5
//!
//! [alignment.bandwidth]
//! kind = "fixed"                       # or "median-heuristic"
//! sigma2 = 1.0
//!
//! [selection]
//! target_d = [10]                      # one entry per view, or one for all
//! count_slack = 10
//! lambda_bracket = [1e-3, 1.0]
//! rounding_threshold = 0.999
//!
//! [solver]
//! lbfgs_memory = 10
//! spg_max_iters = 10
//! outer_max_iters = 500
//! armijo_c1 = 1e-4
//! grad_tol = 1e-6
//! bb_step_bounds = [1e-10, 1e10]
//! spg_history = 10
//!
//! [evaluation]
//! # k = 3                              # defaults to the number of classes
//! repeats = 20
//! mode = "concatenated"                # or "per-view"
//! all_features = false
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Every key is optional except `dataset.views`; a given `[affinity]` or
//! `[alignment.bandwidth]` table needs its `kind`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::affinity::Weighting;
use crate::alignment::Bandwidth;
use crate::data::{load_dataset, FileFormat, LoadOptions, MultiViewDataset};
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalMode;
use crate::pipeline::{SelectionRequest, SelectionSettings};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub views: Vec<PathBuf>,
    pub format: FileFormat,
    pub skip_header: bool,
    pub labels: Option<PathBuf>,
    pub normalize: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            views: Vec::new(),
            format: FileFormat::DenseCsv,
            skip_header: false,
            labels: None,
            normalize: true,
        }
    }
}

impl DatasetConfig {
    /// Reads the views and labels as they are on disk (no normalization).
    pub fn load(&self) -> Result<MultiViewDataset> {
        let options = LoadOptions {
            format: self.format,
            skip_header: self.skip_header,
            label_path: self.labels.clone(),
        };
        load_dataset(&self.views, &options)
    }

    /// Every input file, views first.
    pub fn input_paths(&self) -> Vec<PathBuf> {
        self.views.iter().chain(self.labels.iter()).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub bandwidth: Bandwidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Cluster count; the number of distinct labels when absent.
    pub k: Option<usize>,
    pub repeats: usize,
    pub mode: EvalMode,
    /// Also report a row for all features.
    pub all_features: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            k: None,
            repeats: 20,
            mode: EvalMode::Concatenated,
            all_features: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub dataset: DatasetConfig,
    pub affinity: Weighting,
    pub diffusion: DiffusionConfig,
    pub alignment: AlignmentConfig,
    pub selection: SelectionRequest,
    pub solver: SolverConfig,
    pub evaluation: EvaluationConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            threads: 0,
            dataset: DatasetConfig::default(),
            affinity: Weighting::default(),
            diffusion: DiffusionConfig::default(),
            alignment: AlignmentConfig::default(),
            selection: SelectionRequest::default(),
            solver: SolverConfig::default(),
            evaluation: EvaluationConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `dotted.key` in a TOML tree, creating intermediate tables.
pub fn apply_override(tree: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut table = tree;
    for part in path {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {part} is not a table")))?;
    }
    table.insert(last.to_string(), parse_override_value(raw));
    Ok(())
}

/// Splits `key=value`.
pub fn split_override(spec: &str) -> Result<(&str, &str)> {
    spec.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))
}

impl RunConfig {
    /// Parses TOML text and applies `key=value` overrides on the tree.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for spec in overrides {
            let (key, value) = split_override(spec)?;
            apply_override(&mut tree, key, value)?;
        }
        let config: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.dataset.views.iter_mut().for_each(fix);
        self.dataset.labels.iter_mut().for_each(fix);
        fix(&mut self.output.dir);
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.views.len() < 2 {
            return Err(Error::Config(format!(
                "dataset.views needs at least two files, got {}",
                self.dataset.views.len()
            )));
        }
        self.selection.validate()?;
        self.solver.validate()?;
        if self.evaluation.repeats == 0 {
            return Err(Error::Config("evaluation.repeats must be >= 1".into()));
        }
        if self.evaluation.k == Some(0) {
            return Err(Error::Config("evaluation.k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn selection_settings(&self) -> SelectionSettings {
        SelectionSettings {
            normalize: self.dataset.normalize,
            weighting: self.affinity,
            diffusion: self.diffusion.clone(),
            bandwidth: self.alignment.bandwidth,
            request: self.selection.clone(),
            solver: self.solver.clone(),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::KnnOrientation;

    const MINIMAL: &str = "[dataset]\nviews = [\"a.csv\", \"b.csv\"]\n";

    #[test]
    fn defaults_fill_missing_keys() {
        let c = RunConfig::from_toml_str(MINIMAL, &[]).unwrap();
        assert_eq!(c.diffusion, DiffusionConfig::default());
        assert_eq!(c.affinity, Weighting::knn(5));
        assert_eq!(c.evaluation.repeats, 20);
        assert!(c.dataset.normalize);
    }

    #[test]
    fn overrides_replace_nested_keys() {
        let overrides = vec![
            "diffusion.alpha=0.5".to_string(),
            "selection.target_d=[3, 4]".to_string(),
            "affinity.kind=zero-one-knn".to_string(),
            "affinity.k=5".to_string(),
            "affinity.orientation=column".to_string(),
            "output.dir=results".to_string(),
        ];
        let c = RunConfig::from_toml_str(MINIMAL, &overrides).unwrap();
        assert_eq!(c.diffusion.alpha, 0.5);
        assert_eq!(c.selection.target_d, vec![3, 4]);
        assert_eq!(
            c.affinity,
            Weighting::ZeroOneKnn {
                k: 5,
                orientation: KnnOrientation::Column
            }
        );
        assert_eq!(c.output.dir, PathBuf::from("results"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(
            RunConfig::from_toml_str(&format!("{MINIMAL}[solver]\nbogus = 1\n"), &[])
                .unwrap_err()
                .is_config()
        );
        assert!(RunConfig::from_toml_str("[dataset]\nviews = [\"a\"]\n", &[]).is_err());
        assert!(RunConfig::from_toml_str(MINIMAL, &["solver.armijo_c1=2".into()]).is_err());
        assert!(RunConfig::from_toml_str(MINIMAL, &["novalue".into()]).is_err());
    }

    #[test]
    fn round_trips_through_toml_and_json() {
        let mut c = RunConfig::from_toml_str(MINIMAL, &["dataset.labels=\"l.txt\"".into()]).unwrap();
        c.alignment.bandwidth = Bandwidth::MedianHeuristic;
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap(), &[]).unwrap();
        assert_eq!(back, c);
        let json: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(json, c);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut c = RunConfig::from_toml_str(MINIMAL, &[]).unwrap();
        c.resolve_paths(Path::new("/data/run"));
        assert_eq!(c.dataset.views[0], PathBuf::from("/data/run/a.csv"));
        assert_eq!(c.output.dir, PathBuf::from("/data/run/out"));
    }
}
