//! `run.json`: where the artifacts live and how each stage is configured.
//! Relative paths resolve against the directory holding the config file.

use anyhow::{bail, Context, Result};
use bvmdesign_core::bart::{BartConfig, BartPosterior};
use bvmdesign_core::oc::{CostSpec, Objective, TrialDesign};
use bvmdesign_core::oracle::OracleConfig;
use bvmdesign_core::training::{DesignBox, LambdaConfig, TrainingSet};
use bvmdesign_core::ModelSpec;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: PathBuf,
    #[serde(default)]
    pub designs: Vec<PathBuf>,
    /// Existing training CSV; `train` writes to the output directory instead.
    #[serde(default)]
    pub training: Option<PathBuf>,
    #[serde(default)]
    pub ensemble: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub bart: BartConfig,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub cost: Option<CostSpec>,
    #[serde(default)]
    pub curve: CurveSection,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub optimize: Option<OptimizeSection>,

    #[serde(skip)]
    pub base: PathBuf,
}

fn default_seed() -> u64 {
    20_240_601
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub k: usize,
    #[serde(flatten)]
    pub lambda: LambdaConfig,
    /// Explicit box; otherwise the design prior's central box.
    pub design_box: Option<DesignBox>,
    /// Half-width of the central box in prior sds.
    pub central_sd: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            k: 40,
            lambda: LambdaConfig::default(),
            design_box: None,
            central_sd: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub prior_draws: usize,
    pub mvn_draws: usize,
    pub uncertainty: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            prior_draws: bvmdesign_core::oc::plan::FULL_PRIOR_DRAWS,
            mvn_draws: bvmdesign_core::oc::plan::FULL_MVN_DRAWS,
            uncertainty: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSection {
    pub grid: Option<Vec<f64>>,
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    pub objective: Objective,
    /// Candidate design files; the `designs` list when empty.
    #[serde(default)]
    pub candidates: Vec<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        Ok(ModelSpec::from_path(&self.resolve(&self.model))?)
    }

    pub fn load_designs(&self, paths: &[PathBuf]) -> Result<Vec<TrialDesign>> {
        let list: Vec<PathBuf> = if paths.is_empty() {
            self.designs.iter().map(|p| self.resolve(p)).collect()
        } else {
            paths.to_vec()
        };
        if list.is_empty() {
            bail!(bvmdesign_core::Error::Config("no design files given".into()));
        }
        list.iter().map(|p| Ok(TrialDesign::from_path(p)?)).collect()
    }

    /// The configured training CSV, else the one `train` wrote.
    pub fn training_path(&self, out: &Path) -> PathBuf {
        self.training.as_ref().map(|p| self.resolve(p)).unwrap_or_else(|| out.join("training.csv"))
    }

    pub fn ensemble_path(&self, out: &Path) -> PathBuf {
        self.ensemble.as_ref().map(|p| self.resolve(p)).unwrap_or_else(|| out.join("ensemble.json"))
    }

    pub fn load_training(&self, out: &Path) -> Result<TrainingSet> {
        Ok(TrainingSet::load(&self.training_path(out))?)
    }

    pub fn load_ensemble(&self, out: &Path) -> Result<BartPosterior> {
        Ok(BartPosterior::load(&self.ensemble_path(out))?)
    }

    pub fn design_box(&self, spec: &ModelSpec) -> Result<DesignBox> {
        match &self.train.design_box {
            Some(b) => Ok(b.clone()),
            None => Ok(DesignBox::new(
                &spec.design_prior.names(),
                spec.design_prior.central_box(self.train.central_sd),
            )?),
        }
    }
}
