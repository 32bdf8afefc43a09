use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Workspace root override (takes precedence over the config file).
pub const WORKSPACE_ENV: &str = "SPARTN_WORKSPACE";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Bc,
    Dart,
    Ha,
    Spartn,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "bc" => Ok(Method::Bc),
            "dart" => Ok(Method::Dart),
            "ha" => Ok(Method::Ha),
            "spartn" => Ok(Method::Spartn),
            other => bail!("unknown method '{other}' (expected bc|dart|ha|spartn)"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Bc => "bc",
            Method::Dart => "dart",
            Method::Ha => "ha",
            Method::Spartn => "spartn",
        }
    }

    /// Which demo collection this method trains on.
    pub fn demo_source(&self) -> &'static str {
        match self {
            Method::Dart => "dart",
            _ => "expert",
        }
    }

    pub fn uses_augmentation(&self) -> bool {
        matches!(self, Method::Ha | Method::Spartn)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub workspace: String,
    pub name: String,
    pub method: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub image_size: usize,
    pub horizon: usize,
    pub n_demos: usize,
    pub distractors_min: usize,
    pub distractors_max: usize,
    pub preroll_views: usize,
    pub rot_bound: f64,
    pub trans_bound: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            image_size: 64,
            horizon: 40,
            n_demos: 25,
            distractors_min: 0,
            distractors_max: 2,
            preroll_views: 0,
            rot_bound: 0.2,
            trans_bound: 0.03,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DartSection {
    pub alpha: f64,
    pub beta_t: f64,
}

impl Default for DartSection {
    fn default() -> Self {
        DartSection {
            alpha: 0.05,
            beta_t: 0.003,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub n_aug: usize,
    pub alpha: f64,
    pub beta_t: f64,
    /// "pre-grasp" or an inclusive range like "5-13".
    pub window: String,
    pub grid: usize,
    pub field_steps: usize,
    pub rays_per_step: usize,
    pub samples_per_ray: usize,
    pub parallelism: usize,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            n_aug: 8,
            alpha: 0.08,
            beta_t: 0.008,
            window: "pre-grasp".into(),
            grid: 64,
            field_steps: 1500,
            rays_per_step: 2048,
            samples_per_ray: 48,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub mix_ratio: f64,
    pub input_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 4000,
            batch: 64,
            lr: 1e-3,
            mix_ratio: 0.5,
            input_size: 32,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { episodes: 100 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub dart: DartSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn method(&self) -> Result<Method> {
        Method::parse(&self.run.method)
    }

    pub fn experiment_dir(&self) -> PathBuf {
        Path::new(&self.run.workspace).join(&self.run.name)
    }

    pub fn demos_dir(&self, source: &str, seed: u64) -> PathBuf {
        self.experiment_dir()
            .join("demos")
            .join(source)
            .join(format!("seed_{seed}"))
    }

    pub fn aug_dir(&self, method: Method, seed: u64) -> PathBuf {
        self.experiment_dir()
            .join("aug")
            .join(method.name())
            .join(format!("seed_{seed}"))
    }

    pub fn policy_dir(&self, method: Method, seed: u64) -> PathBuf {
        self.experiment_dir()
            .join("policies")
            .join(method.name())
            .join(format!("seed_{seed}"))
    }

    pub fn eval_dir(&self, method: Method, seed: u64) -> PathBuf {
        self.experiment_dir()
            .join("evals")
            .join(method.name())
            .join(format!("seed_{seed}"))
    }

    pub fn sim_config(&self) -> spartn_core::sim::SimConfig {
        let mut cfg = spartn_core::sim::SimConfig::default();
        cfg.intrinsics = spartn_core::camera::CameraIntrinsics::square(self.env.image_size, 1.05);
        cfg.horizon = self.env.horizon;
        cfg.distractors_min = self.env.distractors_min;
        cfg.distractors_max = self.env.distractors_max;
        cfg.preroll_views = self.env.preroll_views;
        cfg.bounds.rot = self.env.rot_bound;
        cfg.bounds.trans = self.env.trans_bound;
        cfg
    }

    pub fn policy_spec(&self) -> spartn_core::policy::PolicySpec {
        let b = spartn_core::sim::ActionBounds {
            rot: self.env.rot_bound,
            trans: self.env.trans_bound,
        };
        spartn_core::policy::PolicySpec {
            src_width: self.env.image_size,
            src_height: self.env.image_size,
            input_size: self.train.input_size,
            bounds: b.as_array(),
        }
    }
}

/// Parse the config file, apply `--set key=value` overrides, and honor
/// the workspace environment variable.
pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut value: toml::Value = text
        .parse()
        .with_context(|| format!("parsing config {}", path.display()))?;
    for item in overrides {
        apply_override(&mut value, item)?;
    }
    let mut cfg: RunConfig = value
        .try_into()
        .with_context(|| format!("invalid config {}", path.display()))?;
    if let Ok(ws) = std::env::var(WORKSPACE_ENV) {
        if !ws.is_empty() {
            cfg.run.workspace = ws;
        }
    }
    if cfg.run.seeds.is_empty() {
        bail!("run.seeds must be nonempty");
    }
    cfg.method()?;
    Ok(cfg)
}

fn apply_override(root: &mut toml::Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{item}' is not KEY=VALUE"))?;
    // parse the value with toml itself; fall back to a bare string
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Value>() {
        Ok(toml::Value::Table(mut t)) => t.remove("v").unwrap(),
        _ => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| anyhow!("override '{key}': '{part}' is not a table"))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    unreachable!()
}
