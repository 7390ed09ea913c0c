//! Run configuration files (TOML).
//!
//! ```toml
//! name = "table1-n2500"
//! checkpoint_every = 5000
//!
//! [problem]
//! name = "dirichlet_poisson"
//! dim = 3
//!
//! [u_net]
//! width = 40
//! depth = 2
//!
//! [train]
//! n_interior = 2500
//! n_boundary = 300
//! iters = 20000
//! ```
//!
//! Omitted keys take the defaults of [`RunConfig::default`].

use std::path::PathBuf;

use anyhow::{bail, Context};
use mmpde::experiments::{Experiment, NetShape, ProblemSpec};
use mmpde::network::Init;
use mmpde::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    /// Run directory; when absent, `<$MMPDE_OUTPUT_DIR or ./runs>/<name>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Write network checkpoints every this many iterations; 0 keeps only the final pair.
    pub checkpoint_every: usize,
    pub precision: Precision,
    /// Log measured wall-clock time; when false `elapsed_s` is written as 0 so
    /// that logs of identical runs are byte-identical.
    pub wall_clock: bool,
    pub init: String,
    pub problem: ProblemSection,
    pub u_net: NetSection,
    pub v_net: NetSection,
    pub train: TrainSection,
    pub slice: SliceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    pub name: String,
    pub dim: usize,
    pub m: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub width: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub n_interior: usize,
    pub n_boundary: usize,
    pub iters: usize,
    pub ascent_steps: usize,
    pub descent_steps: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_step: usize,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub seed: u64,
    pub test_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SliceSection {
    pub axes: [usize; 2],
    /// Fixed coordinates off the slice; the domain centre when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<f64>>,
    pub points: usize,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self { name: "dirichlet_poisson".into(), dim: 3, m: 2 }
    }
}

impl Default for NetSection {
    fn default() -> Self {
        Self { width: 40, depth: 2 }
    }
}

impl Default for SliceSection {
    fn default() -> Self {
        Self { axes: [0, 1], base: None, points: 41 }
    }
}

impl From<&TrainConfig> for TrainSection {
    fn from(c: &TrainConfig) -> Self {
        Self {
            n_interior: c.n_interior,
            n_boundary: c.n_boundary,
            iters: c.iters,
            ascent_steps: c.ascent_steps,
            descent_steps: c.descent_steps,
            lr: c.lr,
            lr_decay: c.lr_decay,
            lr_step: c.lr_step,
            rms_decay: c.rms_decay,
            rms_eps: c.rms_eps,
            seed: c.seed,
            test_points: c.test_points,
        }
    }
}

impl From<&TrainSection> for TrainConfig {
    fn from(s: &TrainSection) -> Self {
        Self {
            n_interior: s.n_interior,
            n_boundary: s.n_boundary,
            iters: s.iters,
            ascent_steps: s.ascent_steps,
            descent_steps: s.descent_steps,
            lr: s.lr,
            lr_decay: s.lr_decay,
            lr_step: s.lr_step,
            rms_decay: s.rms_decay,
            rms_eps: s.rms_eps,
            seed: s.seed,
            test_points: s.test_points,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        (&TrainConfig::default()).into()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            output_dir: None,
            checkpoint_every: 0,
            precision: Precision::F64,
            wall_clock: true,
            init: Init::FanIn.name().into(),
            problem: ProblemSection::default(),
            u_net: NetSection::default(),
            v_net: NetSection::default(),
            train: TrainSection::default(),
            slice: SliceSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_experiment(e: &Experiment) -> Self {
        Self {
            name: e.name.clone(),
            init: e.init.name().into(),
            problem: ProblemSection { name: e.problem.name.clone(), dim: e.problem.dim, m: e.problem.m },
            u_net: NetSection { width: e.u_net.width, depth: e.u_net.depth },
            v_net: NetSection { width: e.v_net.width, depth: e.v_net.depth },
            train: (&e.train).into(),
            slice: SliceSection { axes: e.slice_axes, base: None, points: e.slice_points },
            ..Self::default()
        }
    }

    pub fn experiment(&self) -> anyhow::Result<Experiment> {
        Ok(Experiment {
            name: self.name.clone(),
            summary: String::new(),
            problem: ProblemSpec::new(&self.problem.name, self.problem.dim, self.problem.m),
            u_net: NetShape::new(self.u_net.width, self.u_net.depth),
            v_net: NetShape::new(self.v_net.width, self.v_net.depth),
            init: Init::parse(&self.init)?,
            train: (&self.train).into(),
            slice_axes: self.slice.axes,
            slice_points: self.slice.points,
        })
    }

    /// Parses TOML text; errors carry the offending line.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", describe_toml_error(text, &e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            bail!("run name must be non-empty and contain no path separators, got '{}'", self.name);
        }
        if self.train.seed > i64::MAX as u64 {
            bail!("seed must fit in a signed 64-bit integer");
        }
        Init::parse(&self.init)?;
        TrainConfig::from(&self.train).validate()?;
        Ok(())
    }
}

fn describe_toml_error(text: &str, err: &toml::de::Error) -> String {
    match err.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            let content = text.lines().nth(line - 1).unwrap_or("");
            format!("line {line}: {}\n  | {content}", err.message())
        }
        None => err.message().to_string(),
    }
}
