//! `key = value` run configuration. Files and `--key value` overrides go
//! through the same [`RunConfig::set`], so both reject unknown keys and bad
//! values the same way.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use csm_core::graph::{Boundary, StructureKind};
use csm_core::models::{Encoding, ModelKind};
use csm_core::objectives::Objective;
use csm_core::samplers::Proposal;
use csm_core::verify::Suite;

use crate::error::{CliError, Result};

/// Where training and evaluation data come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Toy1d,
    Checkerboard,
    Spirals,
    Rings,
    BinaryMixture,
    Csv,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Toy1d => "toy_1d",
            DatasetKind::Checkerboard => "checkerboard",
            DatasetKind::Spirals => "spirals",
            DatasetKind::Rings => "rings",
            DatasetKind::BinaryMixture => "binary_mixture",
            DatasetKind::Csv => "csv",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "toy_1d" => DatasetKind::Toy1d,
            "checkerboard" => DatasetKind::Checkerboard,
            "spirals" => DatasetKind::Spirals,
            "rings" => DatasetKind::Rings,
            "binary_mixture" => DatasetKind::BinaryMixture,
            "csv" => DatasetKind::Csv,
            _ => return Err(format!("unknown dataset `{s}`")),
        })
    }
}

/// How sampling chains pick their first state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainInit {
    Uniform,
    Data,
}

impl FromStr for ChainInit {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(ChainInit::Uniform),
            "data" => Ok(ChainInit::Data),
            _ => Err(format!("unknown init `{s}`")),
        }
    }
}

impl ChainInit {
    pub fn name(self) -> &'static str {
        match self {
            ChainInit::Uniform => "uniform",
            ChainInit::Data => "data",
        }
    }
}

/// `all` or a single suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteChoice {
    All,
    One(Suite),
}

impl SuiteChoice {
    pub fn suites(self) -> Vec<Suite> {
        match self {
            SuiteChoice::All => Suite::ALL.to_vec(),
            SuiteChoice::One(s) => vec![s],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub dataset_path: Option<PathBuf>,
    pub header: bool,
    pub n_samples: usize,
    pub bins: usize,
    pub bits: usize,
    pub components: usize,
    pub structure: StructureKind,
    pub boundary: Boundary,
    pub edges_path: Option<PathBuf>,
    pub model: ModelKind,
    pub hidden: Vec<usize>,
    pub encoding: Encoding,
    pub objective: Objective,
    pub noise_w: Vec<f64>,
    pub smoothing: f64,
    pub lr: f64,
    pub lr_end: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub log_every: u64,
    pub seed: u64,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub init: ChainInit,
    pub proposal: Proposal,
    pub suite: SuiteChoice,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::Toy1d,
            dataset_path: None,
            header: false,
            n_samples: 10_000,
            bins: 91,
            bits: 8,
            components: 4,
            structure: StructureKind::Grid,
            boundary: Boundary::Drop,
            edges_path: None,
            model: ModelKind::LogitTable,
            hidden: vec![32],
            encoding: Encoding::Affine,
            objective: Objective::CsmExact,
            noise_w: Vec::new(),
            smoothing: 0.0,
            lr: 5e-4,
            lr_end: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
            iterations: 1000,
            log_every: 100,
            seed: 0,
            out: PathBuf::from("out"),
            checkpoint: None,
            steps: 1000,
            burn_in: 0,
            thin: 1,
            chains: 1,
            init: ChainInit::Uniform,
            proposal: Proposal::Symmetrized,
            suite: SuiteChoice::All,
        }
    }
}

/// Every accepted key, in the order `config.resolved` lists them.
pub const KEYS: &[&str] = &[
    "dataset",
    "dataset_path",
    "header",
    "n_samples",
    "bins",
    "bits",
    "components",
    "structure",
    "boundary",
    "edges_path",
    "model",
    "hidden",
    "encoding",
    "objective",
    "noise_w",
    "smoothing",
    "lr",
    "lr_end",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "iterations",
    "log_every",
    "seed",
    "out",
    "checkpoint",
    "steps",
    "burn_in",
    "thin",
    "chains",
    "init",
    "proposal",
    "suite",
];

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn named<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| e.to_string())
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|t| num(t.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses a config file's text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| CliError::ConfigLine { line: k + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            self.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::formats::read_text(path)?)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key {
            "dataset" => self.dataset = named(v)?,
            "dataset_path" => self.dataset_path = path(v),
            "header" => self.header = num(v)?,
            "n_samples" => self.n_samples = num(v)?,
            "bins" => self.bins = num(v)?,
            "bits" => self.bits = num(v)?,
            "components" => self.components = num(v)?,
            "structure" => self.structure = named(v)?,
            "boundary" => self.boundary = named(v)?,
            "edges_path" => self.edges_path = path(v),
            "model" => self.model = named(v)?,
            "hidden" => self.hidden = list(v)?,
            "encoding" => self.encoding = named(v)?,
            "objective" => self.objective = named(v)?,
            "noise_w" => self.noise_w = list(v)?,
            "smoothing" => self.smoothing = num(v)?,
            "lr" => self.lr = num(v)?,
            "lr_end" => self.lr_end = if v.is_empty() { None } else { Some(num(v)?) },
            "beta1" => self.beta1 = num(v)?,
            "beta2" => self.beta2 = num(v)?,
            "eps" => self.eps = num(v)?,
            "batch_size" => self.batch_size = num(v)?,
            "iterations" => self.iterations = num(v)?,
            "log_every" => self.log_every = num(v)?,
            "seed" => self.seed = num(v)?,
            "out" => self.out = PathBuf::from(v),
            "checkpoint" => self.checkpoint = path(v),
            "steps" => self.steps = num(v)?,
            "burn_in" => self.burn_in = num(v)?,
            "thin" => self.thin = num(v)?,
            "chains" => self.chains = num(v)?,
            "init" => self.init = named(v)?,
            "proposal" => self.proposal = named(v)?,
            "suite" => self.suite = if v == "all" { SuiteChoice::All } else { SuiteChoice::One(named(v)?) },
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Text form of one key, as [`set`](Self::set) would accept it.
    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        Some(match key {
            "dataset" => self.dataset.name().into(),
            "dataset_path" => path(&self.dataset_path),
            "header" => self.header.to_string(),
            "n_samples" => self.n_samples.to_string(),
            "bins" => self.bins.to_string(),
            "bits" => self.bits.to_string(),
            "components" => self.components.to_string(),
            "structure" => self.structure.name().into(),
            "boundary" => self.boundary.name().into(),
            "edges_path" => path(&self.edges_path),
            "model" => self.model.name().into(),
            "hidden" => join(&self.hidden),
            "encoding" => self.encoding.name().into(),
            "objective" => self.objective.name().into(),
            "noise_w" => join(&self.noise_w),
            "smoothing" => self.smoothing.to_string(),
            "lr" => self.lr.to_string(),
            "lr_end" => self.lr_end.map_or(String::new(), |v| v.to_string()),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "eps" => self.eps.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "iterations" => self.iterations.to_string(),
            "log_every" => self.log_every.to_string(),
            "seed" => self.seed.to_string(),
            "out" => self.out.display().to_string(),
            "checkpoint" => path(&self.checkpoint),
            "steps" => self.steps.to_string(),
            "burn_in" => self.burn_in.to_string(),
            "thin" => self.thin.to_string(),
            "chains" => self.chains.to_string(),
            "init" => self.init.name().into(),
            "proposal" => self.proposal.name().into(),
            "suite" => match self.suite {
                SuiteChoice::All => "all".into(),
                SuiteChoice::One(s) => s.name().into(),
            },
            _ => return None,
        })
    }

    /// Every key with its value; parsing this text gives back the same
    /// config.
    pub fn resolved(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k).expect("listed key"))).collect()
    }

    /// Checks cross-field constraints. Runs before any command does work.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.dataset == DatasetKind::Csv && self.dataset_path.is_none() {
            return fail("dataset = csv needs dataset_path".into());
        }
        if self.structure == StructureKind::Explicit && self.edges_path.is_none() {
            return fail("structure = explicit needs edges_path".into());
        }
        if self.n_samples == 0 {
            return fail("n_samples must be positive".into());
        }
        if self.bins < 2 {
            return fail("bins must be at least 2".into());
        }
        if self.bits == 0 || self.components == 0 {
            return fail("bits and components must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden needs at least one positive width".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if let Some(e) = self.lr_end {
            if !(e > 0.0 && e.is_finite()) {
                return fail(format!("lr_end must be positive, got {e}"));
            }
        }
        for (k, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{k} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return fail("eps must be positive".into());
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return fail("batch_size and log_every must be positive".into());
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return fail(format!("smoothing must lie in [0, 1), got {}", self.smoothing));
        }
        if self.smoothing > 0.0
            && !matches!(self.objective, Objective::CsmExact | Objective::CsmMc | Objective::CsmStructured)
        {
            return fail(format!("smoothing applies to the csm objectives, not {}", self.objective));
        }
        if let Some(w) = self.noise_w.iter().find(|w| !(**w > 0.0 && **w < 1.0)) {
            return fail(format!("noise_w entries must lie in (0, 1), got {w}"));
        }
        match (self.objective, self.noise_w.len()) {
            (Objective::Dcsm, 0) => return fail("objective dcsm needs noise_w".into()),
            (Objective::Dcsm, _) | (_, 0) => {}
            (o, _) => return fail(format!("noise_w applies only to dcsm, not {o}")),
        }
        if self.objective.needs_density() && self.model == ModelKind::ScoreNet {
            return fail(format!("objective {} needs a density model, not score_net", self.objective));
        }
        if self.thin == 0 || self.chains == 0 {
            return fail("thin and chains must be positive".into());
        }
        if self.burn_in > self.steps {
            return fail(format!("burn_in {} exceeds steps {}", self.burn_in, self.steps));
        }
        Ok(())
    }

    /// The checkpoint path, defaulting into the output directory.
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint.bin"))
    }
}
