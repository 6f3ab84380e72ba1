//! Objective dispatch and the Adam training loop shared by the CLI and the
//! acceptance tests.

use alloc::vec::Vec;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exact::{reconstruct_density, total_variation, TabularDistribution};
use crate::graph::{build_reverse_index, NeighborhoodStructure, ReverseIndex};
use crate::math;
use crate::models::{normalized_masses, Adam, AnyModel, Parameterized, ScoreModel};
use crate::objectives::{
    dcsm_loss, jcsm_estimate, jcsm_exact, jcsm_exact_table, marginalization_loss, nll_loss, ratio_matching_loss,
    NoiseKernel, Objective, ObjectiveValue, Variant,
};
use crate::space::State;

fn exact_term(model: &AnyModel, p: &TabularDistribution, s: &NeighborhoodStructure) -> Result<ObjectiveValue> {
    match model {
        AnyModel::LogitTable(t) => jcsm_exact_table(t, p, s),
        _ => jcsm_exact(model, p, s),
    }
}

/// An objective bound to its structure and the precomputed pieces it needs.
#[derive(Debug, Clone)]
pub struct BoundObjective {
    pub objective: Objective,
    pub structure: NeighborhoodStructure,
    reverse: Option<ReverseIndex>,
    kernel: Option<NoiseKernel>,
    /// Full-batch target of `csm_exact`: the empirical data distribution.
    target: Option<TabularDistribution>,
    /// Weight and distribution of the uniform component mixed into the
    /// target of the CSM objectives.
    floor: Option<(f64, TabularDistribution)>,
}

impl BoundObjective {
    /// `noise_w` is required by `dcsm` and ignored otherwise.
    pub fn new(
        objective: Objective,
        structure: NeighborhoodStructure,
        data: &Dataset,
        noise_w: Option<f64>,
    ) -> Result<Self> {
        if structure.space() != &data.space {
            return Err(Error::SpaceMismatch(alloc::format!(
                "structure over {:?}, data over {:?}",
                structure.space().dims(),
                data.space.dims()
            )));
        }
        if data.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut bound = BoundObjective { objective, structure, reverse: None, kernel: None, target: None, floor: None };
        match objective {
            Objective::CsmExact => bound.target = Some(data.empirical()?),
            Objective::CsmMc => bound.reverse = Some(build_reverse_index(&bound.structure)?),
            Objective::Dcsm => {
                let w = noise_w.ok_or_else(|| Error::InvalidArgument("dcsm needs a noise level noise_w".into()))?;
                bound.kernel = Some(NoiseKernel::new(w, &data.space)?);
            }
            _ => {}
        }
        Ok(bound)
    }

    /// Mixes a uniform component of weight `eps` into the target of a CSM
    /// objective, so that data with empty cells next to occupied ones still
    /// has a bounded objective. The uniform part is enumerated exactly each
    /// step, which needs an enumerable space.
    pub fn with_smoothing(mut self, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidArgument(alloc::format!("smoothing must lie in [0, 1), got {eps}")));
        }
        if eps == 0.0 {
            self.floor = None;
            return Ok(self);
        }
        if !matches!(self.objective, Objective::CsmExact | Objective::CsmMc | Objective::CsmStructured) {
            return Err(Error::Unsupported(alloc::format!("smoothing does not apply to {}", self.objective)));
        }
        let u = TabularDistribution::uniform(self.structure.space().clone())?;
        self.floor = Some((eps, u));
        Ok(self)
    }

    pub fn smoothing(&self) -> f64 {
        self.floor.as_ref().map_or(0.0, |f| f.0)
    }

    pub fn kernel(&self) -> Option<&NoiseKernel> {
        self.kernel.as_ref()
    }

    /// Value and gradient on `batch`. `csm_exact` ignores the batch.
    pub fn evaluate<R: Rng + ?Sized>(&self, model: &AnyModel, batch: &[State], rng: &mut R) -> Result<ObjectiveValue> {
        if self.objective.needs_density() && model.as_density().is_none() {
            return Err(Error::Unsupported(alloc::format!(
                "objective {} needs a model with a density, got {}",
                self.objective,
                model.kind()
            )));
        }
        let v = self.evaluate_data_term(model, batch, rng)?;
        match &self.floor {
            None => Ok(v),
            Some((eps, u)) => {
                let f = exact_term(model, u, &self.structure)?;
                let mix = |a: f64, b: f64| (1.0 - eps) * a + eps * b;
                Ok(ObjectiveValue {
                    value: mix(v.value, f.value),
                    grad: v.grad.iter().zip(&f.grad).map(|(&a, &b)| mix(a, b)).collect(),
                    meta: v.meta,
                })
            }
        }
    }

    fn evaluate_data_term<R: Rng + ?Sized>(
        &self,
        model: &AnyModel,
        batch: &[State],
        rng: &mut R,
    ) -> Result<ObjectiveValue> {
        let s = &self.structure;
        match self.objective {
            Objective::CsmExact => exact_term(model, self.target.as_ref().expect("set in new"), s),
            Objective::CsmMc => jcsm_estimate(model, batch, s, self.reverse.as_ref(), rng),
            Objective::CsmStructured => jcsm_estimate(model, batch, s, None, rng),
            Objective::Dcsm => dcsm_loss(model, batch, self.kernel.as_ref().expect("set in new"), s, rng),
            Objective::RatioFixed => ratio_matching_loss(model.density_or_err()?, batch, Variant::Fixed),
            Objective::RatioOriginal => ratio_matching_loss(model.density_or_err()?, batch, Variant::Original),
            Objective::MarginalFixed => marginalization_loss(model.density_or_err()?, batch, Variant::Fixed),
            Objective::MarginalOriginal => marginalization_loss(model.density_or_err()?, batch, Variant::Original),
            Objective::Nll => nll_loss(model.density_or_err()?, batch),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate reached at the last iteration by geometric decay from
    /// `lr`; constant when `None`.
    pub lr_end: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// A log row every this many iterations, plus one after the last.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            batch_size: 128,
            lr: 5e-4,
            lr_end: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    /// Objective on the batch used for this iteration's step.
    pub objective: f64,
    /// TV between the model and the dataset's ground truth after the step,
    /// when both are available.
    pub tv: Option<f64>,
}

/// Uniform draws with replacement.
pub fn sample_batch<R: Rng + ?Sized>(data: &Dataset, batch_size: usize, rng: &mut R) -> Vec<State> {
    (0..batch_size).map(|_| data.samples[rng.random_range(0..data.len())].clone()).collect()
}

/// The distribution a model represents on an enumerable space. Score-only
/// models are reconstructed through `structure`.
pub fn model_distribution(model: &AnyModel, structure: &NeighborhoodStructure) -> Result<TabularDistribution> {
    match model.as_density() {
        Some(m) => TabularDistribution::new(m.space().clone(), normalized_masses(m)?),
        None => Ok(reconstruct_density(|x| model.score(structure, x), structure, None)?.distribution),
    }
}

/// Adam on `bound` for `config.iterations` steps. `on_row` sees each log row
/// as it is produced. A non-finite objective or gradient aborts with the
/// iteration number.
pub fn train<R, F>(
    model: &mut AnyModel,
    bound: &BoundObjective,
    data: &Dataset,
    config: &TrainConfig,
    rng: &mut R,
    mut on_row: F,
) -> Result<Vec<LogRow>>
where
    R: Rng + ?Sized,
    F: FnMut(&LogRow),
{
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    if config.log_every == 0 {
        return Err(Error::InvalidArgument("log_every must be at least 1".into()));
    }
    let mut adam = Adam::new(model.num_params(), config.lr).with_betas(config.beta1, config.beta2, config.eps);
    let truth = data.ground_truth.as_ref().filter(|_| data.space.is_enumerable());
    let mut rows = Vec::new();
    if let Some(end) = config.lr_end {
        if !(end > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("lr_end must be positive, got {end}")));
        }
    }
    for it in 1..=config.iterations {
        if let Some(end) = config.lr_end {
            let frac = if config.iterations > 1 { (it - 1) as f64 / (config.iterations - 1) as f64 } else { 1.0 };
            adam.lr = config.lr * math::pow(end / config.lr, frac);
        }
        let batch = if bound.objective == Objective::CsmExact {
            Vec::new()
        } else {
            sample_batch(data, config.batch_size, rng)
        };
        let v = bound.evaluate(model, &batch, rng).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::Diverged { what, iteration: it },
            e => e,
        })?;
        adam.step(model.params_mut(), &v.grad).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::Diverged { what, iteration: it },
            e => e,
        })?;
        if it % config.log_every == 0 || it == config.iterations {
            let tv = match truth {
                Some(t) => Some(total_variation(model_distribution(model, &bound.structure)?.masses(), t.masses())),
                None => None,
            };
            let row = LogRow { iteration: it, objective: v.value, tv };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}
