//! Metropolis-Hastings over neighborhood graphs, an annealed schedule over
//! several models, and Langevin dynamics for continuous relaxations.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{fmt_state, Error, Result};
use crate::graph::{is_weakly_connected, NeighborhoodStructure};
use crate::math;
use crate::models::ScoreModel;
use crate::space::State;

/// How MH proposes a move from `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Proposal {
    /// Uniform over `N(x)` together with every state that has `x` as a
    /// neighbor. Ratios toward an in-neighbor come from the reverse score.
    /// Reverse moves always exist, so directed structures such as cycles mix.
    #[default]
    Symmetrized,
    /// Uniform over `N(x)` only; moves whose reverse is impossible are
    /// rejected.
    Forward,
}

impl Proposal {
    pub fn name(self) -> &'static str {
        match self {
            Proposal::Symmetrized => "symmetrized",
            Proposal::Forward => "forward",
        }
    }
}

impl core::str::FromStr for Proposal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetrized" => Ok(Proposal::Symmetrized),
            "forward" => Ok(Proposal::Forward),
            _ => Err(Error::InvalidArgument(alloc::format!("unknown proposal `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainState<R> {
    pub current: State,
    pub step: u64,
    pub rng: R,
    pub accepted: u64,
    pub proposed: u64,
    /// Ratios that came out negative (or infinite) and were clamped.
    pub clamped: u64,
}

impl<R: Rng> ChainState<R> {
    pub fn new(init: State, rng: R) -> Self {
        ChainState { current: init, step: 0, rng, accepted: 0, proposed: 0, clamped: 0 }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Candidate moves from `x` under `proposal`.
fn candidates(structure: &NeighborhoodStructure, x: &[usize], proposal: Proposal) -> Result<Vec<State>> {
    let mut out = structure.neighbors(x)?;
    if proposal == Proposal::Symmetrized && !structure.is_symmetric() {
        for (y, _) in structure.in_neighbors(x)? {
            if !out.contains(&y) {
                out.push(y);
            }
        }
    }
    Ok(out)
}

/// `q(y) / q(x)` for adjacent states, read off whichever score links them.
/// The flag reports a clamped value.
pub fn neighbor_ratio<M: ScoreModel + ?Sized>(
    model: &M,
    structure: &NeighborhoodStructure,
    x: &[usize],
    y: &[usize],
) -> Result<(f64, bool)> {
    if let Some(i) = structure.neighbor_position(x, y)? {
        let r = model.score_entry(structure, x, i)? + 1.0;
        if !r.is_finite() {
            return Err(Error::NonFinite { what: "score", index: i });
        }
        return Ok(if r < 0.0 { (0.0, true) } else { (r, false) });
    }
    let j = structure.neighbor_position(y, x)?.ok_or_else(|| {
        Error::InvalidArgument(alloc::format!("{} and {} are not adjacent", fmt_state(x), fmt_state(y)))
    })?;
    let back = model.score_entry(structure, y, j)? + 1.0;
    if !back.is_finite() {
        return Err(Error::NonFinite { what: "score", index: j });
    }
    Ok(if back <= 0.0 { (f64::INFINITY, true) } else { (1.0 / back, false) })
}

/// Probability of accepting the move `x -> y`, and whether a ratio was
/// clamped on the way.
pub fn acceptance_probability<M: ScoreModel + ?Sized>(
    model: &M,
    structure: &NeighborhoodStructure,
    x: &[usize],
    y: &[usize],
    proposal: Proposal,
) -> Result<(f64, bool)> {
    let from = candidates(structure, x, proposal)?;
    let back = candidates(structure, y, proposal)?;
    if !back.iter().any(|s| s.as_slice() == x) {
        return Ok((0.0, false));
    }
    let (r, clamped) = neighbor_ratio(model, structure, x, y)?;
    let a = r * from.len() as f64 / back.len() as f64;
    Ok((if a >= 1.0 { 1.0 } else { a }, clamped))
}

/// One MH transition. Returns whether the proposal was accepted.
pub fn mh_step<M: ScoreModel + ?Sized, R: Rng>(
    chain: &mut ChainState<R>,
    model: &M,
    structure: &NeighborhoodStructure,
    proposal: Proposal,
) -> Result<bool> {
    let from = candidates(structure, &chain.current, proposal)?;
    if from.is_empty() {
        return Err(Error::InvalidState { state: fmt_state(&chain.current), reason: "no moves to propose".into() });
    }
    let y = &from[chain.rng.random_range(0..from.len())];
    let (a, clamped) = acceptance_probability(model, structure, &chain.current, y, proposal)?;
    chain.step += 1;
    chain.proposed += 1;
    chain.clamped += clamped as u64;
    let accept = a >= 1.0 || chain.rng.random::<f64>() < a;
    if accept {
        chain.current = y.clone();
        chain.accepted += 1;
    }
    Ok(accept)
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub proposal: Proposal,
    /// States the chain is meant to cover; the whole space when `None`.
    pub support: Option<Vec<State>>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { steps: 1000, burn_in: 0, thin: 1, proposal: Proposal::default(), support: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    /// `x_t` for `t >= burn_in` with `(t - burn_in) % thin == 0`, where
    /// `x_0` is the initial state.
    pub samples: Vec<State>,
    pub final_state: State,
    pub accepted: u64,
    pub proposed: u64,
    pub clamped: u64,
}

impl ChainRun {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

fn check_connected(structure: &NeighborhoodStructure, support: Option<&[State]>) -> Result<()> {
    let ok = match support {
        Some(s) => is_weakly_connected(structure, s)?,
        None => structure.is_connected()?,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Disconnected)
    }
}

fn check_config(config: &ChainConfig) -> Result<()> {
    if config.thin == 0 {
        return Err(Error::InvalidArgument("thin must be at least 1".into()));
    }
    if config.burn_in > config.steps {
        return Err(Error::InvalidArgument(alloc::format!(
            "burn-in {} exceeds {} steps",
            config.burn_in,
            config.steps
        )));
    }
    Ok(())
}

fn run_checked<M: ScoreModel + ?Sized, R: Rng>(
    model: &M,
    structure: &NeighborhoodStructure,
    chain: &mut ChainState<R>,
    config: &ChainConfig,
) -> Result<Vec<State>> {
    let mut samples = Vec::new();
    for t in 0..=config.steps {
        if t > 0 {
            mh_step(chain, model, structure, config.proposal)?;
        }
        if t >= config.burn_in && (t - config.burn_in) % config.thin == 0 {
            samples.push(chain.current.clone());
        }
    }
    Ok(samples)
}

/// Runs one chain from `init`. Refuses to start when the structure is not
/// weakly connected on the support.
pub fn run_chain<M: ScoreModel + ?Sized, R: Rng>(
    model: &M,
    structure: &NeighborhoodStructure,
    init: State,
    config: &ChainConfig,
    rng: R,
) -> Result<ChainRun> {
    structure.space().check(&init)?;
    check_config(config)?;
    check_connected(structure, config.support.as_deref())?;
    let mut chain = ChainState::new(init, rng);
    let samples = run_checked(model, structure, &mut chain, config)?;
    Ok(ChainRun {
        samples,
        final_state: chain.current,
        accepted: chain.accepted,
        proposed: chain.proposed,
        clamped: chain.clamped,
    })
}

/// Runs a chain per model, highest noise first, each starting where the
/// previous one stopped. Returns the last level's samples; counters cover
/// all levels.
pub fn run_annealed<M: ScoreModel + ?Sized, R: Rng>(
    models: &[&M],
    structure: &NeighborhoodStructure,
    init: State,
    config: &ChainConfig,
    rng: R,
) -> Result<ChainRun> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("annealing needs at least one model".into()));
    }
    structure.space().check(&init)?;
    check_config(config)?;
    check_connected(structure, config.support.as_deref())?;
    let mut chain = ChainState::new(init, rng);
    let mut samples = Vec::new();
    for model in models {
        samples = run_checked(*model, structure, &mut chain, config)?;
    }
    Ok(ChainRun {
        samples,
        final_state: chain.current,
        accepted: chain.accepted,
        proposed: chain.proposed,
        clamped: chain.clamped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangevinConfig {
    pub step_size: f64,
    pub steps: usize,
    /// Number of trailing iterates to return.
    pub keep: usize,
    /// Disables the Gaussian term, leaving plain gradient ascent.
    pub noise: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangevinRun {
    pub tail: Vec<Vec<f64>>,
    /// Moves discarded because they left the allowed region.
    pub rejected: u64,
}

/// `x <- x + (eps / 2) s(x) + sqrt(eps) z` with standard normal `z`.
pub fn langevin<F, R>(score_fn: F, init: Vec<f64>, config: &LangevinConfig, rng: &mut R) -> Result<LangevinRun>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
    R: Rng + ?Sized,
{
    langevin_within(score_fn, |_| true, init, config, rng)
}

/// [`langevin`] that keeps the current iterate whenever a move would land
/// outside `inside`.
pub fn langevin_within<F, G, R>(
    mut score_fn: F,
    inside: G,
    init: Vec<f64>,
    config: &LangevinConfig,
    rng: &mut R,
) -> Result<LangevinRun>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
    G: Fn(&[f64]) -> bool,
    R: Rng + ?Sized,
{
    if !(config.step_size > 0.0) {
        return Err(Error::InvalidArgument("step size must be positive".into()));
    }
    let eps = config.step_size;
    let noise_scale = math::sqrt(eps);
    let mut x = init;
    let mut next = x.clone();
    let mut tail = Vec::with_capacity(config.keep.min(config.steps));
    let mut rejected = 0;
    for t in 0..config.steps {
        let s = score_fn(&x)?;
        if let Some(i) = s.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "score", index: i });
        }
        for ((n, &xi), si) in next.iter_mut().zip(&x).zip(&s) {
            *n = xi + 0.5 * eps * si;
            if config.noise {
                let z: f64 = rng.sample(StandardNormal);
                *n += noise_scale * z;
            }
        }
        if inside(&next) {
            core::mem::swap(&mut x, &mut next);
        } else {
            rejected += 1;
            next.copy_from_slice(&x);
        }
        if t + config.keep >= config.steps {
            tail.push(x.clone());
        }
    }
    Ok(LangevinRun { tail, rejected })
}
