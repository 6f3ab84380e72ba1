//! Self-checks behind `csm check`. Each suite returns one row per invariant
//! with the measured value and its tolerance; errors become failed rows.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::data::toy_1d_distribution;
use crate::denoise::{langevin_denoise, perturb, posterior_weights, recover_stein_score, table_ratio, triangular_pdf};
use crate::error::{Error, Result};
use crate::exact::{
    concrete_score_exact, reconstruct_density, scaled_score_limit, total_variation, TabularDistribution,
};
use crate::graph::{build_reverse_index, build_structure, NeighborhoodStructure, StructureKind};
use crate::math;
use crate::models::LogitTableModel;
use crate::objectives::{
    csm_loss_exact, estimate_j1, estimate_j2, estimate_j2_structured, jcsm_exact, mean_and_standard_error,
};
use crate::rng::stream_rng;
use crate::samplers::{acceptance_probability, run_chain, ChainConfig, LangevinConfig, Proposal};
use crate::space::{DiscreteSpace, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Completeness,
    Estimators,
    Equivalence,
    SteinLimit,
    Denoise,
    Mh,
}

impl Suite {
    pub const ALL: [Suite; 6] =
        [Suite::Completeness, Suite::Estimators, Suite::Equivalence, Suite::SteinLimit, Suite::Denoise, Suite::Mh];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Completeness => "completeness",
            Suite::Estimators => "estimators",
            Suite::Equivalence => "equivalence",
            Suite::SteinLimit => "stein_limit",
            Suite::Denoise => "denoise",
            Suite::Mh => "mh",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    /// Upper bound on `measured`.
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(suite: Suite, name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        CheckResult { suite: suite.name(), name: name.into(), measured, tolerance, passed: measured <= tolerance }
    }

    fn failed(suite: Suite, name: impl Into<String>, err: &Error) -> Self {
        CheckResult {
            suite: suite.name(),
            name: alloc::format!("{}: {err}", name.into()),
            measured: f64::NAN,
            tolerance: 0.0,
            passed: false,
        }
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Vec<CheckResult> {
    match suite {
        Suite::Completeness => completeness(seed),
        Suite::Estimators => estimators(seed),
        Suite::Equivalence => equivalence(seed),
        Suite::SteinLimit => stein_limit(),
        Suite::Denoise => denoise(seed),
        Suite::Mh => mh(seed),
    }
}

fn collect(suite: Suite, name: &str, r: Result<Vec<CheckResult>>) -> Vec<CheckResult> {
    r.unwrap_or_else(|e| alloc::vec![CheckResult::failed(suite, name, &e)])
}

/// A random shape with between 2 and `max_states` states.
fn random_dims<R: Rng + ?Sized>(rng: &mut R, max_states: usize, min_ndim: usize) -> Vec<usize> {
    loop {
        let ndim = rng.random_range(min_ndim..=3);
        let dims: Vec<usize> = (0..ndim).map(|_| rng.random_range(2..=8)).collect();
        let n: usize = dims.iter().product();
        if n <= max_states {
            return dims;
        }
    }
}

fn random_distribution<R: Rng + ?Sized>(space: &DiscreteSpace, rng: &mut R) -> Result<TabularDistribution> {
    let n = space.enumerable_len()?;
    let logw: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    TabularDistribution::from_log_weights(space.clone(), &logw)
}

fn random_table<R: Rng + ?Sized>(space: &DiscreteSpace, rng: &mut R) -> Result<LogitTableModel> {
    let n = space.enumerable_len()?;
    LogitTableModel::from_logits(space.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

const ROUND_TRIP_KINDS: [StructureKind; 5] =
    [StructureKind::Chain, StructureKind::Cycle, StructureKind::Star, StructureKind::Grid, StructureKind::Complete];

fn completeness(seed: u64) -> Vec<CheckResult> {
    ROUND_TRIP_KINDS
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let name = alloc::format!("round_trip_linf_{kind}_x50");
            let run = || -> Result<f64> {
                let mut rng = stream_rng(seed, k as u64);
                let mut worst: f64 = 0.0;
                for _ in 0..50 {
                    let space = DiscreteSpace::new(random_dims(&mut rng, 64, 1))?;
                    let p = random_distribution(&space, &mut rng)?;
                    let s = build_structure(kind, space)?;
                    let r = reconstruct_density(|x| concrete_score_exact(&p, &s, x), &s, None)?;
                    for (a, b) in r.distribution.masses().iter().zip(p.masses()) {
                        worst = worst.max((a - b).abs());
                    }
                }
                Ok(worst)
            };
            match run() {
                Ok(v) => CheckResult::new(Suite::Completeness, name, v, 1e-10),
                Err(e) => CheckResult::failed(Suite::Completeness, name, &e),
            }
        })
        .collect()
}

fn equivalence(seed: u64) -> Vec<CheckResult> {
    let run = || -> Result<Vec<CheckResult>> {
        let mut rng = stream_rng(seed, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let space = DiscreteSpace::new(random_dims(&mut rng, 32, 1))?;
            let kind = ROUND_TRIP_KINDS[rng.random_range(0..ROUND_TRIP_KINDS.len())];
            let s = build_structure(kind, space.clone())?;
            let p = random_distribution(&space, &mut rng)?;
            for _ in 0..10 {
                let a = random_table(&space, &mut rng)?;
                let b = random_table(&space, &mut rng)?;
                let dl = csm_loss_exact(&a, &p, &s)?.value - csm_loss_exact(&b, &p, &s)?.value;
                let dj = jcsm_exact(&a, &p, &s)?.value - jcsm_exact(&b, &p, &s)?.value;
                worst = worst.max((dl - dj).abs());
            }
        }
        Ok(alloc::vec![CheckResult::new(Suite::Equivalence, "loss_minus_objective_offset_x100", worst, 1e-8)])
    };
    collect(Suite::Equivalence, "equivalence", run())
}

const ESTIMATOR_DRAWS: usize = 100_000;

/// `|mean - exact| / SE` over per-draw estimates.
fn z_score<F>(exact: f64, mut draw: F) -> Result<f64>
where
    F: FnMut() -> Result<f64>,
{
    let xs: Vec<f64> = (0..ESTIMATOR_DRAWS).map(|_| draw()).collect::<Result<_>>()?;
    let (m, se) = mean_and_standard_error(&xs);
    let d = (m - exact).abs();
    Ok(if se > 0.0 {
        d / se
    } else if d < 1e-12 {
        0.0
    } else {
        f64::INFINITY
    })
}

fn estimators(seed: u64) -> Vec<CheckResult> {
    let cases: [(StructureKind, &[usize]); 4] = [
        (StructureKind::Chain, &[40]),
        (StructureKind::Cycle, &[5, 6]),
        (StructureKind::Star, &[30]),
        (StructureKind::Grid, &[8, 8]),
    ];
    let mut out = Vec::new();
    for (k, (kind, dims)) in cases.into_iter().enumerate() {
        let run = || -> Result<Vec<CheckResult>> {
            let mut rng = stream_rng(seed, k as u64);
            let space = DiscreteSpace::new(dims.to_vec())?;
            let s = build_structure(kind, space.clone())?;
            let p = random_distribution(&space, &mut rng)?;
            let model = random_table(&space, &mut rng)?;
            let exact = jcsm_exact(&model, &p, &s)?.meta;
            let (j1, j2) = (exact.j1.expect("set"), exact.j2.expect("set"));
            let reverse = build_reverse_index(&s)?;
            let sampler = p.sampler();
            let mut rows = Vec::new();
            let mut push = |what: &str, z: f64| {
                rows.push(CheckResult::new(Suite::Estimators, alloc::format!("{what}_{kind}_z"), z, 3.0))
            };
            let mut draw_rng = stream_rng(seed, 100 + k as u64);
            let z = z_score(j1, || {
                let x = sampler.sample(&mut draw_rng);
                Ok(estimate_j1(&model, &[x], &s, &mut draw_rng)?.value)
            })?;
            push("j1", z);
            let z = z_score(j2, || {
                let x = sampler.sample(&mut draw_rng);
                Ok(estimate_j2(&model, &[x], &s, &reverse, &mut draw_rng)?.value)
            })?;
            push("j2", z);
            if kind != StructureKind::Star {
                let z = z_score(j2, || {
                    let x = sampler.sample(&mut draw_rng);
                    Ok(estimate_j2_structured(&model, &[x], &s, &mut draw_rng)?.value)
                })?;
                push("j2_structured", z);
            }
            Ok(rows)
        };
        out.extend(collect(Suite::Estimators, kind.name(), run()));
    }
    out
}

/// Forward-difference errors against the analytic score `-x` of a standard
/// normal should halve with the step.
fn stein_limit() -> Vec<CheckResult> {
    let density = |x: &[f64]| math::exp(-0.5 * x[0] * x[0]);
    let deltas = [0.1, 0.05, 0.025];
    let mut out = Vec::new();
    for x in [-1.7, 0.3, 2.2] {
        let errs: Result<Vec<f64>> =
            deltas.iter().map(|&d| Ok((scaled_score_limit(density, &[x], d)?[0] + x).abs())).collect();
        match errs {
            Ok(e) => {
                for w in 0..2 {
                    let name = alloc::format!("halving_ratio_at_{x}_from_{}", deltas[w]);
                    out.push(CheckResult::new(Suite::SteinLimit, name, (e[w] / e[w + 1] - 2.0).abs(), 0.6));
                }
            }
            Err(e) => out.push(CheckResult::failed(Suite::SteinLimit, "stein_limit", &e)),
        }
    }
    out
}

/// Relaxed density by explicit convolution with the triangular kernel.
pub fn relaxed_density(p: &TabularDistribution, x: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (c, m) in p.space().states()?.zip(p.masses()) {
        let u: Vec<f64> = x.iter().zip(&c).map(|(a, &b)| a - b as f64).collect();
        total += m * triangular_pdf(&u);
    }
    Ok(total)
}

fn denoise(seed: u64) -> Vec<CheckResult> {
    let run = || -> Result<Vec<CheckResult>> {
        let p = toy_1d_distribution();
        let space = p.space().clone();
        let n = space.dims()[0] as f64;
        let mut rng = stream_rng(seed, 0);
        let (mut score_err, mut norm_err): (f64, f64) = (0.0, 0.0);
        let mut points = 0;
        while points < 100 {
            let x = rng.random_range(-0.99..n - 0.01);
            if (x - math::floor(x + 0.5)).abs() < 1e-3 {
                continue;
            }
            points += 1;
            let s = recover_stein_score(&space, &[x], table_ratio(&p))?[0];
            let h = 1e-6;
            let fd = (math::ln(relaxed_density(&p, &[x + h])?) - math::ln(relaxed_density(&p, &[x - h])?)) / (2.0 * h);
            score_err = score_err.max((s - fd).abs());
            let w: f64 = posterior_weights(&space, &[x], table_ratio(&p))?.iter().map(|(_, w)| w).sum();
            norm_err = norm_err.max((w - 1.0).abs());
        }
        let mut ratio_err: f64 = 0.0;
        let states: Vec<State> = space.states()?.collect();
        for a in &states {
            for b in &states {
                let fa = relaxed_density(&p, &[a[0] as f64])?;
                let fb = relaxed_density(&p, &[b[0] as f64])?;
                let want = p.mass(a)? / p.mass(b)?;
                ratio_err = ratio_err.max((fa / fb - want).abs() / want);
            }
        }
        let sampler = p.sampler();
        let starts: Vec<Vec<f64>> = (0..20_000).map(|_| perturb(&sampler.sample(&mut rng), &mut rng)).collect();
        let cfg = LangevinConfig { step_size: 0.01, steps: 50, keep: 1, noise: true };
        let run = langevin_denoise(&space, &starts, table_ratio(&p), &cfg, &mut rng)?;
        let hist = TabularDistribution::empirical(space.clone(), &run.denoised)?;
        let tv = total_variation(hist.masses(), p.masses());
        Ok(alloc::vec![
            CheckResult::new(Suite::Denoise, "stein_score_vs_convolution_x100", score_err, 1e-6),
            CheckResult::new(Suite::Denoise, "posterior_normalization", norm_err, 1e-12),
            CheckResult::new(Suite::Denoise, "integer_ratio_preservation", ratio_err, 1e-12),
            CheckResult::new(Suite::Denoise, "pipeline_tv_vs_clean", tv, 0.03),
        ])
    };
    collect(Suite::Denoise, "denoise", run())
}

/// Largest violation of `sum_x pi(x) P(x, y) = pi(y)` for the exact MH
/// transition matrix of `model` under `proposal`.
pub fn stationarity_defect(
    model: &LogitTableModel,
    structure: &NeighborhoodStructure,
    proposal: Proposal,
) -> Result<f64> {
    let space = structure.space();
    let pi = crate::models::normalized_masses(model)?;
    let n = pi.len();
    let mut flow = alloc::vec![0.0; n];
    for (i, x) in space.states()?.enumerate() {
        let mut moves: Vec<State> = structure.neighbors(&x)?;
        if proposal == Proposal::Symmetrized {
            for (y, _) in structure.in_neighbors(&x)? {
                if !moves.contains(&y) {
                    moves.push(y);
                }
            }
        }
        let mut stay = 1.0;
        for y in &moves {
            let a = acceptance_probability(model, structure, &x, y, proposal)?.0 / moves.len() as f64;
            flow[space.index_of(y)?] += pi[i] * a;
            stay -= a;
        }
        flow[i] += pi[i] * stay;
    }
    Ok(flow.iter().zip(&pi).map(|(f, p)| (f - p).abs()).fold(0.0, f64::max))
}

fn mh(seed: u64) -> Vec<CheckResult> {
    let run = || -> Result<Vec<CheckResult>> {
        let mut rng = stream_rng(seed, 0);
        let space = DiscreteSpace::new(alloc::vec![16])?;
        let model = random_table(&space, &mut rng)?;
        let mut out = Vec::new();
        for kind in [StructureKind::Cycle, StructureKind::Star, StructureKind::Complete] {
            let s = build_structure(kind, space.clone())?;
            let d = stationarity_defect(&model, &s, Proposal::Symmetrized)?;
            out.push(CheckResult::new(Suite::Mh, alloc::format!("stationarity_{kind}"), d, 1e-12));
        }
        let s = build_structure(StructureKind::Complete, space.clone())?;
        let cfg = ChainConfig { steps: 100_000, ..Default::default() };
        let chain = run_chain(&model, &s, alloc::vec![0], &cfg, stream_rng(seed, 1))?;
        let hist = TabularDistribution::empirical(space.clone(), &chain.samples)?;
        let tv = total_variation(hist.masses(), &crate::models::normalized_masses(&model)?);
        out.push(CheckResult::new(Suite::Mh, "chain_tv_complete_1e5_steps", tv, 0.02));
        Ok(out)
    };
    collect(Suite::Mh, "mh", run())
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}/{}: {:.3e} (tolerance {:.3e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

/// Whether every row passed; an empty report counts as a failure.
pub fn all_passed(rows: &[CheckResult]) -> bool {
    !rows.is_empty() && rows.iter().all(|r| r.passed)
}
