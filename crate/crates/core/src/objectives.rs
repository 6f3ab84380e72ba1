//! Training objectives. Every estimator reports a batch mean together with
//! its gradient with respect to the model parameters.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::exact::{concrete_score_exact, TabularDistribution};
use crate::graph::{NeighborhoodStructure, ReverseIndex, StructureKind};
use crate::math;
use crate::models::{DensityModel, LogitTableModel, Parameterized, ScoreModel};
use crate::space::{DiscreteSpace, State};
use crate::tape::{Tape, Var};

/// Floor applied to conditionals inside the marginalization objectives.
pub const CONDITIONAL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectiveMeta {
    /// States whose terms were evaluated.
    pub states: usize,
    /// Neighbor (or reverse-neighbor) draws made by the estimators.
    pub neighbors_sampled: usize,
    /// States that contributed zero because they had nothing to draw from.
    pub skipped: usize,
    /// Conditionals raised to the floor.
    pub clamped: usize,
    pub j1: Option<f64>,
    pub j2: Option<f64>,
}

impl ObjectiveMeta {
    fn merge(&mut self, other: &ObjectiveMeta) {
        self.states += other.states;
        self.neighbors_sampled += other.neighbors_sampled;
        self.skipped += other.skipped;
        self.clamped += other.clamped;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub grad: Vec<f64>,
    pub meta: ObjectiveMeta,
}

/// Evaluates the scalar `out`, differentiates it and rejects non-finite
/// results.
pub fn finish(tape: &Tape<'_>, out: Var, meta: ObjectiveMeta) -> Result<ObjectiveValue> {
    let value = tape.scalar_value(out);
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "objective", index: 0 });
    }
    let grad = tape.backward(out)?;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", index: i });
    }
    Ok(ObjectiveValue { value, grad, meta })
}

fn sum_terms(tape: &mut Tape<'_>, terms: &[Var]) -> Var {
    if terms.is_empty() {
        return tape.scalar(0.0);
    }
    let all = tape.concat(terms);
    tape.sum(all)
}

fn mean_terms(tape: &mut Tape<'_>, terms: &[Var], n: usize) -> Result<Var> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let s = sum_terms(tape, terms);
    Ok(tape.scale(s, 1.0 / n as f64))
}

fn check_same_space(a: &DiscreteSpace, b: &DiscreteSpace) -> Result<()> {
    if a != b {
        return Err(Error::SpaceMismatch(alloc::format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `sum_x p(x) |c_theta(x) - c_p(x)|^2` by enumeration.
pub fn csm_loss_exact<M: ScoreModel + ?Sized>(
    model: &M,
    p: &TabularDistribution,
    structure: &NeighborhoodStructure,
) -> Result<ObjectiveValue> {
    check_same_space(model.space(), p.space())?;
    let space = p.space();
    let mut tape = Tape::new(model.params());
    let mut terms = Vec::new();
    let mut meta = ObjectiveMeta::default();
    for (i, x) in space.states()?.enumerate() {
        let px = p.masses()[i];
        let target = concrete_score_exact(p, structure, &x)?;
        meta.states += 1;
        if target.is_empty() {
            continue;
        }
        let c = model.score_var(&mut tape, structure, &x)?;
        let t = tape.constant(target);
        let d = tape.sub(c, t);
        let sq = tape.square(d);
        let s = tape.sum(sq);
        terms.push(tape.scale(s, px));
    }
    let out = sum_terms(&mut tape, &terms);
    finish(&tape, out, meta)
}

/// `J1 - J2` by enumeration over `p`, which may have zeros.
pub fn jcsm_exact<M: ScoreModel + ?Sized>(
    model: &M,
    p: &TabularDistribution,
    structure: &NeighborhoodStructure,
) -> Result<ObjectiveValue> {
    check_same_space(model.space(), p.space())?;
    check_same_space(p.space(), structure.space())?;
    let space = p.space();
    let mass = p.masses();
    let mut tape = Tape::new(model.params());
    let (mut j1_terms, mut j2_terms) = (Vec::new(), Vec::new());
    let mut meta = ObjectiveMeta::default();
    for (i, x) in space.states()?.enumerate() {
        let nbrs = structure.neighbors(&x)?;
        let w: Vec<f64> = nbrs.iter().map(|y| 2.0 * mass[space.index_unchecked(y)]).collect();
        if nbrs.is_empty() || (mass[i] == 0.0 && w.iter().all(|&v| v == 0.0)) {
            continue;
        }
        meta.states += 1;
        let c = model.score_var(&mut tape, structure, &x)?;
        if mass[i] > 0.0 {
            let sq = tape.square(c);
            let lin = tape.scale(c, 2.0);
            let a = tape.add(sq, lin);
            let s = tape.sum(a);
            j1_terms.push(tape.scale(s, mass[i]));
        }
        let wv = tape.constant(w);
        j2_terms.push(tape.dot(c, wv));
    }
    let j1 = sum_terms(&mut tape, &j1_terms);
    let j2 = sum_terms(&mut tape, &j2_terms);
    meta.j1 = Some(tape.scalar_value(j1));
    meta.j2 = Some(tape.scalar_value(j2));
    let out = tape.sub(j1, j2);
    finish(&tape, out, meta)
}

/// [`jcsm_exact`] for a logit table without the tape. With d = l(y) - l(x)
/// each edge contributes p(x)(e^{2d} - 1) - 2p(y)(e^d - 1).
pub fn jcsm_exact_table(
    model: &LogitTableModel,
    p: &TabularDistribution,
    structure: &NeighborhoodStructure,
) -> Result<ObjectiveValue> {
    check_same_space(model.space(), p.space())?;
    check_same_space(p.space(), structure.space())?;
    let space = p.space();
    let (mass, l) = (p.masses(), model.logits());
    let mut grad = alloc::vec![0.0; l.len()];
    let (mut j1, mut j2) = (0.0, 0.0);
    let mut meta = ObjectiveMeta::default();
    for (i, x) in space.states()?.enumerate() {
        let nbrs = structure.neighbors(&x)?;
        let idx: Vec<usize> = nbrs.iter().map(|y| space.index_unchecked(y)).collect();
        if idx.is_empty() || (mass[i] == 0.0 && idx.iter().all(|&k| mass[k] == 0.0)) {
            continue;
        }
        meta.states += 1;
        for k in idx {
            let e = math::exp(l[k] - l[i]);
            j1 += mass[i] * (e * e - 1.0);
            j2 += 2.0 * mass[k] * (e - 1.0);
            let g = 2.0 * mass[i] * e * e - 2.0 * mass[k] * e;
            grad[k] += g;
            grad[i] -= g;
        }
    }
    let value = j1 - j2;
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "objective", index: 0 });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", index: i });
    }
    meta.j1 = Some(j1);
    meta.j2 = Some(j2);
    Ok(ObjectiveValue { value, grad, meta })
}

fn j1_var<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    tape: &mut Tape<'_>,
    batch: &[State],
    structure: &NeighborhoodStructure,
    rng: &mut R,
    meta: &mut ObjectiveMeta,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(batch.len());
    for x in batch {
        let k = structure.degree(x)?;
        meta.states += 1;
        if k == 0 {
            meta.skipped += 1;
            continue;
        }
        let i = rng.random_range(0..k);
        meta.neighbors_sampled += 1;
        let c = model.score_entry_var(tape, structure, x, i)?;
        let sq = tape.square(c);
        let lin = tape.scale(c, 2.0);
        let a = tape.add(sq, lin);
        terms.push(tape.scale(a, k as f64));
    }
    mean_terms(tape, &terms, batch.len())
}

fn j2_var<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    tape: &mut Tape<'_>,
    batch: &[State],
    structure: &NeighborhoodStructure,
    reverse: &ReverseIndex,
    rng: &mut R,
    meta: &mut ObjectiveMeta,
) -> Result<Var> {
    check_same_space(reverse.space(), structure.space())?;
    let space = structure.space();
    let mut terms = Vec::with_capacity(batch.len());
    for x in batch {
        let entries = reverse.get(x)?;
        meta.states += 1;
        if entries.is_empty() {
            meta.skipped += 1;
            continue;
        }
        let (src, i) = entries[rng.random_range(0..entries.len())];
        meta.neighbors_sampled += 1;
        let c = model.score_entry_var(tape, structure, &space.state_at(src), i)?;
        terms.push(tape.scale(c, 2.0 * entries.len() as f64));
    }
    mean_terms(tape, &terms, batch.len())
}

fn j2_structured_var<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    tape: &mut Tape<'_>,
    batch: &[State],
    structure: &NeighborhoodStructure,
    rng: &mut R,
    meta: &mut ObjectiveMeta,
) -> Result<Var> {
    let space = structure.space();
    let mut terms = Vec::with_capacity(batch.len());
    for x in batch {
        space.check(x)?;
        meta.states += 1;
        match structure.kind() {
            StructureKind::Cycle | StructureKind::Chain => {
                let n = space.enumerable_len()?;
                let idx = space.index_unchecked(x);
                if idx == 0 && structure.kind() == StructureKind::Chain {
                    meta.skipped += 1;
                    continue;
                }
                let pred = space.state_at((idx + n - 1) % n);
                meta.neighbors_sampled += 1;
                let c = model.score_entry_var(tape, structure, &pred, 0)?;
                terms.push(tape.scale(c, 2.0));
            }
            StructureKind::Grid => {
                let dims = space.ndim();
                let d = rng.random_range(0..dims);
                let along: Vec<(State, usize)> =
                    structure.in_neighbors(x)?.into_iter().filter(|(y, _)| y[d] != x[d]).collect();
                if along.is_empty() {
                    meta.skipped += 1;
                    continue;
                }
                for (y, j) in along {
                    meta.neighbors_sampled += 1;
                    let c = model.score_entry_var(tape, structure, &y, j)?;
                    terms.push(tape.scale(c, 2.0 * dims as f64));
                }
            }
            kind => {
                return Err(Error::Unsupported(alloc::format!(
                    "no reparameterized J2 estimator for `{kind}` structures"
                )))
            }
        }
    }
    mean_terms(tape, &terms, batch.len())
}

/// Monte Carlo estimate of J1 from a data batch: one uniformly drawn
/// neighbor per state.
pub fn estimate_j1<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    batch: &[State],
    structure: &NeighborhoodStructure,
    rng: &mut R,
) -> Result<ObjectiveValue> {
    let mut tape = Tape::new(model.params());
    let mut meta = ObjectiveMeta::default();
    let out = j1_var(model, &mut tape, batch, structure, rng, &mut meta)?;
    finish(&tape, out, meta)
}

/// Monte Carlo estimate of J2 from a data batch: one uniformly drawn
/// reverse neighbor per state.
pub fn estimate_j2<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    batch: &[State],
    structure: &NeighborhoodStructure,
    reverse: &ReverseIndex,
    rng: &mut R,
) -> Result<ObjectiveValue> {
    let mut tape = Tape::new(model.params());
    let mut meta = ObjectiveMeta::default();
    let out = j2_var(model, &mut tape, batch, structure, reverse, rng, &mut meta)?;
    finish(&tape, out, meta)
}

/// J2 estimate for chains, cycles and grids that needs no reverse index.
pub fn estimate_j2_structured<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    batch: &[State],
    structure: &NeighborhoodStructure,
    rng: &mut R,
) -> Result<ObjectiveValue> {
    let mut tape = Tape::new(model.params());
    let mut meta = ObjectiveMeta::default();
    let out = j2_structured_var(model, &mut tape, batch, structure, rng, &mut meta)?;
    finish(&tape, out, meta)
}

/// `J1 - J2`, both estimated from the same batch. With `reverse` set, J2 uses
/// the reverse index, otherwise the structured estimator.
pub fn jcsm_estimate<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    batch: &[State],
    structure: &NeighborhoodStructure,
    reverse: Option<&ReverseIndex>,
    rng: &mut R,
) -> Result<ObjectiveValue> {
    let mut tape = Tape::new(model.params());
    let mut m1 = ObjectiveMeta::default();
    let mut m2 = ObjectiveMeta::default();
    let j1 = j1_var(model, &mut tape, batch, structure, rng, &mut m1)?;
    let j2 = match reverse {
        Some(r) => j2_var(model, &mut tape, batch, structure, r, rng, &mut m2)?,
        None => j2_structured_var(model, &mut tape, batch, structure, rng, &mut m2)?,
    };
    let mut meta = m1;
    meta.merge(&m2);
    meta.j1 = Some(tape.scalar_value(j1));
    meta.j2 = Some(tape.scalar_value(j2));
    let out = tape.sub(j1, j2);
    finish(&tape, out, meta)
}

/// Per-dimension corruption: keep the category with probability `w`, else
/// move to one of the others uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseKernel {
    dims: Vec<usize>,
    w: f64,
}

impl NoiseKernel {
    pub fn new(w: f64, space: &DiscreteSpace) -> Result<Self> {
        if !(w > 0.0 && w < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!("stay probability {w} not in (0, 1)")));
        }
        Ok(NoiseKernel { dims: space.dims().to_vec(), w })
    }

    pub fn stay(&self) -> f64 {
        self.w
    }

    pub fn off(&self, d: usize) -> f64 {
        (1.0 - self.w) / (self.dims[d] - 1) as f64
    }

    /// `q(to | from)` for one dimension.
    pub fn entry(&self, d: usize, from: usize, to: usize) -> f64 {
        if from == to {
            self.w
        } else {
            self.off(d)
        }
    }

    /// `q(noisy | clean)` for whole states.
    pub fn prob(&self, clean: &[usize], noisy: &[usize]) -> f64 {
        (0..self.dims.len()).map(|d| self.entry(d, clean[d], noisy[d])).product()
    }

    fn check(&self, space: &DiscreteSpace) -> Result<()> {
        if space.dims() != self.dims.as_slice() {
            return Err(Error::SpaceMismatch(alloc::format!("kernel over {:?}, space {:?}", self.dims, space.dims())));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, clean: &[usize], rng: &mut R) -> State {
        clean
            .iter()
            .zip(&self.dims)
            .map(|(&v, &n)| {
                if rng.random::<f64>() < self.w {
                    v
                } else {
                    // Uniform over the n - 1 other categories.
                    let u = rng.random_range(0..n - 1);
                    if u >= v {
                        u + 1
                    } else {
                        u
                    }
                }
            })
            .collect()
    }

    /// Concrete score of `q(. | clean)` at `noisy`; it factorizes over the
    /// coordinates in which each neighbor differs from `noisy`.
    pub fn target_score(&self, clean: &[usize], noisy: &[usize], neighbors: &[State]) -> Vec<f64> {
        neighbors
            .iter()
            .map(|y| {
                let mut r = 1.0;
                for d in 0..self.dims.len() {
                    if y[d] != noisy[d] {
                        r *= self.entry(d, clean[d], y[d]) / self.entry(d, clean[d], noisy[d]);
                    }
                }
                r - 1.0
            })
            .collect()
    }

    /// `sum_x p(x) q(. | x)`, applied one dimension at a time.
    pub fn perturb_distribution(&self, p: &TabularDistribution) -> Result<TabularDistribution> {
        let space = p.space();
        self.check(space)?;
        let mut mass = p.masses().to_vec();
        let mut stride = mass.len();
        for (d, &n) in self.dims.iter().enumerate() {
            stride /= n;
            let mut next = alloc::vec![0.0; mass.len()];
            for (i, slot) in next.iter_mut().enumerate() {
                let v = (i / stride) % n;
                let base = i - v * stride;
                *slot = (0..n).map(|u| mass[base + u * stride] * self.entry(d, u, v)).sum();
            }
            mass = next;
        }
        TabularDistribution::new(space.clone(), mass)
    }
}

/// Denoising objective: corrupt each clean state once and regress the score
/// at the corrupted state onto the kernel conditional's score.
pub fn dcsm_loss<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    batch: &[State],
    kernel: &NoiseKernel,
    structure: &NeighborhoodStructure,
    rng: &mut R,
) -> Result<ObjectiveValue> {
    kernel.check(structure.space())?;
    let mut tape = Tape::new(model.params());
    let mut meta = ObjectiveMeta::default();
    let mut terms = Vec::with_capacity(batch.len());
    for x in batch {
        structure.space().check(x)?;
        let noisy = kernel.sample(x, rng);
        let nbrs = structure.neighbors(&noisy)?;
        meta.states += 1;
        if nbrs.is_empty() {
            meta.skipped += 1;
            continue;
        }
        let target = kernel.target_score(x, &noisy, &nbrs);
        let c = model.score_var(&mut tape, structure, &noisy)?;
        let t = tape.constant(target);
        let d = tape.sub(c, t);
        let sq = tape.square(d);
        terms.push(tape.sum(sq));
    }
    let out = mean_terms(&mut tape, &terms, batch.len())?;
    finish(&tape, out, meta)
}

/// The expectation of [`dcsm_loss`] under `p`, by enumeration of clean and
/// corrupted states.
pub fn dcsm_loss_exact<M: ScoreModel + ?Sized>(
    model: &M,
    p: &TabularDistribution,
    kernel: &NoiseKernel,
    structure: &NeighborhoodStructure,
) -> Result<ObjectiveValue> {
    let space = p.space();
    check_same_space(space, structure.space())?;
    kernel.check(space)?;
    let states: Vec<State> = space.states()?.collect();
    let mass = p.masses();
    let mut tape = Tape::new(model.params());
    let mut meta = ObjectiveMeta::default();
    let mut terms = Vec::new();
    // E|c - t|^2 = sum over noisy states of w |c|^2 - 2 c.m + sum q |t|^2
    let mut constant = 0.0;
    for noisy in &states {
        let nbrs = structure.neighbors(noisy)?;
        meta.states += 1;
        if nbrs.is_empty() {
            continue;
        }
        let mut weight = 0.0;
        let mut m = alloc::vec![0.0; nbrs.len()];
        for (clean, &px) in states.iter().zip(mass) {
            if px == 0.0 {
                continue;
            }
            let q = px * kernel.prob(clean, noisy);
            let t = kernel.target_score(clean, noisy, &nbrs);
            weight += q;
            for (mi, ti) in m.iter_mut().zip(&t) {
                *mi += q * ti;
            }
            constant += q * t.iter().map(|v| v * v).sum::<f64>();
        }
        let c = model.score_var(&mut tape, structure, noisy)?;
        let sq = tape.square(c);
        let sq = tape.sum(sq);
        let a = tape.scale(sq, weight);
        let mv = tape.constant(m);
        let cross = tape.dot(c, mv);
        let cross = tape.scale(cross, -2.0);
        terms.push(tape.add(a, cross));
    }
    let s = sum_terms(&mut tape, &terms);
    let out = tape.shift(s, constant);
    finish(&tape, out, meta)
}

/// Which form of a baseline objective to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// The corrected form, whose minimizer depends on the data.
    Fixed,
    /// The uncorrected form, minimized by uniform conditionals.
    Original,
}

/// Squared-error matching of model conditionals to the observed values.
pub fn ratio_matching_loss<M: DensityModel + ?Sized>(
    model: &M,
    batch: &[State],
    variant: Variant,
) -> Result<ObjectiveValue> {
    let space = model.space();
    let mut tape = Tape::new(model.params());
    let mut meta = ObjectiveMeta::default();
    let mut terms = Vec::with_capacity(batch.len());
    for x in batch {
        space.check(x)?;
        meta.states += 1;
        for (d, &n) in space.dims().iter().enumerate() {
            let lc = model.log_conditionals_var(&mut tape, x, d)?;
            let q = tape.exp(lc);
            let target = match variant {
                Variant::Fixed => {
                    let mut e = alloc::vec![0.0; n];
                    e[x[d]] = 1.0;
                    e
                }
                Variant::Original => alloc::vec![1.0; n],
            };
            let t = tape.constant(target);
            let diff = tape.sub(t, q);
            let sq = tape.square(diff);
            terms.push(tape.sum(sq));
        }
    }
    let out = mean_terms(&mut tape, &terms, batch.len())?;
    finish(&tape, out, meta)
}

/// The discrete-marginalization objective. Conditionals below
/// [`CONDITIONAL_FLOOR`] are raised to it and counted in `meta.clamped`.
pub fn marginalization_loss<M: DensityModel + ?Sized>(
    model: &M,
    batch: &[State],
    variant: Variant,
) -> Result<ObjectiveValue> {
    let space = model.space();
    let mut tape = Tape::new(model.params());
    let mut meta = ObjectiveMeta::default();
    let mut terms = Vec::with_capacity(batch.len());
    for x in batch {
        space.check(x)?;
        meta.states += 1;
        for d in 0..space.ndim() {
            let lc = model.log_conditionals_var(&mut tape, x, d)?;
            let q = tape.exp(lc);
            meta.clamped += tape.value(q).iter().filter(|&&v| v < CONDITIONAL_FLOOR).count();
            let q = tape.clamp_min(q, CONDITIONAL_FLOOR);
            let inv = tape.recip(q);
            let term = match variant {
                Variant::Fixed => {
                    let own = tape.index(inv, x[d]);
                    let own_sq = tape.square(own);
                    let s = tape.sum(inv);
                    let s2 = tape.scale(s, 2.0);
                    tape.sub(own_sq, s2)
                }
                Variant::Original => {
                    // (1 - 2q) / q^2 = 1/q^2 - 2/q
                    let sq = tape.square(inv);
                    let lin = tape.scale(inv, 2.0);
                    let a = tape.sub(sq, lin);
                    tape.sum(a)
                }
            };
            terms.push(term);
        }
    }
    let out = mean_terms(&mut tape, &terms, batch.len())?;
    finish(&tape, out, meta)
}

/// Mean negative log-likelihood of the batch.
pub fn nll_loss<M: DensityModel + ?Sized>(model: &M, batch: &[State]) -> Result<ObjectiveValue> {
    let space = model.space();
    let mut tape = Tape::new(model.params());
    let mut meta = ObjectiveMeta::default();
    let mut terms = Vec::with_capacity(batch.len());
    for x in batch {
        space.check(x)?;
        meta.states += 1;
        terms.push(model.log_mass_var(&mut tape, x)?);
    }
    let mean = mean_terms(&mut tape, &terms, batch.len())?;
    let ll = match model.log_normalizer_var(&mut tape)? {
        Some(z) => tape.sub(mean, z),
        None => mean,
    };
    let out = tape.neg(ll);
    finish(&tape, out, meta)
}

/// Objectives selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    CsmExact,
    CsmMc,
    CsmStructured,
    Dcsm,
    RatioFixed,
    RatioOriginal,
    MarginalFixed,
    MarginalOriginal,
    Nll,
}

impl Objective {
    pub const ALL: [Objective; 9] = [
        Objective::CsmExact,
        Objective::CsmMc,
        Objective::CsmStructured,
        Objective::Dcsm,
        Objective::RatioFixed,
        Objective::RatioOriginal,
        Objective::MarginalFixed,
        Objective::MarginalOriginal,
        Objective::Nll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::CsmExact => "csm_exact",
            Objective::CsmMc => "csm_mc",
            Objective::CsmStructured => "csm_structured",
            Objective::Dcsm => "dcsm",
            Objective::RatioFixed => "ratio_fixed",
            Objective::RatioOriginal => "ratio_original",
            Objective::MarginalFixed => "marginal_fixed",
            Objective::MarginalOriginal => "marginal_original",
            Objective::Nll => "nll",
        }
    }

    /// Whether the objective needs a density rather than only a score.
    pub fn needs_density(self) -> bool {
        matches!(
            self,
            Objective::RatioFixed
                | Objective::RatioOriginal
                | Objective::MarginalFixed
                | Objective::MarginalOriginal
                | Objective::Nll
        )
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown objective `{s}`")))
    }
}

/// Numerically stable mean and standard error of a sample.
pub fn mean_and_standard_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| math::square(x - mean)).sum::<f64>() / (n - 1.0);
    (mean, math::sqrt(var / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_reverse_index, build_structure};
    use crate::models::ScoreNetModel;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A score model returning fixed vectors per state, for hand-evaluated
    /// examples. Parameters are the concatenated outputs.
    struct Fixed {
        space: DiscreteSpace,
        degree: usize,
        params: Vec<f64>,
    }

    impl Parameterized for Fixed {
        fn params(&self) -> &[f64] {
            &self.params
        }
        fn params_mut(&mut self) -> &mut [f64] {
            &mut self.params
        }
        fn space(&self) -> &DiscreteSpace {
            &self.space
        }
    }

    impl ScoreModel for Fixed {
        fn score_var(&self, tape: &mut Tape<'_>, structure: &NeighborhoodStructure, x: &[usize]) -> Result<Var> {
            let k = structure.degree(x)?;
            let i = self.space.index_of(x)?;
            Ok(tape.param(i * self.degree, k))
        }
    }

    fn fixed(dims: &[usize], degree: usize, params: Vec<f64>) -> Fixed {
        Fixed { space: DiscreteSpace::new(dims.to_vec()).unwrap(), degree, params }
    }

    #[test]
    fn csm_loss_hand_value() {
        let s = DiscreteSpace::new(vec![2]).unwrap();
        let g = build_structure(StructureKind::Complete, s.clone()).unwrap();
        let p = TabularDistribution::new(s, vec![0.25, 0.75]).unwrap();
        let m = fixed(&[2], 1, vec![0.0, 0.0]);
        let v = csm_loss_exact(&m, &p, &g).unwrap();
        assert!((v.value - 4.0 / 3.0).abs() < 1e-12);
        let exact = fixed(&[2], 1, vec![2.0, -2.0 / 3.0]);
        assert!(csm_loss_exact(&exact, &p, &g).unwrap().value.abs() < 1e-15);
        let j = jcsm_exact(&m, &p, &g).unwrap();
        assert_eq!((j.value, j.meta.j1, j.meta.j2), (0.0, Some(0.0), Some(0.0)));
        let jg = jcsm_exact(&exact, &p, &g).unwrap();
        assert!(jg.grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn j1_hand_values() {
        let s = DiscreteSpace::new(vec![3]).unwrap();
        let g = NeighborhoodStructure::grid(s, crate::graph::Boundary::Drop);
        // x = 1 has two neighbors; outputs [0.5, -0.2].
        let m = fixed(&[3], 2, vec![0.0, 0.0, 0.5, -0.2, 0.0, 0.0]);
        let mut seen = [false; 2];
        for seed in 0..32 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = estimate_j1(&m, &[vec![1]], &g, &mut rng).unwrap().value;
            if (v - 2.5).abs() < 1e-12 {
                seen[0] = true;
            } else {
                assert!((v + 0.72).abs() < 1e-12, "unexpected {v}");
                seen[1] = true;
            }
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn j2_hand_values() {
        // Complete graph on 4 states: every state has 3 reverse neighbors.
        let s = DiscreteSpace::new(vec![4]).unwrap();
        let g = build_structure(StructureKind::Complete, s).unwrap();
        let r = build_reverse_index(&g).unwrap();
        let m = fixed(&[4], 3, vec![0.4; 12]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = estimate_j2(&m, &[vec![2]], &g, &r, &mut rng).unwrap();
        assert!((v.value - 2.4).abs() < 1e-12);

        // Star: the hub collects one entry from each of 5 leaves.
        let s = DiscreteSpace::new(vec![6]).unwrap();
        let g = build_structure(StructureKind::Star, s).unwrap();
        let r = build_reverse_index(&g).unwrap();
        let outs = vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        let m = fixed(&[6], 1, outs.clone());
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = estimate_j2(&m, &[vec![0]], &g, &r, &mut rng).unwrap().value;
            assert!(outs[1..].iter().any(|c| (10.0 * c - v).abs() < 1e-12));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let leaf = estimate_j2(&m, &[vec![3]], &g, &r, &mut rng).unwrap();
        assert_eq!((leaf.value, leaf.meta.skipped), (0.0, 1));
    }

    #[test]
    fn structured_hand_values() {
        let s = DiscreteSpace::new(vec![4]).unwrap();
        let cycle = build_structure(StructureKind::Cycle, s.clone()).unwrap();
        let m = fixed(&[4], 1, vec![0.0, 0.3, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = estimate_j2_structured(&m, &[vec![2]], &cycle, &mut rng).unwrap();
        assert!((v.value - 0.6).abs() < 1e-12);
        let chain = build_structure(StructureKind::Chain, s.clone()).unwrap();
        let m = fixed(&[4], 1, vec![0.3, 0.3, 0.3, 0.0]);
        let v = estimate_j2_structured(&m, &[vec![0]], &chain, &mut rng).unwrap();
        assert_eq!((v.value, v.meta.skipped), (0.0, 1));
        let star = build_structure(StructureKind::Star, s).unwrap();
        assert!(estimate_j2_structured(&m, &[vec![1]], &star, &mut rng).is_err());
    }

    #[test]
    fn dcsm_kernel_target_example() {
        let s = DiscreteSpace::new(vec![91]).unwrap();
        let k = NoiseKernel::new(0.9, &s).unwrap();
        assert!((k.off(0) - 0.1 / 90.0).abs() < 1e-18);
        let t = k.target_score(&[10], &[10], &[vec![11]]);
        assert!((t[0] - ((0.1 / 90.0) - 0.9) / 0.9).abs() < 1e-15);
        assert!((t[0] + 0.998765).abs() < 1e-6);
        assert!(NoiseKernel::new(1.0, &s).is_err());
        assert!(NoiseKernel::new(0.0, &s).is_err());
        let row: f64 = (0..91).map(|v| k.entry(0, 3, v)).sum();
        assert!((row - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dcsm_zero_at_kernel_score() {
        // Model that outputs the kernel conditional's score for a single
        // clean state reaches zero loss on batches of that state.
        let s = DiscreteSpace::new(vec![3, 3]).unwrap();
        let g = NeighborhoodStructure::grid(s.clone(), crate::graph::Boundary::Wrap);
        let k = NoiseKernel::new(0.7, &s).unwrap();
        let clean = vec![1, 2];
        let mut params = Vec::new();
        for x in s.states().unwrap() {
            params.extend(k.target_score(&clean, &x, &g.neighbors(&x).unwrap()));
        }
        let m = fixed(&[3, 3], 4, params);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = dcsm_loss(&m, &vec![clean; 50], &k, &g, &mut rng).unwrap();
        assert!(v.value.abs() < 1e-24);
    }

    #[test]
    fn dcsm_exact_minimizer_is_perturbed_score() {
        let s = DiscreteSpace::new(vec![2, 3]).unwrap();
        let g = NeighborhoodStructure::grid(s.clone(), crate::graph::Boundary::Drop);
        let p = TabularDistribution::from_weights(s.clone(), vec![1.0, 3.0, 2.0, 0.5, 4.0, 1.5]).unwrap();
        let k = NoiseKernel::new(0.8, &s).unwrap();
        let pt = k.perturb_distribution(&p).unwrap();
        assert!((pt.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let logits: Vec<f64> = pt.masses().iter().map(|v| math::ln(*v)).collect();
        let m = LogitTableModel::from_logits(s, logits).unwrap();
        let v = dcsm_loss_exact(&m, &p, &k, &g).unwrap();
        assert!(v.grad.iter().all(|g| g.abs() < 1e-12), "{:?}", v.grad);
    }

    #[test]
    fn table_closed_form_matches_tape() {
        let s = DiscreteSpace::new(vec![3, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w: Vec<f64> = (0..12).map(|i| if i % 5 == 2 { 0.0 } else { rng.random::<f64>() }).collect();
        let p = TabularDistribution::from_weights(s.clone(), w).unwrap();
        let logits: Vec<f64> = (0..12).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let m = LogitTableModel::from_logits(s.clone(), logits).unwrap();
        for g in [
            NeighborhoodStructure::grid(s.clone(), crate::graph::Boundary::Drop),
            NeighborhoodStructure::grid(s.clone(), crate::graph::Boundary::Wrap),
            build_structure(StructureKind::Star, s.clone()).unwrap(),
        ] {
            let a = jcsm_exact(&m, &p, &g).unwrap();
            let b = jcsm_exact_table(&m, &p, &g).unwrap();
            assert!((a.value - b.value).abs() < 1e-12);
            assert_eq!(a.meta.states, b.meta.states);
            for (x, y) in a.grad.iter().zip(&b.grad) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ratio_and_marginal_hand_values() {
        let s = DiscreteSpace::binary(1).unwrap();
        let l = vec![math::ln(0.3), math::ln(0.7)];
        let m = LogitTableModel::from_logits(s.clone(), l).unwrap();
        let v = ratio_matching_loss(&m, &[vec![1]], Variant::Fixed).unwrap();
        assert!((v.value - 0.18).abs() < 1e-12);

        let uniform = LogitTableModel::uniform(s.clone()).unwrap();
        let v = marginalization_loss(&uniform, &[vec![0]], Variant::Fixed).unwrap();
        assert!((v.value + 4.0).abs() < 1e-12);
        let l = vec![math::ln(0.1), math::ln(0.9)];
        let m = LogitTableModel::from_logits(s.clone(), l).unwrap();
        let v = marginalization_loss(&m, &[vec![1]], Variant::Fixed).unwrap();
        let expect = 1.0 / 0.81 - 2.0 * (1.0 / 0.9 + 1.0 / 0.1);
        assert!((v.value - expect).abs() < 1e-10);
        assert!((v.value + 20.9877).abs() < 1e-4);

        // Sweeping mass onto the observed value lowers the fixed loss.
        let mut prev = f64::INFINITY;
        for q in [0.5, 0.6, 0.7, 0.8, 0.9, 0.95] {
            let l = vec![math::ln(1.0 - q), math::ln(q)];
            let m = LogitTableModel::from_logits(s.clone(), l).unwrap();
            let v = marginalization_loss(&m, &[vec![1]], Variant::Fixed).unwrap().value;
            assert!(v < prev);
            prev = v;
        }

        let tiny = LogitTableModel::from_logits(s, vec![-40.0, 0.0]).unwrap();
        let v = marginalization_loss(&tiny, &[vec![1]], Variant::Fixed).unwrap();
        assert_eq!(v.meta.clamped, 1);
    }

    #[test]
    fn original_ratio_objective_is_stationary_at_uniform() {
        let s = DiscreteSpace::new(vec![3, 2]).unwrap();
        let m = LogitTableModel::uniform(s).unwrap();
        let batch = vec![vec![0, 1], vec![2, 0], vec![2, 1]];
        let v = ratio_matching_loss(&m, &batch, Variant::Original).unwrap();
        assert!(v.grad.iter().all(|g| g.abs() < 1e-12));
        let v = marginalization_loss(&m, &batch, Variant::Original).unwrap();
        assert!(v.grad.iter().all(|g| g.abs() < 1e-12));
        let v = ratio_matching_loss(&m, &batch, Variant::Fixed).unwrap();
        assert!(v.grad.iter().any(|g| g.abs() > 1e-3));
    }

    #[test]
    fn nll_values() {
        let s = DiscreteSpace::new(vec![16]).unwrap();
        let m = LogitTableModel::uniform(s.clone()).unwrap();
        let v = nll_loss(&m, &[vec![1], vec![9]]).unwrap();
        assert!((v.value - 2.772588722239781).abs() < 1e-12);
        let batch = vec![vec![0], vec![0], vec![3], vec![5]];
        let emp = TabularDistribution::empirical(s.clone(), &batch).unwrap();
        let logits: Vec<f64> = emp.masses().iter().map(|&v| if v > 0.0 { math::ln(v) } else { -50.0 }).collect();
        let m = LogitTableModel::from_logits(s, logits).unwrap();
        let v = nll_loss(&m, &batch).unwrap();
        assert!((v.value - emp.entropy()).abs() < 1e-12);
        assert!(matches!(nll_loss(&m, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn objective_names_round_trip() {
        for o in Objective::ALL {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
        assert!("csm".parse::<Objective>().is_err());
    }

    #[test]
    fn combined_estimate_gradients_are_consistent() {
        let s = DiscreteSpace::new(vec![12]).unwrap();
        let g = build_structure(StructureKind::Cycle, s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = ScoreNetModel::new(&g, &[8], crate::models::Encoding::Affine, &mut rng).unwrap();
        let batch: Vec<State> = (0..12).map(|i| vec![i]).collect();
        let loss = |p: &[f64]| {
            let mut m = net.clone();
            m.params_mut().copy_from_slice(p);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let v = jcsm_estimate(&m, &batch, &g, None, &mut rng)?;
            Ok((v.value, v.grad))
        };
        let r = crate::models::gradient_check(net.params(), loss, 200, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
