//! Fully enumerated distributions and the exact operations on them: Concrete
//! scores, reconstruction of a distribution from its scores, the
//! continuous-limit scaled score, and divergences.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{fmt_state, Error, Result};
use crate::graph::NeighborhoodStructure;
use crate::math;
use crate::space::{DiscreteSpace, State};

/// Tolerance on the total mass of a [`TabularDistribution`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Score entries this close to `-1` are clamped instead of rejected.
pub const RATIO_CLAMP: f64 = 1e-9;

/// A probability mass function over every state of an enumerable space.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDistribution {
    space: DiscreteSpace,
    mass: Vec<f64>,
    strictly_positive: bool,
}

impl TabularDistribution {
    /// Takes masses in flat-index order; they must be non-negative and sum
    /// to one within [`MASS_TOLERANCE`].
    pub fn new(space: DiscreteSpace, mass: Vec<f64>) -> Result<Self> {
        let n = space.enumerable_len()?;
        if mass.len() != n {
            return Err(Error::InvalidDistribution(format!("expected {n} masses, got {}", mass.len())));
        }
        if let Some(i) = mass.iter().position(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidDistribution(format!("mass {} at index {i}", mass[i])));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("masses sum to {total}")));
        }
        let strictly_positive = mass.iter().all(|&m| m > 0.0);
        Ok(TabularDistribution { space, mass, strictly_positive })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(space: DiscreteSpace, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        Self::new(space, weights.into_iter().map(|w| w / total).collect())
    }

    /// Softmax of unnormalized log-masses.
    pub fn from_log_weights(space: DiscreteSpace, logw: &[f64]) -> Result<Self> {
        let z = math::log_sum_exp(logw);
        let mass: Vec<f64> = logw.iter().map(|&l| math::exp(l - z)).collect();
        let total: f64 = mass.iter().sum();
        Self::new(space, mass.into_iter().map(|m| m / total).collect())
    }

    pub fn uniform(space: DiscreteSpace) -> Result<Self> {
        let n = space.enumerable_len()?;
        Self::from_weights(space, alloc::vec![1.0; n])
    }

    /// Normalized histogram of samples.
    pub fn empirical(space: DiscreteSpace, samples: &[State]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = space.enumerable_len()?;
        let mut counts = alloc::vec![0.0; n];
        for x in samples {
            counts[space.index_of(x)?] += 1.0;
        }
        Self::from_weights(space, counts)
    }

    pub fn space(&self) -> &DiscreteSpace {
        &self.space
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.strictly_positive
    }

    pub fn mass(&self, x: &[usize]) -> Result<f64> {
        Ok(self.mass[self.space.index_of(x)?])
    }

    /// A reusable sampler; building it is O(states).
    pub fn sampler(&self) -> TabularSampler<'_> {
        TabularSampler {
            dist: self,
            index: WeightedIndex::new(&self.mass).expect("valid distribution has positive total"),
        }
    }

    pub fn entropy(&self) -> f64 {
        -self.mass.iter().filter(|&&m| m > 0.0).map(|&m| m * math::ln(m)).sum::<f64>()
    }
}

pub struct TabularSampler<'a> {
    dist: &'a TabularDistribution,
    index: WeightedIndex<f64>,
}

impl TabularSampler<'_> {
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        self.dist.space.state_at(self.index.sample(rng))
    }
}

/// `c_p(x)_i = p(x_{n_i}) / p(x) - 1` over the ordered neighbors of `x`.
pub fn concrete_score_exact(
    p: &TabularDistribution,
    structure: &NeighborhoodStructure,
    x: &[usize],
) -> Result<Vec<f64>> {
    if p.space() != structure.space() {
        return Err(Error::SpaceMismatch("distribution and structure differ".into()));
    }
    let px = p.mass(x)?;
    if px <= 0.0 {
        return Err(Error::ZeroMass(fmt_state(x)));
    }
    structure.neighbors(x)?.iter().map(|y| Ok(p.mass(y)? / px - 1.0)).collect()
}

/// Output of [`reconstruct_density`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub distribution: TabularDistribution,
    /// Score entries clamped to `-1 + 1e-9`.
    pub clamped: usize,
    /// Largest `|log p(y) - log p(x) - log(c + 1)|` over edges left out of
    /// the spanning tree. Zero when the scores come from a distribution.
    pub max_cycle_residual: f64,
}

/// Recovers the distribution whose Concrete scores are `score_fn`, using a
/// BFS spanning tree rooted at the lowest-index support state.
///
/// `support` defaults to the whole space. States outside it get zero mass.
pub fn reconstruct_density<F>(
    score_fn: F,
    structure: &NeighborhoodStructure,
    support: Option<&[State]>,
) -> Result<Reconstruction>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    reconstruct_density_from(score_fn, structure, support, None)
}

/// [`reconstruct_density`] with an explicit BFS root.
pub fn reconstruct_density_from<F>(
    mut score_fn: F,
    structure: &NeighborhoodStructure,
    support: Option<&[State]>,
    root: Option<&[usize]>,
) -> Result<Reconstruction>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    let sp = structure.space();
    let n = sp.enumerable_len()?;
    let mut members: Vec<usize> = match support {
        None => (0..n).collect(),
        Some(s) => s.iter().map(|x| sp.index_of(x)).collect::<Result<_>>()?,
    };
    members.sort_unstable();
    members.dedup();
    if members.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut pos = alloc::vec![usize::MAX; n];
    for (k, &i) in members.iter().enumerate() {
        pos[i] = k;
    }

    // Undirected adjacency carrying log(p(b) / p(a)) on the edge a -> b.
    let mut adj: Vec<Vec<(usize, f64)>> = alloc::vec![Vec::new(); members.len()];
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let mut clamped = 0;
    for (a, &i) in members.iter().enumerate() {
        let x = sp.state_at(i);
        let nbrs = structure.neighbors(&x)?;
        let score = score_fn(&x)?;
        if score.len() != nbrs.len() {
            return Err(Error::Shape(format!(
                "score at {} has {} entries for {} neighbors",
                fmt_state(&x),
                score.len(),
                nbrs.len()
            )));
        }
        for (y, &c) in nbrs.iter().zip(&score) {
            let b = pos[sp.index_unchecked(y)];
            if b == usize::MAX {
                continue;
            }
            let c = if c <= -1.0 + RATIO_CLAMP {
                if c < -1.0 - RATIO_CLAMP || c.is_nan() {
                    return Err(Error::NonPositiveRatio { state: fmt_state(&x), value: 1.0 + c });
                }
                clamped += 1;
                -1.0 + RATIO_CLAMP
            } else {
                c
            };
            let w = math::log1p(c);
            adj[a].push((b, w));
            adj[b].push((a, -w));
            edges.push((a, b, w));
        }
    }

    let start = match root {
        None => 0,
        Some(r) => {
            let k = pos[sp.index_of(r)?];
            if k == usize::MAX {
                return Err(Error::InvalidArgument("root outside the support".into()));
            }
            k
        }
    };
    let mut logp = alloc::vec![f64::NAN; members.len()];
    logp[start] = 0.0;
    let mut queue = VecDeque::from([start]);
    let mut seen = 1;
    while let Some(a) = queue.pop_front() {
        for &(b, w) in &adj[a] {
            if logp[b].is_nan() {
                logp[b] = logp[a] + w;
                seen += 1;
                queue.push_back(b);
            }
        }
    }
    if seen != members.len() {
        return Err(Error::Disconnected);
    }
    let max_cycle_residual = edges.iter().map(|&(a, b, w)| (logp[b] - logp[a] - w).abs()).fold(0.0, f64::max);

    let z = math::log_sum_exp(&logp);
    let mut mass = alloc::vec![0.0; n];
    for (k, &i) in members.iter().enumerate() {
        mass[i] = math::exp(logp[k] - z);
    }
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);
    Ok(Reconstruction { distribution: TabularDistribution::new(sp.clone(), mass)?, clamped, max_cycle_residual })
}

/// Forward-difference Concrete score of a continuous density divided by the
/// step: `[(p(x + δe_d) - p(x)) / (δ p(x))]_d`.
pub fn scaled_score_limit<F>(density_fn: F, x: &[f64], delta: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let px = density_fn(x);
    if !(px > 0.0) {
        return Err(Error::InvalidArgument(format!("density {px} at the base point")));
    }
    let mut y = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for d in 0..x.len() {
        y[d] = x[d] + delta;
        let py = density_fn(&y);
        if !(py > 0.0) {
            return Err(Error::InvalidArgument(format!("density {py} at the shifted point {d}")));
        }
        out.push((py - px) / (delta * px));
        y[d] = x[d];
    }
    Ok(out)
}

/// Half the L1 distance between two mass vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `(KL(p || q), TV(p, q))`. KL is infinite when `q` misses mass of `p`.
pub fn kl_and_tv(p: &TabularDistribution, q: &TabularDistribution) -> Result<(f64, f64)> {
    if p.space() != q.space() {
        return Err(Error::SpaceMismatch(format!("{:?} vs {:?}", p.space().dims(), q.space().dims())));
    }
    let mut kl = 0.0;
    for (&a, &b) in p.masses().iter().zip(q.masses()) {
        if a > 0.0 {
            if b <= 0.0 {
                kl = f64::INFINITY;
                break;
            }
            kl += a * math::ln(a / b);
        }
    }
    Ok((kl, total_variation(p.masses(), q.masses())))
}
