//! Synthetic datasets with their exact quantized densities.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::exact::TabularDistribution;
use crate::math;
use crate::objectives::NoiseKernel;
use crate::rng::seeded_rng;
use crate::space::{DiscreteSpace, State};

/// Half-width of the square domain the 2-D toys are drawn on.
pub const TOY_EXTENT: f64 = 4.0;
/// Cross-section width of the spiral and ring toys.
pub const TOY_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub space: DiscreteSpace,
    pub samples: Vec<State>,
    pub name: String,
    pub seed: u64,
    /// Exact distribution the samples were drawn from, when known.
    pub ground_truth: Option<TabularDistribution>,
}

impl Dataset {
    pub fn new(space: DiscreteSpace, samples: Vec<State>, name: impl Into<String>, seed: u64) -> Result<Self> {
        for x in &samples {
            space.check(x)?;
        }
        Ok(Dataset { space, samples, name: name.into(), seed, ground_truth: None })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Empirical distribution of the samples.
    pub fn empirical(&self) -> Result<TabularDistribution> {
        TabularDistribution::empirical(self.space.clone(), &self.samples)
    }

    /// Histogram counts in flat-index order.
    pub fn counts(&self) -> Result<Vec<u64>> {
        let mut c = alloc::vec![0u64; self.space.enumerable_len()?];
        for x in &self.samples {
            c[self.space.index_unchecked(x)] += 1;
        }
        Ok(c)
    }
}

/// The 16-category two-mode mass function behind [`gen_1d_toy`].
pub fn toy_1d_distribution() -> TabularDistribution {
    let w: Vec<f64> = (0..16)
        .map(|k| {
            let k = k as f64;
            math::exp(-math::square(k - 3.5) / (2.0 * 1.8 * 1.8))
                + 0.6 * math::exp(-math::square(k - 11.0) / (2.0 * 1.2 * 1.2))
                + 0.04
        })
        .collect();
    TabularDistribution::from_weights(DiscreteSpace::new(alloc::vec![16]).expect("valid"), w).expect("positive")
}

pub fn gen_1d_toy(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let p = toy_1d_distribution();
    let mut rng = seeded_rng(seed);
    let sampler = p.sampler();
    let samples = (0..n).map(|_| sampler.sample(&mut rng)).collect();
    Ok(Dataset { space: p.space().clone(), samples, name: "toy1d".into(), seed, ground_truth: Some(p) })
}

/// Mixture of product-Bernoulli components over `d` bits; component means
/// are drawn from the seed.
pub fn binary_mixture_distribution(d: usize, components: usize, seed: u64) -> Result<TabularDistribution> {
    let space = DiscreteSpace::binary(d)?;
    if components == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    let mut rng = seeded_rng(seed);
    let means: Vec<Vec<f64>> = (0..components).map(|_| (0..d).map(|_| rng.random_range(0.1..0.9)).collect()).collect();
    let mass: Vec<f64> = space
        .states()?
        .map(|x| {
            means
                .iter()
                .map(|m| x.iter().zip(m).map(|(&b, &p)| if b == 1 { p } else { 1.0 - p }).product::<f64>())
                .sum::<f64>()
                / components as f64
        })
        .collect();
    TabularDistribution::from_weights(space, mass)
}

pub fn gen_binary_mixture(d: usize, components: usize, n: usize, seed: u64) -> Result<Dataset> {
    let p = binary_mixture_distribution(d, components, seed)?;
    // Offset the sampling stream from the one that drew the means.
    let mut rng = crate::rng::stream_rng(seed, 1);
    let sampler = p.sampler();
    let samples = (0..n).map(|_| sampler.sample(&mut rng)).collect();
    Ok(Dataset { space: p.space().clone(), samples, name: "binary_mixture".into(), seed, ground_truth: Some(p) })
}

/// The continuous 2-D toy densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Toy2d {
    /// Uniform on the "on" squares of a [`CHECKER_SQUARES`]-wide board
    /// covering the domain. With 91 bins each square spans exactly 13 bins.
    Checkerboard,
    /// Two interleaved Archimedean arms blurred by an isotropic Gaussian.
    Spirals,
    /// Circles of radius 1 and 2 blurred by an isotropic Gaussian.
    Rings,
}

impl Toy2d {
    pub fn name(self) -> &'static str {
        match self {
            Toy2d::Checkerboard => "checkerboard",
            Toy2d::Spirals => "spirals",
            Toy2d::Rings => "rings",
        }
    }
}

impl core::str::FromStr for Toy2d {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checkerboard" => Ok(Toy2d::Checkerboard),
            "spirals" => Ok(Toy2d::Spirals),
            "rings" => Ok(Toy2d::Rings),
            _ => Err(Error::InvalidArgument(alloc::format!("unknown 2-D toy `{s}`"))),
        }
    }
}

/// Squares per side of the checkerboard.
pub const CHECKER_SQUARES: usize = 7;
const SPIRAL_TURNS: f64 = 1.5;
const SPIRAL_RADIUS: f64 = 3.5;
const QUADRATURE_NODES: usize = 4000;

fn square_side() -> f64 {
    2.0 * TOY_EXTENT / CHECKER_SQUARES as f64
}

fn is_on_square(x: f64, y: f64) -> bool {
    let i = math::floor((x + TOY_EXTENT) / square_side()) as i64;
    let j = math::floor((y + TOY_EXTENT) / square_side()) as i64;
    (i + j) % 2 == 0
}

/// Curve points `(x, y, weight)` whose Gaussian blur gives the spiral or
/// ring density; weights sum to 1.
fn curve_nodes(toy: Toy2d) -> Vec<(f64, f64, f64)> {
    let n = QUADRATURE_NODES;
    let mut out = Vec::with_capacity(2 * n);
    match toy {
        Toy2d::Spirals => {
            let theta_max = 2.0 * core::f64::consts::PI * SPIRAL_TURNS;
            for arm in 0..2 {
                for k in 0..n {
                    let u = (k as f64 + 0.5) / n as f64;
                    let (x, y) = spiral_point(arm, u, theta_max);
                    out.push((x, y, 0.5 / n as f64));
                }
            }
        }
        Toy2d::Rings => {
            for (radius, share) in [(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0)] {
                for k in 0..n {
                    let a = 2.0 * core::f64::consts::PI * (k as f64 + 0.5) / n as f64;
                    out.push((radius * libm::cos(a), radius * libm::sin(a), share / n as f64));
                }
            }
        }
        Toy2d::Checkerboard => unreachable!("checkerboard is integrated exactly"),
    }
    out
}

/// Point on arm `arm` at curve parameter `u` in `[0, 1]`; `theta = theta_max
/// sqrt(u)` spreads points roughly evenly along the arc.
fn spiral_point(arm: usize, u: f64, theta_max: f64) -> (f64, f64) {
    let theta = theta_max * math::sqrt(u);
    let r = SPIRAL_RADIUS * theta / theta_max;
    let phase = theta + arm as f64 * core::f64::consts::PI;
    (r * libm::cos(phase), r * libm::sin(phase))
}

fn bin_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| -TOY_EXTENT + 2.0 * TOY_EXTENT * i as f64 / bins as f64).collect()
}

fn bin_of(v: f64, bins: usize) -> Option<usize> {
    if !(-TOY_EXTENT..TOY_EXTENT).contains(&v) {
        return None;
    }
    let b = math::floor((v + TOY_EXTENT) / (2.0 * TOY_EXTENT) * bins as f64) as usize;
    Some(b.min(bins - 1))
}

/// Exact quantized density of a 2-D toy on a `bins x bins` grid; the state
/// is `(x bin, y bin)`. Mass outside the domain is dropped and the rest
/// renormalized.
pub fn toy_2d_distribution(toy: Toy2d, bins: usize) -> Result<TabularDistribution> {
    if bins < 2 {
        return Err(Error::InvalidArgument("need at least 2 bins".into()));
    }
    let space = DiscreteSpace::new(alloc::vec![bins, bins])?;
    let edges = bin_edges(bins);
    let mut mass = alloc::vec![0.0; bins * bins];
    match toy {
        Toy2d::Checkerboard => {
            // Overlaps below rounding level come from edges that coincide.
            let overlap = |a0: f64, a1: f64, b0: f64, b1: f64| {
                let o = a1.min(b1) - a0.max(b0);
                if o > 1e-12 {
                    o
                } else {
                    0.0
                }
            };
            let side = square_side();
            for si in 0..CHECKER_SQUARES {
                for sj in 0..CHECKER_SQUARES {
                    if (si + sj) % 2 != 0 {
                        continue;
                    }
                    let (x0, y0) = (-TOY_EXTENT + side * si as f64, -TOY_EXTENT + side * sj as f64);
                    for i in 0..bins {
                        let ox = overlap(edges[i], edges[i + 1], x0, x0 + side);
                        if ox == 0.0 {
                            continue;
                        }
                        for j in 0..bins {
                            mass[i * bins + j] += ox * overlap(edges[j], edges[j + 1], y0, y0 + side);
                        }
                    }
                }
            }
        }
        Toy2d::Spirals | Toy2d::Rings => {
            let reach = 8.0 * TOY_SIGMA;
            let mut px = Vec::new();
            let mut py = Vec::new();
            for (cx, cy, w) in curve_nodes(toy) {
                let range = |c: f64| {
                    let lo = bin_of((c - reach).max(-TOY_EXTENT), bins).unwrap_or(0);
                    let hi = bin_of((c + reach).min(TOY_EXTENT - 1e-12), bins).unwrap_or(bins - 1);
                    lo..=hi
                };
                let probs = |c: f64, out: &mut Vec<(usize, f64)>| {
                    out.clear();
                    for b in range(c) {
                        let p = math::normal_cdf((edges[b + 1] - c) / TOY_SIGMA)
                            - math::normal_cdf((edges[b] - c) / TOY_SIGMA);
                        out.push((b, p));
                    }
                };
                probs(cx, &mut px);
                probs(cy, &mut py);
                for &(i, a) in &px {
                    for &(j, b) in &py {
                        mass[i * bins + j] += w * a * b;
                    }
                }
            }
        }
    }
    TabularDistribution::from_weights(space, mass)
}

fn sample_2d<R: Rng + ?Sized>(toy: Toy2d, rng: &mut R) -> (f64, f64) {
    match toy {
        Toy2d::Checkerboard => loop {
            let x = rng.random_range(-TOY_EXTENT..TOY_EXTENT);
            let y = rng.random_range(-TOY_EXTENT..TOY_EXTENT);
            if is_on_square(x, y) {
                return (x, y);
            }
        },
        Toy2d::Spirals | Toy2d::Rings => {
            let noise = Normal::new(0.0, TOY_SIGMA).expect("positive sigma");
            let (cx, cy) = if toy == Toy2d::Spirals {
                let arm = rng.random_range(0..2);
                spiral_point(arm, rng.random(), 2.0 * core::f64::consts::PI * SPIRAL_TURNS)
            } else {
                let radius = if rng.random::<f64>() < 1.0 / 3.0 { 1.0 } else { 2.0 };
                let a = rng.random_range(0.0..2.0 * core::f64::consts::PI);
                (radius * libm::cos(a), radius * libm::sin(a))
            };
            (cx + noise.sample(rng), cy + noise.sample(rng))
        }
    }
}

/// `n` points from a 2-D toy, quantized to `bins x bins`. Points falling
/// outside the domain are redrawn.
pub fn gen_2d_toy(name: &str, n: usize, bins: usize, seed: u64) -> Result<Dataset> {
    let toy: Toy2d = name.parse()?;
    let truth = toy_2d_distribution(toy, bins)?;
    let mut rng = seeded_rng(seed);
    let mut samples = Vec::with_capacity(n);
    while samples.len() < n {
        let (x, y) = sample_2d(toy, &mut rng);
        if let (Some(i), Some(j)) = (bin_of(x, bins), bin_of(y, bins)) {
            samples.push(alloc::vec![i, j]);
        }
    }
    Ok(Dataset { space: truth.space().clone(), samples, name: toy.name().to_string(), seed, ground_truth: Some(truth) })
}

/// Whether bin `(i, j)` has its center on an "on" square of the checkerboard.
pub fn checkerboard_cell_is_on(i: usize, j: usize, bins: usize) -> bool {
    let edges = bin_edges(bins);
    let cx = 0.5 * (edges[i] + edges[i + 1]);
    let cy = 0.5 * (edges[j] + edges[j + 1]);
    is_on_square(cx, cy)
}

pub fn make_noise_kernel(w: f64, space: &DiscreteSpace) -> Result<NoiseKernel> {
    NoiseKernel::new(w, space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::total_variation;

    #[test]
    fn toy_1d_properties() {
        let d = gen_1d_toy(100_000, 5).unwrap();
        assert!(d.samples.iter().all(|x| x[0] < 16));
        let truth = d.ground_truth.as_ref().unwrap();
        assert!((truth.masses().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let emp = d.empirical().unwrap();
        assert!(total_variation(emp.masses(), truth.masses()) < 0.02);
        assert_eq!(gen_1d_toy(100, 5).unwrap().samples, d.samples[..100].to_vec());
        assert!(gen_1d_toy(0, 5).is_err());
    }

    #[test]
    fn checkerboard_exact_masses() {
        let truth = toy_2d_distribution(Toy2d::Checkerboard, 91).unwrap();
        assert!((truth.masses().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        // 25 on-squares of 13 x 13 cells share the mass equally.
        let m = truth.masses();
        assert!((m[5 * 91 + 5] - 1.0 / (25.0 * 169.0)).abs() < 1e-15);
        assert_eq!(m[5 * 91 + 20], 0.0);
        assert_eq!(m.iter().filter(|&&v| v > 0.0).count(), 25 * 169);
    }

    #[test]
    fn checkerboard_off_cells_are_nearly_empty() {
        let d = gen_2d_toy("checkerboard", 100_000, 91, 1).unwrap();
        let off = d.samples.iter().filter(|x| !checkerboard_cell_is_on(x[0], x[1], 91)).count();
        assert!((off as f64) < 0.01 * 100_000.0, "{off}");
        let truth = d.ground_truth.as_ref().unwrap();
        let exact: f64 = d
            .space
            .states()
            .unwrap()
            .zip(truth.masses())
            .filter(|(x, _)| !checkerboard_cell_is_on(x[0], x[1], 91))
            .map(|(_, m)| m)
            .sum();
        assert!(exact < 0.01, "{exact}");
        assert!(d.samples.iter().all(|x| x[0] < 91 && x[1] < 91));
    }

    #[test]
    fn smooth_toys_integrate_to_one() {
        for toy in [Toy2d::Spirals, Toy2d::Rings] {
            let truth = toy_2d_distribution(toy, 91).unwrap();
            assert!((truth.masses().iter().sum::<f64>() - 1.0).abs() < 1e-10);
            let d = gen_2d_toy(toy.name(), 200_000, 91, 2).unwrap();
            let emp = d.empirical().unwrap();
            let tv = total_variation(emp.masses(), truth.masses());
            assert!(tv < 0.06, "{} {tv}", toy.name());
        }
        assert!(gen_2d_toy("moons", 10, 91, 0).is_err());
    }

    #[test]
    fn binary_mixture_is_normalized() {
        let d = gen_binary_mixture(8, 3, 1000, 4).unwrap();
        let truth = d.ground_truth.as_ref().unwrap();
        assert_eq!(truth.masses().len(), 256);
        assert!((truth.masses().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert_eq!(d.len(), 1000);
    }

    #[test]
    fn kernel_construction() {
        let s = DiscreteSpace::new(alloc::vec![91, 91]).unwrap();
        let k = make_noise_kernel(0.9, &s).unwrap();
        assert!((k.off(0) - 0.1 / 90.0).abs() < 1e-18);
        assert!(make_noise_kernel(1.5, &s).is_err());
        let gap = 1e-4 * 89.0 / 90.0;
        let near = make_noise_kernel(1.0 - gap, &s).unwrap();
        assert!((near.off(1) - gap / 90.0).abs() < 1e-15);
        let nearer = make_noise_kernel(1.0 - gap / 10.0, &s).unwrap();
        assert!(nearer.off(1) < 1e-6);
    }
}
