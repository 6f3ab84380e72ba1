//! Triangular-noise relaxation of integer data: perturb, recover the
//! continuous score from mass ratios, run Langevin, and snap back to the
//! integers by sampling the exact posterior over cell corners.
//!
//! Masses enter through a closure `ratio(base, y)` returning a value
//! proportional to `p(y)`, where the constant may depend only on `base`; the
//! natural choice is `p(y) / p(base)`. It is backed either by a table
//! ([`table_ratio`]) or by a score model through products along unit steps
//! ([`score_path_ratio`]).

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::exact::TabularDistribution;
use crate::graph::NeighborhoodStructure;
use crate::math;
use crate::models::ScoreModel;
use crate::samplers::{langevin_within, neighbor_ratio, LangevinConfig};
use crate::space::{DiscreteSpace, State};

/// Largest dimension for which the 2^D corner posterior is enumerated.
pub const MAX_CORNER_DIMS: usize = 12;

/// `prod_d max(0, 1 - |u_d|)`.
pub fn triangular_pdf(u: &[f64]) -> f64 {
    u.iter().map(|&v| (1.0 - math::abs(v)).max(0.0)).product()
}

/// One draw of the unit triangular density by inverting its CDF.
pub fn triangular_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if u < 0.5 {
        math::sqrt(2.0 * u) - 1.0
    } else {
        1.0 - math::sqrt(2.0 * (1.0 - u))
    }
}

/// `x + t` with independent triangular `t` per coordinate.
pub fn perturb<R: Rng + ?Sized>(x: &[usize], rng: &mut R) -> Vec<f64> {
    x.iter().map(|&v| v as f64 + triangular_sample(rng)).collect()
}

/// Masses straight from a table, which are proportional to `p(y) / p(base)`
/// for every base.
pub fn table_ratio(p: &TabularDistribution) -> impl FnMut(&[usize], &[usize]) -> Result<f64> + '_ {
    move |_, y| p.mass(y)
}

/// `ratio(base, y)` as a product of model ratios along unit coordinate
/// steps from `base` to `y`. Each step must join states adjacent in
/// `structure` (in either direction).
pub fn score_path_ratio<'a, M: ScoreModel + ?Sized>(
    model: &'a M,
    structure: &'a NeighborhoodStructure,
) -> impl FnMut(&[usize], &[usize]) -> Result<f64> + 'a {
    move |base, y| {
        let mut cur = base.to_vec();
        let mut r = 1.0;
        for d in 0..cur.len() {
            while cur[d] != y[d] {
                let mut next = cur.clone();
                next[d] = if y[d] > cur[d] { cur[d] + 1 } else { cur[d] - 1 };
                r *= neighbor_ratio(model, structure, &cur, &next)?.0;
                cur = next;
            }
        }
        Ok(r)
    }
}

/// A corner of the unit cell around a relaxed point.
#[derive(Debug, Clone, PartialEq)]
pub struct Corner {
    pub state: State,
    /// Mass relative to the cell's base corner, up to a common factor.
    pub ratio: f64,
    /// Tent weight per coordinate.
    pub tents: Vec<f64>,
    /// Whether each coordinate sits on the upper side of the cell.
    pub upper: Vec<bool>,
}

impl Corner {
    fn tent_product(&self) -> f64 {
        self.tents.iter().product()
    }
}

/// Enumerates the in-space corners of the cell containing `x`, with their
/// ratios relative to the lowest in-space corner.
pub fn cell_corners<F>(space: &DiscreteSpace, x: &[f64], mut ratio: F) -> Result<Vec<Corner>>
where
    F: FnMut(&[usize], &[usize]) -> Result<f64>,
{
    let d = space.ndim();
    if x.len() != d {
        return Err(Error::Shape(alloc::format!("point has {} coordinates, space {d}", x.len())));
    }
    if d > MAX_CORNER_DIMS {
        return Err(Error::Unsupported(alloc::format!(
            "corner posterior limited to {MAX_CORNER_DIMS} dimensions, got {d}"
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "point", index: i });
    }
    // Lower corner per coordinate; may sit at -1 or n - 1.
    let mut lower = Vec::with_capacity(d);
    for (k, (&v, &n)) in x.iter().zip(space.dims()).enumerate() {
        if !(v > -1.0 && v < n as f64) {
            return Err(Error::InvalidState {
                state: alloc::format!("{x:?}"),
                reason: alloc::format!("coordinate {k} outside (-1, {n})"),
            });
        }
        lower.push(math::floor(v) as i64);
    }
    let base: State = lower.iter().zip(space.dims()).map(|(&l, _)| if l < 0 { 0 } else { l as usize }).collect();
    let mut corners = Vec::new();
    for mask in 0..(1usize << d) {
        let mut state = Vec::with_capacity(d);
        let mut tents = Vec::with_capacity(d);
        let mut upper = Vec::with_capacity(d);
        let mut inside = true;
        for k in 0..d {
            let up = mask >> k & 1 == 1;
            let c = lower[k] + up as i64;
            let frac = x[k] - lower[k] as f64;
            tents.push(if up { frac } else { 1.0 - frac });
            upper.push(up);
            if c < 0 || c >= space.dims()[k] as i64 {
                inside = false;
            }
            state.push(c.max(0) as usize);
        }
        if !inside {
            continue;
        }
        let r = ratio(&base, &state)?;
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::NonPositiveRatio { state: crate::error::fmt_state(&state), value: r });
        }
        corners.push(Corner { state, ratio: r, tents, upper });
    }
    Ok(corners)
}

/// Posterior over the corners of the cell containing `x`: weights
/// proportional to mass ratio times tent weights, normalized.
pub fn posterior_weights<F>(space: &DiscreteSpace, x: &[f64], ratio: F) -> Result<Vec<(State, f64)>>
where
    F: FnMut(&[usize], &[usize]) -> Result<f64>,
{
    let corners = cell_corners(space, x, ratio)?;
    let w: Vec<f64> = corners.iter().map(|c| c.ratio * c.tent_product()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass(alloc::format!("every corner around {x:?}")));
    }
    Ok(corners.into_iter().zip(w).map(|(c, w)| (c.state, w / total)).collect())
}

/// Gradient of the log relaxed density at `x`, computed exactly from the
/// cell corners. In one dimension it is `(r - 1) / (r f + 1 - f)` with `f`
/// the fractional part and `r = p(lower + 1) / p(lower)`.
pub fn recover_stein_score<F>(space: &DiscreteSpace, x: &[f64], ratio: F) -> Result<Vec<f64>>
where
    F: FnMut(&[usize], &[usize]) -> Result<f64>,
{
    let corners = cell_corners(space, x, ratio)?;
    let d = space.ndim();
    let mut denom = 0.0;
    let mut num = alloc::vec![0.0; d];
    for c in &corners {
        denom += c.ratio * c.tent_product();
        for k in 0..d {
            let others: f64 = c.tents.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, t)| t).product();
            let slope = if c.upper[k] { 1.0 } else { -1.0 };
            num[k] += c.ratio * others * slope;
        }
    }
    if !(denom > 0.0) {
        return Err(Error::ZeroMass(alloc::format!("relaxed density vanishes at {x:?}")));
    }
    Ok(num.into_iter().map(|v| v / denom).collect())
}

/// A corner drawn from [`posterior_weights`].
pub fn denoise_sample<F, R>(space: &DiscreteSpace, x: &[f64], ratio: F, rng: &mut R) -> Result<State>
where
    F: FnMut(&[usize], &[usize]) -> Result<f64>,
    R: Rng + ?Sized,
{
    let post = posterior_weights(space, x, ratio)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (state, w) in &post {
        acc += w;
        if u < acc {
            return Ok(state.clone());
        }
    }
    // Rounding left u above the running sum; take the last weighted corner.
    Ok(post.iter().rev().find(|(_, w)| *w > 0.0).expect("positive total").0.clone())
}

/// Whether `x` lies where the relaxed density can be positive.
pub fn in_relaxed_support(space: &DiscreteSpace, x: &[f64]) -> bool {
    x.iter().zip(space.dims()).all(|(&v, &n)| v > -1.0 && v < n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseRun {
    /// Final Langevin iterate per chain.
    pub relaxed: Vec<Vec<f64>>,
    pub denoised: Vec<State>,
    pub rejected: u64,
}

/// Runs Langevin on the recovered score from each start point and denoises
/// the final iterate. Moves leaving the relaxed support are rejected.
pub fn langevin_denoise<F, R>(
    space: &DiscreteSpace,
    starts: &[Vec<f64>],
    mut ratio: F,
    config: &LangevinConfig,
    rng: &mut R,
) -> Result<DenoiseRun>
where
    F: FnMut(&[usize], &[usize]) -> Result<f64>,
    R: Rng + ?Sized,
{
    let mut out = DenoiseRun { relaxed: Vec::new(), denoised: Vec::new(), rejected: 0 };
    let cfg = LangevinConfig { keep: 1, ..config.clone() };
    for start in starts {
        if !in_relaxed_support(space, start) {
            return Err(Error::InvalidState {
                state: alloc::format!("{start:?}"),
                reason: "start outside the relaxed support".into(),
            });
        }
        let x = if cfg.steps == 0 {
            start.clone()
        } else {
            let run = langevin_within(
                |x| recover_stein_score(space, x, &mut ratio),
                |x| in_relaxed_support(space, x),
                start.clone(),
                &cfg,
                rng,
            )?;
            out.rejected += run.rejected;
            run.tail.into_iter().next().expect("one kept iterate")
        };
        out.denoised.push(denoise_sample(space, &x, &mut ratio, rng)?);
        out.relaxed.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_structure, StructureKind};
    use crate::models::LogitTableModel;
    use crate::rng::seeded_rng;
    use alloc::vec;

    fn line(n: usize) -> DiscreteSpace {
        DiscreteSpace::new(vec![n]).unwrap()
    }

    #[test]
    fn pdf_examples() {
        assert_eq!(triangular_pdf(&[0.0]), 1.0);
        assert_eq!(triangular_pdf(&[0.5]), 0.5);
        assert_eq!(triangular_pdf(&[1.2]), 0.0);
        assert!((triangular_pdf(&[0.5, -0.25]) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn perturbation_moments() {
        let mut rng = seeded_rng(0);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let t = perturb(&[4], &mut rng)[0] - 4.0;
            assert!(t.abs() <= 1.0);
            s += t;
            s2 += t * t;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.004, "{mean}");
        assert!((var - 1.0 / 6.0).abs() < 0.004, "{var}");
    }

    #[test]
    fn posterior_examples() {
        let s = line(5);
        let flat = TabularDistribution::uniform(s.clone()).unwrap();
        let w = posterior_weights(&s, &[2.3], table_ratio(&flat)).unwrap();
        assert_eq!(w.len(), 2);
        assert!((w[0].1 - 0.7).abs() < 1e-12 && (w[1].1 - 0.3).abs() < 1e-12);
        let p = TabularDistribution::from_weights(s.clone(), vec![1.0, 1.0, 1.0, 2.0, 1.0]).unwrap();
        let w = posterior_weights(&s, &[2.3], table_ratio(&p)).unwrap();
        assert!((w[0].1 - 7.0 / 13.0).abs() < 1e-12);
        assert!((w[1].1 - 6.0 / 13.0).abs() < 1e-12);
        let w = posterior_weights(&s, &[3.0], table_ratio(&p)).unwrap();
        let on: Vec<_> = w.iter().filter(|(_, v)| *v > 0.0).collect();
        assert_eq!(on.len(), 1);
        assert_eq!(on[0].0, vec![3]);
        let mut rng = seeded_rng(1);
        for _ in 0..20 {
            assert_eq!(denoise_sample(&s, &[3.0], table_ratio(&p), &mut rng).unwrap(), vec![3]);
        }
    }

    #[test]
    fn edge_cells_drop_outside_corners() {
        let s = line(4);
        let p = TabularDistribution::from_weights(s.clone(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = posterior_weights(&s, &[-0.4], table_ratio(&p)).unwrap();
        assert_eq!(w, vec![(vec![0], 1.0)]);
        let w = posterior_weights(&s, &[3.5], table_ratio(&p)).unwrap();
        assert_eq!(w, vec![(vec![3], 1.0)]);
        assert!(posterior_weights(&s, &[4.5], table_ratio(&p)).is_err());
        assert!(posterior_weights(&s, &[-1.5], table_ratio(&p)).is_err());
    }

    #[test]
    fn stein_examples() {
        let s = line(5);
        let flat = TabularDistribution::uniform(s.clone()).unwrap();
        assert_eq!(recover_stein_score(&s, &[1.4], table_ratio(&flat)).unwrap(), vec![0.0]);
        let p = TabularDistribution::from_weights(s.clone(), vec![1.0, 1.0, 2.0, 1.0, 1.0]).unwrap();
        let v = recover_stein_score(&s, &[1.5], table_ratio(&p)).unwrap();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    /// Relaxed density by explicit convolution.
    fn relaxed(p: &TabularDistribution, x: &[f64]) -> f64 {
        p.space()
            .states()
            .unwrap()
            .zip(p.masses())
            .map(|(c, m)| {
                let u: Vec<f64> = x.iter().zip(&c).map(|(a, &b)| a - b as f64).collect();
                m * triangular_pdf(&u)
            })
            .sum()
    }

    #[test]
    fn stein_matches_convolution_in_two_dims() {
        let s = DiscreteSpace::new(vec![3, 4]).unwrap();
        let mut rng = seeded_rng(2);
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(0.2..2.0)).collect();
        let p = TabularDistribution::from_weights(s.clone(), w).unwrap();
        for _ in 0..100 {
            let x = vec![rng.random_range(-0.9..2.9), rng.random_range(-0.9..3.9)];
            let v = recover_stein_score(&s, &x, table_ratio(&p)).unwrap();
            let h = 1e-6;
            for k in 0..2 {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[k] += h;
                b[k] -= h;
                let fd = (math::ln(relaxed(&p, &a)) - math::ln(relaxed(&p, &b))) / (2.0 * h);
                assert!((fd - v[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{x:?} dim {k}: {fd} vs {}", v[k]);
            }
        }
    }

    #[test]
    fn integer_ratios_survive_relaxation() {
        let s = DiscreteSpace::new(vec![3, 3]).unwrap();
        let p = TabularDistribution::from_weights(s.clone(), (1..=9).map(|v| v as f64).collect()).unwrap();
        for x in s.states().unwrap() {
            for y in s.states().unwrap() {
                let fx: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                let fy: Vec<f64> = y.iter().map(|&v| v as f64).collect();
                let a = relaxed(&p, &fx) / relaxed(&p, &fy);
                let b = p.mass(&x).unwrap() / p.mass(&y).unwrap();
                assert!((a - b).abs() < 1e-12 * b.max(1.0));
            }
        }
    }

    #[test]
    fn posterior_frequencies_match() {
        let s = DiscreteSpace::new(vec![3, 3]).unwrap();
        let p = TabularDistribution::from_weights(s.clone(), (1..=9).map(|v| v as f64).collect()).unwrap();
        let x = [0.6, 1.3];
        let post = posterior_weights(&s, &x, table_ratio(&p)).unwrap();
        assert!((post.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = seeded_rng(8);
        let n = 100_000;
        let mut counts = vec![0usize; post.len()];
        for _ in 0..n {
            let c = denoise_sample(&s, &x, table_ratio(&p), &mut rng).unwrap();
            counts[post.iter().position(|(st, _)| *st == c).unwrap()] += 1;
        }
        for ((_, w), c) in post.iter().zip(&counts) {
            let f = *c as f64 / n as f64;
            let se = math::sqrt(w * (1.0 - w) / n as f64);
            assert!((f - w).abs() < 3.0 * se + 1e-12, "{f} vs {w}");
        }
    }

    #[test]
    fn point_mass_always_denoises_to_itself() {
        let s = line(6);
        let mut m = vec![0.0; 6];
        m[4] = 1.0;
        let p = TabularDistribution::new(s.clone(), m).unwrap();
        let mut rng = seeded_rng(3);
        for _ in 0..200 {
            let x = perturb(&[4], &mut rng);
            let got = denoise_sample(&s, &x, table_ratio(&p), &mut rng).unwrap();
            assert_eq!(got, vec![4]);
        }
    }

    #[test]
    fn model_path_ratios_match_table() {
        let s = DiscreteSpace::new(vec![4, 3]).unwrap();
        let w: Vec<f64> = (0..12).map(|i| 1.0 + (i % 5) as f64).collect();
        let p = TabularDistribution::from_weights(s.clone(), w.clone()).unwrap();
        let logits: Vec<f64> = w.iter().map(|v| math::ln(*v)).collect();
        let m = LogitTableModel::from_logits(s.clone(), logits).unwrap();
        let g = build_structure(StructureKind::Grid, s.clone()).unwrap();
        let mut via_model = score_path_ratio(&m, &g);
        for x in s.states().unwrap() {
            for y in s.states().unwrap() {
                let a = via_model(&x, &y).unwrap();
                let b = p.mass(&y).unwrap() / p.mass(&x).unwrap();
                assert!((a - b).abs() < 1e-12 * b.max(1.0));
            }
        }
    }
}
