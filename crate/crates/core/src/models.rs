//! Score and density models, Adam, and a finite-difference gradient check.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::NeighborhoodStructure;
use crate::math;
use crate::space::{DiscreteSpace, State};
use crate::tape::{Tape, Var};

/// Anything owning a flat parameter vector over a discrete space.
pub trait Parameterized {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn space(&self) -> &DiscreteSpace;

    fn num_params(&self) -> usize {
        self.params().len()
    }
}

/// A model of the concrete score `c(x; N)`.
pub trait ScoreModel: Parameterized {
    /// Records the score vector at `x` on `tape`; one entry per neighbor.
    fn score_var(&self, tape: &mut Tape<'_>, structure: &NeighborhoodStructure, x: &[usize]) -> Result<Var>;

    fn score_entry_var(
        &self,
        tape: &mut Tape<'_>,
        structure: &NeighborhoodStructure,
        x: &[usize],
        i: usize,
    ) -> Result<Var> {
        let s = self.score_var(tape, structure, x)?;
        if i >= tape.width(s) {
            return Err(Error::InvalidArgument(alloc::format!(
                "neighbor index {i} out of range for degree {}",
                tape.width(s)
            )));
        }
        Ok(tape.index(s, i))
    }

    fn score(&self, structure: &NeighborhoodStructure, x: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(self.params());
        let s = self.score_var(&mut tape, structure, x)?;
        Ok(tape.value(s).to_vec())
    }

    fn score_entry(&self, structure: &NeighborhoodStructure, x: &[usize], i: usize) -> Result<f64> {
        let mut tape = Tape::new(self.params());
        let s = self.score_entry_var(&mut tape, structure, x, i)?;
        Ok(tape.scalar_value(s))
    }
}

/// A model exposing a (possibly unnormalized) log-mass `log q(x)`.
pub trait DensityModel: Parameterized {
    fn log_mass_var(&self, tape: &mut Tape<'_>, x: &[usize]) -> Result<Var>;

    /// Log-masses of several states as one vector node.
    fn log_masses_var(&self, tape: &mut Tape<'_>, xs: &[State]) -> Result<Var> {
        let parts = xs.iter().map(|x| self.log_mass_var(tape, x)).collect::<Result<Vec<_>>>()?;
        Ok(tape.concat(&parts))
    }

    /// `log Z`, or `None` when `log_mass_var` is already normalized.
    fn log_normalizer_var(&self, tape: &mut Tape<'_>) -> Result<Option<Var>>;

    fn is_normalized(&self) -> bool;

    fn normalized_log_mass_var(&self, tape: &mut Tape<'_>, x: &[usize]) -> Result<Var> {
        let l = self.log_mass_var(tape, x)?;
        match self.log_normalizer_var(tape)? {
            Some(z) => Ok(tape.sub(l, z)),
            None => Ok(l),
        }
    }

    /// `log q(xi | x without d)` for every category `xi` of dimension `d`.
    fn log_conditionals_var(&self, tape: &mut Tape<'_>, x: &[usize], d: usize) -> Result<Var> {
        let n = self.space().dims()[d];
        let xs: Vec<State> = (0..n)
            .map(|v| {
                let mut y = x.to_vec();
                y[d] = v;
                y
            })
            .collect();
        let l = self.log_masses_var(tape, &xs)?;
        Ok(tape.log_softmax(l))
    }
}

/// Records `exp(log q(x_n) - log q(x)) - 1` for every neighbor of `x`.
pub fn implied_score_var<M: DensityModel + ?Sized>(
    model: &M,
    tape: &mut Tape<'_>,
    structure: &NeighborhoodStructure,
    x: &[usize],
) -> Result<Var> {
    check_space(model.space(), structure)?;
    let mut states = alloc::vec![x.to_vec()];
    states.extend(structure.neighbors(x)?);
    let k = states.len() - 1;
    let l = model.log_masses_var(tape, &states)?;
    let lx = tape.index(l, 0);
    let idx: Vec<usize> = (1..=k).collect();
    let ln = tape.gather(l, &idx);
    let diff = tape.sub(ln, lx);
    let e = tape.exp(diff);
    Ok(tape.shift(e, -1.0))
}

/// Records a single entry of [`implied_score_var`].
pub fn implied_score_entry_var<M: DensityModel + ?Sized>(
    model: &M,
    tape: &mut Tape<'_>,
    structure: &NeighborhoodStructure,
    x: &[usize],
    i: usize,
) -> Result<Var> {
    check_space(model.space(), structure)?;
    let mut nbrs = structure.neighbors(x)?;
    if i >= nbrs.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "neighbor index {i} out of range for degree {}",
            nbrs.len()
        )));
    }
    let y = nbrs.swap_remove(i);
    let l = model.log_masses_var(tape, &[x.to_vec(), y])?;
    let lx = tape.index(l, 0);
    let ly = tape.index(l, 1);
    let diff = tape.sub(ly, lx);
    let e = tape.exp(diff);
    Ok(tape.shift(e, -1.0))
}

/// The concrete score implied by a density model, as plain numbers.
pub fn implied_concrete_score<M: DensityModel + ?Sized>(
    model: &M,
    structure: &NeighborhoodStructure,
    x: &[usize],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new(model.params());
    let s = implied_score_var(model, &mut tape, structure, x)?;
    Ok(tape.value(s).to_vec())
}

/// Exact `log q(x)`, normalizing over the space when needed.
pub fn log_mass<M: DensityModel + ?Sized>(model: &M, x: &[usize]) -> Result<f64> {
    model.space().check(x)?;
    let mut tape = Tape::new(model.params());
    let l = model.normalized_log_mass_var(&mut tape, x)?;
    Ok(tape.scalar_value(l))
}

/// Normalized masses of every state, in flat-index order.
pub fn normalized_masses<M: DensityModel + ?Sized>(model: &M) -> Result<Vec<f64>> {
    let space = model.space();
    let states: Vec<State> = space.states()?.collect();
    let mut tape = Tape::new(model.params());
    let l = model.log_masses_var(&mut tape, &states)?;
    let logs = tape.value(l);
    let z = math::log_sum_exp(logs);
    Ok(logs.iter().map(|v| math::exp(v - z)).collect())
}

fn check_space(space: &DiscreteSpace, structure: &NeighborhoodStructure) -> Result<()> {
    if space != structure.space() {
        return Err(Error::SpaceMismatch(alloc::format!(
            "model over {:?}, structure over {:?}",
            space.dims(),
            structure.space().dims()
        )));
    }
    Ok(())
}

/// One logit per state; `q(x) = softmax(logits)[x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTableModel {
    space: DiscreteSpace,
    logits: Vec<f64>,
}

impl LogitTableModel {
    /// All-zero logits: the uniform distribution.
    pub fn uniform(space: DiscreteSpace) -> Result<Self> {
        let n = space.enumerable_len()?;
        Ok(LogitTableModel { space, logits: alloc::vec![0.0; n] })
    }

    pub fn from_logits(space: DiscreteSpace, logits: Vec<f64>) -> Result<Self> {
        let n = space.enumerable_len()?;
        if logits.len() != n {
            return Err(Error::Shape(alloc::format!("{} logits for {n} states", logits.len())));
        }
        if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "logit", index: i });
        }
        Ok(LogitTableModel { space, logits })
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

impl Parameterized for LogitTableModel {
    fn params(&self) -> &[f64] {
        &self.logits
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }
    fn space(&self) -> &DiscreteSpace {
        &self.space
    }
}

impl DensityModel for LogitTableModel {
    fn log_mass_var(&self, tape: &mut Tape<'_>, x: &[usize]) -> Result<Var> {
        let i = self.space.index_of(x)?;
        Ok(tape.param_gather(0, &[i]))
    }

    fn log_masses_var(&self, tape: &mut Tape<'_>, xs: &[State]) -> Result<Var> {
        let idx = xs.iter().map(|x| self.space.index_of(x)).collect::<Result<Vec<_>>>()?;
        Ok(tape.param_gather(0, &idx))
    }

    fn log_normalizer_var(&self, tape: &mut Tape<'_>) -> Result<Option<Var>> {
        let all = tape.param(0, self.logits.len());
        Ok(Some(tape.log_sum_exp(all)))
    }

    fn is_normalized(&self) -> bool {
        false
    }
}

impl ScoreModel for LogitTableModel {
    fn score_var(&self, tape: &mut Tape<'_>, structure: &NeighborhoodStructure, x: &[usize]) -> Result<Var> {
        implied_score_var(self, tape, structure, x)
    }

    fn score_entry_var(
        &self,
        tape: &mut Tape<'_>,
        structure: &NeighborhoodStructure,
        x: &[usize],
        i: usize,
    ) -> Result<Var> {
        implied_score_entry_var(self, tape, structure, x, i)
    }
}

/// How a ScoreNetModel feeds a state to its first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    /// Each coordinate mapped affinely onto `[-1, 1]`.
    #[default]
    Affine,
    OneHot,
}

impl Encoding {
    pub fn name(self) -> &'static str {
        match self {
            Encoding::Affine => "affine",
            Encoding::OneHot => "onehot",
        }
    }

    pub fn width(self, space: &DiscreteSpace) -> usize {
        match self {
            Encoding::Affine => space.ndim(),
            Encoding::OneHot => space.dims().iter().sum(),
        }
    }

    pub fn encode(self, space: &DiscreteSpace, x: &[usize]) -> Vec<f64> {
        match self {
            Encoding::Affine => {
                x.iter().zip(space.dims()).map(|(&v, &n)| 2.0 * v as f64 / (n - 1) as f64 - 1.0).collect()
            }
            Encoding::OneHot => {
                let mut out = alloc::vec![0.0; self.width(space)];
                let mut start = 0;
                for (&v, &n) in x.iter().zip(space.dims()) {
                    out[start + v] = 1.0;
                    start += n;
                }
                out
            }
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Encoding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(Encoding::Affine),
            "onehot" => Ok(Encoding::OneHot),
            _ => Err(Error::InvalidArgument(alloc::format!("unknown encoding `{s}`"))),
        }
    }
}

/// Dense layer sizes `(rows, cols)` and the parameter offset of each layer.
fn layer_offsets(sizes: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut offset = 0;
    sizes
        .windows(2)
        .map(|w| {
            let (cols, rows) = (w[0], w[1]);
            let o = offset;
            offset += rows * cols + rows;
            (o, rows, cols)
        })
        .collect()
}

fn init_dense<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Vec<f64> {
    let mut params = Vec::new();
    for (_, rows, cols) in layer_offsets(sizes) {
        let a = math::sqrt(6.0 / (rows + cols) as f64);
        params.extend((0..rows * cols).map(|_| rng.random_range(-a..a)));
        params.extend(core::iter::repeat_n(0.0, rows));
    }
    params
}

/// A tanh MLP emitting the score vector directly. Needs a structure whose
/// states all have the same degree.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetModel {
    space: DiscreteSpace,
    hidden: Vec<usize>,
    degree: usize,
    encoding: Encoding,
    params: Vec<f64>,
}

impl ScoreNetModel {
    pub fn new<R: Rng + ?Sized>(
        structure: &NeighborhoodStructure,
        hidden: &[usize],
        encoding: Encoding,
        rng: &mut R,
    ) -> Result<Self> {
        let degree = structure.fixed_degree().ok_or_else(|| {
            Error::Unsupported(alloc::format!(
                "a score network needs a fixed-degree structure, `{}` is not",
                structure.kind()
            ))
        })?;
        Self::with_degree(structure.space().clone(), degree, hidden, encoding, rng)
    }

    pub fn with_degree<R: Rng + ?Sized>(
        space: DiscreteSpace,
        degree: usize,
        hidden: &[usize],
        encoding: Encoding,
        rng: &mut R,
    ) -> Result<Self> {
        if degree == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer widths and degree must be positive".into()));
        }
        let mut model = ScoreNetModel { space, hidden: hidden.to_vec(), degree, encoding, params: Vec::new() };
        model.params = init_dense(&model.sizes(), rng);
        Ok(model)
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s = alloc::vec![self.encoding.width(&self.space)];
        s.extend(&self.hidden);
        s.push(self.degree);
        s
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }
}

impl Parameterized for ScoreNetModel {
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

impl ScoreModel for ScoreNetModel {
    fn score_var(&self, tape: &mut Tape<'_>, structure: &NeighborhoodStructure, x: &[usize]) -> Result<Var> {
        check_space(&self.space, structure)?;
        if structure.fixed_degree() != Some(self.degree) {
            return Err(Error::Shape(alloc::format!(
                "model emits {} scores but structure `{}` has degree {:?}",
                self.degree,
                structure.kind(),
                structure.fixed_degree()
            )));
        }
        self.space.check(x)?;
        let mut h = tape.constant(self.encoding.encode(&self.space, x));
        let layers = layer_offsets(&self.sizes());
        let last = layers.len() - 1;
        for (k, (offset, rows, cols)) in layers.into_iter().enumerate() {
            let w = tape.param(offset, rows * cols);
            let b = tape.param(offset + rows * cols, rows);
            let z = tape.matvec(w, h, rows, cols);
            let z = tape.add(z, b);
            h = if k == last { z } else { tape.tanh(z) };
        }
        Ok(h)
    }
}

/// Autoregressive Bernoulli model over binary states with masked hidden
/// layers and a direct masked input-to-output connection.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedARModel {
    space: DiscreteSpace,
    hidden: Vec<usize>,
    masks: Vec<Vec<f64>>,
    params: Vec<f64>,
}

impl MaskedARModel {
    pub fn new<R: Rng + ?Sized>(space: DiscreteSpace, hidden: &[usize], rng: &mut R) -> Result<Self> {
        if !space.is_binary() {
            return Err(Error::Unsupported("the autoregressive model needs binary dimensions".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        let d = space.ndim();
        let degree = |k: usize| if d > 1 { k % (d - 1) + 1 } else { 1 };
        // Input d carries degree d + 1; a unit may see inputs of degree up to its own.
        let mut degrees: Vec<Vec<usize>> = alloc::vec![(1..=d).collect()];
        for &h in hidden {
            degrees.push((0..h).map(degree).collect());
        }
        let mut masks = Vec::new();
        for w in degrees.windows(2) {
            let (prev, next) = (&w[0], &w[1]);
            masks.push(next.iter().flat_map(|&m| prev.iter().map(move |&p| if m >= p { 1.0 } else { 0.0 })).collect());
        }
        let last = degrees.last().expect("input degrees");
        masks.push((1..=d).flat_map(|o| last.iter().map(move |&p| if o > p { 1.0 } else { 0.0 })).collect());
        let direct: Vec<f64> = (0..d).flat_map(|o| (0..d).map(move |i| if i < o { 1.0 } else { 0.0 })).collect();
        masks.push(direct);

        let mut sizes = alloc::vec![d];
        sizes.extend(hidden);
        sizes.push(d);
        let mut params = init_dense(&sizes, rng);
        params.extend(core::iter::repeat_n(0.0, d * d));
        Ok(MaskedARModel { space, hidden: hidden.to_vec(), masks, params })
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    fn sizes(&self) -> Vec<usize> {
        let d = self.space.ndim();
        let mut s = alloc::vec![d];
        s.extend(&self.hidden);
        s.push(d);
        s
    }

    /// Records the logit of `q(x_d = 1 | x_<d)` for every `d`.
    pub fn logits_var(&self, tape: &mut Tape<'_>, x: &[usize]) -> Result<Var> {
        self.space.check(x)?;
        let d = self.space.ndim();
        let input: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let xin = tape.constant(input);
        let mut h = xin;
        let layers = layer_offsets(&self.sizes());
        let last = layers.len() - 1;
        for (k, (offset, rows, cols)) in layers.iter().copied().enumerate() {
            let w = tape.masked_param(offset, &self.masks[k]);
            let b = tape.param(offset + rows * cols, rows);
            let z = tape.matvec(w, h, rows, cols);
            let z = tape.add(z, b);
            h = if k == last { z } else { tape.tanh(z) };
        }
        let direct_offset = self.params.len() - d * d;
        let v = tape.masked_param(direct_offset, &self.masks[layers.len()]);
        let skip = tape.matvec(v, xin, d, d);
        Ok(tape.add(h, skip))
    }

    pub fn logits(&self, x: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let l = self.logits_var(&mut tape, x)?;
        Ok(tape.value(l).to_vec())
    }
}

impl Parameterized for MaskedARModel {
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

impl DensityModel for MaskedARModel {
    fn log_mass_var(&self, tape: &mut Tape<'_>, x: &[usize]) -> Result<Var> {
        let l = self.logits_var(tape, x)?;
        // log Bernoulli(x | sigmoid(l)) = x l - softplus(l)
        let bits = tape.constant(x.iter().map(|&v| v as f64).collect());
        let xl = tape.mul(bits, l);
        let sp = tape.softplus(l);
        let ll = tape.sub(xl, sp);
        Ok(tape.sum(ll))
    }

    fn log_normalizer_var(&self, _tape: &mut Tape<'_>) -> Result<Option<Var>> {
        Ok(None)
    }

    fn is_normalized(&self) -> bool {
        true
    }
}

impl ScoreModel for MaskedARModel {
    fn score_var(&self, tape: &mut Tape<'_>, structure: &NeighborhoodStructure, x: &[usize]) -> Result<Var> {
        implied_score_var(self, tape, structure, x)
    }

    fn score_entry_var(
        &self,
        tape: &mut Tape<'_>,
        structure: &NeighborhoodStructure,
        x: &[usize],
        i: usize,
    ) -> Result<Var> {
        implied_score_entry_var(self, tape, structure, x, i)
    }
}

/// The three model kinds by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LogitTable,
    ScoreNet,
    MaskedAR,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LogitTable => "logit_table",
            ModelKind::ScoreNet => "score_net",
            ModelKind::MaskedAR => "masked_ar",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit_table" => Ok(ModelKind::LogitTable),
            "score_net" => Ok(ModelKind::ScoreNet),
            "masked_ar" => Ok(ModelKind::MaskedAR),
            _ => Err(Error::InvalidArgument(alloc::format!("unknown model `{s}`"))),
        }
    }
}

/// Any of the model kinds, for code that picks one at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    LogitTable(LogitTableModel),
    ScoreNet(ScoreNetModel),
    MaskedAR(MaskedARModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::LogitTable(_) => ModelKind::LogitTable,
            AnyModel::ScoreNet(_) => ModelKind::ScoreNet,
            AnyModel::MaskedAR(_) => ModelKind::MaskedAR,
        }
    }

    pub fn as_density(&self) -> Option<&dyn DensityModel> {
        match self {
            AnyModel::LogitTable(m) => Some(m),
            AnyModel::MaskedAR(m) => Some(m),
            AnyModel::ScoreNet(_) => None,
        }
    }

    pub fn as_score(&self) -> &dyn ScoreModel {
        match self {
            AnyModel::LogitTable(m) => m,
            AnyModel::ScoreNet(m) => m,
            AnyModel::MaskedAR(m) => m,
        }
    }

    pub fn density_or_err(&self) -> Result<&dyn DensityModel> {
        self.as_density()
            .ok_or_else(|| Error::NotNormalizable(String::from("a score network has no density to evaluate")))
    }
}

impl Parameterized for AnyModel {
    fn params(&self) -> &[f64] {
        self.as_score().params()
    }
    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            AnyModel::LogitTable(m) => m.params_mut(),
            AnyModel::ScoreNet(m) => m.params_mut(),
            AnyModel::MaskedAR(m) => m.params_mut(),
        }
    }
    fn space(&self) -> &DiscreteSpace {
        self.as_score().space()
    }
}

impl ScoreModel for AnyModel {
    fn score_var(&self, tape: &mut Tape<'_>, structure: &NeighborhoodStructure, x: &[usize]) -> Result<Var> {
        self.as_score().score_var(tape, structure, x)
    }

    fn score_entry_var(
        &self,
        tape: &mut Tape<'_>,
        structure: &NeighborhoodStructure,
        x: &[usize],
        i: usize,
    ) -> Result<Var> {
        self.as_score().score_entry_var(tape, structure, x, i)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: alloc::vec![0.0; num_params],
            v: alloc::vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, eps: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps = eps;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(alloc::format!(
                "optimizer holds {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: "gradient", index: i });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / (math::sqrt(*v / c2) + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    /// Parameter index at which the largest error occurred.
    pub worst_index: usize,
    pub checked: usize,
}

/// Smallest denominator used for relative errors, so that components whose
/// true gradient is zero are compared absolutely.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-6;

/// Compares `loss`'s reported gradient against central differences with step
/// `1e-5` on at most `max_params` randomly chosen parameters.
///
/// `loss` must be a deterministic function of the parameters.
pub fn gradient_check<F, R>(params: &[f64], mut loss: F, max_params: usize, rng: &mut R) -> Result<GradientCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    R: Rng + ?Sized,
{
    const H: f64 = 1e-5;
    let (_, grad) = loss(params)?;
    if grad.len() != params.len() {
        return Err(Error::Shape("gradient length differs from parameter count".into()));
    }
    let chosen: Vec<usize> = if params.len() <= max_params {
        (0..params.len()).collect()
    } else {
        let mut v = sample_indices(rng, params.len(), max_params).into_vec();
        v.sort_unstable();
        v
    };
    let mut p = params.to_vec();
    let mut report = GradientCheck { max_rel_error: 0.0, worst_index: 0, checked: chosen.len() };
    for &i in &chosen {
        let orig = p[i];
        p[i] = orig + H;
        let (up, _) = loss(&p)?;
        p[i] = orig - H;
        let (down, _) = loss(&p)?;
        p[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let denom = math::abs(grad[i]).max(math::abs(numeric)).max(GRADIENT_CHECK_FLOOR);
        let rel = math::abs(grad[i] - numeric) / denom;
        if rel > report.max_rel_error || !rel.is_finite() {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{concrete_score_exact, TabularDistribution};
    use crate::graph::{build_structure, StructureKind};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space(dims: &[usize]) -> DiscreteSpace {
        DiscreteSpace::new(dims.to_vec()).unwrap()
    }

    #[test]
    fn implied_score_examples() {
        let s = space(&[2]);
        let g = build_structure(StructureKind::Complete, s.clone()).unwrap();
        let m = LogitTableModel::uniform(s.clone()).unwrap();
        assert_eq!(m.score(&g, &[0]).unwrap(), vec![0.0]);
        let m = LogitTableModel::from_logits(s, vec![0.0, math::ln(3.0)]).unwrap();
        let c = m.score(&g, &[0]).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn implied_score_matches_exact_and_ignores_offsets() {
        let s = space(&[3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let shifted: Vec<f64> = logits.iter().map(|l| l + 5.0).collect();
        let m = LogitTableModel::from_logits(s.clone(), logits.clone()).unwrap();
        let m2 = LogitTableModel::from_logits(s.clone(), shifted).unwrap();
        let p = TabularDistribution::from_log_weights(s.clone(), &logits).unwrap();
        for kind in [StructureKind::Grid, StructureKind::Cycle, StructureKind::Complete] {
            let g = build_structure(kind, s.clone()).unwrap();
            for x in s.states().unwrap() {
                let a = m.score(&g, &x).unwrap();
                let b = concrete_score_exact(&p, &g, &x).unwrap();
                let c = m2.score(&g, &x).unwrap();
                for (i, u) in a.iter().enumerate() {
                    assert!((m.score_entry(&g, &x, i).unwrap() - u).abs() < 1e-15);
                }
                for ((u, v), w) in a.iter().zip(&b).zip(&c) {
                    assert!((u - v).abs() < 1e-12);
                    assert!((u - w).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn log_mass_examples() {
        let s = space(&[16]);
        let m = LogitTableModel::uniform(s).unwrap();
        assert!((log_mass(&m, &[3]).unwrap() + math::ln(16.0)).abs() < 1e-12);

        let s = DiscreteSpace::binary(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ar = MaskedARModel::new(s.clone(), &[10], &mut rng).unwrap();
        ar.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let expect = -8.0 * math::ln(2.0);
        assert!((log_mass(&ar, &[1, 0, 1, 1, 0, 0, 1, 0]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn masked_ar_is_normalized_and_autoregressive() {
        let s = DiscreteSpace::binary(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ar = MaskedARModel::new(s.clone(), &[12, 7], &mut rng).unwrap();
        for p in ar.params_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        let total: f64 = s.states().unwrap().map(|x| math::exp(log_mass(&ar, &x).unwrap())).sum();
        assert!((total - 1.0).abs() < 1e-10);
        for x in s.states().unwrap() {
            let base = ar.logits(&x).unwrap();
            for d in 0..6 {
                let mut y = x.clone();
                y[d] = 1 - y[d];
                let other = ar.logits(&y).unwrap();
                for o in 0..=d {
                    assert_eq!(base[o], other[o], "output {o} moved when input {d} changed");
                }
            }
        }
    }

    #[test]
    fn logit_table_normalizes() {
        let s = space(&[4, 4]);
        let logits: Vec<f64> = (0..16).map(|i| 0.1 * i as f64).collect();
        let m = LogitTableModel::from_logits(s.clone(), logits).unwrap();
        let total: f64 = s.states().unwrap().map(|x| math::exp(log_mass(&m, &x).unwrap())).sum();
        assert!((total - 1.0).abs() < 1e-10);
        let q = normalized_masses(&m).unwrap();
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditionals_sum_to_one() {
        let s = space(&[3, 5]);
        let logits: Vec<f64> = (0..15).map(|i| math::ln(1.0 + i as f64)).collect();
        let m = LogitTableModel::from_logits(s, logits).unwrap();
        let mut tape = Tape::new(m.params());
        let c = m.log_conditionals_var(&mut tape, &[1, 2], 1).unwrap();
        let q: Vec<f64> = tape.value(c).iter().map(|v| math::exp(*v)).collect();
        assert_eq!(q.len(), 5);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // q(xi | x_0 = 1) is proportional to 1 + (5 + xi).
        assert!((q[0] - 6.0 / 40.0).abs() < 1e-12);
    }

    #[test]
    fn score_net_shape_and_degree_checks() {
        let s = space(&[16]);
        let g = build_structure(StructureKind::Cycle, s.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = ScoreNetModel::new(&g, &[8, 8], Encoding::Affine, &mut rng).unwrap();
        assert_eq!(net.score(&g, &[5]).unwrap().len(), 1);
        assert_eq!(net.score(&g, &[5]).unwrap(), net.score(&g, &[5]).unwrap());
        let star = build_structure(StructureKind::Star, s.clone()).unwrap();
        assert!(ScoreNetModel::new(&star, &[8], Encoding::Affine, &mut rng).is_err());
        let complete = build_structure(StructureKind::Complete, s).unwrap();
        assert!(net.score(&complete, &[5]).is_err());
        let s2 = space(&[3, 3]);
        let grid = NeighborhoodStructure::grid(s2, crate::graph::Boundary::Wrap);
        let net = ScoreNetModel::new(&grid, &[4], Encoding::OneHot, &mut rng).unwrap();
        assert_eq!(net.score(&grid, &[0, 2]).unwrap().len(), 4);
    }

    #[test]
    fn adam_behaviour() {
        let mut p = vec![1.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);

        let mut p = vec![1.0, -2.0];
        let mut opt = Adam::new(2, 0.01);
        opt.step(&mut p, &[3.0, -0.5]).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-8);
        assert!((p[1] + 1.99).abs() < 1e-8);

        let f = |p: &[f64]| p[0] * p[0] + 3.0 * p[1] * p[1];
        let mut p = vec![1.0, 1.0];
        let mut opt = Adam::new(2, 0.05);
        let mut prev = f(&p);
        for _ in 0..2 {
            let g = [2.0 * p[0], 6.0 * p[1]];
            opt.step(&mut p, &g).unwrap();
            assert!(f(&p) < prev);
            prev = f(&p);
        }

        let err = opt.step(&mut p, &[1.0, f64::NAN]).unwrap_err();
        assert_eq!(err, Error::NonFinite { what: "gradient", index: 1 });
    }

    #[test]
    fn gradient_check_on_density_and_constant() {
        let s = space(&[5]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = LogitTableModel::from_logits(s, logits).unwrap();
        let loss = |p: &[f64]| {
            let mut model = m.clone();
            model.params_mut().copy_from_slice(p);
            let mut tape = Tape::new(model.params());
            let l = model.normalized_log_mass_var(&mut tape, &[2])?;
            let v = tape.scalar_value(l);
            Ok((v, tape.backward(l)?))
        };
        let report = gradient_check(m.params(), loss, 200, &mut rng).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");

        let constant = |p: &[f64]| Ok((4.0, vec![0.0; p.len()]));
        let report = gradient_check(m.params(), constant, 200, &mut rng).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }
}
