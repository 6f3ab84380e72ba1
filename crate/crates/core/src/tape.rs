//! Reverse-mode differentiation over a tape of vector-valued nodes.
//!
//! A [`Tape`] borrows a model's flat parameter vector. Parameter leaves read
//! slices of it; [`Tape::backward`] returns the gradient of a scalar node
//! with respect to that whole vector. Binary elementwise ops broadcast an
//! operand of length one.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param { offset: usize },
    MaskedParam { offset: usize, mask: Vec<f64> },
    ParamGather { offset: usize, indices: Vec<usize> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Square(Var),
    ClampMin(Var, f64),
    Sum(Var),
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>),
    MatVec { w: Var, x: Var, rows: usize, cols: usize },
    LogSumExp(Var),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
    params_memo: BTreeMap<(usize, usize), Var>,
    masked_memo: BTreeMap<usize, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape { params, nodes: Vec::new(), params_memo: BTreeMap::new(), masked_memo: BTreeMap::new() }
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// The single entry of a length-one node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    pub fn width(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(alloc::vec![value], Op::Constant)
    }

    /// `params[offset..offset + len]`, recorded once per tape.
    pub fn param(&mut self, offset: usize, len: usize) -> Var {
        if let Some(&v) = self.params_memo.get(&(offset, len)) {
            return v;
        }
        let value = self.params[offset..offset + len].to_vec();
        let v = self.push(value, Op::Param { offset });
        self.params_memo.insert((offset, len), v);
        v
    }

    /// `params[offset..offset + mask.len()] * mask`, recorded once per tape
    /// and offset.
    pub fn masked_param(&mut self, offset: usize, mask: &[f64]) -> Var {
        if let Some(&v) = self.masked_memo.get(&offset) {
            return v;
        }
        let value = self.params[offset..offset + mask.len()].iter().zip(mask).map(|(p, m)| p * m).collect();
        let v = self.push(value, Op::MaskedParam { offset, mask: mask.to_vec() });
        self.masked_memo.insert(offset, v);
        v
    }

    /// `[params[offset + i] for i in indices]` without materializing the
    /// whole slice.
    pub fn param_gather(&mut self, offset: usize, indices: &[usize]) -> Var {
        let value = indices.iter().map(|&i| self.params[offset + i]).collect();
        self.push(value, Op::ParamGather { offset, indices: indices.to_vec() })
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let value = match (va.len(), vb.len()) {
            (n, m) if n == m => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            (_, 1) => va.iter().map(|&x| f(x, vb[0])).collect(),
            (1, _) => vb.iter().map(|&y| f(va[0], y)).collect(),
            (n, m) => panic!("cannot broadcast lengths {n} and {m}"),
        };
        self.push(value, op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    /// `a + c` for a constant `c`.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Shift(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, math::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, math::ln, Op::Ln(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, math::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, math::softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let one = self.scalar(1.0);
        self.div(one, a)
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| if x < floor { floor } else { x }, Op::ClampMin(a, floor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(alloc::vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.width(a) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let m = self.mul(a, b);
        self.sum(m)
    }

    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Var {
        let va = self.value(a);
        let value = indices.iter().map(|&i| va[i]).collect();
        self.push(value, Op::Gather(a, indices.to_vec()))
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        self.gather(a, &[i])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::new();
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    /// `W x` with `W` stored row-major as `rows * cols` entries.
    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        let (vw, vx) = (self.value(w), self.value(x));
        assert_eq!(vw.len(), rows * cols, "matrix size");
        assert_eq!(vx.len(), cols, "vector size");
        let value = vw.chunks_exact(cols).map(|row| row.iter().zip(vx).map(|(a, b)| a * b).sum()).collect();
        self.push(value, Op::MatVec { w, x, rows, cols })
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let v = math::log_sum_exp(self.value(a));
        self.push(alloc::vec![v], Op::LogSumExp(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let z = self.log_sum_exp(a);
        self.sub(a, z)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let l = self.log_softmax(a);
        self.exp(l)
    }

    /// Gradient of the scalar `out` with respect to the parameter vector.
    pub fn backward(&self, out: Var) -> Result<Vec<f64>> {
        if self.width(out) != 1 {
            return Err(Error::Shape(alloc::format!("backward needs a scalar, got width {}", self.width(out))));
        }
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|_| Vec::new()).collect();
        let mut pgrad = alloc::vec![0.0; self.params.len()];
        grads[out.0] = alloc::vec![1.0];

        fn acc(grads: &mut [Vec<f64>], nodes: &[Node], v: Var, g: &[f64]) {
            let slot = &mut grads[v.0];
            let n = nodes[v.0].value.len();
            if slot.is_empty() {
                *slot = alloc::vec![0.0; n];
            }
            if g.len() == n {
                slot.iter_mut().zip(g).for_each(|(s, x)| *s += x);
            } else {
                // Operand was broadcast from length one.
                debug_assert_eq!(n, 1);
                slot[0] += g.iter().sum::<f64>();
            }
        }

        for k in (0..=out.0).rev() {
            if grads[k].is_empty() {
                continue;
            }
            let g = core::mem::take(&mut grads[k]);
            let node = &self.nodes[k];
            let val = &node.value;
            let nodes = &self.nodes;
            let input = |v: Var| nodes[v.0].value.as_slice();
            let bcast = |xs: &[f64], i: usize| if xs.len() == 1 { xs[0] } else { xs[i] };
            match &node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    pgrad[*offset..*offset + g.len()].iter_mut().zip(&g).for_each(|(p, x)| *p += x);
                }
                Op::MaskedParam { offset, mask } => {
                    for (i, (x, m)) in g.iter().zip(mask).enumerate() {
                        pgrad[offset + i] += x * m;
                    }
                }
                Op::ParamGather { offset, indices } => {
                    for (&i, x) in indices.iter().zip(&g) {
                        pgrad[offset + i] += x;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, nodes, *a, &g);
                    acc(&mut grads, nodes, *b, &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, nodes, *a, &g);
                    let ng: Vec<f64> = g.iter().map(|x| -x).collect();
                    acc(&mut grads, nodes, *b, &ng);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (input(*a), input(*b));
                    let ga: Vec<f64> = g.iter().enumerate().map(|(i, x)| x * bcast(vb, i)).collect();
                    let gb: Vec<f64> = g.iter().enumerate().map(|(i, x)| x * bcast(va, i)).collect();
                    acc(&mut grads, nodes, *a, &ga);
                    acc(&mut grads, nodes, *b, &gb);
                }
                Op::Div(a, b) => {
                    let vb = input(*b);
                    let ga: Vec<f64> = g.iter().enumerate().map(|(i, x)| x / bcast(vb, i)).collect();
                    let gb: Vec<f64> = g.iter().enumerate().map(|(i, x)| -x * val[i] / bcast(vb, i)).collect();
                    acc(&mut grads, nodes, *a, &ga);
                    acc(&mut grads, nodes, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|x| c * x).collect();
                    acc(&mut grads, nodes, *a, &ga);
                }
                Op::Shift(a) => acc(&mut grads, nodes, *a, &g),
                Op::Exp(a) => {
                    let ga: Vec<f64> = g.iter().zip(val).map(|(x, y)| x * y).collect();
                    acc(&mut grads, nodes, *a, &ga);
                }
                Op::Ln(a) => {
                    let ga: Vec<f64> = g.iter().zip(input(*a)).map(|(x, y)| x / y).collect();
                    acc(&mut grads, nodes, *a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g.iter().zip(val).map(|(x, y)| x * (1.0 - y * y)).collect();
                    acc(&mut grads, nodes, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g.iter().zip(val).map(|(x, y)| x * y * (1.0 - y)).collect();
                    acc(&mut grads, nodes, *a, &ga);
                }
                Op::Softplus(a) => {
                    let ga: Vec<f64> = g.iter().zip(input(*a)).map(|(x, z)| x * math::sigmoid(*z)).collect();
                    acc(&mut grads, nodes, *a, &ga);
                }
                Op::Square(a) => {
                    let ga: Vec<f64> = g.iter().zip(input(*a)).map(|(x, z)| 2.0 * x * z).collect();
                    acc(&mut grads, nodes, *a, &ga);
                }
                Op::ClampMin(a, floor) => {
                    let ga: Vec<f64> = g.iter().zip(input(*a)).map(|(x, z)| if z < floor { 0.0 } else { *x }).collect();
                    acc(&mut grads, nodes, *a, &ga);
                }
                Op::Sum(a) => {
                    let ga = alloc::vec![g[0]; nodes[a.0].value.len()];
                    acc(&mut grads, nodes, *a, &ga);
                }
                Op::Gather(a, indices) => {
                    let mut ga = alloc::vec![0.0; nodes[a.0].value.len()];
                    for (&i, x) in indices.iter().zip(&g) {
                        ga[i] += x;
                    }
                    acc(&mut grads, nodes, *a, &ga);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = nodes[p.0].value.len();
                        acc(&mut grads, nodes, *p, &g[start..start + n]);
                        start += n;
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (vw, vx) = (input(*w), input(*x));
                    let mut gw = alloc::vec![0.0; rows * cols];
                    let mut gx = alloc::vec![0.0; *cols];
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &vw[r * cols..(r + 1) * cols];
                        let grow = &mut gw[r * cols..(r + 1) * cols];
                        for c in 0..*cols {
                            grow[c] += gr * vx[c];
                            gx[c] += gr * row[c];
                        }
                    }
                    acc(&mut grads, nodes, *w, &gw);
                    acc(&mut grads, nodes, *x, &gx);
                }
                Op::LogSumExp(a) => {
                    let z = val[0];
                    let ga: Vec<f64> = input(*a).iter().map(|v| g[0] * math::exp(v - z)).collect();
                    acc(&mut grads, nodes, *a, &ga);
                }
            }
        }
        Ok(pgrad)
    }
}
