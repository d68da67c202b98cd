//! Reverse-mode differentiation over vector-valued nodes.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Values
//! are computed eagerly; [`Tape::backward`] then sweeps the records in exact
//! reverse order and accumulates parameter gradients into a [`Gradients`]
//! table aligned with the [`ParamSet`] the tape was opened against.

use std::sync::atomic::{AtomicU64, Ordering};

use super::activations::{sigm, softmax};
use super::matrix::{axpy, dot};
use super::params::{Gradients, ParamId, ParamSet};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigm(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Column { param: ParamId, col: usize },
    Dense {
        terms: Vec<(ParamId, usize)>,
        bias: Option<usize>,
        act: Activation,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddN(Vec<usize>),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    OneMinus(usize),
    Scale(usize, f64),
    Mask(usize, Vec<f64>),
    Interp { gate: usize, prev: usize, cand: usize },
    Concat(usize, usize),
    Sum(usize),
    Softmax(usize),
    SoftmaxXent { logits: usize, target: usize, weight: f64 },
    MixtureNll {
        raw: usize,
        components: usize,
        target: [f64; 2],
        floor: f64,
    },
}

/// Forward record used by the reverse sweep.
pub struct Tape<'p> {
    id: u64,
    params: &'p ParamSet,
    values: Vec<Vec<f64>>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    param_leaves: Vec<Option<usize>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            params,
            values: Vec::with_capacity(256),
            ops: Vec::with_capacity(256),
            needs_grad: Vec::with_capacity(256),
            param_leaves: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.check(v).expect("variable from another tape");
        &self.values[v.idx]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.value(v).len()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.ops.len() {
            return Err(Error::Tape("variable was not recorded on this tape".into()));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Var {
            tape: self.id,
            idx: self.ops.len() - 1,
        }
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Var {
        let i = self.check(a).expect("variable from another tape");
        let value = self.values[i].iter().map(|&x| f(x)).collect();
        let ng = self.needs_grad[i];
        self.push(value, op(i), ng)
    }

    fn same_len(&self, a: usize, b: usize, what: &str) -> Result<()> {
        if self.values[a].len() != self.values[b].len() {
            return Err(Error::Shape(format!(
                "{what}: lengths {} and {}",
                self.values[a].len(),
                self.values[b].len()
            )));
        }
        Ok(())
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, values: &[f64]) -> Var {
        self.push(values.to_vec(), Op::Input, false)
    }

    /// Leaf holding every entry of a parameter tensor. Repeated requests for
    /// the same parameter return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(idx) = self.param_leaves[id.0] {
            return Var { tape: self.id, idx };
        }
        let value = self.params.get(id).data().to_vec();
        let v = self.push(value, Op::Param(id), true);
        self.param_leaves[id.0] = Some(v.idx);
        v
    }

    /// Leaf holding one column of a parameter matrix.
    pub fn column(&mut self, id: ParamId, col: usize) -> Result<Var> {
        let m = self.params.get(id);
        if col >= m.cols() {
            return Err(Error::Shape(format!("column {col} of a {}-column matrix", m.cols())));
        }
        let value = m.column_values(col);
        Ok(self.push(value, Op::Column { param: id, col }, true))
    }

    /// `act(Σ_k W_k x_k + bias)`.
    pub fn dense(&mut self, terms: &[(ParamId, Var)], bias: Option<Var>, act: Activation) -> Result<Var> {
        let rows = match (terms.first(), bias) {
            (Some((w, _)), _) => self.params.get(*w).rows(),
            (None, Some(b)) => self.values[self.check(b)?].len(),
            (None, None) => return Err(Error::Shape("dense layer with no inputs".into())),
        };
        let mut acc = vec![0.0; rows];
        let mut ng = false;
        let mut idx_terms = Vec::with_capacity(terms.len());
        for &(w, x) in terms {
            let xi = self.check(x)?;
            let m = self.params.get(w);
            let xv = &self.values[xi];
            if m.rows() != rows || m.cols() != xv.len() {
                return Err(Error::Shape(format!(
                    "{} is {}x{}, applied to length {} into {rows} rows",
                    self.params.name(w),
                    m.rows(),
                    m.cols(),
                    xv.len()
                )));
            }
            for (r, a) in acc.iter_mut().enumerate() {
                *a += dot(m.row(r), xv);
            }
            ng = true;
            idx_terms.push((w, xi));
        }
        let bias_idx = match bias {
            Some(b) => {
                let bi = self.check(b)?;
                if self.values[bi].len() != rows {
                    return Err(Error::Shape(format!(
                        "bias of length {} for {rows} rows",
                        self.values[bi].len()
                    )));
                }
                axpy(1.0, &self.values[bi], &mut acc);
                ng |= self.needs_grad[bi];
                Some(bi)
            }
            None => None,
        };
        if act != Activation::Identity {
            acc.iter_mut().for_each(|a| *a = act.apply(*a));
        }
        Ok(self.push(
            acc,
            Op::Dense {
                terms: idx_terms,
                bias: bias_idx,
                act,
            },
            ng,
        ))
    }

    /// `W x + b` with parameter weight and bias.
    pub fn affine(&mut self, w: ParamId, x: Var, b: ParamId) -> Result<Var> {
        let bias = self.param(b);
        self.dense(&[(w, x)], Some(bias), Activation::Identity)
    }

    pub fn matvec(&mut self, w: ParamId, x: Var) -> Result<Var> {
        self.dense(&[(w, x)], None, Activation::Identity)
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Result<Var> {
        let (i, j) = (self.check(a)?, self.check(b)?);
        self.same_len(i, j, what)?;
        let value = self.values[i]
            .iter()
            .zip(&self.values[j])
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.needs_grad[i] || self.needs_grad[j];
        Ok(self.push(value, op(i, j), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var> {
        let first = vars.first().ok_or_else(|| Error::Shape("sum of no terms".into()))?;
        let f = self.check(*first)?;
        let mut value = vec![0.0; self.values[f].len()];
        let mut idx = Vec::with_capacity(vars.len());
        let mut ng = false;
        for &v in vars {
            let i = self.check(v)?;
            self.same_len(f, i, "add_n")?;
            axpy(1.0, &self.values[i], &mut value);
            ng |= self.needs_grad[i];
            idx.push(i);
        }
        Ok(self.push(value, Op::AddN(idx), ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigm, Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 - x, Op::OneMinus)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.unary(a, |x| alpha * x, |i| Op::Scale(i, alpha))
    }

    /// Elementwise product with a constant vector (dropout masks, selectors).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let i = self.check(a)?;
        if mask.len() != self.values[i].len() {
            return Err(Error::Shape(format!(
                "mask of length {} over length {}",
                mask.len(),
                self.values[i].len()
            )));
        }
        let value = self.values[i].iter().zip(&mask).map(|(x, m)| x * m).collect();
        let ng = self.needs_grad[i];
        Ok(self.push(value, Op::Mask(i, mask), ng))
    }

    /// `gate ⊙ prev + (1 − gate) ⊙ cand`.
    pub fn interp(&mut self, gate: Var, prev: Var, cand: Var) -> Result<Var> {
        let (g, p, c) = (self.check(gate)?, self.check(prev)?, self.check(cand)?);
        self.same_len(g, p, "interp")?;
        self.same_len(g, c, "interp")?;
        let value = (0..self.values[g].len())
            .map(|k| {
                let z = self.values[g][k];
                z * self.values[p][k] + (1.0 - z) * self.values[c][k]
            })
            .collect();
        let ng = self.needs_grad[g] || self.needs_grad[p] || self.needs_grad[c];
        Ok(self.push(value, Op::Interp { gate: g, prev: p, cand: c }, ng))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (i, j) = (self.check(a)?, self.check(b)?);
        let mut value = self.values[i].clone();
        value.extend_from_slice(&self.values[j]);
        let ng = self.needs_grad[i] || self.needs_grad[j];
        Ok(self.push(value, Op::Concat(i, j), ng))
    }

    /// Sum of all entries, as a length-1 node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let i = self.check(a)?;
        let s = self.values[i].iter().sum();
        let ng = self.needs_grad[i];
        Ok(self.push(vec![s], Op::Sum(i), ng))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let i = self.check(a)?;
        let value = softmax(&self.values[i]);
        let ng = self.needs_grad[i];
        Ok(self.push(value, Op::Softmax(i), ng))
    }

    /// `−weight · log softmax(logits)[target]` as a length-1 node.
    pub fn softmax_xent(&mut self, logits: Var, target: usize, weight: f64) -> Result<Var> {
        let i = self.check(logits)?;
        let z = &self.values[i];
        if target >= z.len() {
            return Err(Error::Shape(format!("target {target} over {} logits", z.len())));
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = -weight * (z[target] - lse);
        let ng = self.needs_grad[i];
        Ok(self.push(vec![loss], Op::SoftmaxXent { logits: i, target, weight }, ng))
    }

    /// Negative log-density of `target` under an axis-aligned Gaussian
    /// mixture whose `5M` raw parameters are laid out in blocks
    /// `[π̂ | μ̂x | μ̂y | δ̂x | δ̂y]`. Deviations are `max(exp(δ̂), floor)`.
    pub fn mixture_nll(&mut self, raw: Var, components: usize, target: [f64; 2], floor: f64) -> Result<Var> {
        let i = self.check(raw)?;
        if self.values[i].len() != 5 * components || components == 0 {
            return Err(Error::Shape(format!(
                "{} raw mixture outputs for {components} components",
                self.values[i].len()
            )));
        }
        let (nll, _) = mixture_terms(&self.values[i], components, target, floor);
        let ng = self.needs_grad[i];
        Ok(self.push(
            vec![nll],
            Op::MixtureNll {
                raw: i,
                components,
                target,
                floor,
            },
            ng,
        ))
    }

    /// Runs the reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let l = self.check(loss)?;
        if self.values[l].len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got length {}",
                self.values[l].len()
            )));
        }
        let mut grads = self.params.zeros_like();
        let mut node_grads: Vec<Option<Vec<f64>>> = vec![None; l + 1];
        node_grads[l] = Some(vec![1.0]);

        for n in (0..=l).rev() {
            let Some(g) = node_grads[n].take() else {
                continue;
            };
            if !self.needs_grad[n] {
                continue;
            }
            let y = &self.values[n];
            match &self.ops[n] {
                Op::Input => {}
                Op::Param(id) => axpy(1.0, &g, grads.get_mut(*id).data_mut()),
                Op::Column { param, col } => {
                    let m = grads.get_mut(*param);
                    for (r, gr) in g.iter().enumerate() {
                        let v = m.get(r, *col);
                        m.set(r, *col, v + gr);
                    }
                }
                Op::Dense { terms, bias, act } => {
                    let gp: Vec<f64> = if *act == Activation::Identity {
                        g
                    } else {
                        g.iter()
                            .zip(y)
                            .map(|(gi, yi)| gi * act.derivative_from_output(*yi))
                            .collect()
                    };
                    for &(w, xi) in terms {
                        let wm = self.params.get(w);
                        let xv = &self.values[xi];
                        let gw = grads.get_mut(w);
                        let cols = wm.cols();
                        let want_x = self.needs_grad[xi];
                        let mut gx = if want_x { vec![0.0; cols] } else { Vec::new() };
                        for (r, &gr) in gp.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            axpy(gr, xv, &mut gw.data_mut()[r * cols..(r + 1) * cols]);
                            if want_x {
                                axpy(gr, wm.row(r), &mut gx);
                            }
                        }
                        if want_x {
                            accumulate(&mut node_grads, xi, &gx);
                        }
                    }
                    if let Some(b) = bias {
                        if self.needs_grad[*b] {
                            accumulate(&mut node_grads, *b, &gp);
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.acc_if(&mut node_grads, *a, &g);
                    self.acc_if(&mut node_grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    self.acc_if(&mut node_grads, *a, &g);
                    if self.needs_grad[*b] {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        accumulate(&mut node_grads, *b, &neg);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs_grad[*a] {
                        let ga: Vec<f64> = g.iter().zip(&self.values[*b]).map(|(x, y)| x * y).collect();
                        accumulate(&mut node_grads, *a, &ga);
                    }
                    if self.needs_grad[*b] {
                        let gb: Vec<f64> = g.iter().zip(&self.values[*a]).map(|(x, y)| x * y).collect();
                        accumulate(&mut node_grads, *b, &gb);
                    }
                }
                Op::AddN(items) => {
                    for &i in items {
                        self.acc_if(&mut node_grads, i, &g);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                    accumulate(&mut node_grads, *a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                    accumulate(&mut node_grads, *a, &ga);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * yi).collect();
                    accumulate(&mut node_grads, *a, &ga);
                }
                Op::Ln(a) => {
                    let ga: Vec<f64> = g.iter().zip(&self.values[*a]).map(|(gi, xi)| gi / xi).collect();
                    accumulate(&mut node_grads, *a, &ga);
                }
                Op::OneMinus(a) => {
                    let ga: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut node_grads, *a, &ga);
                }
                Op::Scale(a, alpha) => {
                    let ga: Vec<f64> = g.iter().map(|v| alpha * v).collect();
                    accumulate(&mut node_grads, *a, &ga);
                }
                Op::Mask(a, mask) => {
                    let ga: Vec<f64> = g.iter().zip(mask).map(|(gi, m)| gi * m).collect();
                    accumulate(&mut node_grads, *a, &ga);
                }
                Op::Interp { gate, prev, cand } => {
                    let (z, p, c) = (&self.values[*gate], &self.values[*prev], &self.values[*cand]);
                    if self.needs_grad[*gate] {
                        let gz: Vec<f64> = (0..g.len()).map(|k| g[k] * (p[k] - c[k])).collect();
                        accumulate(&mut node_grads, *gate, &gz);
                    }
                    if self.needs_grad[*prev] {
                        let gpv: Vec<f64> = (0..g.len()).map(|k| g[k] * z[k]).collect();
                        accumulate(&mut node_grads, *prev, &gpv);
                    }
                    if self.needs_grad[*cand] {
                        let gc: Vec<f64> = (0..g.len()).map(|k| g[k] * (1.0 - z[k])).collect();
                        accumulate(&mut node_grads, *cand, &gc);
                    }
                }
                Op::Concat(a, b) => {
                    let na = self.values[*a].len();
                    self.acc_if(&mut node_grads, *a, &g[..na]);
                    self.acc_if(&mut node_grads, *b, &g[na..]);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.values[*a].len()];
                    accumulate(&mut node_grads, *a, &ga);
                }
                Op::Softmax(a) => {
                    let gy = dot(&g, y);
                    let ga: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| yi * (gi - gy)).collect();
                    accumulate(&mut node_grads, *a, &ga);
                }
                Op::SoftmaxXent { logits, target, weight } => {
                    let mut p = softmax(&self.values[*logits]);
                    p[*target] -= 1.0;
                    let scale = g[0] * weight;
                    p.iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut node_grads, *logits, &p);
                }
                Op::MixtureNll {
                    raw,
                    components,
                    target,
                    floor,
                } => {
                    let (_, mut d) = mixture_terms(&self.values[*raw], *components, *target, *floor);
                    d.iter_mut().for_each(|v| *v *= g[0]);
                    accumulate(&mut node_grads, *raw, &d);
                }
            }
        }
        Ok(grads)
    }

    fn acc_if(&self, node_grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
        if self.needs_grad[i] {
            accumulate(node_grads, i, g);
        }
    }
}

fn accumulate(node_grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    match &mut node_grads[i] {
        Some(acc) => axpy(1.0, g, acc),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Reverse-mode gradient of a scalar `loss` recorded on `tape`.
pub fn grad(tape: &Tape<'_>, loss: Var) -> Result<Gradients> {
    tape.backward(loss)
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Mixture negative log-likelihood and its gradient w.r.t. the raw outputs.
fn mixture_terms(raw: &[f64], m: usize, target: [f64; 2], floor: f64) -> (f64, Vec<f64>) {
    let logits = &raw[..m];
    let pmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let plse = pmax + logits.iter().map(|v| (v - pmax).exp()).sum::<f64>().ln();

    let mut log_terms = vec![0.0; m];
    let mut deviations = vec![[0.0f64; 2]; m];
    for j in 0..m {
        let mut lt = logits[j] - plse;
        for axis in 0..2 {
            let mu = raw[(1 + axis) * m + j];
            let delta = raw[(3 + axis) * m + j].exp().max(floor);
            let z = (target[axis] - mu) / delta;
            lt += -delta.ln() - HALF_LN_2PI - 0.5 * z * z;
            deviations[j][axis] = delta;
        }
        log_terms[j] = lt;
    }
    let tmax = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = tmax + log_terms.iter().map(|v| (v - tmax).exp()).sum::<f64>().ln();

    let mut d = vec![0.0; 5 * m];
    for j in 0..m {
        let post = (log_terms[j] - lse).exp();
        let prior = (logits[j] - plse).exp();
        d[j] = prior - post;
        for axis in 0..2 {
            let mu = raw[(1 + axis) * m + j];
            let delta = deviations[j][axis];
            let diff = target[axis] - mu;
            d[(1 + axis) * m + j] = -post * diff / (delta * delta);
            let clamped = raw[(3 + axis) * m + j].exp() < floor;
            d[(3 + axis) * m + j] = if clamped {
                0.0
            } else {
                -post * (diff * diff / (delta * delta) - 1.0)
            };
        }
    }
    (-lse, d)
}
