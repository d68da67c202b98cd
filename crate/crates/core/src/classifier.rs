//! Stacked bidirectional recurrent classifier over line features.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{init_params, CellKind, CellParams, INIT_STD};
use crate::error::{Error, Result};
use crate::ink::{sequential_dropout, LineFeature};
use crate::numcore::{dropout, softmax, Activation, Gradients, Matrix, Mode, ParamId, ParamSet, Tape, Var};
use crate::optim::{run_epochs, EpochRecord, OptConfig, SampleOutcome};

/// Architecture `A → [B_1, …, B_n] → C → D` plus cell type and dropout rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub full_dim: usize,
    pub classes: usize,
    pub cell: CellKind,
    /// Rate for the pooled vector and the full-layer output.
    pub dropout_pool: f64,
    /// Rate for sequential dropout on training inputs.
    pub dropout_input: f64,
}

impl NetSpec {
    pub const PRESETS: [&'static str; 7] = ["net1", "net2", "net3", "net4", "net5", "net6", "desk-clf"];

    /// Named architecture. The `net*` presets ignore `classes` and keep the
    /// full 3755-class output.
    pub fn preset(name: &str, classes: usize) -> Option<Self> {
        let (hidden, full_dim, classes, cell) = match name {
            "net1" => (vec![500], 200, 3755, CellKind::Lstm),
            "net2" => (vec![500], 200, 3755, CellKind::Gru),
            "net3" => (vec![100, 500], 200, 3755, CellKind::Lstm),
            "net4" => (vec![100, 500], 200, 3755, CellKind::Gru),
            "net5" => (vec![100, 300, 500], 200, 3755, CellKind::Lstm),
            "net6" => (vec![100, 300, 500], 200, 3755, CellKind::Gru),
            "desk-clf" => (vec![32, 64], 64, classes, CellKind::Gru),
            _ => return None,
        };
        Some(Self {
            input_dim: 6,
            hidden,
            full_dim,
            classes,
            cell,
            dropout_pool: 0.1,
            dropout_input: 0.3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(1..=3).contains(&self.hidden.len()) {
            return bad(format!("{} recurrent layers; expected 1 to 3", self.hidden.len()));
        }
        if self.input_dim == 0 || self.full_dim == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return bad(format!("all dimensions of {self} must be positive"));
        }
        for p in [self.dropout_pool, self.dropout_input] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout probability {p} outside [0, 1)"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for NetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        write!(
            f,
            "{}→[{}]→{}→{} {}",
            self.input_dim,
            hidden.join(","),
            self.full_dim,
            self.classes,
            self.cell
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Bidirectional {
    forward: CellParams,
    backward: CellParams,
}

/// Parameter handles of a classifier; the values live in a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetSpec,
    layers: Vec<Bidirectional>,
    w_full: ParamId,
    b_full: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub net: Network,
    pub params: ParamSet,
}

/// A feature sequence with its class.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub feats: Vec<LineFeature>,
    pub label: usize,
}

/// Values produced by one pass through the network.
pub struct ForwardPass {
    pub pooled: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Network {
    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    fn register<R: Rng + ?Sized>(ps: &mut ParamSet, spec: &NetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.hidden.len());
        let mut input = spec.input_dim;
        for (l, &h) in spec.hidden.iter().enumerate() {
            layers.push(Bidirectional {
                forward: init_params(ps, &format!("layer{l}.fwd"), spec.cell, input, h, rng)?,
                backward: init_params(ps, &format!("layer{l}.bwd"), spec.cell, input, h, rng)?,
            });
            input = 2 * h;
        }
        let top = *spec.hidden.last().expect("validated");
        let w_full = ps.add("full.w", Matrix::gaussian(spec.full_dim, top, INIT_STD, rng))?;
        let b_full = ps.add("full.b", Matrix::zeros(spec.full_dim, 1))?;
        let w_out = ps.add("softmax.w", Matrix::gaussian(spec.classes, spec.full_dim, INIT_STD, rng))?;
        let b_out = ps.add("softmax.b", Matrix::zeros(spec.classes, 1))?;
        Ok(Self {
            spec: spec.clone(),
            layers,
            w_full,
            b_full,
            w_out,
            b_out,
        })
    }

    /// Records the forward pass on `tape`, returning the pooled vector and
    /// the logits.
    fn record<R: Rng + ?Sized>(&self, tape: &mut Tape<'_>, feats: &[LineFeature], mode: Mode, rng: &mut R) -> Result<(Var, Var)> {
        if feats.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut xs: Vec<Var> = feats.iter().map(|f| tape.input(f.as_slice())).collect();
        let mut top = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut fwd = Vec::with_capacity(xs.len());
            let mut s = layer.forward.zero_state(tape);
            for &x in &xs {
                s = layer.forward.step_tape(tape, x, s)?.0;
                fwd.push(s.h);
            }
            let mut bwd = Vec::with_capacity(xs.len());
            let mut s = layer.backward.zero_state(tape);
            for &x in xs.iter().rev() {
                s = layer.backward.step_tape(tape, x, s)?.0;
                bwd.push(s.h);
            }
            bwd.reverse();
            if l + 1 == self.layers.len() {
                top = fwd.into_iter().chain(bwd).collect();
            } else {
                xs = fwd
                    .into_iter()
                    .zip(bwd)
                    .map(|(a, b)| tape.concat(a, b))
                    .collect::<Result<_>>()?;
            }
        }
        let total = tape.add_n(&top)?;
        let pooled = tape.scale(total, 1.0 / top.len() as f64);
        let dropped = dropout(tape, pooled, self.spec.dropout_pool, mode, rng)?;
        let b_full = tape.param(self.b_full);
        let full = tape.dense(&[(self.w_full, dropped)], Some(b_full), Activation::Tanh)?;
        let full = dropout(tape, full, self.spec.dropout_pool, mode, rng)?;
        let b_out = tape.param(self.b_out);
        let logits = tape.dense(&[(self.w_out, full)], Some(b_out), Activation::Identity)?;
        Ok((pooled, logits))
    }

    pub fn forward<R: Rng + ?Sized>(&self, ps: &ParamSet, feats: &[LineFeature], mode: Mode, rng: &mut R) -> Result<ForwardPass> {
        let mut tape = Tape::new(ps);
        let (pooled, logits) = self.record(&mut tape, feats, mode, rng)?;
        Ok(ForwardPass {
            pooled: tape.value(pooled).to_vec(),
            probs: softmax(tape.value(logits)),
        })
    }

    /// `−log p(label)` for one sequence, its gradient, and the predicted
    /// distribution.
    pub fn sample_loss<R: Rng + ?Sized>(
        &self,
        ps: &ParamSet,
        feats: &[LineFeature],
        label: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, Gradients, Vec<f64>)> {
        self.check_label(label)?;
        let mut tape = Tape::new(ps);
        let (_, logits) = self.record(&mut tape, feats, mode, rng)?;
        let loss = tape.softmax_xent(logits, label, 1.0)?;
        let grads = tape.backward(loss)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {value}")));
        }
        Ok((value, grads, softmax(tape.value(logits))))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.spec.classes {
            return Err(Error::Label {
                label,
                classes: self.spec.classes,
            });
        }
        Ok(())
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl ClassifierModel {
    /// Fresh model with Gaussian(0, 0.01²) weights and zero biases.
    pub fn new<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Result<Self> {
        let mut params = ParamSet::new();
        let net = Network::register(&mut params, spec, rng)?;
        Ok(Self { net, params })
    }

    /// Rebuilds the parameter layout for `spec` around existing values.
    pub fn from_params(spec: &NetSpec, params: ParamSet) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fresh = Self::new(spec, &mut rng)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Config(format!(
                "{} tensors supplied for a network needing {}",
                params.len(),
                fresh.params.len()
            )));
        }
        for ((_, name, want), (_, got_name, got)) in fresh.params.iter().zip(params.iter()) {
            if name != got_name || want.shape() != got.shape() {
                return Err(Error::Config(format!(
                    "tensor {got_name} {:?} where {name} {:?} was expected",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Self { net: fresh.net, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.net.spec
    }

    /// Class probabilities. Dropout is applied only in [`Mode::Train`].
    pub fn forward<R: Rng + ?Sized>(&self, feats: &[LineFeature], mode: Mode, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.net.forward(&self.params, feats, mode, rng)?.probs)
    }

    /// Mean-pooled top-layer state before dropout.
    pub fn pooled(&self, feats: &[LineFeature]) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.net.forward(&self.params, feats, Mode::Eval, &mut rng)?.pooled)
    }

    pub fn predict(&self, feats: &[LineFeature]) -> Result<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(argmax(&self.forward(feats, Mode::Eval, &mut rng)?))
    }

    /// Mean negative log-likelihood over a batch.
    pub fn nll_loss<R: Rng + ?Sized>(&self, batch: &[Example], mode: Mode, rng: &mut R) -> Result<f64> {
        Ok(self.nll_loss_and_grad(batch, mode, rng)?.0)
    }

    /// Mean negative log-likelihood and its gradient.
    pub fn nll_loss_and_grad<R: Rng + ?Sized>(&self, batch: &[Example], mode: Mode, rng: &mut R) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut total = self.params.zeros_like();
        let mut loss = 0.0;
        for ex in batch {
            let (l, g, _) = self.net.sample_loss(&self.params, &ex.feats, ex.label, mode, rng)?;
            loss += l;
            total.add_assign(&g);
        }
        let n = batch.len() as f64;
        total.scale(1.0 / n);
        Ok((loss / n, total))
    }

    /// Mini-batch Adam training. Every presentation of a sample sees a fresh
    /// sequential-dropout draw of its features. The epoch metric is training
    /// accuracy.
    pub fn train<R, C>(&mut self, corpus: &[Example], opt: &OptConfig, rng: &mut R, on_epoch: C) -> Result<Vec<EpochRecord>>
    where
        R: Rng + ?Sized,
        C: FnMut(&EpochRecord),
    {
        for ex in corpus {
            self.net.check_label(ex.label)?;
        }
        let net = &self.net;
        let p_in = net.spec.dropout_input;
        run_epochs(
            &mut self.params,
            corpus,
            opt,
            rng,
            |ps, ex: &Example, r: &mut ChaCha8Rng| {
                let feats = sequential_dropout(&ex.feats, p_in, r)?;
                let (loss, grads, probs) = net.sample_loss(ps, &feats, ex.label, Mode::Train, r)?;
                let hit = argmax(&probs) == ex.label;
                Ok(SampleOutcome {
                    loss,
                    grads,
                    metric: if hit { 1.0 } else { 0.0 },
                })
            },
            on_epoch,
        )
    }

    /// Average of eval-mode outputs over `n_sub` sequential-dropout draws.
    ///
    /// Draws are taken in order from `rng`, so with equal seeds a smaller
    /// ensemble is a prefix of a larger one.
    pub fn predict_ensemble<R: Rng + ?Sized>(&self, feats: &[LineFeature], n_sub: usize, p: f64, rng: &mut R) -> Result<Vec<f64>> {
        if n_sub == 0 {
            return Err(Error::InvalidConfig("ensemble needs at least one sub-sequence".into()));
        }
        if feats.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut avg = vec![0.0; self.spec().classes];
        for _ in 0..n_sub {
            let sub = sequential_dropout(feats, p, rng)?;
            let probs = self.forward(&sub, Mode::Eval, rng)?;
            for (a, q) in avg.iter_mut().zip(probs) {
                *a += q;
            }
        }
        avg.iter_mut().for_each(|a| *a /= n_sub as f64);
        Ok(avg)
    }

    /// Accuracy report; `n_sub = 1, p = 0` is plain full-sequence evaluation.
    pub fn evaluate<R: Rng + ?Sized>(&self, examples: &[Example], n_sub: usize, p: f64, rng: &mut R) -> Result<EvalReport> {
        let mut predictions = Vec::with_capacity(examples.len());
        for ex in examples {
            self.net.check_label(ex.label)?;
            predictions.push(argmax(&self.predict_ensemble(&ex.feats, n_sub, p, rng)?));
        }
        let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
        Ok(EvalReport::from_predictions(&labels, &predictions, self.spec().classes))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes absent from the evaluated set.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Self {
        let mut confusion = vec![vec![0; classes]; classes];
        for (&l, &p) in labels.iter().zip(predictions) {
            confusion[l][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Self {
            accuracy: if labels.is_empty() {
                0.0
            } else {
                correct as f64 / labels.len() as f64
            },
            per_class_accuracy,
            confusion,
        }
    }
}
