//! Class-conditional GRU that draws characters as direction/pen-state tokens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cells::INIT_STD;
use crate::data_io::{CharacterSource, Drawn};
use crate::error::{Error, Result};
use crate::ink::{tokens_to_ink, GenToken, InkSequence, PenState};
use crate::numcore::{dropout, log_sum_exp, softmax, Activation, Gradients, Matrix, Mode, ParamId, ParamSet, Tape, Var};
use crate::optim::{run_epochs, EpochRecord, OptConfig, SampleOutcome};

/// Lower bound on mixture deviations after exponentiation.
pub const DEVIATION_FLOOR: f64 = 1e-6;

/// How the pen-state term enters the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenLoss {
    /// `Σ_i w^i s^i log p^i` with the configured weights.
    CostSensitive,
    /// `log Σ_i s^i p^i`, ignoring the weights.
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub classes: usize,
    pub embed_dim: usize,
    pub transform_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub mixtures: usize,
    pub dropout: f64,
    pub loss_weights: [f64; 3],
    pub max_len: usize,
    pub pen_loss: PenLoss,
    /// Score the direction of the end-of-char transition against (0, 0).
    pub terminal_direction: bool,
}

impl GenConfig {
    pub const PRESETS: [&'static str; 2] = ["gen-paper", "desk-gen"];

    /// Named configuration; `gen-paper` keeps the full 3755-class inventory.
    pub fn preset(name: &str, classes: usize) -> Option<Self> {
        let base = Self {
            classes,
            embed_dim: 32,
            transform_dim: 32,
            hidden_dim: 128,
            output_dim: 64,
            mixtures: 5,
            dropout: 0.3,
            loss_weights: [1.0, 5.0, 100.0],
            max_len: 200,
            pen_loss: PenLoss::CostSensitive,
            terminal_direction: false,
        };
        match name {
            // With 200 samples per class, dropout on o_t costs more sample
            // quality than it buys in generalization.
            "desk-gen" => Some(Self { dropout: 0.0, ..base }),
            "gen-paper" => Some(Self {
                classes: 3755,
                embed_dim: 500,
                transform_dim: 300,
                hidden_dim: 1000,
                output_dim: 300,
                mixtures: 30,
                ..base
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.classes,
            self.embed_dim,
            self.transform_dim,
            self.hidden_dim,
            self.output_dim,
            self.mixtures,
            self.max_len,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig("generator dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.loss_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidConfig("loss weights must be positive".into()));
        }
        Ok(())
    }
}

/// Handles of the generator's parameters; the values live in a [`ParamSet`].
/// Naming follows the recurrence: `w*` act on the previous hidden state,
/// `u*` on the transformed direction, `v*` on the transformed pen state and
/// `m*` on the class embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub cfg: GenConfig,
    pub w_d: ParamId,
    pub b_d: ParamId,
    pub w_s: ParamId,
    pub b_s: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub v_r: ParamId,
    pub m_r: ParamId,
    pub b_r: ParamId,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub v_z: ParamId,
    pub m_z: ParamId,
    pub b_z: ParamId,
    pub w: ParamId,
    pub u: ParamId,
    pub v: ParamId,
    pub m: ParamId,
    pub b: ParamId,
    pub w_o: ParamId,
    pub u_o: ParamId,
    pub v_o: ParamId,
    pub m_o: ParamId,
    pub b_o: ParamId,
    pub w_gmm: ParamId,
    pub b_gmm: ParamId,
    pub w_softmax: ParamId,
    pub b_softmax: ParamId,
    pub embedding: ParamId,
}

/// Per-component mixture weights, means and deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
}

/// Probabilities of pen-down, pen-up and end-of-char.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenStateProbs(pub [f64; 3]);

/// Intermediate vectors of one recurrence step.
#[derive(Clone, Debug, PartialEq)]
pub struct GenStepTrace {
    pub direction: Vec<f64>,
    pub pen: Vec<f64>,
    pub reset: Vec<f64>,
    pub update: Vec<f64>,
    pub candidate: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

/// A sampled character with the tokens that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledCharacter {
    pub ink: InkSequence,
    pub tokens: Vec<GenToken>,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenModel {
    pub net: GenParams,
    pub params: ParamSet,
}

/// Class-dependent parts of every gate, computed once per sequence.
struct Conditioning {
    reset: Var,
    update: Var,
    candidate: Var,
    output: Var,
}

struct StepVars {
    direction: Var,
    pen: Var,
    reset: Var,
    update: Var,
    candidate: Var,
    hidden: Var,
    output: Var,
}

impl MixtureParams {
    /// Softmax weights, identity means, exponentiated deviations (floored)
    /// from `5M` raw values in blocks `[π̂ | μ̂x | μ̂y | δ̂x | δ̂y]`.
    pub fn from_raw(raw: &[f64], components: usize) -> Result<Self> {
        if components == 0 || raw.len() != 5 * components {
            return Err(Error::Shape(format!("{} raw values for {components} components", raw.len())));
        }
        let block = |k: usize| &raw[k * components..(k + 1) * components];
        let dev = |k: usize| block(k).iter().map(|v| v.exp().max(DEVIATION_FLOOR)).collect();
        Ok(Self {
            weights: softmax(block(0)),
            mu_x: block(1).to_vec(),
            mu_y: block(2).to_vec(),
            sigma_x: dev(3),
            sigma_y: dev(4),
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn log_density(&self, dx: f64, dy: f64) -> f64 {
        let terms: Vec<f64> = (0..self.components())
            .map(|j| {
                self.weights[j].ln() + log_normal(dx, self.mu_x[j], self.sigma_x[j]) + log_normal(dy, self.mu_y[j], self.sigma_y[j])
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// Picks a component by weight, then draws each axis independently.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut j = self.components() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                j = k;
                break;
            }
        }
        let nx = Normal::new(self.mu_x[j], self.sigma_x[j]).expect("positive deviation");
        let ny = Normal::new(self.mu_y[j], self.sigma_y[j]).expect("positive deviation");
        (nx.sample(rng), ny.sample(rng))
    }

    /// `Σ_j π^j μ^j`.
    pub fn mean(&self) -> (f64, f64) {
        let dot = |m: &[f64]| self.weights.iter().zip(m).map(|(w, v)| w * v).sum();
        (dot(&self.mu_x), dot(&self.mu_y))
    }
}

fn log_normal(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Density of the mixture at `(dx, dy)`, evaluated in log space.
pub fn gmm_density(mix: &MixtureParams, dx: f64, dy: f64) -> f64 {
    mix.log_density(dx, dy).exp()
}

impl PenStateProbs {
    /// Most probable state; ties go to the lower index.
    pub fn hard_max(&self) -> PenState {
        let mut best = 0;
        for i in 1..3 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        PenState::from_index(best).expect("three states")
    }
}

/// `k` classes whose embedding columns are closest to `class_id`'s in
/// Euclidean distance, excluding `class_id`; ties go to the lower index.
pub fn nearest_neighbors(embedding: &Matrix, class_id: usize, k: usize) -> Result<Vec<usize>> {
    let n = embedding.cols();
    if class_id >= n {
        return Err(Error::Label { label: class_id, classes: n });
    }
    if k >= n {
        return Err(Error::InvalidConfig(format!("{k} neighbors requested among {n} classes")));
    }
    let query = embedding.column_values(class_id);
    let mut dist: Vec<(f64, usize)> = (0..n)
        .filter(|&c| c != class_id)
        .map(|c| {
            let d: f64 = embedding.column_values(c).iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, c)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(dist.into_iter().take(k).map(|(_, c)| c).collect())
}

/// Checks that tokens are finite and end with a single end-of-char.
pub fn validate_tokens(tokens: &[GenToken]) -> Result<()> {
    let Some(last) = tokens.last() else {
        return Err(Error::Token("no tokens".into()));
    };
    if last.pen != PenState::End {
        return Err(Error::Token("sequence does not end with end-of-char".into()));
    }
    if let Some(i) = tokens[..tokens.len() - 1].iter().position(|t| t.pen == PenState::End) {
        return Err(Error::Token(format!("end-of-char at position {i} before the end")));
    }
    if tokens.iter().any(|t| !t.dx.is_finite() || !t.dy.is_finite()) {
        return Err(Error::Token("non-finite direction".into()));
    }
    Ok(())
}

impl GenParams {
    fn register<R: Rng + ?Sized>(ps: &mut ParamSet, cfg: &GenConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (d, t, h, o, m) = (cfg.embed_dim, cfg.transform_dim, cfg.hidden_dim, cfg.output_dim, cfg.mixtures);
        let mut w = |name: &str, rows: usize, cols: usize| ps.add(name, Matrix::gaussian(rows, cols, INIT_STD, rng));
        let w_d = w("in.w_d", t, 2)?;
        let w_s = w("in.w_s", t, 3)?;
        let (w_r, u_r, v_r, m_r) = (w("gru.w_r", h, h)?, w("gru.u_r", h, t)?, w("gru.v_r", h, t)?, w("gru.m_r", h, d)?);
        let (w_z, u_z, v_z, m_z) = (w("gru.w_z", h, h)?, w("gru.u_z", h, t)?, w("gru.v_z", h, t)?, w("gru.m_z", h, d)?);
        let (w_c, u_c, v_c, m_c) = (w("gru.w", h, h)?, w("gru.u", h, t)?, w("gru.v", h, t)?, w("gru.m", h, d)?);
        let (w_o, u_o, v_o, m_o) = (w("out.w_o", o, h)?, w("out.u_o", o, t)?, w("out.v_o", o, t)?, w("out.m_o", o, d)?);
        let w_gmm = w("head.w_gmm", 5 * m, o)?;
        let w_softmax = w("head.w_softmax", 3, o)?;
        let embedding = w("embedding", d, cfg.classes)?;
        let mut b = |name: &str, rows: usize| ps.add(name, Matrix::zeros(rows, 1));
        Ok(Self {
            cfg: cfg.clone(),
            w_d,
            b_d: b("in.b_d", t)?,
            w_s,
            b_s: b("in.b_s", t)?,
            w_r,
            u_r,
            v_r,
            m_r,
            b_r: b("gru.b_r", h)?,
            w_z,
            u_z,
            v_z,
            m_z,
            b_z: b("gru.b_z", h)?,
            w: w_c,
            u: u_c,
            v: v_c,
            m: m_c,
            b: b("gru.b", h)?,
            w_o,
            u_o,
            v_o,
            m_o,
            b_o: b("out.b_o", o)?,
            w_gmm,
            b_gmm: b("head.b_gmm", 5 * m)?,
            w_softmax,
            b_softmax: b("head.b_softmax", 3)?,
            embedding,
        })
    }

    fn check_class(&self, class_id: usize) -> Result<()> {
        if class_id >= self.cfg.classes {
            return Err(Error::Label {
                label: class_id,
                classes: self.cfg.classes,
            });
        }
        Ok(())
    }

    fn condition(&self, tape: &mut Tape<'_>, class_id: usize) -> Result<Conditioning> {
        self.check_class(class_id)?;
        let c = tape.column(self.embedding, class_id)?;
        let mut part = |m: ParamId, b: ParamId| {
            let bias = tape.param(b);
            tape.dense(&[(m, c)], Some(bias), Activation::Identity)
        };
        Ok(Conditioning {
            reset: part(self.m_r, self.b_r)?,
            update: part(self.m_z, self.b_z)?,
            candidate: part(self.m, self.b)?,
            output: part(self.m_o, self.b_o)?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn step<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        cond: &Conditioning,
        h_prev: Var,
        d: Var,
        s: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<StepVars> {
        let b_d = tape.param(self.b_d);
        let direction = tape.dense(&[(self.w_d, d)], Some(b_d), Activation::Tanh)?;
        let b_s = tape.param(self.b_s);
        let pen = tape.dense(&[(self.w_s, s)], Some(b_s), Activation::Tanh)?;
        let reset = tape.dense(
            &[(self.w_r, h_prev), (self.u_r, direction), (self.v_r, pen)],
            Some(cond.reset),
            Activation::Sigmoid,
        )?;
        let update = tape.dense(
            &[(self.w_z, h_prev), (self.u_z, direction), (self.v_z, pen)],
            Some(cond.update),
            Activation::Sigmoid,
        )?;
        let gated = tape.mul(reset, h_prev)?;
        let candidate = tape.dense(
            &[(self.w, gated), (self.u, direction), (self.v, pen)],
            Some(cond.candidate),
            Activation::Tanh,
        )?;
        let hidden = tape.interp(update, h_prev, candidate)?;
        let output = tape.dense(
            &[(self.w_o, hidden), (self.u_o, direction), (self.v_o, pen)],
            Some(cond.output),
            Activation::Tanh,
        )?;
        let output = dropout(tape, output, self.cfg.dropout, mode, rng)?;
        Ok(StepVars {
            direction,
            pen,
            reset,
            update,
            candidate,
            hidden,
            output,
        })
    }

    fn head_raw(&self, ps: &ParamSet, w: ParamId, b: ParamId, o: &[f64]) -> Result<Vec<f64>> {
        let mut out = ps.get(w).matvec(o)?;
        for (v, bias) in out.iter_mut().zip(ps.get(b).data()) {
            *v += bias;
        }
        Ok(out)
    }

    /// One recurrence step from explicit inputs.
    #[allow(clippy::too_many_arguments)]
    pub fn gen_step<R: Rng + ?Sized>(
        &self,
        ps: &ParamSet,
        h_prev: &[f64],
        d: [f64; 2],
        s: [f64; 3],
        class_id: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>, GenStepTrace)> {
        if h_prev.len() != self.cfg.hidden_dim {
            return Err(Error::Shape(format!(
                "hidden state of length {} for hidden size {}",
                h_prev.len(),
                self.cfg.hidden_dim
            )));
        }
        let mut tape = Tape::new(ps);
        let cond = self.condition(&mut tape, class_id)?;
        let (h, dv, sv) = (tape.input(h_prev), tape.input(&d), tape.input(&s));
        let v = self.step(&mut tape, &cond, h, dv, sv, mode, rng)?;
        let val = |x: Var| tape.value(x).to_vec();
        let trace = GenStepTrace {
            direction: val(v.direction),
            pen: val(v.pen),
            reset: val(v.reset),
            update: val(v.update),
            candidate: val(v.candidate),
            hidden: val(v.hidden),
            output: val(v.output),
        };
        Ok((trace.hidden.clone(), trace.output.clone(), trace))
    }

    pub fn gmm_head(&self, ps: &ParamSet, o: &[f64]) -> Result<MixtureParams> {
        MixtureParams::from_raw(&self.head_raw(ps, self.w_gmm, self.b_gmm, o)?, self.cfg.mixtures)
    }

    pub fn pen_head(&self, ps: &ParamSet, o: &[f64]) -> Result<PenStateProbs> {
        let p = softmax(&self.head_raw(ps, self.w_softmax, self.b_softmax, o)?);
        Ok(PenStateProbs([p[0], p[1], p[2]]))
    }

    /// Teacher-forced loss summed over steps: step `t` reads token `t − 1`
    /// (a zero token at the start) and is scored on token `t`.
    fn record_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        tokens: &[GenToken],
        class_id: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        validate_tokens(tokens)?;
        let cond = self.condition(tape, class_id)?;
        let mut h = tape.input(&vec![0.0; self.cfg.hidden_dim]);
        let (mut d_in, mut s_in) = ([0.0; 2], [0.0; 3]);
        let mut terms = Vec::with_capacity(2 * tokens.len());
        for target in tokens {
            let (dv, sv) = (tape.input(&d_in), tape.input(&s_in));
            let v = self.step(tape, &cond, h, dv, sv, mode, rng)?;
            h = v.hidden;
            if target.pen != PenState::End || self.cfg.terminal_direction {
                let b = tape.param(self.b_gmm);
                let raw = tape.dense(&[(self.w_gmm, v.output)], Some(b), Activation::Identity)?;
                terms.push(tape.mixture_nll(raw, self.cfg.mixtures, [target.dx, target.dy], DEVIATION_FLOOR)?);
            }
            let b = tape.param(self.b_softmax);
            let logits = tape.dense(&[(self.w_softmax, v.output)], Some(b), Activation::Identity)?;
            let k = target.pen.index();
            terms.push(match self.cfg.pen_loss {
                PenLoss::CostSensitive => tape.softmax_xent(logits, k, self.cfg.loss_weights[k])?,
                PenLoss::Plain => {
                    let p = tape.softmax(logits)?;
                    let picked = tape.mask(p, target.pen.one_hot().to_vec())?;
                    let total = tape.sum(picked)?;
                    let log = tape.ln(total);
                    tape.scale(log, -1.0)
                }
            });
            d_in = [target.dx, target.dy];
            s_in = target.pen.one_hot();
        }
        tape.add_n(&terms)
    }

    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        ps: &ParamSet,
        tokens: &[GenToken],
        class_id: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(ps);
        let loss = self.record_loss(&mut tape, tokens, class_id, mode, rng)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite generator loss {value}")));
        }
        Ok((value, tape.backward(loss)?))
    }

    pub fn sample_character<R: Rng + ?Sized>(&self, ps: &ParamSet, class_id: usize, rng: &mut R, max_len: usize) -> Result<SampledCharacter> {
        self.check_class(class_id)?;
        let mut h = vec![0.0; self.cfg.hidden_dim];
        let (mut d, mut s) = ([0.0; 2], [0.0; 3]);
        let mut tokens = Vec::new();
        let mut truncated = true;
        for _ in 0..max_len {
            let (h_next, o, _) = self.gen_step(ps, &h, d, s, class_id, Mode::Eval, rng)?;
            h = h_next;
            let pen = self.pen_head(ps, &o)?.hard_max();
            if pen == PenState::End {
                tokens.push(GenToken::end());
                truncated = false;
                break;
            }
            let (dx, dy) = self.gmm_head(ps, &o)?.sample(rng);
            tokens.push(GenToken { dx, dy, pen });
            d = [dx, dy];
            s = pen.one_hot();
        }
        Ok(SampledCharacter {
            ink: tokens_to_ink(&tokens, (0.0, 0.0), Some(class_id)),
            tokens,
            truncated,
        })
    }
}

/// Training pair for the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct GenExample {
    pub tokens: Vec<GenToken>,
    pub class_id: usize,
}

impl GenModel {
    /// Fresh model: Gaussian(0, 0.01²) weights and embedding, zero biases.
    pub fn new<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Result<Self> {
        let mut params = ParamSet::new();
        let net = GenParams::register(&mut params, cfg, rng)?;
        Ok(Self { net, params })
    }

    /// Rebuilds the parameter layout for `cfg` around existing values.
    pub fn from_params(cfg: &GenConfig, params: ParamSet) -> Result<Self> {
        let fresh = Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        if fresh.params.len() != params.len() {
            return Err(Error::Config(format!(
                "{} tensors supplied for a generator needing {}",
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

    pub fn config(&self) -> &GenConfig {
        &self.net.cfg
    }

    pub fn embedding(&self) -> &Matrix {
        self.params.get(self.net.embedding)
    }

    pub fn gen_step<R: Rng + ?Sized>(
        &self,
        h_prev: &[f64],
        d: [f64; 2],
        s: [f64; 3],
        class_id: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>, GenStepTrace)> {
        self.net.gen_step(&self.params, h_prev, d, s, class_id, mode, rng)
    }

    pub fn gmm_head(&self, o: &[f64]) -> Result<MixtureParams> {
        self.net.gmm_head(&self.params, o)
    }

    pub fn pen_head(&self, o: &[f64]) -> Result<PenStateProbs> {
        self.net.pen_head(&self.params, o)
    }

    pub fn gen_loss<R: Rng + ?Sized>(&self, tokens: &[GenToken], class_id: usize, mode: Mode, rng: &mut R) -> Result<f64> {
        Ok(self.net.loss_and_grad(&self.params, tokens, class_id, mode, rng)?.0)
    }

    pub fn gen_loss_and_grad<R: Rng + ?Sized>(
        &self,
        tokens: &[GenToken],
        class_id: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, Gradients)> {
        self.net.loss_and_grad(&self.params, tokens, class_id, mode, rng)
    }

    /// Mini-batch Adam on per-character losses. The epoch metric is the mean
    /// loss per predicted token.
    pub fn train<R, C>(&mut self, corpus: &[GenExample], opt: &OptConfig, rng: &mut R, on_epoch: C) -> Result<Vec<EpochRecord>>
    where
        R: Rng + ?Sized,
        C: FnMut(&EpochRecord),
    {
        for ex in corpus {
            self.net.check_class(ex.class_id)?;
            validate_tokens(&ex.tokens)?;
        }
        let net = &self.net;
        run_epochs(
            &mut self.params,
            corpus,
            opt,
            rng,
            |ps, ex: &GenExample, r: &mut ChaCha8Rng| {
                let (loss, grads) = net.loss_and_grad(ps, &ex.tokens, ex.class_id, Mode::Train, r)?;
                Ok(SampleOutcome {
                    loss,
                    grads,
                    metric: loss / ex.tokens.len() as f64,
                })
            },
            on_epoch,
        )
    }

    pub fn sample_character<R: Rng + ?Sized>(&self, class_id: usize, rng: &mut R, max_len: usize) -> Result<SampledCharacter> {
        self.net.sample_character(&self.params, class_id, rng, max_len)
    }

    pub fn nearest_neighbors(&self, class_id: usize, k: usize) -> Result<Vec<usize>> {
        nearest_neighbors(self.embedding(), class_id, k)
    }
}

impl CharacterSource for GenModel {
    fn classes(&self) -> usize {
        self.net.cfg.classes
    }

    fn draw(&self, class_id: usize, rng: &mut ChaCha8Rng) -> Result<Drawn> {
        let s = self.sample_character(class_id, rng, self.net.cfg.max_len)?;
        Ok(Drawn {
            ink: s.ink,
            truncated: s.truncated,
        })
    }
}
