//! Adam, the plateau learning-rate rule, and the shared epoch driver.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Gradients, Matrix, ParamSet};

/// Which training statistic drives learning-rate decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    Loss,
    Metric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Epochs without improvement before the rate decays.
    pub patience: usize,
    pub decay: f64,
    pub min_lr: f64,
    /// Smallest change that counts as an improvement.
    pub min_improvement: f64,
    pub max_epochs: usize,
    pub monitor: Monitor,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            patience: 3,
            decay: 0.3,
            min_lr: 1e-6,
            min_improvement: 1e-5,
            max_epochs: 10,
            monitor: Monitor::Loss,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad(format!("decay {} must lie in (0, 1)", self.decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Matrix::zeros(t.rows(), t.cols()))
                .collect()
        };
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Matrix] {
        &self.first
    }

    pub fn second_moment(&self) -> &[Matrix] {
        &self.second
    }
}

/// One bias-corrected Adam update at learning rate `lr`. Nothing is changed
/// when a gradient entry is not finite.
pub fn adam_step(params: &mut ParamSet, grads: &Gradients, st: &mut AdamState, cfg: &OptConfig, lr: f64) -> Result<()> {
    if grads.len() != params.len() || st.first.len() != params.len() {
        return Err(Error::Shape("gradient table does not match parameters".into()));
    }
    for (p, g) in params.tensors().iter().zip(grads.tensors()) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
        }
    }
    if !grads.is_finite() {
        return Err(Error::Numerical("non-finite gradient; update skipped".into()));
    }
    st.step += 1;
    let t = st.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads.tensors()[i].data();
        let m = st.first[i].data_mut();
        let v = st.second[i].data_mut();
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            *w -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Learning rate after replaying the plateau rule over a loss-like history
/// (lower is better): every `patience` consecutive epochs without an
/// improvement of at least `min_improvement` multiply the rate by `decay`.
pub fn plateau_schedule(history: &[f64], cfg: &OptConfig) -> f64 {
    let mut lr = cfg.lr;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for &v in history {
        if v < best - cfg.min_improvement {
            best = v;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience.max(1) {
                lr = (lr * cfg.decay).max(cfg.min_lr);
                stale = 0;
            }
        }
    }
    lr
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub metric: f64,
    pub lr: f64,
}

impl EpochRecord {
    /// The record's value under `monitor`, oriented so lower is better.
    pub fn monitored(&self, monitor: Monitor) -> f64 {
        match monitor {
            Monitor::Loss => self.loss,
            Monitor::Metric => -self.metric,
        }
    }
}

/// Loss, gradient and task metric for one training sample.
pub struct SampleOutcome {
    pub loss: f64,
    pub grads: Gradients,
    pub metric: f64,
}

/// Shuffled mini-batch training with Adam and plateau decay.
///
/// Each sample is evaluated with its own RNG stream seeded from `rng`, so a
/// fixed seed reproduces the run exactly. Gradients are averaged over the
/// batch before the update.
pub fn run_epochs<S, R, F, C>(
    params: &mut ParamSet,
    corpus: &[S],
    cfg: &OptConfig,
    rng: &mut R,
    mut loss_fn: F,
    mut on_epoch: C,
) -> Result<Vec<EpochRecord>>
where
    R: Rng + ?Sized,
    F: FnMut(&ParamSet, &S, &mut ChaCha8Rng) -> Result<SampleOutcome>,
    C: FnMut(&EpochRecord),
{
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("training corpus is empty".into()));
    }
    let mut state = AdamState::new(params);
    let mut history: Vec<EpochRecord> = Vec::with_capacity(cfg.max_epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let monitored: Vec<f64> = history.iter().map(|r| r.monitored(cfg.monitor)).collect();
        let lr = plateau_schedule(&monitored, cfg);
        order.shuffle(rng);

        let (mut loss_sum, mut metric_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut total = params.zeros_like();
            for &i in batch {
                let mut sample_rng = ChaCha8Rng::seed_from_u64(rng.random());
                let out = loss_fn(params, &corpus[i], &mut sample_rng)?;
                loss_sum += out.loss;
                metric_sum += out.metric;
                total.add_assign(&out.grads);
            }
            total.scale(1.0 / batch.len() as f64);
            adam_step(params, &total, &mut state, cfg, lr)?;
        }
        let n = corpus.len() as f64;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n,
            metric: metric_sum / n,
            lr,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(history)
}
