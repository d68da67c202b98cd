use rand::Rng;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Whether stochastic regularizers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout: in training, each unit is zeroed with probability `p`
/// and survivors are scaled by `1 / (1 − p)`. Evaluation passes `v` through.
pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape<'_>, v: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("dropout probability {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(v);
    }
    let keep = 1.0 / (1.0 - p);
    let mask = (0..tape.dim(v))
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    tape.mask(v, mask)
}
