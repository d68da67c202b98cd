//! LSTM and GRU cells with one weight matrix per gate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Activation, Matrix, ParamId, ParamSet, Tape, Var};

/// Standard deviation of the Gaussian weight initializer.
pub const INIT_STD: f64 = 0.01;
/// Initial LSTM forget-gate bias.
pub const FORGET_BIAS: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CellKind::Lstm => "LSTM",
            CellKind::Gru => "GRU",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_i: ParamId,
    pub w_f: ParamId,
    pub w_o: ParamId,
    pub w_c: ParamId,
    pub u_i: ParamId,
    pub u_f: ParamId,
    pub u_o: ParamId,
    pub u_c: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_r: ParamId,
    pub w_z: ParamId,
    pub w: ParamId,
    pub u_r: ParamId,
    pub u_z: ParamId,
    pub u: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellParams {
    Lstm(LstmParams),
    Gru(GruParams),
}

/// Hidden state, plus the memory cell for LSTMs.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Option<Vec<f64>>,
}

impl CellState {
    pub fn zeros(kind: CellKind, hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: (kind == CellKind::Lstm).then(|| vec![0.0; hidden_dim]),
        }
    }
}

/// Gate activations and candidate state of one step.
#[derive(Clone, Debug, PartialEq)]
pub enum GateTrace {
    Lstm {
        input: Vec<f64>,
        forget: Vec<f64>,
        output: Vec<f64>,
        candidate: Vec<f64>,
    },
    Gru {
        reset: Vec<f64>,
        update: Vec<f64>,
        candidate: Vec<f64>,
    },
}

/// Tape-side counterpart of [`CellState`].
#[derive(Clone, Copy, Debug)]
pub struct TapeState {
    pub h: Var,
    pub c: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub enum TapeGates {
    Lstm { input: Var, forget: Var, output: Var, candidate: Var },
    Gru { reset: Var, update: Var, candidate: Var },
}

fn weight<R: Rng + ?Sized>(ps: &mut ParamSet, name: String, rows: usize, cols: usize, rng: &mut R) -> Result<ParamId> {
    ps.add(name, Matrix::gaussian(rows, cols, INIT_STD, rng))
}

fn bias(ps: &mut ParamSet, name: String, rows: usize, value: f64) -> Result<ParamId> {
    ps.add(name, Matrix::filled(rows, 1, value))
}

impl LstmParams {
    pub fn register<R: Rng + ?Sized>(ps: &mut ParamSet, prefix: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Result<Self> {
        check_dims(input_dim, hidden_dim)?;
        let (i, h) = (input_dim, hidden_dim);
        Ok(Self {
            input_dim,
            hidden_dim,
            w_i: weight(ps, format!("{prefix}.w_i"), h, i, rng)?,
            w_f: weight(ps, format!("{prefix}.w_f"), h, i, rng)?,
            w_o: weight(ps, format!("{prefix}.w_o"), h, i, rng)?,
            w_c: weight(ps, format!("{prefix}.w_c"), h, i, rng)?,
            u_i: weight(ps, format!("{prefix}.u_i"), h, h, rng)?,
            u_f: weight(ps, format!("{prefix}.u_f"), h, h, rng)?,
            u_o: weight(ps, format!("{prefix}.u_o"), h, h, rng)?,
            u_c: weight(ps, format!("{prefix}.u_c"), h, h, rng)?,
            b_i: bias(ps, format!("{prefix}.b_i"), h, 0.0)?,
            b_f: bias(ps, format!("{prefix}.b_f"), h, FORGET_BIAS)?,
            b_o: bias(ps, format!("{prefix}.b_o"), h, 0.0)?,
            b_c: bias(ps, format!("{prefix}.b_c"), h, 0.0)?,
        })
    }

    pub fn weights(&self) -> [ParamId; 8] {
        [self.w_i, self.w_f, self.w_o, self.w_c, self.u_i, self.u_f, self.u_o, self.u_c]
    }

    pub fn biases(&self) -> [ParamId; 4] {
        [self.b_i, self.b_f, self.b_o, self.b_c]
    }
}

impl GruParams {
    pub fn register<R: Rng + ?Sized>(ps: &mut ParamSet, prefix: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Result<Self> {
        check_dims(input_dim, hidden_dim)?;
        let (i, h) = (input_dim, hidden_dim);
        Ok(Self {
            input_dim,
            hidden_dim,
            w_r: weight(ps, format!("{prefix}.w_r"), h, i, rng)?,
            w_z: weight(ps, format!("{prefix}.w_z"), h, i, rng)?,
            w: weight(ps, format!("{prefix}.w"), h, i, rng)?,
            u_r: weight(ps, format!("{prefix}.u_r"), h, h, rng)?,
            u_z: weight(ps, format!("{prefix}.u_z"), h, h, rng)?,
            u: weight(ps, format!("{prefix}.u"), h, h, rng)?,
            b_r: bias(ps, format!("{prefix}.b_r"), h, 0.0)?,
            b_z: bias(ps, format!("{prefix}.b_z"), h, 0.0)?,
            b: bias(ps, format!("{prefix}.b"), h, 0.0)?,
        })
    }

    pub fn weights(&self) -> [ParamId; 6] {
        [self.w_r, self.w_z, self.w, self.u_r, self.u_z, self.u]
    }

    pub fn biases(&self) -> [ParamId; 3] {
        [self.b_r, self.b_z, self.b]
    }
}

fn check_dims(input_dim: usize, hidden_dim: usize) -> Result<()> {
    if input_dim == 0 || hidden_dim == 0 {
        return Err(Error::InvalidConfig(format!(
            "cell dimensions must be positive, got {input_dim}->{hidden_dim}"
        )));
    }
    Ok(())
}

/// Registers a fresh cell: Gaussian weights, zero biases, LSTM forget bias 5.
pub fn init_params<R: Rng + ?Sized>(
    ps: &mut ParamSet,
    prefix: &str,
    kind: CellKind,
    input_dim: usize,
    hidden_dim: usize,
    rng: &mut R,
) -> Result<CellParams> {
    Ok(match kind {
        CellKind::Lstm => CellParams::Lstm(LstmParams::register(ps, prefix, input_dim, hidden_dim, rng)?),
        CellKind::Gru => CellParams::Gru(GruParams::register(ps, prefix, input_dim, hidden_dim, rng)?),
    })
}

impl CellParams {
    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Gru(_) => CellKind::Gru,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.input_dim,
            CellParams::Gru(p) => p.input_dim,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.hidden_dim,
            CellParams::Gru(p) => p.hidden_dim,
        }
    }

    pub fn zero_state(&self, tape: &mut Tape<'_>) -> TapeState {
        let zeros = vec![0.0; self.hidden_dim()];
        let h = tape.input(&zeros);
        let c = matches!(self, CellParams::Lstm(_)).then(|| tape.input(&zeros));
        TapeState { h, c }
    }

    pub fn step_tape(&self, tape: &mut Tape<'_>, x: Var, s: TapeState) -> Result<(TapeState, TapeGates)> {
        match self {
            CellParams::Lstm(p) => lstm_step_tape(tape, p, x, s),
            CellParams::Gru(p) => gru_step_tape(tape, p, x, s),
        }
    }
}

pub fn lstm_step_tape(tape: &mut Tape<'_>, p: &LstmParams, x: Var, s: TapeState) -> Result<(TapeState, TapeGates)> {
    let c_prev = s
        .c
        .ok_or_else(|| Error::Shape("LSTM step needs a memory cell".into()))?;
    let h = s.h;
    let gate = |tape: &mut Tape<'_>, w, u, b, act| {
        let bias = tape.param(b);
        tape.dense(&[(w, x), (u, h)], Some(bias), act)
    };
    let i = gate(tape, p.w_i, p.u_i, p.b_i, Activation::Sigmoid)?;
    let f = gate(tape, p.w_f, p.u_f, p.b_f, Activation::Sigmoid)?;
    let o = gate(tape, p.w_o, p.u_o, p.b_o, Activation::Sigmoid)?;
    let cand = gate(tape, p.w_c, p.u_c, p.b_c, Activation::Tanh)?;
    let keep_new = tape.mul(i, cand)?;
    let keep_old = tape.mul(f, c_prev)?;
    let c = tape.add(keep_new, keep_old)?;
    let squashed = tape.tanh(c);
    let h_new = tape.mul(o, squashed)?;
    Ok((
        TapeState { h: h_new, c: Some(c) },
        TapeGates::Lstm {
            input: i,
            forget: f,
            output: o,
            candidate: cand,
        },
    ))
}

pub fn gru_step_tape(tape: &mut Tape<'_>, p: &GruParams, x: Var, s: TapeState) -> Result<(TapeState, TapeGates)> {
    let h = s.h;
    let b_r = tape.param(p.b_r);
    let b_z = tape.param(p.b_z);
    let b = tape.param(p.b);
    let r = tape.dense(&[(p.w_r, x), (p.u_r, h)], Some(b_r), Activation::Sigmoid)?;
    let z = tape.dense(&[(p.w_z, x), (p.u_z, h)], Some(b_z), Activation::Sigmoid)?;
    let rh = tape.mul(r, h)?;
    let cand = tape.dense(&[(p.w, x), (p.u, rh)], Some(b), Activation::Tanh)?;
    let h_new = tape.interp(z, h, cand)?;
    Ok((
        TapeState { h: h_new, c: None },
        TapeGates::Gru {
            reset: r,
            update: z,
            candidate: cand,
        },
    ))
}

fn check_step_input(input_dim: usize, hidden_dim: usize, x: &[f64], s: &CellState) -> Result<()> {
    if x.len() != input_dim {
        return Err(Error::Shape(format!("input of length {} for a {input_dim}-input cell", x.len())));
    }
    if s.h.len() != hidden_dim || s.c.as_ref().is_some_and(|c| c.len() != hidden_dim) {
        return Err(Error::Shape(format!("state does not match hidden size {hidden_dim}")));
    }
    Ok(())
}

/// One LSTM step as a pure function of parameters, input and state.
pub fn lstm_step(ps: &ParamSet, p: &LstmParams, x: &[f64], s: &CellState) -> Result<(CellState, GateTrace)> {
    check_step_input(p.input_dim, p.hidden_dim, x, s)?;
    let c = s
        .c
        .as_ref()
        .ok_or_else(|| Error::Shape("LSTM state without memory cell".into()))?;
    let mut tape = Tape::new(ps);
    let xv = tape.input(x);
    let st = TapeState {
        h: tape.input(&s.h),
        c: Some(tape.input(c)),
    };
    let (next, gates) = lstm_step_tape(&mut tape, p, xv, st)?;
    let TapeGates::Lstm { input, forget, output, candidate } = gates else {
        unreachable!()
    };
    Ok((
        CellState {
            h: tape.value(next.h).to_vec(),
            c: next.c.map(|c| tape.value(c).to_vec()),
        },
        GateTrace::Lstm {
            input: tape.value(input).to_vec(),
            forget: tape.value(forget).to_vec(),
            output: tape.value(output).to_vec(),
            candidate: tape.value(candidate).to_vec(),
        },
    ))
}

/// One GRU step as a pure function of parameters, input and state.
pub fn gru_step(ps: &ParamSet, p: &GruParams, x: &[f64], s: &CellState) -> Result<(CellState, GateTrace)> {
    check_step_input(p.input_dim, p.hidden_dim, x, s)?;
    let mut tape = Tape::new(ps);
    let xv = tape.input(x);
    let st = TapeState {
        h: tape.input(&s.h),
        c: None,
    };
    let (next, gates) = gru_step_tape(&mut tape, p, xv, st)?;
    let TapeGates::Gru { reset, update, candidate } = gates else {
        unreachable!()
    };
    Ok((
        CellState {
            h: tape.value(next.h).to_vec(),
            c: None,
        },
        GateTrace::Gru {
            reset: tape.value(reset).to_vec(),
            update: tape.value(update).to_vec(),
            candidate: tape.value(candidate).to_vec(),
        },
    ))
}
