//! Recurrent unit step functions and parameter accounting.
//!
//! Three units are supported: the Elman cell, the LSTM cell with diagonal
//! peephole connections (setting the peephole vectors to zero recovers the
//! vanilla LSTM), and the GRU. State is kept per series while weights are
//! shared globally across the whole collection.

use crate::autodiff::{ParamId, ParamSet, Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Ernn,
    LstmPeephole,
    Gru,
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellKind::Ernn => write!(f, "ernn"),
            CellKind::LstmPeephole => write!(f, "lstm_peephole"),
            CellKind::Gru => write!(f, "gru"),
        }
    }
}

/// Per-gate weights of one recurrent layer, held as ids into a [`ParamSet`].
#[derive(Debug, Clone)]
pub enum CellParams {
    Ernn {
        w_i: ParamId,
        v_i: ParamId,
        b_i: ParamId,
        w_o: ParamId,
        b_o: ParamId,
    },
    LstmPeephole {
        // gate order: input, output, forget, candidate
        w: [ParamId; 4],
        v: [ParamId; 4],
        b: [ParamId; 4],
        p_i: ParamId,
        p_o: ParamId,
        p_f: ParamId,
    },
    Gru {
        // gate order: update, reset, candidate
        w: [ParamId; 3],
        v: [ParamId; 3],
        b: [ParamId; 3],
    },
}

/// Hidden state of one layer at one time step, as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct CellState {
    pub h: Var,
    pub c: Option<Var>,
}

impl CellParams {
    /// Creates the layer's parameters: weights drawn from Normal(0, init_sigma^2),
    /// biases zero.
    pub fn create(
        kind: CellKind,
        input_size: usize,
        dim: usize,
        init_sigma: f64,
        prefix: &str,
        params: &mut ParamSet,
        rng: &mut Rng,
    ) -> Self {
        fn weight(
            params: &mut ParamSet,
            rng: &mut Rng,
            sigma: f64,
            name: String,
            shape: Shape,
        ) -> ParamId {
            let mut t = Tensor::zeros(shape);
            t.randomize_normal(sigma, rng);
            params.add(name, t)
        }
        fn bias(params: &mut ParamSet, name: String, dim: usize) -> ParamId {
            params.add(name, Tensor::zeros(Shape::Vector(dim)))
        }
        match kind {
            CellKind::Ernn => {
                let w_i = weight(
                    params,
                    rng,
                    init_sigma,
                    format!("{prefix}.w_i"),
                    Shape::Matrix(dim, dim),
                );
                let v_i = weight(
                    params,
                    rng,
                    init_sigma,
                    format!("{prefix}.v_i"),
                    Shape::Matrix(dim, input_size),
                );
                let w_o = weight(
                    params,
                    rng,
                    init_sigma,
                    format!("{prefix}.w_o"),
                    Shape::Matrix(dim, dim),
                );
                let b_i = bias(params, format!("{prefix}.b_i"), dim);
                let b_o = bias(params, format!("{prefix}.b_o"), dim);
                CellParams::Ernn {
                    w_i,
                    v_i,
                    b_i,
                    w_o,
                    b_o,
                }
            }
            CellKind::LstmPeephole => {
                let gates = ["i", "o", "f", "c"];
                let w = gates.map(|g| {
                    weight(
                        params,
                        rng,
                        init_sigma,
                        format!("{prefix}.w_{g}"),
                        Shape::Matrix(dim, dim),
                    )
                });
                let v = gates.map(|g| {
                    weight(
                        params,
                        rng,
                        init_sigma,
                        format!("{prefix}.v_{g}"),
                        Shape::Matrix(dim, input_size),
                    )
                });
                let b = gates.map(|g| bias(params, format!("{prefix}.b_{g}"), dim));
                let p_i = weight(
                    params,
                    rng,
                    init_sigma,
                    format!("{prefix}.p_i"),
                    Shape::Vector(dim),
                );
                let p_o = weight(
                    params,
                    rng,
                    init_sigma,
                    format!("{prefix}.p_o"),
                    Shape::Vector(dim),
                );
                let p_f = weight(
                    params,
                    rng,
                    init_sigma,
                    format!("{prefix}.p_f"),
                    Shape::Vector(dim),
                );
                CellParams::LstmPeephole {
                    w,
                    v,
                    b,
                    p_i,
                    p_o,
                    p_f,
                }
            }
            CellKind::Gru => {
                let gates = ["u", "r", "h"];
                let w = gates.map(|g| {
                    weight(
                        params,
                        rng,
                        init_sigma,
                        format!("{prefix}.w_{g}"),
                        Shape::Matrix(dim, dim),
                    )
                });
                let v = gates.map(|g| {
                    weight(
                        params,
                        rng,
                        init_sigma,
                        format!("{prefix}.v_{g}"),
                        Shape::Matrix(dim, input_size),
                    )
                });
                let b = gates.map(|g| bias(params, format!("{prefix}.b_{g}"), dim));
                CellParams::Gru { w, v, b }
            }
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Ernn { .. } => CellKind::Ernn,
            CellParams::LstmPeephole { .. } => CellKind::LstmPeephole,
            CellParams::Gru { .. } => CellKind::Gru,
        }
    }

    /// Zero state at the start of a series.
    pub fn initial_state(&self, dim: usize, tape: &mut Tape) -> CellState {
        let h = tape.constant(Tensor::zeros(Shape::Vector(dim)));
        let c = match self {
            CellParams::LstmPeephole { .. } => {
                Some(tape.constant(Tensor::zeros(Shape::Vector(dim))))
            }
            _ => None,
        };
        CellState { h, c }
    }

    /// One recurrent step: consumes the previous state and the input vector,
    /// returns the new state and the cell output.
    pub fn step(&self, tape: &mut Tape, state: CellState, x: Var) -> Result<(CellState, Var)> {
        match self {
            CellParams::Ernn {
                w_i,
                v_i,
                b_i,
                w_o,
                b_o,
            } => {
                let (w_i, v_i, b_i) = (tape.param(*w_i), tape.param(*v_i), tape.param(*b_i));
                let (w_o, b_o) = (tape.param(*w_o), tape.param(*b_o));
                let rec = tape.affine(w_i, state.h, Some(b_i))?;
                let inp = tape.affine(v_i, x, None)?;
                let pre = tape.add(rec, inp)?;
                let h = tape.sigmoid(pre)?;
                let out_pre = tape.affine(w_o, h, Some(b_o))?;
                let z = tape.tanh(out_pre)?;
                Ok((CellState { h, c: None }, z))
            }
            CellParams::LstmPeephole {
                w,
                v,
                b,
                p_i,
                p_o,
                p_f,
            } => {
                let c_prev = state.c.ok_or_else(|| {
                    Error::Contract("lstm step called without a cell state".into())
                })?;
                let gate_pre =
                    |tape: &mut Tape, g: usize, peep: Option<(ParamId, Var)>| -> Result<Var> {
                        let wv = tape.param(w[g]);
                        let vv = tape.param(v[g]);
                        let bv = tape.param(b[g]);
                        let rec = tape.affine(wv, state.h, Some(bv))?;
                        let inp = tape.affine(vv, x, None)?;
                        let mut pre = tape.add(rec, inp)?;
                        if let Some((p, c)) = peep {
                            let pv = tape.param(p);
                            let pc = tape.hadamard(pv, c)?;
                            pre = tape.add(pre, pc)?;
                        }
                        Ok(pre)
                    };
                let i_pre = gate_pre(tape, 0, Some((*p_i, c_prev)))?;
                let i = tape.sigmoid(i_pre)?;
                let f_pre = gate_pre(tape, 2, Some((*p_f, c_prev)))?;
                let f = tape.sigmoid(f_pre)?;
                let cand_pre = gate_pre(tape, 3, None)?;
                let cand = tape.tanh(cand_pre)?;
                let ic = tape.hadamard(i, cand)?;
                let fc = tape.hadamard(f, c_prev)?;
                let c_new = tape.add(ic, fc)?;
                let o_pre = gate_pre(tape, 1, Some((*p_o, c_new)))?;
                let o = tape.sigmoid(o_pre)?;
                let c_tanh = tape.tanh(c_new)?;
                let h = tape.hadamard(o, c_tanh)?;
                Ok((CellState { h, c: Some(c_new) }, h))
            }
            CellParams::Gru { w, v, b } => {
                let gate = |tape: &mut Tape, g: usize| -> Result<Var> {
                    let wv = tape.param(w[g]);
                    let vv = tape.param(v[g]);
                    let bv = tape.param(b[g]);
                    let rec = tape.affine(wv, state.h, Some(bv))?;
                    let inp = tape.affine(vv, x, None)?;
                    let pre = tape.add(rec, inp)?;
                    tape.sigmoid(pre)
                };
                let u = gate(tape, 0)?;
                let r = gate(tape, 1)?;
                let rh = tape.hadamard(r, state.h)?;
                let w_h = tape.param(w[2]);
                let v_h = tape.param(v[2]);
                let b_h = tape.param(b[2]);
                let rec = tape.affine(w_h, rh, Some(b_h))?;
                let inp = tape.affine(v_h, x, None)?;
                let cand_pre = tape.add(rec, inp)?;
                let cand = tape.tanh(cand_pre)?;
                let u_cand = tape.hadamard(u, cand)?;
                let keep = tape.one_minus(u)?;
                let kh = tape.hadamard(keep, state.h)?;
                let h = tape.add(u_cand, kh)?;
                Ok((CellState { h, c: None }, h))
            }
        }
    }
}

/// Trainable parameters of the recurrent core for one layer.
fn layer_param_count(kind: CellKind, input_size: usize, dim: usize) -> usize {
    let gate = dim * (dim + input_size + 1);
    match kind {
        CellKind::Ernn => gate + dim * (dim + 1),
        CellKind::LstmPeephole => 4 * gate + 3 * dim,
        CellKind::Gru => 3 * gate,
    }
}

/// Total recurrent-core parameters across layers; upper layers take the
/// previous layer's output (dimension d) as input. Excludes the final
/// projection layer.
pub fn param_count(kind: CellKind, input_size: usize, dim: usize, layers: usize) -> usize {
    let mut total = layer_param_count(kind, input_size, dim);
    for _ in 1..layers {
        total += layer_param_count(kind, dim, dim);
    }
    total
}

/// Largest cell dimension whose parameter count fits the budget.
pub fn dim_from_param_budget(
    kind: CellKind,
    input_size: usize,
    layers: usize,
    budget: usize,
) -> Result<usize> {
    if param_count(kind, input_size, 1, layers) > budget {
        return Err(Error::Sizing(format!(
            "parameter budget {budget} is below the d=1 cost {} for {kind} with input size {input_size}",
            param_count(kind, input_size, 1, layers)
        )));
    }
    let mut d = 1;
    while param_count(kind, input_size, d + 1, layers) <= budget {
        d += 1;
    }
    Ok(d)
}
