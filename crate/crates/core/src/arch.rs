//! The four architecture/input configurations and their error contracts.
//!
//! * Stacked, moving window: every block is one time step; the error is
//!   computed per step and accumulated over the whole series.
//! * Sequence-to-sequence with a decoder, scalar input: an encoder builds
//!   the context state, a decoder emits one value per horizon step with
//!   teacher forcing during training and autoregression at test time; only
//!   the decoder error counts.
//! * Sequence-to-sequence with a dense output, scalar or moving-window
//!   input: the last encoder state is projected to the whole horizon by a
//!   dense layer without bias, and only that last-step error counts.

use crate::autodiff::{ParamId, ParamSet, Shape, Tape, Tensor, Var};
use crate::cells::{CellKind, CellParams, CellState};
use crate::error::{Error, Result};
use crate::preprocess::{Block, InputFormat};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    /// Stacked cells over moving-window blocks, accumulated error.
    StackedMw,
    /// Encoder/decoder over scalar steps, decoder error only.
    S2sDecoderNmw,
    /// Encoder over scalar steps, dense output, last-step error.
    S2sDenseNmw,
    /// Encoder over moving-window blocks, dense output, last-step error.
    S2sDenseMw,
}

impl ArchKind {
    pub fn input_format(&self) -> InputFormat {
        match self {
            ArchKind::StackedMw | ArchKind::S2sDenseMw => InputFormat::MovingWindow,
            ArchKind::S2sDecoderNmw | ArchKind::S2sDenseNmw => InputFormat::Scalar,
        }
    }
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ArchKind::StackedMw => write!(f, "stacked_mw"),
            ArchKind::S2sDecoderNmw => write!(f, "s2s_decoder_nmw"),
            ArchKind::S2sDenseNmw => write!(f, "s2s_dense_nmw"),
            ArchKind::S2sDenseMw => write!(f, "s2s_dense_mw"),
        }
    }
}

/// Decode behaviour for the decoder architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    TeacherForced,
    Autoregressive,
}

/// A wired network: cell stacks plus the output projection, all referring
/// to tensors in one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Network {
    pub arch: ArchKind,
    pub cell_kind: CellKind,
    pub encoder: Vec<CellParams>,
    /// Present only for the decoder architecture.
    pub decoder: Vec<CellParams>,
    pub proj_w: ParamId,
    pub proj_b: Option<ParamId>,
    pub dim: usize,
    pub input_size: usize,
    pub horizon: usize,
}

impl Network {
    /// Builds all parameters for the given configuration. Weights are drawn
    /// from Normal(0, init_sigma^2); biases start at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        arch: ArchKind,
        cell_kind: CellKind,
        layers: usize,
        input_size: usize,
        dim: usize,
        horizon: usize,
        init_sigma: f64,
        params: &mut ParamSet,
        rng: &mut Rng,
    ) -> Network {
        let mut encoder = Vec::with_capacity(layers);
        for layer in 0..layers {
            let in_size = if layer == 0 { input_size } else { dim };
            encoder.push(CellParams::create(
                cell_kind,
                in_size,
                dim,
                init_sigma,
                &format!("encoder{layer}"),
                params,
                rng,
            ));
        }
        let mut decoder = Vec::new();
        let (proj_rows, with_bias) = match arch {
            ArchKind::StackedMw => (horizon, true),
            ArchKind::S2sDenseNmw | ArchKind::S2sDenseMw => (horizon, false),
            ArchKind::S2sDecoderNmw => {
                for layer in 0..layers {
                    let in_size = if layer == 0 { 1 } else { dim };
                    decoder.push(CellParams::create(
                        cell_kind,
                        in_size,
                        dim,
                        init_sigma,
                        &format!("decoder{layer}"),
                        params,
                        rng,
                    ));
                }
                (1, true)
            }
        };
        let mut proj = Tensor::zeros(Shape::Matrix(proj_rows, dim));
        proj.randomize_normal(init_sigma, rng);
        let proj_w = params.add("proj.w", proj);
        let proj_b =
            with_bias.then(|| params.add("proj.b", Tensor::zeros(Shape::Vector(proj_rows))));
        Network {
            arch,
            cell_kind,
            encoder,
            decoder,
            proj_w,
            proj_b,
            dim,
            input_size,
            horizon,
        }
    }

    fn fresh_states(&self, stack: &[CellParams], tape: &mut Tape) -> Vec<CellState> {
        stack
            .iter()
            .map(|cell| cell.initial_state(self.dim, tape))
            .collect()
    }

    fn stack_step(
        &self,
        tape: &mut Tape,
        stack: &[CellParams],
        states: &mut [CellState],
        mut x: Var,
    ) -> Result<Var> {
        for (cell, state) in stack.iter().zip(states.iter_mut()) {
            let (new_state, z) = cell.step(tape, *state, x)?;
            *state = new_state;
            x = z;
        }
        Ok(x)
    }

    fn project(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let w = tape.param(self.proj_w);
        let b = self.proj_b.map(|id| tape.param(id));
        tape.affine(w, z, b)
    }

    fn input_var(
        &self,
        tape: &mut Tape,
        values: &[f64],
        noise: &mut Option<(&mut Rng, f64)>,
    ) -> Var {
        let data = match noise {
            Some((rng, sigma)) if *sigma > 0.0 => {
                values.iter().map(|v| v + rng.normal(0.0, *sigma)).collect()
            }
            _ => values.to_vec(),
        };
        tape.constant(Tensor::vector(data))
    }

    /// Training error E for one series. Gaussian input noise is applied to
    /// the fed inputs when a noise stream is given; targets are never
    /// perturbed. State starts at zero and is carried across the series.
    pub fn series_error(
        &self,
        tape: &mut Tape,
        blocks: &[Block],
        mut noise: Option<(&mut Rng, f64)>,
    ) -> Result<Var> {
        if blocks.is_empty() {
            return Err(Error::Contract("series has no blocks".into()));
        }
        match self.arch {
            ArchKind::StackedMw => {
                self.check_block_width(blocks)?;
                let mut states = self.fresh_states(&self.encoder.clone(), tape);
                let mut error: Option<Var> = None;
                for block in blocks {
                    let x = self.input_var(tape, &block.input, &mut noise);
                    let z = self.stack_step(tape, &self.encoder.clone(), &mut states, x)?;
                    if let Some(target) = &block.target {
                        let pred = self.project(tape, z)?;
                        let t = tape.constant(Tensor::vector(target.clone()));
                        let e = tape.mean_abs_error(pred, t)?;
                        error = Some(match error {
                            None => e,
                            Some(prev) => tape.add(prev, e)?,
                        });
                    }
                }
                error.ok_or_else(|| Error::Contract("no targets in series blocks".into()))
            }
            ArchKind::S2sDenseMw => {
                self.check_block_width(blocks)?;
                let mut states = self.fresh_states(&self.encoder.clone(), tape);
                let mut last: Option<(Var, &Vec<f64>)> = None;
                for block in blocks {
                    let x = self.input_var(tape, &block.input, &mut noise);
                    let z = self.stack_step(tape, &self.encoder.clone(), &mut states, x)?;
                    if let Some(target) = &block.target {
                        last = Some((z, target));
                    }
                }
                let (z, target) =
                    last.ok_or_else(|| Error::Contract("no targets in series blocks".into()))?;
                let pred = self.project(tape, z)?;
                let t = tape.constant(Tensor::vector(target.clone()));
                tape.mean_abs_error(pred, t)
            }
            ArchKind::S2sDenseNmw => {
                let block = self.single_scalar_block(blocks)?;
                let target = block.target.as_ref().ok_or_else(|| {
                    Error::Contract("encoder training block has no target".into())
                })?;
                let z = self.encode_scalars(tape, &block.input, &mut noise)?;
                let pred = self.project(tape, z)?;
                let t = tape.constant(Tensor::vector(target.clone()));
                tape.mean_abs_error(pred, t)
            }
            ArchKind::S2sDecoderNmw => {
                let block = self.single_scalar_block(blocks)?;
                let target = block.target.as_ref().ok_or_else(|| {
                    Error::Contract("decoder training block has no target".into())
                })?;
                let preds = self.decode(
                    tape,
                    &block.input,
                    DecodeMode::TeacherForced,
                    Some(target),
                    &mut noise,
                )?;
                let t = tape.constant(Tensor::vector(target.clone()));
                tape.mean_abs_error(preds, t)
            }
        }
    }

    /// H-vector forecast after feeding the whole block sequence; no noise.
    pub fn predict(&self, tape: &mut Tape, blocks: &[Block]) -> Result<Vec<f64>> {
        if blocks.is_empty() {
            return Err(Error::Contract("series has no blocks".into()));
        }
        let mut no_noise: Option<(&mut Rng, f64)> = None;
        let out = match self.arch {
            ArchKind::StackedMw | ArchKind::S2sDenseMw => {
                self.check_block_width(blocks)?;
                let mut states = self.fresh_states(&self.encoder.clone(), tape);
                let mut z = None;
                for block in blocks {
                    let x = self.input_var(tape, &block.input, &mut no_noise);
                    z = Some(self.stack_step(tape, &self.encoder.clone(), &mut states, x)?);
                }
                self.project(tape, z.unwrap())?
            }
            ArchKind::S2sDenseNmw => {
                let block = self.single_scalar_block(blocks)?;
                let z = self.encode_scalars(tape, &block.input, &mut no_noise)?;
                self.project(tape, z)?
            }
            ArchKind::S2sDecoderNmw => {
                let block = self.single_scalar_block(blocks)?;
                self.decode(
                    tape,
                    &block.input,
                    DecodeMode::Autoregressive,
                    None,
                    &mut no_noise,
                )?
            }
        };
        Ok(tape.value(out).data.clone())
    }

    fn check_block_width(&self, blocks: &[Block]) -> Result<()> {
        for block in blocks {
            if block.input.len() != self.input_size {
                return Err(Error::Contract(format!(
                    "network expects windows of {} inputs, found {}; \
                     was the series preprocessed for a different architecture?",
                    self.input_size,
                    block.input.len()
                )));
            }
        }
        Ok(())
    }

    fn single_scalar_block<'b>(&self, blocks: &'b [Block]) -> Result<&'b Block> {
        if blocks.len() != 1 {
            return Err(Error::Contract(format!(
                "scalar-input architectures take one block per series, found {}",
                blocks.len()
            )));
        }
        Ok(&blocks[0])
    }

    /// Feeds scalars one per step; returns the final top-layer output.
    fn encode_scalars(
        &self,
        tape: &mut Tape,
        values: &[f64],
        noise: &mut Option<(&mut Rng, f64)>,
    ) -> Result<Var> {
        let encoder = self.encoder.clone();
        let mut states = self.fresh_states(&encoder, tape);
        let mut z = None;
        for &v in values {
            let x = self.input_var(tape, &[v], noise);
            z = Some(self.stack_step(tape, &encoder, &mut states, x)?);
        }
        z.ok_or_else(|| Error::Contract("encoder input is empty".into()))
    }

    /// Runs the encoder, then H decoder steps initialized from the context
    /// state. Teacher forcing feeds true previous targets; autoregression
    /// feeds the previous prediction. The first decoder input is the last
    /// observed value, so a horizon of one behaves identically in both
    /// modes. Returns the concatenated H-vector of predictions.
    fn decode(
        &self,
        tape: &mut Tape,
        history: &[f64],
        mode: DecodeMode,
        targets: Option<&Vec<f64>>,
        noise: &mut Option<(&mut Rng, f64)>,
    ) -> Result<Var> {
        if mode == DecodeMode::TeacherForced && targets.is_none() {
            return Err(Error::Contract(
                "teacher forcing needs the target sequence".into(),
            ));
        }
        let encoder = self.encoder.clone();
        let decoder = self.decoder.clone();
        let mut enc_states = self.fresh_states(&encoder, tape);
        for &v in history {
            let x = self.input_var(tape, &[v], noise);
            self.stack_step(tape, &encoder, &mut enc_states, x)?;
        }
        let last_observed = *history
            .last()
            .ok_or_else(|| Error::Contract("encoder input is empty".into()))?;

        // Context vector: the decoder starts from the encoder's final state.
        let mut dec_states = enc_states;
        let mut preds: Option<Var> = None;
        let mut prev_pred: Option<Var> = None;
        for k in 0..self.horizon {
            let x = match (mode, k) {
                (_, 0) => tape.constant(Tensor::vector(vec![last_observed])),
                (DecodeMode::TeacherForced, _) => {
                    tape.constant(Tensor::vector(vec![targets.unwrap()[k - 1]]))
                }
                (DecodeMode::Autoregressive, _) => prev_pred.unwrap(),
            };
            let z = self.stack_step(tape, &decoder, &mut dec_states, x)?;
            let pred = self.project(tape, z)?;
            prev_pred = Some(pred);
            preds = Some(match preds {
                None => pred,
                Some(acc) => tape.concat(acc, pred)?,
            });
        }
        Ok(preds.unwrap())
    }
}

/// L = E + psi * sum of squared trainable parameters (biases included).
pub fn regularized_loss(tape: &mut Tape, error: Var, params: &ParamSet, psi: f64) -> Result<Var> {
    if psi < 0.0 {
        return Err(Error::Contract(format!(
            "regularization weight must be non-negative, got {psi}"
        )));
    }
    if psi == 0.0 {
        return Ok(error);
    }
    let mut penalty: Option<Var> = None;
    for id in params.ids() {
        let v = tape.param(id);
        let sq = tape.hadamard(v, v)?;
        let s = tape.sum(sq)?;
        penalty = Some(match penalty {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    match penalty {
        None => Ok(error),
        Some(p) => {
            let scaled = tape.scale(p, psi)?;
            tape.add(error, scaled)
        }
    }
}

/// Adds i.i.d. Normal(0, sigma^2) noise to every element; training-time only.
pub fn inject_input_noise(values: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    values.iter().map(|v| v + rng.normal(0.0, sigma)).collect()
}
