//! Parameter-update rules behind one optimizer interface.
//!
//! Adam and Adagrad take an explicit learning rate. COCOB is parameter-free:
//! each coordinate update is framed as a bet of a fraction of the
//! accumulated reward on the sign of the next gradient, so step sizes grow
//! while gradient signs persist and the reward can never go negative.

use crate::autodiff::{Gradients, ParamSet};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Adagrad,
    Cocob,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizerKind::Adam => write!(f, "adam"),
            OptimizerKind::Adagrad => write!(f, "adagrad"),
            OptimizerKind::Cocob => write!(f, "cocob"),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADAGRAD_EPS: f64 = 1e-10;
const COCOB_ALPHA: f64 = 100.0;
const COCOB_L_INIT: f64 = 1e-8;

#[derive(Debug, Clone)]
enum State {
    Adam {
        learning_rate: f64,
        step: u64,
        first_moment: Vec<f64>,
        second_moment: Vec<f64>,
    },
    Adagrad {
        learning_rate: f64,
        accumulator: Vec<f64>,
    },
    Cocob {
        /// Largest absolute gradient seen per coordinate.
        scale: Vec<f64>,
        /// Sum of absolute gradients.
        grad_norm_sum: Vec<f64>,
        /// Accumulated reward; clamped at zero.
        reward: Vec<f64>,
        /// Sum of negative gradients.
        bet: Vec<f64>,
        /// Coordinate values at the first step.
        initial: Vec<f64>,
        initialized: bool,
    },
}

/// One optimizer instance owning its per-coordinate state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    state: State,
}

/// Builds an optimizer. Adam and Adagrad require a learning rate; COCOB
/// must be given none.
pub fn make_optimizer(kind: OptimizerKind, learning_rate: Option<f64>) -> Result<Optimizer> {
    let state = match kind {
        OptimizerKind::Adam | OptimizerKind::Adagrad => {
            let lr = learning_rate
                .ok_or_else(|| Error::Contract(format!("{kind} requires a learning rate")))?;
            #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
            if !(lr > 0.0) {
                return Err(Error::Contract(format!(
                    "{kind} learning rate must be positive, got {lr}"
                )));
            }
            if kind == OptimizerKind::Adam {
                State::Adam {
                    learning_rate: lr,
                    step: 0,
                    first_moment: Vec::new(),
                    second_moment: Vec::new(),
                }
            } else {
                State::Adagrad {
                    learning_rate: lr,
                    accumulator: Vec::new(),
                }
            }
        }
        OptimizerKind::Cocob => {
            if learning_rate.is_some() {
                return Err(Error::Contract(
                    "cocob is parameter-free and takes no learning rate".into(),
                ));
            }
            State::Cocob {
                scale: Vec::new(),
                grad_norm_sum: Vec::new(),
                reward: Vec::new(),
                bet: Vec::new(),
                initial: Vec::new(),
                initialized: false,
            }
        }
    };
    Ok(Optimizer { kind, state })
}

impl Optimizer {
    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update from the gradients of a scalar loss.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        let n = params.coordinate_count();
        let flat_grads: Vec<f64> = params
            .ids()
            .flat_map(|id| grads.get(id).data.iter().copied())
            .collect();
        if flat_grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(
                "non-finite gradient in optimizer step".into(),
            ));
        }

        let mut flat: Vec<f64> = params
            .ids()
            .flat_map(|id| params.get(id).data.iter().copied())
            .collect();

        match &mut self.state {
            State::Adam {
                learning_rate,
                step,
                first_moment,
                second_moment,
            } => {
                if first_moment.is_empty() {
                    *first_moment = vec![0.0; n];
                    *second_moment = vec![0.0; n];
                }
                *step += 1;
                let t = *step as f64;
                let bc1 = 1.0 - ADAM_BETA1.powf(t);
                let bc2 = 1.0 - ADAM_BETA2.powf(t);
                for i in 0..n {
                    let g = flat_grads[i];
                    first_moment[i] = ADAM_BETA1 * first_moment[i] + (1.0 - ADAM_BETA1) * g;
                    second_moment[i] = ADAM_BETA2 * second_moment[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = first_moment[i] / bc1;
                    let v_hat = second_moment[i] / bc2;
                    flat[i] -= *learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
            State::Adagrad {
                learning_rate,
                accumulator,
            } => {
                if accumulator.is_empty() {
                    *accumulator = vec![0.0; n];
                }
                for i in 0..n {
                    let g = flat_grads[i];
                    accumulator[i] += g * g;
                    flat[i] -= *learning_rate * g / (accumulator[i].sqrt() + ADAGRAD_EPS);
                }
            }
            State::Cocob {
                scale,
                grad_norm_sum,
                reward,
                bet,
                initial,
                initialized,
            } => {
                if !*initialized {
                    *scale = vec![COCOB_L_INIT; n];
                    *grad_norm_sum = vec![0.0; n];
                    *reward = vec![0.0; n];
                    *bet = vec![0.0; n];
                    *initial = flat.clone();
                    *initialized = true;
                }
                for i in 0..n {
                    let g = flat_grads[i];
                    scale[i] = scale[i].max(g.abs());
                    grad_norm_sum[i] += g.abs();
                    reward[i] = (reward[i] + (flat[i] - initial[i]) * (-g)).max(0.0);
                    bet[i] += -g;
                    let denom =
                        scale[i] * (grad_norm_sum[i] + scale[i]).max(COCOB_ALPHA * scale[i]);
                    flat[i] = initial[i] + bet[i] / denom * (scale[i] + reward[i]);
                }
            }
        }

        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "parameters diverged to a non-finite value".into(),
            ));
        }
        let mut offset = 0;
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let len = params.get(id).len();
            params
                .get_mut(id)
                .data
                .copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Minimum of per-coordinate rewards; meaningful for COCOB only.
    pub fn min_reward(&self) -> Option<f64> {
        match &self.state {
            State::Cocob { reward, .. } => {
                reward.iter().copied().fold(None, |acc: Option<f64>, r| {
                    Some(acc.map_or(r, |a| a.min(r)))
                })
            }
            _ => None,
        }
    }

    /// Serializes the full optimizer state so training resumes bit-exactly.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"GOS1");
        let write_vec = |buf: &mut Vec<u8>, v: &[f64]| {
            buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        };
        match &self.state {
            State::Adam {
                learning_rate,
                step,
                first_moment,
                second_moment,
            } => {
                buf.push(0);
                buf.extend_from_slice(&learning_rate.to_le_bytes());
                buf.extend_from_slice(&step.to_le_bytes());
                write_vec(&mut buf, first_moment);
                write_vec(&mut buf, second_moment);
            }
            State::Adagrad {
                learning_rate,
                accumulator,
            } => {
                buf.push(1);
                buf.extend_from_slice(&learning_rate.to_le_bytes());
                write_vec(&mut buf, accumulator);
            }
            State::Cocob {
                scale,
                grad_norm_sum,
                reward,
                bet,
                initial,
                initialized,
            } => {
                buf.push(2);
                buf.push(*initialized as u8);
                write_vec(&mut buf, scale);
                write_vec(&mut buf, grad_norm_sum);
                write_vec(&mut buf, reward);
                write_vec(&mut buf, bet);
                write_vec(&mut buf, initial);
            }
        }
        std::fs::write(path, &buf).map_err(|e| crate::error::io_err(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| crate::error::io_err(path, e))?;
        let mut pos = 0usize;
        let fail = |msg: &str| Error::Parse {
            path: path.display().to_string(),
            row: 0,
            col: 0,
            msg: msg.into(),
        };
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(fail("truncated optimizer state"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let read_f64 = |pos: &mut usize| -> Result<f64> {
            Ok(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
        };
        let read_vec = |pos: &mut usize| -> Result<Vec<f64>> {
            let len = u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()) as usize;
            let mut v = Vec::with_capacity(len);
            for _ in 0..len {
                v.push(read_f64(pos)?);
            }
            Ok(v)
        };
        if take(&mut pos, 4)? != b"GOS1" {
            return Err(fail("bad optimizer state magic"));
        }
        let (kind, state) = match take(&mut pos, 1)?[0] {
            0 => {
                let learning_rate = read_f64(&mut pos)?;
                let step = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                let first_moment = read_vec(&mut pos)?;
                let second_moment = read_vec(&mut pos)?;
                (
                    OptimizerKind::Adam,
                    State::Adam {
                        learning_rate,
                        step,
                        first_moment,
                        second_moment,
                    },
                )
            }
            1 => {
                let learning_rate = read_f64(&mut pos)?;
                let accumulator = read_vec(&mut pos)?;
                (
                    OptimizerKind::Adagrad,
                    State::Adagrad {
                        learning_rate,
                        accumulator,
                    },
                )
            }
            2 => {
                let initialized = take(&mut pos, 1)?[0] != 0;
                let scale = read_vec(&mut pos)?;
                let grad_norm_sum = read_vec(&mut pos)?;
                let reward = read_vec(&mut pos)?;
                let bet = read_vec(&mut pos)?;
                let initial = read_vec(&mut pos)?;
                (
                    OptimizerKind::Cocob,
                    State::Cocob {
                        scale,
                        grad_norm_sum,
                        reward,
                        bet,
                        initial,
                        initialized,
                    },
                )
            }
            t => return Err(fail(&format!("unknown optimizer tag {t}"))),
        };
        Ok(Optimizer { kind, state })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};
    use crate::rng::Rng;

    fn single_param(value: Vec<f64>) -> ParamSet {
        let mut params = ParamSet::new();
        params.add("w", Tensor::vector(value));
        params
    }

    fn grad_of(params: &ParamSet, g: Vec<f64>) -> Gradients {
        // Build a gradient via a linear loss sum(c ⊙ w) whose gradient is c.
        let id = params.ids().next().unwrap();
        let mut tape = Tape::new(params);
        let w = tape.param(id);
        let c = tape.constant(Tensor::vector(g));
        let prod = tape.hadamard(w, c).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradients_are_fixed_points_for_all_kinds() {
        for kind in [
            OptimizerKind::Adam,
            OptimizerKind::Adagrad,
            OptimizerKind::Cocob,
        ] {
            let lr = match kind {
                OptimizerKind::Cocob => None,
                _ => Some(0.05),
            };
            let mut params = single_param(vec![1.5, -2.5]);
            let mut opt = make_optimizer(kind, lr).unwrap();
            for _ in 0..10 {
                let grads = grad_of(&params, vec![0.0, 0.0]);
                opt.step(&mut params, &grads).unwrap();
            }
            let id = params.ids().next().unwrap();
            assert_eq!(params.get(id).data, vec![1.5, -2.5], "{kind}");
        }
    }

    #[test]
    fn adam_single_step_hand_value() {
        // theta = 0, g = 1, lr = 0.1: bias-corrected m_hat = v_hat = 1,
        // so theta moves to about -0.1.
        let mut params = single_param(vec![0.0]);
        let mut opt = make_optimizer(OptimizerKind::Adam, Some(0.1)).unwrap();
        let grads = grad_of(&params, vec![1.0]);
        opt.step(&mut params, &grads).unwrap();
        let id = params.ids().next().unwrap();
        let w = params.get(id).data[0];
        assert!((w + 0.1).abs() < 1e-8, "w = {w}");
    }

    #[test]
    fn adagrad_single_step_hand_value() {
        // theta = 1, g = 2, lr = 0.5: theta - 0.5*2/sqrt(4) = 0.5.
        let mut params = single_param(vec![1.0]);
        let mut opt = make_optimizer(OptimizerKind::Adagrad, Some(0.5)).unwrap();
        let grads = grad_of(&params, vec![2.0]);
        opt.step(&mut params, &grads).unwrap();
        let id = params.ids().next().unwrap();
        let w = params.get(id).data[0];
        assert!((w - 0.5).abs() < 1e-9, "w = {w}");
    }

    #[test]
    fn adagrad_steps_shrink_under_constant_gradient() {
        let mut params = single_param(vec![10.0]);
        let mut opt = make_optimizer(OptimizerKind::Adagrad, Some(0.5)).unwrap();
        let id = params.ids().next().unwrap();
        let mut prev = params.get(id).data[0];
        let mut last_step = f64::INFINITY;
        for _ in 0..50 {
            let grads = grad_of(&params, vec![1.0]);
            opt.step(&mut params, &grads).unwrap();
            let cur = params.get(id).data[0];
            let step = (prev - cur).abs();
            assert!(step <= last_step + 1e-15);
            last_step = step;
            prev = cur;
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut params = single_param(vec![5.0]);
        let mut opt = make_optimizer(OptimizerKind::Adam, Some(0.01)).unwrap();
        let id = params.ids().next().unwrap();
        for _ in 0..10_000 {
            let w = params.get(id).data[0];
            let grads = grad_of(&params, vec![2.0 * w]);
            opt.step(&mut params, &grads).unwrap();
        }
        let w = params.get(id).data[0];
        assert!(w.abs() < 1e-3, "w = {w}");
    }

    #[test]
    fn cocob_stays_put_without_evidence() {
        let mut params = single_param(vec![0.7]);
        let mut opt = make_optimizer(OptimizerKind::Cocob, None).unwrap();
        for _ in 0..100 {
            let grads = grad_of(&params, vec![0.0]);
            opt.step(&mut params, &grads).unwrap();
        }
        let id = params.ids().next().unwrap();
        assert_eq!(params.get(id).data[0], 0.7);
    }

    #[test]
    fn cocob_steps_grow_while_gradient_sign_persists() {
        let mut params = single_param(vec![0.0]);
        let mut opt = make_optimizer(OptimizerKind::Cocob, None).unwrap();
        let id = params.ids().next().unwrap();
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..30 {
            let grads = grad_of(&params, vec![-1.0]);
            opt.step(&mut params, &grads).unwrap();
            let cur = params.get(id).data[0];
            let step = cur - prev;
            assert!(step >= last_step - 1e-12, "step {step} after {last_step}");
            assert!(cur >= prev);
            last_step = step;
            prev = cur;
        }
    }

    #[test]
    fn cocob_minimizes_absolute_loss_without_learning_rate() {
        // min |w - 3| from w = 0; subgradient sign(w - 3). Near the optimum
        // the iterate oscillates with amplitude ~ reward/steps, so the
        // tolerance is reached within a 1e5-step budget.
        let mut params = single_param(vec![0.0]);
        let mut opt = make_optimizer(OptimizerKind::Cocob, None).unwrap();
        let id = params.ids().next().unwrap();
        let mut steps = 0;
        for _ in 0..100_000 {
            let w = params.get(id).data[0];
            if (w - 3.0).abs() < 0.01 {
                break;
            }
            let g = if w > 3.0 {
                1.0
            } else if w < 3.0 {
                -1.0
            } else {
                0.0
            };
            let grads = grad_of(&params, vec![g]);
            opt.step(&mut params, &grads).unwrap();
            steps += 1;
        }
        let w = params.get(id).data[0];
        assert!((w - 3.0).abs() < 0.01, "w = {w} after {steps} steps");
    }

    #[test]
    fn cocob_reward_never_negative_under_random_gradients() {
        let mut params = single_param(vec![0.0; 4]);
        let mut opt = make_optimizer(OptimizerKind::Cocob, None).unwrap();
        let mut rng = Rng::from_seed(17);
        for _ in 0..20_000 {
            let g: Vec<f64> = (0..4).map(|_| rng.normal(0.0, 1.0)).collect();
            let grads = grad_of(&params, g);
            opt.step(&mut params, &grads).unwrap();
            assert!(opt.min_reward().unwrap() >= 0.0);
        }
    }

    #[test]
    fn checkpointed_optimizer_resumes_training_bit_exactly() {
        let dir = std::env::temp_dir().join(format!("gloft_opt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for kind in [
            OptimizerKind::Adam,
            OptimizerKind::Adagrad,
            OptimizerKind::Cocob,
        ] {
            let lr = (kind != OptimizerKind::Cocob).then_some(0.05);
            let grad_at = |step: usize, w: &[f64]| -> Vec<f64> {
                w.iter()
                    .enumerate()
                    .map(|(i, v)| 2.0 * v - (step + i) as f64 * 0.01)
                    .collect()
            };

            // Uninterrupted: 8 steps.
            let mut params_a = single_param(vec![1.0, -2.0, 0.5]);
            let mut opt_a = make_optimizer(kind, lr).unwrap();
            for step in 0..8 {
                let id = params_a.ids().next().unwrap();
                let g = grad_at(step, &params_a.get(id).data.clone());
                let grads = grad_of(&params_a, g);
                opt_a.step(&mut params_a, &grads).unwrap();
            }

            // Interrupted after 4 steps, checkpointed, resumed.
            let mut params_b = single_param(vec![1.0, -2.0, 0.5]);
            let mut opt_b = make_optimizer(kind, lr).unwrap();
            for step in 0..4 {
                let id = params_b.ids().next().unwrap();
                let g = grad_at(step, &params_b.get(id).data.clone());
                let grads = grad_of(&params_b, g);
                opt_b.step(&mut params_b, &grads).unwrap();
            }
            let path = dir.join(format!("{kind}.gos"));
            opt_b.save(&path).unwrap();
            let mut opt_b = Optimizer::load(&path).unwrap();
            assert_eq!(opt_b.kind(), kind);
            for step in 4..8 {
                let id = params_b.ids().next().unwrap();
                let g = grad_at(step, &params_b.get(id).data.clone());
                let grads = grad_of(&params_b, g);
                opt_b.step(&mut params_b, &grads).unwrap();
            }

            let id = params_a.ids().next().unwrap();
            let a: Vec<u64> = params_a.get(id).data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = params_b.get(id).data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{kind} resumption diverged");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn constructor_contracts() {
        assert!(make_optimizer(OptimizerKind::Cocob, None).is_ok());
        assert!(make_optimizer(OptimizerKind::Adam, Some(0.01)).is_ok());
        assert!(matches!(
            make_optimizer(OptimizerKind::Adagrad, None),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            make_optimizer(OptimizerKind::Cocob, Some(0.1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn all_kinds_minimize_a_ten_dim_quadratic() {
        // f(w) = sum a_i (w_i - c_i)^2 with mixed curvatures.
        let a: Vec<f64> = (0..10).map(|i| 0.5 + 0.3 * i as f64).collect();
        let c: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) * 0.8).collect();
        let initial: Vec<f64> = vec![4.0; 10];
        let f0: f64 = (0..10)
            .map(|i| a[i] * (initial[i] - c[i]) * (initial[i] - c[i]))
            .sum();
        for kind in [
            OptimizerKind::Adam,
            OptimizerKind::Adagrad,
            OptimizerKind::Cocob,
        ] {
            let lr = match kind {
                OptimizerKind::Adam => Some(0.05),
                OptimizerKind::Adagrad => Some(0.5),
                OptimizerKind::Cocob => None,
            };
            let mut params = single_param(initial.clone());
            let mut opt = make_optimizer(kind, lr).unwrap();
            let id = params.ids().next().unwrap();
            for _ in 0..100_000 {
                let w = params.get(id).data.clone();
                let g: Vec<f64> = (0..10).map(|i| 2.0 * a[i] * (w[i] - c[i])).collect();
                let grads = grad_of(&params, g);
                opt.step(&mut params, &grads).unwrap();
                let f: f64 = (0..10)
                    .map(|i| {
                        let d = params.get(id).data[i] - c[i];
                        a[i] * d * d
                    })
                    .sum();
                if f < 1e-4 * f0 {
                    break;
                }
            }
            let f: f64 = (0..10)
                .map(|i| {
                    let d = params.get(id).data[i] - c[i];
                    a[i] * d * d
                })
                .sum();
            assert!(f < 1e-4 * f0, "{kind}: f = {f}, f0 = {f0}");
        }
    }

    #[test]
    fn non_finite_gradients_are_refused_somewhere() {
        // A linear loss w · c with c = f64::MAX: the forward value at w = 0
        // is fine, but the gradient c*2 overflows. One of the defense
        // layers (tape, backward, or optimizer) must refuse with a numeric
        // error rather than pushing inf into the parameters.
        let mut params = single_param(vec![0.0]);
        let mut opt = make_optimizer(OptimizerKind::Adam, Some(0.1)).unwrap();
        let id = params.ids().next().unwrap();
        let grads = {
            let mut tape = Tape::new(&params);
            let w = tape.param(id);
            let c = tape.constant(Tensor::vector(vec![f64::MAX]));
            let result = tape
                .hadamard(w, c)
                .and_then(|prod| tape.scale(prod, 2.0))
                .and_then(|scaled| tape.sum(scaled))
                .and_then(|loss| tape.backward(loss));
            match result {
                Err(Error::Numeric(_)) => return,
                Err(other) => panic!("expected numeric error, got {other}"),
                Ok(grads) => grads,
            }
        };
        assert!(matches!(
            opt.step(&mut params, &grads),
            Err(Error::Numeric(_))
        ));
    }
}
