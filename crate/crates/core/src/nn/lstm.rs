//! A single LSTM cell with gate order [input, forget, candidate, output].
//!
//! Weights follow the out×in convention: `w_ih` is 4H×I, `w_hh` is 4H×H and
//! one combined bias row of length 4H serves both maps. The forget-gate bias
//! block starts at +1 so early training does not immediately flush the cell.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::tape::{Tape, TensorId};
use crate::nn::NnError;

#[derive(Clone, Debug)]
pub struct LstmCellParams {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    /// 1×4H row.
    pub bias: Array2<f64>,
    pub hidden: usize,
    pub input: usize,
}

impl LstmCellParams {
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let w_ih = uniform_fan_in(4 * hidden, input, rng);
        let w_hh = uniform_fan_in(4 * hidden, hidden, rng);
        let mut bias = Array2::zeros((1, 4 * hidden));
        bias.slice_mut(ndarray::s![0, hidden..2 * hidden]).fill(1.0);
        Self {
            w_ih,
            w_hh,
            bias,
            hidden,
            input,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array2::zeros((1, 4 * hidden)),
            hidden,
            input,
        }
    }

    fn check_shapes(&self) -> Result<(), NnError> {
        let (h, i) = (self.hidden, self.input);
        if self.w_ih.dim() != (4 * h, i) || self.w_hh.dim() != (4 * h, h) || self.bias.dim() != (1, 4 * h) {
            return Err(NnError::ShapeMismatch(format!(
                "lstm cell H={h} I={i}: w_ih {:?}, w_hh {:?}, bias {:?}",
                self.w_ih.dim(),
                self.w_hh.dim(),
                self.bias.dim()
            )));
        }
        Ok(())
    }
}

/// Uniform ±1/√fan_in initialization.
pub fn uniform_fan_in<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (cols.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Tape ids for one cell's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmTapeIds {
    pub w_ih: TensorId,
    pub w_hh: TensorId,
    pub bias: TensorId,
}

/// One LSTM step over a batch of rows: `x` is B×I, `h`/`c` are B×H.
pub fn lstm_step_tape(
    tape: &mut Tape,
    ids: LstmTapeIds,
    hidden: usize,
    x: TensorId,
    h_prev: TensorId,
    c_prev: TensorId,
) -> (TensorId, TensorId) {
    let from_x = tape.matmul_trans_b(x, ids.w_ih);
    let from_h = tape.matmul_trans_b(h_prev, ids.w_hh);
    let pre = tape.add(from_x, from_h);
    let gates = tape.add_row(pre, ids.bias);

    let i_pre = tape.slice_cols(gates, 0, hidden);
    let f_pre = tape.slice_cols(gates, hidden, hidden);
    let g_pre = tape.slice_cols(gates, 2 * hidden, hidden);
    let o_pre = tape.slice_cols(gates, 3 * hidden, hidden);

    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);

    let keep = tape.mul(f, c_prev);
    let write = tape.mul(i, g);
    let c = tape.add(keep, write);
    let c_act = tape.tanh(c);
    let h = tape.mul(o, c_act);
    (h, c)
}

/// Value-level single step for one input vector. Thin wrapper over the tape
/// so both paths share one implementation.
pub fn lstm_step(
    params: &LstmCellParams,
    x: &Array1<f64>,
    h_prev: &Array1<f64>,
    c_prev: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>), NnError> {
    params.check_shapes()?;
    if x.len() != params.input || h_prev.len() != params.hidden || c_prev.len() != params.hidden {
        return Err(NnError::ShapeMismatch(format!(
            "lstm_step inputs: x {} (want {}), h {} c {} (want {})",
            x.len(),
            params.input,
            h_prev.len(),
            c_prev.len(),
            params.hidden
        )));
    }
    let mut tape = Tape::new();
    let ids = LstmTapeIds {
        w_ih: tape.constant(params.w_ih.clone()),
        w_hh: tape.constant(params.w_hh.clone()),
        bias: tape.constant(params.bias.clone()),
    };
    let x = tape.constant(x.clone().insert_axis(Axis(0)));
    let h = tape.constant(h_prev.clone().insert_axis(Axis(0)));
    let c = tape.constant(c_prev.clone().insert_axis(Axis(0)));
    let (h_new, c_new) = lstm_step_tape(&mut tape, ids, params.hidden, x, h, c);
    Ok((
        tape.value(h_new).row(0).to_owned(),
        tape.value(c_new).row(0).to_owned(),
    ))
}
