//! Differentiable numeric core: activation kernels, a matrix op tape with
//! reverse-mode accumulation, dense/LSTM building blocks, and Adam.

pub mod adam;
pub mod lstm;
pub mod ops;
pub mod params;
pub mod tape;

use ndarray::{Array1, Array2, Axis};
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use lstm::{lstm_step, lstm_step_tape, LstmCellParams, LstmTapeIds};
pub use ops::{logsumexp, normal_log_pdf, sigmoid, softmax, softplus};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, TensorId};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no recorded forward pass for the requested node")]
    GraphNotRecorded,
    #[error("loss must be a 1x1 scalar, got {rows}x{cols}")]
    LossNotScalar { rows: usize, cols: usize },
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `W x + b` with `W` out×in, returning a vector of length out.
pub fn dense_forward(
    w: &Array2<f64>,
    b: &Array1<f64>,
    x: &Array1<f64>,
) -> Result<Array1<f64>, NnError> {
    if w.ncols() != x.len() || w.nrows() != b.len() {
        return Err(NnError::ShapeMismatch(format!(
            "dense: W {:?}, b {}, x {}",
            w.dim(),
            b.len(),
            x.len()
        )));
    }
    Ok(w.dot(x) + b)
}

/// Batched dense on the tape: rows of `x` (B×in) through `w` (out×in) plus
/// bias row `b` (1×out), giving B×out.
pub fn dense_tape(tape: &mut Tape, x: TensorId, w: TensorId, b: TensorId) -> TensorId {
    let lin = tape.matmul_trans_b(x, w);
    tape.add_row(lin, b)
}

/// Convert a flat vector to a 1×n row matrix.
pub fn as_row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(Axis(0))
}

/// Convert a flat vector to an n×1 column matrix.
pub fn as_col(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(Axis(1))
}
