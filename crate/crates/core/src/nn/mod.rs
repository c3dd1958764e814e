//! Minimal deterministic neural-network kernel.
//!
//! Everything is `f64`, row-major, and batch-first: a batch of `n` samples
//! with `f` features is an `n × f` [`Matrix`]. Each forward operator returns
//! the values its backward counterpart needs, and every backward operator
//! computes exact analytic gradients.

mod gru;
mod layers;
mod loss;
mod matrix;
mod optim;
mod params;
mod rng;

pub use gru::{gru_backward, gru_forward, GruCache, GruGrads, GruLayerParams, GRU_HIDDEN, GRU_TENSOR_NAMES};
pub use layers::{
    batchnorm_backward, batchnorm_forward, batchnorm_forward_infer, batchnorm_forward_train, dense_backward,
    dense_forward, sigmoid_backward, sigmoid_forward, sigmoid_scalar, tanh_backward, tanh_forward, BatchNormCache,
    BatchNormGrads, BatchNormParams, DenseGrads, DenseParams, NormMode,
};
pub use loss::{bce_loss, BCE_EPSILON};
pub use matrix::Matrix;
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState};
pub use params::{deserialize_params, serialize_params, ParamSpec, ParamVector, FMP_MAGIC};
pub use rng::{stream, Rng};

/// Glorot/Xavier uniform matrix in `±√(6 / (rows + cols))`.
pub fn glorot_init(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-limit, limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("length is rows*cols")
}
