//! Affine, batch-normalization and elementwise activation layers.

use crate::error::{Error, Result};
use crate::nn::{glorot_init, Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `input × output`
    pub w: Matrix,
    /// `1 × output`
    pub b: Matrix,
}

impl DenseParams {
    pub fn new(w: Matrix, b: Matrix) -> Result<Self> {
        if b.rows() != 1 || b.cols() != w.cols() {
            return Err(Error::dim("dense bias", format!("1x{}", w.cols()), format!("{}x{}", b.rows(), b.cols())));
        }
        Ok(Self { w, b })
    }

    pub fn init(rng: &mut Rng, input: usize, output: usize) -> Self {
        Self {
            w: glorot_init(rng, input, output),
            b: Matrix::zeros(1, output),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.rows()
    }

    pub fn output_size(&self) -> usize {
        self.w.cols()
    }
}

pub struct DenseGrads {
    pub input: Matrix,
    pub w: Matrix,
    pub b: Matrix,
}

pub fn dense_forward(params: &DenseParams, x: &Matrix) -> Result<Matrix> {
    x.expect_cols("dense input", params.input_size())?;
    let mut y = x.matmul(&params.w);
    y.add_row_acc(&params.b);
    Ok(y)
}

/// `x` is the forward input.
pub fn dense_backward(params: &DenseParams, x: &Matrix, dy: &Matrix) -> Result<DenseGrads> {
    dy.expect_shape("dense upstream", x.rows(), params.output_size())?;
    let mut w = Matrix::zeros(params.input_size(), params.output_size());
    x.tmatmul_acc(dy, &mut w);
    let mut b = Matrix::zeros(1, params.output_size());
    dy.col_sum_acc(&mut b);
    let mut input = Matrix::zeros(x.rows(), params.input_size());
    dy.matmul_t_acc(&params.w, &mut input);
    Ok(DenseGrads { input, w, b })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics and update the running statistics.
    Train,
    /// Normalize with the running statistics.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Matrix,
    pub running_var: Matrix,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormParams {
    pub fn new(features: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            gamma: Matrix::filled(1, features, 1.0),
            beta: Matrix::zeros(1, features),
            running_mean: Matrix::zeros(1, features),
            running_var: Matrix::filled(1, features, 1.0),
            momentum,
            epsilon,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.cols()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Matrix,
    inv_std: Vec<f64>,
    mode: NormMode,
}

pub struct BatchNormGrads {
    pub input: Matrix,
    pub gamma: Matrix,
    pub beta: Matrix,
}

fn normalize(params: &BatchNormParams, x: &Matrix, mean: &[f64], var: &[f64], mode: NormMode) -> (Matrix, BatchNormCache) {
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + params.epsilon).sqrt()).collect();
    let mut x_hat = x.clone();
    let mut y = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let xh = x_hat.row_mut(r);
        for j in 0..xh.len() {
            xh[j] = (xh[j] - mean[j]) * inv_std[j];
        }
        let yr = y.row_mut(r);
        for j in 0..yr.len() {
            yr[j] = params.gamma.as_slice()[j] * x_hat.get(r, j) + params.beta.as_slice()[j];
        }
    }
    (y, BatchNormCache { x_hat, inv_std, mode })
}

/// Training-mode forward: batch statistics, running-statistics update.
pub fn batchnorm_forward_train(params: &mut BatchNormParams, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
    x.expect_cols("batchnorm input", params.features())?;
    let n = x.rows();
    if n < 2 {
        return Err(Error::DegenerateBatch(n));
    }
    let f = params.features();
    let mut mean = vec![0.0; f];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; f];
    for r in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n as f64);

    let mom = params.momentum;
    for j in 0..f {
        let rm = &mut params.running_mean.as_mut_slice()[j];
        *rm = mom * *rm + (1.0 - mom) * mean[j];
        let rv = &mut params.running_var.as_mut_slice()[j];
        *rv = mom * *rv + (1.0 - mom) * var[j];
    }
    Ok(normalize(params, x, &mean, &var, NormMode::Train))
}

/// Inference-mode forward; reads the running statistics only.
pub fn batchnorm_forward_infer(params: &BatchNormParams, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
    x.expect_cols("batchnorm input", params.features())?;
    Ok(normalize(
        params,
        x,
        params.running_mean.as_slice(),
        params.running_var.as_slice(),
        NormMode::Infer,
    ))
}

pub fn batchnorm_forward(params: &mut BatchNormParams, x: &Matrix, mode: NormMode) -> Result<(Matrix, BatchNormCache)> {
    match mode {
        NormMode::Train => batchnorm_forward_train(params, x),
        NormMode::Infer => batchnorm_forward_infer(params, x),
    }
}

pub fn batchnorm_backward(params: &BatchNormParams, cache: &BatchNormCache, dy: &Matrix) -> Result<BatchNormGrads> {
    dy.expect_shape("batchnorm upstream", cache.x_hat.rows(), params.features())?;
    let (n, f) = dy.shape();
    let mut gamma = Matrix::zeros(1, f);
    let mut beta = Matrix::zeros(1, f);
    for r in 0..n {
        for j in 0..f {
            gamma.as_mut_slice()[j] += dy.get(r, j) * cache.x_hat.get(r, j);
            beta.as_mut_slice()[j] += dy.get(r, j);
        }
    }
    let g = params.gamma.as_slice();
    let mut input = Matrix::zeros(n, f);
    match cache.mode {
        NormMode::Infer => {
            for r in 0..n {
                for j in 0..f {
                    input.set(r, j, dy.get(r, j) * g[j] * cache.inv_std[j]);
                }
            }
        }
        NormMode::Train => {
            // dx = inv_std/n · (n·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), with dx̂ = dy·γ
            let nf = n as f64;
            for j in 0..f {
                let mut sum_dxh = 0.0;
                let mut sum_dxh_xh = 0.0;
                for r in 0..n {
                    let dxh = dy.get(r, j) * g[j];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * cache.x_hat.get(r, j);
                }
                for r in 0..n {
                    let dxh = dy.get(r, j) * g[j];
                    let v = cache.inv_std[j] / nf * (nf * dxh - sum_dxh - cache.x_hat.get(r, j) * sum_dxh_xh);
                    input.set(r, j, v);
                }
            }
        }
    }
    Ok(BatchNormGrads { input, gamma, beta })
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

/// `y` is the forward output.
pub fn sigmoid_backward(y: &Matrix, dy: &Matrix) -> Result<Matrix> {
    dy.expect_shape("sigmoid upstream", y.rows(), y.cols())?;
    let mut dx = dy.clone();
    for (d, &s) in dx.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *d *= s * (1.0 - s);
    }
    Ok(dx)
}

pub fn tanh_forward(x: &Matrix) -> Matrix {
    x.map(f64::tanh)
}

/// `y` is the forward output.
pub fn tanh_backward(y: &Matrix, dy: &Matrix) -> Result<Matrix> {
    dy.expect_shape("tanh upstream", y.rows(), y.cols())?;
    let mut dx = dy.clone();
    for (d, &t) in dx.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *d *= 1.0 - t * t;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_identity() {
        let p = DenseParams::new(Matrix::identity(3), Matrix::zeros(1, 3)).unwrap();
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        assert_eq!(dense_forward(&p, &x).unwrap(), x);
    }

    #[test]
    fn dense_bias_shape_checked() {
        assert!(DenseParams::new(Matrix::zeros(3, 2), Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn batchnorm_train_standardizes() {
        let mut rng = Rng::new(11);
        let mut p = BatchNormParams::new(4, 0.99, 1e-15);
        let x = Matrix::from_vec(
            50,
            4,
            (0..200).map(|i| rng.normal(3.0 * (i % 4) as f64, 1.0 + (i % 4) as f64)).collect(),
        )
        .unwrap();
        let (y, _) = batchnorm_forward_train(&mut p, &x).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..50).map(|r| y.get(r, j)).collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "var {var}");
        }
    }

    #[test]
    fn batchnorm_degenerate_batch() {
        let mut p = BatchNormParams::new(2, 0.99, 1e-3);
        assert!(matches!(
            batchnorm_forward_train(&mut p, &Matrix::zeros(1, 2)),
            Err(Error::DegenerateBatch(1))
        ));
        // inference on a single row is fine
        assert!(batchnorm_forward_infer(&p, &Matrix::zeros(1, 2)).is_ok());
    }

    #[test]
    fn batchnorm_infer_does_not_mutate() {
        let mut p = BatchNormParams::new(2, 0.9, 1e-3);
        p.running_mean = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let before = p.clone();
        let x = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (a, _) = batchnorm_forward(&mut p, &x, NormMode::Infer).unwrap();
        let (b, _) = batchnorm_forward(&mut p, &x, NormMode::Infer).unwrap();
        assert_eq!(p, before);
        assert_eq!(a, b);
    }

    #[test]
    fn batchnorm_running_stats_update() {
        let mut p = BatchNormParams::new(1, 0.9, 1e-3);
        let x = Matrix::from_vec(2, 1, vec![1.0, 3.0]).unwrap();
        batchnorm_forward_train(&mut p, &x).unwrap();
        assert!((p.running_mean.get(0, 0) - 0.2).abs() < 1e-15);
        assert!((p.running_var.get(0, 0) - (0.9 + 0.1 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_at_zero() {
        let y = sigmoid_forward(&Matrix::zeros(1, 1));
        assert_eq!(y.get(0, 0), 0.5);
        let g = sigmoid_backward(&y, &Matrix::filled(1, 1, 1.0)).unwrap();
        assert_eq!(g.get(0, 0), 0.25);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid_scalar(-1000.0), 0.0);
        assert_eq!(sigmoid_scalar(1000.0), 1.0);
        assert!(sigmoid_scalar(-40.0) > 0.0);
    }
}
