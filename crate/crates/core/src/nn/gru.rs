//! Gated recurrent unit layer with exact backpropagation through time.
//!
//! Gate equations, for a batch row `x` and previous state `h`:
//!
//! ```text
//! z  = σ(x·W_z + h·U_z + b_z)          update gate
//! r  = σ(x·W_r + h·U_r + b_r)          reset gate
//! h̃  = tanh(x·W_h + (r ⊙ h)·U_h + b_h) candidate
//! h' = z ⊙ h + (1 − z) ⊙ h̃
//! ```
//!
//! The reset gate multiplies the previous state before the recurrent
//! product of the candidate.

use crate::error::{Error, Result};
use crate::nn::{glorot_init, sigmoid_scalar, Matrix, Rng};

pub const GRU_HIDDEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Matrix,
    pub b_r: Matrix,
    pub b_h: Matrix,
}

/// Tensor names in canonical order, matching [`GruLayerParams::tensors`].
pub const GRU_TENSOR_NAMES: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];

impl GruLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Matrix::zeros(input, hidden),
            w_r: Matrix::zeros(input, hidden),
            w_h: Matrix::zeros(input, hidden),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_h: Matrix::zeros(hidden, hidden),
            b_z: Matrix::zeros(1, hidden),
            b_r: Matrix::zeros(1, hidden),
            b_h: Matrix::zeros(1, hidden),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(rng: &mut Rng, input: usize, hidden: usize) -> Self {
        Self {
            w_z: glorot_init(rng, input, hidden),
            w_r: glorot_init(rng, input, hidden),
            w_h: glorot_init(rng, input, hidden),
            u_z: glorot_init(rng, hidden, hidden),
            u_r: glorot_init(rng, hidden, hidden),
            u_h: glorot_init(rng, hidden, hidden),
            b_z: Matrix::zeros(1, hidden),
            b_r: Matrix::zeros(1, hidden),
            b_h: Matrix::zeros(1, hidden),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_z.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_z.cols()
    }

    pub fn tensors(&self) -> [&Matrix; 9] {
        [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r,
            &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_size(), self.hidden_size());
        for (name, m) in GRU_TENSOR_NAMES.iter().zip(self.tensors()) {
            let (r, c) = match name.as_bytes()[0] {
                b'w' => (i, h),
                b'u' => (h, h),
                _ => (1, h),
            };
            m.expect_shape(name, r, c)?;
        }
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw bits of every weight.
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for m in self.tensors() {
            for v in m.as_slice() {
                hash ^= v.to_bits();
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        hash
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Matrix,
    h_prev: Matrix,
    z: Matrix,
    r: Matrix,
    cand: Matrix,
    rh: Matrix,
}

/// Intermediates of one [`gru_forward`] call.
#[derive(Debug, Clone)]
pub struct GruCache {
    steps: Vec<StepCache>,
    fingerprint: u64,
    batch: usize,
}

impl GruCache {
    pub fn steps(&self) -> usize {
        self.steps.len()
    }
}

#[derive(Debug, Clone)]
pub struct GruGrads {
    pub params: GruLayerParams,
    pub inputs: Vec<Matrix>,
    pub h0: Matrix,
}

fn affine(x: &Matrix, w: &Matrix, h: &Matrix, u: &Matrix, b: &Matrix) -> Matrix {
    let mut a = x.matmul(w);
    h.matmul_acc(u, &mut a);
    a.add_row_acc(b);
    a
}

/// Runs the layer over `inputs` (one `batch × input` matrix per timestep).
pub fn gru_forward(
    params: &GruLayerParams,
    inputs: &[Matrix],
    h0: &Matrix,
) -> Result<(Vec<Matrix>, GruCache)> {
    params.validate()?;
    let hidden = params.hidden_size();
    let batch = h0.rows();
    h0.expect_cols("h0", hidden)?;
    for (t, x) in inputs.iter().enumerate() {
        x.expect_shape(&format!("inputs[{t}]"), batch, params.input_size())?;
    }

    let mut outputs = Vec::with_capacity(inputs.len());
    let mut steps = Vec::with_capacity(inputs.len());
    let mut h = h0.clone();
    for x in inputs {
        let mut z = affine(x, &params.w_z, &h, &params.u_z, &params.b_z);
        z.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
        let mut r = affine(x, &params.w_r, &h, &params.u_r, &params.b_r);
        r.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid_scalar(*v));

        let mut rh = r.clone();
        rh.as_mut_slice()
            .iter_mut()
            .zip(h.as_slice())
            .for_each(|(a, &b)| *a *= b);
        let mut cand = affine(x, &params.w_h, &rh, &params.u_h, &params.b_h);
        cand.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());

        let mut h_next = Matrix::zeros(batch, hidden);
        for (((o, &zv), &hv), &cv) in h_next
            .as_mut_slice()
            .iter_mut()
            .zip(z.as_slice())
            .zip(h.as_slice())
            .zip(cand.as_slice())
        {
            *o = zv * hv + (1.0 - zv) * cv;
        }

        steps.push(StepCache {
            x: x.clone(),
            h_prev: h,
            z,
            r,
            cand,
            rh,
        });
        outputs.push(h_next.clone());
        h = h_next;
    }

    Ok((
        outputs,
        GruCache {
            steps,
            fingerprint: params.fingerprint(),
            batch,
        },
    ))
}

/// Backpropagates `upstream` (dLoss/dh_t for every timestep) through the
/// layer. `params` must be the exact weights used for the forward pass.
pub fn gru_backward(params: &GruLayerParams, cache: &GruCache, upstream: &[Matrix]) -> Result<GruGrads> {
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::Contract(
            "GRU cache was produced with different parameters".into(),
        ));
    }
    if upstream.len() != cache.steps.len() {
        return Err(Error::Contract(format!(
            "GRU cache holds {} steps but {} upstream gradients were given",
            cache.steps.len(),
            upstream.len()
        )));
    }
    let hidden = params.hidden_size();
    for (t, g) in upstream.iter().enumerate() {
        g.expect_shape(&format!("upstream[{t}]"), cache.batch, hidden)?;
    }

    let mut grads = GruLayerParams::zeros(params.input_size(), hidden);
    let mut dx_all = vec![Matrix::zeros(0, 0); cache.steps.len()];
    let mut carry = Matrix::zeros(cache.batch, hidden);

    let n = cache.batch * hidden;
    let mut da_z = Matrix::zeros(cache.batch, hidden);
    let mut da_r = Matrix::zeros(cache.batch, hidden);
    let mut da_c = Matrix::zeros(cache.batch, hidden);

    for (t, step) in cache.steps.iter().enumerate().rev() {
        let mut dh = upstream[t].clone();
        dh.add_assign(&carry);

        let mut dh_prev = Matrix::zeros(cache.batch, hidden);
        {
            let (dh_s, z, hp, c) = (dh.as_slice(), step.z.as_slice(), step.h_prev.as_slice(), step.cand.as_slice());
            let dhp = dh_prev.as_mut_slice();
            let (dz_s, dc_s) = (da_z.as_mut_slice(), da_c.as_mut_slice());
            for i in 0..n {
                let g = dh_s[i];
                dhp[i] = g * z[i];
                dz_s[i] = g * (hp[i] - c[i]) * z[i] * (1.0 - z[i]);
                dc_s[i] = g * (1.0 - z[i]) * (1.0 - c[i] * c[i]);
            }
        }

        // candidate path
        step.x.tmatmul_acc(&da_c, &mut grads.w_h);
        step.rh.tmatmul_acc(&da_c, &mut grads.u_h);
        da_c.col_sum_acc(&mut grads.b_h);
        let mut drh = Matrix::zeros(cache.batch, hidden);
        da_c.matmul_t_acc(&params.u_h, &mut drh);
        {
            let (drh_s, r, hp) = (drh.as_slice(), step.r.as_slice(), step.h_prev.as_slice());
            let dhp = dh_prev.as_mut_slice();
            let dr_s = da_r.as_mut_slice();
            for i in 0..n {
                dhp[i] += drh_s[i] * r[i];
                dr_s[i] = drh_s[i] * hp[i] * r[i] * (1.0 - r[i]);
            }
        }

        // gates
        step.x.tmatmul_acc(&da_z, &mut grads.w_z);
        step.h_prev.tmatmul_acc(&da_z, &mut grads.u_z);
        da_z.col_sum_acc(&mut grads.b_z);
        step.x.tmatmul_acc(&da_r, &mut grads.w_r);
        step.h_prev.tmatmul_acc(&da_r, &mut grads.u_r);
        da_r.col_sum_acc(&mut grads.b_r);
        da_z.matmul_t_acc(&params.u_z, &mut dh_prev);
        da_r.matmul_t_acc(&params.u_r, &mut dh_prev);

        let mut dx = Matrix::zeros(cache.batch, params.input_size());
        da_z.matmul_t_acc(&params.w_z, &mut dx);
        da_r.matmul_t_acc(&params.w_r, &mut dx);
        da_c.matmul_t_acc(&params.w_h, &mut dx);
        dx_all[t] = dx;

        carry = dh_prev;
    }

    Ok(GruGrads {
        params: grads,
        inputs: dx_all,
        h0: carry,
    })
}
