//! Dual-branch GRU mortality classifier.
//!
//! ```text
//! vitals [steps × 7]  → GRU(16) → GRU(16) → GRU(16) → last state → batchnorm ┐
//!                                                                            ├ concat(32) → dense(16, tanh) → dense(1) → sigmoid
//! labs   [steps × 16] → GRU(16) → GRU(16) → GRU(16) → last state → batchnorm ┘
//! ```
//!
//! All weights, including the batch-normalization running statistics, are
//! exposed as one [`ParamVector`] with a fixed layout so that federated
//! aggregation and checkpointing cover the complete model state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_backward, batchnorm_forward, dense_backward, dense_forward, gru_backward, gru_forward, sigmoid_backward,
    sigmoid_forward, BatchNormCache, BatchNormParams, DenseParams, GruCache, GruLayerParams, Matrix, NormMode,
    ParamSpec, ParamVector, Rng, GRU_HIDDEN, GRU_TENSOR_NAMES,
};

pub use crate::nn::{deserialize_params, serialize_params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadActivation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vitals_features: usize,
    pub labs_features: usize,
    pub hidden: usize,
    pub gru_layers_per_branch: usize,
    /// Output widths of the two fully connected layers; the last must be 1.
    pub dense_sizes: [usize; 2],
    pub head_activation: HeadActivation,
    pub vitals_steps: usize,
    pub labs_steps: usize,
    pub batchnorm_momentum: f64,
    pub batchnorm_epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vitals_features: 7,
            labs_features: 16,
            hidden: GRU_HIDDEN,
            gru_layers_per_branch: 3,
            dense_sizes: [16, 1],
            head_activation: HeadActivation::Tanh,
            vitals_steps: 24,
            labs_steps: 3,
            batchnorm_momentum: 0.99,
            batchnorm_epsilon: 1e-3,
        }
    }
}

impl ModelConfig {
    /// Default architecture for a history window of `vitals_steps` hourly
    /// rows and `labs_steps` lab rows.
    pub fn with_steps(vitals_steps: usize, labs_steps: usize) -> Self {
        Self {
            vitals_steps,
            labs_steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vitals_steps", self.vitals_steps),
            ("labs_steps", self.labs_steps),
            ("vitals_features", self.vitals_features),
            ("labs_features", self.labs_features),
            ("hidden", self.hidden),
            ("gru_layers_per_branch", self.gru_layers_per_branch),
            ("dense_sizes[0]", self.dense_sizes[0]),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("model config `{name}` must be at least 1")));
        }
        if self.dense_sizes[1] != 1 {
            return Err(Error::Validation("the output layer must have exactly one unit".into()));
        }
        if !(self.batchnorm_momentum > 0.0 && self.batchnorm_momentum < 1.0) {
            return Err(Error::Validation("batchnorm momentum must lie in (0, 1)".into()));
        }
        if !(self.batchnorm_epsilon > 0.0) {
            return Err(Error::Validation("batchnorm epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Time-major batch: one `patients × features` matrix per timestep.
#[derive(Debug, Clone)]
pub struct PatientBatch {
    pub vitals: Vec<Matrix>,
    pub labs: Vec<Matrix>,
}

impl PatientBatch {
    /// Assembles a batch from per-patient `steps × features` windows.
    pub fn from_windows<'a>(
        vitals: impl ExactSizeIterator<Item = &'a Matrix> + Clone,
        labs: impl ExactSizeIterator<Item = &'a Matrix> + Clone,
    ) -> Result<Self> {
        Ok(Self {
            vitals: time_major(vitals, "vitals")?,
            labs: time_major(labs, "labs")?,
        })
    }

    pub fn patients(&self) -> usize {
        self.vitals.first().map_or(0, Matrix::rows)
    }
}

fn time_major<'a>(windows: impl ExactSizeIterator<Item = &'a Matrix> + Clone, what: &str) -> Result<Vec<Matrix>> {
    let n = windows.len();
    let Some(first) = windows.clone().next() else {
        return Ok(Vec::new());
    };
    let (steps, features) = first.shape();
    let mut out = vec![Matrix::zeros(n, features); steps];
    for (p, w) in windows.enumerate() {
        w.expect_shape(&format!("{what} window of patient {p}"), steps, features)?;
        for (t, m) in out.iter_mut().enumerate() {
            m.row_mut(p).copy_from_slice(w.row(t));
        }
    }
    Ok(out)
}

/// Per-patient mortality risk in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub risk: Vec<f64>,
}

struct BranchCache {
    gru: Vec<GruCache>,
    bn: BatchNormCache,
}

/// Everything [`Model::backward`] needs from a forward pass.
pub struct ForwardCache {
    vitals: BranchCache,
    labs: BranchCache,
    concat: Matrix,
    hidden_pre: Matrix,
    hidden_act: Matrix,
    risk: Matrix,
    patients: usize,
    steps: (usize, usize),
}

impl ForwardCache {
    pub fn risk(&self) -> &Matrix {
        &self.risk
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    vitals: Vec<GruLayerParams>,
    labs: Vec<GruLayerParams>,
    bn_vitals: BatchNormParams,
    bn_labs: BatchNormParams,
    dense_hidden: DenseParams,
    dense_out: DenseParams,
}

fn build_branch(rng: &mut Rng, input: usize, hidden: usize, layers: usize) -> Vec<GruLayerParams> {
    (0..layers)
        .map(|l| GruLayerParams::init(rng, if l == 0 { input } else { hidden }, hidden))
        .collect()
}

/// Glorot-initialized model; identical seeds give bit-identical weights.
pub fn build_model(config: ModelConfig, rng: &mut Rng) -> Result<Model> {
    config.validate()?;
    let h = config.hidden;
    let vitals = build_branch(rng, config.vitals_features, h, config.gru_layers_per_branch);
    let labs = build_branch(rng, config.labs_features, h, config.gru_layers_per_branch);
    let dense_hidden = DenseParams::init(rng, 2 * h, config.dense_sizes[0]);
    let dense_out = DenseParams::init(rng, config.dense_sizes[0], config.dense_sizes[1]);
    Ok(Model {
        bn_vitals: BatchNormParams::new(h, config.batchnorm_momentum, config.batchnorm_epsilon),
        bn_labs: BatchNormParams::new(h, config.batchnorm_momentum, config.batchnorm_epsilon),
        vitals,
        labs,
        dense_hidden,
        dense_out,
        config,
    })
}

fn activate(kind: HeadActivation, x: &Matrix) -> Matrix {
    match kind {
        HeadActivation::Tanh => x.map(f64::tanh),
        HeadActivation::Relu => x.map(|v| v.max(0.0)),
    }
}

fn activate_backward(kind: HeadActivation, pre: &Matrix, post: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    match kind {
        HeadActivation::Tanh => {
            for (d, &t) in dx.as_mut_slice().iter_mut().zip(post.as_slice()) {
                *d *= 1.0 - t * t;
            }
        }
        HeadActivation::Relu => {
            for (d, &p) in dx.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if p <= 0.0 {
                    *d = 0.0;
                }
            }
        }
    }
    dx
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Named tensors in canonical layout order.
    fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (branch, layers, bn) in [
            ("vitals", &self.vitals, &self.bn_vitals),
            ("labs", &self.labs, &self.bn_labs),
        ] {
            for (l, layer) in layers.iter().enumerate() {
                for (name, m) in GRU_TENSOR_NAMES.iter().zip(layer.tensors()) {
                    out.push((format!("{branch}.gru{l}.{name}"), m));
                }
            }
            out.push((format!("{branch}.bn.gamma"), &bn.gamma));
            out.push((format!("{branch}.bn.beta"), &bn.beta));
            out.push((format!("{branch}.bn.running_mean"), &bn.running_mean));
            out.push((format!("{branch}.bn.running_var"), &bn.running_var));
        }
        out.push(("head.dense0.w".into(), &self.dense_hidden.w));
        out.push(("head.dense0.b".into(), &self.dense_hidden.b));
        out.push(("head.dense1.w".into(), &self.dense_out.w));
        out.push(("head.dense1.b".into(), &self.dense_out.b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for (layers, bn) in [
            (&mut self.vitals, &mut self.bn_vitals),
            (&mut self.labs, &mut self.bn_labs),
        ] {
            for layer in layers.iter_mut() {
                out.extend(layer.tensors_mut());
            }
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
            out.push(&mut bn.running_mean);
            out.push(&mut bn.running_var);
        }
        out.push(&mut self.dense_hidden.w);
        out.push(&mut self.dense_hidden.b);
        out.push(&mut self.dense_out.w);
        out.push(&mut self.dense_out.b);
        out
    }

    pub fn layout(&self) -> Vec<ParamSpec> {
        self.named_tensors()
            .into_iter()
            .map(|(name, m)| ParamSpec::new(name, m.rows(), m.cols()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn get_params(&self) -> ParamVector {
        let named = self.named_tensors();
        let parts: Vec<(&str, &Matrix)> = named.iter().map(|(n, m)| (n.as_str(), *m)).collect();
        ParamVector::from_named(&parts)
    }

    pub fn set_params(&mut self, params: &ParamVector) -> Result<()> {
        if params.layout() != self.layout().as_slice() {
            return Err(Error::Layout(format!(
                "model expects {} tensors / {} values, got {} tensors / {} values",
                self.layout().len(),
                self.param_count(),
                params.layout().len(),
                params.len()
            )));
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&params.values()[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn check_batch(&self, batch: &PatientBatch) -> Result<usize> {
        let c = &self.config;
        if batch.vitals.len() != c.vitals_steps {
            return Err(Error::dim("vitals timesteps", c.vitals_steps, batch.vitals.len()));
        }
        if batch.labs.len() != c.labs_steps {
            return Err(Error::dim("labs timesteps", c.labs_steps, batch.labs.len()));
        }
        let n = batch.vitals[0].rows();
        let n_labs = batch.labs[0].rows();
        if n != n_labs {
            return Err(Error::Validation(format!(
                "vitals batch has {n} patients but labs batch has {n_labs}"
            )));
        }
        if n == 0 {
            return Err(Error::Validation("empty patient batch".into()));
        }
        Ok(n)
    }

    /// Risk for every patient in the batch. `Train` mode updates the
    /// batch-normalization running statistics.
    pub fn forward(&mut self, batch: &PatientBatch, mode: NormMode) -> Result<ModelOutput> {
        let cache = self.forward_cached(batch, mode)?;
        Ok(ModelOutput {
            risk: cache.risk.as_slice().to_vec(),
        })
    }

    /// Inference-mode forward that leaves the model untouched.
    pub fn predict(&self, batch: &PatientBatch) -> Result<ModelOutput> {
        let mut model = self.clone();
        model.forward(batch, NormMode::Infer)
    }

    pub fn forward_cached(&mut self, batch: &PatientBatch, mode: NormMode) -> Result<ForwardCache> {
        let n = self.check_batch(batch)?;
        let h = self.config.hidden;

        let (v_last, v_gru) = run_branch(&self.vitals, &batch.vitals, n, h)?;
        let (l_last, l_gru) = run_branch(&self.labs, &batch.labs, n, h)?;
        let (v_norm, v_bn) = batchnorm_forward(&mut self.bn_vitals, &v_last, mode)?;
        let (l_norm, l_bn) = batchnorm_forward(&mut self.bn_labs, &l_last, mode)?;
        let concat = Matrix::hconcat(&[&v_norm, &l_norm])?;
        let hidden_pre = dense_forward(&self.dense_hidden, &concat)?;
        let hidden_act = activate(self.config.head_activation, &hidden_pre);
        let logits = dense_forward(&self.dense_out, &hidden_act)?;
        let risk = sigmoid_forward(&logits);

        Ok(ForwardCache {
            vitals: BranchCache { gru: v_gru, bn: v_bn },
            labs: BranchCache { gru: l_gru, bn: l_bn },
            concat,
            hidden_pre,
            hidden_act,
            risk,
            patients: n,
            steps: (batch.vitals.len(), batch.labs.len()),
        })
    }

    /// Gradient of the loss with respect to every parameter, given
    /// `d_risk = dLoss/dRisk` (`patients × 1`). Running statistics receive
    /// zero gradient.
    pub fn backward(&self, cache: &ForwardCache, d_risk: &Matrix) -> Result<ParamVector> {
        d_risk.expect_shape("d_risk", cache.patients, 1)?;
        let d_logits = sigmoid_backward(&cache.risk, d_risk)?;
        let g_out = dense_backward(&self.dense_out, &cache.hidden_act, &d_logits)?;
        let d_hidden_pre = activate_backward(self.config.head_activation, &cache.hidden_pre, &cache.hidden_act, &g_out.input);
        let g_hidden = dense_backward(&self.dense_hidden, &cache.concat, &d_hidden_pre)?;

        let h = self.config.hidden;
        let d_v_norm = g_hidden.input.col_slice(0, h);
        let d_l_norm = g_hidden.input.col_slice(h, h);
        let g_bn_v = batchnorm_backward(&self.bn_vitals, &cache.vitals.bn, &d_v_norm)?;
        let g_bn_l = batchnorm_backward(&self.bn_labs, &cache.labs.bn, &d_l_norm)?;

        let g_vitals = backprop_branch(&self.vitals, &cache.vitals.gru, &g_bn_v.input, cache.steps.0)?;
        let g_labs = backprop_branch(&self.labs, &cache.labs.gru, &g_bn_l.input, cache.steps.1)?;

        let mut values = Vec::with_capacity(self.param_count());
        for (layers, bn) in [(&g_vitals, &g_bn_v), (&g_labs, &g_bn_l)] {
            for layer in layers {
                for m in layer.tensors() {
                    values.extend_from_slice(m.as_slice());
                }
            }
            values.extend_from_slice(bn.gamma.as_slice());
            values.extend_from_slice(bn.beta.as_slice());
            values.extend(std::iter::repeat(0.0).take(2 * h));
        }
        values.extend_from_slice(g_hidden.w.as_slice());
        values.extend_from_slice(g_hidden.b.as_slice());
        values.extend_from_slice(g_out.w.as_slice());
        values.extend_from_slice(g_out.b.as_slice());
        ParamVector::new(self.layout(), values)
    }
}

fn run_branch(layers: &[GruLayerParams], inputs: &[Matrix], n: usize, hidden: usize) -> Result<(Matrix, Vec<GruCache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut seq: Vec<Matrix> = inputs.to_vec();
    for layer in layers {
        let (out, cache) = gru_forward(layer, &seq, &Matrix::zeros(n, hidden))?;
        caches.push(cache);
        seq = out;
    }
    let last = seq.pop().expect("at least one timestep");
    Ok((last, caches))
}

fn backprop_branch(
    layers: &[GruLayerParams],
    caches: &[GruCache],
    d_last: &Matrix,
    steps: usize,
) -> Result<Vec<GruLayerParams>> {
    let (n, h) = d_last.shape();
    let mut upstream = vec![Matrix::zeros(n, h); steps];
    upstream[steps - 1] = d_last.clone();
    let mut grads = vec![None; layers.len()];
    for (l, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let g = gru_backward(layer, cache, &upstream)?;
        upstream = g.inputs;
        grads[l] = Some(g.params);
    }
    Ok(grads.into_iter().map(|g| g.expect("every layer visited")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(rng: &mut Rng, cfg: &ModelConfig, n: usize) -> PatientBatch {
        let mk = |rng: &mut Rng, steps: usize, f: usize| {
            (0..steps)
                .map(|_| Matrix::from_vec(n, f, (0..n * f).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap())
                .collect()
        };
        PatientBatch {
            vitals: mk(rng, cfg.vitals_steps, cfg.vitals_features),
            labs: mk(rng, cfg.labs_steps, cfg.labs_features),
        }
    }

    #[test]
    fn default_parameter_count_closed_form() {
        let model = build_model(ModelConfig::default(), &mut Rng::new(1)).unwrap();
        // independent shape arithmetic
        let gru = |inp: usize| 3 * (inp * 16 + 16 * 16 + 16);
        let branch = |inp: usize| gru(inp) + 2 * gru(16);
        let bn = 4 * 16;
        let head = (32 * 16 + 16) + (16 + 1);
        let expected = branch(7) + branch(16) + 2 * bn + head;
        assert_eq!(expected, 9745);
        assert_eq!(model.param_count(), expected);
        assert_eq!(model.get_params().len(), expected);
    }

    #[test]
    fn same_seed_same_params() {
        let a = build_model(ModelConfig::default(), &mut Rng::new(3)).unwrap().get_params();
        let b = build_model(ModelConfig::default(), &mut Rng::new(3)).unwrap().get_params();
        let bits = |p: &ParamVector| p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn zero_steps_rejected() {
        let cfg = ModelConfig::with_steps(8, 0);
        assert!(matches!(build_model(cfg, &mut Rng::new(0)), Err(Error::Validation(_))));
    }

    #[test]
    fn identical_patients_identical_risks() {
        let cfg = ModelConfig::with_steps(4, 1);
        let mut model = build_model(cfg.clone(), &mut Rng::new(2)).unwrap();
        let mut rng = Rng::new(9);
        let one = random_batch(&mut rng, &cfg, 1);
        let rep = |ms: &[Matrix]| -> Vec<Matrix> {
            ms.iter()
                .map(|m| {
                    let row = m.row(0).to_vec();
                    Matrix::from_vec(5, row.len(), row.repeat(5)).unwrap()
                })
                .collect()
        };
        let batch = PatientBatch {
            vitals: rep(&one.vitals),
            labs: rep(&one.labs),
        };
        let out = model.forward(&batch, NormMode::Infer).unwrap();
        assert!(out.risk.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn risks_strictly_inside_unit_interval() {
        let cfg = ModelConfig::with_steps(3, 1);
        let model = build_model(cfg.clone(), &mut Rng::new(4)).unwrap();
        let mut rng = Rng::new(10);
        let batch = random_batch(&mut rng, &cfg, 1000);
        let out = model.predict(&batch).unwrap();
        assert_eq!(out.risk.len(), 1000);
        assert!(out.risk.iter().all(|&r| r > 0.0 && r < 1.0));
    }

    #[test]
    fn patient_count_mismatch_rejected() {
        let cfg = ModelConfig::with_steps(2, 1);
        let model = build_model(cfg.clone(), &mut Rng::new(4)).unwrap();
        let mut rng = Rng::new(1);
        let mut batch = random_batch(&mut rng, &cfg, 3);
        batch.labs = random_batch(&mut rng, &cfg, 2).labs;
        assert!(matches!(model.predict(&batch), Err(Error::Validation(_))));
    }

    #[test]
    fn params_roundtrip_and_transplant() {
        let cfg = ModelConfig::with_steps(3, 1);
        let mut a = build_model(cfg.clone(), &mut Rng::new(1)).unwrap();
        let mut b = build_model(cfg.clone(), &mut Rng::new(2)).unwrap();
        let pa = a.get_params();
        a.set_params(&pa).unwrap();
        assert_eq!(a.get_params(), pa);

        b.set_params(&pa).unwrap();
        let batch = random_batch(&mut Rng::new(3), &cfg, 4);
        assert_eq!(a.predict(&batch).unwrap(), b.predict(&batch).unwrap());
    }

    #[test]
    fn running_stats_travel_with_params() {
        let cfg = ModelConfig::with_steps(2, 1);
        let mut a = build_model(cfg.clone(), &mut Rng::new(1)).unwrap();
        let batch = random_batch(&mut Rng::new(3), &cfg, 6);
        a.forward(&batch, NormMode::Train).unwrap();
        let p = a.get_params();
        let rm = p.tensor("vitals.bn.running_mean").unwrap();
        assert!(rm.as_slice().iter().any(|&v| v != 0.0));
        let mut b = build_model(cfg, &mut Rng::new(1)).unwrap();
        b.set_params(&p).unwrap();
        assert_eq!(b.get_params(), p);
    }

    #[test]
    fn mismatched_layout_rejected() {
        let mut small = build_model(ModelConfig::with_steps(2, 1), &mut Rng::new(1)).unwrap();
        let other = ModelConfig {
            dense_sizes: [8, 1],
            ..ModelConfig::with_steps(2, 1)
        };
        let big = build_model(other, &mut Rng::new(1)).unwrap();
        assert!(matches!(small.set_params(&big.get_params()), Err(Error::Layout(_))));
    }

    /// Independent scalar re-implementation of the whole model in inference
    /// mode for one patient.
    fn scalar_model(p: &ParamVector, cfg: &ModelConfig, vitals: &[Vec<f64>], labs: &[Vec<f64>]) -> f64 {
        let get = |name: &str| p.tensor(name).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let h = cfg.hidden;
        let branch = |prefix: &str, xs: &[Vec<f64>]| -> Vec<f64> {
            let mut seq: Vec<Vec<f64>> = xs.to_vec();
            for l in 0..cfg.gru_layers_per_branch {
                let t = |n: &str| get(&format!("{prefix}.gru{l}.{n}"));
                let (wz, wr, wh, uz, ur, uh, bz, br, bh) =
                    (t("w_z"), t("w_r"), t("w_h"), t("u_z"), t("u_r"), t("u_h"), t("b_z"), t("b_r"), t("b_h"));
                let mut state = vec![0.0; h];
                let mut out = Vec::new();
                for x in &seq {
                    let mut z = vec![0.0; h];
                    let mut r = vec![0.0; h];
                    for j in 0..h {
                        let mut az = bz.get(0, j);
                        let mut ar = br.get(0, j);
                        for (i, xi) in x.iter().enumerate() {
                            az += xi * wz.get(i, j);
                            ar += xi * wr.get(i, j);
                        }
                        for k in 0..h {
                            az += state[k] * uz.get(k, j);
                            ar += state[k] * ur.get(k, j);
                        }
                        z[j] = sig(az);
                        r[j] = sig(ar);
                    }
                    let mut new_state = vec![0.0; h];
                    for j in 0..h {
                        let mut ac = bh.get(0, j);
                        for (i, xi) in x.iter().enumerate() {
                            ac += xi * wh.get(i, j);
                        }
                        for k in 0..h {
                            ac += r[k] * state[k] * uh.get(k, j);
                        }
                        new_state[j] = z[j] * state[j] + (1.0 - z[j]) * ac.tanh();
                    }
                    state = new_state;
                    out.push(state.clone());
                }
                seq = out;
            }
            let last = seq.last().unwrap();
            let (g, b, m, v) = (
                get(&format!("{prefix}.bn.gamma")),
                get(&format!("{prefix}.bn.beta")),
                get(&format!("{prefix}.bn.running_mean")),
                get(&format!("{prefix}.bn.running_var")),
            );
            (0..h)
                .map(|j| g.get(0, j) * (last[j] - m.get(0, j)) / (v.get(0, j) + cfg.batchnorm_epsilon).sqrt() + b.get(0, j))
                .collect()
        };
        let mut cat = branch("vitals", vitals);
        cat.extend(branch("labs", labs));
        let (w0, b0, w1, b1) = (get("head.dense0.w"), get("head.dense0.b"), get("head.dense1.w"), get("head.dense1.b"));
        let hidden: Vec<f64> = (0..w0.cols())
            .map(|j| (b0.get(0, j) + cat.iter().enumerate().map(|(i, c)| c * w0.get(i, j)).sum::<f64>()).tanh())
            .collect();
        let logit = b1.get(0, 0) + hidden.iter().enumerate().map(|(i, v)| v * w1.get(i, 0)).sum::<f64>();
        sig(logit)
    }

    #[test]
    fn infer_forward_matches_scalar_oracle() {
        let cfg = ModelConfig::with_steps(2, 2);
        let mut model = build_model(cfg.clone(), &mut Rng::new(42)).unwrap();
        // give batchnorm non-trivial running statistics first
        let warm = random_batch(&mut Rng::new(7), &cfg, 8);
        model.forward(&warm, NormMode::Train).unwrap();

        let batch = random_batch(&mut Rng::new(8), &cfg, 1);
        let got = model.predict(&batch).unwrap().risk[0];
        let vitals: Vec<Vec<f64>> = batch.vitals.iter().map(|m| m.row(0).to_vec()).collect();
        let labs: Vec<Vec<f64>> = batch.labs.iter().map(|m| m.row(0).to_vec()).collect();
        let want = scalar_model(&model.get_params(), &cfg, &vitals, &labs);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}
