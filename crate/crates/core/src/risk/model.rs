use serde::{Deserialize, Serialize};

use super::{ModelError, Predictor};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Output probabilities are kept inside this margin of 0 and 1.
const PROBA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    LR,
    MLP,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "LR" => Ok(ModelKind::LR),
            "MLP" => Ok(ModelKind::MLP),
            other => Err(format!("unknown model kind `{other}` (expected LR or MLP)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::LR => "LR",
            ModelKind::MLP => "MLP",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    fn pre_activation(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Parameters {
    Lr { weights: Vec<f64>, bias: f64 },
    Mlp { layers: Vec<DenseLayer> },
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Parameters {
    pub fn input_width(&self) -> usize {
        match self {
            Parameters::Lr { weights, .. } => weights.len(),
            Parameters::Mlp { layers } => layers.first().map_or(0, |l| l.inputs),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Parameters::Lr { weights, .. } => weights.len() + 1,
            Parameters::Mlp { layers } => layers.iter().map(|l| l.weights.len() + l.bias.len()).sum(),
        }
    }

    /// Checks that layer shapes chain and the network ends in one sigmoid unit.
    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let Parameters::Mlp { layers } = self else { return Ok(()) };
        let bad = |m: String| Err(ModelError::Format(m));
        let Some(last) = layers.last() else { return bad("network has no layers".into()) };
        if last.outputs != 1 || last.activation != Activation::Sigmoid {
            return bad("final layer must be a single sigmoid unit".into());
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return bad(format!("layer {i} arrays do not match its shape"));
            }
            if i + 1 < layers.len() {
                if layers[i + 1].inputs != l.outputs {
                    return bad(format!("layer {} input does not chain from layer {i}", i + 1));
                }
                if l.activation != Activation::Relu {
                    return bad(format!("hidden layer {i} must use relu"));
                }
            }
        }
        Ok(())
    }

    /// Pre-sigmoid output.
    pub fn logit(&self, x: &[f64]) -> f64 {
        match self {
            Parameters::Lr { weights, bias } => {
                bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            }
            Parameters::Mlp { layers } => {
                let mut cur = x.to_vec();
                let mut next = Vec::new();
                for (i, l) in layers.iter().enumerate() {
                    l.pre_activation(&cur, &mut next);
                    if i + 1 < layers.len() {
                        next.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    std::mem::swap(&mut cur, &mut next);
                }
                cur[0]
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        match self {
            Parameters::Lr { weights, bias } => {
                let mut v = weights.clone();
                v.push(*bias);
                v
            }
            Parameters::Mlp { layers } => layers
                .iter()
                .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
                .collect(),
        }
    }

    pub fn set_flat(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        match self {
            Parameters::Lr { weights, bias } => {
                let n = weights.len();
                weights.copy_from_slice(&p[..n]);
                *bias = p[n];
            }
            Parameters::Mlp { layers } => {
                let mut off = 0;
                for l in layers {
                    let nw = l.weights.len();
                    l.weights.copy_from_slice(&p[off..off + nw]);
                    off += nw;
                    let nb = l.bias.len();
                    l.bias.copy_from_slice(&p[off..off + nb]);
                    off += nb;
                }
            }
        }
    }

    /// Mean weighted binary cross-entropy over the rows and its gradient
    /// with respect to [`Parameters::flat`].
    ///
    /// The per-row loss is `w_y * softplus(-z)` for positives and
    /// `softplus(z)` for negatives, `z` the logit, so no probability is
    /// ever passed through a logarithm.
    pub fn loss_and_grad(&self, rows: &[&[f64]], labels: &[u8], pos_weight: f64) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.n_params()];
        let mut loss = 0.0;
        match self {
            Parameters::Lr { weights, .. } => {
                let n = weights.len();
                for (x, &y) in rows.iter().zip(labels) {
                    let z = self.logit(x);
                    let (l, dz) = row_loss(z, y, pos_weight);
                    loss += l;
                    for (g, v) in grad[..n].iter_mut().zip(x.iter()) {
                        *g += dz * v;
                    }
                    grad[n] += dz;
                }
            }
            Parameters::Mlp { layers } => {
                let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
                let mut delta = Vec::new();
                let mut prev_delta = Vec::new();
                for (x, &y) in rows.iter().zip(labels) {
                    acts.clear();
                    acts.push(x.to_vec());
                    for (i, l) in layers.iter().enumerate() {
                        let mut out = Vec::with_capacity(l.outputs);
                        l.pre_activation(acts.last().unwrap(), &mut out);
                        if i + 1 < layers.len() {
                            out.iter_mut().for_each(|v| *v = v.max(0.0));
                        }
                        acts.push(out);
                    }
                    let z = acts.last().unwrap()[0];
                    let (l, dz) = row_loss(z, y, pos_weight);
                    loss += l;

                    delta.clear();
                    delta.push(dz);
                    let mut off = grad.len();
                    for (i, layer) in layers.iter().enumerate().rev() {
                        let input = &acts[i];
                        off -= layer.weights.len() + layer.bias.len();
                        let (gw, gb) = grad[off..off + layer.weights.len() + layer.bias.len()]
                            .split_at_mut(layer.weights.len());
                        for (o, d) in delta.iter().enumerate() {
                            gb[o] += d;
                            let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                            for (g, v) in row.iter_mut().zip(input) {
                                *g += d * v;
                            }
                        }
                        if i > 0 {
                            prev_delta.clear();
                            prev_delta.resize(layer.inputs, 0.0);
                            for (o, d) in delta.iter().enumerate() {
                                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                                for (pd, w) in prev_delta.iter_mut().zip(row) {
                                    *pd += d * w;
                                }
                            }
                            // ReLU derivative: activations of layer i-1 are zero where inactive.
                            for (pd, a) in prev_delta.iter_mut().zip(input) {
                                if *a <= 0.0 {
                                    *pd = 0.0;
                                }
                            }
                            std::mem::swap(&mut delta, &mut prev_delta);
                        }
                    }
                }
            }
        }
        let n = rows.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    pub fn loss(&self, rows: &[&[f64]], labels: &[u8], pos_weight: f64) -> f64 {
        let total: f64 = rows
            .iter()
            .zip(labels)
            .map(|(x, &y)| row_loss(self.logit(x), y, pos_weight).0)
            .sum();
        total / rows.len().max(1) as f64
    }
}

/// Loss and dLoss/dz for one row.
fn row_loss(z: f64, y: u8, pos_weight: f64) -> (f64, f64) {
    if y == 1 {
        (pos_weight * softplus(-z), pos_weight * (sigmoid(z) - 1.0))
    } else {
        (softplus(z), sigmoid(z))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pos_weight: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_auc_roc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_auc_prc: Option<f64>,
    /// Learning rates tried during selection, in grid order.
    #[serde(default)]
    pub candidates: Vec<f64>,
    /// Epoch whose parameters were kept when checkpointing on validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_epoch: Option<usize>,
}

/// A trained model. Immutable once training returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskModel {
    pub format_version: u32,
    pub kind: ModelKind,
    pub feature_names: Vec<String>,
    pub params: Parameters,
    pub train_meta: TrainMeta,
}

impl RiskModel {
    pub fn input_width(&self) -> usize {
        self.params.input_width()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.input_width() {
            return Err(ModelError::Shape { expected: self.input_width(), got: x.len() });
        }
        Ok(self.proba_unchecked(x))
    }

    fn proba_unchecked(&self, x: &[f64]) -> f64 {
        sigmoid(self.params.logit(x)).clamp(PROBA_EPS, 1.0 - PROBA_EPS)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("model serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ModelError> {
        let v: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| ModelError::Format(e.to_string()))?;
        match v.get("format_version").and_then(|x| x.as_u64()) {
            Some(x) if x == u64::from(MODEL_FORMAT_VERSION) => {}
            other => {
                return Err(ModelError::Format(format!("unsupported format_version {other:?}")))
            }
        }
        let m: RiskModel =
            serde_json::from_value(v).map_err(|e| ModelError::Format(e.to_string()))?;
        m.params.check_shapes()?;
        if m.feature_names.len() != m.input_width() {
            return Err(ModelError::Format("feature_names length differs from input width".into()));
        }
        Ok(m)
    }
}

impl Predictor for RiskModel {
    fn width(&self) -> usize {
        self.input_width()
    }
    fn predict(&self, x: &[f64]) -> f64 {
        self.proba_unchecked(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lr(weights: Vec<f64>, bias: f64) -> RiskModel {
        let n = weights.len();
        RiskModel {
            format_version: MODEL_FORMAT_VERSION,
            kind: ModelKind::LR,
            feature_names: (0..n).map(|i| format!("f{i}")).collect(),
            params: Parameters::Lr { weights, bias },
            train_meta: TrainMeta {
                seed: 0,
                epochs: 0,
                learning_rate: 0.0,
                batch_size: 1,
                pos_weight: 1.0,
                initial_loss: 0.0,
                final_loss: 0.0,
                epoch_losses: vec![],
                validation_auc_roc: None,
                validation_auc_prc: None,
                candidates: vec![],
                selected_epoch: None,
            },
        }
    }

    #[test]
    fn zero_lr_is_one_half() {
        let m = lr(vec![0.0, 0.0], 0.0);
        assert_eq!(m.predict_proba(&[3.0, -7.0]).unwrap(), 0.5);
    }

    #[test]
    fn sigmoid_of_ln3() {
        let m = lr(vec![1.0, 0.0], 0.0);
        let p = m.predict_proba(&[3f64.ln(), 5.0]).unwrap();
        assert!((p - 0.75).abs() < 1e-15);
    }

    #[test]
    fn width_mismatch() {
        let m = lr(vec![1.0, 0.0], 0.0);
        assert_eq!(m.predict_proba(&[1.0]), Err(ModelError::Shape { expected: 2, got: 1 }));
    }

    #[test]
    fn saturated_output_stays_open() {
        let m = lr(vec![1.0], 0.0);
        let hi = m.predict_proba(&[1e4]).unwrap();
        let lo = m.predict_proba(&[-1e4]).unwrap();
        assert!(hi < 1.0 && lo > 0.0);
    }

    #[test]
    fn loss_is_finite_at_extreme_logits() {
        let p = Parameters::Lr { weights: vec![1.0], bias: 0.0 };
        let (l, g) = p.loss_and_grad(&[&[800.0][..], &[-800.0][..]], &[0, 1], 1.0);
        assert!(l.is_finite() && (l - 800.0).abs() < 1e-9);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn json_version_checked() {
        let m = lr(vec![0.5], 0.1);
        let bytes = m.to_json();
        assert_eq!(RiskModel::from_json(&bytes).unwrap(), m);
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["format_version"] = 2.into();
        assert!(RiskModel::from_json(&serde_json::to_vec(&v).unwrap()).is_err());
    }

    #[test]
    fn broken_chain_rejected() {
        let p = Parameters::Mlp {
            layers: vec![
                DenseLayer { inputs: 2, outputs: 3, weights: vec![0.0; 6], bias: vec![0.0; 3], activation: Activation::Relu },
                DenseLayer { inputs: 2, outputs: 1, weights: vec![0.0; 2], bias: vec![0.0], activation: Activation::Sigmoid },
            ],
        };
        assert!(p.check_shapes().is_err());
    }
    fn random_instance(seed: u64, mlp: bool) -> (Parameters, Vec<Vec<f64>>, Vec<u8>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let width = rng.gen_range(1..6);
        let mut u = |s: f64| rng.gen_range(-s..s);
        let params = if mlp {
            let hidden = 4;
            Parameters::Mlp {
                layers: vec![
                    DenseLayer {
                        inputs: width,
                        outputs: hidden,
                        weights: (0..width * hidden).map(|_| u(1.0)).collect(),
                        bias: (0..hidden).map(|_| u(0.5)).collect(),
                        activation: Activation::Relu,
                    },
                    DenseLayer {
                        inputs: hidden,
                        outputs: 1,
                        weights: (0..hidden).map(|_| u(1.0)).collect(),
                        bias: vec![u(0.5)],
                        activation: Activation::Sigmoid,
                    },
                ],
            }
        } else {
            Parameters::Lr { weights: (0..width).map(|_| u(1.0)).collect(), bias: u(0.5) }
        };
        let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..width).map(|_| u(2.0)).collect()).collect();
        let labels = (0..8).map(|i| (i % 2) as u8).collect();
        (params, rows, labels)
    }

    #[test]
    fn gradients_match_central_differences() {
        for seed in 0..20 {
            for mlp in [false, true] {
                let (mut p, rows, labels) = random_instance(seed, mlp);
                let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
                let (_, analytic) = p.loss_and_grad(&refs, &labels, 1.5);
                let theta = p.flat();
                let eps = 1e-5;
                let mut numeric = vec![0.0; theta.len()];
                for k in 0..theta.len() {
                    let mut t = theta.clone();
                    t[k] += eps;
                    p.set_flat(&t);
                    let up = p.loss(&refs, &labels, 1.5);
                    t[k] -= 2.0 * eps;
                    p.set_flat(&t);
                    let down = p.loss(&refs, &labels, 1.5);
                    numeric[k] = (up - down) / (2.0 * eps);
                }
                p.set_flat(&theta);
                let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
                let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
                let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12);
                assert!(rel < 1e-4, "seed {seed} mlp {mlp}: relative error {rel}");
            }
        }
    }
}
