use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{auc_roc, average_precision};
use super::model::{sigmoid, Activation, DenseLayer, ModelKind, Parameters, RiskModel, TrainMeta, MODEL_FORMAT_VERSION};
use super::split::Split;
use super::{ModelError, Predictor};

/// Model section of the pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    /// Learning-rate grid; each candidate is trained and the best on
    /// validation AUC-ROC (then AUC-PRC) is kept.
    pub learning_rates: Vec<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub pos_weight: f64,
    pub threshold: f64,
    pub split: [f64; 3],
    pub split_seed: u64,
    /// Initialisation and shuffling seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            learning_rates: vec![1e-3, 1e-2],
            batch_size: 64,
            epochs: 50,
            pos_weight: 1.0,
            threshold: 0.5,
            split: [0.7, 0.1, 0.2],
            split_seed: 1,
            seed: 7,
        }
    }
}

impl ModelConfig {
    // Negated comparisons so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.learning_rates.is_empty() || self.learning_rates.iter().any(|&r| !(r > 0.0)) {
            return bad("learning_rates must be a non-empty list of positive values");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.pos_weight > 0.0) {
            return bad("pos_weight must be positive");
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn check_two_classes(labels: &[u8]) -> bool {
    labels.contains(&0) && labels.contains(&1)
}

fn init_params(kind: ModelKind, width: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Parameters {
    match kind {
        ModelKind::LR => Parameters::Lr { weights: vec![0.0; width], bias: 0.0 },
        ModelKind::MLP => {
            let mut sizes = vec![width];
            sizes.extend_from_slice(hidden);
            sizes.push(1);
            let layers = sizes
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let (inputs, outputs) = (w[0], w[1]);
                    // He-uniform for ReLU layers, Glorot-uniform for the output unit.
                    let last = i + 2 == sizes.len();
                    let limit = if last {
                        (6.0 / (inputs + outputs) as f64).sqrt()
                    } else {
                        (6.0 / inputs.max(1) as f64).sqrt()
                    };
                    DenseLayer {
                        inputs,
                        outputs,
                        weights: (0..inputs * outputs).map(|_| rng.gen_range(-limit..limit)).collect(),
                        bias: vec![0.0; outputs],
                        activation: if last { Activation::Sigmoid } else { Activation::Relu },
                    }
                })
                .collect();
            Parameters::Mlp { layers }
        }
    }
}

/// Trains one model with one learning rate by mini-batch Adam on mean
/// binary cross-entropy.
pub fn train(
    kind: ModelKind,
    feature_names: &[String],
    rows: &[&[f64]],
    labels: &[u8],
    cfg: &ModelConfig,
    learning_rate: f64,
    seed: u64,
) -> Result<RiskModel, ModelError> {
    fit(kind, feature_names, rows, labels, None, cfg, learning_rate, seed)
}

/// Held-out rows used to checkpoint the best epoch.
struct Checkpoint<'a> {
    rows: &'a [&'a [f64]],
    labels: &'a [u8],
}

#[allow(clippy::too_many_arguments)]
fn fit(
    kind: ModelKind,
    feature_names: &[String],
    rows: &[&[f64]],
    labels: &[u8],
    checkpoint: Option<Checkpoint<'_>>,
    cfg: &ModelConfig,
    learning_rate: f64,
    seed: u64,
) -> Result<RiskModel, ModelError> {
    cfg.validate()?;
    let width = feature_names.len();
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(ModelError::Shape { expected: width, got: r.len() });
    }
    if rows.is_empty() || labels.iter().all(|&y| y == labels[0]) {
        return Err(ModelError::DegenerateLabels);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(kind, width, &cfg.hidden, &mut rng);
    let mut theta = params.flat();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut step = 0i32;

    let initial_loss = params.loss(rows, labels, cfg.pos_weight);
    if !initial_loss.is_finite() {
        return Err(ModelError::Divergence { epoch: 0 });
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch_rows: Vec<&[f64]> = Vec::with_capacity(cfg.batch_size);
    let mut batch_labels: Vec<u8> = Vec::with_capacity(cfg.batch_size);
    // (score, epoch, params); a single-class validation set disables it.
    let mut best: Option<((f64, f64), usize, Parameters)> = None;
    let checkpoint = checkpoint.filter(|c| check_two_classes(c.labels));
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch_rows.clear();
            batch_labels.clear();
            for &i in chunk {
                batch_rows.push(rows[i]);
                batch_labels.push(labels[i]);
            }
            let (_, grad) = params.loss_and_grad(&batch_rows, &batch_labels, cfg.pos_weight);
            step += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(step);
            let c2 = 1.0 - ADAM_BETA2.powi(step);
            for k in 0..theta.len() {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * grad[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
                theta[k] -= learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            }
            params.set_flat(&theta);
        }
        let loss = params.loss(rows, labels, cfg.pos_weight);
        if !loss.is_finite() {
            return Err(ModelError::Divergence { epoch });
        }
        epoch_losses.push(loss);
        if let Some(c) = &checkpoint {
            let scores: Vec<f64> = c.rows.iter().map(|x| sigmoid(params.logit(x))).collect();
            let key = (
                auc_roc(&scores, c.labels).unwrap_or(f64::NEG_INFINITY),
                average_precision(&scores, c.labels).unwrap_or(f64::NEG_INFINITY),
            );
            if best.as_ref().is_none_or(|(k, _, _)| key.0 > k.0 || (key.0 == k.0 && key.1 > k.1)) {
                best = Some((key, epoch, params.clone()));
            }
        }
    }
    let selected_epoch = best.map(|(_, epoch, p)| {
        params = p;
        epoch
    });

    Ok(RiskModel {
        format_version: MODEL_FORMAT_VERSION,
        kind,
        feature_names: feature_names.to_vec(),
        params,
        train_meta: TrainMeta {
            seed,
            epochs: cfg.epochs,
            learning_rate,
            batch_size: cfg.batch_size,
            pos_weight: cfg.pos_weight,
            initial_loss,
            final_loss: selected_epoch.map_or(*epoch_losses.last().unwrap(), |e| epoch_losses[e - 1]),
            epoch_losses,
            validation_auc_roc: None,
            validation_auc_prc: None,
            candidates: vec![learning_rate],
            selected_epoch,
        },
    })
}

/// Trains every learning-rate candidate on the train rows and keeps the one
/// with the best validation AUC-ROC, then AUC-PRC, then grid order. Within
/// a candidate the epoch with the best validation score is kept.
pub fn train_selected(
    kind: ModelKind,
    feature_names: &[String],
    rows: &[Vec<f64>],
    labels: &[u8],
    split: &Split,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<RiskModel, ModelError> {
    cfg.validate()?;
    let train_rows: Vec<&[f64]> = split.train.iter().map(|&i| rows[i].as_slice()).collect();
    let train_labels: Vec<u8> = split.train.iter().map(|&i| labels[i]).collect();
    let val_rows: Vec<&[f64]> = split.validation.iter().map(|&i| rows[i].as_slice()).collect();
    let val_labels: Vec<u8> = split.validation.iter().map(|&i| labels[i]).collect();

    let mut best: Option<(RiskModel, f64, f64)> = None;
    for &lr in &cfg.learning_rates {
        let checkpoint = Checkpoint { rows: &val_rows, labels: &val_labels };
        let mut model =
            fit(kind, feature_names, &train_rows, &train_labels, Some(checkpoint), cfg, lr, seed)?;
        let scores: Vec<f64> = split.validation.iter().map(|&i| model.predict(&rows[i])).collect();
        // A single-class validation set gives no ranking signal; keep grid order.
        let roc = auc_roc(&scores, &val_labels).ok();
        let prc = average_precision(&scores, &val_labels).ok();
        model.train_meta.validation_auc_roc = roc;
        model.train_meta.validation_auc_prc = prc;
        let key = (roc.unwrap_or(f64::NEG_INFINITY), prc.unwrap_or(f64::NEG_INFINITY));
        let better = match &best {
            None => true,
            Some((_, r, p)) => key.0 > *r || (key.0 == *r && key.1 > *p),
        };
        if better {
            best = Some((model, key.0, key.1));
        }
    }
    let (mut model, _, _) = best.expect("non-empty grid");
    model.train_meta.candidates = cfg.learning_rates.clone();
    log::info!(
        "selected {kind} lr={} (validation AUC-ROC {:?})",
        model.train_meta.learning_rate,
        model.train_meta.validation_auc_roc
    );
    Ok(model)
}
