//! Logistic-regression and MLP risk models, data splitting and the
//! evaluation metric suite.

mod metrics;
mod model;
mod split;
mod train;

pub use metrics::{auc_roc, average_precision, brier_score, evaluate, metrics_from_scores, MetricsReport};
pub use model::{
    sigmoid, Activation, DenseLayer, ModelKind, Parameters, RiskModel, TrainMeta, MODEL_FORMAT_VERSION,
};
pub use split::{split_data, Split};
pub use train::{train, train_selected, ModelConfig};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("split error: {0}")]
    Split(String),
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("loss became non-finite at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("input width {got} does not match model width {expected}")]
    Shape { expected: usize, got: usize },
    #[error("AUC undefined: evaluation labels contain a single class")]
    AucUndefined,
    #[error("evaluation set is empty")]
    EmptyEvaluation,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model format: {0}")]
    Format(String),
}

/// Scores anything that maps a feature vector to a probability.
pub trait Predictor {
    fn width(&self) -> usize;
    fn predict(&self, x: &[f64]) -> f64;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn width(&self) -> usize {
        (**self).width()
    }
    fn predict(&self, x: &[f64]) -> f64 {
        (**self).predict(x)
    }
}

/// Wraps a closure as a [`Predictor`]; handy for toy value functions.
pub struct FnPredictor<F> {
    width: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64> FnPredictor<F> {
    pub fn new(width: usize, f: F) -> Self {
        Self { width, f }
    }
}

impl<F: Fn(&[f64]) -> f64> Predictor for FnPredictor<F> {
    fn width(&self) -> usize {
        self.width
    }
    fn predict(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}
