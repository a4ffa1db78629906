use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::risk::{ModelError, Predictor};

/// Fewest permutations accepted by [`shapley_sampled`].
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttributionMethod {
    Exact,
    Sampled { n_samples: usize, seed: u64 },
}

/// Shapley values of one input before it is tied to a patient.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyValues {
    /// Value of the empty coalition.
    pub baseline_value: f64,
    pub prediction: f64,
    pub phi: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    pub method: AttributionMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attribution {
    pub patient_id: String,
    pub baseline_value: f64,
    pub prediction: f64,
    pub feature_names: Vec<String>,
    /// The explained input, used for presence flags.
    pub values: Vec<f64>,
    pub phi: Vec<f64>,
    pub method: AttributionMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
}

impl Attribution {
    pub fn new(
        patient_id: impl Into<String>,
        feature_names: Vec<String>,
        values: Vec<f64>,
        s: ShapleyValues,
    ) -> Result<Self, ExplainError> {
        if feature_names.len() != s.phi.len() || values.len() != s.phi.len() {
            return Err(ExplainError::Input(format!(
                "{} names and {} values for {} attributions",
                feature_names.len(),
                values.len(),
                s.phi.len()
            )));
        }
        Ok(Self {
            patient_id: patient_id.into(),
            baseline_value: s.baseline_value,
            prediction: s.prediction,
            feature_names,
            values,
            phi: s.phi,
            method: s.method,
            std_errors: s.std_errors,
        })
    }

    /// `Σφ − (prediction − baseline)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.phi.iter().sum::<f64>() - (self.prediction - self.baseline_value)
    }
}

/// Players and a reusable coalition buffer. Non-players keep their value
/// from `x`; players not in the coalition take the reference value.
struct Game<'a, P: ?Sized> {
    model: &'a P,
    x: &'a [f64],
    reference: &'a [f64],
    players: Vec<usize>,
    buf: Vec<f64>,
}

impl<'a, P: Predictor + ?Sized> Game<'a, P> {
    fn new(
        model: &'a P,
        x: &'a [f64],
        reference: &'a [f64],
        subset: Option<&[usize]>,
    ) -> Result<Self, ExplainError> {
        let d = model.width();
        for got in [x.len(), reference.len()] {
            if got != d {
                return Err(ModelError::Shape { expected: d, got }.into());
            }
        }
        let players = match subset {
            None => (0..d).collect(),
            Some(s) => {
                let mut p = s.to_vec();
                p.sort_unstable();
                p.dedup();
                if p.len() != s.len() || p.last().is_some_and(|&i| i >= d) {
                    return Err(ExplainError::Input(
                        "feature_subset must hold distinct in-range indices".into(),
                    ));
                }
                p
            }
        };
        let mut buf = x.to_vec();
        for &i in &players {
            buf[i] = reference[i];
        }
        Ok(Self { model, x, reference, players, buf })
    }

    fn empty_value(&mut self) -> f64 {
        self.model.predict(&self.buf)
    }

    fn set(&mut self, player: usize, on: bool) {
        let f = self.players[player];
        self.buf[f] = if on { self.x[f] } else { self.reference[f] };
    }

    fn value(&self) -> f64 {
        self.model.predict(&self.buf)
    }
}

/// Exact Shapley values by enumerating every coalition of the players.
pub fn shapley_exact<P: Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    reference: &[f64],
    feature_subset: Option<&[usize]>,
    cap: usize,
) -> Result<ShapleyValues, ExplainError> {
    let mut game = Game::new(model, x, reference, feature_subset)?;
    let m = game.players.len();
    if m > cap {
        return Err(ExplainError::TooManyFeatures { n: m, cap });
    }
    let baseline_value = game.empty_value();
    let prediction = model.predict(x);
    if m == 0 {
        let phi = vec![0.0; x.len()];
        return Ok(ShapleyValues { baseline_value, prediction, phi, std_errors: None, method: AttributionMethod::Exact });
    }

    // v over all 2^m coalitions, visited in Gray-code order so each step
    // flips one feature.
    let n_coal = 1usize << m;
    let mut v = vec![0.0; n_coal];
    v[0] = baseline_value;
    let mut mask = 0usize;
    for step in 1..n_coal {
        let bit = step.trailing_zeros() as usize;
        mask ^= 1 << bit;
        game.set(bit, mask & (1 << bit) != 0);
        v[mask] = game.value();
    }

    // weight[s] = s!(m-s-1)!/m! = 1 / (m * C(m-1, s))
    let mut weight = vec![0.0; m];
    let mut binom = 1.0;
    for (s, w) in weight.iter_mut().enumerate() {
        *w = 1.0 / (m as f64 * binom);
        binom = binom * (m - 1 - s) as f64 / (s + 1) as f64;
    }

    let mut phi_players = vec![0.0; m];
    for (coal, &vs) in v.iter().enumerate() {
        let size = coal.count_ones() as usize;
        for (i, phi) in phi_players.iter_mut().enumerate() {
            if coal & (1 << i) == 0 {
                *phi += weight[size] * (v[coal | (1 << i)] - vs);
            }
        }
    }
    let mut phi = vec![0.0; x.len()];
    for (p, &f) in game.players.iter().enumerate() {
        phi[f] = phi_players[p];
    }
    Ok(ShapleyValues { baseline_value, prediction, phi, std_errors: None, method: AttributionMethod::Exact })
}

/// Monte-Carlo permutation estimate. Permutations are drawn in antithetic
/// pairs (a permutation and its reverse); `n_samples` counts permutations.
/// Each permutation's contributions telescope, so `Σφ` equals
/// `prediction − baseline_value` exactly for every estimate.
pub fn shapley_sampled<P: Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    reference: &[f64],
    feature_subset: Option<&[usize]>,
    n_samples: usize,
    seed: u64,
) -> Result<ShapleyValues, ExplainError> {
    if n_samples < MIN_SAMPLES {
        return Err(ExplainError::Config(format!(
            "n_samples = {n_samples} is below the minimum of {MIN_SAMPLES}"
        )));
    }
    let mut game = Game::new(model, x, reference, feature_subset)?;
    let m = game.players.len();
    let baseline_value = game.empty_value();
    let prediction = model.predict(x);
    let n_pairs = n_samples.div_ceil(2);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..m).collect();
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    let mut pair = vec![0.0; m];
    for _ in 0..n_pairs {
        perm.shuffle(&mut rng);
        pair.iter_mut().for_each(|p| *p = 0.0);
        for forward in [true, false] {
            let mut prev = baseline_value;
            for k in 0..m {
                let p = if forward { perm[k] } else { perm[m - 1 - k] };
                game.set(p, true);
                let cur = game.value();
                pair[p] += 0.5 * (cur - prev);
                prev = cur;
            }
            for p in 0..m {
                game.set(p, false);
            }
        }
        for p in 0..m {
            sum[p] += pair[p];
            sum_sq[p] += pair[p] * pair[p];
        }
    }

    let n = n_pairs as f64;
    let mut phi = vec![0.0; x.len()];
    let mut se = vec![0.0; x.len()];
    for (p, &f) in game.players.iter().enumerate() {
        let mean = sum[p] / n;
        phi[f] = mean;
        let var = if n_pairs > 1 { ((sum_sq[p] - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        se[f] = (var / n).sqrt();
    }
    Ok(ShapleyValues {
        baseline_value,
        prediction,
        phi,
        std_errors: Some(se),
        method: AttributionMethod::Sampled { n_samples: 2 * n_pairs, seed },
    })
}
