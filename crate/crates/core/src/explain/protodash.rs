use serde::{Deserialize, Serialize};

use super::ExplainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Self {
        Self { kind: KernelKind::Rbf, bandwidth }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => rbf(a, b, self.bandwidth),
        }
    }
}

/// `exp(-|a-b|² / 2σ²)`
pub fn rbf(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

/// Median pairwise Euclidean distance; 1.0 when every pair coincides.
pub fn median_bandwidth(rows: &[&[f64]]) -> f64 {
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            d.push(a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let m = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeSet {
    /// Candidate row indices in selection order.
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// `l(w)` after each greedy step.
    pub objective_trace: Vec<f64>,
    pub kernel: KernelSpec,
    /// Largest KKT violation of the final weights over the support.
    pub kkt_residual: f64,
}

const SOLVER_TOL: f64 = 1e-8;
const SOLVER_MAX_ITERS: usize = 200_000;

fn objective(w: &[f64], mu: &[f64], k: &[Vec<f64>]) -> f64 {
    let mut lin = 0.0;
    let mut quad = 0.0;
    for (i, wi) in w.iter().enumerate() {
        lin += wi * mu[i];
        for (j, wj) in w.iter().enumerate() {
            quad += wi * k[i][j] * wj;
        }
    }
    lin - 0.5 * quad
}

/// `μ − Kw` restricted to the support.
fn gradient(w: &[f64], mu: &[f64], k: &[Vec<f64>]) -> Vec<f64> {
    (0..w.len())
        .map(|i| mu[i] - k[i].iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

fn kkt_residual(w: &[f64], g: &[f64]) -> f64 {
    w.iter()
        .zip(g)
        .map(|(&wi, &gi)| if wi > 0.0 { gi.abs() } else { gi.max(0.0) })
        .fold(0.0, f64::max)
}

/// Maximises `wᵀμ − ½wᵀKw` over `w ≥ 0` by projected gradient ascent with
/// step `1/L`, `L` a Gershgorin bound on the largest eigenvalue of `K`.
/// The step size makes every iterate at least as good as the last, so a
/// warm start never loses objective.
fn solve_nonneg(mu: &[f64], k: &[Vec<f64>], w: &mut [f64]) -> f64 {
    let lip = k
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let step = 1.0 / lip;
    for _ in 0..SOLVER_MAX_ITERS {
        let g = gradient(w, mu, k);
        if kkt_residual(w, &g) < SOLVER_TOL {
            return kkt_residual(w, &g);
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi = (*wi + step * gi).max(0.0);
        }
    }
    kkt_residual(w, &gradient(w, mu, k))
}

/// Greedy prototype selection. `μ_j` is the mean kernel similarity of
/// candidate `j` to the target rows; each step adds the unselected
/// candidate with the largest positive gradient `μ_j − (Kw)_j` and
/// re-solves the nonnegative weights on the support.
pub fn protodash(
    candidates: &[&[f64]],
    target: &[&[f64]],
    k: usize,
    kernel: &KernelSpec,
) -> Result<PrototypeSet, ExplainError> {
    if candidates.is_empty() || target.is_empty() {
        return Err(ExplainError::Input("candidates and target must be non-empty".into()));
    }
    if k > candidates.len() {
        return Err(ExplainError::Input(format!(
            "k = {k} exceeds the {} candidates",
            candidates.len()
        )));
    }
    let width = candidates[0].len();
    if candidates.iter().chain(target).any(|r| r.len() != width) {
        return Err(ExplainError::Input("rows differ in width".into()));
    }
    if !(kernel.bandwidth > 0.0 && kernel.bandwidth.is_finite()) {
        return Err(ExplainError::Config("kernel bandwidth must be positive".into()));
    }

    let n = candidates.len();
    let mu: Vec<f64> = candidates
        .iter()
        .map(|c| target.iter().map(|t| kernel.eval(c, t)).sum::<f64>() / target.len() as f64)
        .collect();
    // Gram rows are filled lazily: only selected candidates need them.
    let mut gram_rows: Vec<Vec<f64>> = Vec::new();

    let mut indices: Vec<usize> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut trace = Vec::new();
    let mut residual = 0.0;
    // (Kw)_j over all candidates for the current support.
    let mut kw = vec![0.0; n];
    while indices.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if indices.contains(&j) {
                continue;
            }
            let g = mu[j] - kw[j];
            if g > 0.0 && best.is_none_or(|(_, bg)| g > bg) {
                best = Some((j, g));
            }
        }
        let Some((j, _)) = best else {
            log::debug!("protodash stopped at {} prototypes: no positive gradient", indices.len());
            break;
        };
        gram_rows.push(candidates.iter().map(|c| kernel.eval(candidates[j], c)).collect());
        indices.push(j);
        weights.push(0.0);

        let k_s: Vec<Vec<f64>> =
            gram_rows.iter().map(|row| indices.iter().map(|&l| row[l]).collect()).collect();
        let mu_s: Vec<f64> = indices.iter().map(|&l| mu[l]).collect();
        residual = solve_nonneg(&mu_s, &k_s, &mut weights);
        trace.push(objective(&weights, &mu_s, &k_s));

        kw.iter_mut().for_each(|v| *v = 0.0);
        for (row, w) in gram_rows.iter().zip(&weights) {
            for (acc, kv) in kw.iter_mut().zip(row) {
                *acc += w * kv;
            }
        }
    }
    Ok(PrototypeSet { indices, weights, objective_trace: trace, kernel: kernel.clone(), kkt_residual: residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
        rows.iter().map(|r| r.as_slice()).collect()
    }

    /// Oracle: best `l(w)` for a fixed pair, by checking the interior
    /// stationary point and both single-coordinate optima.
    fn best_pair_objective(mu: [f64; 2], k: [[f64; 2]; 2]) -> f64 {
        let l = |w: [f64; 2]| {
            w[0] * mu[0] + w[1] * mu[1]
                - 0.5 * (w[0] * w[0] * k[0][0] + 2.0 * w[0] * w[1] * k[0][1] + w[1] * w[1] * k[1][1])
        };
        let mut best = 0.0f64;
        for i in 0..2 {
            let wi = (mu[i] / k[i][i]).max(0.0);
            let mut w = [0.0; 2];
            w[i] = wi;
            best = best.max(l(w));
        }
        let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
        if det > 1e-12 {
            let w0 = (k[1][1] * mu[0] - k[0][1] * mu[1]) / det;
            let w1 = (k[0][0] * mu[1] - k[1][0] * mu[0]) / det;
            if w0 >= 0.0 && w1 >= 0.0 {
                best = best.max(l([w0, w1]));
            }
        }
        best
    }

    fn brute_force_best_pair(rows: &[&[f64]], kernel: &KernelSpec) -> (f64, (usize, usize)) {
        let n = rows.len();
        let mu: Vec<f64> =
            rows.iter().map(|c| rows.iter().map(|t| kernel.eval(c, t)).sum::<f64>() / n as f64).collect();
        let mut best = (f64::NEG_INFINITY, (0, 0));
        for a in 0..n {
            for b in a + 1..n {
                let kab = kernel.eval(rows[a], rows[b]);
                let v = best_pair_objective([mu[a], mu[b]], [[1.0, kab], [kab, 1.0]]);
                if v > best.0 {
                    best = (v, (a, b));
                }
            }
        }
        best
    }

    fn two_clusters(seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..40)
            .map(|i| {
                let c = if i < 20 { 0.0 } else { 10.0 };
                vec![c + rng.gen_range(-1.0..1.0), c + rng.gen_range(-1.0..1.0)]
            })
            .collect()
    }

    #[test]
    fn one_prototype_per_cluster() {
        let rows = two_clusters(3);
        let r = refs(&rows);
        let kernel = KernelSpec::rbf(median_bandwidth(&r));
        let p = protodash(&r, &r, 2, &kernel).unwrap();
        let mut sides: Vec<bool> = p.indices.iter().map(|&i| i < 20).collect();
        sides.sort();
        assert_eq!(sides, vec![false, true]);
        let (best, pair) = brute_force_best_pair(&r, &kernel);
        assert!((pair.0 < 20) != (pair.1 < 20));
        assert!(*p.objective_trace.last().unwrap() >= 0.95 * best);
    }

    #[test]
    fn identical_candidates() {
        let rows = vec![vec![1.0, 2.0]; 5];
        let r = refs(&rows);
        let p = protodash(&r, &r, 1, &KernelSpec::rbf(1.0)).unwrap();
        assert_eq!(p.indices.len(), 1);
        // w = 1 gives μ − ½ = ½, the best achievable.
        assert!((p.objective_trace[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn input_errors() {
        let rows = vec![vec![0.0]];
        let r = refs(&rows);
        assert!(protodash(&[], &r, 0, &KernelSpec::rbf(1.0)).is_err());
        assert!(protodash(&r, &[], 0, &KernelSpec::rbf(1.0)).is_err());
        assert!(protodash(&r, &r, 2, &KernelSpec::rbf(1.0)).is_err());
    }

    #[test]
    fn median_bandwidth_simple() {
        let rows = [vec![0.0], vec![1.0], vec![3.0]];
        // distances 1, 3, 2
        assert_eq!(median_bandwidth(&refs(&rows)), 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn trace_monotone_weights_nonnegative(seed in any::<u64>(), k in 1usize..8) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> =
                (0..25).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let r = refs(&rows);
            let kernel = KernelSpec::rbf(median_bandwidth(&r));
            let p = protodash(&r, &r, k, &kernel).unwrap();
            prop_assert!(p.weights.iter().all(|&w| w >= 0.0));
            prop_assert!(p.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
            prop_assert!(p.kkt_residual < 1e-6);
            let mut idx = p.indices.clone();
            idx.sort_unstable();
            idx.dedup();
            prop_assert_eq!(idx.len(), p.indices.len());
        }

        #[test]
        fn scaling_leaves_selection_unchanged(seed in any::<u64>(), c in 0.1f64..10.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> =
                (0..20).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
            let (a, b) = (refs(&rows), refs(&scaled));
            let bw = median_bandwidth(&a);
            let p = protodash(&a, &a, 4, &KernelSpec::rbf(bw)).unwrap();
            let q = protodash(&b, &b, 4, &KernelSpec::rbf(bw * c)).unwrap();
            prop_assert_eq!(p.indices, q.indices);
        }
    }
}
