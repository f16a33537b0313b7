use super::{assign_to_exemplars, APParams, ClusterError, Clustering};
use crate::similarity::AffinityMatrix;

/// Relative size of the per-index preference offset used to break exact
/// symmetries. Point `k` gets `+ TIE_LADDER * scale * (n - k) / n` on its
/// diagonal while messages are passed, so of two interchangeable points the
/// lower index becomes the exemplar.
const TIE_LADDER: f64 = 1e-12;

/// Responsibility and availability messages, both `n × n`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct APState {
    n: usize,
    pub r: Vec<f64>,
    pub a: Vec<f64>,
}

impl APState {
    pub fn zeros(n: usize) -> Self {
        APState {
            n,
            r: vec![0.0; n * n],
            a: vec![0.0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self, i: usize, k: usize) -> f64 {
        self.r[i * self.n + k]
    }

    pub fn a(&self, i: usize, k: usize) -> f64 {
        self.a[i * self.n + k]
    }

    /// Points with `r(k,k) + a(k,k) > 0`, ascending.
    pub fn exemplars(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&k| self.r(k, k) + self.a(k, k) > 0.0)
            .collect()
    }
}

fn check_shapes(n: usize, state: &APState, damping: f64) -> Result<(), ClusterError> {
    if state.n != n {
        return Err(ClusterError::Invalid(format!(
            "state is {0}x{0}, matrix is {n}x{n}",
            state.n
        )));
    }
    if !(0.0..=1.0).contains(&damping) {
        return Err(ClusterError::Invalid(format!("damping {damping} outside [0, 1]")));
    }
    Ok(())
}

/// `r(i,k) ← s(i,k) − max_{k'≠k} (a(i,k') + s(i,k'))`, damped:
/// `r ← λ·r_old + (1−λ)·r_new`.
pub fn update_responsibilities(s: &AffinityMatrix, state: &mut APState, damping: f64) -> Result<(), ClusterError> {
    check_shapes(s.n(), state, damping)?;
    responsibilities(s.as_slice(), state, damping, 0)
}

/// `a(i,k) ← min(0, r(k,k) + Σ_{i'∉{i,k}} max(0, r(i',k)))` for `i ≠ k`,
/// `a(k,k) ← Σ_{i'≠k} max(0, r(i',k))`, damped like the responsibilities.
pub fn update_availabilities(s: &AffinityMatrix, state: &mut APState, damping: f64) -> Result<(), ClusterError> {
    check_shapes(s.n(), state, damping)?;
    availabilities(state, damping, 0)
}

fn responsibilities(s: &[f64], state: &mut APState, damping: f64, iteration: usize) -> Result<(), ClusterError> {
    let n = state.n;
    for i in 0..n {
        let row = i * n;
        // best and second-best of a(i,k') + s(i,k')
        let (mut first, mut first_k, mut second) = (f64::NEG_INFINITY, 0usize, f64::NEG_INFINITY);
        for k in 0..n {
            let v = state.a[row + k] + s[row + k];
            if v > first {
                second = first;
                first = v;
                first_k = k;
            } else if v > second {
                second = v;
            }
        }
        for k in 0..n {
            let competitor = if k == first_k { second } else { first };
            // n == 1 leaves no competitor
            let fresh = if competitor == f64::NEG_INFINITY {
                s[row + k]
            } else {
                s[row + k] - competitor
            };
            let r = damping * state.r[row + k] + (1.0 - damping) * fresh;
            if !r.is_finite() {
                return Err(ClusterError::Numeric {
                    iteration,
                    detail: format!("r({i},{k}) = {r}"),
                });
            }
            state.r[row + k] = r;
        }
    }
    Ok(())
}

fn availabilities(state: &mut APState, damping: f64, iteration: usize) -> Result<(), ClusterError> {
    let n = state.n;
    for k in 0..n {
        let positive_sum: f64 = (0..n)
            .filter(|&i| i != k)
            .map(|i| state.r[i * n + k].max(0.0))
            .sum();
        let rkk = state.r[k * n + k];
        for i in 0..n {
            let fresh = if i == k {
                positive_sum
            } else {
                (rkk + positive_sum - state.r[i * n + k].max(0.0)).min(0.0)
            };
            let idx = i * n + k;
            let a = damping * state.a[idx] + (1.0 - damping) * fresh;
            if !a.is_finite() {
                return Err(ClusterError::Numeric {
                    iteration,
                    detail: format!("a({i},{k}) = {a}"),
                });
            }
            state.a[idx] = a;
        }
    }
    Ok(())
}

/// Affinity propagation with damping.
///
/// Messages start at zero. After every iteration the exemplar set is
/// `{k : r(k,k) + a(k,k) > 0}`; the run converges once that set is non-empty
/// and unchanged for `convergence_iter` consecutive iterations. Points are
/// then assigned to their most similar exemplar (lowest index on ties).
/// Without convergence by `max_iter` the result has `converged = false` and
/// every point as its own cluster.
pub fn affinity_propagation(s: &AffinityMatrix, params: &APParams) -> Result<Clustering, ClusterError> {
    params.validate()?;
    s.validate().map_err(|e| ClusterError::Invalid(e.to_string()))?;
    let n = s.n();
    if n == 1 {
        return Clustering::from_assignments(&[0], s, true, 0);
    }

    let mut working = s.as_slice().to_vec();
    let scale = working.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    for k in 0..n {
        working[k * n + k] += TIE_LADDER * scale * (n - k) as f64 / n as f64;
    }

    let mut state = APState::zeros(n);
    let mut last: Vec<usize> = Vec::new();
    let mut stable = 0usize;
    for iteration in 1..=params.max_iter {
        responsibilities(&working, &mut state, params.damping, iteration)?;
        availabilities(&mut state, params.damping, iteration)?;
        let exemplars = state.exemplars();
        stable = match (exemplars.is_empty(), exemplars == last) {
            (true, _) => 0,
            (false, true) => stable + 1,
            (false, false) => 1,
        };
        last = exemplars;
        if stable >= params.convergence_iter {
            log::debug!("affinity propagation converged after {iteration} iterations with {} exemplars", last.len());
            let assignments = assign_to_exemplars(s, &last);
            return Clustering::from_assignments(&assignments, s, true, iteration);
        }
    }
    log::warn!(
        "affinity propagation did not converge within {} iterations",
        params.max_iter
    );
    Ok(Clustering::singletons(s, false, params.max_iter))
}
