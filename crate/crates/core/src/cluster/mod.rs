//! Exemplar-based clustering.
//!
//! [`affinity_propagation`] is the message-passing solver;
//! [`brute_force_exemplars`] enumerates every exemplar set on small inputs
//! and is used to check it.

mod ap;
mod brute;

use serde::{Deserialize, Serialize};

use crate::similarity::AffinityMatrix;

pub use ap::{affinity_propagation, update_availabilities, update_responsibilities, APState};
pub use brute::{brute_force_exemplars, BRUTE_FORCE_MAX_POINTS};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid clustering input: {0}")]
    Invalid(String),
    #[error("non-finite message at iteration {iteration}: {detail}")]
    Numeric { iteration: usize, detail: String },
    #[error("brute-force search supports at most {max} points, got {n}")]
    TooLarge { n: usize, max: usize },
}

/// Tie handling when a point is equally similar to several exemplars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    #[default]
    LowestIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct APParams {
    pub damping: f64,
    pub max_iter: usize,
    /// Iterations the exemplar set must stay unchanged to declare convergence.
    /// A value above `max_iter` makes convergence impossible; the run then
    /// reports `converged = false`.
    pub convergence_iter: usize,
    pub tie_policy: TiePolicy,
}

impl Default for APParams {
    fn default() -> Self {
        APParams {
            damping: 0.5,
            max_iter: 200,
            convergence_iter: 15,
            tie_policy: TiePolicy::LowestIndex,
        }
    }
}

impl APParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(0.5..1.0).contains(&self.damping) {
            return Err(ClusterError::Invalid(format!(
                "damping must lie in [0.5, 1), got {}",
                self.damping
            )));
        }
        if self.max_iter == 0 || self.convergence_iter == 0 {
            return Err(ClusterError::Invalid(
                "max_iter and convergence_iter must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub exemplar: usize,
    pub members: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Which clusters of the previous level went into each cluster of a new one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeNode {
    pub id: usize,
    pub from: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    Manual,
    Auto,
}

/// One merge step: every cluster id of the previous level appears in exactly
/// one `from` list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeRound {
    pub kind: MergeKind,
    pub merges: Vec<MergeNode>,
}

/// Result of clustering `points` items, plus the history of any refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub converged: bool,
    pub iterations: usize,
    /// Objective of the underlying affinity-propagation run.
    pub net_similarity: f64,
    pub points: usize,
    pub clusters: Vec<Cluster>,
    /// Points dropped by singleton pruning.
    #[serde(default)]
    pub removed: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lineage: Vec<MergeRound>,
}

impl Clustering {
    /// Groups points by exemplar. `assignments[i]` is the exemplar of point
    /// `i`; exemplars must be self-assigned. Clusters are ordered by exemplar
    /// index.
    pub fn from_assignments(
        assignments: &[usize],
        s: &AffinityMatrix,
        converged: bool,
        iterations: usize,
    ) -> Result<Self, ClusterError> {
        let n = assignments.len();
        if n != s.n() {
            return Err(ClusterError::Invalid(format!(
                "{n} assignments for a {}-point matrix",
                s.n()
            )));
        }
        let mut exemplars: Vec<usize> = assignments.to_vec();
        exemplars.sort_unstable();
        exemplars.dedup();
        for &e in &exemplars {
            if e >= n || assignments[e] != e {
                return Err(ClusterError::Invalid(format!("exemplar {e} is not self-assigned")));
            }
        }
        let clusters = exemplars
            .iter()
            .enumerate()
            .map(|(id, &e)| Cluster {
                id,
                exemplar: e,
                members: (0..n).filter(|&i| assignments[i] == e).collect(),
                name: None,
            })
            .collect();
        Ok(Clustering {
            converged,
            iterations,
            net_similarity: net_similarity(assignments, s),
            points: n,
            clusters,
            removed: Vec::new(),
            lineage: Vec::new(),
        })
    }

    /// Every point as its own exemplar.
    pub fn singletons(s: &AffinityMatrix, converged: bool, iterations: usize) -> Self {
        let ids: Vec<usize> = (0..s.n()).collect();
        Self::from_assignments(&ids, s, converged, iterations).expect("identity assignment is valid")
    }

    /// Exemplar of each point; `None` for points not in any cluster.
    pub fn assignments(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.points];
        for c in &self.clusters {
            for &m in &c.members {
                if let Some(slot) = out.get_mut(m) {
                    *slot = Some(c.exemplar);
                }
            }
        }
        out
    }

    /// Cluster position of each point; `None` for removed points.
    pub fn labels(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.points];
        for (k, c) in self.clusters.iter().enumerate() {
            for &m in &c.members {
                if let Some(slot) = out.get_mut(m) {
                    *slot = Some(k);
                }
            }
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Cluster::len).collect()
    }

    /// Checks the structural invariants: ids are positions, members sorted
    /// and in range, exemplars are members, no point in two clusters or both
    /// clustered and removed.
    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |m: String| Err(ClusterError::Invalid(m));
        let mut seen = vec![false; self.points];
        for (k, c) in self.clusters.iter().enumerate() {
            if c.id != k {
                return bad(format!("cluster at position {k} has id {}", c.id));
            }
            if c.members.is_empty() {
                return bad(format!("cluster {k} is empty"));
            }
            if !c.members.windows(2).all(|w| w[0] < w[1]) {
                return bad(format!("cluster {k} members are not sorted and unique"));
            }
            if c.members.binary_search(&c.exemplar).is_err() {
                return bad(format!("cluster {k} exemplar {} is not a member", c.exemplar));
            }
            for &m in &c.members {
                if m >= self.points {
                    return bad(format!("member {m} out of range"));
                }
                if std::mem::replace(&mut seen[m], true) {
                    return bad(format!("point {m} is in two clusters"));
                }
            }
        }
        for &r in &self.removed {
            if r >= self.points || std::mem::replace(&mut seen[r], true) {
                return bad(format!("removed point {r} is out of range or still clustered"));
            }
        }
        Ok(())
    }

    /// True when every point is in exactly one cluster.
    pub fn is_partition(&self) -> bool {
        self.validate().is_ok() && self.removed.is_empty() && self.clusters.iter().map(Cluster::len).sum::<usize>() == self.points
    }

    /// Cluster member lists, sorted; comparable across exemplar choices.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        let mut p: Vec<Vec<usize>> = self.clusters.iter().map(|c| c.members.clone()).collect();
        p.sort();
        p
    }
}

/// `Σ_i s[i][exemplar(i)]`: member similarities plus exemplar preferences.
pub fn net_similarity(assignments: &[usize], s: &AffinityMatrix) -> f64 {
    assignments.iter().enumerate().map(|(i, &e)| s.get(i, e)).sum()
}

/// Assigns each point to its most similar exemplar (lowest index on ties);
/// exemplars keep themselves.
pub(crate) fn assign_to_exemplars(s: &AffinityMatrix, exemplars: &[usize]) -> Vec<usize> {
    (0..s.n())
        .map(|i| {
            if exemplars.contains(&i) {
                return i;
            }
            let mut best = exemplars[0];
            for &k in &exemplars[1..] {
                if s.get(i, k) > s.get(i, best) {
                    best = k;
                }
            }
            best
        })
        .collect()
}
