use super::{assign_to_exemplars, net_similarity, ClusterError, Clustering};
use crate::similarity::AffinityMatrix;

pub const BRUTE_FORCE_MAX_POINTS: usize = 15;

// Objective differences below this are treated as ties.
const TIE_EPS: f64 = 1e-12;

/// Exhaustive search over all `2^n − 1` exemplar sets for the one with the
/// highest net similarity. Ties go to the lexicographically smallest
/// (ascending) exemplar list.
pub fn brute_force_exemplars(s: &AffinityMatrix) -> Result<Clustering, ClusterError> {
    let n = s.n();
    if n > BRUTE_FORCE_MAX_POINTS {
        return Err(ClusterError::TooLarge {
            n,
            max: BRUTE_FORCE_MAX_POINTS,
        });
    }
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    for mask in 1u32..(1u32 << n) {
        let exemplars: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let assignments = assign_to_exemplars(s, &exemplars);
        let value = net_similarity(&assignments, s);
        let better = match &best {
            None => true,
            Some((v, e, _)) => value > v + TIE_EPS || ((value - v).abs() <= TIE_EPS && exemplars < *e),
        };
        if better {
            best = Some((value, exemplars, assignments));
        }
    }
    let (_, _, assignments) = best.expect("n >= 1 gives at least one subset");
    Clustering::from_assignments(&assignments, s, true, 0)
}
