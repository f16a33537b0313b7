//! Post-processing of a clustering: singleton pruning, analyst merge specs
//! and automatic merging by re-clustering cluster centroids.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cluster::{affinity_propagation, APParams, Cluster, ClusterError, Clustering, MergeKind, MergeNode, MergeRound};
use crate::embed::EmbeddingVector;
use crate::similarity::{build_affinity_matrix, cosine_slices, median, SimilarityError};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RefineError {
    #[error("invalid merge spec: {0}")]
    Spec(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid refinement input: {0}")]
    Input(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// Drops every cluster with a single member. Dropped points are appended to
/// `removed`; the remaining clusters are renumbered in order.
pub fn prune_singletons(c: &Clustering) -> Clustering {
    let mut out = c.clone();
    let (keep, drop): (Vec<Cluster>, Vec<Cluster>) = out.clusters.into_iter().partition(|k| k.len() > 1);
    out.removed.extend(drop.iter().flat_map(|k| k.members.iter().copied()));
    out.removed.sort_unstable();
    out.clusters = keep;
    for (id, k) in out.clusters.iter_mut().enumerate() {
        k.id = id;
    }
    if out.clusters.is_empty() && !c.clusters.is_empty() {
        log::warn!("every cluster was a singleton; nothing left after pruning");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeGroup {
    pub name: String,
    pub members: Vec<usize>,
}

/// Analyst-supplied grouping of cluster ids:
/// `{"groups": [{"name": "...", "members": [ids...]}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MergeSpec {
    pub groups: Vec<MergeGroup>,
}

impl MergeSpec {
    pub fn validate(&self, c: &Clustering) -> Result<(), RefineError> {
        let mut seen = BTreeSet::new();
        for g in &self.groups {
            if g.members.is_empty() {
                return Err(RefineError::Spec(format!("group `{}` has no members", g.name)));
            }
            for &id in &g.members {
                if id >= c.clusters.len() {
                    return Err(RefineError::Spec(format!(
                        "group `{}` references cluster {id}, but there are only {} clusters",
                        g.name,
                        c.clusters.len()
                    )));
                }
                if !seen.insert(id) {
                    return Err(RefineError::Spec(format!("cluster {id} appears in more than one group")));
                }
            }
        }
        Ok(())
    }
}

struct Group {
    name: Option<String>,
    ids: Vec<usize>,
}

/// Collapses groups of clusters. `groups` must cover every cluster id
/// exactly once. The merged exemplar is that of the largest constituent
/// (lowest id on ties); output clusters are ordered by their lowest
/// constituent id.
fn merge_groups(c: &Clustering, mut groups: Vec<Group>, kind: MergeKind) -> Clustering {
    for g in &mut groups {
        g.ids.sort_unstable();
    }
    groups.sort_by_key(|g| g.ids[0]);

    let mut clusters = Vec::with_capacity(groups.len());
    let mut merges = Vec::with_capacity(groups.len());
    for (id, g) in groups.into_iter().enumerate() {
        let lead = g
            .ids
            .iter()
            .copied()
            .max_by(|&x, &y| c.clusters[x].len().cmp(&c.clusters[y].len()).then(y.cmp(&x)))
            .expect("groups are non-empty");
        let mut members: Vec<usize> = g.ids.iter().flat_map(|&k| c.clusters[k].members.iter().copied()).collect();
        members.sort_unstable();
        clusters.push(Cluster {
            id,
            exemplar: c.clusters[lead].exemplar,
            members,
            name: g.name.or_else(|| c.clusters[lead].name.clone()),
        });
        merges.push(MergeNode { id, from: g.ids });
    }

    let mut out = c.clone();
    out.clusters = clusters;
    out.lineage.push(MergeRound { kind, merges });
    out
}

/// Applies an analyst merge spec. Each group becomes one named cluster;
/// clusters not mentioned pass through unchanged.
pub fn apply_merge_spec(c: &Clustering, spec: &MergeSpec) -> Result<Clustering, RefineError> {
    spec.validate(c)?;
    if spec.groups.is_empty() {
        return Ok(c.clone());
    }
    let mentioned: BTreeSet<usize> = spec.groups.iter().flat_map(|g| g.members.iter().copied()).collect();
    let mut groups: Vec<Group> = spec
        .groups
        .iter()
        .map(|g| Group {
            name: Some(g.name.clone()),
            ids: g.members.clone(),
        })
        .collect();
    groups.extend((0..c.clusters.len()).filter(|id| !mentioned.contains(id)).map(|id| Group {
        name: None,
        ids: vec![id],
    }));
    Ok(merge_groups(c, groups, MergeKind::Manual))
}

/// Normalized arithmetic mean of the member vectors.
pub fn cluster_centroid(members: &[usize], vectors: &[EmbeddingVector]) -> Result<EmbeddingVector, RefineError> {
    let first = members
        .first()
        .ok_or_else(|| RefineError::Input("centroid of an empty cluster".into()))?;
    let dim = vectors
        .get(*first)
        .ok_or_else(|| RefineError::Input(format!("member {first} has no vector")))?
        .dim();
    let mut mean = vec![0.0; dim];
    for &m in members {
        let v = vectors
            .get(m)
            .ok_or_else(|| RefineError::Input(format!("member {m} has no vector")))?;
        if v.dim() != dim {
            return Err(SimilarityError::DimensionMismatch(dim, v.dim()).into());
        }
        mean.iter_mut().zip(v.values()).for_each(|(acc, x)| *acc += x);
    }
    let count = members.len() as f64;
    mean.iter_mut().for_each(|x| *x /= count);
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(RefineError::Numeric(
            "cluster members cancel out; centroid has zero norm".into(),
        ));
    }
    mean.iter_mut().for_each(|x| *x /= norm);
    EmbeddingVector::new(mean).map_err(|e| RefineError::Numeric(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoMergeParams {
    pub max_depth: usize,
    pub ap: APParams,
}

impl Default for AutoMergeParams {
    fn default() -> Self {
        AutoMergeParams {
            max_depth: 3,
            ap: APParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoMergeOutcome {
    pub clustering: Clustering,
    /// Rounds that merged at least one pair of clusters.
    pub rounds: usize,
    /// Set when a round stopped because affinity propagation did not
    /// converge on the centroids.
    pub warning: Option<String>,
}

/// Preference for the centroid-level run: the median, over all clustered
/// points, of the cosine between a point and its own cluster's centroid.
/// Two clusters end up sharing an exemplar when their centroids are closer
/// to each other than a typical member is to its own centroid.
pub fn centroid_preference(c: &Clustering, centroids: &[EmbeddingVector], vectors: &[EmbeddingVector]) -> Result<f64, RefineError> {
    let mut cohesion = Vec::new();
    for (k, cluster) in c.clusters.iter().enumerate() {
        for &m in &cluster.members {
            cohesion.push(cosine_slices(vectors[m].values(), centroids[k].values())?);
        }
    }
    median(&mut cohesion).ok_or_else(|| RefineError::Input("no clustered points".into()))
}

/// Merges clusters by running affinity propagation on their centroids,
/// repeating on the merged result until the cluster count stops changing or
/// `max_depth` rounds have run. Each round is recorded in the lineage.
pub fn auto_merge(c: &Clustering, vectors: &[EmbeddingVector], params: &AutoMergeParams) -> Result<AutoMergeOutcome, RefineError> {
    if params.max_depth < 1 {
        return Err(RefineError::Input("max_depth must be >= 1".into()));
    }
    params.ap.validate()?;
    if vectors.len() != c.points {
        return Err(RefineError::Input(format!(
            "{} vectors for {} points",
            vectors.len(),
            c.points
        )));
    }
    let mut current = c.clone();
    let mut rounds = 0;
    let mut warning = None;
    for depth in 1..=params.max_depth {
        let k = current.clusters.len();
        if k < 2 {
            break;
        }
        let centroids = current
            .clusters
            .iter()
            .map(|cl| cluster_centroid(&cl.members, vectors))
            .collect::<Result<Vec<_>, _>>()?;
        let preference = centroid_preference(&current, &centroids, vectors)?;
        let s = build_affinity_matrix(&centroids, preference)?;
        let grouping = affinity_propagation(&s, &params.ap)?;
        if !grouping.converged {
            let msg = format!("centroid clustering did not converge at depth {depth}; keeping {k} clusters");
            log::warn!("{msg}");
            warning = Some(msg);
            break;
        }
        if grouping.clusters.len() == k {
            break;
        }
        let groups = grouping
            .clusters
            .iter()
            .map(|g| Group {
                name: None,
                ids: g.members.clone(),
            })
            .collect();
        current = merge_groups(&current, groups, MergeKind::Auto);
        rounds += 1;
        log::info!("auto-merge depth {depth}: {k} -> {} clusters", current.clusters.len());
    }
    Ok(AutoMergeOutcome {
        clustering: current,
        rounds,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clustering(sizes: &[usize]) -> Clustering {
        let mut clusters = Vec::new();
        let mut next = 0;
        for (id, &n) in sizes.iter().enumerate() {
            clusters.push(Cluster {
                id,
                exemplar: next,
                members: (next..next + n).collect(),
                name: None,
            });
            next += n;
        }
        Clustering {
            converged: true,
            iterations: 10,
            net_similarity: 0.0,
            points: next,
            clusters,
            removed: vec![],
            lineage: vec![],
        }
    }

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn prune_removes_size_one() {
        let out = prune_singletons(&clustering(&[3, 1, 2]));
        assert_eq!(out.sizes(), vec![3, 2]);
        assert_eq!(out.removed, vec![3]);
        assert_eq!(out.clusters[1].id, 1);
        out.validate().unwrap();
    }

    #[test]
    fn prune_without_singletons_is_identity() {
        let c = clustering(&[2, 4]);
        assert_eq!(prune_singletons(&c), c);
    }

    #[test]
    fn prune_all_singletons() {
        let out = prune_singletons(&clustering(&[1, 1, 1]));
        assert!(out.clusters.is_empty());
        assert_eq!(out.removed, vec![0, 1, 2]);
    }

    #[test]
    fn merge_two_clusters() {
        let c = clustering(&[8, 7, 5]);
        let spec = MergeSpec {
            groups: vec![MergeGroup {
                name: "Supportive viewers".into(),
                members: vec![1, 0],
            }],
        };
        let out = apply_merge_spec(&c, &spec).unwrap();
        assert_eq!(out.sizes(), vec![15, 5]);
        assert_eq!(out.clusters[0].exemplar, 0);
        assert_eq!(out.clusters[0].name.as_deref(), Some("Supportive viewers"));
        assert_eq!(out.clusters[1].name, None);
        out.validate().unwrap();
        assert_eq!(
            out.lineage,
            vec![MergeRound {
                kind: MergeKind::Manual,
                merges: vec![MergeNode { id: 0, from: vec![0, 1] }, MergeNode { id: 1, from: vec![2] }],
            }]
        );
    }

    #[test]
    fn merged_exemplar_from_largest_then_lowest_id() {
        let c = clustering(&[2, 5, 5]);
        let spec = MergeSpec {
            groups: vec![MergeGroup { name: "x".into(), members: vec![0, 2, 1] }],
        };
        let out = apply_merge_spec(&c, &spec).unwrap();
        assert_eq!(out.clusters[0].exemplar, c.clusters[1].exemplar);
    }

    #[test]
    fn empty_spec_is_identity() {
        let c = clustering(&[2, 3]);
        assert_eq!(apply_merge_spec(&c, &MergeSpec::default()).unwrap(), c);
    }

    #[test]
    fn spec_errors() {
        let c = clustering(&[2, 2, 2]);
        let unknown = MergeSpec {
            groups: vec![MergeGroup { name: "a".into(), members: vec![0, 99] }],
        };
        assert!(matches!(apply_merge_spec(&c, &unknown), Err(RefineError::Spec(_))));
        let dup = MergeSpec {
            groups: vec![
                MergeGroup { name: "a".into(), members: vec![0, 1] },
                MergeGroup { name: "b".into(), members: vec![1, 2] },
            ],
        };
        assert!(matches!(apply_merge_spec(&c, &dup), Err(RefineError::Spec(_))));
        let spec: MergeSpec = serde_json::from_str(r#"{"groups":[{"name":"n","members":[2]}]}"#).unwrap();
        assert_eq!(apply_merge_spec(&c, &spec).unwrap().clusters[2].name.as_deref(), Some("n"));
    }

    #[test]
    fn centroid_examples() {
        let vs = [v(&[1., 0.]), v(&[0., 1.]), v(&[1., 0.])];
        let c = cluster_centroid(&[0, 1], &vs).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.values()[0] - h).abs() < 1e-12 && (c.values()[1] - h).abs() < 1e-12);
        assert_eq!(cluster_centroid(&[1], &vs).unwrap(), vs[1]);
        assert_eq!(cluster_centroid(&[0, 2], &vs).unwrap(), vs[0]);
    }

    #[test]
    fn centroid_errors() {
        let vs = [v(&[1., 0.]), v(&[-1., 0.])];
        assert!(matches!(cluster_centroid(&[0, 1], &vs), Err(RefineError::Numeric(_))));
        assert!(cluster_centroid(&[], &vs).is_err());
    }

    #[test]
    fn identical_centroids_merge() {
        // centroids of both clusters are [1, 0]
        let vs = [v(&[1., 0.2]), v(&[1., -0.2]), v(&[1., 0.1]), v(&[1., -0.1])];
        let c = clustering(&[2, 2]);
        let out = auto_merge(&c, &vs, &AutoMergeParams::default()).unwrap();
        assert_eq!(out.clustering.sizes(), vec![4]);
        assert_eq!(out.rounds, 1);
        assert_eq!(out.clustering.lineage[0].merges, vec![MergeNode { id: 0, from: vec![0, 1] }]);
    }

    #[test]
    fn orthogonal_centroids_stay() {
        let vs = [
            v(&[1., 0.1, 0.]),
            v(&[1., -0.1, 0.]),
            v(&[0., 1., 0.1]),
            v(&[0., 1., -0.1]),
            v(&[0.1, 0., 1.]),
            v(&[-0.1, 0., 1.]),
        ];
        let c = clustering(&[2, 2, 2]);
        let out = auto_merge(&c, &vs, &AutoMergeParams::default()).unwrap();
        assert_eq!(out.clustering.sizes(), vec![2, 2, 2]);
        assert_eq!(out.rounds, 0);
        assert!(out.clustering.lineage.is_empty());
    }

    #[test]
    fn max_depth_one_limits_rounds() {
        // four clusters in two tight pairs whose pair-centroids are close too
        let vs = [
            v(&[1.0, 0.00, 0.0]),
            v(&[1.0, 0.02, 0.0]),
            v(&[1.0, 0.05, 0.0]),
            v(&[1.0, 0.07, 0.0]),
            v(&[1.0, 0.30, 0.0]),
            v(&[1.0, 0.32, 0.0]),
            v(&[1.0, 0.35, 0.0]),
            v(&[1.0, 0.37, 0.0]),
        ];
        let c = clustering(&[2, 2, 2, 2]);
        let params = AutoMergeParams { max_depth: 1, ..Default::default() };
        let out = auto_merge(&c, &vs, &params).unwrap();
        assert!(out.rounds <= 1);
        assert!(out.clustering.lineage.len() <= 1);
        let deep = auto_merge(&c, &vs, &AutoMergeParams::default()).unwrap();
        assert!(deep.clustering.clusters.len() <= out.clustering.clusters.len());
    }

    #[test]
    fn auto_merge_input_checks() {
        let c = clustering(&[2, 2]);
        assert!(auto_merge(&c, &[v(&[1., 0.])], &AutoMergeParams::default()).is_err());
        let bad = AutoMergeParams { max_depth: 0, ..Default::default() };
        assert!(auto_merge(&c, &vec![v(&[1.]); 4], &bad).is_err());
    }

    fn lineage_leaves_ok(out: &Clustering, original: usize) -> bool {
        // walk back from the final clusters: each level's ids are covered once
        let mut width = original;
        for round in &out.lineage {
            let mut from: Vec<usize> = round.merges.iter().flat_map(|m| m.from.iter().copied()).collect();
            from.sort_unstable();
            if from != (0..width).collect::<Vec<_>>() {
                return false;
            }
            width = round.merges.len();
        }
        width == out.clusters.len()
    }

    proptest! {
        #[test]
        fn prune_invariants(sizes in prop::collection::vec(1usize..5, 0..12)) {
            let c = clustering(&sizes);
            let out = prune_singletons(&c);
            prop_assert!(out.clusters.iter().all(|k| k.len() >= 2));
            prop_assert_eq!(out.removed.len(), sizes.iter().filter(|&&s| s == 1).count());
            prop_assert!(out.validate().is_ok());
        }

        #[test]
        fn auto_merge_invariants(
            points in prop::collection::vec(prop::collection::vec(0.05f64..1.0, 4), 4..16),
            cut in prop::collection::vec(1usize..4, 1..8),
        ) {
            let vs: Vec<EmbeddingVector> = points.iter().map(|p| v(p)).collect();
            // chop the points into consecutive clusters
            let mut sizes = Vec::new();
            let mut left = vs.len();
            for s in cut.iter().cycle() {
                if left == 0 { break; }
                let s = (*s).min(left);
                sizes.push(s);
                left -= s;
            }
            let c = clustering(&sizes);
            let out = auto_merge(&c, &vs, &AutoMergeParams::default()).unwrap();
            let m = &out.clustering;
            prop_assert!(m.validate().is_ok());
            let before: BTreeSet<usize> = c.clusters.iter().flat_map(|k| k.members.clone()).collect();
            let after: BTreeSet<usize> = m.clusters.iter().flat_map(|k| k.members.clone()).collect();
            prop_assert_eq!(before, after);
            prop_assert!(m.clusters.len() <= c.clusters.len());
            let mut width = c.clusters.len();
            for round in &m.lineage {
                prop_assert!(round.merges.len() < width);
                width = round.merges.len();
            }
            prop_assert!(lineage_leaves_ok(m, c.clusters.len()));
        }
    }
}
