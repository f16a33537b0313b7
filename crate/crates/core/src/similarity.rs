//! Cosine similarity and the affinity matrix fed to affinity propagation.

use std::io::Write;

use crate::embed::EmbeddingVector;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("vector {0} has zero norm")]
    ZeroNorm(usize),
    #[error("need at least 2 vectors, got {0}")]
    TooFew(usize),
    #[error("invalid affinity matrix: {0}")]
    Invalid(String),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SimilarityError> {
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch(a.len(), b.len()));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 {
        return Err(SimilarityError::ZeroNorm(0));
    }
    if nb == 0.0 {
        return Err(SimilarityError::ZeroNorm(1));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Square similarity matrix, row-major. Off-diagonal entries are pairwise
/// similarities; the diagonal holds the shared preference.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl AffinityMatrix {
    /// Validates a hand-built matrix: square, finite, symmetric to 1e-12,
    /// off-diagonal within `[-1, 1]` (1e-9 slack), constant diagonal.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, SimilarityError> {
        let n = rows.len();
        if n == 0 {
            return Err(SimilarityError::Invalid("empty matrix".into()));
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(SimilarityError::Invalid(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            data.extend(row);
        }
        let m = AffinityMatrix { n, data };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SimilarityError> {
        let bad = |m: String| Err(SimilarityError::Invalid(m));
        let p = self.get(0, 0);
        for i in 0..self.n {
            for j in 0..self.n {
                let v = self.get(i, j);
                if !v.is_finite() {
                    return bad(format!("s[{i}][{j}] is not finite"));
                }
                if i == j {
                    if v != p {
                        return bad(format!("diagonal differs at {i}: {v} vs {p}"));
                    }
                } else {
                    if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&v) {
                        return bad(format!("s[{i}][{j}] = {v} outside [-1, 1]"));
                    }
                    if (v - self.get(j, i)).abs() > 1e-12 {
                        return bad(format!("not symmetric at ({i}, {j})"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn preference(&self) -> f64 {
        self.data[0]
    }

    /// Row-major values.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Same similarities, different diagonal.
    pub fn with_preference(&self, preference: f64) -> Self {
        let mut m = self.clone();
        for i in 0..m.n {
            m.data[i * m.n + i] = preference;
        }
        m
    }

    /// Full matrix (diagonal included) as CSV, one row per line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn check_vectors(vectors: &[EmbeddingVector]) -> Result<Vec<f64>, SimilarityError> {
    if vectors.len() < 2 {
        return Err(SimilarityError::TooFew(vectors.len()));
    }
    let dim = vectors[0].dim();
    let mut norms = Vec::with_capacity(vectors.len());
    for (i, v) in vectors.iter().enumerate() {
        if v.dim() != dim {
            return Err(SimilarityError::DimensionMismatch(dim, v.dim()));
        }
        let n = v.norm();
        if n == 0.0 {
            return Err(SimilarityError::ZeroNorm(i));
        }
        norms.push(n);
    }
    Ok(norms)
}

/// Upper-triangle similarities in row order: (0,1), (0,2), ..., (n-2,n-1).
fn pairwise(vectors: &[EmbeddingVector]) -> Result<Vec<f64>, SimilarityError> {
    let norms = check_vectors(vectors)?;
    let n = vectors.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let c = dot(vectors[i].values(), vectors[j].values()) / (norms[i] * norms[j]);
            out.push(c.clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

pub fn build_affinity_matrix(vectors: &[EmbeddingVector], preference: f64) -> Result<AffinityMatrix, SimilarityError> {
    if !preference.is_finite() {
        return Err(SimilarityError::Invalid("preference is not finite".into()));
    }
    let upper = pairwise(vectors)?;
    let n = vectors.len();
    let mut data = vec![0.0; n * n];
    let mut it = upper.into_iter();
    for i in 0..n {
        data[i * n + i] = preference;
        for j in i + 1..n {
            let c = it.next().expect("n(n-1)/2 entries");
            data[i * n + j] = c;
            data[j * n + i] = c;
        }
    }
    Ok(AffinityMatrix { n, data })
}

/// Median of a list; the mean of the two middle values for even lengths.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    })
}

/// Median of the `n(n-1)` off-diagonal similarities (each pair counted in
/// both orientations).
pub fn median_preference(vectors: &[EmbeddingVector]) -> Result<f64, SimilarityError> {
    let upper = pairwise(vectors)?;
    let mut both: Vec<f64> = upper.iter().flat_map(|&c| [c, c]).collect();
    Ok(median(&mut both).expect("at least one pair"))
}

/// Median of the off-diagonal entries of an existing matrix.
pub fn matrix_median(s: &AffinityMatrix) -> Option<f64> {
    let n = s.n();
    let mut off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| s.get(i, j))
        .collect();
    median(&mut off)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&v(&[1., 0.]), &v(&[1., 0.])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&v(&[1., 0.]), &v(&[0., 1.])).unwrap(), 0.0);
        let c = cosine_similarity(&v(&[1., 2., 2.]), &v(&[2., 1., 2.])).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine_similarity(&v(&[1., 0.]), &v(&[1., 0., 0.])),
            Err(SimilarityError::DimensionMismatch(2, 3))
        );
        assert_eq!(cosine_similarity(&v(&[0., 0.]), &v(&[1., 0.])), Err(SimilarityError::ZeroNorm(0)));
    }

    #[test]
    fn four_point_matrix() {
        let vs = [v(&[1., 0.]), v(&[1., 0.]), v(&[0., 1.]), v(&[0., 1.])];
        let s = build_affinity_matrix(&vs, 0.0).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(2, 3), 1.0);
        for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            assert_eq!(s.get(i, j), 0.0);
            assert_eq!(s.get(j, i), 0.0);
        }
        s.validate().unwrap();
    }

    #[test]
    fn identical_pair() {
        let s = build_affinity_matrix(&[v(&[0.3, 0.4]), v(&[0.3, 0.4])], -0.7).unwrap();
        assert_eq!(s.as_slice(), &[-0.7, 1.0, 1.0, -0.7]);
    }

    #[test]
    fn too_few_vectors() {
        assert_eq!(build_affinity_matrix(&[v(&[1.])], 0.0), Err(SimilarityError::TooFew(1)));
        assert_eq!(median_preference(&[]), Err(SimilarityError::TooFew(0)));
    }

    #[test]
    fn medians() {
        let vs = [v(&[1., 0.]), v(&[1., 0.]), v(&[0., 1.]), v(&[0., 1.])];
        // {1,1,0,0,0,0} doubled
        assert_eq!(median_preference(&vs).unwrap(), 0.0);
        let half = [v(&[1., 0.]), v(&[0.5, 0.75f64.sqrt()])];
        assert!((median_preference(&half).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(median(&mut [0.8, 0.2, 0.6, 0.4]), Some(0.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(AffinityMatrix::from_rows(vec![vec![0., 0.5], vec![0.4, 0.]]).is_err());
        assert!(AffinityMatrix::from_rows(vec![vec![0., 0.5], vec![0.5, 1.]]).is_err());
        assert!(AffinityMatrix::from_rows(vec![vec![0., 1.5], vec![1.5, 0.]]).is_err());
        assert!(AffinityMatrix::from_rows(vec![vec![0., f64::NAN], vec![f64::NAN, 0.]]).is_err());
        assert!(AffinityMatrix::from_rows(vec![vec![0.], vec![0.]]).is_err());
    }

    #[test]
    fn csv_dump() {
        let s = AffinityMatrix::from_rows(vec![vec![0.5, 0.25], vec![0.25, 0.5]]).unwrap();
        let mut out = Vec::new();
        s.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0.5,0.25\n0.25,0.5\n");
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..64).prop_flat_map(|d| {
            (
                prop::collection::vec(-10.0f64..10.0, d),
                prop::collection::vec(-10.0f64..10.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn cosine_properties((a, b) in vec_pair(), alpha in 0.001f64..1000.0) {
            prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
            let (va, vb) = (v(&a), v(&b));
            let ab = cosine_similarity(&va, &vb).unwrap();
            prop_assert_eq!(ab, cosine_similarity(&vb, &va).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((cosine_similarity(&va, &va).unwrap() - 1.0).abs() <= 1e-12);
            let scaled = v(&a.iter().map(|x| x * alpha).collect::<Vec<_>>());
            prop_assert!((cosine_similarity(&scaled, &vb).unwrap() - ab).abs() <= 1e-12);
        }

        #[test]
        fn matrix_invariants(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 2..12), p in -1.0f64..1.0) {
            prop_assume!(rows.iter().all(|r| r.iter().any(|x| x.abs() > 1e-6)));
            let vs: Vec<EmbeddingVector> = rows.iter().map(|r| v(r)).collect();
            let s = build_affinity_matrix(&vs, p).unwrap();
            prop_assert!(s.validate().is_ok());
            for i in 0..s.n() {
                prop_assert_eq!(s.get(i, i), p);
                for j in 0..s.n() {
                    prop_assert_eq!(s.get(i, j).to_bits(), s.get(j, i).to_bits());
                }
            }
            let m = median_preference(&vs).unwrap();
            prop_assert_eq!(m, matrix_median(&s).unwrap());
        }
    }
}
