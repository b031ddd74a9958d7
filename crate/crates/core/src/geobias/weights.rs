use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{haversine_km, LocationDeg};

/// Sparse non-negative spatial weights without self-loops, stored by row.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl WeightMatrix {
    /// Builds from `(i, j, w)` triplets; duplicate entries are summed.
    pub fn from_triplets(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, w) in entries {
            if i >= n || j >= n {
                return Err(Error::Index { index: i.max(j), len: n });
            }
            if i == j {
                return Err(Error::Domain(format!("self-loop at {i}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Domain(format!("weight ({i}, {j}) = {w} must be finite and >= 0")));
            }
            if w == 0.0 {
                continue;
            }
            match rows[i].iter_mut().find(|(c, _)| *c == j) {
                Some(e) => e.1 += w,
                None => rows[i].push((j, w)),
            }
        }
        for r in &mut rows {
            r.sort_by_key(|e| e.0);
        }
        let m = WeightMatrix { n, rows };
        if n >= 2 && m.total_weight() == 0.0 {
            return Err(Error::Domain("weight matrix has no nonzero entry".into()));
        }
        Ok(m)
    }

    /// Symmetric ring: node `i` linked to `i ± 1 (mod n)` with unit weight.
    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::TooFewPoints { need: 3, got: n });
        }
        Self::from_triplets(n, (0..n).flat_map(|i| [(i, (i + 1) % n, 1.0), (i, (i + n - 1) % n, 1.0)]))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[(usize, f64)]> {
        self.rows.iter().map(|r| r.as_slice())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|e| e.1).sum()
    }

    /// `S0 = Σ_ij W_ij`.
    pub fn total_weight(&self) -> f64 {
        self.rows.iter().flatten().map(|e| e.1).sum()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Dense copy, row-major; handy for brute-force checks.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, w) in r {
                d[i * self.n + j] = w;
            }
        }
        d
    }
}

/// Row `i` gets unit weight on its `min(k, n-1)` nearest points by haversine
/// distance; equal distances go to the lower index.
pub fn knn_weights(points: &[LocationDeg], k: usize) -> Result<WeightMatrix> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints { need: 2, got: n });
    }
    if k == 0 {
        return Err(Error::Domain("k must be >= 1".into()));
    }
    let k = k.min(n - 1);
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (haversine_km(points[i], points[j]), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if cand.len() > k {
                cand.select_nth_unstable_by(k - 1, cmp);
                cand.truncate(k);
            }
            cand.sort_by(cmp);
            let mut row: Vec<(usize, f64)> = cand.into_iter().map(|(_, j)| (j, 1.0)).collect();
            row.sort_by_key(|e| e.0);
            row
        })
        .collect();
    Ok(WeightMatrix { n, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(lon: f64, lat: f64) -> LocationDeg {
        LocationDeg::new(lon, lat).unwrap()
    }

    #[test]
    fn knn_clips_k() {
        let w = knn_weights(&[loc(0.0, 0.0), loc(1.0, 1.0)], 4).unwrap();
        assert_eq!(w.row(0), &[(1, 1.0)]);
        assert_eq!(w.row(1), &[(0, 1.0)]);
    }

    #[test]
    fn knn_tie_goes_to_lower_index() {
        let w = knn_weights(&[loc(0.0, 0.0), loc(1.0, 0.0), loc(2.0, 0.0)], 1).unwrap();
        assert_eq!(w.row(1), &[(0, 1.0)]);
        // the same holds when the lower index is listed last
        let w = knn_weights(&[loc(2.0, 0.0), loc(1.0, 0.0), loc(0.0, 0.0)], 1).unwrap();
        assert_eq!(w.row(1), &[(0, 1.0)]);
    }

    #[test]
    fn knn_rows_sum_to_k() {
        let mut rng = crate::rng::seeded(3);
        use rand::Rng;
        let pts: Vec<_> = (0..100)
            .map(|_| loc(rng.random_range(-180.0..180.0), rng.random_range(-80.0..80.0)))
            .collect();
        let w = knn_weights(&pts, 4).unwrap();
        for i in 0..100 {
            assert_eq!(w.row_sum(i), 4.0);
            assert!(w.row(i).iter().all(|&(j, _)| j != i));
        }
        // rows really are the 4 nearest
        for i in 0..100 {
            let mut d: Vec<(f64, usize)> =
                (0..100).filter(|&j| j != i).map(|j| (haversine_km(pts[i], pts[j]), j)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut want: Vec<usize> = d[..4].iter().map(|e| e.1).collect();
            want.sort();
            let got: Vec<usize> = w.row(i).iter().map(|e| e.0).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn knn_needs_two_points() {
        assert!(matches!(knn_weights(&[loc(0.0, 0.0)], 4), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn triplet_validation() {
        assert!(WeightMatrix::from_triplets(3, [(0, 0, 1.0)]).is_err());
        assert!(WeightMatrix::from_triplets(3, [(0, 1, -1.0)]).is_err());
        assert!(WeightMatrix::from_triplets(3, [(0, 3, 1.0)]).is_err());
        assert!(WeightMatrix::from_triplets(3, []).is_err());
        let r = WeightMatrix::ring(4).unwrap();
        assert_eq!(r.total_weight(), 8.0);
        assert_eq!(r.row(0), &[(1, 1.0), (3, 1.0)]);
    }
}
