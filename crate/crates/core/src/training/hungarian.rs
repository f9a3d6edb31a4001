use crate::numerics::Matrix;

/// One-to-one pairing of queries with ground-truth instances.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(query, gt)` pairs, ascending by query.
    pub pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Matched gt per query, `None` for unmatched queries.
    pub fn gt_of(&self, queries: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; queries];
        for &(q, k) in &self.pairs {
            out[q] = Some(k);
        }
        out
    }

    /// Sum of the assigned entries, added in pair order.
    pub fn total_cost(&self, cost: &Matrix) -> f64 {
        self.pairs.iter().map(|&(q, k)| cost.get(q, k)).sum()
    }
}

/// Minimum-cost assignment of `min(rows, cols)` pairs (shortest augmenting
/// paths with potentials, `O(n^2 m)`).
pub fn hungarian(cost: &Matrix) -> Assignment {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Assignment::default();
    }
    if rows > cols {
        let t = hungarian(&cost.transpose());
        let mut pairs: Vec<_> = t.pairs.into_iter().map(|(a, b)| (b, a)).collect();
        pairs.sort_unstable();
        return Assignment { pairs };
    }
    let (n, m) = (rows, cols);
    let at = |i: usize, j: usize| cost.get(i - 1, j - 1);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row matched to column j (1-based, 0 = none).
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == 0 {
                // Only non-finite costs left; take the first free column.
                j1 = (1..=m)
                    .find(|&j| !used[j])
                    .expect("a free column remains while rows <= cols");
                delta = 0.0;
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<_> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    Assignment { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one() {
        assert_eq!(hungarian(&Matrix::scalar(3.0)).pairs, vec![(0, 0)]);
    }

    #[test]
    fn diagonal() {
        let c = Matrix::from_rows(&[[0.0, 9.0], [9.0, 0.0]]).unwrap();
        assert_eq!(hungarian(&c).pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn rectangular_both_ways() {
        let c = Matrix::from_rows(&[[5.0, 1.0, 4.0], [2.0, 8.0, 3.0]]).unwrap();
        assert_eq!(hungarian(&c).pairs, vec![(0, 1), (1, 0)]);
        let t = hungarian(&c.transpose());
        assert_eq!(t.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn empty() {
        assert!(hungarian(&Matrix::zeros(3, 0)).is_empty());
    }

    #[test]
    fn non_finite_costs_terminate() {
        let c = Matrix::from_rows(&[[f64::NAN, f64::NAN, 1.0], [f64::INFINITY, f64::NAN, f64::NAN]]).unwrap();
        assert_eq!(hungarian(&c).len(), 2);
        assert_eq!(hungarian(&Matrix::zeros(3, 3).map(|_| f64::NAN)).len(), 3);
    }
}
