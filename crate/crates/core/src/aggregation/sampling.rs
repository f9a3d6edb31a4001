//! Foreground-aware keypoint selection.

use super::AggregationError;

/// Per-point foreground probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ForegroundScores(pub Vec<f64>);

impl ForegroundScores {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the highest score (lowest index on ties).
    pub fn argmax(&self) -> Option<usize> {
        argmax_by(self.0.iter().copied().enumerate())
    }
}

/// Selected keypoints and the ball each one covers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateSet {
    pub indices: Vec<usize>,
    /// `coverage[k][i]`: point `i` lies within the coverage radius of candidate `k`.
    pub coverage: Vec<Vec<bool>>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// The filtered set `P'`: a point is eligible iff `1 - m0 > beta` with
/// `m0 = 1 - f` (background probability), and `1 - mk > beta` for every
/// selected candidate `k`, where `mk` is 1 inside that candidate's ball.
pub fn eligible_points(f: &ForegroundScores, cands: &CandidateSet, beta: f64) -> Vec<bool> {
    (0..f.len())
        .map(|i| {
            let m0 = 1.0 - f.0[i];
            let mut lowest = 1.0 - m0;
            for cover in &cands.coverage {
                let mk = if cover[i] { 1.0 } else { 0.0 };
                lowest = f64::min(lowest, 1.0 - mk);
            }
            lowest > beta
        })
        .collect()
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum()
}

fn argmax_by(items: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in items {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Iterative candidate sampling: up to `k_cand` rounds of recomputing the
/// eligible set and picking from it, stopping early once it is empty. The
/// first pick is the highest-scoring eligible point; later picks are the
/// eligible point farthest from all previous picks. Each pick covers the
/// points strictly within `r_q`.
pub fn iterative_candidate_sample(
    positions: &[[f64; 3]],
    f: &ForegroundScores,
    beta: f64,
    k_cand: usize,
    r_q: f64,
) -> Result<CandidateSet, AggregationError> {
    if k_cand == 0 {
        return Err(AggregationError::Contract("k_cand must be at least 1".into()));
    }
    if positions.len() != f.len() {
        return Err(AggregationError::Contract(format!(
            "{} positions but {} scores",
            positions.len(),
            f.len()
        )));
    }
    let n = positions.len();
    let r2 = r_q * r_q;
    let mut out = CandidateSet::default();
    let mut nearest = vec![f64::INFINITY; n];
    let mut covered = vec![false; n];
    for _ in 0..k_cand {
        // Equivalent to `eligible_points(f, &out, beta)` without rescanning every ball.
        let eligible = (0..n).filter(|&i| f.0[i] > beta && !covered[i]);
        let pick = if out.is_empty() {
            argmax_by(eligible.map(|i| (i, f.0[i])))
        } else {
            argmax_by(eligible.map(|i| (i, nearest[i])))
        };
        let Some(pick) = pick else { break };
        let p = positions[pick];
        let mut cover = vec![false; n];
        for i in 0..n {
            let d = dist2(&positions[i], &p);
            nearest[i] = nearest[i].min(d);
            if d < r2 {
                cover[i] = true;
                covered[i] = true;
            }
        }
        out.indices.push(pick);
        out.coverage.push(cover);
    }
    Ok(out)
}

/// Greedy max-min farthest point sampling from `start`; ties go to the lowest index.
pub fn farthest_point_sample(positions: &[[f64; 3]], n: usize, start: usize) -> Result<Vec<usize>, AggregationError> {
    if n > positions.len() {
        return Err(AggregationError::Contract(format!(
            "cannot sample {n} of {} points",
            positions.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if start >= positions.len() {
        return Err(AggregationError::Contract(format!("start index {start} out of range")));
    }
    let mut nearest = vec![f64::INFINITY; positions.len()];
    let mut chosen = Vec::with_capacity(n);
    let mut current = start;
    loop {
        chosen.push(current);
        if chosen.len() == n {
            break;
        }
        let p = positions[current];
        for (i, q) in positions.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(q, &p));
        }
        current = argmax_by(nearest.iter().copied().enumerate()).expect("non-empty");
    }
    Ok(chosen)
}
