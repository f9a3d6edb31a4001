use std::collections::HashMap;

use crate::scenegen::voxel_coord;

/// For each keypoint, the points at distance strictly below `r`, nearest
/// first (ties by index), truncated to `cap`.
///
/// Points are bucketed into a grid of cell size `r`, so only the 27 cells
/// around each keypoint are scanned.
pub fn sphere_query(keypoints: &[[f64; 3]], positions: &[[f64; 3]], r: f64, cap: usize) -> Vec<Vec<usize>> {
    assert!(r > 0.0, "query radius must be positive");
    let r2 = r * r;
    if !r.is_finite() || positions.is_empty() {
        return keypoints
            .iter()
            .map(|k| collect(k, positions, 0..positions.len(), r2, cap))
            .collect();
    }
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        grid.entry(voxel_coord(p, r)).or_default().push(i);
    }
    keypoints
        .iter()
        .map(|k| {
            let c = voxel_coord(k, r);
            let mut candidates = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(m) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            candidates.extend_from_slice(m);
                        }
                    }
                }
            }
            collect(k, positions, candidates.into_iter(), r2, cap)
        })
        .collect()
}

fn collect(
    k: &[f64; 3],
    positions: &[[f64; 3]],
    candidates: impl Iterator<Item = usize>,
    r2: f64,
    cap: usize,
) -> Vec<usize> {
    let mut hits: Vec<(f64, usize)> = candidates
        .filter_map(|i| {
            let p = positions[i];
            let d = (0..3).map(|a| (p[a] - k[a]) * (p[a] - k[a])).sum::<f64>();
            (d < r2).then_some((d, i))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.truncate(cap);
    hits.into_iter().map(|(_, i)| i).collect()
}
