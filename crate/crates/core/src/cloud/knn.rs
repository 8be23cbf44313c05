//! Uniform-grid k-nearest-neighbour distances for the scale initialization.

use std::collections::HashMap;

use crate::math::{sub3, norm3, Vec3};

type Cell = (i64, i64, i64);

/// Mean Euclidean distance from each point to its `k` nearest other points.
/// Requires `points.len() > k`.
pub fn mean_knn_distance(points: &[Vec3], k: usize) -> Vec<f64> {
    let n = points.len();
    debug_assert!(n > k);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let extent = norm3(sub3(hi, lo)).max(1e-12);
    // points mostly live on a 2D surface, so size cells for ~k points per cell
    let cell = (extent / (n as f64).sqrt() * (k as f64).sqrt()).max(1e-12);
    let key = |p: &Vec3| -> Cell {
        (
            ((p[0] - lo[0]) / cell).floor() as i64,
            ((p[1] - lo[1]) / cell).floor() as i64,
            ((p[2] - lo[2]) / cell).floor() as i64,
        )
    };
    let mut grid: HashMap<Cell, Vec<u32>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i as u32);
    }
    let span = key(&hi);
    let max_shell = span.0.max(span.1).max(span.2) + 1;

    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            best.clear();
            let c = key(p);
            let mut shell = 0i64;
            loop {
                for dx in -shell..=shell {
                    for dy in -shell..=shell {
                        for dz in -shell..=shell {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != shell {
                                continue;
                            }
                            let Some(bucket) = grid.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) else {
                                continue;
                            };
                            for &j in bucket {
                                if j as usize == i {
                                    continue;
                                }
                                let d = norm3(sub3(points[j as usize], *p));
                                if best.len() < k || d < best[k - 1] {
                                    let at = best.partition_point(|&b| b <= d);
                                    best.insert(at, d);
                                    best.truncate(k);
                                }
                            }
                        }
                    }
                }
                // every unvisited point is at least `shell * cell` away
                if (best.len() == k && best[k - 1] <= shell as f64 * cell) || shell > max_shell {
                    break;
                }
                shell += 1;
            }
            best.iter().sum::<f64>() / k as f64
        })
        .collect()
}
